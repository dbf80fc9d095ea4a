//! Token sequences, embedding tables and embedding matrices.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::ops::Deref;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Identifier of a vocabulary entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenId(pub u32);

/// Reserved token standing for an absent word. Always embeds to zeros.
pub const MASK: TokenId = TokenId(0);

impl std::fmt::Display for TokenId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A non-empty ordered sequence of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidParameter(
                "token sequence must contain at least one token".into(),
            ));
        }
        Ok(Self(tokens))
    }

    pub fn from_ids(ids: &[u32]) -> Result<Self> {
        Self::new(ids.iter().copied().map(TokenId).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }
}

/// Lookup table from token id to an `m`-dimensional vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    dim: usize,
    rows: BTreeMap<TokenId, Array1<T>>,
}

impl<T: Scalar> EmbeddingTable<T> {
    /// Creates a table containing only the MASK row.
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("embedding dimension must be positive".into()));
        }
        let mut rows = BTreeMap::new();
        rows.insert(MASK, Array1::zeros(dim));
        Ok(Self { dim, rows })
    }

    pub fn insert(&mut self, id: TokenId, row: Array1<T>) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::Shape(format!(
                "row for token {id} has length {}, table dimension is {}",
                row.len(),
                self.dim
            )));
        }
        if id == MASK && row.iter().any(|v| *v != T::zero()) {
            return Err(Error::InvalidParameter("the MASK row must be all zeros".into()));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "row for token {id} has non-finite entries"
            )));
        }
        self.rows.insert(id, row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of entries including MASK.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, id: TokenId) -> Option<ArrayView1<'_, T>> {
        self.rows.get(&id).map(|r| r.view())
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.rows.keys().copied()
    }

    /// Writes the table (MASK omitted) as `<count> <m>` followed by one
    /// `<id>\t<v1> … <vm>` line per token.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let count = self.rows.len() - 1;
        writeln!(out, "{} {}", count, self.dim)?;
        let mut line = String::new();
        for (id, row) in self.rows.iter().filter(|(id, _)| **id != MASK) {
            line.clear();
            write!(line, "{id}\t").unwrap();
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    line.push(' ');
                }
                write!(line, "{:.16e}", v.as_f64()).unwrap();
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse("empty embedding table file".into()))?;
        let header = header?;
        let mut parts = header.split_whitespace();
        let parse_usize = |s: Option<&str>, what: &str| -> Result<usize> {
            s.ok_or_else(|| Error::Parse(format!("header missing {what}")))?
                .parse()
                .map_err(|e| Error::Parse(format!("header {what}: {e}")))
        };
        let count = parse_usize(parts.next(), "vocab size")?;
        let dim = parse_usize(parts.next(), "dimension")?;
        let mut table = Self::new(dim)?;
        let mut seen = 0;
        for (lineno, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (id, values) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse(format!("line {}: expected '<id>\\t<values>'", lineno + 1)))?;
            let id: u32 = id
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: token id: {e}", lineno + 1)))?;
            let row = values
                .split_whitespace()
                .map(|v| {
                    v.parse::<f64>()
                        .map(T::lit)
                        .map_err(|e| Error::Parse(format!("line {}: value {v:?}: {e}", lineno + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            table
                .insert(TokenId(id), Array1::from(row))
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            seen += 1;
        }
        if seen != count {
            return Err(Error::Parse(format!(
                "header announces {count} tokens but file has {seen}"
            )));
        }
        Ok(table)
    }
}

/// An `n × m` matrix of per-token embedding rows with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T>(Array2<T>);

impl<T: Scalar> EmbeddingMatrix<T> {
    pub fn new(entries: Array2<T>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::Shape(format!(
                "embedding matrix must be non-empty, got {:?}",
                entries.dim()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "embedding matrix has non-finite entries".into(),
            ));
        }
        Ok(Self(entries))
    }

    /// Builds a matrix from row-major data.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        let arr = Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(arr)
    }

    /// Wraps entries produced internally from already-finite inputs.
    pub(crate) fn from_trusted(entries: Array2<T>) -> Self {
        debug_assert!(entries.iter().all(|v| v.is_finite()));
        Self(entries)
    }

    pub fn tokens(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, T> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<T> {
        self.0
    }

    /// Copy with the given rows replaced by the (zero) MASK row.
    pub fn with_masked(&self, positions: &[usize]) -> Self {
        let mut out = self.0.clone();
        for &i in positions {
            out.row_mut(i).fill(T::zero());
        }
        Self(out)
    }

    /// Copy with every row replaced by the MASK row.
    pub fn all_masked(&self) -> Self {
        Self(Array2::zeros(self.0.raw_dim()))
    }
}

impl<T> Deref for EmbeddingMatrix<T> {
    type Target = Array2<T>;

    fn deref(&self) -> &Array2<T> {
        &self.0
    }
}

/// Looks up every token of `seq` in `table`.
pub fn embed<T: Scalar>(table: &EmbeddingTable<T>, seq: &TokenSequence) -> Result<EmbeddingMatrix<T>> {
    let mut out = Array2::zeros((seq.len(), table.dim()));
    for (position, (&id, mut row)) in seq.tokens().iter().zip(out.rows_mut()).enumerate() {
        let src = table.get(id).ok_or(Error::UnknownToken { id: id.0, position })?;
        row.assign(&src);
    }
    Ok(EmbeddingMatrix(out))
}
