use std::io::Write;

use ndarray::Array1;

use crate::embedding::TokenSequence;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-token importance scores plus how they were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Saliency<T> {
    pub scores: Array1<T>,
    pub method: String,
    pub samples: Option<usize>,
    pub sigma: Option<T>,
    pub sparsity: Option<T>,
    pub seed: Option<u64>,
    pub base_score: Option<T>,
    /// Set when the estimate is degenerate (e.g. constant responses).
    pub warning: Option<String>,
    /// Method-specific header fields, written verbatim.
    pub params: Vec<(String, String)>,
}

impl<T: Scalar> Saliency<T> {
    pub fn new(method: impl Into<String>, scores: Array1<T>) -> Result<Self> {
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("saliency scores must be finite".into()));
        }
        Ok(Self {
            scores,
            method: method.into(),
            samples: None,
            sigma: None,
            sparsity: None,
            seed: None,
            base_score: None,
            warning: None,
            params: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn with_param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.push((key.to_string(), value.to_string()));
        self
    }

    /// Token positions ordered by descending score, ties by position.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| {
            self.scores[b]
                .partial_cmp(&self.scores[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx
    }

    /// Writes `# key = value` header lines followed by
    /// `token_index,token_id,score` rows.
    pub fn write_csv<W: Write>(&self, tokens: &TokenSequence, mut out: W) -> Result<()> {
        if tokens.len() != self.scores.len() {
            return Err(Error::Shape(format!(
                "{} scores for {} tokens",
                self.scores.len(),
                tokens.len()
            )));
        }
        let opt = |v: Option<T>| v.map_or("-".to_string(), |x| format!("{:.16e}", x.as_f64()));
        writeln!(out, "# method = {}", self.method)?;
        writeln!(
            out,
            "# samples = {}",
            self.samples.map_or("-".into(), |n| n.to_string())
        )?;
        writeln!(out, "# sigma = {}", opt(self.sigma))?;
        writeln!(out, "# sparsity_L = {}", opt(self.sparsity))?;
        writeln!(out, "# seed = {}", self.seed.map_or("-".into(), |s| s.to_string()))?;
        writeln!(out, "# base_score = {}", opt(self.base_score))?;
        for (k, v) in &self.params {
            writeln!(out, "# {k} = {v}")?;
        }
        if let Some(w) = &self.warning {
            writeln!(out, "# warning = {w}")?;
        }
        writeln!(out, "token_index,token_id,score")?;
        for (i, (tok, s)) in tokens.tokens().iter().zip(self.scores.iter()).enumerate() {
            writeln!(out, "{i},{tok},{:.16e}", s.as_f64())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ranking_breaks_ties_by_position() {
        let s = Saliency::new("t", array![0.5, 0.9, 0.5, 0.1]).unwrap();
        assert_eq!(s.ranking(), vec![1, 0, 2, 3]);
    }

    #[test]
    fn csv_layout() {
        let s = Saliency::new("mase", array![0.25, -1.0])
            .unwrap()
            .with_param("style", "normalized-additive");
        let mut buf = Vec::new();
        s.write_csv(&TokenSequence::from_ids(&[4, 9]).unwrap(), &mut buf)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# method = mase\n"));
        assert!(text.contains("# style = normalized-additive\n"));
        assert!(text.ends_with("token_index,token_id,score\n0,4,2.5000000000000000e-1\n1,9,-1.0000000000000000e0\n"));
    }

    #[test]
    fn non_finite_scores_rejected() {
        assert!(Saliency::new("x", array![f64::NAN]).is_err());
    }
}
