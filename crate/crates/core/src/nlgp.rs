//! Normalized linear Gaussian perturbations of an embedding matrix.
//!
//! Each sample draws a coefficient vector `c ~ N(1, Σ)` with one entry per
//! token and moves every embedding row along its own direction, so a
//! perturbed row is always a scalar multiple of the original one.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg::{is_symmetric, Cholesky};
use crate::rng::{standard_normals, substream};
use crate::scalar::Scalar;

/// Rows with norm at or below this are treated as zero (MASK) rows.
pub const ZERO_ROW_EPS: f64 = 1e-12;

/// Default number of model evaluations per explanation.
pub const DEFAULT_SAMPLES: usize = 1000;

/// Default per-coordinate noise scale.
pub const DEFAULT_SIGMA: f64 = 0.1;

/// Default cap on `N·n·m`, the number of scalars in a materialized batch.
pub const DEFAULT_MAX_ELEMENTS: usize = 1 << 27;

/// Covariance of the coefficient draws.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance<T> {
    /// `σ² I`.
    Isotropic { sigma: T },
    /// An explicit symmetric positive-definite `n × n` matrix.
    Explicit(Array2<T>),
}

/// How a coefficient offset `z = c − 1` moves an embedding row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PerturbStyle {
    /// `E′ᵢ = Eᵢ + zᵢ Êᵢ` with `Êᵢ` the unit-normalized row.
    #[default]
    NormalizedAdditive,
    /// `E′ᵢ = cᵢ Eᵢ`.
    PureScaling,
}

/// Which covariance the estimators divide by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceEstimate {
    /// `(1/N) ZᵀZ` of the realized batch.
    #[default]
    Empirical,
    /// The covariance the samples were drawn from.
    Nominal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec<T> {
    pub covariance: Covariance<T>,
    pub samples: usize,
    pub seed: u64,
    pub style: PerturbStyle,
    pub covariance_estimate: CovarianceEstimate,
    pub max_elements: usize,
}

impl<T: Scalar> Default for PerturbationSpec<T> {
    fn default() -> Self {
        Self::isotropic(T::lit(DEFAULT_SIGMA), DEFAULT_SAMPLES, 0)
    }
}

impl<T: Scalar> PerturbationSpec<T> {
    pub fn isotropic(sigma: T, samples: usize, seed: u64) -> Self {
        Self {
            covariance: Covariance::Isotropic { sigma },
            samples,
            seed,
            style: PerturbStyle::default(),
            covariance_estimate: CovarianceEstimate::default(),
            max_elements: DEFAULT_MAX_ELEMENTS,
        }
    }

    pub fn explicit(covariance: Array2<T>, samples: usize, seed: u64) -> Self {
        Self {
            covariance: Covariance::Explicit(covariance),
            ..Self::isotropic(T::lit(DEFAULT_SIGMA), samples, seed)
        }
    }

    pub fn with_style(mut self, style: PerturbStyle) -> Self {
        self.style = style;
        self
    }

    pub fn with_covariance_estimate(mut self, estimate: CovarianceEstimate) -> Self {
        self.covariance_estimate = estimate;
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The noise scale: `σ` for isotropic specs, `sqrt(mean diag Σ)`
    /// otherwise.
    pub fn sigma(&self) -> T {
        match &self.covariance {
            Covariance::Isotropic { sigma } => *sigma,
            Covariance::Explicit(s) => {
                let n = T::from_count(s.nrows().max(1));
                (s.diag().sum() / n).sqrt()
            }
        }
    }

    /// The `n × n` covariance matrix the coefficients are drawn from.
    pub fn covariance_matrix(&self, n: usize) -> Array2<T> {
        match &self.covariance {
            Covariance::Isotropic { sigma } => Array2::eye(n) * (*sigma * *sigma),
            Covariance::Explicit(s) => s.clone(),
        }
    }

    /// Checks the spec against a matrix with `n` tokens and returns the
    /// sampling factor (`None` for isotropic noise).
    pub(crate) fn validate(&self, n: usize) -> Result<Option<Cholesky<T>>> {
        if self.samples == 0 {
            return Err(Error::EmptyBatch);
        }
        match &self.covariance {
            Covariance::Isotropic { sigma } => {
                // sigma == 0 is the degenerate-noise test hook.
                if !(*sigma >= T::zero()) || !sigma.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "noise scale must be non-negative, got {sigma}"
                    )));
                }
                Ok(None)
            }
            Covariance::Explicit(s) => {
                if s.dim() != (n, n) {
                    return Err(Error::Covariance(format!(
                        "covariance is {:?} but the matrix has {n} tokens",
                        s.dim()
                    )));
                }
                if !is_symmetric(s.view(), T::lit(1e-12)) {
                    return Err(Error::Covariance("covariance is not symmetric".into()));
                }
                Cholesky::new(s.view()).map(Some)
            }
        }
    }
}

/// Normalizes each row to unit L2 norm; rows with norm `≤ 1e-12` stay
/// unchanged.
pub fn normalize_rows<T: Scalar>(e: &EmbeddingMatrix<T>) -> EmbeddingMatrix<T> {
    let eps = T::lit(ZERO_ROW_EPS);
    let mut out = e.view().to_owned();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > eps {
            row.mapv_inplace(|v| v / norm);
        }
    }
    EmbeddingMatrix::from_trusted(out)
}

/// Applies one coefficient offset vector to `base`.
///
/// `unit` must be `normalize_rows(base)`; it is passed in so that callers
/// perturbing many times normalize once.
pub fn perturb<T: Scalar>(
    base: &EmbeddingMatrix<T>,
    unit: &EmbeddingMatrix<T>,
    offsets: ArrayView1<'_, T>,
    style: PerturbStyle,
) -> EmbeddingMatrix<T> {
    let mut out = base.view().to_owned();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let z = offsets[i];
        match style {
            PerturbStyle::NormalizedAdditive => {
                row.zip_mut_with(&unit.row(i), |a, u| *a += z * *u);
            }
            PerturbStyle::PureScaling => {
                let c = T::one() + z;
                row.mapv_inplace(|a| a * c);
            }
        }
    }
    EmbeddingMatrix::from_trusted(out)
}

/// Draws the coefficient offsets `z⁽ʲ⁾ = c⁽ʲ⁾ − 1` for sample indices in
/// `range` (one row per sample). Sample `j` depends only on `(seed, j)`.
pub fn sample_offsets<T: Scalar>(
    n: usize,
    spec: &PerturbationSpec<T>,
    range: std::ops::Range<usize>,
) -> Result<Array2<T>> {
    let factor = spec.validate(n)?;
    Ok(draw_offsets(n, spec, factor.as_ref(), range))
}

pub(crate) fn draw_offsets<T: Scalar>(
    n: usize,
    spec: &PerturbationSpec<T>,
    factor: Option<&Cholesky<T>>,
    range: std::ops::Range<usize>,
) -> Array2<T> {
    let rows: Vec<Vec<T>> = range
        .into_par_iter()
        .map(|j| {
            let xi: Vec<T> = standard_normals(&mut substream(spec.seed, j as u64), n);
            match (factor, &spec.covariance) {
                (Some(chol), _) => chol.mul_lower(ArrayView1::from(&xi)).to_vec(),
                (None, Covariance::Isotropic { sigma }) => xi.into_iter().map(|x| x * *sigma).collect(),
                (None, Covariance::Explicit(_)) => unreachable!("explicit covariance always has a factor"),
            }
        })
        .collect();
    let mut z = Array2::zeros((rows.len(), n));
    for (j, row) in rows.into_iter().enumerate() {
        z.row_mut(j).assign(&Array1::from(row));
    }
    z
}

/// A materialized set of NLGP samples.
#[derive(Debug, Clone)]
pub struct PerturbationBatch<T> {
    /// `N × n` coefficient draws `c⁽ʲ⁾`.
    pub coefficients: Array2<T>,
    /// `N × n` offsets `z⁽ʲ⁾ = c⁽ʲ⁾ − 1`.
    pub offsets: Array2<T>,
    pub perturbed: Vec<EmbeddingMatrix<T>>,
    pub spec: PerturbationSpec<T>,
}

impl<T: Scalar> PerturbationBatch<T> {
    pub fn len(&self) -> usize {
        self.perturbed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perturbed.is_empty()
    }

    /// Writes the coefficient draws as CSV preceded by an eight-line
    /// `#`-prefixed header describing the spec.
    pub fn write_coefficients_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let (cov, entries) = match &self.spec.covariance {
            Covariance::Isotropic { .. } => ("isotropic", String::from("-")),
            Covariance::Explicit(s) => (
                "explicit",
                s.iter()
                    .map(|v| format!("{:.16e}", v.as_f64()))
                    .collect::<Vec<_>>()
                    .join(" "),
            ),
        };
        let style = match self.spec.style {
            PerturbStyle::NormalizedAdditive => "normalized-additive",
            PerturbStyle::PureScaling => "pure-scaling",
        };
        let estimate = match self.spec.covariance_estimate {
            CovarianceEstimate::Empirical => "empirical",
            CovarianceEstimate::Nominal => "nominal",
        };
        writeln!(out, "# sigma = {:.16e}", self.spec.sigma().as_f64())?;
        writeln!(out, "# covariance_kind = {cov}")?;
        writeln!(out, "# covariance = {entries}")?;
        writeln!(out, "# samples = {}", self.spec.samples)?;
        writeln!(out, "# seed = {}", self.spec.seed)?;
        writeln!(out, "# style = {style}")?;
        writeln!(out, "# covariance_estimate = {estimate}")?;
        writeln!(out, "# tokens = {}", self.coefficients.ncols())?;
        let header: Vec<String> = (0..self.coefficients.ncols()).map(|i| format!("c{i}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for row in self.coefficients.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{:.16e}", v.as_f64())).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Draws `spec.samples` perturbations of `e`.
///
/// The result is a pure function of `(e, spec)`; sample generation runs in
/// parallel without affecting the values.
pub fn sample_nlgp<T: Scalar>(e: &EmbeddingMatrix<T>, spec: &PerturbationSpec<T>) -> Result<PerturbationBatch<T>> {
    let n = e.tokens();
    let factor = spec.validate(n)?;
    let requested = spec.samples.saturating_mul(n).saturating_mul(e.dim());
    if requested > spec.max_elements {
        return Err(Error::Capacity {
            requested,
            limit: spec.max_elements,
        });
    }
    let offsets = draw_offsets(n, spec, factor.as_ref(), 0..spec.samples);
    let unit = normalize_rows(e);
    let perturbed = (0..offsets.nrows())
        .into_par_iter()
        .map(|i| perturb(e, &unit, offsets.row(i), spec.style))
        .collect();
    let coefficients = offsets.mapv(|z| z + T::one());
    Ok(PerturbationBatch {
        coefficients,
        offsets,
        perturbed,
        spec: spec.clone(),
    })
}

/// `(1/N) ZᵀZ`, the mean-zero sample covariance of the offsets.
pub fn empirical_covariance<T: Scalar>(batch: &PerturbationBatch<T>) -> Result<Array2<T>> {
    offset_covariance(batch.offsets.view())
}

pub(crate) fn offset_covariance<T: Scalar>(offsets: ArrayView2<'_, T>) -> Result<Array2<T>> {
    let count = offsets.nrows();
    if count < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: count });
    }
    let inv = T::one() / T::from_count(count);
    Ok(offsets.t().dot(&offsets).mapv(|v| v * inv))
}
