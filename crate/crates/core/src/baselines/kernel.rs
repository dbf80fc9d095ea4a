use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Word presence pattern: `true` keeps the token, `false` replaces it by
/// the MASK row.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskPattern(pub Vec<bool>);

impl MaskPattern {
    pub fn all_present(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of present words `|u|`.
    pub fn present(&self) -> usize {
        self.0.iter().filter(|p| **p).count()
    }

    pub fn absent_positions(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, p)| !**p)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn apply<T: Scalar>(&self, e: &EmbeddingMatrix<T>) -> Result<EmbeddingMatrix<T>> {
        if self.len() != e.tokens() {
            return Err(Error::Shape(format!(
                "pattern of length {} for {} tokens",
                self.len(),
                e.tokens()
            )));
        }
        Ok(e.with_masked(&self.absent_positions()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// `exp(−D(u, 1)² / σ²)` with `D` the cosine distance to the all-present
    /// pattern.
    LimeExponential,
    /// `(n − 1) / (C(n, |u|) · |u| · (n − |u|))`.
    ShapCombinatorial,
}

/// Sample weighting of a surrogate fit, with its L1 penalty `λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec<T> {
    pub kind: KernelKind,
    pub width: T,
    pub penalty: T,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn lime(width: T, penalty: T) -> Self {
        Self {
            kind: KernelKind::LimeExponential,
            width,
            penalty,
        }
    }

    pub fn shap() -> Self {
        Self {
            kind: KernelKind::ShapCombinatorial,
            width: T::one(),
            penalty: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == KernelKind::LimeExponential && !(self.width > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "kernel width must be positive, got {}",
                self.width
            )));
        }
        if !(self.penalty >= T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "penalty must be non-negative, got {}",
                self.penalty
            )));
        }
        Ok(())
    }

    /// Weight of a pattern. The SHAP kernel is infinite at `|u| ∈ {0, n}`;
    /// those patterns get weight zero here and are handled by constraints.
    pub fn weight(&self, u: &MaskPattern) -> T {
        let n = u.len();
        let present = u.present();
        match self.kind {
            KernelKind::LimeExponential => {
                let d = cosine_distance_to_ones::<T>(present, n);
                (-(d * d) / (self.width * self.width)).exp()
            }
            KernelKind::ShapCombinatorial => {
                if present == 0 || present == n {
                    return T::zero();
                }
                shap_kernel(n, present)
            }
        }
    }
}

/// `1 − cos∠(u, 1) = 1 − sqrt(|u| / n)`; the empty pattern is at distance 1.
fn cosine_distance_to_ones<T: Scalar>(present: usize, n: usize) -> T {
    if present == 0 {
        return T::one();
    }
    T::one() - (T::from_count(present) / T::from_count(n)).sqrt()
}

pub(crate) fn shap_kernel<T: Scalar>(n: usize, size: usize) -> T {
    let comb = binomial(n, size);
    T::from_count(n - 1) / (T::lit(comb) * T::from_count(size) * T::from_count(n - size))
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
