use ndarray::{Array1, Array2};
use rand::seq::index::sample as sample_indices;
use rand::Rng;

use super::kernel::{shap_kernel, KernelSpec, MaskPattern};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg::weighted_least_squares;
use crate::model::{check_dim, BlackBoxModel};
use crate::rng::substream;
use crate::saliency::Saliency;
use crate::scalar::Scalar;

/// Largest `n` for which all coalitions may be enumerated.
const MAX_ENUMERATED_TOKENS: usize = 20;

/// What an absent word is replaced with.
#[derive(Debug, Clone, Default)]
pub enum ShapReplacement<T> {
    /// The zero MASK row.
    #[default]
    Mask,
    /// The same-position row of each background matrix; coalition values
    /// are averaged over the background set.
    Background(Vec<EmbeddingMatrix<T>>),
}

/// Kernel SHAP with MASK replacement.
pub fn kernel_shap_explain<T: Scalar, M: BlackBoxModel<T> + ?Sized>(
    model: &M,
    e: &EmbeddingMatrix<T>,
    samples: usize,
    seed: u64,
) -> Result<Saliency<T>> {
    kernel_shap_explain_with(model, e, samples, seed, &ShapReplacement::Mask)
}

/// Kernel SHAP: weighted least squares over coalitions with the Shapley
/// kernel and the efficiency constraint `Σγᵢ = v(all) − v(none)`.
///
/// When `2ⁿ − 2 ≤ samples` every proper coalition is enumerated with its
/// kernel weight; otherwise coalition sizes are drawn proportionally to
/// their total kernel mass and members uniformly, with unit weights.
pub fn kernel_shap_explain_with<T: Scalar, M: BlackBoxModel<T> + ?Sized>(
    model: &M,
    e: &EmbeddingMatrix<T>,
    samples: usize,
    seed: u64,
    replacement: &ShapReplacement<T>,
) -> Result<Saliency<T>> {
    check_dim(model, e)?;
    let n = e.tokens();
    if n < 2 {
        return Err(Error::Shape(format!("kernel SHAP needs at least 2 tokens, got {n}")));
    }
    if samples == 0 {
        return Err(Error::EmptyBatch);
    }
    if let ShapReplacement::Background(bg) = replacement {
        if bg.is_empty() {
            return Err(Error::InvalidParameter("empty SHAP background set".into()));
        }
        if let Some(b) = bg.iter().find(|b| b.dim() != e.dim() || b.tokens() < n) {
            return Err(Error::Shape(format!(
                "background matrix {}x{} cannot cover a {}x{} input",
                b.tokens(),
                b.dim(),
                n,
                e.dim()
            )));
        }
    }

    let kernel = KernelSpec::<T>::shap();
    let enumerate = n <= MAX_ENUMERATED_TOKENS && (1usize << n) - 2 <= samples;
    let (patterns, weights): (Vec<MaskPattern>, Vec<T>) = if enumerate {
        (1..(1usize << n) - 1)
            .map(|bits| {
                let u = MaskPattern((0..n).map(|i| (bits >> i) & 1 == 1).collect());
                let w = kernel.weight(&u);
                (u, w)
            })
            .unzip()
    } else {
        let mut rng = substream(seed, 0);
        let mass: Vec<f64> = (1..n).map(|s| shap_kernel::<f64>(n, s) * binomial_f64(n, s)).collect();
        let total: f64 = mass.iter().sum();
        (0..samples)
            .map(|_| {
                let mut t = rng.random::<f64>() * total;
                let mut size = n - 1;
                for (k, m) in mass.iter().enumerate() {
                    if t < *m {
                        size = k + 1;
                        break;
                    }
                    t -= m;
                }
                let mut present = vec![false; n];
                for i in sample_indices(&mut rng, n, size) {
                    present[i] = true;
                }
                (MaskPattern(present), T::one())
            })
            .unzip()
    };

    let value = |patterns: &[MaskPattern]| -> Result<Vec<T>> {
        match replacement {
            ShapReplacement::Mask => {
                let inputs = patterns.iter().map(|u| u.apply(e)).collect::<Result<Vec<_>>>()?;
                model.evaluate_batch(&inputs)
            }
            ShapReplacement::Background(bg) => {
                let mut acc = vec![T::zero(); patterns.len()];
                for b in bg {
                    let inputs: Vec<_> = patterns.iter().map(|u| fill_from(e, b, u)).collect();
                    for (a, v) in acc.iter_mut().zip(model.evaluate_batch(&inputs)?) {
                        *a += v;
                    }
                }
                let count = T::from_count(bg.len());
                Ok(acc.into_iter().map(|v| v / count).collect())
            }
        }
    };

    let ends = value(&[MaskPattern(vec![false; n]), MaskPattern::all_present(n)])?;
    let (v_empty, v_full) = (ends[0], ends[1]);
    let delta = v_full - v_empty;
    let values = value(&patterns)?;

    // Eliminate the last token through the efficiency constraint.
    let last = n - 1;
    let rows = patterns.len();
    let mut x = Array2::<T>::zeros((rows, last));
    let mut y = Array1::<T>::zeros(rows);
    let one = |b: bool| if b { T::one() } else { T::zero() };
    for (j, u) in patterns.iter().enumerate() {
        let un = one(u.0[last]);
        for i in 0..last {
            x[[j, i]] = one(u.0[i]) - un;
        }
        y[j] = values[j] - v_empty - un * delta;
    }
    let head = weighted_least_squares(x.view(), y.view(), Some(Array1::from(weights).view()))?;
    let mut gamma = Array1::<T>::zeros(n);
    gamma.slice_mut(ndarray::s![..last]).assign(&head);
    gamma[last] = delta - head.sum();

    let mut s = Saliency::new("kernel-shap", gamma)?;
    s.samples = Some(patterns.len());
    s.seed = Some(seed);
    s.base_score = Some(v_full);
    let mode = match replacement {
        ShapReplacement::Mask => "mask".to_string(),
        ShapReplacement::Background(bg) => format!("background:{}", bg.len()),
    };
    Ok(s.with_param("replacement", mode)
        .with_param("coalitions", if enumerate { "enumerated" } else { "sampled" }))
}

fn fill_from<T: Scalar>(
    e: &EmbeddingMatrix<T>,
    background: &EmbeddingMatrix<T>,
    u: &MaskPattern,
) -> EmbeddingMatrix<T> {
    let mut out = e.view().to_owned();
    for i in u.absent_positions() {
        out.row_mut(i).assign(&background.row(i));
    }
    EmbeddingMatrix::from_trusted(out)
}

fn binomial_f64(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
