use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use super::kernel::{KernelKind, KernelSpec, MaskPattern};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::model::{check_dim, BlackBoxModel};
use crate::rng::substream;
use crate::saliency::Saliency;
use crate::scalar::Scalar;

const CD_MAX_SWEEPS: usize = 100_000;

/// Result of a weighted, L1-penalized linear surrogate fit.
#[derive(Debug, Clone)]
pub struct LimeFit<T> {
    pub intercept: T,
    pub coefficients: Array1<T>,
    pub warning: Option<String>,
}

/// Minimizes `½ Σⱼ wⱼ (yⱼ − a − βᵀxⱼ)² + λ‖β‖₁` with an unpenalized
/// intercept. Columns without weighted variation get a zero coefficient
/// and a warning.
pub fn fit_weighted_lasso<T: Scalar>(
    x: ArrayView2<'_, T>,
    y: ArrayView1<'_, T>,
    w: ArrayView1<'_, T>,
    penalty: T,
) -> Result<LimeFit<T>> {
    let (rows, cols) = x.dim();
    if y.len() != rows || w.len() != rows {
        return Err(Error::Shape(format!(
            "design {rows}x{cols} with {} responses and {} weights",
            y.len(),
            w.len()
        )));
    }
    let wsum = w.sum();
    if !(wsum > T::zero()) {
        return Err(Error::InvalidParameter("surrogate weights sum to zero".into()));
    }
    let xbar = x.t().dot(&w).mapv(|v| v / wsum);
    let ybar = y.dot(&w) / wsum;
    let mut xc = x.to_owned();
    for mut row in xc.rows_mut() {
        row.zip_mut_with(&xbar, |a, m| *a -= *m);
    }
    let yc = y.mapv(|v| v - ybar);
    let col_ss: Array1<T> = Array1::from_iter(
        xc.columns()
            .into_iter()
            .map(|c| c.iter().zip(w.iter()).map(|(a, wi)| *a * *a * *wi).sum()),
    );
    let scale = col_ss.iter().fold(T::zero(), |m, v| m.max(*v));
    let tiny = T::lit(1e-12) * scale.max(T::lit(1e-300));
    let active: Vec<usize> = (0..cols).filter(|&j| col_ss[j] > tiny).collect();
    let mut warning = (active.len() < cols).then(|| {
        format!(
            "degenerate design: {} of {cols} features never vary",
            cols - active.len()
        )
    });
    let mut beta = Array1::<T>::zeros(cols);
    if !active.is_empty() && yc.iter().any(|v| *v != T::zero()) {
        let solved = if penalty == T::zero() {
            weighted_ols(&xc, yc.view(), w, &active)
        } else {
            None
        };
        match solved {
            Some(b) => {
                for (k, &j) in active.iter().enumerate() {
                    beta[j] = b[k];
                }
            }
            None => {
                if penalty == T::zero() {
                    warning = Some("collinear design; coordinate descent solution".into());
                }
                coordinate_descent(&xc, yc.view(), w, &col_ss, &active, penalty, &mut beta);
            }
        }
    } else if yc.iter().all(|v| *v == T::zero()) && warning.is_none() {
        warning = Some("all responses identical".into());
    }
    let intercept = ybar - xbar.dot(&beta);
    Ok(LimeFit {
        intercept,
        coefficients: beta,
        warning,
    })
}

fn weighted_ols<T: Scalar>(
    xc: &Array2<T>,
    yc: ArrayView1<'_, T>,
    w: ArrayView1<'_, T>,
    active: &[usize],
) -> Option<Array1<T>> {
    let k = active.len();
    let mut g = Array2::<T>::zeros((k, k));
    let mut rhs = Array1::<T>::zeros(k);
    for (r, row) in xc.rows().into_iter().enumerate() {
        let wr = w[r];
        for (a, &ja) in active.iter().enumerate() {
            let xa = row[ja] * wr;
            rhs[a] += xa * yc[r];
            for (b, &jb) in active.iter().enumerate() {
                g[[a, b]] += xa * row[jb];
            }
        }
    }
    Cholesky::new(g.view()).ok().map(|c| c.solve(rhs.view()))
}

fn coordinate_descent<T: Scalar>(
    xc: &Array2<T>,
    yc: ArrayView1<'_, T>,
    w: ArrayView1<'_, T>,
    col_ss: &Array1<T>,
    active: &[usize],
    penalty: T,
    beta: &mut Array1<T>,
) {
    let mut resid = yc.to_owned() - xc.dot(&*beta);
    let tol = T::lit(1e-14) * yc.iter().fold(T::one(), |m, v| m.max(v.abs()));
    for _ in 0..CD_MAX_SWEEPS {
        let mut max_step = T::zero();
        for &j in active {
            let col = xc.column(j);
            let old = beta[j];
            let rho = col
                .iter()
                .zip(resid.iter())
                .zip(w.iter())
                .map(|((x, r), wi)| *x * *wi * (*r + *x * old))
                .sum::<T>();
            let new = soft_threshold(rho, penalty) / col_ss[j];
            let step = new - old;
            if step != T::zero() {
                resid.zip_mut_with(&col, |r, x| *r -= *x * step);
                beta[j] = new;
                max_step = max_step.max(step.abs());
            }
        }
        if max_step <= tol {
            break;
        }
    }
}

fn soft_threshold<T: Scalar>(v: T, t: T) -> T {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        T::zero()
    }
}

/// LIME with word-level masking: `samples` Bernoulli(½) presence patterns,
/// exponential cosine-distance kernel, weighted lasso with intercept.
/// `max_features` keeps only the largest-magnitude coefficients.
pub fn lime_explain<T: Scalar, M: BlackBoxModel<T> + ?Sized>(
    model: &M,
    e: &EmbeddingMatrix<T>,
    samples: usize,
    kernel: &KernelSpec<T>,
    max_features: Option<usize>,
    seed: u64,
) -> Result<Saliency<T>> {
    check_dim(model, e)?;
    if kernel.kind != KernelKind::LimeExponential {
        return Err(Error::InvalidParameter("LIME requires the exponential kernel".into()));
    }
    kernel.validate()?;
    if samples == 0 {
        return Err(Error::EmptyBatch);
    }
    let n = e.tokens();
    let mut rng = substream(seed, 0);
    let patterns: Vec<MaskPattern> = (0..samples)
        .map(|_| MaskPattern((0..n).map(|_| rng.random_bool(0.5)).collect()))
        .collect();
    let inputs = patterns.iter().map(|u| u.apply(e)).collect::<Result<Vec<_>>>()?;
    let y = Array1::from(model.evaluate_batch(&inputs)?);
    let x = Array2::from_shape_fn(
        (samples, n),
        |(j, i)| if patterns[j].0[i] { T::one() } else { T::zero() },
    );
    let w = Array1::from_iter(patterns.iter().map(|u| kernel.weight(u)));
    let fit = fit_weighted_lasso(x.view(), y.view(), w.view(), kernel.penalty)?;
    let mut coef = fit.coefficients;
    if let Some(keep) = max_features.filter(|&k| k < n) {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            coef[b]
                .abs()
                .partial_cmp(&coef[a].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        for &i in &order[keep..] {
            coef[i] = T::zero();
        }
    }
    let mut s = Saliency::new("lime", coef)?;
    s.samples = Some(samples);
    s.seed = Some(seed);
    s.warning = fit.warning;
    Ok(s.with_param("kernel_width", kernel.width)
        .with_param("penalty", kernel.penalty))
}
