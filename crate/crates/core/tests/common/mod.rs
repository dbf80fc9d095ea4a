#![allow(dead_code)]

use mase_core::{BlackBoxModel, EmbeddingMatrix64, ToyLinearBagModel64, ToyTwoLayerModel64};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_7e57)
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vector(rng: &mut impl Rng, len: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn random_embedding(rng: &mut impl Rng, n: usize, m: usize) -> EmbeddingMatrix64 {
    EmbeddingMatrix64::new(gaussian_matrix(rng, n, m, 1.0)).unwrap()
}

pub fn unit_rows(e: EmbeddingMatrix64) -> EmbeddingMatrix64 {
    let mut m = e.into_inner();
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    EmbeddingMatrix64::new(m).unwrap()
}

pub fn random_linear_bag(rng: &mut impl Rng, m: usize) -> ToyLinearBagModel64 {
    ToyLinearBagModel64::new(gaussian_vector(rng, m, 0.5), rng.random_range(-0.5..0.5))
}

pub fn random_two_layer(rng: &mut impl Rng, m: usize, h: usize) -> ToyTwoLayerModel64 {
    ToyTwoLayerModel64::new(
        gaussian_matrix(rng, h, m, 0.7),
        gaussian_vector(rng, h, 0.3),
        gaussian_vector(rng, h, 1.5),
        rng.random_range(-0.3..0.3),
    )
    .unwrap()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting; `None`
/// when a pivot falls below `1e-12` relative to the largest entry.
pub fn gauss_solve(a: &Array2<f64>, b: &Array1<f64>) -> Option<Array1<f64>> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut r = b.clone();
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1e-300);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs()))?;
        if m[[piv, col]].abs() <= 1e-12 * scale {
            return None;
        }
        for j in 0..n {
            m.swap([col, j], [piv, j]);
        }
        r.swap(col, piv);
        for i in col + 1..n {
            let f = m[[i, col]] / m[[col, col]];
            for j in col..n {
                m[[i, j]] -= f * m[[col, j]];
            }
            r[i] -= f * r[col];
        }
    }
    let mut x = Array1::zeros(n);
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| m[[i, j]] * x[j]).sum();
        x[i] = (r[i] - s) / m[[i, i]];
    }
    Some(x)
}

/// OLS through the origin via the normal equations, solved by elimination.
pub fn ols_oracle(z: &Array2<f64>, y: &Array1<f64>) -> Array1<f64> {
    gauss_solve(&z.t().dot(z), &z.t().dot(y)).expect("full-rank design")
}

/// Minimizes `Σ x` over `{x ≥ 0, a x ≤ h}` by visiting every basic
/// solution; returns the optimal value and all optimal vertices.
pub fn enumerate_lp_vertices(a: &Array2<f64>, h: &Array1<f64>) -> (f64, Vec<Array1<f64>>) {
    let (rows, vars) = a.dim();
    // Constraint k < rows is row k of a; k ≥ rows is −x_{k−rows} ≤ 0.
    let total = rows + vars;
    let mut best = f64::INFINITY;
    let mut optimal: Vec<Array1<f64>> = Vec::new();
    let mut subset: Vec<usize> = (0..vars).collect();
    loop {
        let mut m = Array2::zeros((vars, vars));
        let mut rhs = Array1::zeros(vars);
        for (r, &k) in subset.iter().enumerate() {
            if k < rows {
                m.row_mut(r).assign(&a.row(k));
                rhs[r] = h[k];
            } else {
                m[[r, k - rows]] = -1.0;
            }
        }
        if let Some(x) = gauss_solve(&m, &rhs) {
            let feasible = x.iter().all(|v| *v >= -1e-9)
                && a.dot(&x)
                    .iter()
                    .zip(h.iter())
                    .all(|(l, r)| *l <= r + 1e-9 * (1.0 + r.abs()));
            if feasible {
                let obj = x.sum();
                if obj < best - 1e-10 {
                    best = obj;
                    optimal.clear();
                }
                if obj <= best + 1e-10 {
                    optimal.push(x);
                }
            }
        }
        // next combination of `vars` out of `total`
        let mut i = vars;
        loop {
            if i == 0 {
                return (best, optimal);
            }
            i -= 1;
            if subset[i] < total - vars + i {
                break;
            }
        }
        subset[i] += 1;
        for j in i + 1..vars {
            subset[j] = subset[j - 1] + 1;
        }
    }
}

/// Directional derivative `d/dt f(E + t·D)` at `t = 0` by central
/// differences, where `D` is zero except for row `i`, set to `dir`.
pub fn directional_derivative<M: BlackBoxModel<f64>>(
    model: &M,
    e: &EmbeddingMatrix64,
    i: usize,
    dir: &Array1<f64>,
    step: f64,
) -> f64 {
    let shifted = |t: f64| {
        let mut m = e.view().to_owned();
        m.row_mut(i).scaled_add(t, dir);
        model.evaluate(&EmbeddingMatrix64::new(m).unwrap()).unwrap()
    };
    (shifted(step) - shifted(-step)) / (2.0 * step)
}

/// Per-token derivative of `f` along each unit row direction.
pub fn unit_direction_derivatives<M: BlackBoxModel<f64>>(model: &M, e: &EmbeddingMatrix64) -> Array1<f64> {
    Array1::from_shape_fn(e.tokens(), |i| {
        let row = e.row(i).to_owned();
        let norm = row.dot(&row).sqrt();
        directional_derivative(model, e, i, &(row / norm), 1e-5)
    })
}

pub fn rel_l2(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let d = a - b;
    d.dot(&d).sqrt() / b.dot(b).sqrt()
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Central-difference gradient of `f` with respect to every entry of `E`.
pub fn fd_gradient<M: BlackBoxModel<f64>>(model: &M, e: &EmbeddingMatrix64, step: f64) -> Array2<f64> {
    let base = e.view().to_owned();
    Array2::from_shape_fn(base.raw_dim(), |(i, j)| {
        let eval = |delta: f64| {
            let mut m = base.clone();
            m[[i, j]] += delta;
            model.evaluate(&EmbeddingMatrix64::new(m).unwrap()).unwrap()
        };
        (eval(step) - eval(-step)) / (2.0 * step)
    })
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
