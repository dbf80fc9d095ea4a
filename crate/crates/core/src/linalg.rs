//! Small dense linear-algebra kernels.
//!
//! Everything here works on modest sizes (tens to a few hundred rows), so
//! plain row-major loops over `ndarray` storage are sufficient.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    lower: Array2<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factorizes a symmetric positive-definite matrix. Fails when any pivot
    /// is not strictly positive.
    pub fn new(a: ArrayView2<'_, T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Shape(format!(
                "cholesky needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let mut lower = Array2::<T>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= lower[[j, k]] * lower[[j, k]];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::Covariance(format!(
                    "matrix is not positive definite (pivot {j} = {d})"
                )));
            }
            let d = d.sqrt();
            lower[[j, j]] = d;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= lower[[i, k]] * lower[[j, k]];
                }
                lower[[i, j]] = s / d;
            }
        }
        Ok(Self { lower })
    }

    pub fn lower(&self) -> &Array2<T> {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: ArrayView1<'_, T>) -> Array1<T> {
        let n = self.dim();
        let l = &self.lower;
        let mut y = b.to_owned();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[[i, k]] * y[k];
            }
            y[i] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[[k, i]] * y[k];
            }
            y[i] = s / l[[i, i]];
        }
        y
    }

    /// Returns `L v`.
    pub fn mul_lower(&self, v: ArrayView1<'_, T>) -> Array1<T> {
        self.lower.dot(&v)
    }
}

/// Checks symmetry to a relative tolerance.
pub fn is_symmetric<T: Scalar>(a: ArrayView2<'_, T>, rel_tol: T) -> bool {
    let n = a.nrows();
    if a.ncols() != n {
        return false;
    }
    let scale = a.iter().fold(T::zero(), |m, v| m.max(v.abs())).max(T::one());
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[[i, j]] - a[[j, i]]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// Numerical rank by Gaussian elimination with complete pivoting.
pub fn numerical_rank<T: Scalar>(a: ArrayView2<'_, T>) -> usize {
    let mut m = a.to_owned();
    let (rows, cols) = m.dim();
    let max_abs = m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    if max_abs == T::zero() {
        return 0;
    }
    let tol = T::from_count(rows.max(cols)) * T::epsilon() * max_abs * T::lit(16.0);
    let mut rank = 0;
    for step in 0..rows.min(cols) {
        let mut best = (step, step, T::zero());
        for i in step..rows {
            for j in step..cols {
                if m[[i, j]].abs() > best.2 {
                    best = (i, j, m[[i, j]].abs());
                }
            }
        }
        if best.2 <= tol {
            break;
        }
        rank += 1;
        let (pi, pj, _) = best;
        for j in 0..cols {
            m.swap([step, j], [pi, j]);
        }
        for i in 0..rows {
            m.swap([i, step], [i, pj]);
        }
        let pivot = m[[step, step]];
        for i in (step + 1)..rows {
            let f = m[[i, step]] / pivot;
            if f != T::zero() {
                for j in step..cols {
                    let v = m[[step, j]];
                    m[[i, j]] -= f * v;
                }
            }
        }
    }
    rank
}

/// `XᵀX` for a tall design matrix.
pub fn gram<T: Scalar>(x: ArrayView2<'_, T>) -> Array2<T> {
    x.t().dot(&x)
}

/// Least-squares solution of `X b ≈ y` (optionally weighted) through the
/// normal equations. Reports the numerical rank when the Gram matrix is
/// singular.
pub fn weighted_least_squares<T: Scalar>(
    x: ArrayView2<'_, T>,
    y: ArrayView1<'_, T>,
    weights: Option<ArrayView1<'_, T>>,
) -> Result<Array1<T>> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!(
            "design has {} rows but response has {} entries",
            x.nrows(),
            y.len()
        )));
    }
    let (g, rhs) = match weights {
        Some(w) => {
            let mut xw = x.to_owned();
            for (mut row, &wi) in xw.rows_mut().into_iter().zip(w.iter()) {
                row.mapv_inplace(|v| v * wi);
            }
            (xw.t().dot(&x), xw.t().dot(&y))
        }
        None => (gram(x), x.t().dot(&y)),
    };
    let chol = Cholesky::new(g.view()).map_err(|_| Error::RankDeficient {
        rank: numerical_rank(g.view()),
        size: g.nrows(),
    })?;
    Ok(chol.solve(rhs.view()))
}
