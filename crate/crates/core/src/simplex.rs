//! Dense two-phase tableau simplex for small linear programs of the form
//!
//! ```text
//! minimize cᵀx  subject to  A x ≤ h,  x ≥ 0
//! ```
//!
//! `h` may have any sign; rows with negative right-hand side get an
//! artificial variable and are handled in phase one. Entering and leaving
//! variables follow Bland's rule, which rules out cycling.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct LpSolution<T> {
    pub x: Array1<T>,
    pub objective: T,
    pub iterations: usize,
    /// Largest violation of `A x ≤ h` or `x ≥ 0` at the returned point.
    pub primal_residual: T,
    /// Most negative reduced cost at the final basis (≥ −tol when optimal).
    pub min_reduced_cost: T,
}

struct Tableau<T> {
    /// `rows × (cols + 1)`; last column is the right-hand side.
    t: Array2<T>,
    basis: Vec<usize>,
    /// Reduced costs, last entry is minus the objective value.
    obj: Array1<T>,
    pivot_tol: T,
}

impl<T: Scalar> Tableau<T> {
    fn cols(&self) -> usize {
        self.t.ncols() - 1
    }

    fn rhs(&self, i: usize) -> T {
        self.t[[i, self.cols()]]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[[row, col]];
        self.t.row_mut(row).mapv_inplace(|v| v / p);
        let pivot_row = self.t.row(row).to_owned();
        for i in 0..self.t.nrows() {
            if i == row {
                continue;
            }
            let f = self.t[[i, col]];
            if f != T::zero() {
                self.t.row_mut(i).zip_mut_with(&pivot_row, |a, b| *a -= f * *b);
                self.t[[i, col]] = T::zero();
            }
        }
        let f = self.obj[col];
        if f != T::zero() {
            self.obj.zip_mut_with(&pivot_row, |a, b| *a -= f * *b);
            self.obj[col] = T::zero();
        }
        self.basis[row] = col;
    }

    /// Sets the objective row for cost vector `cost` (length `cols`).
    fn price(&mut self, cost: &[T]) {
        let cols = self.cols();
        let mut obj = Array1::zeros(cols + 1);
        obj.slice_mut(s![..cols]).assign(&ArrayView1::from(cost));
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != T::zero() {
                obj.zip_mut_with(&self.t.row(i), |a, v| *a -= cb * *v);
            }
        }
        self.obj = obj;
    }

    /// Runs simplex iterations on the current objective row. Columns with
    /// `allowed[j] == false` never enter.
    fn optimize(&mut self, allowed: &[bool], tol: T, budget: &mut usize) -> Result<()> {
        loop {
            let entering = (0..self.cols()).find(|&j| allowed[j] && self.obj[j] < -tol);
            let Some(col) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, T)> = None;
            for i in 0..self.t.nrows() {
                let a = self.t[[i, col]];
                if a > self.pivot_tol {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((r, best)) => {
                            if ratio < best || (ratio == best && self.basis[i] < self.basis[r]) {
                                Some((i, ratio))
                            } else {
                                Some((r, best))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else {
                return Err(Error::Lp("objective is unbounded below".into()));
            };
            if *budget == 0 {
                return Err(Error::IterationLimit(0));
            }
            *budget -= 1;
            self.pivot(row, col);
        }
    }
}

/// Solves `min cᵀx s.t. A x ≤ h, x ≥ 0`.
///
/// `tol` bounds the accepted primal infeasibility and the most negative
/// reduced cost at termination.
pub fn solve_lp<T: Scalar>(
    c: ArrayView1<'_, T>,
    a: ArrayView2<'_, T>,
    h: ArrayView1<'_, T>,
    tol: T,
    max_iterations: usize,
) -> Result<LpSolution<T>> {
    let (rows, vars) = a.dim();
    if c.len() != vars || h.len() != rows {
        return Err(Error::Shape(format!(
            "LP with {rows}x{vars} constraints, {} costs and {} bounds",
            c.len(),
            h.len()
        )));
    }
    let negative: Vec<usize> = (0..rows).filter(|&i| h[i] < T::zero()).collect();
    let arts = negative.len();
    let cols = vars + rows + arts;
    let mut t = Array2::zeros((rows, cols + 1));
    let mut basis = vec![0; rows];
    let mut art_idx = 0;
    for i in 0..rows {
        let sign = if h[i] < T::zero() { -T::one() } else { T::one() };
        for j in 0..vars {
            t[[i, j]] = sign * a[[i, j]];
        }
        t[[i, vars + i]] = sign;
        t[[i, cols]] = sign * h[i];
        if h[i] < T::zero() {
            let col = vars + rows + art_idx;
            t[[i, col]] = T::one();
            basis[i] = col;
            art_idx += 1;
        } else {
            basis[i] = vars + i;
        }
    }
    let scale = a.iter().fold(T::one(), |m, v| m.max(v.abs()));
    let mut tab = Tableau {
        t,
        basis,
        obj: Array1::zeros(cols + 1),
        pivot_tol: T::lit(1e-12) * scale,
    };
    let mut budget = max_iterations;
    let all = vec![true; cols];
    let mut no_art = vec![true; cols];
    no_art[vars + rows..].iter_mut().for_each(|v| *v = false);

    if arts > 0 {
        let mut phase1 = vec![T::zero(); cols];
        phase1[vars + rows..].iter_mut().for_each(|v| *v = T::one());
        tab.price(&phase1);
        tab.optimize(&all, tol, &mut budget)
            .map_err(|e| exhausted(e, max_iterations))?;
        let infeasibility = -tab.obj[cols];
        let rhs_scale = h.iter().fold(T::one(), |m, v| m.max(v.abs()));
        if infeasibility > tol * rhs_scale {
            return Err(Error::Lp(format!(
                "problem is infeasible (phase-one objective {infeasibility})"
            )));
        }
        // Drive zero-level artificials out of the basis where possible.
        for i in 0..rows {
            if tab.basis[i] >= vars + rows {
                if let Some(j) = (0..vars + rows).find(|&j| tab.t[[i, j]].abs() > tab.pivot_tol) {
                    tab.pivot(i, j);
                }
            }
        }
    }

    let mut cost = vec![T::zero(); cols];
    cost.iter_mut().zip(c.iter()).for_each(|(d, s)| *d = *s);
    tab.price(&cost);
    tab.optimize(&no_art, tol, &mut budget)
        .map_err(|e| exhausted(e, max_iterations))?;

    let mut x = Array1::zeros(vars);
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < vars {
            x[b] = tab.rhs(i);
        }
    }
    let objective = c.dot(&x);
    let ax = a.dot(&x);
    let primal_residual = ax
        .iter()
        .zip(h.iter())
        .map(|(l, r)| *l - *r)
        .chain(x.iter().map(|v| -*v))
        .fold(T::zero(), |m, v| m.max(v));
    let min_reduced_cost = (0..cols)
        .filter(|&j| no_art[j])
        .map(|j| tab.obj[j])
        .fold(T::zero(), |m, v| m.min(v));
    Ok(LpSolution {
        x,
        objective,
        iterations: max_iterations - budget,
        primal_residual,
        min_reduced_cost,
    })
}

fn exhausted(e: Error, max_iterations: usize) -> Error {
    match e {
        Error::IterationLimit(_) => Error::IterationLimit(max_iterations),
        other => other,
    }
}
