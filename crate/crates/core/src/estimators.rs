//! Saliency estimators fitted on perturbation responses.
//!
//! All estimators regress the response change `y = f(E′) − f(E)` on the
//! coefficient offsets `z = c − 1` through the origin, so the fitted
//! vector approximates the gradient of the score along each token's
//! perturbation direction.

use ndarray::{Array1, Array2, Axis};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg::{gram, numerical_rank, Cholesky};
use crate::model::{check_dim, BlackBoxModel};
use crate::nlgp::{
    draw_offsets, normalize_rows, offset_covariance, perturb, CovarianceEstimate, PerturbStyle, PerturbationSpec,
};
use crate::saliency::Saliency;
use crate::scalar::Scalar;
use crate::simplex::solve_lp;

/// Samples evaluated per model call inside [`explain`].
const CHUNK: usize = 256;

/// Offsets, responses and covariance for one explained instance.
#[derive(Debug, Clone)]
pub struct RegressionInputs<T> {
    /// `N × n`.
    pub offsets: Array2<T>,
    /// `y⁽ʲ⁾ = f(E′⁽ʲ⁾) − f(E)`.
    pub responses: Array1<T>,
    /// `n × n`.
    pub covariance: Array2<T>,
    pub base_score: T,
}

impl<T: Scalar> RegressionInputs<T> {
    pub fn new(offsets: Array2<T>, responses: Array1<T>, covariance: Array2<T>, base_score: T) -> Result<Self> {
        let n = offsets.ncols();
        if offsets.nrows() != responses.len() {
            return Err(Error::Shape(format!(
                "{} offset rows but {} responses",
                offsets.nrows(),
                responses.len()
            )));
        }
        if covariance.dim() != (n, n) {
            return Err(Error::Shape(format!(
                "covariance is {:?}, expected {n}x{n}",
                covariance.dim()
            )));
        }
        if responses.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("responses must be finite".into()));
        }
        Ok(Self {
            offsets,
            responses,
            covariance,
            base_score,
        })
    }

    pub fn samples(&self) -> usize {
        self.offsets.nrows()
    }

    pub fn tokens(&self) -> usize {
        self.offsets.ncols()
    }

    /// `(1/N) Σⱼ y⁽ʲ⁾ z⁽ʲ⁾`.
    pub fn moment(&self) -> Result<Array1<T>> {
        let count = self.samples();
        if count == 0 {
            return Err(Error::EmptyBatch);
        }
        let inv = T::one() / T::from_count(count);
        Ok(self.offsets.t().dot(&self.responses).mapv(|v| v * inv))
    }

    fn constant_responses(&self) -> bool {
        // A single nonzero response still defines the estimate.
        let first = self.responses[0];
        (self.samples() > 1 || first.is_zero()) && self.responses.iter().all(|v| *v == first)
    }

    fn saliency(&self, method: &str, scores: Array1<T>) -> Result<Saliency<T>> {
        let mut s = Saliency::new(method, scores)?;
        s.samples = Some(self.samples());
        s.base_score = Some(self.base_score);
        Ok(s)
    }
}

/// `γ = Σ⁻¹ (1/N) Σⱼ y⁽ʲ⁾ z⁽ʲ⁾`, solved through a Cholesky factor of `Σ`.
pub fn mase_closed_form<T: Scalar>(inputs: &RegressionInputs<T>) -> Result<Saliency<T>> {
    let moment = inputs.moment()?;
    let chol = Cholesky::new(inputs.covariance.view())?;
    if inputs.constant_responses() {
        let mut s = inputs.saliency("mase", Array1::zeros(inputs.tokens()))?;
        s.warning = Some("all responses identical; saliency set to zero".into());
        return Ok(s);
    }
    inputs.saliency("mase", chol.solve(moment.view()))
}

/// Ordinary least squares through the origin: `γ = (ZᵀZ)⁻¹ Zᵀ y`.
pub fn mase_ols<T: Scalar>(inputs: &RegressionInputs<T>) -> Result<Saliency<T>> {
    if inputs.samples() == 0 {
        return Err(Error::EmptyBatch);
    }
    let rank = numerical_rank(inputs.offsets.view());
    let deficient = Error::RankDeficient {
        rank,
        size: inputs.tokens(),
    };
    if rank < inputs.tokens() {
        return Err(deficient);
    }
    let g = gram(inputs.offsets.view());
    let chol = Cholesky::new(g.view()).map_err(|_| deficient)?;
    let rhs = inputs.offsets.t().dot(&inputs.responses);
    inputs.saliency("mase-ols", chol.solve(rhs.view()))
}

/// Settings of the L1-sparse estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseSpec<T> {
    /// Infinity-norm budget `L ≥ 0` on the moment residual.
    pub budget: T,
    pub tolerance: T,
    pub max_iterations: usize,
}

impl<T: Scalar> SparseSpec<T> {
    pub fn new(budget: T) -> Self {
        Self {
            budget,
            tolerance: T::lit(1e-9),
            max_iterations: 10_000,
        }
    }
}

/// Solves `min ‖g‖₁ s.t. ‖(1/N)Σ y z − Σ g‖∞ ≤ L` as a linear program over
/// the split `g = g⁺ − g⁻`. The optimal objective is reported in the
/// `l1_objective` parameter.
pub fn mase_sparse_lp<T: Scalar>(inputs: &RegressionInputs<T>, spec: &SparseSpec<T>) -> Result<Saliency<T>> {
    if !(spec.budget >= T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "sparsity budget must be non-negative, got {}",
            spec.budget
        )));
    }
    let b = inputs.moment()?;
    let sigma = &inputs.covariance;
    Cholesky::new(sigma.view())?;
    let n = inputs.tokens();
    let mut a = Array2::zeros((2 * n, 2 * n));
    let mut h = Array1::zeros(2 * n);
    for i in 0..n {
        for j in 0..n {
            let v = sigma[[i, j]];
            a[[i, j]] = v;
            a[[i, n + j]] = -v;
            a[[n + i, j]] = -v;
            a[[n + i, n + j]] = v;
        }
        h[i] = b[i] + spec.budget;
        h[n + i] = spec.budget - b[i];
    }
    let c = Array1::from_elem(2 * n, T::one());
    let sol = solve_lp(c.view(), a.view(), h.view(), spec.tolerance, spec.max_iterations)?;
    let scale = h.iter().fold(T::one(), |m, v| m.max(v.abs()));
    if sol.primal_residual > spec.tolerance * scale || sol.min_reduced_cost < -spec.tolerance {
        return Err(Error::Lp(format!(
            "solution failed certification (residual {}, reduced cost {})",
            sol.primal_residual, sol.min_reduced_cost
        )));
    }
    let g = Array1::from_shape_fn(n, |i| sol.x[i] - sol.x[n + i]);
    let mut s = inputs.saliency("mase-sparse", g)?;
    s.sparsity = Some(spec.budget);
    Ok(s.with_param("l1_objective", format!("{:.16e}", sol.objective.as_f64()))
        .with_param("lp_iterations", sol.iterations))
}

/// Perturbs `e`, scores every perturbation, and assembles the regression
/// problem. Samples are generated and scored in chunks, so memory stays
/// bounded by `N·n` regardless of the embedding width.
pub fn regression_inputs<T: Scalar, M: BlackBoxModel<T> + ?Sized>(
    model: &M,
    e: &EmbeddingMatrix<T>,
    spec: &PerturbationSpec<T>,
) -> Result<RegressionInputs<T>> {
    check_dim(model, e)?;
    let n = e.tokens();
    let factor = spec.validate(n).map_err(Error::at("sampling"))?;
    let base = model.evaluate(e).map_err(Error::at("model evaluation"))?;
    let unit = normalize_rows(e);
    let mut offsets = Array2::zeros((0, n));
    let mut responses = Vec::with_capacity(spec.samples);
    let mut start = 0;
    while start < spec.samples {
        let end = (start + CHUNK).min(spec.samples);
        let z = draw_offsets(n, spec, factor.as_ref(), start..end);
        let batch: Vec<_> = z.outer_iter().map(|row| perturb(e, &unit, row, spec.style)).collect();
        let scores = model.evaluate_batch(&batch).map_err(Error::at("model evaluation"))?;
        if scores.len() != batch.len() {
            return Err(Error::at("model evaluation")(Error::Model(format!(
                "{} scores returned for {} inputs",
                scores.len(),
                batch.len()
            ))));
        }
        responses.extend(scores.into_iter().map(|s| s - base));
        offsets
            .append(Axis(0), z.view())
            .map_err(|err| Error::Shape(err.to_string()))?;
        start = end;
    }
    let covariance = match spec.covariance_estimate {
        CovarianceEstimate::Empirical => offset_covariance(offsets.view()).map_err(Error::at("estimation"))?,
        CovarianceEstimate::Nominal => spec.covariance_matrix(n),
    };
    RegressionInputs::new(offsets, Array1::from(responses), covariance, base)
}

/// Explains one prediction: NLGP sampling, batch scoring, then the
/// closed-form estimator, or the sparse LP when `sparse` is given.
pub fn explain<T: Scalar, M: BlackBoxModel<T> + ?Sized>(
    model: &M,
    e: &EmbeddingMatrix<T>,
    spec: &PerturbationSpec<T>,
    sparse: Option<&SparseSpec<T>>,
) -> Result<Saliency<T>> {
    let inputs = regression_inputs(model, e, spec)?;
    let mut s = match sparse {
        Some(sp) => mase_sparse_lp(&inputs, sp),
        None => mase_closed_form(&inputs),
    }
    .map_err(Error::at("estimation"))?;
    s.sigma = Some(spec.sigma());
    s.seed = Some(spec.seed);
    let style = match spec.style {
        PerturbStyle::NormalizedAdditive => "normalized-additive",
        PerturbStyle::PureScaling => "pure-scaling",
    };
    let estimate = match spec.covariance_estimate {
        CovarianceEstimate::Empirical => "empirical",
        CovarianceEstimate::Nominal => "nominal",
    };
    Ok(s.with_param("style", style).with_param("covariance", estimate))
}
