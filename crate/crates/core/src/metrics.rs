//! Explanation quality metrics: infidelity, integrated gradients, top-k
//! masking and the resulting accuracy drop.

use std::num::NonZeroUsize;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use crate::embedding::{embed, EmbeddingMatrix, EmbeddingTable, TokenSequence};
use crate::error::{Error, Result};
use crate::estimators::{regression_inputs, RegressionInputs};
use crate::explainer::Explainer;
use crate::model::{check_dim, BinaryClassView, BlackBoxModel};
use crate::nlgp::{CovarianceEstimate, PerturbationSpec};
use crate::rng::child_seed;
use crate::saliency::Saliency;
use crate::scalar::Scalar;

/// Monte-Carlo estimate of explanation infidelity.
#[derive(Debug, Clone, PartialEq)]
pub struct InfidelityEstimate<T> {
    pub value: T,
    pub std_error: T,
    pub samples: usize,
    pub perturbation: String,
}

/// Infidelity of `scores` on an existing batch: the mean of
/// `(zᵀγ − (f(E) − f(E − z)))²` with `z` the negated sample offsets, which
/// equals `mean (y − zᵀγ)²` over the batch responses.
pub fn infidelity_on_inputs<T: Scalar>(
    scores: ArrayView1<'_, T>,
    inputs: &RegressionInputs<T>,
) -> Result<InfidelityEstimate<T>> {
    let m = inputs.samples();
    if m == 0 {
        return Err(Error::EmptyBatch);
    }
    if scores.len() != inputs.tokens() {
        return Err(Error::Shape(format!(
            "{} scores for {} tokens",
            scores.len(),
            inputs.tokens()
        )));
    }
    let pred = inputs.offsets.dot(&scores);
    let sq: Vec<T> = pred
        .iter()
        .zip(inputs.responses.iter())
        .map(|(p, y)| (*y - *p) * (*y - *p))
        .collect();
    let count = T::from_count(m);
    let mean = sq.iter().copied().sum::<T>() / count;
    let std_error = if m > 1 {
        let var = sq.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / T::from_count(m - 1);
        (var / count).sqrt()
    } else {
        T::zero()
    };
    Ok(InfidelityEstimate {
        value: mean,
        std_error,
        samples: m,
        perturbation: "nlgp".into(),
    })
}

/// Infidelity of `gamma` under `samples` NLGP perturbations drawn with
/// `spec` (its sample count is overridden).
pub fn infidelity<T: Scalar, M: BlackBoxModel<T> + ?Sized>(
    gamma: &Saliency<T>,
    model: &M,
    e: &EmbeddingMatrix<T>,
    spec: &PerturbationSpec<T>,
    samples: usize,
) -> Result<InfidelityEstimate<T>> {
    if samples == 0 {
        return Err(Error::EmptyBatch);
    }
    let spec = spec
        .clone()
        .with_samples(samples)
        .with_covariance_estimate(CovarianceEstimate::Nominal);
    let inputs = regression_inputs(model, e, &spec)?;
    let mut est = infidelity_on_inputs(gamma.scores.view(), &inputs)?;
    est.perturbation = format!("nlgp sigma={} seed={}", spec.sigma(), spec.seed);
    Ok(est)
}

/// Integrated gradients from `baseline` to `e` by the midpoint rule with
/// `steps` gradient evaluations.
pub fn integrated_gradients<T: Scalar, M: BlackBoxModel<T> + ?Sized>(
    model: &M,
    e: &EmbeddingMatrix<T>,
    baseline: &EmbeddingMatrix<T>,
    steps: usize,
) -> Result<Array2<T>> {
    if steps == 0 {
        return Err(Error::InvalidParameter(
            "integrated gradients needs at least one step".into(),
        ));
    }
    check_dim(model, e)?;
    if e.raw_dim() != baseline.raw_dim() {
        return Err(Error::Shape(format!(
            "input is {:?} but baseline is {:?}",
            e.dim(),
            baseline.dim()
        )));
    }
    let diff = &**e - &**baseline;
    let mut total = Array2::<T>::zeros(e.raw_dim());
    let inv = T::one() / T::from_count(steps);
    for s in 0..steps {
        let t = (T::from_count(s) + T::lit(0.5)) * inv;
        let point = &**baseline + &diff.mapv(|d| d * t);
        total += &model.gradient(&EmbeddingMatrix::from_trusted(point))?;
    }
    Ok(total.mapv(|v| v * inv))
}

/// Mask the `k` highest-scoring tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskingScheme {
    pub k: NonZeroUsize,
}

impl MaskingScheme {
    pub fn top(k: usize) -> Result<Self> {
        NonZeroUsize::new(k)
            .map(|k| Self { k })
            .ok_or_else(|| Error::InvalidParameter("masking size k must be at least 1".into()))
    }
}

/// Replaces the rows of the `k` largest scores (ties to the lowest index)
/// by the MASK row.
pub fn mask_top_k<T: Scalar>(
    e: &EmbeddingMatrix<T>,
    gamma: &Saliency<T>,
    scheme: MaskingScheme,
) -> Result<EmbeddingMatrix<T>> {
    let k = scheme.k.get();
    if gamma.len() != e.tokens() {
        return Err(Error::Shape(format!(
            "{} scores for {} tokens",
            gamma.len(),
            e.tokens()
        )));
    }
    if k > e.tokens() {
        return Err(Error::InvalidParameter(format!(
            "cannot mask {k} of {} tokens",
            e.tokens()
        )));
    }
    Ok(e.with_masked(&gamma.ranking()[..k]))
}

/// Binary decision rule: class 1 when the score is at least ½.
pub fn predict_label<T: Scalar, M: BlackBoxModel<T> + ?Sized>(model: &M, e: &EmbeddingMatrix<T>) -> Result<usize> {
    Ok(usize::from(model.evaluate(e)? >= T::lit(0.5)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaAccuracyResult {
    /// Correctly classified inputs before masking.
    pub correct: usize,
    /// Of those, still correct after masking.
    pub correct_after: usize,
    /// `(CC − CC_after) / CC`; `None` when `CC = 0`.
    pub delta: Option<f64>,
}

impl DeltaAccuracyResult {
    pub fn new(correct: usize, correct_after: usize) -> Self {
        let delta = (correct > 0).then(|| (correct - correct_after) as f64 / correct as f64);
        Self {
            correct,
            correct_after,
            delta,
        }
    }

    /// `|CC − MC| / CC` with `MC` read as the number misclassified after
    /// masking; kept for comparison with the unflipped-fraction reading.
    pub fn literal_delta(&self) -> Option<f64> {
        let mc = self.correct - self.correct_after;
        (self.correct > 0).then(|| (self.correct as f64 - mc as f64).abs() / self.correct as f64)
    }
}

/// Outcome of the masking protocol on one dataset instance.
#[derive(Debug, Clone)]
pub struct InstanceOutcome<T> {
    pub index: usize,
    pub embedding: EmbeddingMatrix<T>,
    pub label: usize,
    /// `None` when the unmasked input is misclassified.
    pub saliency: Option<Saliency<T>>,
    /// Per requested `k`: still correctly classified after masking.
    pub still_correct: Vec<bool>,
}

/// Runs the top-k masking protocol on every instance. Correctly classified
/// instances are explained for their true class (class probability `f` for
/// label 1, `1 − f` for label 0) with seed `child_seed(seed, index)`.
pub fn masking_outcomes<T: Scalar, M: BlackBoxModel<T> + ?Sized>(
    model: &M,
    table: &EmbeddingTable<T>,
    dataset: &[(TokenSequence, usize)],
    explainer: &Explainer<T>,
    ks: &[usize],
    seed: u64,
) -> Result<Vec<InstanceOutcome<T>>> {
    if dataset.is_empty() {
        return Err(Error::InvalidParameter("empty dataset".into()));
    }
    let schemes = ks.iter().map(|&k| MaskingScheme::top(k)).collect::<Result<Vec<_>>>()?;
    dataset
        .par_iter()
        .enumerate()
        .map(|(index, (seq, label))| {
            let run = || -> Result<InstanceOutcome<T>> {
                if *label > 1 {
                    return Err(Error::Unsupported(format!(
                        "label {label}: only binary classification is supported"
                    )));
                }
                let e = embed(table, seq)?;
                let mut out = InstanceOutcome {
                    index,
                    embedding: e,
                    label: *label,
                    saliency: None,
                    still_correct: Vec::new(),
                };
                if predict_label(model, &out.embedding)? != *label {
                    return Ok(out);
                }
                let view = BinaryClassView {
                    inner: model,
                    class: *label,
                };
                let gamma = explainer.explain(&view, &out.embedding, child_seed(seed, index as u64))?;
                for scheme in &schemes {
                    let masked = mask_top_k(&out.embedding, &gamma, *scheme)?;
                    out.still_correct.push(predict_label(model, &masked)? == *label);
                }
                out.saliency = Some(gamma);
                Ok(out)
            };
            run().map_err(|source| Error::Instance {
                index,
                source: Box::new(source),
            })
        })
        .collect()
}

/// Aggregates outcomes into one [`DeltaAccuracyResult`] per `k`.
pub fn summarize_outcomes<T>(outcomes: &[InstanceOutcome<T>], ks: usize) -> Vec<DeltaAccuracyResult> {
    let correct = outcomes.iter().filter(|o| o.saliency.is_some()).count();
    (0..ks)
        .map(|j| {
            let after = outcomes
                .iter()
                .filter(|o| o.saliency.is_some() && o.still_correct[j])
                .count();
            DeltaAccuracyResult::new(correct, after)
        })
        .collect()
}

/// Accuracy drop after masking the top-`k` tokens of each explanation.
pub fn delta_accuracy<T: Scalar, M: BlackBoxModel<T> + ?Sized>(
    model: &M,
    table: &EmbeddingTable<T>,
    dataset: &[(TokenSequence, usize)],
    explainer: &Explainer<T>,
    k: usize,
    seed: u64,
) -> Result<DeltaAccuracyResult> {
    let outcomes = masking_outcomes(model, table, dataset, explainer, &[k], seed)?;
    Ok(summarize_outcomes(&outcomes, 1)[0])
}
