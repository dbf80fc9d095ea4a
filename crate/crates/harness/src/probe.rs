//! Logistic-regression probe on mean-pooled embeddings.

use mase_core::rng::substream;
use mase_core::scalar::logistic;
use mase_core::{embed, EmbeddingTable64, TokenSequence, ToyLinearBagModel64};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_rate")]
    pub learning_rate: f64,
    /// Standard deviation of the Gaussian weight initialization.
    #[serde(default = "default_init")]
    pub init_scale: f64,
    /// Train on z-scored pooled features and map the solution back.
    #[serde(default = "default_standardize")]
    pub standardize: bool,
}

fn default_standardize() -> bool {
    true
}

fn default_epochs() -> usize {
    500
}

fn default_rate() -> f64 {
    0.1
}

fn default_init() -> f64 {
    0.01
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            learning_rate: default_rate(),
            init_scale: default_init(),
            standardize: default_standardize(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedProbe {
    /// Scores `logistic(b + Σᵢ (w/n)·Eᵢ)`, i.e. the pooled-feature
    /// classifier expressed as a linear-bag model for length-`n` inputs.
    pub model: ToyLinearBagModel64,
    /// Weights and bias on the raw mean-pooled features.
    pub pooled_weights: Array1<f64>,
    pub bias: f64,
    /// Parameters in the coordinates gradient descent ran in (standardized
    /// features when `standardize` is set).
    pub fitted_weights: Array1<f64>,
    pub fitted_bias: f64,
    pub train_accuracy: f64,
    pub seq_len: usize,
}

/// Full-batch gradient descent on the mean cross-entropy. All sequences
/// must share one length, since the probe is returned as a linear-bag
/// model with weights scaled by `1/n`.
pub fn train_linear_probe(
    table: &EmbeddingTable64,
    data: &[(TokenSequence, usize)],
    spec: &ProbeSpec,
    seed: u64,
) -> Result<TrainedProbe> {
    if data.is_empty() {
        return Err(HarnessError::Spec("cannot train on an empty corpus".into()));
    }
    if let Some((_, y)) = data.iter().find(|(_, y)| *y > 1) {
        return Err(HarnessError::Unsupported(format!(
            "label {y}: the probe supports binary labels only"
        )));
    }
    let n = data[0].0.len();
    if data.iter().any(|(s, _)| s.len() != n) {
        return Err(HarnessError::Spec("probe training needs equal-length sequences".into()));
    }
    if spec.learning_rate.is_nan() || spec.learning_rate < 0.0 || spec.learning_rate.is_infinite() {
        return Err(HarnessError::Config(format!(
            "learning rate {} invalid",
            spec.learning_rate
        )));
    }
    let m = table.dim();
    let mut x = Array2::<f64>::zeros((data.len(), m));
    for (k, (seq, _)) in data.iter().enumerate() {
        x.row_mut(k)
            .assign(&embed(table, seq)?.mean_axis(Axis(0)).expect("non-empty sequence"));
    }
    let y = Array1::from_iter(data.iter().map(|(_, l)| *l as f64));
    let (shift, scale) = if spec.standardize {
        let mu = x.mean_axis(Axis(0)).expect("non-empty data");
        let sd = x.std_axis(Axis(0), 0.0).mapv(|v| if v > 1e-12 { v } else { 1.0 });
        (mu, sd)
    } else {
        (Array1::zeros(m), Array1::ones(m))
    };
    let x = (&x - &shift) / &scale;
    let mut rng = substream(seed, 0);
    let mut w = Array1::from_shape_fn(m, |_| spec.init_scale * rng.sample::<f64, _>(StandardNormal));
    let mut b = 0.0;
    let count = data.len() as f64;
    for _ in 0..spec.epochs {
        let p = (x.dot(&w) + b).mapv(logistic);
        let r = &p - &y;
        let gw = x.t().dot(&r) / count;
        let gb = r.sum() / count;
        w.scaled_add(-spec.learning_rate, &gw);
        b -= spec.learning_rate * gb;
    }
    let p = (x.dot(&w) + b).mapv(logistic);
    let correct = p
        .iter()
        .zip(y.iter())
        .filter(|(p, y)| (**p >= 0.5) == (**y == 1.0))
        .count();
    let pooled = &w / &scale;
    let bias = b - pooled.dot(&shift);
    Ok(TrainedProbe {
        model: ToyLinearBagModel64::new(&pooled / n as f64, bias),
        pooled_weights: pooled,
        bias,
        fitted_weights: w,
        fitted_bias: b,
        train_accuracy: correct as f64 / count,
        seq_len: n,
    })
}
