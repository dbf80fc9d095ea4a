//! Model-agnostic saliency estimation for embedding-based text classifiers.
//!
//! The crate perturbs the embedding layer of a black-box model with
//! normalized linear Gaussian perturbations ([`nlgp`]), fits per-token
//! saliency by closed-form regression or an L1-sparse linear program
//! ([`estimators`]), and evaluates explanations by infidelity and top-k
//! masking accuracy drop ([`metrics`]) against a set of baseline
//! explainers ([`baselines`]).
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the element type to `f64`, which is what the
//! documented tolerances assume.

// `!(x > 0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod embedding;
pub mod error;
pub mod estimators;
pub mod explainer;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nlgp;
pub mod rng;
pub mod saliency;
pub mod scalar;
pub mod simplex;

pub use embedding::{embed, EmbeddingMatrix, EmbeddingTable, TokenId, TokenSequence, MASK};
pub use error::{Error, Result};
pub use estimators::{explain, mase_closed_form, mase_ols, mase_sparse_lp, RegressionInputs, SparseSpec};
pub use explainer::Explainer;
pub use model::{BlackBoxModel, Link, ModelScore, ToyLinearBagModel, ToyModel, ToyTwoLayerModel};
pub use nlgp::{sample_nlgp, Covariance, CovarianceEstimate, PerturbStyle, PerturbationBatch, PerturbationSpec};
pub use saliency::Saliency;
pub use scalar::Scalar;

pub type EmbeddingMatrix64 = EmbeddingMatrix<f64>;
pub type EmbeddingTable64 = EmbeddingTable<f64>;
pub type Saliency64 = Saliency<f64>;
pub type PerturbationSpec64 = PerturbationSpec<f64>;
pub type PerturbationBatch64 = PerturbationBatch<f64>;
pub type RegressionInputs64 = RegressionInputs<f64>;
pub type SparseSpec64 = SparseSpec<f64>;
pub type ToyModel64 = ToyModel<f64>;
pub type ToyLinearBagModel64 = ToyLinearBagModel<f64>;
pub type ToyTwoLayerModel64 = ToyTwoLayerModel<f64>;
pub type Explainer64 = Explainer<f64>;
