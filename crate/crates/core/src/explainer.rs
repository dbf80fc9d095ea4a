//! A uniform handle over every explanation method, used by the evaluation
//! metrics and the experiment harness.

use crate::baselines::{
    grad_l2_explain, kernel_shap_explain_with, lime_explain, occlusion_explain, permutation_importance, random_explain,
    KernelSpec, ShapReplacement,
};
use crate::embedding::EmbeddingMatrix;
use crate::error::Result;
use crate::estimators::{explain, SparseSpec};
use crate::model::BlackBoxModel;
use crate::nlgp::PerturbationSpec;
use crate::saliency::Saliency;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub enum Explainer<T> {
    /// NLGP perturbation with the closed-form or sparse estimator. The
    /// spec's seed is replaced by the per-call seed.
    Mase {
        spec: PerturbationSpec<T>,
        sparse: Option<SparseSpec<T>>,
    },
    Random,
    Occlusion,
    Lime {
        samples: usize,
        kernel: KernelSpec<T>,
        max_features: Option<usize>,
    },
    KernelShap {
        samples: usize,
        replacement: ShapReplacement<T>,
    },
    Permutation {
        background: Vec<EmbeddingMatrix<T>>,
        repeats: usize,
    },
    GradL2,
}

impl<T: Scalar> Explainer<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Explainer::Mase { sparse: None, .. } => "mase",
            Explainer::Mase { sparse: Some(_), .. } => "mase-sparse",
            Explainer::Random => "random",
            Explainer::Occlusion => "occlusion",
            Explainer::Lime { .. } => "lime",
            Explainer::KernelShap { .. } => "kernel-shap",
            Explainer::Permutation { .. } => "permutation",
            Explainer::GradL2 => "grad-l2",
        }
    }

    /// Whether the method perturbs embeddings (as opposed to whole words).
    pub fn is_embedding_level(&self) -> bool {
        matches!(self, Explainer::Mase { .. } | Explainer::GradL2)
    }

    pub fn explain<M: BlackBoxModel<T> + ?Sized>(
        &self,
        model: &M,
        e: &EmbeddingMatrix<T>,
        seed: u64,
    ) -> Result<Saliency<T>> {
        match self {
            Explainer::Mase { spec, sparse } => {
                let spec = spec.clone().with_seed(seed);
                explain(model, e, &spec, sparse.as_ref())
            }
            Explainer::Random => random_explain(e.tokens(), seed),
            Explainer::Occlusion => occlusion_explain(model, e),
            Explainer::Lime {
                samples,
                kernel,
                max_features,
            } => lime_explain(model, e, *samples, kernel, *max_features, seed),
            Explainer::KernelShap { samples, replacement } => {
                kernel_shap_explain_with(model, e, *samples, seed, replacement)
            }
            Explainer::Permutation { background, repeats } => {
                permutation_importance(model, e, background, *repeats, seed)
            }
            Explainer::GradL2 => grad_l2_explain(model, e),
        }
    }
}
