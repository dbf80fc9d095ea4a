//! Comparison explainers: word-level perturbation methods (occlusion, LIME,
//! kernel SHAP, permutation importance), the gradient norm, and random
//! scores.

mod gradient;
mod kernel;
mod lime;
mod occlusion;
mod permutation;
mod random;
mod shap;

pub use gradient::grad_l2_explain;
pub use kernel::{KernelKind, KernelSpec, MaskPattern};
pub use lime::{fit_weighted_lasso, lime_explain, LimeFit};
pub use occlusion::occlusion_explain;
pub use permutation::permutation_importance;
pub use random::random_explain;
pub use shap::{kernel_shap_explain, kernel_shap_explain_with, ShapReplacement};
