use crate::embedding::EmbeddingMatrix;
use crate::error::Result;
use crate::model::{check_dim, gradient_or_finite_difference, BlackBoxModel};
use crate::saliency::Saliency;
use crate::scalar::Scalar;

/// Score `i` is the L2 norm of `∂f/∂(row i)`. Falls back to central
/// differences when the model has no analytic gradient.
pub fn grad_l2_explain<T: Scalar, M: BlackBoxModel<T> + ?Sized>(
    model: &M,
    e: &EmbeddingMatrix<T>,
) -> Result<Saliency<T>> {
    check_dim(model, e)?;
    let g = gradient_or_finite_difference(model, e)?;
    let scores = g.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let source = if model.has_gradient() {
        "analytic"
    } else {
        "finite-difference"
    };
    Ok(Saliency::new("grad-l2", scores)?.with_param("gradient", source))
}
