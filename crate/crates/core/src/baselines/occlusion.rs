use ndarray::Array1;

use crate::embedding::EmbeddingMatrix;
use crate::error::Result;
use crate::model::{check_dim, BlackBoxModel};
use crate::saliency::Saliency;
use crate::scalar::Scalar;

/// Score `i` is `f(E) − f(E with row i masked)`; `n + 1` evaluations.
pub fn occlusion_explain<T: Scalar, M: BlackBoxModel<T> + ?Sized>(
    model: &M,
    e: &EmbeddingMatrix<T>,
) -> Result<Saliency<T>> {
    check_dim(model, e)?;
    let base = model.evaluate(e)?;
    let masked: Vec<_> = (0..e.tokens()).map(|i| e.with_masked(&[i])).collect();
    let scores = model.evaluate_batch(&masked)?;
    let mut s = Saliency::new("occlusion", Array1::from_iter(scores.into_iter().map(|v| base - v)))?;
    s.base_score = Some(base);
    Ok(s)
}
