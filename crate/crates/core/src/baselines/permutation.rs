use ndarray::Array1;
use rand::Rng;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::model::{check_dim, BlackBoxModel};
use crate::rng::substream;
use crate::saliency::Saliency;
use crate::scalar::Scalar;

/// Permutation importance: score `i` is the mean, over `repeats` draws, of
/// `f(E) − f(E with row i taken from a uniformly drawn background matrix)`.
pub fn permutation_importance<T: Scalar, M: BlackBoxModel<T> + ?Sized>(
    model: &M,
    e: &EmbeddingMatrix<T>,
    background: &[EmbeddingMatrix<T>],
    repeats: usize,
    seed: u64,
) -> Result<Saliency<T>> {
    check_dim(model, e)?;
    if background.is_empty() {
        return Err(Error::InvalidParameter(
            "permutation importance needs a background set".into(),
        ));
    }
    if repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be at least 1".into()));
    }
    let n = e.tokens();
    if let Some((k, b)) = background
        .iter()
        .enumerate()
        .find(|(_, b)| b.dim() != e.dim() || b.tokens() < n)
    {
        return Err(Error::Shape(format!(
            "background matrix {k} is {}x{}, input is {}x{}",
            b.tokens(),
            b.dim(),
            n,
            e.dim()
        )));
    }
    let base = model.evaluate(e)?;
    let mut scores = Array1::<T>::zeros(n);
    for i in 0..n {
        let mut rng = substream(seed, i as u64);
        let inputs: Vec<_> = (0..repeats)
            .map(|_| {
                let b = &background[rng.random_range(0..background.len())];
                let mut m = e.view().to_owned();
                m.row_mut(i).assign(&b.row(i));
                EmbeddingMatrix::from_trusted(m)
            })
            .collect();
        let vals = model.evaluate_batch(&inputs)?;
        let total: T = vals.into_iter().map(|v| base - v).sum();
        scores[i] = total / T::from_count(repeats);
    }
    let mut s = Saliency::new("permutation", scores)?;
    s.seed = Some(seed);
    s.base_score = Some(base);
    Ok(s.with_param("repeats", repeats)
        .with_param("background_size", background.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{IgnorePositions, Link, ToyLinearBagModel};
    use ndarray::{array, Array1};

    #[test]
    fn self_background_scores_zero() {
        let model = ToyLinearBagModel::new(array![1.0, -2.0], 0.1);
        let e = EmbeddingMatrix::new(array![[0.3, 0.2], [1.0, 0.5]]).unwrap();
        let s = permutation_importance(&model, &e, std::slice::from_ref(&e), 5, 1).unwrap();
        assert!(s.scores.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_link_single_background() {
        let w: Array1<f64> = array![1.0, -2.0];
        let model = ToyLinearBagModel::new(w.clone(), 0.1).with_link(Link::Identity);
        let e = EmbeddingMatrix::new(array![[0.3, 0.2], [1.0, 0.5]]).unwrap();
        let b = EmbeddingMatrix::new(array![[-1.0, 0.0], [0.5, 0.5]]).unwrap();
        for repeats in [1, 7] {
            let s = permutation_importance(&model, &e, std::slice::from_ref(&b), repeats, 3).unwrap();
            for i in 0..2 {
                let expected = w.dot(&(&e.row(i) - &b.row(i)));
                assert!((s.scores[i] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ignored_token_scores_zero() {
        let model = IgnorePositions {
            inner: ToyLinearBagModel::new(array![1.0, -2.0], 0.1),
            positions: vec![1],
        };
        let e = EmbeddingMatrix::new(array![[0.3, 0.2], [1.0, 0.5]]).unwrap();
        let b = EmbeddingMatrix::new(array![[-1.0, 0.0], [0.5, 0.5]]).unwrap();
        assert_eq!(permutation_importance(&model, &e, &[b], 4, 0).unwrap().scores[1], 0.0);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let model = ToyLinearBagModel::new(array![1.0, -2.0], 0.1);
        let e = EmbeddingMatrix::new(array![[0.3, 0.2]]).unwrap();
        let b = EmbeddingMatrix::new(array![[0.3, 0.2, 0.1]]).unwrap();
        assert!(matches!(
            permutation_importance(&model, &e, &[b], 1, 0),
            Err(Error::Shape(_))
        ));
        assert!(permutation_importance(&model, &e, &[], 1, 0).is_err());
    }
}
