use ndarray::Array1;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::saliency::Saliency;
use crate::scalar::Scalar;

/// `n` i.i.d. uniform(0, 1) scores.
pub fn random_explain<T: Scalar>(n: usize, seed: u64) -> Result<Saliency<T>> {
    if n == 0 {
        return Err(Error::InvalidParameter("random explainer needs n ≥ 1".into()));
    }
    let mut rng = substream(seed, 0);
    let scores = Array1::from_iter((0..n).map(|_| T::lit(rng.random::<f64>())));
    let mut s = Saliency::new("random", scores)?;
    s.seed = Some(seed);
    Ok(s)
}
