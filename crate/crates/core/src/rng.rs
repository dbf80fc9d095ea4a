//! Seeded, order-independent random streams.
//!
//! Every draw is taken from a ChaCha20 keystream keyed by the 64-bit seed
//! (expanded with `SeedableRng::seed_from_u64`) on a stream selected by the
//! sample index. Gaussian variates use the ziggurat sampler of
//! `rand_distr::StandardNormal`. Both are fixed algorithms, so a given
//! `(seed, index)` pair yields the same values on every platform and
//! regardless of how work is split across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

/// Independent random stream number `stream` under `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n` standard normal draws.
pub fn standard_normals<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<T> {
    (0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect()
}

/// A child seed for work item `index`, drawn from its own substream.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    substream(seed, index).random()
}
