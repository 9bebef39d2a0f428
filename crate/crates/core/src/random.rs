//! Seeded, platform-independent random sources (ChaCha8).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::tensor::RealTensor;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tensor with i.i.d. standard normal entries drawn in storage order.
pub fn gaussian_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Result<RealTensor> {
    RealTensor::from_fn(shape, |_| StandardNormal.sample(rng))
}
