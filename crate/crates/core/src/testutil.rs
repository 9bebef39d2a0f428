use crate::random::{gaussian_tensor, seeded_rng};
use crate::tensor::RealTensor;

#[path = "../tests/common/linalg.rs"]
mod linalg;

pub use linalg::*;

pub fn random_tensor(shape: &[usize], seed: u64) -> RealTensor {
    gaussian_tensor(shape, &mut seeded_rng(seed)).unwrap()
}
