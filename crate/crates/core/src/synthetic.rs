//! Deterministic test fixtures with known structure.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::RealTensor;

/// Sum of `rank` separable terms, each an outer product of one smooth
/// sinusoid per mode. Term `r` uses frequency `r + 1` with weight
/// `2^-r`, and the result is scaled to a maximum of 1. Entries stay in
/// `(0, 1]`.
pub fn smooth_low_rank(shape: &[usize], rank: usize) -> Result<RealTensor> {
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be >= 1".into()));
    }
    let factor = |r: usize, m: usize, i: usize| {
        let n = shape[m] as f64;
        0.6 + 0.4 * (2.0 * PI * (r + 1) as f64 * i as f64 / n + 0.7 * (m + r) as f64).sin()
    };
    let x = RealTensor::from_fn(shape, |idx| {
        (0..rank)
            .map(|r| 0.5f64.powi(r as i32) * idx.iter().enumerate().map(|(m, &i)| factor(r, m, i)).product::<f64>())
            .sum()
    })?;
    let peak = x.max_abs();
    Ok(x.scaled(1.0 / peak))
}
