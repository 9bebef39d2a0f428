//! Invertible transforms applied along modes 3..N.
//!
//! Each per-mode matrix has the form `U = l_n * W` with `W` unitary. The
//! orthonormal DCT-II has `l_n = 1`; the unnormalized DFT has `l_n = sqrt(n)`.
//! The composite scale factor is `l = prod_{i>=3} l_{n_i}`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, Mode, RealTensor, Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    Dct,
    Dft,
}

impl Transform {
    /// True when the transform domain of a real tensor is real.
    pub fn is_real(self) -> bool {
        matches!(self, Transform::Dct)
    }

    /// The `n x n` forward matrix `U_n`.
    pub fn matrix(self, n: usize) -> DMatrix<Complex64> {
        match self {
            Transform::Dct => dct2_matrix(n).map(|v| Complex64::new(v, 0.0)),
            Transform::Dft => DMatrix::from_fn(n, n, |k, j| {
                Complex64::from_polar(1.0, -2.0 * PI * (k * j) as f64 / n as f64)
            }),
        }
    }

    /// The inverse matrix `U_n^{-1}`.
    pub fn inverse_matrix(self, n: usize) -> DMatrix<Complex64> {
        match self {
            Transform::Dct => dct2_matrix(n).transpose().map(|v| Complex64::new(v, 0.0)),
            Transform::Dft => self.matrix(n).adjoint() / Complex64::new(n as f64, 0.0),
        }
    }

    /// Per-mode scale `l_n`.
    pub fn mode_scale(self, n: usize) -> f64 {
        match self {
            Transform::Dct => 1.0,
            Transform::Dft => (n as f64).sqrt(),
        }
    }

    /// Composite scale factor `l` for a tensor of the given shape.
    pub fn scale_factor(self, shape: &[usize]) -> Result<f64> {
        require_rank3(shape)?;
        Ok(shape[2..].iter().map(|&n| self.mode_scale(n)).product())
    }

    pub fn apply<T: Scalar>(self, a: &Tensor<T>) -> Result<ComplexTensor> {
        require_rank3(a.shape())?;
        let mut out = a.to_complex();
        for d in 3..=a.rank() {
            let n = a.shape()[d - 1];
            if n > 1 {
                out = out.mode_product(&self.matrix(n), Mode::new(d)?)?;
            }
        }
        Ok(out)
    }

    /// Real arithmetic version of [`Transform::apply`]; only the DCT maps
    /// real tensors to real tensors.
    pub fn apply_real(self, a: &RealTensor) -> Result<RealTensor> {
        self.real_pass(a, false)
    }

    pub fn invert_real(self, a: &RealTensor) -> Result<RealTensor> {
        self.real_pass(a, true)
    }

    fn real_pass(self, a: &RealTensor, inverse: bool) -> Result<RealTensor> {
        if !self.is_real() {
            return Err(Error::InvalidArgument(format!("{self:?} has no real-domain form")));
        }
        require_rank3(a.shape())?;
        let mut out = a.clone();
        for d in 3..=a.rank() {
            let n = a.shape()[d - 1];
            if n > 1 {
                let c = dct2_matrix(n);
                let m = if inverse { c.transpose() } else { c };
                out = out.mode_product(&m, Mode::new(d)?)?;
            }
        }
        Ok(out)
    }

    pub fn invert(self, a: &ComplexTensor) -> Result<ComplexTensor> {
        require_rank3(a.shape())?;
        let mut out = a.clone();
        for d in 3..=a.rank() {
            let n = a.shape()[d - 1];
            if n > 1 {
                out = out.mode_product(&self.inverse_matrix(n), Mode::new(d)?)?;
            }
        }
        Ok(out)
    }
}

fn require_rank3(shape: &[usize]) -> Result<()> {
    if shape.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "transform needs a tensor of rank >= 3, got shape {shape:?}"
        )));
    }
    Ok(())
}

/// Orthonormal DCT-II matrix: `C[k, j] = c_k cos(pi (j + 1/2) k / n)`.
fn dct2_matrix(n: usize) -> DMatrix<f64> {
    let nf = n as f64;
    DMatrix::from_fn(n, n, |k, j| {
        let c = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        c * (PI * (j as f64 + 0.5) * k as f64 / nf).cos()
    })
}
