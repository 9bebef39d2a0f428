//! Dense order-N tensors and the primitive multilinear algebra everything
//! else is built from.
//!
//! Storage is row-major (the last index varies fastest). Modes are numbered
//! from 1, as in the math; [`Mode::axis`] gives the 0-based axis.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::{ComplexField, DMatrix};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Field scalars the algebra works over: `f64` and `Complex64`.
pub trait Scalar: ComplexField<RealField = f64> + Copy {
    const IS_REAL: bool;

    fn to_c64(self) -> Complex64 {
        Complex64::new(self.real(), self.imaginary())
    }

    /// Brings a complex tensor back to this scalar type. For `f64` the
    /// imaginary part must be residue (relative size at most `tol`).
    fn from_complex_tensor(t: ComplexTensor, tol: f64) -> Result<Tensor<Self>>;
}

impl Scalar for f64 {
    const IS_REAL: bool = true;

    fn from_complex_tensor(t: ComplexTensor, tol: f64) -> Result<Tensor<Self>> {
        t.into_real_checked(tol)
    }
}

impl Scalar for Complex64 {
    const IS_REAL: bool = false;

    fn from_complex_tensor(t: ComplexTensor, _tol: f64) -> Result<Tensor<Self>> {
        Ok(t)
    }
}

/// A 1-based mode index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mode(usize);

impl Mode {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::ModeOutOfRange { mode: 0, rank: 0 });
        }
        Ok(Mode(d))
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn axis(self) -> usize {
        self.0 - 1
    }

    /// Returns the 0-based axis if the mode exists in a tensor of `rank`.
    pub fn check(self, rank: usize) -> Result<usize> {
        if self.0 > rank {
            Err(Error::ModeOutOfRange { mode: self.0, rank })
        } else {
            Ok(self.0 - 1)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub type RealTensor = Tensor<f64>;
pub type ComplexTensor = Tensor<Complex64>;

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidArgument("tensor shape must have at least one mode".into()));
    }
    if let Some(d) = shape.iter().position(|&n| n == 0) {
        return Err(Error::InvalidArgument(format!("extent of mode {} is zero", d + 1)));
    }
    Ok(shape.iter().product())
}

/// Advances a row-major multi-index; returns false after the last index.
fn advance(idx: &mut [usize], shape: &[usize]) -> bool {
    for d in (0..shape.len()).rev() {
        idx[d] += 1;
        if idx[d] < shape[d] {
            return true;
        }
        idx[d] = 0;
    }
    false
}

impl<T: Clone> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match shape {:?} ({} elements)",
                data.len(),
                shape,
                len
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn filled(shape: &[usize], value: T) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Tensor { shape: shape.to_vec(), data: vec![value; len] })
    }

    /// Builds a tensor by evaluating `f` at every multi-index in storage order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Result<Self> {
        let len = check_shape(shape)?;
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0; shape.len()];
        loop {
            data.push(f(&idx));
            if !advance(&mut idx, shape) {
                break;
            }
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Linear offset of a multi-index. Panics when the index is out of bounds.
    pub fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len(), "index rank mismatch");
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| {
            assert!(i < n, "index {i} out of bounds for extent {n}");
            acc * n + i
        })
    }

    pub fn get(&self, idx: &[usize]) -> &T {
        &self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: T) {
        let o = self.offset(idx);
        self.data[o] = value;
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(f).collect() }
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn same_shape<U>(&self, other: &Tensor<U>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    /// Product of the extents of modes 3..N (1 for rank < 3).
    pub fn trailing_volume(&self) -> usize {
        self.shape.iter().skip(2).product()
    }

    fn split_at_axis(&self, axis: usize) -> (usize, usize, usize) {
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        (outer, self.shape[axis], inner)
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Tensor::filled(shape, T::zero())
    }

    pub fn scaled(&self, a: f64) -> Self {
        let a = T::from_real(a);
        self.map(|&x| x * a)
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Tensor<T>) {
        assert_eq!(self.shape, x.shape, "axpy shape mismatch");
        let a = T::from_real(a);
        for (s, &v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
    }

    /// `<self, other> = sum conj(self) * other`.
    pub fn inner(&self, other: &Tensor<T>) -> Result<T> {
        self.same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a.conjugate() * b))
    }

    pub fn frob_sq(&self) -> f64 {
        self.data.iter().map(|x| x.modulus_squared()).sum()
    }

    pub fn frob(&self) -> f64 {
        self.frob_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.modulus()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Frobenius distance `||self - other||_F`. Panics on shape mismatch.
    pub fn dist(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape, "dist shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).modulus_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_complex(&self) -> ComplexTensor {
        self.map(|&x| x.to_c64())
    }

    /// Mode-`d` unfolding: an `n_d x prod(n_i, i != d)` matrix whose column
    /// index enumerates the remaining modes with the smallest one varying
    /// fastest.
    pub fn unfold(&self, mode: Mode) -> Result<DMatrix<T>> {
        let axis = mode.check(self.rank())?;
        let rows = self.shape[axis];
        let cols = self.len() / rows;
        let strides = unfold_column_strides(&self.shape, axis);
        let mut m = DMatrix::zeros(rows, cols);
        let mut idx = vec![0; self.rank()];
        for &v in &self.data {
            let col: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            m[(idx[axis], col)] = v;
            advance(&mut idx, &self.shape);
        }
        Ok(m)
    }

    /// Inverse of [`Tensor::unfold`].
    pub fn fold(m: &DMatrix<T>, mode: Mode, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        let axis = mode.check(shape.len())?;
        if m.nrows() != shape[axis] || m.nrows() * m.ncols() != len {
            return Err(Error::ShapeMismatch(format!(
                "cannot fold a {}x{} matrix along mode {} into {:?}",
                m.nrows(),
                m.ncols(),
                mode.get(),
                shape
            )));
        }
        let strides = unfold_column_strides(shape, axis);
        Tensor::from_fn(shape, |idx| {
            let col: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            m[(idx[axis], col)]
        })
    }

    /// `self x_d F`: multiplies every mode-`d` fiber by `F` (`m x n_d`).
    pub fn mode_product(&self, f: &DMatrix<T>, mode: Mode) -> Result<Self> {
        let axis = mode.check(self.rank())?;
        let (outer, n, inner) = self.split_at_axis(axis);
        if f.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "mode-{} product needs {} columns, matrix has {}",
                mode.get(),
                n,
                f.ncols()
            )));
        }
        let m = f.nrows();
        let mut shape = self.shape.clone();
        shape[axis] = m;
        let mut out = vec![T::zero(); outer * m * inner];
        for o in 0..outer {
            for i in 0..m {
                let dst = &mut out[(o * m + i) * inner..(o * m + i + 1) * inner];
                for j in 0..n {
                    let w = f[(i, j)];
                    if w == T::zero() {
                        continue;
                    }
                    let src = &self.data[(o * n + j) * inner..(o * n + j + 1) * inner];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
        Tensor::from_vec(shape, out)
    }

    /// Face slice `A(:, :, r)` where `r` is the row-major index over modes 3..N.
    pub fn face(&self, r: usize) -> DMatrix<T> {
        let (n1, n2) = (self.shape[0], self.shape.get(1).copied().unwrap_or(1));
        let t = self.trailing_volume();
        DMatrix::from_fn(n1, n2, |i, j| self.data[(i * n2 + j) * t + r])
    }

    pub fn faces(&self) -> Vec<DMatrix<T>> {
        (0..self.trailing_volume()).map(|r| self.face(r)).collect()
    }

    /// Reassembles a tensor from its face slices; `trailing` gives the extents
    /// of modes 3..N.
    pub fn from_faces(faces: &[DMatrix<T>], trailing: &[usize]) -> Result<Self> {
        let t: usize = trailing.iter().product();
        if faces.len() != t || t == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} faces for trailing extents {:?}",
                faces.len(),
                trailing
            )));
        }
        let (n1, n2) = faces[0].shape();
        if faces.iter().any(|f| f.shape() != (n1, n2)) {
            return Err(Error::ShapeMismatch("face slices differ in size".into()));
        }
        let mut shape = vec![n1, n2];
        shape.extend_from_slice(trailing);
        check_shape(&shape)?;
        let mut data = vec![T::zero(); n1 * n2 * t];
        for (r, f) in faces.iter().enumerate() {
            for i in 0..n1 {
                for j in 0..n2 {
                    data[(i * n2 + j) * t + r] = f[(i, j)];
                }
            }
        }
        Tensor::from_vec(shape, data)
    }

    /// Face-wise product: every face of the result is the matrix product of
    /// the corresponding faces of `self` (`n1 x m`) and `other` (`m x n2`).
    pub fn facewise_product(&self, other: &Tensor<T>) -> Result<Self> {
        if self.rank() < 3 || other.rank() < 3 {
            return Err(Error::InvalidArgument("face-wise product needs rank >= 3".into()));
        }
        if self.shape[2..] != other.shape[2..] {
            return Err(Error::ShapeMismatch(format!(
                "trailing extents differ: {:?} vs {:?}",
                &self.shape[2..],
                &other.shape[2..]
            )));
        }
        if self.shape[1] != other.shape[0] {
            return Err(Error::ShapeMismatch(format!(
                "inner dimensions differ: {} vs {}",
                self.shape[1], other.shape[0]
            )));
        }
        let faces: Vec<_> = self
            .faces()
            .iter()
            .zip(other.faces())
            .map(|(a, b)| a * b)
            .collect();
        Tensor::from_faces(&faces, &self.shape[2..])
    }

    /// Circular first difference along `mode`: `out[j] = a[j+1] - a[j]`
    /// with periodic wrap-around.
    pub fn grad(&self, mode: Mode) -> Result<Self> {
        self.circular_difference(mode, 1)
    }

    /// Transpose of [`Tensor::grad`]: `out[j] = a[j-1] - a[j]`.
    pub fn grad_adjoint(&self, mode: Mode) -> Result<Self> {
        let axis = mode.check(self.rank())?;
        let n = self.shape[axis];
        self.circular_difference(mode, n - 1)
    }

    fn circular_difference(&self, mode: Mode, shift: usize) -> Result<Self> {
        let axis = mode.check(self.rank())?;
        let (outer, n, inner) = self.split_at_axis(axis);
        let mut out = vec![T::zero(); self.len()];
        for o in 0..outer {
            for j in 0..n {
                let jn = (j + shift) % n;
                let dst = (o * n + j) * inner;
                let src = (o * n + jn) * inner;
                for k in 0..inner {
                    out[dst + k] = self.data[src + k] - self.data[dst + k];
                }
            }
        }
        Tensor::from_vec(self.shape.clone(), out)
    }

    /// Unnormalized multi-dimensional DFT along every mode.
    pub fn fft_all(&self) -> ComplexTensor {
        let mut c = self.to_complex();
        for axis in 0..c.rank() {
            c.fft_axis(axis, false);
        }
        c
    }
}

impl ComplexTensor {
    /// Inverse of [`Tensor::fft_all`] (carries the `1/prod(n_i)` factor).
    pub fn ifft_all(&self) -> ComplexTensor {
        let mut c = self.clone();
        for axis in 0..c.rank() {
            c.fft_axis(axis, true);
        }
        c
    }

    pub fn real_part(&self) -> RealTensor {
        self.map(|z| z.re)
    }

    /// Drops the imaginary part after checking that it is numerical residue
    /// (at most `tol` relative to the largest entry).
    pub fn into_real_checked(self, tol: f64) -> Result<RealTensor> {
        let scale = self.max_abs().max(1.0);
        let residue = self.data.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
        if residue > tol * scale {
            return Err(Error::Numerical(format!(
                "imaginary residue {residue:e} exceeds {tol:e} relative to {scale:e}"
            )));
        }
        Ok(self.real_part())
    }

    fn fft_axis(&mut self, axis: usize, inverse: bool) {
        let (outer, n, inner) = self.split_at_axis(axis);
        if n == 1 {
            return;
        }
        let mut planner = FftPlanner::new();
        let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
        let scale = if inverse { 1.0 / n as f64 } else { 1.0 };
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for o in 0..outer {
            for k in 0..inner {
                let base = o * n * inner + k;
                for (j, v) in line.iter_mut().enumerate() {
                    *v = self.data[base + j * inner];
                }
                fft.process(&mut line);
                for (j, v) in line.iter().enumerate() {
                    self.data[base + j * inner] = v * scale;
                }
            }
        }
    }
}

/// Column strides of the mode-`axis` unfolding: remaining modes in increasing
/// order, smallest fastest.
fn unfold_column_strides(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut s = 1;
    for (d, &n) in shape.iter().enumerate() {
        if d != axis {
            strides[d] = s;
            s *= n;
        }
    }
    strides
}

impl<T: Scalar> Add for &Tensor<T> {
    type Output = Tensor<T>;
    fn add(self, rhs: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.shape, rhs.shape, "add shape mismatch");
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }
}

impl<T: Scalar> Sub for &Tensor<T> {
    type Output = Tensor<T>;
    fn sub(self, rhs: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.shape, rhs.shape, "sub shape mismatch");
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }
}

impl<T: Scalar> Neg for &Tensor<T> {
    type Output = Tensor<T>;
    fn neg(self) -> Tensor<T> {
        self.map(|&x| -x)
    }
}

impl<T: Scalar> Mul<f64> for &Tensor<T> {
    type Output = Tensor<T>;
    fn mul(self, rhs: f64) -> Tensor<T> {
        self.scaled(rhs)
    }
}

impl<T: Scalar> AddAssign<&Tensor<T>> for Tensor<T> {
    fn add_assign(&mut self, rhs: &Tensor<T>) {
        self.axpy(1.0, rhs);
    }
}

impl<T: Scalar> SubAssign<&Tensor<T>> for Tensor<T> {
    fn sub_assign(&mut self, rhs: &Tensor<T>) {
        self.axpy(-1.0, rhs);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    fn m(d: usize) -> Mode {
        Mode::new(d).unwrap()
    }

    #[test]
    fn unfold_index_map() {
        let a = Tensor::from_fn(&[2, 3, 4], |i| (100 * i[0] + 10 * i[1] + i[2]) as f64).unwrap();
        let u = a.unfold(m(1)).unwrap();
        assert_eq!(u.shape(), (2, 12));
        for i1 in 0..2 {
            for i2 in 0..3 {
                for i3 in 0..4 {
                    assert_eq!(u[(i1, i2 + 3 * i3)], *a.get(&[i1, i2, i3]));
                }
            }
        }
    }

    #[test]
    fn unfold_constant_and_fold_zero() {
        let a = Tensor::filled(&[2, 3, 4], 2.5).unwrap();
        assert!(a.unfold(m(3)).unwrap().iter().all(|&v| v == 2.5));
        let z = Tensor::<f64>::fold(&DMatrix::zeros(3, 8), m(2), &[2, 3, 4]).unwrap();
        assert_eq!(z, Tensor::zeros(&[2, 3, 4]).unwrap());
    }

    #[test]
    fn fold_rank_two_row() {
        let mat = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0]);
        let t = Tensor::fold(&mat, m(1), &[1, 4]).unwrap();
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn fold_unfold_round_trip_all_modes() {
        let a = random_tensor(&[3, 4, 5], 1);
        for d in 1..=3 {
            let back = Tensor::fold(&a.unfold(m(d)).unwrap(), m(d), a.shape()).unwrap();
            assert_eq!(back, a);
        }
    }

    #[test]
    fn fold_rejects_bad_dimensions() {
        let mat = DMatrix::<f64>::zeros(2, 5);
        assert!(matches!(
            Tensor::fold(&mat, m(1), &[2, 3, 4]),
            Err(Error::ShapeMismatch(_))
        ));
        let a = random_tensor(&[2, 2], 0);
        assert!(matches!(a.unfold(m(3)), Err(Error::ModeOutOfRange { mode: 3, rank: 2 })));
    }

    #[test]
    fn mode_product_examples() {
        let ones = Tensor::filled(&[2, 2, 2], 1.0).unwrap();
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let r = ones.mode_product(&f, m(1)).unwrap();
        for i2 in 0..2 {
            for i3 in 0..2 {
                assert_eq!(*r.get(&[0, i2, i3]), 2.0);
                assert_eq!(*r.get(&[1, i2, i3]), 0.0);
            }
        }
        let a = random_tensor(&[3, 3, 3], 2);
        assert_eq!(a.mode_product(&DMatrix::identity(3, 3), m(2)).unwrap(), a);
    }

    #[test]
    fn mode_product_composes() {
        let a = random_tensor(&[3, 3, 3], 3);
        let f = DMatrix::from_fn(3, 3, |i, j| (i as f64) - 0.5 * j as f64);
        let g = DMatrix::from_fn(2, 3, |i, j| 1.0 + (i * j) as f64);
        for d in 1..=3 {
            let two_step = a.mode_product(&f, m(d)).unwrap().mode_product(&g, m(d)).unwrap();
            let one_step = a.mode_product(&(&g * &f), m(d)).unwrap();
            assert!(two_step.dist(&one_step) < 1e-12);
        }
        assert!(a.mode_product(&DMatrix::zeros(2, 2), m(1)).is_err());
    }

    #[test]
    fn mode_product_matches_unfolding_definition() {
        let a = random_tensor(&[2, 3, 4], 4);
        let f = DMatrix::from_fn(5, 3, |i, j| ((i + 2 * j) % 3) as f64 - 1.0);
        let direct = a.mode_product(&f, m(2)).unwrap();
        let via = Tensor::fold(&(&f * a.unfold(m(2)).unwrap()), m(2), &[2, 5, 4]).unwrap();
        assert!(direct.dist(&via) < 1e-12);
    }

    #[test]
    fn facewise_product_examples() {
        let a = Tensor::from_vec(vec![1, 1, 2], vec![2.0, 3.0]).unwrap();
        let b = Tensor::from_vec(vec![1, 1, 2], vec![5.0, 7.0]).unwrap();
        assert_eq!(a.facewise_product(&b).unwrap().data(), &[10.0, 21.0]);

        let a = random_tensor(&[2, 3, 2], 5);
        let eye = Tensor::from_faces(&[DMatrix::identity(3, 3), DMatrix::identity(3, 3)], &[2]).unwrap();
        assert!(a.facewise_product(&eye).unwrap().dist(&a) < 1e-15);

        let b = random_tensor(&[3, 2, 2], 6);
        let c = a.facewise_product(&b).unwrap();
        for r in 0..2 {
            // independent per-face triple loop
            for i in 0..2 {
                for j in 0..2 {
                    let mut s = 0.0;
                    for k in 0..3 {
                        s += a.get(&[i, k, r]) * b.get(&[k, j, r]);
                    }
                    assert!((c.get(&[i, j, r]) - s).abs() < 1e-14);
                }
            }
        }
        assert!(a.facewise_product(&a).is_err());
    }

    #[test]
    fn inner_and_frob() {
        let a = Tensor::filled(&[2, 2, 2], 1.0).unwrap();
        assert_eq!(a.inner(&Tensor::zeros(&[2, 2, 2]).unwrap()).unwrap(), 0.0);
        assert_eq!(a.inner(&a).unwrap(), 8.0);
        assert!((a.frob() - 8f64.sqrt()).abs() < 1e-15);
        let i = Tensor::from_vec(vec![1], vec![Complex64::new(0.0, 1.0)]).unwrap();
        assert_eq!(i.inner(&i).unwrap(), Complex64::new(1.0, 0.0));
        assert!(a.inner(&Tensor::zeros(&[2, 2]).unwrap()).is_err());
    }

    #[test]
    fn grad_examples() {
        let c = Tensor::filled(&[3, 4, 2], 7.0).unwrap();
        for d in 1..=3 {
            assert_eq!(c.grad(m(d)).unwrap().max_abs(), 0.0);
        }
        let v = Tensor::from_vec(vec![1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(v.grad(m(2)).unwrap().data(), &[1.0, 1.0, 1.0, -3.0]);
        // explicit 4x4 circulant of (-1, 1, 0, 0)
        let d4 = DMatrix::from_fn(4, 4, |i, j| {
            if j == i {
                -1.0
            } else if j == (i + 1) % 4 {
                1.0
            } else {
                0.0
            }
        });
        let r = random_tensor(&[3, 4, 2], 9);
        assert!(r.grad(m(2)).unwrap().dist(&r.mode_product(&d4, m(2)).unwrap()) < 1e-14);
        assert!(r.grad_adjoint(m(2)).unwrap().dist(&r.mode_product(&d4.transpose(), m(2)).unwrap()) < 1e-14);
        // extent 1 collapses to the zero operator
        let s = random_tensor(&[3, 1, 2], 3);
        assert_eq!(s.grad(m(2)).unwrap().max_abs(), 0.0);
        assert!(s.grad(m(4)).is_err());
    }

    #[test]
    fn grad_adjoint_identity() {
        for seed in 0..5 {
            let a = random_tensor(&[4, 3, 2], seed);
            let b = random_tensor(&[4, 3, 2], seed + 100);
            for d in 1..=3 {
                let lhs = a.grad(m(d)).unwrap().inner(&b).unwrap();
                let rhs = a.inner(&b.grad_adjoint(m(d)).unwrap()).unwrap();
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fft_examples() {
        let mut delta = Tensor::zeros(&[3, 4, 2]).unwrap();
        delta.set(&[0, 0, 0], 1.0);
        let f = delta.fft_all();
        assert!(f.data().iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));

        let c = Tensor::filled(&[3, 4, 2], 0.5).unwrap().fft_all();
        assert!((c.data()[0] - Complex64::new(12.0, 0.0)).norm() < 1e-12);
        assert!(c.data()[1..].iter().all(|z| z.norm() < 1e-12));

        let r = random_tensor(&[4, 4, 3], 11);
        let back = r.fft_all().ifft_all();
        assert!(back.data().iter().zip(r.data()).all(|(z, x)| (z - Complex64::new(*x, 0.0)).norm() <= 1e-12));
        // Parseval for the unnormalized forward transform
        assert!((r.frob_sq() - r.fft_all().frob_sq() / 48.0).abs() < 1e-10);
    }

    #[test]
    fn fft_diagonalizes_grad() {
        let r = random_tensor(&[4, 5, 3], 12);
        let g = r.grad(m(2)).unwrap().fft_all();
        let f = r.fft_all();
        let n = 5.0;
        for (idx, (gz, fz)) in g.data().iter().zip(f.data()).enumerate() {
            let k2 = (idx / 3) % 5;
            let eig = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k2 as f64 / n) - 1.0;
            assert!((gz - eig * fz).norm() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::<f64>::zeros(&[]).is_err());
        assert!(Tensor::<f64>::zeros(&[2, 0]).is_err());
        assert!(Tensor::from_vec(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Mode::new(0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn unfold_fold_inverse(n1 in 1usize..4, n2 in 1usize..4, n3 in 1usize..4, d in 1usize..4, seed in 0u64..1000) {
                let a = random_tensor(&[n1, n2, n3], seed);
                let u = a.unfold(m(d)).unwrap();
                prop_assert_eq!(&Tensor::fold(&u, m(d), a.shape()).unwrap(), &a);
                let back = Tensor::fold(&u, m(d), a.shape()).unwrap().unfold(m(d)).unwrap();
                prop_assert_eq!(back, u);
            }
        }
    }
}
