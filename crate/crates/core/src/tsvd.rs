//! Transform-domain tensor algebra: t-product, conjugate transpose, identity
//! tensor, t-SVD, and the singular value maps behind the tensor f-penalty.
//!
//! Every operation works face by face on `L(A)` and maps back with `L^{-1}`.
//! Real inputs produce real outputs; any imaginary residue left by the DFT
//! path is checked against [`RESIDUE_TOL`] and dropped.

use nalgebra::{DMatrix, DVector, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::penalty::Penalty;
use crate::tensor::{ComplexTensor, RealTensor, Scalar, Tensor};
use crate::transform::Transform;

/// Largest relative imaginary part accepted when a real result is expected.
pub const RESIDUE_TOL: f64 = 1e-8;

/// Factors of `A = U * S * V^*` under a transform.
#[derive(Clone, Debug)]
pub struct TsvdFactors<T: Scalar = f64> {
    /// `n1 x n1 x n3 x ...`, orthogonal under the t-product.
    pub u: Tensor<T>,
    /// `n1 x n2 x n3 x ...`, f-diagonal.
    pub s: Tensor<T>,
    /// `n2 x n2 x n3 x ...`, orthogonal under the t-product.
    pub v: Tensor<T>,
    pub transform: Transform,
    /// Nonincreasing singular values of each transform-domain face, in face order.
    pub singular_values: Vec<Vec<f64>>,
}

impl<T: Scalar> TsvdFactors<T> {
    pub fn reconstruct(&self) -> Result<Tensor<T>> {
        let us = tprod(&self.u, &self.s, self.transform)?;
        tprod(&us, &conj_transpose(&self.v, self.transform)?, self.transform)
    }

    /// `(||U^* U - I||_F, ||V^* V - I||_F)`.
    pub fn orthogonality_residuals(&self) -> Result<(f64, f64)> {
        let l = self.transform;
        let trailing = &self.u.shape()[2..];
        let check = |q: &Tensor<T>| -> Result<f64> {
            let gram = tprod(&conj_transpose(q, l)?, q, l)?;
            let eye = identity_tensor(q.shape()[1], trailing, l)?.map(|&x| T::from_real(x));
            Ok(gram.dist(&eye))
        };
        Ok((check(&self.u)?, check(&self.v)?))
    }
}

/// t-product `L^{-1}(L(A) face-wise-times L(B))`.
pub fn tprod<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, l: Transform) -> Result<Tensor<T>> {
    let prod = l.apply(a)?.facewise_product(&l.apply(b)?)?;
    T::from_complex_tensor(l.invert(&prod)?, RESIDUE_TOL)
}

/// Conjugate transpose: every transform face is replaced by its adjoint.
pub fn conj_transpose<T: Scalar>(a: &Tensor<T>, l: Transform) -> Result<Tensor<T>> {
    map_faces(a, l, &Adjoint)
}

/// Identity tensor: every transform face equals `I_n`.
pub fn identity_tensor(n: usize, trailing: &[usize], l: Transform) -> Result<RealTensor> {
    if n == 0 {
        return Err(Error::InvalidArgument("identity tensor needs n >= 1".into()));
    }
    let t: usize = trailing.iter().product();
    let faces = vec![DMatrix::<Complex64>::identity(n, n); t];
    let spectral = ComplexTensor::from_faces(&faces, trailing)?;
    l.invert(&spectral)?.into_real_checked(RESIDUE_TOL)
}

/// Full t-SVD by per-face SVD in the transform domain.
///
/// For a real input under the DFT, faces at mirrored frequencies are
/// conjugates of each other; their factors are chosen as conjugates too, so
/// `U`, `S`, `V` come back real.
pub fn tsvd<T: Scalar>(a: &Tensor<T>, l: Transform) -> Result<TsvdFactors<T>> {
    let shape = a.shape().to_vec();
    if shape.len() < 3 {
        return Err(Error::InvalidArgument(format!("t-SVD needs rank >= 3, got shape {shape:?}")));
    }
    let trailing = &shape[2..];
    let faces = l.apply(a)?.faces();
    let mirror = mirror_indices(trailing, l, T::IS_REAL);

    let mut us: Vec<DMatrix<Complex64>> = Vec::with_capacity(faces.len());
    let mut ss = Vec::with_capacity(faces.len());
    let mut vs: Vec<DMatrix<Complex64>> = Vec::with_capacity(faces.len());
    let mut sigmas: Vec<Vec<f64>> = Vec::with_capacity(faces.len());
    for (r, face) in faces.iter().enumerate() {
        let m = mirror[r];
        let (u, sigma, v) = if m < r {
            (us[m].map(|z: Complex64| z.conj()), sigmas[m].clone(), vs[m].map(|z: Complex64| z.conj()))
        } else if m == r && T::IS_REAL {
            // self-conjugate face of a real tensor: real up to rounding
            full_svd(&face.map(|z| z.re))
        } else {
            full_svd(face)
        };
        let mut s = DMatrix::<Complex64>::zeros(face.nrows(), face.ncols());
        for (j, &x) in sigma.iter().enumerate() {
            s[(j, j)] = Complex64::new(x, 0.0);
        }
        us.push(u);
        ss.push(s);
        vs.push(v);
        sigmas.push(sigma);
    }

    let back = |faces: &[DMatrix<Complex64>]| -> Result<Tensor<T>> {
        let spectral = ComplexTensor::from_faces(faces, trailing)?;
        T::from_complex_tensor(l.invert(&spectral)?, RESIDUE_TOL)
    };
    Ok(TsvdFactors { u: back(&us)?, s: back(&ss)?, v: back(&vs)?, transform: l, singular_values: sigmas })
}

/// Tensor f-penalty `(1/l^2) sum_faces sum_j f(sigma_j)`.
pub fn f_penalty_value<T: Scalar>(a: &Tensor<T>, penalty: &Penalty, l: Transform) -> Result<f64> {
    let scale = l.scale_factor(a.shape())?;
    let total: f64 = if T::IS_REAL && l.is_real() {
        let real = l.apply_real(&a.map(|x| x.real()))?;
        real.faces().into_iter().map(|f| face_penalty(f, penalty)).sum()
    } else {
        l.apply(a)?.faces().into_iter().map(|f| face_penalty(f, penalty)).sum()
    };
    Ok(total / (scale * scale))
}

fn face_penalty<S: Scalar>(face: DMatrix<S>, penalty: &Penalty) -> f64 {
    face.singular_values().iter().map(|&s| penalty.value_unchecked(s.max(0.0))).sum()
}

/// t-SVF shrinkage: every transform-face singular value `sigma` is replaced
/// by `prox_{eta f}(sigma)`. This is the exact minimizer of
/// `||G||_{f,L} + ||G - T||_F^2 / (2 eta)`.
pub fn tsvf_shrinkage<T: Scalar>(
    t: &Tensor<T>,
    penalty: &Penalty,
    eta: f64,
    l: Transform,
) -> Result<Tensor<T>> {
    penalty.check_step(eta)?;
    map_singular_values(t, l, |s| penalty.prox_unchecked(eta, s))
}

/// A subgradient of the tensor f-penalty at `a`: `L^{-1}(U diag(f'(sigma)) V^H)`
/// face by face, with `f'(0)` taken as 0.
pub fn f_penalty_subgradient<T: Scalar>(a: &Tensor<T>, penalty: &Penalty, l: Transform) -> Result<Tensor<T>> {
    map_singular_values(a, l, |s| penalty.derivative_unchecked(s))
}

/// Applies `g` to every transform-face singular value and recomposes.
pub fn map_singular_values<T: Scalar>(
    a: &Tensor<T>,
    l: Transform,
    g: impl Fn(f64) -> f64,
) -> Result<Tensor<T>> {
    map_faces(a, l, &SingularValueMap(g))
}

trait FaceMap {
    fn apply<S: Scalar>(&self, face: DMatrix<S>) -> DMatrix<S>;
}

struct Adjoint;

impl FaceMap for Adjoint {
    fn apply<S: Scalar>(&self, face: DMatrix<S>) -> DMatrix<S> {
        face.adjoint()
    }
}

struct SingularValueMap<G>(G);

impl<G: Fn(f64) -> f64> FaceMap for SingularValueMap<G> {
    fn apply<S: Scalar>(&self, face: DMatrix<S>) -> DMatrix<S> {
        let (rows, cols) = face.shape();
        let svd = SVD::new(face, true, true);
        let mapped: Vec<f64> = svd.singular_values.iter().map(|&s| (self.0)(s.max(0.0))).collect();
        if mapped.iter().all(|&x| x == 0.0) {
            return DMatrix::zeros(rows, cols);
        }
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested V^H");
        let mut scaled = u;
        for (j, &x) in mapped.iter().enumerate() {
            scaled.column_mut(j).scale_mut(x);
        }
        scaled * v_t
    }
}

/// Runs `f` on every transform face, choosing real arithmetic when both the
/// data and the transform allow it.
fn map_faces<T: Scalar, F: FaceMap>(a: &Tensor<T>, l: Transform, f: &F) -> Result<Tensor<T>> {
    if a.rank() < 3 {
        return Err(Error::InvalidArgument(format!("face maps need rank >= 3, got shape {:?}", a.shape())));
    }
    let trailing = &a.shape()[2..];
    if T::IS_REAL && l.is_real() {
        let spectral = l.apply_real(&a.map(|x| x.real()))?;
        let faces: Vec<_> = spectral.faces().into_iter().map(|m| f.apply(m)).collect();
        let out = l.invert_real(&RealTensor::from_faces(&faces, trailing)?)?;
        Ok(out.map(|&x| T::from_real(x)))
    } else {
        let faces: Vec<_> = l.apply(a)?.faces().into_iter().map(|m| f.apply(m)).collect();
        let out = l.invert(&ComplexTensor::from_faces(&faces, trailing)?)?;
        T::from_complex_tensor(out, RESIDUE_TOL)
    }
}

/// For each face index, the index of its conjugate partner. Only the DFT of
/// a real tensor pairs faces; otherwise every face is its own partner.
fn mirror_indices(trailing: &[usize], l: Transform, real_input: bool) -> Vec<usize> {
    let total: usize = trailing.iter().product();
    if l.is_real() || !real_input {
        return (0..total).collect();
    }
    (0..total)
        .map(|r| {
            let mut rest = r;
            let mut idx = vec![0; trailing.len()];
            for (k, &n) in trailing.iter().enumerate().rev() {
                idx[k] = rest % n;
                rest /= n;
            }
            idx.iter()
                .zip(trailing)
                .fold(0, |acc, (&i, &n)| acc * n + (n - i) % n)
        })
        .collect()
}

/// Full SVD `A = U diag(s) V^H` with square unitary `U`, `V` and singular
/// values in nonincreasing order.
fn full_svd<S: Scalar>(a: &DMatrix<S>) -> (DMatrix<Complex64>, Vec<f64>, DMatrix<Complex64>) {
    let (rows, cols) = a.shape();
    let svd = SVD::new(a.clone(), true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let u_thin = svd.u.expect("requested U");
    let v_thin = svd.v_t.expect("requested V^H").adjoint();
    let pick = |m: &DMatrix<S>| DMatrix::from_columns(&order.iter().map(|&j| m.column(j)).collect::<Vec<_>>());
    let sigma = order.iter().map(|&j| svd.singular_values[j].max(0.0)).collect();
    let u = complete_basis(pick(&u_thin), rows).map(|z| z.to_c64());
    let v = complete_basis(pick(&v_thin), cols).map(|z| z.to_c64());
    (u, sigma, v)
}

/// Extends orthonormal columns to a basis of the whole space by
/// Gram-Schmidt against the standard basis vectors.
fn complete_basis<S: Scalar>(q: DMatrix<S>, n: usize) -> DMatrix<S> {
    let mut cols: Vec<DVector<S>> = q.column_iter().map(|c| c.into_owned()).collect();
    for e in 0..n {
        if cols.len() == n {
            break;
        }
        let mut v = DVector::<S>::zeros(n);
        v[e] = S::one();
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dotc(&v);
                v.axpy(-proj, c, S::one());
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            cols.push(v.unscale(norm));
        }
    }
    DMatrix::from_columns(&cols)
}
