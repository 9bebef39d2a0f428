//! The GTCTV prior, an average of tensor f-penalties of directional
//! gradients, and its proximal map computed by an inner ADMM.
//!
//! The prox solves
//! `min_M ||M||_GTCTV + 2 mu ||M||_F^2 + ||M - X||_F^2 / (2 tau)`
//! by splitting `G_d = grad_d M` for every direction `d`. The M-step is a
//! linear system diagonalized by the multidimensional FFT, the G-step is a
//! t-SVF shrinkage, and the duals `B_d` take an ascent step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::penalty::Penalty;
use crate::tensor::{Mode, RealTensor};
use crate::transform::Transform;
use crate::tsvd::{f_penalty_subgradient, f_penalty_value, tsvf_shrinkage, RESIDUE_TOL};

/// Upper bound for the growing ADMM penalty parameter.
pub const RHO_MAX: f64 = 1e10;

#[derive(Clone, Debug, PartialEq)]
pub struct Gtctv {
    directions: Vec<Mode>,
    penalty: Penalty,
    transform: Transform,
}

impl Gtctv {
    /// `directions` are 1-based modes; they must be distinct and nonempty.
    pub fn new(directions: &[usize], penalty: Penalty, transform: Transform) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::Config("GTCTV needs at least one gradient direction".into()));
        }
        let mut modes = Vec::with_capacity(directions.len());
        for &d in directions {
            let m = Mode::new(d)?;
            if modes.contains(&m) {
                return Err(Error::Config(format!("gradient direction {d} listed twice")));
            }
            modes.push(m);
        }
        Ok(Gtctv { directions: modes, penalty, transform })
    }

    pub fn directions(&self) -> &[Mode] {
        &self.directions
    }

    pub fn penalty(&self) -> &Penalty {
        &self.penalty
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    /// Number of directions, `gamma`.
    pub fn gamma(&self) -> f64 {
        self.directions.len() as f64
    }

    /// Weak-convexity constant `mu` of the base penalty.
    pub fn mu(&self) -> f64 {
        self.penalty.weak_convexity()
    }

    /// Checks that every direction exists in a tensor of this shape.
    pub fn validate_shape(&self, shape: &[usize]) -> Result<()> {
        if shape.len() < 3 {
            return Err(Error::InvalidArgument(format!("GTCTV needs rank >= 3, got shape {shape:?}")));
        }
        for d in &self.directions {
            d.check(shape.len())?;
        }
        Ok(())
    }

    /// `(1/gamma) sum_d ||grad_d X||_{f,L}`.
    pub fn value(&self, x: &RealTensor) -> Result<f64> {
        self.validate_shape(x.shape())?;
        let mut total = 0.0;
        for &d in &self.directions {
            total += f_penalty_value(&x.grad(d)?, &self.penalty, self.transform)?;
        }
        Ok(total / self.gamma())
    }

    /// A member of the (Clarke) subdifferential, chaining the per-face
    /// singular value derivative, the transform and the gradient adjoint.
    pub fn subgradient(&self, x: &RealTensor) -> Result<RealTensor> {
        self.validate_shape(x.shape())?;
        let mut out = RealTensor::zeros(x.shape())?;
        for &d in &self.directions {
            let inner = f_penalty_subgradient(&x.grad(d)?, &self.penalty, self.transform)?;
            out += &inner.grad_adjoint(d)?;
        }
        Ok(out.scaled(1.0 / self.gamma()))
    }

    /// `||M||_GTCTV + 2 mu ||M||^2 + ||M - X||^2 / (2 tau)`.
    pub fn prox_objective(&self, m: &RealTensor, x: &RealTensor, tau: f64) -> Result<f64> {
        Ok(self.value(m)? + 2.0 * self.mu() * m.frob_sq() + m.dist(x).powi(2) / (2.0 * tau))
    }

    /// Augmented Lagrangian of the split problem at the given state (up to
    /// the constant `-||B_d||^2 / (2 rho)`).
    pub fn augmented_lagrangian(&self, x: &RealTensor, state: &InnerState, tau: f64) -> Result<f64> {
        let rho = state.rho;
        let mut total = 2.0 * self.mu() * state.m.frob_sq() + state.m.dist(x).powi(2) / (2.0 * tau);
        for (k, &d) in self.directions.iter().enumerate() {
            let g = &state.g[k];
            let mut r = state.m.grad(d)?;
            r -= g;
            r.axpy(1.0 / rho, &state.b[k]);
            total += f_penalty_value(g, &self.penalty, self.transform)? / self.gamma() + 0.5 * rho * r.frob_sq();
        }
        Ok(total)
    }

    /// Solves `(tau rho sum_d grad_d^T grad_d + (4 tau mu + 1) I) M
    ///         = tau sum_d grad_d^T (rho G_d - B_d) + X`.
    pub fn m_update(&self, x: &RealTensor, state: &InnerState, tau: f64, mu: f64) -> Result<RealTensor> {
        let spectrum = LaplacianSpectrum::new(x.shape(), &self.directions)?;
        self.m_update_with(x, state, tau, mu, &spectrum)
    }

    fn m_update_with(
        &self,
        x: &RealTensor,
        state: &InnerState,
        tau: f64,
        mu: f64,
        spectrum: &LaplacianSpectrum,
    ) -> Result<RealTensor> {
        let rho = state.rho;
        let mut rhs = x.clone();
        for (k, &d) in self.directions.iter().enumerate() {
            let mut v = state.g[k].scaled(rho);
            v -= &state.b[k];
            rhs.axpy(tau, &v.grad_adjoint(d)?);
        }
        let mut freq = rhs.fft_all();
        let shift = 4.0 * tau * mu + 1.0;
        for (z, &s) in freq.data_mut().iter_mut().zip(spectrum.values.data()) {
            *z /= shift + tau * rho * s;
        }
        freq.ifft_all().into_real_checked(RESIDUE_TOL)
    }

    /// `G_d = t-SVF_{f / (gamma rho)}(grad_d M + B_d / rho)` for the `k`-th direction.
    pub fn g_update(&self, m: &RealTensor, b: &RealTensor, rho: f64, k: usize) -> Result<RealTensor> {
        let d = *self.directions.get(k).ok_or_else(|| {
            Error::InvalidArgument(format!("direction index {k} out of range"))
        })?;
        let mut target = m.grad(d)?;
        target.axpy(1.0 / rho, b);
        tsvf_shrinkage(&target, &self.penalty, 1.0 / (self.gamma() * rho), self.transform)
    }

    /// Rejects penalty parameters for which the G-step prox is not single-valued.
    pub fn check_rho(&self, rho: f64) -> Result<()> {
        if !(rho > 0.0) {
            return Err(Error::Config(format!("ADMM penalty parameter must be positive, got {rho}")));
        }
        let product = self.mu() / (self.gamma() * rho);
        if product >= 1.0 {
            return Err(Error::Config(format!(
                "ill-posed shrinkage step: mu / (gamma * rho) = {product:.4} must be < 1; \
                 use rho0 > {:.3e}",
                self.mu() / self.gamma()
            )));
        }
        Ok(())
    }

    /// Approximate `Prox_{tau (GTCTV + 2 mu ||.||^2)}(X)` by at most
    /// `params.max_iter` ADMM sweeps, warm-started from `state`, which keeps
    /// `G_d`, `B_d` and `rho` for the next call.
    ///
    /// The stopping test compares consecutive computed `M` iterates, so it
    /// first runs after the second sweep. (Starting from `G_d = grad_d X`,
    /// `B_d = 0`, the first sweep returns `M = X` exactly.)
    pub fn prox(&self, x: &RealTensor, tau: f64, params: &InnerParams, state: &mut InnerState) -> Result<RealTensor> {
        params.validate()?;
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("prox step tau must be positive, got {tau}")));
        }
        self.validate_shape(x.shape())?;
        state.check_matches(x.shape(), self.directions.len())?;
        if !params.persist_rho {
            state.rho = params.rho0;
        }
        self.check_rho(state.rho)?;

        let mu = self.mu();
        let spectrum = LaplacianSpectrum::new(x.shape(), &self.directions)?;
        state.iterations = 0;
        for sweep in 0..params.max_iter {
            let m_new = self.m_update_with(x, state, tau, mu, &spectrum)?;
            for (k, &d) in self.directions.iter().enumerate() {
                let g = self.g_update(&m_new, &state.b[k], state.rho, k)?;
                let mut step = m_new.grad(d)?;
                step -= &g;
                state.b[k].axpy(state.rho, &step);
                state.g[k] = g;
            }
            state.rho = (params.nu * state.rho).min(RHO_MAX);
            state.iterations += 1;
            let change = relative_change(&m_new, &state.m);
            state.m = m_new;
            if sweep > 0 && change < params.eps {
                break;
            }
        }
        Ok(state.m.clone())
    }
}

/// `||new - old||^2 / ||old||^2`, or the absolute squared change when `old = 0`.
pub fn relative_change(new: &RealTensor, old: &RealTensor) -> f64 {
    let diff = new.dist(old).powi(2);
    let base = old.frob_sq();
    if base > 0.0 {
        diff / base
    } else {
        diff
    }
}

/// Inner ADMM controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerParams {
    pub rho0: f64,
    /// Growth factor for `rho` after every sweep.
    pub nu: f64,
    /// Stop when the squared relative change of `M` drops below this.
    pub eps: f64,
    pub max_iter: usize,
    /// Keep `rho` from the previous call instead of restarting at `rho0`.
    pub persist_rho: bool,
}

impl Default for InnerParams {
    fn default() -> Self {
        InnerParams { rho0: 1e-4, nu: 1.02, eps: 1e-4, max_iter: 5, persist_rho: false }
    }
}

impl InnerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho0 > 0.0 && self.rho0.is_finite()) {
            return Err(Error::Config(format!("rho0 must be positive, got {}", self.rho0)));
        }
        if !(self.nu >= 1.0 && self.nu.is_finite()) {
            return Err(Error::Config(format!("nu must be >= 1, got {}", self.nu)));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::Config(format!("inner eps must be >= 0, got {}", self.eps)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("inner iteration cap must be >= 1".into()));
        }
        Ok(())
    }
}

/// ADMM iterates carried between prox calls.
#[derive(Clone, Debug)]
pub struct InnerState {
    pub m: RealTensor,
    /// One split variable per direction, in the order of [`Gtctv::directions`].
    pub g: Vec<RealTensor>,
    pub b: Vec<RealTensor>,
    pub rho: f64,
    /// Sweeps taken by the most recent prox call.
    pub iterations: usize,
}

impl InnerState {
    /// `M = Z0`, `G_d = grad_d Z0`, `B_d = 0`.
    pub fn new(prior: &Gtctv, z0: &RealTensor, rho0: f64) -> Result<Self> {
        prior.validate_shape(z0.shape())?;
        let g = prior.directions.iter().map(|&d| z0.grad(d)).collect::<Result<Vec<_>>>()?;
        let b = vec![RealTensor::zeros(z0.shape())?; g.len()];
        Ok(InnerState { m: z0.clone(), g, b, rho: rho0, iterations: 0 })
    }

    fn check_matches(&self, shape: &[usize], directions: usize) -> Result<()> {
        let ok = self.m.shape() == shape
            && self.g.len() == directions
            && self.b.len() == directions
            && self.g.iter().chain(&self.b).all(|t| t.shape() == shape);
        if !ok {
            return Err(Error::ShapeMismatch(format!("ADMM state does not match shape {shape:?}")));
        }
        Ok(())
    }
}

/// `sum_d |FFT of the circulant difference along d|^2`, broadcast to the
/// full shape. Along a mode of extent `n` the symbol at frequency `k` is
/// `2 - 2 cos(2 pi k / n)`.
struct LaplacianSpectrum {
    values: RealTensor,
}

impl LaplacianSpectrum {
    fn new(shape: &[usize], directions: &[Mode]) -> Result<Self> {
        let symbols: Vec<(usize, Vec<f64>)> = directions
            .iter()
            .map(|d| {
                let axis = d.axis();
                let n = shape[axis];
                let s = (0..n)
                    .map(|k| 2.0 - 2.0 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
                    .collect();
                (axis, s)
            })
            .collect();
        let values = RealTensor::from_fn(shape, |idx| symbols.iter().map(|(a, s)| s[idx[*a]]).sum())?;
        Ok(LaplacianSpectrum { values })
    }
}
