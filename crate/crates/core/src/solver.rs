//! Davis-Yin splitting for tensor completion with a GTCTV prior and a
//! plug-in denoiser.
//!
//! The problem is `0 in A(X) + B(X) + C(X)` with `A` the normal cone of the
//! data constraint `P_Omega(X) = P_Omega(Y)`, `B` the subdifferential of
//! `GTCTV + 2 mu ||.||^2`, and `C = alpha (Id - D_sigma)`.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::denoiser::{residual_operator, Denoiser};
use crate::error::{Error, Result};
use crate::eval::mpsnr;
use crate::gtctv::{relative_change, Gtctv, InnerParams, InnerState};
use crate::tensor::{RealTensor, Tensor};

/// Lower bound of the denoising-strength schedule.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Sampling pattern `Omega` together with the observed values `Y`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationMask {
    observed: Tensor<bool>,
    values: RealTensor,
}

impl ObservationMask {
    /// Entries of `values` outside `observed` are discarded (set to zero).
    pub fn new(observed: Tensor<bool>, values: &RealTensor) -> Result<Self> {
        values.same_shape(&observed)?;
        let data = values.data().iter().zip(observed.data()).map(|(&v, &o)| if o { v } else { 0.0 }).collect();
        let values = RealTensor::from_vec(values.shape().to_vec(), data)?;
        Ok(ObservationMask { observed, values })
    }

    pub fn observed(&self) -> &Tensor<bool> {
        &self.observed
    }

    /// `Y`, zero off `Omega`.
    pub fn values(&self) -> &RealTensor {
        &self.values
    }

    pub fn shape(&self) -> &[usize] {
        self.values.shape()
    }

    pub fn observed_count(&self) -> usize {
        self.observed.data().iter().filter(|&&o| o).count()
    }

    pub fn is_full(&self) -> bool {
        self.observed.data().iter().all(|&o| o)
    }

    /// Whether `x` agrees with `Y` bit-exactly on `Omega`.
    pub fn is_consistent(&self, x: &RealTensor) -> bool {
        x.shape() == self.shape()
            && x.data().iter().zip(self.values.data()).zip(self.observed.data()).all(|((a, b), &o)| !o || a == b)
    }

    /// `P_Omega(x)`.
    pub fn project(&self, x: &RealTensor) -> Result<RealTensor> {
        x.same_shape(&self.values)?;
        let data = x.data().iter().zip(self.observed.data()).map(|(&v, &o)| if o { v } else { 0.0 }).collect();
        RealTensor::from_vec(x.shape().to_vec(), data)
    }
}

/// Resolvent of the data-consistency indicator: `P_Omega(Y) + P_Omega^c(x)`.
pub fn resolvent_data(x: &RealTensor, mask: &ObservationMask) -> Result<RealTensor> {
    x.same_shape(&mask.values)?;
    let data = x
        .data()
        .iter()
        .zip(mask.values.data())
        .zip(mask.observed.data())
        .map(|((&x, &y), &o)| if o { y } else { x })
        .collect();
    RealTensor::from_vec(x.shape().to_vec(), data)
}

/// Relaxation weight: 1 before `t0`, then `t0 / t`.
pub fn lambda_schedule(t: usize, t0: usize) -> f64 {
    if t < t0 {
        1.0
    } else {
        t0 as f64 / t as f64
    }
}

pub fn sigma_schedule(sigma: f64, nu: f64) -> f64 {
    (sigma / nu).max(SIGMA_FLOOR)
}

/// Iterates produced by one relaxed splitting step.
#[derive(Clone, Debug)]
pub struct DysStep {
    pub z_next: RealTensor,
    pub x_a: RealTensor,
    pub x_b: RealTensor,
    /// `C(x_b)`.
    pub x_c: RealTensor,
}

/// One step of three-operator splitting:
/// `x_b = J_B(z)`, `x_a = J_A(2 x_b - z - tau C(x_b))`, `z+ = z + lambda (x_a - x_b)`.
///
/// The resolvents are passed already scaled by `tau`.
pub fn dys_step<JB, JA, C>(
    z: &RealTensor,
    lambda: f64,
    tau: f64,
    resolvent_b: JB,
    resolvent_a: JA,
    op_c: C,
) -> Result<DysStep>
where
    JB: FnOnce(&RealTensor) -> Result<RealTensor>,
    JA: FnOnce(&RealTensor) -> Result<RealTensor>,
    C: FnOnce(&RealTensor) -> Result<RealTensor>,
{
    let x_b = resolvent_b(z)?;
    let x_c = op_c(&x_b)?;
    let mut reflected = x_b.scaled(2.0);
    reflected -= z;
    reflected.axpy(-tau, &x_c);
    let x_a = resolvent_a(&reflected)?;
    let mut z_next = z.clone();
    if lambda != 0.0 {
        let mut delta = x_a.clone();
        delta -= &x_b;
        z_next.axpy(lambda, &delta);
    }
    Ok(DysStep { z_next, x_a, x_b, x_c })
}

/// Outer-loop hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tau: f64,
    /// Weight of the denoiser term; 0 turns it off.
    pub alpha: f64,
    pub sigma0: f64,
    /// Speed factor shared by the `sigma` decay and the inner `rho` growth.
    pub nu: f64,
    /// Outer stop threshold on the squared relative change of `X^A`.
    pub eps: f64,
    pub eps_inner: f64,
    pub max_iter: usize,
    pub inner_iter: usize,
    pub rho0: f64,
    /// Carry `rho` across outer iterations instead of restarting at `rho0`.
    /// On by default: with a small `rho0` the prior only becomes active
    /// once `rho` has grown over many sweeps.
    pub persist_rho: bool,
    /// Iteration at which the relaxation weight starts to decay.
    pub lambda_switch: usize,
    /// `sigma` decay and `rho` growth. When off, both stay at their
    /// initial values.
    pub heuristics: bool,
    /// Compute the inclusion residual every this many iterations (0: only
    /// at the first and final iterations).
    pub tol_mip_every: usize,
    /// Accept steps outside the convergence guarantee.
    pub allow_unsafe_step: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tau: 1.0,
            alpha: 0.5,
            sigma0: 0.3,
            nu: 1.02,
            eps: 1e-4,
            eps_inner: 1e-4,
            max_iter: 200,
            inner_iter: 5,
            rho0: 1e-4,
            persist_rho: true,
            lambda_switch: 100,
            heuristics: true,
            tol_mip_every: 10,
            allow_unsafe_step: false,
        }
    }
}

/// Largest admissible step (exclusive) for a denoiser with constant `k`.
/// Infinite when `alpha = 0`.
pub fn max_stepsize(k: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        f64::INFINITY
    } else {
        (2.0 - 2.0 * k) / alpha
    }
}

impl SolverConfig {
    /// Checks ranges and the step condition `tau < (2 - 2k) / alpha` for a
    /// denoiser with declared constant `k`.
    pub fn validate(&self, declared_k: f64) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("tau", self.tau)?;
        positive("sigma0", self.sigma0)?;
        positive("rho0", self.rho0)?;
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.nu >= 1.0 && self.nu.is_finite()) {
            return Err(Error::Config(format!("nu must be >= 1, got {}", self.nu)));
        }
        if !(self.eps >= 0.0 && self.eps_inner >= 0.0) {
            return Err(Error::Config("eps and eps_inner must be >= 0".into()));
        }
        if self.max_iter == 0 || self.inner_iter == 0 {
            return Err(Error::Config("max_iter and inner_iter must be >= 1".into()));
        }
        if self.lambda_switch == 0 {
            return Err(Error::Config("lambda_switch must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&declared_k) {
            return Err(Error::Config(format!("declared denoiser constant must lie in [0, 1], got {declared_k}")));
        }
        let bound = max_stepsize(declared_k, self.alpha);
        if self.tau >= bound && !self.allow_unsafe_step {
            return Err(Error::Config(format!(
                "stepsize tau = {} is not below (2 - 2k) / alpha = {bound} (k = {declared_k}, alpha = {}); \
                 lower tau or set allow_unsafe_step",
                self.tau, self.alpha
            )));
        }
        Ok(())
    }

    pub fn inner_params(&self) -> InnerParams {
        InnerParams {
            rho0: self.rho0,
            nu: if self.heuristics { self.nu } else { 1.0 },
            eps: self.eps_inner,
            max_iter: self.inner_iter,
            persist_rho: self.persist_rho,
        }
    }
}

/// One row of the run trace. `t` counts outer iterations from 0, matching
/// the index of `lambda_t` and `sigma_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub lambda: f64,
    pub sigma: f64,
    /// Squared relative change of `X^A`; absent at `t = 0`.
    pub eps: Option<f64>,
    pub tol_mip: Option<f64>,
    /// `||X^A - X^B||_F`.
    pub fixed_point_residual: f64,
    pub inner_sweeps: usize,
    pub rho: f64,
    /// Elapsed seconds since the run started (only when timing is enabled).
    pub seconds: Option<f64>,
    /// MPSNR of `X^A` against the ground truth, when one is supplied.
    pub mpsnr: Option<f64>,
}

/// Evolving iterates of the outer loop.
#[derive(Clone, Debug)]
pub struct SolverState {
    pub t: usize,
    pub z: RealTensor,
    pub sigma: f64,
    pub inner: InnerState,
    /// Iterates of the most recent step (absent before the first one).
    pub last: Option<DysStep>,
}

/// Optional run controls.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions<'a> {
    /// Checked once per outer iteration.
    pub cancel: Option<&'a AtomicBool>,
    pub ground_truth: Option<&'a RealTensor>,
    /// Peak value for the trace MPSNR (1 when `None`).
    pub peak: Option<f64>,
    pub timing: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub x: RealTensor,
    pub trace: Vec<TraceRecord>,
    pub converged: bool,
}

/// The full completion algorithm: configuration, prior and denoiser.
pub struct Solver<'a> {
    config: SolverConfig,
    prior: Gtctv,
    denoiser: &'a dyn Denoiser,
}

impl<'a> Solver<'a> {
    /// Validates the configuration (including the step condition against
    /// the denoiser's declared constant) and the inner penalty parameter.
    pub fn new(config: SolverConfig, prior: Gtctv, denoiser: &'a dyn Denoiser) -> Result<Self> {
        config.validate(denoiser.declared_k())?;
        config.inner_params().validate()?;
        prior.check_rho(config.rho0)?;
        Ok(Solver { config, prior, denoiser })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn prior(&self) -> &Gtctv {
        &self.prior
    }

    /// `Z_0 = Y`, `G_d = grad_d Z_0`, `B_d = 0`, `sigma = sigma0`.
    pub fn init_state(&self, mask: &ObservationMask) -> Result<SolverState> {
        self.prior.validate_shape(mask.shape())?;
        if mask.observed_count() == 0 {
            return Err(Error::InvalidArgument("mask has no observed entries".into()));
        }
        let z = mask.values().clone();
        let inner = InnerState::new(&self.prior, &z, self.config.rho0)?;
        Ok(SolverState { t: 0, z, sigma: self.config.sigma0, inner, last: None })
    }

    fn residual(&self, x: &RealTensor, sigma: f64) -> Result<RealTensor> {
        if self.config.alpha == 0.0 {
            RealTensor::zeros(x.shape())
        } else {
            residual_operator(self.denoiser, x, sigma, self.config.alpha)
        }
    }

    /// One outer iteration with relaxation weight `lambda`. Advances `t`
    /// and `sigma`; the step's iterates are left in `state.last`.
    pub fn step_with(&self, state: &mut SolverState, mask: &ObservationMask, lambda: f64) -> Result<()> {
        let inner = self.config.inner_params();
        let tau = self.config.tau;
        let sigma = state.sigma;
        let step = {
            let SolverState { z, inner: inner_state, .. } = &mut *state;
            dys_step(
                z,
                lambda,
                tau,
                |v| self.prior.prox(v, tau, &inner, inner_state),
                |v| resolvent_data(v, mask),
                |v| self.residual(v, sigma),
            )?
        };
        if !step.z_next.is_finite() || !step.x_a.is_finite() {
            return Err(Error::Diverged { iteration: state.t });
        }
        state.z = step.z_next.clone();
        state.last = Some(step);
        state.t += 1;
        if self.config.heuristics {
            state.sigma = sigma_schedule(sigma, self.config.nu);
        }
        Ok(())
    }

    /// One outer iteration using the relaxation schedule.
    pub fn step(&self, state: &mut SolverState, mask: &ObservationMask) -> Result<()> {
        let lambda = lambda_schedule(state.t, self.config.lambda_switch);
        self.step_with(state, mask, lambda)
    }

    /// Inclusion residual at a feasible `x` with denoising strength `sigma`.
    pub fn tol_mip(&self, x: &RealTensor, mask: &ObservationMask, sigma: f64) -> Result<f64> {
        tol_mip(x, mask, &self.prior, self.denoiser, self.config.alpha, sigma)
    }

    /// Iterates until the squared relative change of `X^A` drops below
    /// `eps` or `max_iter` is reached, and returns the last `X^A`.
    pub fn run(&self, mask: &ObservationMask, options: RunOptions<'_>) -> Result<RunOutput> {
        let start = Instant::now();
        let mut state = self.init_state(mask)?;
        let mut trace = Vec::with_capacity(self.config.max_iter);
        let mut previous: Option<RealTensor> = None;
        let mut converged = false;
        let peak = options.peak.unwrap_or(1.0);

        while state.t < self.config.max_iter {
            if options.cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
                return Err(Error::Cancelled { iteration: state.t });
            }
            let t = state.t;
            let sigma = state.sigma;
            let lambda = lambda_schedule(t, self.config.lambda_switch);
            self.step_with(&mut state, mask, lambda)?;
            let step = state.last.as_ref().expect("step stores its iterates");

            let eps = match &previous {
                Some(prev) => Some(relative_change(&step.x_a, prev)),
                // With every entry observed, X^A = Y whatever happens next.
                None if mask.is_full() => Some(0.0),
                None => None,
            };
            let done = eps.is_some_and(|e| e < self.config.eps);
            let last_iteration = done || state.t == self.config.max_iter;
            let every = self.config.tol_mip_every;
            let want_tol = t == 0 || last_iteration || (every > 0 && (t + 1) % every == 0);
            let tol_mip = if want_tol { Some(self.tol_mip(&step.x_a, mask, sigma)?) } else { None };
            let mpsnr = match options.ground_truth {
                Some(truth) => Some(mpsnr(&step.x_a, truth, peak)?),
                None => None,
            };
            trace.push(TraceRecord {
                t,
                lambda,
                sigma,
                eps,
                tol_mip,
                fixed_point_residual: step.x_a.dist(&step.x_b),
                inner_sweeps: state.inner.iterations,
                rho: state.inner.rho,
                seconds: options.timing.then(|| start.elapsed().as_secs_f64()),
                mpsnr,
            });
            previous = Some(step.x_a.clone());
            if done {
                converged = true;
                break;
            }
        }
        let x = previous.expect("max_iter >= 1");
        debug_assert!(mask.is_consistent(&x));
        Ok(RunOutput { x, trace, converged })
    }
}

/// `||O + (g + 4 mu X) + alpha (X - D_sigma X)||_F / prod(n)` at a
/// feasible `X`, with `O = 0` taken from the normal cone of the data
/// constraint and `g` the GTCTV subgradient.
pub fn tol_mip(
    x: &RealTensor,
    mask: &ObservationMask,
    prior: &Gtctv,
    denoiser: &dyn Denoiser,
    alpha: f64,
    sigma: f64,
) -> Result<f64> {
    if !mask.is_consistent(x) {
        return Err(Error::InvalidArgument("inclusion residual needs a tensor matching Y on the observed entries".into()));
    }
    let mut total = prior.subgradient(x)?;
    let mu = prior.mu();
    if mu > 0.0 {
        total.axpy(4.0 * mu, x);
    }
    if alpha > 0.0 {
        total += &residual_operator(denoiser, x, sigma, alpha)?;
    }
    Ok(total.frob() / x.len() as f64)
}
