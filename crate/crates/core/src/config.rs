//! Run configuration: one flat JSON document holding the solver
//! hyperparameters, the prior, the denoiser and the seeds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserConfig;
use crate::error::{Error, Result};
use crate::gtctv::Gtctv;
use crate::penalty::Penalty;
use crate::solver::SolverConfig;
use crate::transform::Transform;

fn default_directions() -> Vec<usize> {
    vec![1, 2, 4]
}

fn default_trials() -> usize {
    1000
}

/// ```text
/// {
///   "tau": 1.0, "alpha": 0.5, "sigma0": 0.3, "inner_iter": 5,
///   "directions": [1, 2, 4],
///   "penalty": {"type": "abs"},
///   "transform": "dct",
///   "denoiser": {"kind": "gaussian_conv", "kernel_sigma": 1.0}
/// }
/// ```
///
/// Missing keys take their defaults; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(flatten)]
    pub solver: SolverConfig,
    /// 1-based modes along which differences are taken.
    #[serde(default = "default_directions")]
    pub directions: Vec<usize>,
    #[serde(default = "default_penalty")]
    pub penalty: Penalty,
    #[serde(default)]
    pub transform: Transform,
    #[serde(default)]
    pub denoiser: DenoiserConfig,
    /// Seed of the random pairs drawn by `check-denoiser`.
    #[serde(default)]
    pub check_seed: u64,
    #[serde(default = "default_trials")]
    pub check_trials: usize,
    /// Record wall-clock seconds in the trace (makes traces differ between runs).
    #[serde(default)]
    pub timing: bool,
}

fn default_penalty() -> Penalty {
    Penalty::Abs
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            solver: SolverConfig::default(),
            directions: default_directions(),
            penalty: default_penalty(),
            transform: Transform::default(),
            denoiser: DenoiserConfig::default(),
            check_seed: 0,
            check_trials: default_trials(),
            timing: false,
        }
    }
}

impl RunConfig {
    /// Parses and validates, including the stepsize condition against the
    /// denoiser's declared constant.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.denoiser.validate()?;
        self.solver.validate(self.denoiser.declared_k())?;
        self.solver.inner_params().validate()?;
        self.prior()?.check_rho(self.solver.rho0)?;
        if self.check_trials == 0 {
            return Err(Error::Config("check_trials must be >= 1".into()));
        }
        Ok(())
    }

    pub fn prior(&self) -> Result<Gtctv> {
        Gtctv::new(&self.directions, self.penalty, self.transform)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
