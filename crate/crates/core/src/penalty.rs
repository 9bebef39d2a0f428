//! Weakly convex scalar penalties on the nonnegative half-line.
//!
//! These are applied to singular values, so every function here rejects
//! negative arguments instead of reflecting them.

use std::convert::TryFrom;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `mu`-weakly convex penalty `f: [0, inf) -> [0, inf)` with `f(0) = 0`,
/// nondecreasing, with a nondecreasing proximal map whenever `eta * mu < 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PenaltySpec", into = "PenaltySpec")]
pub enum Penalty {
    /// `f(x) = x`
    Abs,
    /// Smoothly clipped absolute deviation with scale `phi` and shape `omega > 1`.
    Scad { phi: f64, omega: f64 },
    /// Minimax concave penalty with scale `phi` and shape `omega > 1`.
    Mcp { phi: f64, omega: f64 },
}

impl Penalty {
    pub fn scad(phi: f64, omega: f64) -> Result<Self> {
        check_params("SCAD", phi, omega)?;
        Ok(Penalty::Scad { phi, omega })
    }

    pub fn mcp(phi: f64, omega: f64) -> Result<Self> {
        check_params("MCP", phi, omega)?;
        Ok(Penalty::Mcp { phi, omega })
    }

    /// Weak-convexity constant `mu`: `f + (mu/2) x^2` is convex.
    pub fn weak_convexity(&self) -> f64 {
        match *self {
            Penalty::Abs => 0.0,
            Penalty::Scad { omega, .. } => 1.0 / (omega - 1.0),
            Penalty::Mcp { omega, .. } => 1.0 / omega,
        }
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        check_nonneg(x)?;
        Ok(self.value_unchecked(x))
    }

    pub(crate) fn value_unchecked(&self, x: f64) -> f64 {
        match *self {
            Penalty::Abs => x,
            Penalty::Scad { phi, omega } => {
                if x < phi {
                    phi * x
                } else if x < omega * phi {
                    (-x * x + 2.0 * omega * phi * x - phi * phi) / (2.0 * (omega - 1.0))
                } else {
                    0.5 * (omega + 1.0) * phi * phi
                }
            }
            Penalty::Mcp { phi, omega } => {
                if x < omega * phi {
                    phi * x - x * x / (2.0 * omega)
                } else {
                    0.5 * omega * phi * phi
                }
            }
        }
    }

    /// A subgradient on `[0, inf)`; 0 is returned at the origin.
    pub fn derivative(&self, x: f64) -> Result<f64> {
        check_nonneg(x)?;
        Ok(self.derivative_unchecked(x))
    }

    pub(crate) fn derivative_unchecked(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        match *self {
            Penalty::Abs => 1.0,
            Penalty::Scad { phi, omega } => {
                if x < phi {
                    phi
                } else if x < omega * phi {
                    (omega * phi - x) / (omega - 1.0)
                } else {
                    0.0
                }
            }
            Penalty::Mcp { phi, omega } => {
                if x < omega * phi {
                    phi - x / omega
                } else {
                    0.0
                }
            }
        }
    }

    /// Checks that `prox(eta, .)` is single-valued.
    pub fn check_step(&self, eta: f64) -> Result<()> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::InvalidArgument(format!("prox step must be positive, got {eta}")));
        }
        let product = eta * self.weak_convexity();
        if product >= 1.0 {
            return Err(Error::IllPosedProx { product });
        }
        Ok(())
    }

    /// `argmin_{z >= 0} f(z) + (z - x)^2 / (2 eta)`.
    pub fn prox(&self, eta: f64, x: f64) -> Result<f64> {
        self.check_step(eta)?;
        check_nonneg(x)?;
        Ok(self.prox_unchecked(eta, x))
    }

    /// Closed-form prox; the caller guarantees `eta * mu < 1` and `x >= 0`.
    pub(crate) fn prox_unchecked(&self, eta: f64, x: f64) -> f64 {
        match *self {
            Penalty::Abs => (x - eta).max(0.0),
            Penalty::Scad { phi, omega } => {
                if x <= phi * (1.0 + eta) {
                    (x - eta * phi).max(0.0)
                } else if x <= omega * phi {
                    ((omega - 1.0) * x - eta * omega * phi) / (omega - 1.0 - eta)
                } else {
                    x
                }
            }
            Penalty::Mcp { phi, omega } => {
                if x <= eta * phi {
                    0.0
                } else if x <= omega * phi {
                    (x - eta * phi) / (1.0 - eta / omega)
                } else {
                    x
                }
            }
        }
    }
}

fn check_params(name: &str, phi: f64, omega: f64) -> Result<()> {
    if !(phi > 0.0) || !phi.is_finite() {
        return Err(Error::InvalidArgument(format!("{name} scale phi must be positive, got {phi}")));
    }
    if !(omega > 1.0) || !omega.is_finite() {
        return Err(Error::InvalidArgument(format!("{name} shape omega must exceed 1, got {omega}")));
    }
    Ok(())
}

fn check_nonneg(x: f64) -> Result<()> {
    if !(x >= 0.0) {
        return Err(Error::InvalidArgument(format!("penalty argument must be >= 0, got {x}")));
    }
    Ok(())
}

/// Wire form: `{"type": "abs" | "scad" | "mcp", "phi": .., "omega": ..}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySpec {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
}

impl TryFrom<PenaltySpec> for Penalty {
    type Error = Error;

    fn try_from(spec: PenaltySpec) -> Result<Self> {
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| Error::Config(format!("penalty '{}' requires '{key}'", spec.kind)))
        };
        match spec.kind.as_str() {
            "abs" => Ok(Penalty::Abs),
            "scad" => Penalty::scad(need(spec.phi, "phi")?, need(spec.omega, "omega")?),
            "mcp" => Penalty::mcp(need(spec.phi, "phi")?, need(spec.omega, "omega")?),
            other => Err(Error::Config(format!("unknown penalty type '{other}'"))),
        }
    }
}

impl From<Penalty> for PenaltySpec {
    fn from(p: Penalty) -> Self {
        match p {
            Penalty::Abs => PenaltySpec { kind: "abs".into(), phi: None, omega: None },
            Penalty::Scad { phi, omega } => PenaltySpec { kind: "scad".into(), phi: Some(phi), omega: Some(omega) },
            Penalty::Mcp { phi, omega } => PenaltySpec { kind: "mcp".into(), phi: Some(phi), omega: Some(omega) },
        }
    }
}

/// Brute-force prox: minimizes `f(z) + (z - x)^2 / (2 eta)` over the grid
/// `z = i * step` covering `[0, upper]`. Kept independent of the closed forms
/// so it can serve as their oracle.
pub fn grid_prox(penalty: &Penalty, eta: f64, x: f64, upper: f64, step: f64) -> f64 {
    let n = (upper / step).ceil() as usize;
    let inv = 0.5 / eta;
    let mut best_z = 0.0;
    let mut best = f64::INFINITY;
    for i in 0..=n {
        let z = i as f64 * step;
        let d = z - x;
        let obj = penalty.value_unchecked(z) + inv * d * d;
        if obj < best {
            best = obj;
            best_z = z;
        }
    }
    best_z
}

/// Grid search over `[0, upper]` that ends at resolution `step`: each
/// level scans 201 points and the next one zooms into the two cells around
/// the best point. Exact whenever the objective is unimodal, which holds for
/// `eta * mu < 1` since it is then strongly convex.
pub fn grid_prox_refined(penalty: &Penalty, eta: f64, x: f64, upper: f64, step: f64) -> f64 {
    let inv = 0.5 / eta;
    let objective = |z: f64| penalty.value_unchecked(z) + inv * (z - x) * (z - x);
    let (mut lo, mut hi) = (0.0, upper);
    loop {
        let h = ((hi - lo) / 200.0).max(step);
        let n = ((hi - lo) / h).ceil() as usize;
        let mut best_z = lo;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            let z = (lo + i as f64 * h).min(hi);
            let obj = objective(z);
            if obj < best {
                best = obj;
                best_z = z;
            }
        }
        if h <= step {
            return best_z;
        }
        lo = (best_z - h).max(0.0);
        hi = (best_z + h).min(upper);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::random::seeded_rng;

    #[test]
    fn values() {
        let scad = Penalty::scad(1.0, 3.7).unwrap();
        assert!((scad.value(3.7).unwrap() - 2.35).abs() < 1e-12);
        assert!((scad.value(10.0).unwrap() - 2.35).abs() < 1e-12);
        assert_eq!(scad.value(0.5).unwrap(), 0.5);
        assert_eq!(Penalty::Abs.value(1.5).unwrap(), 1.5);
        let mcp = Penalty::mcp(1.0, 4.0).unwrap();
        assert!((mcp.value(2.0).unwrap() - 1.5).abs() < 1e-15);
        assert!((mcp.value(5.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(Penalty::Abs.value(-1.0).is_err());
        for p in [Penalty::Abs, scad, mcp] {
            assert_eq!(p.value(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn scad_is_continuous_at_knots() {
        let p = Penalty::scad(2.0, 3.7).unwrap();
        for knot in [2.0, 7.4] {
            let below = p.value(knot - 1e-9).unwrap();
            let above = p.value(knot).unwrap();
            assert!((below - above).abs() < 1e-7);
        }
    }

    #[test]
    fn abs_prox_soft_thresholds() {
        assert_eq!(Penalty::Abs.prox(1.0, 2.0).unwrap(), 1.0);
        assert_eq!(Penalty::Abs.prox(1.0, 0.5).unwrap(), 0.0);
        let mut rng = seeded_rng(7);
        for _ in 0..100 {
            let eta: f64 = rng.random_range(0.01..3.0);
            let x: f64 = rng.random_range(0.0..5.0);
            assert_eq!(Penalty::Abs.prox(eta, x).unwrap(), (x - eta).max(0.0));
        }
    }

    #[test]
    fn scad_prox_matches_grid() {
        let p = Penalty::scad(1.0, 3.7).unwrap();
        let grid = grid_prox(&p, 0.5, 0.8, 0.8 + 5.0, 1e-5);
        assert!((grid_prox_refined(&p, 0.5, 0.8, 0.8 + 5.0, 1e-5) - grid).abs() <= 1e-5);
        let closed = p.prox(0.5, 0.8).unwrap();
        assert!((grid - closed).abs() <= 2e-5, "grid {grid} closed {closed}");
        assert!((closed - 0.3).abs() < 1e-12);
    }

    #[test]
    fn weak_convexity_constants() {
        assert_eq!(Penalty::Abs.weak_convexity(), 0.0);
        assert!((Penalty::scad(3.0, 3000.0).unwrap().weak_convexity() - 1.0 / 2999.0).abs() < 1e-18);
        assert_eq!(Penalty::mcp(1.0, 4.0).unwrap().weak_convexity(), 0.25);
    }

    #[test]
    fn mcp_curvature_matches_mu() {
        // second difference of the middle branch equals -1/omega
        let p = Penalty::mcp(1.0, 4.0).unwrap();
        let h = 1e-3;
        let x = 1.0;
        let d2 = (p.value(x + h).unwrap() - 2.0 * p.value(x).unwrap() + p.value(x - h).unwrap()) / (h * h);
        assert!((d2 + p.weak_convexity()).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_steps_and_params() {
        let p = Penalty::scad(1.0, 3.7).unwrap();
        assert!(matches!(p.prox(2.7, 1.0), Err(Error::IllPosedProx { .. })));
        assert!(matches!(p.prox(0.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(p.prox(1.0, -0.1).is_err());
        assert!(Penalty::scad(1.0, 1.0).is_err());
        assert!(Penalty::mcp(0.0, 3.0).is_err());
        assert!(Penalty::Abs.prox(1e6, 2.0).is_ok());
    }

    #[test]
    fn serde_round_trip() {
        let p: Penalty = serde_json::from_str(r#"{"type":"scad","phi":3,"omega":3000}"#).unwrap();
        assert_eq!(p, Penalty::Scad { phi: 3.0, omega: 3000.0 });
        let back: Penalty = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        let abs: Penalty = serde_json::from_str(r#"{"type":"abs"}"#).unwrap();
        assert_eq!(abs, Penalty::Abs);
        assert!(serde_json::from_str::<Penalty>(r#"{"type":"scad","phi":1}"#).is_err());
        assert!(serde_json::from_str::<Penalty>(r#"{"type":"lsp"}"#).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn penalties() -> impl Strategy<Value = Penalty> {
            prop_oneof![
                Just(Penalty::Abs),
                (0.5f64..5.0, 1.5f64..50.0).prop_map(|(phi, omega)| Penalty::Scad { phi, omega }),
                (0.5f64..5.0, 1.5f64..50.0).prop_map(|(phi, omega)| Penalty::Mcp { phi, omega }),
            ]
        }

        proptest! {
            #[test]
            fn prox_is_monotone(p in penalties(), frac in 0.01f64..0.99, x1 in 0.0f64..40.0, dx in 0.0f64..10.0) {
                let mu = p.weak_convexity();
                let eta = if mu > 0.0 { frac / mu } else { frac * 10.0 };
                let a = p.prox(eta, x1).unwrap();
                let b = p.prox(eta, x1 + dx).unwrap();
                prop_assert!(a <= b + 1e-12);
                prop_assert!(a >= 0.0 && a <= x1 + 1e-12);
            }

            #[test]
            fn value_is_nondecreasing(p in penalties(), x in 0.0f64..100.0, dx in 0.0f64..10.0) {
                prop_assert!(p.value(x).unwrap() <= p.value(x + dx).unwrap() + 1e-12);
            }

            #[test]
            fn convexified_value_is_convex(p in penalties(), a in 0.0f64..60.0, b in 0.0f64..60.0, t in 0.0f64..1.0) {
                let mu = p.weak_convexity();
                let g = |x: f64| p.value(x).unwrap() + 0.5 * mu * x * x;
                let mid = t * a + (1.0 - t) * b;
                prop_assert!(g(mid) <= t * g(a) + (1.0 - t) * g(b) + 1e-9 * (1.0 + g(a).abs() + g(b).abs()));
            }
        }
    }
}
