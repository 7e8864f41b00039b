//! SCAD and Lasso penalties: values, derivatives, proximal maps.
//!
//! Both penalties belong to the usual folded-concave class: `P_tau(0) = 0`,
//! nondecreasing on `[0, inf)`, continuously differentiable away from zero
//! with a finite, strictly positive right derivative at `0+`. The Lasso is
//! `P_tau(t) = tau * t`; SCAD is the three-piece form
//!
//! ```text
//! P_tau(t) = tau*t                                      0 <= t <= tau
//!          = (2*a*tau*t - t^2 - tau^2) / (2*(a - 1))    tau < t <= a*tau
//!          = tau^2 * (a + 1) / 2                        t > a*tau
//! ```
//!
//! with concavity constant `a > 2` (default 3.7).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Default SCAD concavity constant.
pub const SCAD_A_DEFAULT: f64 = 3.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    Scad,
    Lasso,
}

/// A penalty `P_tau(.)` on nonnegative arguments.
///
/// `tau = 0` is accepted as the degenerate "no penalty" case (used to
/// recover the classical, unpenalized empirical likelihood dual); the
/// class invariants on monotonicity and `rho'(0+)` apply for `tau > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub tau: f64,
    pub scad_a: f64,
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind, tau: f64, scad_a: f64) -> Result<Self> {
        if !tau.is_finite() || tau < 0.0 {
            return Err(Error::Domain(format!(
                "penalty tuning parameter must be finite and >= 0, got {tau}"
            )));
        }
        if !(scad_a > 2.0) {
            return Err(Error::Domain(format!(
                "SCAD concavity constant must exceed 2, got {scad_a}"
            )));
        }
        Ok(Self { kind, tau, scad_a })
    }

    pub fn lasso(tau: f64) -> Result<Self> {
        Self::new(PenaltyKind::Lasso, tau, SCAD_A_DEFAULT)
    }

    pub fn scad(tau: f64) -> Result<Self> {
        Self::new(PenaltyKind::Scad, tau, SCAD_A_DEFAULT)
    }

    pub fn scad_with_a(tau: f64, a: f64) -> Result<Self> {
        Self::new(PenaltyKind::Scad, tau, a)
    }

    /// `P_tau(t)` for `t >= 0`.
    pub fn value(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("penalty argument must be >= 0, got {t}")));
        }
        let tau = self.tau;
        Ok(match self.kind {
            PenaltyKind::Lasso => tau * t,
            PenaltyKind::Scad => {
                let a = self.scad_a;
                if t <= tau {
                    tau * t
                } else if t <= a * tau {
                    (2.0 * a * tau * t - t * t - tau * tau) / (2.0 * (a - 1.0))
                } else {
                    tau * tau * (a + 1.0) / 2.0
                }
            }
        })
    }

    /// `P'_tau(t)` for `t > 0`; at `t = 0` the right limit `P'(0+) = tau`.
    pub fn deriv(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("penalty argument must be >= 0, got {t}")));
        }
        let tau = self.tau;
        Ok(match self.kind {
            PenaltyKind::Lasso => tau,
            PenaltyKind::Scad => {
                let a = self.scad_a;
                if t <= tau {
                    tau
                } else if t < a * tau {
                    (a * tau - t) / (a - 1.0)
                } else {
                    0.0
                }
            }
        })
    }

    /// Right derivative at zero, `P'(0+)`. Equals `tau` for both kinds
    /// since `rho'(0+) = 1`.
    pub fn deriv_zero_plus(&self) -> f64 {
        self.tau
    }

    /// Second derivative of `P_tau` at `t > 0` (zero for Lasso and on the
    /// SCAD linear/flat pieces, `-1/(a-1)` on the middle piece).
    pub fn second_deriv(&self, t: f64) -> f64 {
        match self.kind {
            PenaltyKind::Lasso => 0.0,
            PenaltyKind::Scad => {
                let (tau, a) = (self.tau, self.scad_a);
                if t > tau && t < a * tau {
                    -1.0 / (a - 1.0)
                } else {
                    0.0
                }
            }
        }
    }

    /// Proximal map: `argmin_u { (u - v)^2 / (2*step) + P_tau(|u|) }`.
    ///
    /// Lasso is the soft threshold. SCAD is solved by evaluating the
    /// stationary point of each of the three zones (clamped to its zone)
    /// plus zero; ties go to the candidate of smaller magnitude, which is
    /// also how boundary ties between zones resolve.
    pub fn prox(&self, v: f64, step: f64) -> f64 {
        debug_assert!(step > 0.0, "prox step must be positive");
        let tau = self.tau;
        if tau == 0.0 {
            return v;
        }
        match self.kind {
            PenaltyKind::Lasso => soft_threshold(v, step * tau),
            PenaltyKind::Scad => {
                let a = self.scad_a;
                let s = v.signum();
                let av = v.abs();

                let mut candidates = [0.0f64; 4];
                // zone |u| <= tau: soft threshold clamped into the zone
                candidates[1] = (av - step * tau).max(0.0).min(tau);
                // zone tau < |u| <= a*tau: quadratic stationary point when
                // the zone objective is convex (step < a - 1), else the
                // endpoints dominate and the clamp recovers them anyway
                let denom = a - 1.0 - step;
                candidates[2] = if denom.abs() > 1e-14 {
                    ((av * (a - 1.0) - step * a * tau) / denom).clamp(tau, a * tau)
                } else {
                    tau
                };
                // zone |u| > a*tau: penalty constant, prox is the identity
                candidates[3] = av.max(a * tau);

                candidates.sort_by(|x, y| x.partial_cmp(y).unwrap());
                let mut best = candidates[0];
                let mut best_obj = self.prox_objective(candidates[0], av, step);
                for &u in &candidates[1..] {
                    let obj = self.prox_objective(u, av, step);
                    if obj < best_obj {
                        best = u;
                        best_obj = obj;
                    }
                }
                s * best
            }
        }
    }

    fn prox_objective(&self, u: f64, v_abs: f64, step: f64) -> f64 {
        let d = u - v_abs;
        d * d / (2.0 * step) + self.value(u.abs()).expect("u >= 0 in prox search")
    }
}

/// Soft-threshold operator `sign(v) * max(|v| - kappa, 0)`.
pub fn soft_threshold(v: f64, kappa: f64) -> f64 {
    if v > kappa {
        v - kappa
    } else if v < -kappa {
        v + kappa
    } else {
        0.0
    }
}
