//! Estimating-function families: `g_t(theta) in R^r` with parameter
//! Jacobians, evaluated over an effective sample `t = 0..n-1`.
//!
//! The built-in families are vector autoregressions ([`VarMoments`]),
//! stacked local projections ([`LpMoments`]) and BEKK volatility moments
//! ([`BekkMoments`]); [`ClosureMoments`] wraps user-supplied closures.

mod bekk;
mod lp;
mod var;

pub use bekk::BekkMoments;
pub use lp::LpMoments;
pub use var::VarMoments;

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// A family of estimating functions over an effective sample.
///
/// `eval_into` and `jac_into` must be deterministic in `(t, theta)`.
/// Implementations are read-only after construction, so evaluation may be
/// shared freely across threads.
pub trait MomentModel: Sync {
    /// Effective number of observations (after lags/horizons are consumed).
    fn n_obs(&self) -> usize;

    /// Moment dimension `r`.
    fn moment_dim(&self) -> usize;

    /// Parameter dimension `p`.
    fn param_dim(&self) -> usize;

    /// Write `g_t(theta)` into `out` (length `r`).
    fn eval_into(&self, t: usize, theta: &DVector<f64>, out: &mut DVector<f64>);

    /// Write the `r x p` Jacobian `d g_t / d theta^T` into `out`.
    fn jac_into(&self, t: usize, theta: &DVector<f64>, out: &mut DMatrix<f64>);

    /// Accumulate `out += (d g_t / d theta^T)^T v` without materializing the
    /// Jacobian. The default builds the dense Jacobian; structured models
    /// override this because it sits in the hot loop of the outer solver.
    fn jac_tv_accumulate(
        &self,
        t: usize,
        theta: &DVector<f64>,
        v: &DVector<f64>,
        out: &mut DVector<f64>,
    ) {
        let mut jac = DMatrix::zeros(self.moment_dim(), self.param_dim());
        self.jac_into(t, theta, &mut jac);
        out.gemv_tr(1.0, &jac, v, 1.0);
    }
}

impl<M: MomentModel + ?Sized> MomentModel for &M {
    fn n_obs(&self) -> usize {
        (**self).n_obs()
    }
    fn moment_dim(&self) -> usize {
        (**self).moment_dim()
    }
    fn param_dim(&self) -> usize {
        (**self).param_dim()
    }
    fn eval_into(&self, t: usize, theta: &DVector<f64>, out: &mut DVector<f64>) {
        (**self).eval_into(t, theta, out)
    }
    fn jac_into(&self, t: usize, theta: &DVector<f64>, out: &mut DMatrix<f64>) {
        (**self).jac_into(t, theta, out)
    }
    fn jac_tv_accumulate(
        &self,
        t: usize,
        theta: &DVector<f64>,
        v: &DVector<f64>,
        out: &mut DVector<f64>,
    ) {
        (**self).jac_tv_accumulate(t, theta, v, out)
    }
}

/// Sample averages at a fixed parameter: `gbar`, its Jacobian, and the
/// second-moment matrix `vhat = E_n{g_t g_t^T}` (symmetrized).
#[derive(Debug, Clone)]
pub struct SampleMoments {
    pub gbar: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub vhat: DMatrix<f64>,
}

/// Stack all `g_t(theta)` into an `n x r` matrix, rejecting non-finite rows.
pub fn moment_matrix<M: MomentModel + ?Sized>(
    model: &M,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let (n, r) = (model.n_obs(), model.moment_dim());
    let mut out = DMatrix::zeros(n, r);
    let mut row = DVector::zeros(r);
    for t in 0..n {
        model.eval_into(t, theta, &mut row);
        for j in 0..r {
            let v = row[j];
            if !v.is_finite() {
                return Err(Error::NumericalEval {
                    t,
                    detail: format!("moment coordinate {j} evaluated to {v}"),
                });
            }
            out[(t, j)] = v;
        }
    }
    Ok(out)
}

/// Average moments, Jacobian and second-moment matrix over the sample.
pub fn sample_moments<M: MomentModel + ?Sized>(
    model: &M,
    theta: &DVector<f64>,
) -> Result<SampleMoments> {
    let (n, r, p) = (model.n_obs(), model.moment_dim(), model.param_dim());
    if theta.len() != p {
        return Err(Error::Config(format!("theta has length {}, model expects {p}", theta.len())));
    }
    let mut gbar = DVector::zeros(r);
    let mut jacobian = DMatrix::zeros(r, p);
    let mut vhat = DMatrix::zeros(r, r);
    let mut g = DVector::zeros(r);
    let mut jac = DMatrix::zeros(r, p);
    for t in 0..n {
        model.eval_into(t, theta, &mut g);
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericalEval {
                t,
                detail: format!("moment coordinate {j} evaluated to {}", g[j]),
            });
        }
        gbar += &g;
        vhat.ger(1.0, &g, &g, 1.0);
        model.jac_into(t, theta, &mut jac);
        jacobian += &jac;
    }
    let inv_n = 1.0 / n as f64;
    gbar *= inv_n;
    jacobian *= inv_n;
    vhat *= inv_n;
    let vhat = crate::linalg::symmetrize(&vhat);
    Ok(SampleMoments { gbar, jacobian, vhat })
}

type EvalFn = dyn Fn(usize, &DVector<f64>, &mut DVector<f64>) + Sync;
type JacFn = dyn Fn(usize, &DVector<f64>, &mut DMatrix<f64>) + Sync;

/// Closure-backed moment model for custom estimating equations. When no
/// Jacobian closure is supplied, central finite differences of `eval` are
/// used.
pub struct ClosureMoments {
    n: usize,
    r: usize,
    p: usize,
    eval: Box<EvalFn>,
    jac: Option<Box<JacFn>>,
}

impl ClosureMoments {
    pub fn new(
        n: usize,
        r: usize,
        p: usize,
        eval: impl Fn(usize, &DVector<f64>, &mut DVector<f64>) + Sync + 'static,
    ) -> Self {
        Self { n, r, p, eval: Box::new(eval), jac: None }
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(usize, &DVector<f64>, &mut DMatrix<f64>) + Sync + 'static,
    ) -> Self {
        self.jac = Some(Box::new(jac));
        self
    }
}

impl MomentModel for ClosureMoments {
    fn n_obs(&self) -> usize {
        self.n
    }
    fn moment_dim(&self) -> usize {
        self.r
    }
    fn param_dim(&self) -> usize {
        self.p
    }
    fn eval_into(&self, t: usize, theta: &DVector<f64>, out: &mut DVector<f64>) {
        (self.eval)(t, theta, out)
    }
    fn jac_into(&self, t: usize, theta: &DVector<f64>, out: &mut DMatrix<f64>) {
        if let Some(jac) = &self.jac {
            jac(t, theta, out);
            return;
        }
        let mut plus = DVector::zeros(self.r);
        let mut minus = DVector::zeros(self.r);
        let mut shifted = theta.clone();
        for j in 0..self.p {
            let h = 1e-6 * (1.0 + theta[j].abs());
            shifted[j] = theta[j] + h;
            (self.eval)(t, &shifted, &mut plus);
            shifted[j] = theta[j] - h;
            (self.eval)(t, &shifted, &mut minus);
            shifted[j] = theta[j];
            for i in 0..self.r {
                out[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn constant_moments_have_outer_product_vhat() {
        let c = DVector::from_vec(vec![1.5, -0.5]);
        let c2 = c.clone();
        let model = ClosureMoments::new(4, 2, 1, move |_, _, out| out.copy_from(&c2));
        let sm = sample_moments(&model, &DVector::zeros(1)).unwrap();
        assert_relative_eq!(sm.gbar[0], 1.5);
        assert_relative_eq!(sm.vhat[(0, 1)], 1.5 * -0.5);
        assert_relative_eq!(sm.vhat[(1, 1)], 0.25);
    }

    #[test]
    fn sample_average_matches_direct_summation() {
        let mut rng = crate::rng::stream_rng(11, 1);
        let values: Vec<DVector<f64>> =
            (0..5).map(|_| DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0))).collect();
        let vals = values.clone();
        let model = ClosureMoments::new(5, 3, 1, move |t, theta, out| {
            out.copy_from(&vals[t]);
            out[0] += theta[0];
        });
        let theta = DVector::from_vec(vec![0.3]);
        let sm = sample_moments(&model, &theta).unwrap();
        let mut manual = DVector::zeros(3);
        for v in &values {
            manual += v;
        }
        manual /= 5.0;
        manual[0] += 0.3;
        for i in 0..3 {
            assert_relative_eq!(sm.gbar[i], manual[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn jacobian_average_matches_finite_difference_of_gbar() {
        let model = ClosureMoments::new(6, 2, 2, |t, theta, out| {
            let x = t as f64;
            out[0] = (x - theta[0]).powi(2) - theta[1];
            out[1] = (theta[0] * theta[1]).sin() + x;
        });
        let theta = DVector::from_vec(vec![0.7, -0.4]);
        let sm = sample_moments(&model, &theta).unwrap();
        for j in 0..2 {
            let h = 1e-6;
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            let gp = sample_moments(&model, &tp).unwrap().gbar;
            let gm = sample_moments(&model, &tm).unwrap().gbar;
            for i in 0..2 {
                let fd = (gp[i] - gm[i]) / (2.0 * h);
                assert_relative_eq!(sm.jacobian[(i, j)], fd, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn non_finite_evaluation_reports_offending_index() {
        let model = ClosureMoments::new(3, 1, 1, |t, _, out| {
            out[0] = if t == 2 { f64::NAN } else { 1.0 };
        });
        match sample_moments(&model, &DVector::zeros(1)) {
            Err(Error::NumericalEval { t, .. }) => assert_eq!(t, 2),
            other => panic!("expected NumericalEval, got {other:?}"),
        }
        assert!(moment_matrix(&model, &DVector::zeros(1)).is_err());
    }

    #[test]
    fn vhat_is_psd_up_to_roundoff() {
        let mut rng = crate::rng::stream_rng(5, 1);
        let draws: Vec<DVector<f64>> =
            (0..20).map(|_| DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0))).collect();
        let model = ClosureMoments::new(20, 4, 1, move |t, _, out| out.copy_from(&draws[t]));
        let sm = sample_moments(&model, &DVector::zeros(1)).unwrap();
        assert!(crate::linalg::min_eigenvalue_sym(&sm.vhat) >= -1e-10);
    }
}
