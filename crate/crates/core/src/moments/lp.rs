//! Stacked local-projection estimating functions.
//!
//! One regression per horizon `h = 0..=H`,
//!
//! ```text
//! target_{t+h} = alpha^(h) + beta^(h) * shock_t + sum_j control_{t-j} psi_j^(h) + e
//! ```
//!
//! with instruments equal to the regressors, stacked block-diagonally into
//! a single moment system. All horizons share the same regressor vector
//! `x_t = (1, shock_t, controls_{t-1}, ..., controls_{t-l})` and the same
//! effective sample `t` with `t + H <= n - 1`, so `p = r = (H+1) * k` where
//! `k = 2 + q*l`.

use super::MomentModel;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct LpMoments {
    target: DVector<f64>,
    shock: DVector<f64>,
    controls: DMatrix<f64>,
    max_horizon: usize,
    lags: usize,
}

impl LpMoments {
    pub fn new(
        target: DVector<f64>,
        shock: DVector<f64>,
        controls: DMatrix<f64>,
        max_horizon: usize,
        lags: usize,
    ) -> Result<Self> {
        let n = target.len();
        if shock.len() != n {
            return Err(Error::Config(format!(
                "shock series length {} differs from target length {n}",
                shock.len()
            )));
        }
        if controls.ncols() > 0 && controls.nrows() != n {
            return Err(Error::Config(format!(
                "controls have {} rows, expected {n}",
                controls.nrows()
            )));
        }
        if n <= max_horizon + lags {
            return Err(Error::InsufficientData(format!(
                "{n} observations cannot support horizon {max_horizon} with {lags} control lags"
            )));
        }
        Ok(Self { target, shock, controls, max_horizon, lags })
    }

    /// Regressors per horizon: intercept, shock, and lagged controls.
    pub fn regressors_per_horizon(&self) -> usize {
        2 + self.controls.ncols() * self.lags
    }

    pub fn horizons(&self) -> usize {
        self.max_horizon
    }

    fn regressor_vector(&self, t: usize) -> DVector<f64> {
        let q = self.controls.ncols();
        let tp = t + self.lags;
        let mut x = DVector::zeros(self.regressors_per_horizon());
        x[0] = 1.0;
        x[1] = self.shock[tp];
        for j in 1..=self.lags {
            for c in 0..q {
                x[2 + (j - 1) * q + c] = self.controls[(tp - j, c)];
            }
        }
        x
    }
}

impl MomentModel for LpMoments {
    fn n_obs(&self) -> usize {
        self.target.len() - self.max_horizon - self.lags
    }

    fn moment_dim(&self) -> usize {
        (self.max_horizon + 1) * self.regressors_per_horizon()
    }

    fn param_dim(&self) -> usize {
        self.moment_dim()
    }

    fn eval_into(&self, t: usize, theta: &DVector<f64>, out: &mut DVector<f64>) {
        let k = self.regressors_per_horizon();
        let x = self.regressor_vector(t);
        let tp = t + self.lags;
        for h in 0..=self.max_horizon {
            let beta = theta.rows(h * k, k);
            let resid = self.target[tp + h] - x.dot(&beta);
            for m in 0..k {
                out[h * k + m] = resid * x[m];
            }
        }
    }

    fn jac_into(&self, t: usize, _theta: &DVector<f64>, out: &mut DMatrix<f64>) {
        let k = self.regressors_per_horizon();
        let x = self.regressor_vector(t);
        out.fill(0.0);
        for h in 0..=self.max_horizon {
            for m in 0..k {
                for m2 in 0..k {
                    out[(h * k + m, h * k + m2)] = -x[m] * x[m2];
                }
            }
        }
    }

    fn jac_tv_accumulate(
        &self,
        t: usize,
        _theta: &DVector<f64>,
        v: &DVector<f64>,
        out: &mut DVector<f64>,
    ) {
        let k = self.regressors_per_horizon();
        let x = self.regressor_vector(t);
        for h in 0..=self.max_horizon {
            let mut s = 0.0;
            for m in 0..k {
                s += v[h * k + m] * x[m];
            }
            for m2 in 0..k {
                out[h * k + m2] -= s * x[m2];
            }
        }
    }
}
