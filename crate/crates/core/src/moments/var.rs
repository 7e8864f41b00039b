//! VAR(l) estimating functions.
//!
//! For `z_t in R^d` following `z_t = G_1 z_{t-1} + ... + G_l z_{t-l} + e_t`,
//! the parameter is `theta = (vec(G_1), ..., vec(G_l))` (column-major) and
//!
//! ```text
//! g_t = (z_t - G_1 z_{t-1} - ... - G_l z_{t-l}) (x) (1, z_{t-1}, ..., z_{t-l})
//! ```
//!
//! so `r = d * (l*d + 1)` and `p = l * d^2`. The instrument vector carries
//! the constant 1 literally; an optional demeaning of the data is offered
//! instead of an intercept parameter.

use super::MomentModel;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct VarMoments {
    data: DMatrix<f64>,
    lag: usize,
    d: usize,
}

impl VarMoments {
    pub fn new(data: DMatrix<f64>, lag: usize) -> Result<Self> {
        if lag == 0 {
            return Err(Error::Config("VAR lag must be at least 1".into()));
        }
        if data.nrows() <= lag {
            return Err(Error::InsufficientData(format!(
                "{} observations cannot support lag {lag}",
                data.nrows()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("VAR data contains non-finite values".into()));
        }
        let d = data.ncols();
        Ok(Self { data, lag, d })
    }

    /// Subtract column means before building moments.
    pub fn demeaned(mut data: DMatrix<f64>, lag: usize) -> Result<Self> {
        let means = data.row_mean();
        for mut row in data.row_iter_mut() {
            row -= &means;
        }
        Self::new(data, lag)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    fn instr_len(&self) -> usize {
        1 + self.lag * self.d
    }

    /// Residual and instrument at effective index `t`.
    fn residual_instrument(&self, t: usize, theta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (d, l) = (self.d, self.lag);
        let tp = t + l; // physical row
        let mut instr = DVector::zeros(self.instr_len());
        instr[0] = 1.0;
        for j in 0..l {
            for k in 0..d {
                instr[1 + j * d + k] = self.data[(tp - 1 - j, k)];
            }
        }
        let mut resid = DVector::from_fn(d, |i, _| self.data[(tp, i)]);
        // theta[(j*d + k)*d + i] is entry (i, k) of G_{j+1}
        for j in 0..l {
            for k in 0..d {
                let z = self.data[(tp - 1 - j, k)];
                if z != 0.0 {
                    for i in 0..d {
                        resid[i] -= theta[j * d * d + k * d + i] * z;
                    }
                }
            }
        }
        (resid, instr)
    }
}

impl MomentModel for VarMoments {
    fn n_obs(&self) -> usize {
        self.data.nrows() - self.lag
    }

    fn moment_dim(&self) -> usize {
        self.d * self.instr_len()
    }

    fn param_dim(&self) -> usize {
        self.lag * self.d * self.d
    }

    fn eval_into(&self, t: usize, theta: &DVector<f64>, out: &mut DVector<f64>) {
        let (resid, instr) = self.residual_instrument(t, theta);
        let m = self.instr_len();
        for i in 0..self.d {
            for k in 0..m {
                out[i * m + k] = resid[i] * instr[k];
            }
        }
    }

    fn jac_into(&self, t: usize, theta: &DVector<f64>, out: &mut DMatrix<f64>) {
        let (_, instr) = self.residual_instrument(t, theta);
        let (d, l, m) = (self.d, self.lag, self.instr_len());
        out.fill(0.0);
        // d g[i*m + q] / d theta[j*d^2 + k*d + i] = -z_{t-1-j,k} * instr[q]
        for j in 0..l {
            for k in 0..d {
                let z = instr[1 + j * d + k];
                if z == 0.0 {
                    continue;
                }
                for i in 0..d {
                    let col = j * d * d + k * d + i;
                    for q in 0..m {
                        out[(i * m + q, col)] = -z * instr[q];
                    }
                }
            }
        }
    }

    fn jac_tv_accumulate(
        &self,
        t: usize,
        theta: &DVector<f64>,
        v: &DVector<f64>,
        out: &mut DVector<f64>,
    ) {
        let (_, instr) = self.residual_instrument(t, theta);
        let (d, l, m) = (self.d, self.lag, self.instr_len());
        // s_i = <v[i*m .. (i+1)*m], instr>
        let mut s = DVector::zeros(d);
        for i in 0..d {
            let mut acc = 0.0;
            for q in 0..m {
                acc += v[i * m + q] * instr[q];
            }
            s[i] = acc;
        }
        for j in 0..l {
            for k in 0..d {
                let z = instr[1 + j * d + k];
                if z == 0.0 {
                    continue;
                }
                for i in 0..d {
                    out[j * d * d + k * d + i] -= z * s[i];
                }
            }
        }
    }
}
