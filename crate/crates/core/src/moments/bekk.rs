//! Unconditional moment functions for the BEKK(1,1) volatility model.
//!
//! With `y_t = H_t^{1/2} eps_t` and
//! `H_t = C^T C + D y_{t-1} y_{t-1}^T D^T + B H_{t-1} B^T`, the parameter is
//! `theta = (vech(C), vec(D), vec(B))` with `C` lower triangular, giving
//! `p = d(d+1)/2 + 2 d^2`. Two moment blocks are stacked:
//!
//! ```text
//! g1 = vech(y_t y_t' - C'C - D y_{t-1} y_{t-1}' D' - B y_{t-1} y_{t-1}' B') (x) q_K(y_{t-2})
//! g2 = (y_t y_t' - C'C - D y_{t-1} y_{t-1}' D') y_{t-1}
//! ```
//!
//! where `q_K` keeps the first `K` coordinates of `y_{t-2}`, so
//! `r = K d(d+1)/2 + d`. The second block carries no `B` term; it is used
//! exactly as stated, which leaves `B` identified through `g1` only.

use super::MomentModel;
use crate::error::{Error, Result};
use crate::linalg::vech_index;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct BekkMoments {
    data: DMatrix<f64>,
    basis_dim: usize,
    d: usize,
}

impl BekkMoments {
    pub fn new(data: DMatrix<f64>, basis_dim: usize) -> Result<Self> {
        let d = data.ncols();
        if basis_dim == 0 || basis_dim > d {
            return Err(Error::Config(format!(
                "basis dimension must lie in 1..={d}, got {basis_dim}"
            )));
        }
        if data.nrows() < 3 {
            return Err(Error::InsufficientData(format!(
                "{} observations; volatility moments need at least 3",
                data.nrows()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("volatility data contains non-finite values".into()));
        }
        Ok(Self { data, basis_dim, d })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    fn vech_len(&self) -> usize {
        self.d * (self.d + 1) / 2
    }

    fn split(&self, theta: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let d = self.d;
        let cl = self.vech_len();
        let c = crate::linalg::unvech_lower(&DVector::from(theta.rows(0, cl).clone_owned()), d);
        let dd = DMatrix::from_column_slice(d, d, theta.rows(cl, d * d).as_slice());
        let b = DMatrix::from_column_slice(d, d, theta.rows(cl + d * d, d * d).as_slice());
        (c, dd, b)
    }

    fn rows(&self, t: usize) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let tp = t + 2;
        let take = |row: usize| DVector::from_fn(self.d, |i, _| self.data[(row, i)]);
        (take(tp), take(tp - 1), take(tp - 2))
    }
}

impl MomentModel for BekkMoments {
    fn n_obs(&self) -> usize {
        self.data.nrows() - 2
    }

    fn moment_dim(&self) -> usize {
        self.basis_dim * self.vech_len() + self.d
    }

    fn param_dim(&self) -> usize {
        self.vech_len() + 2 * self.d * self.d
    }

    fn eval_into(&self, t: usize, theta: &DVector<f64>, out: &mut DVector<f64>) {
        let (c, dmat, bmat) = self.split(theta);
        let (y, y1, y2) = self.rows(t);
        let (d, k, cl) = (self.d, self.basis_dim, self.vech_len());

        let ctc = c.transpose() * &c;
        let u = &dmat * &y1; // D y_{t-1}; D S D' = u u'
        let w = &bmat * &y1;

        // m2 = y y' - C'C - u u'; m1 = m2 - w w'
        for j in 0..d {
            for i in j..d {
                let m2 = y[i] * y[j] - ctc[(i, j)] - u[i] * u[j];
                let m1 = m2 - w[i] * w[j];
                let vr = vech_index(i, j, d);
                for q in 0..k {
                    out[vr * k + q] = m1 * y2[q];
                }
            }
        }
        // g2 = (y y' - C'C - u u') y1, using the full symmetric matrix
        let off = k * cl;
        let yy1 = y.dot(&y1);
        let ctcy1 = &ctc * &y1;
        let uy1 = u.dot(&y1);
        for i in 0..d {
            out[off + i] = y[i] * yy1 - ctcy1[i] - u[i] * uy1;
        }
    }

    fn jac_into(&self, t: usize, theta: &DVector<f64>, out: &mut DMatrix<f64>) {
        let (c, dmat, bmat) = self.split(theta);
        let (_, y1, y2) = self.rows(t);
        let (d, k, cl) = (self.d, self.basis_dim, self.vech_len());
        let off = k * cl;
        out.fill(0.0);

        let u = &dmat * &y1;
        let w = &bmat * &y1;
        let cy1 = &c * &y1;
        let uy1 = u.dot(&y1);

        // C block: d(C'C)_{ij}/dC_{ab} = delta_{jb} C_{ai} + delta_{ib} C_{aj}
        for b in 0..d {
            for a in b..d {
                let col = vech_index(a, b, d);
                let mut put = |i: usize, j: usize, dm: f64| {
                    let vr = vech_index(i, j, d);
                    for q in 0..k {
                        out[(vr * k + q, col)] = dm * y2[q];
                    }
                };
                for i in b..d {
                    let mut dm = -c[(a, i)];
                    if i == b {
                        dm -= c[(a, b)];
                    }
                    put(i, b, dm);
                }
                for j in 0..b {
                    put(b, j, -c[(a, j)]);
                }
                for i in 0..d {
                    let mut dg = -c[(a, i)] * y1[b];
                    if i == b {
                        dg -= cy1[a];
                    }
                    out[(off + i, col)] = dg;
                }
            }
        }

        // D block: d(u u')_{ij}/dD_{ab} = y1_b (delta_{ia} u_j + delta_{ja} u_i)
        for b in 0..d {
            for a in 0..d {
                let col = cl + b * d + a;
                for i in a..d {
                    let mut dm = -y1[b] * u[i];
                    if i == a {
                        dm -= y1[b] * u[a];
                    }
                    let vr = vech_index(i, a, d);
                    for q in 0..k {
                        out[(vr * k + q, col)] = dm * y2[q];
                    }
                }
                for j in 0..a {
                    let dm = -y1[b] * u[j];
                    let vr = vech_index(a, j, d);
                    for q in 0..k {
                        out[(vr * k + q, col)] = dm * y2[q];
                    }
                }
                for i in 0..d {
                    let mut dg = -y1[b] * y1[a] * u[i];
                    if i == a {
                        dg -= y1[b] * uy1;
                    }
                    out[(off + i, col)] = dg;
                }
            }
        }

        // B block: same rank-one pattern through w, g2 rows untouched
        for b in 0..d {
            for a in 0..d {
                let col = cl + d * d + b * d + a;
                for i in a..d {
                    let mut dm = -y1[b] * w[i];
                    if i == a {
                        dm -= y1[b] * w[a];
                    }
                    let vr = vech_index(i, a, d);
                    for q in 0..k {
                        out[(vr * k + q, col)] = dm * y2[q];
                    }
                }
                for j in 0..a {
                    let dm = -y1[b] * w[j];
                    let vr = vech_index(a, j, d);
                    for q in 0..k {
                        out[(vr * k + q, col)] = dm * y2[q];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::testutil::assert_jac_matches_fd;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn parameter_dimension_for_ten_series() {
        let model = BekkMoments::new(DMatrix::zeros(50, 10), 5).unwrap();
        assert_eq!(model.param_dim(), 255);
        assert_eq!(model.moment_dim(), 5 * 55 + 10);
        assert_eq!(model.n_obs(), 48);
    }

    #[test]
    fn basis_keeps_first_coordinates_of_second_lag() {
        // With C = D = B = 0, g1 reduces to vech(y y') (x) q_K(y_{t-2}).
        let mut data = DMatrix::zeros(3, 3);
        for j in 0..3 {
            data[(0, j)] = (j + 1) as f64; // y_{t-2} = (1, 2, 3)
            data[(2, j)] = 1.0; // y_t = (1, 1, 1)
        }
        let model = BekkMoments::new(data, 2).unwrap();
        let theta = DVector::zeros(model.param_dim());
        let mut g = DVector::zeros(model.moment_dim());
        model.eval_into(0, &theta, &mut g);
        // vech(y y') is all ones; basis values are y_{t-2,1..2} = (1, 2)
        for vr in 0..6 {
            assert_relative_eq!(g[vr * 2], 1.0, epsilon = 1e-14);
            assert_relative_eq!(g[vr * 2 + 1], 2.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn all_zero_inputs_vanish() {
        let model = BekkMoments::new(DMatrix::zeros(5, 2), 2).unwrap();
        let mut g = DVector::zeros(model.moment_dim());
        model.eval_into(1, &DVector::zeros(model.param_dim()), &mut g);
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn oversized_basis_is_a_configuration_error() {
        assert!(matches!(
            BekkMoments::new(DMatrix::zeros(10, 3), 4),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = crate::rng::stream_rng(17, 1);
        let data = DMatrix::from_fn(9, 3, |_, _| rng.random_range(-1.0..1.0));
        let model = BekkMoments::new(data, 2).unwrap();
        let theta = DVector::from_fn(model.param_dim(), |_, _| rng.random_range(-0.6..0.6));
        assert_jac_matches_fd(&model, &theta, 80, 1e-5, &mut rng);
    }
}
