//! Initial values for the outer solver: least-squares fits for the linear
//! families and a univariate GARCH(1,1)-based construction for the
//! volatility model.

use crate::error::{Error, Result};
use crate::linalg::vech_index;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Per-equation least squares for a VAR(l): regress `z_t` on
/// `(1, z_{t-1}, ..., z_{t-l})` and keep the lag coefficients stacked as
/// `(vec(G_1), ..., vec(G_l))`. Also returns the residual covariance
/// (divisor `n_eff`), which feeds the spillover decomposition.
pub fn var_ols(data: &DMatrix<f64>, lag: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, d) = (data.nrows(), data.ncols());
    if n <= lag {
        return Err(Error::InsufficientData(format!(
            "{n} observations cannot support lag {lag}"
        )));
    }
    let n_eff = n - lag;
    let k = 1 + lag * d;
    let mut x = DMatrix::zeros(n_eff, k);
    let mut y = DMatrix::zeros(n_eff, d);
    for t in 0..n_eff {
        let tp = t + lag;
        x[(t, 0)] = 1.0;
        for j in 0..lag {
            for c in 0..d {
                x[(t, 1 + j * d + c)] = data[(tp - 1 - j, c)];
            }
        }
        for c in 0..d {
            y[(t, c)] = data[(tp, c)];
        }
    }
    let beta = least_squares(&x, &y)?;
    let mut theta = DVector::zeros(lag * d * d);
    for j in 0..lag {
        for c in 0..d {
            for i in 0..d {
                theta[j * d * d + c * d + i] = beta[(1 + j * d + c, i)];
            }
        }
    }
    let resid = &y - &x * &beta;
    let sigma = resid.transpose() * &resid / n_eff as f64;
    Ok((theta, sigma))
}

/// Horizon-by-horizon least squares for the local-projection system; the
/// regressor layout matches [`crate::moments::LpMoments`].
pub fn lp_ols(
    target: &DVector<f64>,
    shock: &DVector<f64>,
    controls: &DMatrix<f64>,
    max_horizon: usize,
    lags: usize,
) -> Result<DVector<f64>> {
    let n = target.len();
    if n <= max_horizon + lags {
        return Err(Error::InsufficientData(format!(
            "{n} observations cannot support horizon {max_horizon} with {lags} control lags"
        )));
    }
    let q = controls.ncols();
    let k = 2 + q * lags;
    let n_eff = n - max_horizon - lags;
    let mut x = DMatrix::zeros(n_eff, k);
    for t in 0..n_eff {
        let tp = t + lags;
        x[(t, 0)] = 1.0;
        x[(t, 1)] = shock[tp];
        for j in 1..=lags {
            for c in 0..q {
                x[(t, 2 + (j - 1) * q + c)] = controls[(tp - j, c)];
            }
        }
    }
    let mut theta = DVector::zeros((max_horizon + 1) * k);
    for h in 0..=max_horizon {
        let y = DMatrix::from_fn(n_eff, 1, |t, _| target[t + lags + h]);
        let beta = least_squares(&x, &y)?;
        for m in 0..k {
            theta[h * k + m] = beta[(m, 0)];
        }
    }
    Ok(theta)
}

fn least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = x.clone().svd(true, true);
    svd.solve(y, 1e-12).map_err(|e| Error::Degenerate(format!("least squares failed: {e}")))
}

/// Parameters of a univariate GARCH(1,1):
/// `sigma2_t = omega + alpha y_{t-1}^2 + beta sigma2_{t-1}`.
#[derive(Debug, Clone, Copy)]
pub struct Garch11 {
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
}

fn garch11_loglik(y: &[f64], omega: f64, alpha: f64, beta: f64) -> f64 {
    if omega <= 0.0 || alpha < 0.0 || beta < 0.0 || alpha + beta >= 0.999 {
        return f64::NEG_INFINITY;
    }
    let var0 = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
    let mut sigma2 = var0.max(1e-12);
    let mut ll = 0.0;
    for t in 1..y.len() {
        sigma2 = omega + alpha * y[t - 1] * y[t - 1] + beta * sigma2;
        let s = sigma2.max(1e-12);
        ll += -0.5 * (s.ln() + y[t] * y[t] / s);
    }
    ll
}

/// Gaussian quasi-likelihood fit of a GARCH(1,1) by a coarse grid over
/// `(alpha, beta)` with variance targeting, refined by cyclic
/// golden-section sweeps. Accurate enough for use as an initializer.
pub fn fit_garch11(y: &[f64]) -> Result<Garch11> {
    if y.len() < 10 {
        return Err(Error::InsufficientData("GARCH(1,1) needs at least 10 observations".into()));
    }
    let var = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
    if var <= 0.0 {
        return Err(Error::Degenerate("series is identically zero".into()));
    }
    let mut best = (f64::NEG_INFINITY, Garch11 { omega: var * 0.1, alpha: 0.1, beta: 0.8 });
    for &alpha in &[0.02, 0.05, 0.1, 0.2, 0.3] {
        for &beta in &[0.3, 0.5, 0.7, 0.85, 0.93] {
            if alpha + beta >= 0.999 {
                continue;
            }
            let omega = var * (1.0 - alpha - beta);
            let ll = garch11_loglik(y, omega, alpha, beta);
            if ll > best.0 {
                best = (ll, Garch11 { omega, alpha, beta });
            }
        }
    }
    let mut params = best.1;
    for _ in 0..3 {
        params.omega = golden_max(
            |w| garch11_loglik(y, w, params.alpha, params.beta),
            1e-8 * var,
            3.0 * var,
        );
        params.alpha = golden_max(
            |a| garch11_loglik(y, params.omega, a, params.beta),
            0.0,
            0.998 - params.beta,
        );
        params.beta = golden_max(
            |b| garch11_loglik(y, params.omega, params.alpha, b),
            0.0,
            0.998 - params.alpha,
        );
    }
    Ok(params)
}

fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let phi = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi.max(lo + 1e-12));
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..60 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = f(x1);
        }
    }
    0.5 * (a + b)
}

/// Volatility-model initializer: diagonals of `C`, `D`, `B` are square
/// roots of per-series GARCH(1,1) estimates (omega, alpha, beta), all
/// off-diagonal entries are `N(0, 0.5^2)` draws.
pub fn bekk_garch_init(data: &DMatrix<f64>, rng: &mut impl Rng) -> Result<DVector<f64>> {
    let d = data.ncols();
    let cl = d * (d + 1) / 2;
    let normal = Normal::new(0.0, 0.5).expect("valid normal");
    let mut theta = DVector::zeros(cl + 2 * d * d);
    let mut diag = Vec::with_capacity(d);
    for c in 0..d {
        let series: Vec<f64> = (0..data.nrows()).map(|t| data[(t, c)]).collect();
        diag.push(fit_garch11(&series)?);
    }
    for j in 0..d {
        for i in j..d {
            theta[vech_index(i, j, d)] =
                if i == j { diag[i].omega.max(0.0).sqrt() } else { normal.sample(rng) };
        }
    }
    for b in 0..d {
        for a in 0..d {
            let v = if a == b { diag[a].alpha.max(0.0).sqrt() } else { normal.sample(rng) };
            theta[cl + b * d + a] = v;
            let v = if a == b { diag[a].beta.max(0.0).sqrt() } else { normal.sample(rng) };
            theta[cl + d * d + b * d + a] = v;
        }
    }
    Ok(theta)
}

/// Simulation-mode initializer: the true parameter plus `N(0, sd^2)` noise.
pub fn perturbed_init(theta0: &DVector<f64>, sd: f64, rng: &mut impl Rng) -> DVector<f64> {
    let normal = Normal::new(0.0, sd).expect("valid normal");
    DVector::from_fn(theta0.len(), |i, _| theta0[i] + normal.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn var_ols_recovers_coefficients_on_a_long_path() {
        let mut rng = crate::rng::stream_rng(41, 1);
        let g = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 0.3]);
        let n = 4000;
        let mut data = DMatrix::zeros(n, 2);
        for t in 1..n {
            for i in 0..2 {
                let noise: f64 = rng.random_range(-1.0..1.0);
                data[(t, i)] = g[(i, 0)] * data[(t - 1, 0)] + g[(i, 1)] * data[(t - 1, 1)] + noise;
            }
        }
        let (theta, sigma) = var_ols(&data, 1).unwrap();
        assert_relative_eq!(theta[0], 0.5, epsilon = 0.05);
        assert_relative_eq!(theta[2], 0.2, epsilon = 0.05);
        assert_relative_eq!(theta[1], 0.0, epsilon = 0.05);
        // uniform(-1,1) noise variance is 1/3
        assert_relative_eq!(sigma[(0, 0)], 1.0 / 3.0, epsilon = 0.05);
    }

    #[test]
    fn lp_ols_fits_an_exact_linear_relation() {
        let n = 40;
        let shock = DVector::from_fn(n, |t, _| (t as f64 * 0.7).sin());
        let target = DVector::from_fn(n, |t, _| 1.0 + 2.0 * (t as f64 * 0.7).sin());
        let theta = lp_ols(&target, &shock, &DMatrix::zeros(n, 0), 0, 1).unwrap();
        assert_relative_eq!(theta[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(theta[1], 2.0, epsilon = 1e-8);
    }

    #[test]
    fn garch_fit_finds_reasonable_parameters() {
        let mut rng = crate::rng::stream_rng(42, 1);
        let (omega, alpha, beta) = (0.1, 0.1, 0.8);
        let n = 3000;
        let mut y = vec![0.0f64; n];
        let mut sigma2 = omega / (1.0 - alpha - beta);
        for t in 1..n {
            sigma2 = omega + alpha * y[t - 1] * y[t - 1] + beta * sigma2;
            let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
            y[t] = sigma2.sqrt() * z;
        }
        let fit = fit_garch11(&y).unwrap();
        assert!(fit.alpha > 0.0 && fit.alpha < 0.35, "alpha = {}", fit.alpha);
        assert!(fit.beta > 0.4 && fit.beta < 0.98, "beta = {}", fit.beta);
        assert!(fit.omega > 0.0);
    }

    #[test]
    fn bekk_initializer_has_garch_diagonals_and_noisy_off_diagonals() {
        let mut rng = crate::rng::stream_rng(43, 1);
        let data = DMatrix::from_fn(200, 3, |_, _| rng.random_range(-1.0..1.0));
        let theta = bekk_garch_init(&data, &mut rng).unwrap();
        assert_eq!(theta.len(), 6 + 9 + 9);
        // diagonal entries of C are nonnegative square roots
        for i in 0..3 {
            assert!(theta[vech_index(i, i, 3)] >= 0.0);
        }
    }
}
