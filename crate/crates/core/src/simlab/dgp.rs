//! Data-generating processes for the Monte Carlo studies: a sparse
//! stable VAR(1), a bivariate shock-augmented VAR(4) for local
//! projections, and a BEKK(1,1) volatility process.

use crate::error::{Error, Result};
use crate::linalg::{discrete_lyapunov, psd_sqrt, spectral_radius, vech};
use crate::rng::{replication_rng, stream_rng, STRUCTURE_STREAM};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub const BURN_IN: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DgpCase {
    I,
    II,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Var1Config {
    pub n: usize,
    pub dim: usize,
    pub case: DgpCase,
    pub seed: u64,
    /// Fraction of nonzero coefficient entries, drawn at random positions.
    pub sparsity: f64,
    /// Target ratio of signal variance to noise variance (trace sense).
    pub snr: f64,
}

impl Var1Config {
    pub fn new(n: usize, dim: usize, case: DgpCase, seed: u64) -> Self {
        Self { n, dim, case, seed, sparsity: 0.1, snr: 2.0 }
    }
}

/// Frozen VAR(1) design: the coefficient matrix is drawn once from the
/// structure stream, then every replication shares it.
#[derive(Debug, Clone)]
pub struct Var1Design {
    config: Var1Config,
    g1: DMatrix<f64>,
    sigma: DMatrix<f64>,
    sigma_half: DMatrix<f64>,
    theta0: DVector<f64>,
}

impl Var1Design {
    pub fn new(config: Var1Config) -> Result<Self> {
        if config.n < 10 || config.dim < 1 {
            return Err(Error::Config(format!(
                "need n >= 10 and dim >= 1, got n={} dim={}",
                config.n, config.dim
            )));
        }
        let d = config.dim;
        let sigma = match config.case {
            DgpCase::I => DMatrix::identity(d, d),
            DgpCase::II => DMatrix::from_fn(d, d, |i, j| {
                0.2f64.powi((i as i32 - j as i32).abs())
            }),
        };
        let sigma_half = psd_sqrt(&sigma, 0.0);

        let mut rng = stream_rng(config.seed, STRUCTURE_STREAM);
        let mut g1 = DMatrix::zeros(d, d);
        let n_nonzero = ((d * d) as f64 * config.sparsity).round().max(1.0) as usize;
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > 20 {
                return Err(Error::Degenerate(
                    "could not draw a usable sparse coefficient matrix".into(),
                ));
            }
            g1.fill(0.0);
            let mut placed = 0;
            while placed < n_nonzero {
                let i = rng.random_range(0..d);
                let j = rng.random_range(0..d);
                if g1[(i, j)] == 0.0 {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    if v != 0.0 {
                        g1[(i, j)] = v;
                        placed += 1;
                    }
                }
            }
            if g1.amax() > 0.0 {
                break;
            }
        }
        let scale = rescale_for_snr(&g1, &sigma, config.snr)?;
        g1 *= scale;
        let theta0 = DVector::from_column_slice(g1.as_slice());
        Ok(Self { config, g1, sigma, sigma_half, theta0 })
    }

    pub fn theta0(&self) -> &DVector<f64> {
        &self.theta0
    }

    pub fn g1(&self) -> &DMatrix<f64> {
        &self.g1
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn simulate(&self, replication: u64) -> DMatrix<f64> {
        let mut rng = replication_rng(self.config.seed, replication);
        self.simulate_with(&mut rng)
    }

    pub fn simulate_with(&self, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let d = self.config.dim;
        let total = self.config.n + BURN_IN;
        let mut z = DVector::zeros(d);
        let mut out = DMatrix::zeros(self.config.n, d);
        for t in 0..total {
            let eps = &self.sigma_half
                * DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
            z = &self.g1 * &z + eps;
            if t >= BURN_IN {
                for c in 0..d {
                    out[(t - BURN_IN, c)] = z[c];
                }
            }
        }
        out
    }
}

/// Scalar multiplier `c` such that `c * G1` is stable and the stationary
/// signal-to-noise ratio `tr(G Sz G') / tr(Se)` hits the target, found by
/// bisection on the implied Lyapunov covariance.
fn rescale_for_snr(g1: &DMatrix<f64>, sigma: &DMatrix<f64>, snr: f64) -> Result<f64> {
    let rho = spectral_radius(g1);
    let tr_sigma = sigma.trace();
    let ratio = |c: f64| -> f64 {
        let g = g1 * c;
        let sz = discrete_lyapunov(&g, sigma);
        ((&g * sz * g.transpose()).trace()) / tr_sigma
    };
    let (mut lo, mut hi) = if rho > 0.0 {
        let hi = 0.995 / rho;
        if ratio(hi) < snr {
            // extremely flat draw; accept the near-unit-root scaling
            return Ok(hi);
        }
        (0.0f64, hi)
    } else {
        // nilpotent draw: stable at any scale, grow until the ratio is hit
        let mut hi = 1.0f64;
        let mut guard = 0;
        while ratio(hi) < snr {
            hi *= 2.0;
            guard += 1;
            if guard > 100 {
                return Err(Error::Degenerate(
                    "coefficient draw carries no signal at any scale".into(),
                ));
            }
        }
        (0.0f64, hi)
    };
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) < snr {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn gen_var1(config: &Var1Config) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let design = Var1Design::new(config.clone())?;
    let data = design.simulate(0);
    Ok((data, design.theta0().clone()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpConfig {
    pub n: usize,
    pub seed: u64,
    /// Longest projection horizon.
    pub max_horizon: usize,
    /// Control lags per horizon block.
    pub lags: usize,
}

impl LpConfig {
    pub fn new(n: usize, seed: u64, max_horizon: usize) -> Self {
        Self { n, seed, max_horizon, lags: 4 }
    }
}

/// Bivariate VAR(4)-with-shock design; only the first lag and the
/// contemporaneous shock loading are nonzero.
#[derive(Debug, Clone)]
pub struct LpDesign {
    config: LpConfig,
    g1: DMatrix<f64>,
    b0: DVector<f64>,
    sigma_half: DMatrix<f64>,
    shock: DVector<f64>,
}

impl LpDesign {
    pub fn new(config: LpConfig, shock: DVector<f64>) -> Result<Self> {
        if shock.len() < config.n {
            return Err(Error::Config(format!(
                "shock series has {} observations, need at least {}",
                shock.len(),
                config.n
            )));
        }
        let g1 = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 0.5]);
        let b0 = DVector::from_vec(vec![0.5, 0.5]);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let sigma_half = psd_sqrt(&sigma, 0.0);
        Ok(Self { config, g1, b0, sigma_half, shock })
    }

    /// True impulse responses of the first variable to the shock:
    /// `beta^(h) = (G1^h b0)[0]`.
    pub fn true_irf(&self) -> DVector<f64> {
        let mut irf = DVector::zeros(self.config.max_horizon + 1);
        let mut power = self.b0.clone();
        for h in 0..=self.config.max_horizon {
            irf[h] = power[0];
            power = &self.g1 * power;
        }
        irf
    }

    pub fn shock(&self) -> &DVector<f64> {
        &self.shock
    }

    pub fn simulate(&self, replication: u64) -> DMatrix<f64> {
        let mut rng = replication_rng(self.config.seed, replication);
        self.simulate_with(&mut rng)
    }

    /// Simulate `(z1, z2)`; the shock enters only contemporaneously and
    /// pre-sample values are zero.
    pub fn simulate_with(&self, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let n = self.config.n;
        let mut out = DMatrix::zeros(n, 2);
        let mut z = DVector::zeros(2);
        for t in 0..n {
            let eps =
                &self.sigma_half * DVector::from_fn(2, |_, _| StandardNormal.sample(rng));
            z = &self.g1 * &z + &self.b0 * self.shock[t] + eps;
            out[(t, 0)] = z[0];
            out[(t, 1)] = z[1];
        }
        out
    }
}

/// Offline surrogate for the observed shock series: a two-regime normal
/// mixture, volatile early regime (sd 0.077 over the first 60%) and quiet
/// late regime (sd 0.012).
pub fn synthetic_shock(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let split = (n as f64 * 0.6).round() as usize;
    DVector::from_fn(n, |t, _| {
        let sd = if t < split { 0.077 } else { 0.012 };
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    })
}

pub fn gen_lp(config: &LpConfig, shock: DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let design = LpDesign::new(config.clone(), shock)?;
    let data = design.simulate(0);
    let irf = design.true_irf();
    Ok((data, irf))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MgarchConfig {
    pub n: usize,
    pub dim: usize,
    pub case: DgpCase,
    pub seed: u64,
    /// Probability of a 0.1 entry appearing at an off-diagonal position in
    /// the Case II loading matrix.
    pub offdiag_density: f64,
    /// Number of leading coordinates of the second lag used as instruments.
    pub basis_dim: usize,
}

impl MgarchConfig {
    pub fn new(n: usize, dim: usize, case: DgpCase, seed: u64) -> Self {
        Self { n, dim, case, seed, offdiag_density: 0.05, basis_dim: 5.min(dim) }
    }
}

#[derive(Debug, Clone)]
pub struct MgarchDesign {
    config: MgarchConfig,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    b: DMatrix<f64>,
    h_uncond: DMatrix<f64>,
    theta0: DVector<f64>,
}

impl MgarchDesign {
    pub fn new(config: MgarchConfig) -> Result<Self> {
        if config.n < 10 || config.dim < 1 {
            return Err(Error::Config(format!(
                "need n >= 10 and dim >= 1, got n={} dim={}",
                config.n, config.dim
            )));
        }
        let dim = config.dim;
        let c = DMatrix::identity(dim, dim);
        let b = DMatrix::from_diagonal(&DVector::from_element(dim, 0.6));
        let mut d = DMatrix::from_diagonal(&DVector::from_element(dim, 0.6));
        if config.case == DgpCase::II {
            let mut rng = stream_rng(config.seed, STRUCTURE_STREAM);
            for i in 0..dim {
                for j in 0..dim {
                    if i != j && rng.random::<f64>() < config.offdiag_density {
                        d[(i, j)] = 0.1;
                    }
                }
            }
        }
        let h_uncond = unconditional_h(&c, &d, &b)?;
        let mut theta0 = DVector::zeros(dim * (dim + 1) / 2 + 2 * dim * dim);
        theta0.rows_mut(0, dim * (dim + 1) / 2).copy_from(&vech(&c));
        for j in 0..dim {
            for i in 0..dim {
                theta0[dim * (dim + 1) / 2 + j * dim + i] = d[(i, j)];
                theta0[dim * (dim + 1) / 2 + dim * dim + j * dim + i] = b[(i, j)];
            }
        }
        Ok(Self { config, c, d, b, h_uncond, theta0 })
    }

    pub fn theta0(&self) -> &DVector<f64> {
        &self.theta0
    }

    pub fn simulate(&self, replication: u64) -> (DMatrix<f64>, bool) {
        let mut rng = replication_rng(self.config.seed, replication);
        self.simulate_with(&mut rng)
    }

    /// Run the covariance recursion from the unconditional level with a
    /// burn-in. Returns the sample and a flag set when a conditional
    /// covariance had to be clipped back to positive semidefinite.
    pub fn simulate_with(&self, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, bool) {
        let dim = self.config.dim;
        let total = self.config.n + BURN_IN;
        let mut out = DMatrix::zeros(self.config.n, dim);
        let mut h = self.h_uncond.clone();
        let mut y = DVector::zeros(dim);
        let mut clipped = false;
        for t in 0..total {
            h = h_recursion_step(&self.c, &self.d, &self.b, &y, &h);
            if crate::linalg::min_eigenvalue_sym(&h) < 0.0 {
                clipped = true;
            }
            let half = psd_sqrt(&h, 1e-12);
            let eps = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
            y = &half * eps;
            if t >= BURN_IN {
                for cidx in 0..dim {
                    out[(t - BURN_IN, cidx)] = y[cidx];
                }
            }
        }
        (out, clipped)
    }

    pub fn loading_d(&self) -> &DMatrix<f64> {
        &self.d
    }
}

/// One step of the conditional covariance recursion
/// `H_t = C'C + D y y' D' + B H B'`.
pub(crate) fn h_recursion_step(
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    b: &DMatrix<f64>,
    y_prev: &DVector<f64>,
    h_prev: &DMatrix<f64>,
) -> DMatrix<f64> {
    let dy = d * y_prev;
    c.transpose() * c + &dy * dy.transpose() + b * h_prev * b.transpose()
}

/// Fixed point of `H = C'C + D H D' + B H B'` by iteration; this is the
/// stationary second moment when the recursion is stable.
fn unconditional_h(c: &DMatrix<f64>, d: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = c.nrows();
    let ctc = c.transpose() * c;
    let mut h = ctc.clone();
    for _ in 0..2000 {
        let next = &ctc + d * &h * d.transpose() + b * &h * b.transpose();
        let delta = (&next - &h).amax();
        h = next;
        if delta < 1e-13 * (1.0 + h.amax()) {
            return Ok(h);
        }
        if !h.iter().all(|v| v.is_finite()) || h.amax() > 1e12 {
            break;
        }
    }
    Err(Error::Degenerate(format!(
        "volatility recursion is not stable for dim {dim}; unconditional moment diverged"
    )))
}

pub fn gen_mgarch(config: &MgarchConfig) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let design = MgarchDesign::new(config.clone())?;
    let (data, _) = design.simulate(0);
    Ok((data, design.theta0().clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::vech_index;
    use approx::assert_relative_eq;

    #[test]
    fn toeplitz_noise_covariance_entries() {
        let cfg = Var1Config::new(50, 5, DgpCase::II, 7);
        let design = Var1Design::new(cfg).unwrap();
        // 0.2^{|i-j|}: one step apart 0.2, three steps apart 0.008
        assert_relative_eq!(design.sigma()[(0, 1)], 0.2, epsilon = 1e-15);
        assert_relative_eq!(design.sigma()[(0, 3)], 0.008, epsilon = 1e-15);
        assert_relative_eq!(design.sigma()[(2, 2)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn isotropic_case_uses_the_identity() {
        let cfg = Var1Config::new(50, 4, DgpCase::I, 7);
        let design = Var1Design::new(cfg).unwrap();
        assert_eq!(design.sigma(), &DMatrix::identity(4, 4));
    }

    #[test]
    fn generated_coefficients_are_stable_with_target_snr() {
        let cfg = Var1Config::new(50, 10, DgpCase::I, 3);
        let design = Var1Design::new(cfg).unwrap();
        assert!(spectral_radius(design.g1()) < 1.0);
        let sz = discrete_lyapunov(design.g1(), design.sigma());
        let signal = (design.g1() * sz * design.g1().transpose()).trace();
        assert_relative_eq!(signal / design.sigma().trace(), 2.0, epsilon = 1e-6);
        // sparsity: 10% of 100 entries
        let nonzero = design.g1().iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, 10);
    }

    #[test]
    fn var_paths_are_seeded_deterministically() {
        let cfg = Var1Config::new(30, 3, DgpCase::I, 11);
        let design = Var1Design::new(cfg).unwrap();
        let a = design.simulate(4);
        let b = design.simulate(4);
        assert_eq!(a, b);
        let c = design.simulate(5);
        assert_ne!(a, c);
    }

    #[test]
    fn residual_covariance_matches_sigma_on_a_long_path() {
        let cfg = Var1Config::new(50_000, 4, DgpCase::II, 13);
        let design = Var1Design::new(cfg).unwrap();
        let data = design.simulate(0);
        // recover residuals with the true coefficients
        let mut acc = DMatrix::zeros(4, 4);
        for t in 1..data.nrows() {
            let zt = data.row(t).transpose();
            let zp = data.row(t - 1).transpose();
            let resid = zt - design.g1() * zp;
            acc.ger(1.0, &resid, &resid, 1.0);
        }
        acc /= (data.nrows() - 1) as f64;
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (acc[(i, j)] - design.sigma()[(i, j)]).abs() < 0.02,
                    "entry ({i},{j}): {} vs {}",
                    acc[(i, j)],
                    design.sigma()[(i, j)]
                );
            }
        }
    }

    #[test]
    fn lp_true_irf_matches_companion_iteration() {
        let mut rng = stream_rng(1, 1);
        let shock = synthetic_shock(120, &mut rng);
        let design = LpDesign::new(LpConfig::new(120, 1, 4), shock).unwrap();
        let irf = design.true_irf();
        assert_relative_eq!(irf[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(irf[1], 0.35, epsilon = 1e-15); // 0.5*0.5 + 0.2*0.5
        assert_relative_eq!(irf[2], 0.5 * irf[1] + 0.2 * 0.5f64.powi(2), epsilon = 1e-12);
    }

    #[test]
    fn lp_errors_are_correlated_at_one_half() {
        let mut rng = stream_rng(2, 1);
        let n = 40_000;
        let shock = synthetic_shock(n, &mut rng);
        let design = LpDesign::new(LpConfig::new(n, 2, 4), shock).unwrap();
        let data = design.simulate(0);
        let g1 = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 0.5]);
        let b0 = DVector::from_vec(vec![0.5, 0.5]);
        let mut cov = DMatrix::zeros(2, 2);
        for t in 1..n {
            let zt = data.row(t).transpose();
            let zp = data.row(t - 1).transpose();
            let resid = zt - &g1 * zp - &b0 * design.shock()[t];
            cov.ger(1.0, &resid, &resid, 1.0);
        }
        cov /= (n - 1) as f64;
        assert_relative_eq!(cov[(0, 1)], 0.5, epsilon = 0.02);
        assert_relative_eq!(cov[(0, 0)], 1.0, epsilon = 0.03);
    }

    #[test]
    fn short_shock_series_is_a_configuration_error() {
        let shock = DVector::zeros(10);
        assert!(matches!(
            LpDesign::new(LpConfig::new(50, 1, 4), shock),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn diagonal_case_loading_matrix() {
        let design = MgarchDesign::new(MgarchConfig::new(50, 4, DgpCase::I, 5)).unwrap();
        assert_eq!(
            design.loading_d(),
            &DMatrix::from_diagonal(&DVector::from_element(4, 0.6))
        );
        // theta0 layout: vech(C) then vec(D) then vec(B)
        assert_relative_eq!(design.theta0()[vech_index(0, 0, 4)], 1.0);
        assert_relative_eq!(design.theta0()[10], 0.6); // D[0,0]
    }

    #[test]
    fn zero_history_recursion_drops_the_arch_term() {
        let dim = 3;
        let c = DMatrix::identity(dim, dim);
        let d = DMatrix::from_diagonal(&DVector::from_element(dim, 0.6));
        let b = DMatrix::from_diagonal(&DVector::from_element(dim, 0.5));
        let h0 = DMatrix::identity(dim, dim);
        let h1 = h_recursion_step(&c, &d, &b, &DVector::zeros(dim), &h0);
        let expected = &c.transpose() * &c + &b * &h0 * b.transpose();
        assert_relative_eq!((h1 - expected).amax(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn volatility_paths_stay_finite_across_seeds() {
        for seed in 0..10 {
            let design = MgarchDesign::new(MgarchConfig::new(80, 3, DgpCase::II, seed)).unwrap();
            let (data, _) = design.simulate(0);
            assert!(data.iter().all(|v| v.is_finite()));
            let cov = data.transpose() * &data / 80.0;
            assert!(cov.amax() < 1e6);
        }
    }
}
