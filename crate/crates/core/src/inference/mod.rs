//! Projected inference on a low-dimensional coordinate block: projection
//! rows, HAC long-run covariance, sandwich matrices and normal-theory
//! confidence intervals.

mod ppel;
mod projection;
mod simplex;

pub use ppel::{fit_ppel, PpelEstimate, PpelOptions};
pub use projection::{default_varsigma, solve_projection, ProjectionRows};

use crate::error::{Error, Result};
use crate::linalg::{psd_inv, psd_inv_sqrt, psd_sqrt, symmetrize};
use crate::moments::{moment_matrix, sample_moments, MomentModel};
use crate::solver::PelFit;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Parzen,
    TukeyHanning,
    QuadraticSpectral,
}

/// Kernel and bandwidth for the long-run covariance estimator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::Config(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { kind, bandwidth })
    }

    /// Baseline choice: Parzen kernel with bandwidth `n^{1/5}`.
    pub fn default_for(n: usize) -> Self {
        Self { kind: KernelKind::Parzen, bandwidth: default_bandwidth(n) }
    }

    /// Kernel weight at `x`; each member maps into `[-1, 1]` with
    /// `K(0) = 1` and even symmetry.
    pub fn value(&self, x: f64) -> f64 {
        let ax = x.abs();
        match self.kind {
            KernelKind::Parzen => {
                if ax <= 0.5 {
                    1.0 - 6.0 * ax * ax + 6.0 * ax * ax * ax
                } else if ax <= 1.0 {
                    let one = 1.0 - ax;
                    2.0 * one * one * one
                } else {
                    0.0
                }
            }
            KernelKind::TukeyHanning => {
                if ax <= 1.0 {
                    0.5 * (1.0 + (std::f64::consts::PI * x).cos())
                } else {
                    0.0
                }
            }
            KernelKind::QuadraticSpectral => {
                if x == 0.0 {
                    1.0
                } else {
                    let z = 6.0 * std::f64::consts::PI * x / 5.0;
                    25.0 / (12.0 * std::f64::consts::PI * std::f64::consts::PI * x * x)
                        * (z.sin() / z - z.cos())
                }
            }
        }
    }
}

/// Bandwidth rule `h_n = n^{1/5}`.
pub fn default_bandwidth(n: usize) -> f64 {
    (n as f64).powf(0.2)
}

/// Long-run covariance of the column series in `f` (`n x m`):
/// `sum_{j=-(n-1)}^{n-1} K(j/h) H_j` with lag-j cross products averaged
/// with divisor `n`; the result is symmetrized.
pub fn hac_covariance(f: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    let (n, m) = (f.nrows(), f.ncols());
    if n < 2 {
        return Err(Error::InsufficientData(
            "long-run covariance needs at least 2 observations".into(),
        ));
    }
    let mut xi = DMatrix::zeros(m, m);
    for j in 0..n {
        let weight = spec.value(j as f64 / spec.bandwidth);
        if weight == 0.0 {
            continue;
        }
        // H_j = (1/n) sum_{t=j}^{n-1} f_t f_{t-j}'
        let mut hj = DMatrix::zeros(m, m);
        for t in j..n {
            for a in 0..m {
                for b in 0..m {
                    hj[(a, b)] += f[(t, a)] * f[(t - j, b)];
                }
            }
        }
        hj /= n as f64;
        if j == 0 {
            xi += weight * &hj;
        } else {
            // negative lags contribute the transpose
            xi += weight * (&hj + hj.transpose());
        }
    }
    Ok(symmetrize(&xi))
}

/// Per-level two-sided interval bounds, one pair per target coordinate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelIntervals {
    pub level: f64,
    pub bounds: Vec<(f64, f64)>,
}

/// Inference summary for the projected block.
#[derive(Debug, Clone)]
pub struct InferenceReport {
    pub targets: Vec<usize>,
    pub theta_tilde: DVector<f64>,
    pub lambda_tilde: DVector<f64>,
    pub jhat: DMatrix<f64>,
    pub mhat: DMatrix<f64>,
    pub std_errors: DVector<f64>,
    pub tstats: DVector<f64>,
    /// Ascending confidence levels with per-coordinate bounds.
    pub intervals: Vec<LevelIntervals>,
    /// A covariance block needed ridge regularization.
    pub regularized: bool,
    /// Solution touched the search box or the inner dual struggled there.
    pub boundary: bool,
}

/// Assemble sandwich matrices, standard errors and confidence intervals at
/// the projected estimate: `J = [Gamma' V^{-1} Xi^{1/2}]^{(x)2}`,
/// `M = [Gamma' V^{-1/2}]^{(x)2}`, `se_k^2 = [M^{-1} J M^{-1}]_{kk} / n`.
pub fn build_report<M: MomentModel + ?Sized>(
    model: &M,
    rows: &ProjectionRows,
    estimate: &PpelEstimate,
    fit: &PelFit,
    kernel: &KernelSpec,
    levels: &[f64],
) -> Result<InferenceReport> {
    if levels.is_empty() {
        return Err(Error::Config("at least one confidence level is required".into()));
    }
    if levels.iter().any(|&l| !(0.0 < l && l < 1.0)) {
        return Err(Error::Config("confidence levels must lie strictly inside (0, 1)".into()));
    }
    let m = rows.targets.len();
    let n = model.n_obs();
    let nf = n as f64;

    let mut theta = fit.theta.clone();
    for (i, &k) in rows.targets.iter().enumerate() {
        theta[k] = estimate.theta_tilde[i];
    }

    let g = moment_matrix(model, &theta)?;
    let f = &g * rows.a.transpose();
    let vhat = symmetrize(&(f.transpose() * &f / nf));
    let xi = hac_covariance(&f, kernel)?;
    let jbar = sample_moments(model, &theta)?.jacobian;
    let gbar_m = DMatrix::from_fn(jbar.nrows(), m, |j, i| jbar[(j, rows.targets[i])]);
    let gamma = &rows.a * &gbar_m;

    let ridge = 1e-10;
    let (v_inv, reg1) = psd_inv(&vhat, ridge);
    let (v_inv_sqrt, reg2) = psd_inv_sqrt(&vhat, ridge);
    let xi_sqrt = psd_sqrt(&xi, 0.0);

    let j_half = gamma.transpose() * &v_inv * &xi_sqrt;
    let jhat = symmetrize(&(&j_half * j_half.transpose()));
    let m_half = gamma.transpose() * &v_inv_sqrt;
    let mhat = symmetrize(&(&m_half * m_half.transpose()));

    let (m_inv, reg3) = psd_inv(&mhat, ridge);
    let cov = symmetrize(&(&m_inv * &jhat * &m_inv)) / nf;

    let std_errors = DVector::from_fn(m, |i, _| cov[(i, i)].max(0.0).sqrt());
    let tstats = DVector::from_fn(m, |i, _| {
        if std_errors[i] > 0.0 {
            estimate.theta_tilde[i] / std_errors[i]
        } else {
            f64::INFINITY * estimate.theta_tilde[i].signum()
        }
    });

    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut sorted_levels = levels.to_vec();
    sorted_levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let intervals = sorted_levels
        .iter()
        .map(|&level| {
            let z = normal.inverse_cdf(0.5 + level / 2.0);
            LevelIntervals {
                level,
                bounds: (0..m)
                    .map(|i| {
                        let half = z * std_errors[i];
                        (estimate.theta_tilde[i] - half, estimate.theta_tilde[i] + half)
                    })
                    .collect(),
            }
        })
        .collect();

    Ok(InferenceReport {
        targets: rows.targets.clone(),
        theta_tilde: estimate.theta_tilde.clone(),
        lambda_tilde: estimate.lambda_tilde.clone(),
        jhat,
        mhat,
        std_errors,
        tstats,
        intervals,
        regularized: reg1 || reg2 || reg3,
        boundary: estimate.boundary,
    })
}

impl InferenceReport {
    /// CSV schema: coordinate, estimate, std_error, tstat, then lo/hi pairs
    /// per level (`lo_95`, `hi_95`, ...).
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let mut header = vec![
            "coordinate".to_string(),
            "estimate".to_string(),
            "std_error".to_string(),
            "tstat".to_string(),
        ];
        for li in &self.intervals {
            let tag = format_level(li.level);
            header.push(format!("lo_{tag}"));
            header.push(format!("hi_{tag}"));
        }
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.targets.len() {
            let mut row = vec![
                self.targets[i].to_string(),
                format!("{}", self.theta_tilde[i]),
                format!("{}", self.std_errors[i]),
                format!("{}", self.tstats[i]),
            ];
            for li in &self.intervals {
                row.push(format!("{}", li.bounds[i].0));
                row.push(format!("{}", li.bounds[i].1));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn format_level(level: f64) -> String {
    let pct = level * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}").replace('.', "_")
    }
}
