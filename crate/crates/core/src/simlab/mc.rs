//! Monte Carlo harness: replicate a data-generating process, fit the
//! doubly penalized estimator (plus least-squares comparators where they
//! apply), run projected inference for a designated coordinate, and
//! aggregate accuracy and coverage metrics.
//!
//! Replications are independent and run on the rayon pool; aggregation is
//! a deterministic sequential pass over the collected records, so a fixed
//! seed yields bit-identical reports regardless of thread schedule.

use super::dgp::{synthetic_shock, LpDesign, MgarchDesign, Var1Design};
use super::DgpConfig;
use crate::error::{Error, Result};
use crate::inference::{
    build_report, default_varsigma, fit_ppel, solve_projection, KernelSpec, PpelOptions,
};
use crate::init::{lp_ols, perturbed_init, var_ols};
use crate::moments::{BekkMoments, LpMoments, MomentModel, VarMoments};
use crate::rng::replication_rng;
use crate::solver::{select_tuning, FitOptions, TuningGrid};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// How the outer solver is initialized for each replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum InitMode {
    /// Least squares (the default for the regression families).
    LeastSquares,
    /// True parameter plus `N(0, sd^2)` noise (simulation convenience for
    /// the volatility family).
    TruthPerturbed { sd: f64 },
}

/// Estimator configuration for a Monte Carlo run.
#[derive(Debug, Clone)]
pub struct EstimatorSpec {
    pub grid: TuningGrid,
    pub fit: FitOptions,
    pub ppel: PpelOptions,
    /// Long-run covariance kernel; `None` selects Parzen with `n^{1/5}`.
    pub kernel: Option<KernelSpec>,
    /// Projection tolerance; `None` selects `0.2 n^{-1/3}`.
    pub varsigma: Option<f64>,
    pub levels: Vec<f64>,
    /// Also fit the least-squares comparator (regression families only).
    pub with_ols: bool,
    /// Run projected inference for the designated coordinate.
    pub with_inference: bool,
    pub init: InitMode,
}

impl EstimatorSpec {
    pub fn new(grid: TuningGrid) -> Self {
        Self {
            grid,
            fit: FitOptions::default(),
            ppel: PpelOptions::default(),
            kernel: None,
            varsigma: None,
            levels: vec![0.9, 0.95, 0.99],
            with_ols: true,
            with_inference: true,
            init: InitMode::LeastSquares,
        }
    }
}

/// One replication's outcome. Failed replications carry the error message
/// and contribute nothing to the aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: u64,
    pub theta_hat: Option<Vec<f64>>,
    pub ols_theta: Option<Vec<f64>>,
    pub target_estimate: Option<f64>,
    /// (level, lo, hi) triples for the designated coordinate.
    pub intervals: Vec<(f64, f64, f64)>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub name: String,
    pub mse: f64,
    pub bias_sq: f64,
    pub var: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageSummary {
    pub level: f64,
    /// `None` when no interval was produced (inference disabled or all
    /// replications failed).
    pub coverage: Option<f64>,
    pub median_length: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MonteCarloReport {
    pub replications: usize,
    pub failures: usize,
    /// Designated coordinate (first nonzero entry of the truth).
    pub target_index: usize,
    pub target_truth: f64,
    pub methods: Vec<MethodSummary>,
    pub coverage: Vec<CoverageSummary>,
    pub records: Vec<RepRecord>,
}

impl MonteCarloReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.name == name)
    }

    /// Aggregate records against the truth:
    /// `MSE = p^{-1} N^{-1} sum |theta_i - theta0|^2`,
    /// `Bias^2 = p^{-1} |mean theta_i - theta0|^2`, `Var = MSE - Bias^2`.
    pub fn from_records(
        records: Vec<RepRecord>,
        theta0: &DVector<f64>,
        target_index: usize,
        levels: &[f64],
    ) -> Self {
        let p = theta0.len() as f64;
        let mut methods = Vec::new();
        for (name, extract) in [
            ("PEL", (|r: &RepRecord| r.theta_hat.as_ref()) as fn(&RepRecord) -> Option<&Vec<f64>>),
            ("OLS", |r: &RepRecord| r.ols_theta.as_ref()),
        ] {
            let thetas: Vec<&Vec<f64>> = records.iter().filter_map(extract).collect();
            if thetas.is_empty() {
                continue;
            }
            let count = thetas.len() as f64;
            let mut sum_sq = 0.0;
            let mut mean = DVector::zeros(theta0.len());
            for th in &thetas {
                for j in 0..theta0.len() {
                    let d = th[j] - theta0[j];
                    sum_sq += d * d;
                    mean[j] += th[j];
                }
            }
            mean /= count;
            let mse = sum_sq / (p * count);
            let bias_sq = (&mean - theta0).norm_squared() / p;
            methods.push(MethodSummary { name: name.into(), mse, bias_sq, var: mse - bias_sq });
        }

        let truth = theta0[target_index];
        let mut coverage = Vec::new();
        for &level in levels {
            let mut hits = 0usize;
            let mut total = 0usize;
            let mut lengths: Vec<f64> = Vec::new();
            for rec in &records {
                for &(l, lo, hi) in &rec.intervals {
                    if (l - level).abs() < 1e-12 {
                        total += 1;
                        if lo <= truth && truth <= hi {
                            hits += 1;
                        }
                        lengths.push(hi - lo);
                    }
                }
            }
            if total == 0 {
                coverage.push(CoverageSummary { level, coverage: None, median_length: None });
            } else {
                lengths.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let median = if lengths.len() % 2 == 1 {
                    lengths[lengths.len() / 2]
                } else {
                    0.5 * (lengths[lengths.len() / 2 - 1] + lengths[lengths.len() / 2])
                };
                coverage.push(CoverageSummary {
                    level,
                    coverage: Some(hits as f64 / total as f64),
                    median_length: Some(median),
                });
            }
        }

        let failures = records.iter().filter(|r| r.error.is_some()).count();
        Self {
            replications: records.len(),
            failures,
            target_index,
            target_truth: truth,
            methods,
            coverage,
            records,
        }
    }

    /// Table-shaped CSV: one row per method with accuracy metrics;
    /// coverage and median CI length columns are filled on the PEL row.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let mut header =
            vec!["method".to_string(), "mse".to_string(), "bias_sq".to_string(), "var".to_string()];
        for c in &self.coverage {
            let tag = (c.level * 100.0).round() as i64;
            header.push(format!("coverage_{tag}"));
        }
        for c in &self.coverage {
            let tag = (c.level * 100.0).round() as i64;
            header.push(format!("median_ci_length_{tag}"));
        }
        header.push("replications".into());
        header.push("failures".into());
        writeln!(out, "{}", header.join(","))?;
        for m in &self.methods {
            let mut row = vec![m.name.clone(), fmt(m.mse), fmt(m.bias_sq), fmt(m.var)];
            if m.name == "PEL" {
                for c in &self.coverage {
                    row.push(c.coverage.map_or("NA".into(), fmt));
                }
                for c in &self.coverage {
                    row.push(c.median_length.map_or("NA".into(), fmt));
                }
            } else {
                for _ in 0..2 * self.coverage.len() {
                    row.push(String::new());
                }
            }
            row.push(self.replications.to_string());
            row.push(self.failures.to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// One JSON object per replication, for audit trails.
    pub fn write_jsonl<W: Write>(&self, out: &mut W) -> Result<()> {
        for rec in &self.records {
            let line = serde_json::to_string(rec)
                .map_err(|e| Error::Data(format!("serializing replication record: {e}")))?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Index of the first nonzero coordinate of the truth; falls back to 0.
pub fn first_active_index(theta0: &DVector<f64>) -> usize {
    (0..theta0.len()).find(|&j| theta0[j] != 0.0).unwrap_or(0)
}

/// Run `n_reps` independent replications of the configured experiment.
pub fn run_monte_carlo(
    dgp: &DgpConfig,
    estimator: &EstimatorSpec,
    n_reps: usize,
) -> Result<MonteCarloReport> {
    if n_reps == 0 {
        return Err(Error::Config("need at least one replication".into()));
    }
    match dgp {
        DgpConfig::Var1(cfg) => {
            let design = Var1Design::new(cfg.clone())?;
            let theta0 = design.theta0().clone();
            let target = first_active_index(&theta0);
            let records: Vec<RepRecord> = (0..n_reps as u64)
                .into_par_iter()
                .map(|rep| {
                    var1_replication(&design, cfg.seed, rep, estimator, target)
                        .unwrap_or_else(|e| failed(rep, e))
                })
                .collect();
            Ok(MonteCarloReport::from_records(records, &theta0, target, &estimator.levels))
        }
        DgpConfig::Lp(cfg) => {
            let mut shock_rng = crate::rng::stream_rng(cfg.seed, crate::rng::STRUCTURE_STREAM);
            let shock = synthetic_shock(cfg.n, &mut shock_rng);
            let design = LpDesign::new(cfg.clone(), shock)?;
            let theta0 = lp_truth(&design, cfg.max_horizon, cfg.lags);
            let target = first_active_index(&theta0);
            let records: Vec<RepRecord> = (0..n_reps as u64)
                .into_par_iter()
                .map(|rep| {
                    lp_replication(&design, cfg, rep, estimator, target)
                        .unwrap_or_else(|e| failed(rep, e))
                })
                .collect();
            Ok(MonteCarloReport::from_records(records, &theta0, target, &estimator.levels))
        }
        DgpConfig::Mgarch(cfg) => {
            let design = MgarchDesign::new(cfg.clone())?;
            let theta0 = design.theta0().clone();
            let target = first_active_index(&theta0);
            let records: Vec<RepRecord> = (0..n_reps as u64)
                .into_par_iter()
                .map(|rep| {
                    mgarch_replication(&design, cfg, rep, estimator, target)
                        .unwrap_or_else(|e| failed(rep, e))
                })
                .collect();
            Ok(MonteCarloReport::from_records(records, &theta0, target, &estimator.levels))
        }
    }
}

fn failed(rep: u64, e: Error) -> RepRecord {
    RepRecord {
        rep,
        theta_hat: None,
        ols_theta: None,
        target_estimate: None,
        intervals: Vec::new(),
        error: Some(e.to_string()),
    }
}

/// Fit, optionally infer, and package one replication given the prepared
/// moment model and initial value.
fn estimate_record<M: MomentModel + Sync + ?Sized>(
    model: &M,
    init: &DVector<f64>,
    ols_theta: Option<Vec<f64>>,
    rep: u64,
    estimator: &EstimatorSpec,
    target: usize,
) -> Result<RepRecord> {
    let fit = select_tuning(model, &estimator.grid, init, &estimator.fit)?;
    let mut record = RepRecord {
        rep,
        theta_hat: Some(fit.theta.as_slice().to_vec()),
        ols_theta,
        target_estimate: None,
        intervals: Vec::new(),
        error: None,
    };
    if estimator.with_inference {
        let sm = crate::moments::sample_moments(model, &fit.theta)?;
        let varsigma = estimator.varsigma.unwrap_or_else(|| default_varsigma(model.n_obs()));
        let rows = solve_projection(&sm.jacobian, &[target], varsigma)?;
        let est = fit_ppel(model, &rows, &fit, &estimator.ppel)?;
        let kernel = estimator.kernel.unwrap_or_else(|| KernelSpec::default_for(model.n_obs()));
        let report = build_report(model, &rows, &est, &fit, &kernel, &estimator.levels)?;
        record.target_estimate = Some(report.theta_tilde[0]);
        record.intervals = report
            .intervals
            .iter()
            .map(|li| (li.level, li.bounds[0].0, li.bounds[0].1))
            .collect();
    }
    Ok(record)
}

fn var1_replication(
    design: &Var1Design,
    seed: u64,
    rep: u64,
    estimator: &EstimatorSpec,
    target: usize,
) -> Result<RepRecord> {
    let mut rng = replication_rng(seed, rep);
    let data = design.simulate_with(&mut rng);
    let (ols_theta, _) = var_ols(&data, 1)?;
    let model = VarMoments::new(data, 1)?;
    let init = match &estimator.init {
        InitMode::LeastSquares => ols_theta.clone(),
        InitMode::TruthPerturbed { sd } => perturbed_init(design.theta0(), *sd, &mut rng),
    };
    let ols = estimator.with_ols.then(|| ols_theta.as_slice().to_vec());
    estimate_record(&model, &init, ols, rep, estimator, target)
}

/// True stacked local-projection coefficients implied by the design: per
/// horizon, intercept 0, shock loading `(G^h b0)[0]`, first-lag controls
/// `(G^{h+1})` row one, all deeper lags and shock lags 0.
fn lp_truth(design: &LpDesign, max_horizon: usize, lags: usize) -> DVector<f64> {
    let g1 = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 0.5]);
    let k = 2 + 3 * lags;
    let mut theta = DVector::zeros((max_horizon + 1) * k);
    let irf = design.true_irf();
    let mut power = g1.clone(); // G^{h+1}
    for h in 0..=max_horizon {
        theta[h * k + 1] = irf[h];
        theta[h * k + 2] = power[(0, 0)];
        theta[h * k + 3] = power[(0, 1)];
        // shock control coefficient at lag one is zero (b_1 = 0)
        power = &g1 * &power;
    }
    theta
}

fn lp_replication(
    design: &LpDesign,
    cfg: &super::dgp::LpConfig,
    rep: u64,
    estimator: &EstimatorSpec,
    target: usize,
) -> Result<RepRecord> {
    let mut rng = replication_rng(cfg.seed, rep);
    let data = design.simulate_with(&mut rng);
    let n = data.nrows();
    let target_series = DVector::from_fn(n, |t, _| data[(t, 0)]);
    let shock = design.shock().rows(0, n).clone_owned();
    let mut controls = DMatrix::zeros(n, 3);
    for t in 0..n {
        controls[(t, 0)] = data[(t, 0)];
        controls[(t, 1)] = data[(t, 1)];
        controls[(t, 2)] = shock[t];
    }
    let ols_theta = lp_ols(&target_series, &shock, &controls, cfg.max_horizon, cfg.lags)?;
    let model =
        LpMoments::new(target_series, shock, controls, cfg.max_horizon, cfg.lags)?;
    let init = match &estimator.init {
        InitMode::LeastSquares => ols_theta.clone(),
        InitMode::TruthPerturbed { sd } => {
            perturbed_init(&lp_truth(design, cfg.max_horizon, cfg.lags), *sd, &mut rng)
        }
    };
    let ols = estimator.with_ols.then(|| ols_theta.as_slice().to_vec());
    estimate_record(&model, &init, ols, rep, estimator, target)
}

fn mgarch_replication(
    design: &MgarchDesign,
    cfg: &super::dgp::MgarchConfig,
    rep: u64,
    estimator: &EstimatorSpec,
    target: usize,
) -> Result<RepRecord> {
    let mut rng = replication_rng(cfg.seed, rep);
    let (data, _clipped) = design.simulate_with(&mut rng);
    let model = BekkMoments::new(data, cfg.basis_dim)?;
    let init = match &estimator.init {
        InitMode::LeastSquares => {
            return Err(Error::Config(
                "least-squares initialization is undefined for the volatility family".into(),
            ))
        }
        InitMode::TruthPerturbed { sd } => perturbed_init(design.theta0(), *sd, &mut rng),
    };
    estimate_record(&model, &init, None, rep, estimator, target)
}
