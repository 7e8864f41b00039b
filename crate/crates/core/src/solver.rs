//! Outer minimization: profiled dual objective plus SCAD penalty on the
//! parameter, solved by proximal ADAM, with BIC tuning of the two penalty
//! levels.
//!
//! Each outer iteration (i) re-solves the inner dual at the current
//! parameter (warm-started from the previous multiplier), (ii) takes an
//! ADAM step on the envelope gradient of the profiled objective, and
//! (iii) applies the SCAD proximal map coordinate-wise using the
//! ADAM-preconditioned step size. A plateau rule halves the ADAM step when
//! the penalized objective stops improving, otherwise the constant-step
//! scheme oscillates at the step scale and the sup-norm termination
//! criterion can never fire.

use crate::dual::{maximize_dual, profile_gradient, DualOptions, DualSolution};
use crate::error::{Error, Result};
use crate::moments::{moment_matrix, sample_moments, MomentModel};
use crate::penalty::PenaltySpec;
use nalgebra::DVector;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct AdamOptions {
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Clamp on the per-coordinate preconditioner `1/(sqrt(vhat)+eps)`:
    /// coordinates with vanishing curvature would otherwise receive an
    /// unbounded proximal step and be thresholded away regardless of the
    /// penalty level.
    pub max_precondition: f64,
}

impl Default for AdamOptions {
    fn default() -> Self {
        Self { step: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8, max_precondition: 10.0 }
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub adam: AdamOptions,
    pub max_outer: usize,
    /// Stop when consecutive iterates differ by at most this in sup norm.
    pub theta_tol: f64,
    /// Halve the ADAM step after this many iterations without objective
    /// improvement; step decay stops at `step * min_step_factor`.
    pub plateau_patience: usize,
    pub min_step_factor: f64,
    /// Slack allowed in the monotone-descent diagnostic on the trace.
    pub adam_tolerance: f64,
    pub dual: DualOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            adam: AdamOptions::default(),
            max_outer: 2000,
            theta_tol: 1e-6,
            plateau_patience: 10,
            min_step_factor: 1e-6,
            adam_tolerance: 1e-3,
            dual: DualOptions::default(),
        }
    }
}

/// A fitted doubly penalized estimate.
#[derive(Debug, Clone)]
pub struct PelFit {
    pub theta: DVector<f64>,
    /// Indices of exactly nonzero coordinates of `theta`.
    pub active_set: Vec<usize>,
    /// Inner dual solution at the returned parameter.
    pub dual: DualSolution,
    pub nu: f64,
    pub pi: f64,
    pub bic: f64,
    /// Penalized profile objective at each visited iterate.
    pub trace: Vec<f64>,
    pub outer_iterations: usize,
}

fn penalty_sum(theta: &DVector<f64>, p: &PenaltySpec) -> f64 {
    theta.iter().map(|&v| p.value(v.abs()).unwrap_or(f64::INFINITY)).sum()
}

/// Solve the inner dual at `theta`, retrying from a cold start when a warm
/// start fails to converge.
fn inner_solve(
    model: &(impl MomentModel + ?Sized),
    theta: &DVector<f64>,
    p2: &PenaltySpec,
    dual_opts: &DualOptions,
    warm: Option<&DVector<f64>>,
) -> Result<DualSolution> {
    let g = moment_matrix(model, theta)?;
    let mut opts = dual_opts.clone();
    opts.warm_start = warm.cloned();
    let sol = maximize_dual(&g, p2, &opts)?;
    if sol.converged || warm.is_none() {
        return Ok(sol);
    }
    opts.warm_start = None;
    maximize_dual(&g, p2, &opts)
}

/// Minimize the penalized profile objective from `theta0`.
///
/// `p1` penalizes the parameter (SCAD in the baseline configuration), `p2`
/// the dual multiplier (Lasso). Returns the best visited iterate, so the
/// final penalized objective never exceeds the objective at `theta0`.
pub fn fit_pel<M: MomentModel + ?Sized>(
    model: &M,
    p1: &PenaltySpec,
    p2: &PenaltySpec,
    theta0: &DVector<f64>,
    opts: &FitOptions,
) -> Result<PelFit> {
    let p = model.param_dim();
    if theta0.len() != p {
        return Err(Error::Config(format!(
            "initial parameter has length {}, model expects {p}",
            theta0.len()
        )));
    }
    if theta0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("initial parameter contains non-finite values".into()));
    }

    let mut theta = theta0.clone();
    let mut dual = inner_solve(model, &theta, p2, &opts.dual, None).map_err(|e| {
        Error::NonConvergence(format!("inner dual failed at the initial parameter: {e}"))
    })?;
    if !dual.converged {
        return Err(Error::NonConvergence(format!(
            "inner dual hit its iteration cap at the initial parameter ({} steps)",
            dual.iterations
        )));
    }

    let mut trace = Vec::with_capacity(opts.max_outer.min(4096) + 1);
    let mut objective = dual.objective + penalty_sum(&theta, p1);
    trace.push(objective);

    let mut best_theta = theta.clone();
    let mut best_dual = dual.clone();
    let mut best_objective = objective;

    let mut m: DVector<f64> = DVector::zeros(p);
    let mut v: DVector<f64> = DVector::zeros(p);
    let mut step = opts.adam.step;
    let min_step = opts.adam.step * opts.min_step_factor;
    let mut stall = 0usize;
    let mut small_moves = 0usize;
    let mut iterations = 0usize;

    for k in 1..=opts.max_outer {
        iterations = k;
        let grad = profile_gradient(model, &theta, &dual)?;

        let (b1, b2) = (opts.adam.beta1, opts.adam.beta2);
        let bias1 = 1.0 - b1.powi(k as i32);
        let bias2 = 1.0 - b2.powi(k as i32);
        let mut next: DVector<f64> = DVector::zeros(p);
        let mut delta: f64 = 0.0;
        for j in 0..p {
            m[j] = b1 * m[j] + (1.0 - b1) * grad[j];
            v[j] = b2 * v[j] + (1.0 - b2) * grad[j] * grad[j];
            let mhat = m[j] / bias1;
            let vhat: f64 = v[j] / bias2;
            let precond = (1.0 / (vhat.sqrt() + opts.adam.eps)).min(opts.adam.max_precondition);
            let coord_step = step * precond;
            next[j] = p1.prox(theta[j] - coord_step * mhat, coord_step);
            delta = delta.max((next[j] - theta[j]).abs());
        }
        theta = next;

        dual = inner_solve(model, &theta, p2, &opts.dual, Some(&dual.lambda)).map_err(|e| {
            Error::NonConvergence(format!("inner dual failed at outer iteration {k}: {e}"))
        })?;
        if !dual.converged {
            return Err(Error::NonConvergence(format!(
                "inner dual hit its iteration cap at outer iteration {k}"
            )));
        }
        objective = dual.objective + penalty_sum(&theta, p1);
        if !objective.is_finite() {
            return Err(Error::NonConvergence(format!(
                "non-finite penalized objective at outer iteration {k}; last good objective {best_objective:.6e}"
            )));
        }
        trace.push(objective);

        if objective < best_objective - 1e-14 {
            best_objective = objective;
            best_theta.copy_from(&theta);
            best_dual = dual.clone();
            stall = 0;
        } else {
            stall += 1;
            if stall >= opts.plateau_patience && step > min_step {
                step = (step * 0.5).max(min_step);
                stall = 0;
            }
        }

        // Momentum zero-crossings produce one-off tiny moves; require the
        // sup-norm criterion on consecutive iterations before stopping.
        if delta <= opts.theta_tol {
            small_moves += 1;
            if small_moves >= 3 {
                break;
            }
        } else {
            small_moves = 0;
        }
    }

    let active_set = (0..p).filter(|&j| best_theta[j] != 0.0).collect();
    let mut fit = PelFit {
        theta: best_theta,
        active_set,
        dual: best_dual,
        nu: p2.tau,
        pi: p1.tau,
        bic: f64::NAN,
        trace,
        outer_iterations: iterations,
    };
    fit.bic = bic_score(&fit, model)?;
    Ok(fit)
}

/// BIC-type score `log(|gbar(theta)|_2^2) + (log n / n) (df_theta + df_lambda)`
/// with degrees of freedom counted as nonzero coordinates. A perfect moment
/// fit returns the `-inf` sentinel (degenerate, always preferred).
pub fn bic_score<M: MomentModel + ?Sized>(fit: &PelFit, model: &M) -> Result<f64> {
    let sm = sample_moments(model, &fit.theta)?;
    let gnorm2 = sm.gbar.norm_squared();
    let n = model.n_obs() as f64;
    let df = (fit.active_set.len() + fit.dual.active_set.len()) as f64;
    if gnorm2 == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(gnorm2.ln() + n.ln() / n * df)
}

/// Candidate values for the two penalty levels, each sorted ascending.
#[derive(Debug, Clone)]
pub struct TuningGrid {
    pub nu_values: Vec<f64>,
    pub pi_values: Vec<f64>,
}

impl TuningGrid {
    pub fn new(mut nu_values: Vec<f64>, mut pi_values: Vec<f64>) -> Result<Self> {
        if nu_values.is_empty() || pi_values.is_empty() {
            return Err(Error::Config("tuning grid must be nonempty".into()));
        }
        if nu_values.iter().chain(pi_values.iter()).any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("tuning values must be positive and finite".into()));
        }
        nu_values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pi_values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self { nu_values, pi_values })
    }

    /// Log-spaced default: `points` values per penalty on
    /// `[0.01, 1] * sqrt(log r / n)`.
    pub fn default_for(n: usize, r: usize, points: usize) -> Self {
        let scale = ((r.max(2) as f64).ln() / n as f64).sqrt();
        let values = |count: usize| -> Vec<f64> {
            if count == 1 {
                return vec![0.1 * scale];
            }
            (0..count)
                .map(|i| {
                    let t = i as f64 / (count - 1) as f64;
                    0.01f64.powf(1.0 - t) * scale
                })
                .collect()
        };
        Self { nu_values: values(points), pi_values: values(points) }
    }
}

/// Fit every `(nu, pi)` pair in the grid and keep the smallest BIC; exact
/// ties resolve toward larger (sparser) tuning values. Chains with a common
/// `nu` run in parallel; within a chain the fits walk `pi` upward reusing
/// the previous estimate as a warm start.
pub fn select_tuning<M: MomentModel + Sync + ?Sized>(
    model: &M,
    grid: &TuningGrid,
    theta0: &DVector<f64>,
    opts: &FitOptions,
) -> Result<PelFit> {
    let chains: Vec<(usize, Vec<std::result::Result<PelFit, String>>)> = grid
        .nu_values
        .par_iter()
        .enumerate()
        .map(|(ni, &nu)| {
            let mut results = Vec::with_capacity(grid.pi_values.len());
            let mut start = theta0.clone();
            for &pi in &grid.pi_values {
                let p1 = match PenaltySpec::scad(pi) {
                    Ok(p) => p,
                    Err(e) => {
                        results.push(Err(format!("nu={nu:.4e} pi={pi:.4e}: {e}")));
                        continue;
                    }
                };
                let p2 = match PenaltySpec::lasso(nu) {
                    Ok(p) => p,
                    Err(e) => {
                        results.push(Err(format!("nu={nu:.4e} pi={pi:.4e}: {e}")));
                        continue;
                    }
                };
                match fit_pel(model, &p1, &p2, &start, opts) {
                    Ok(fit) => {
                        start.copy_from(&fit.theta);
                        results.push(Ok(fit));
                    }
                    Err(e) => results.push(Err(format!("nu={nu:.4e} pi={pi:.4e}: {e}"))),
                }
            }
            (ni, results)
        })
        .collect();

    let mut best: Option<PelFit> = None;
    let mut failures = Vec::new();
    let mut ordered = chains;
    ordered.sort_by_key(|(ni, _)| *ni);
    for (_, results) in ordered {
        for result in results {
            match result {
                Ok(fit) => {
                    let replace = match &best {
                        None => true,
                        // ascending iteration order: <= prefers the later,
                        // larger (nu, pi) pair on exact ties
                        Some(cur) => fit.bic <= cur.bic,
                    };
                    if replace {
                        best = Some(fit);
                    }
                }
                Err(msg) => failures.push(msg),
            }
        }
    }
    best.ok_or(Error::AllTuningFailed(failures))
}
