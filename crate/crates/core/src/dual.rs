//! Inner penalized dual maximization over the Lagrange multiplier.
//!
//! For fixed per-observation moments `g_t in R^r`, maximize the concave
//! objective
//!
//! ```text
//! f(lambda) = (1/n) sum_t log(1 + lambda' g_t) - sum_j P_nu(|lambda_j|)
//! ```
//!
//! over the Owen domain `1 + lambda' g_t >= 1/n`. The L1 nonsmoothness is
//! handled by splitting `lambda = x+ - x-` with `x+, x- >= 0` and running a
//! damped-Newton interior-point scheme: log-barriers on the split variables
//! and on the domain slacks, barrier parameter cut by 0.2 per round,
//! feasibility preserved by fraction-to-boundary and backtracking line
//! search. With `nu = 0` the split is degenerate and a plain damped Newton
//! on the unpenalized empirical-likelihood objective is used instead.
//!
//! The Newton systems exploit that the log-likelihood curvature is a rank-n
//! update: for the split system `-H = D + V'V` with diagonal `D` and
//! `V in R^{n x 2r}`, so directions come from an n x n Cholesky solve
//! (Woodbury) rather than a (2r)^3 factorization.

use crate::error::{Error, Result};
use crate::moments::MomentModel;
use crate::penalty::{PenaltyKind, PenaltySpec};
use nalgebra::{DMatrix, DVector};

/// Options for [`maximize_dual`]. Defaults follow the recorded conventions:
/// KKT tolerance 1e-8, at most 200 Newton steps, barrier decay 0.2, ridge
/// 1e-10 on near-singular systems, active-set threshold 1e-8.
#[derive(Debug, Clone)]
pub struct DualOptions {
    pub kkt_tol: f64,
    pub max_newton: usize,
    pub barrier_init: f64,
    pub barrier_decay: f64,
    pub barrier_min: f64,
    pub active_tol: f64,
    pub ridge: f64,
    /// Starting multiplier from a previous solve at a nearby parameter.
    pub warm_start: Option<DVector<f64>>,
    /// Barrier restart level used when `warm_start` is present.
    pub warm_barrier_init: f64,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-8,
            max_newton: 200,
            barrier_init: 1e-2,
            barrier_decay: 0.2,
            barrier_min: 1e-12,
            active_tol: 1e-8,
            ridge: 1e-10,
            warm_start: None,
            warm_barrier_init: 1e-9,
        }
    }
}

/// Solution of the inner dual problem at a fixed parameter.
#[derive(Debug, Clone)]
pub struct DualSolution {
    /// Maximizer `lambda_hat in R^r`.
    pub lambda: DVector<f64>,
    /// Indices with `|lambda_j| > active_tol`.
    pub active_set: Vec<usize>,
    /// Attained penalized objective `f(lambda_hat)`.
    pub objective: f64,
    /// Implied observation weights `pi_t = 1 / (n (1 + lambda' g_t))`.
    pub weights: DVector<f64>,
    /// KKT vector `eta_hat` evaluated on the active support.
    pub eta: DVector<f64>,
    /// Newton steps consumed.
    pub iterations: usize,
    pub converged: bool,
}

/// KKT vector `eta_j = (1/n) sum_t g_{t,j} / (1 + lambda_R' g_{t,R})`,
/// where `R` keeps coordinates with `|lambda_j| > active_tol`.
pub fn kkt_eta(g: &DMatrix<f64>, lambda: &DVector<f64>, active_tol: f64) -> DVector<f64> {
    let (n, r) = (g.nrows(), g.ncols());
    let mut eta = DVector::zeros(r);
    for t in 0..n {
        let mut a = 1.0;
        for j in 0..r {
            if lambda[j].abs() > active_tol {
                a += lambda[j] * g[(t, j)];
            }
        }
        let w = 1.0 / a;
        for j in 0..r {
            eta[j] += g[(t, j)] * w;
        }
    }
    eta / n as f64
}

/// Sup-norm of the penalized stationarity residual at `lambda`:
/// active coordinates must balance `P'(|lambda_j|) sgn(lambda_j)`, inactive
/// ones must stay inside the subgradient band `[-P'(0+), P'(0+)]`.
fn kkt_residual(eta: &DVector<f64>, lambda: &DVector<f64>, penalty: &PenaltySpec, active_tol: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..lambda.len() {
        let res = if lambda[j].abs() > active_tol {
            let target = penalty.deriv(lambda[j].abs()).unwrap_or(penalty.tau) * lambda[j].signum();
            (eta[j] - target).abs()
        } else {
            (eta[j].abs() - penalty.deriv_zero_plus()).max(0.0)
        };
        worst = worst.max(res);
    }
    worst
}

/// Magnitude below which a multiplier coordinate is treated as a zero
/// candidate during crossover. Coordinates with `|eta_j|` grazing the
/// subgradient boundary settle at `mu / (nu - |eta_j|)` under the barrier
/// and can sit well above `active_tol` without being genuinely active.
const GRAZE_TOL: f64 = 1e-4;

/// Exact stationarity test at `lambda`, no modifications.
fn accept_exact(
    g: &DMatrix<f64>,
    lambda: &DVector<f64>,
    penalty: &PenaltySpec,
    opts: &DualOptions,
) -> bool {
    let eta = kkt_eta(g, lambda, opts.active_tol);
    kkt_residual(&eta, lambda, penalty, opts.active_tol) <= opts.kkt_tol
}

/// Sign-frozen damped Newton on a fixed support. Returns the reduced
/// solution, whether the reduced gradient met tolerance, and the Newton
/// steps consumed.
fn reduced_newton(
    gr: &DMatrix<f64>,
    signs: &DVector<f64>,
    mut lam: DVector<f64>,
    penalty: &PenaltySpec,
    opts: &DualOptions,
    floor: f64,
    max_steps: usize,
) -> (DVector<f64>, bool, usize) {
    let (n, k) = (gr.nrows(), gr.ncols());
    let nf = n as f64;
    let mut a = DVector::zeros(n);
    let objective = |lam: &DVector<f64>, a: &mut DVector<f64>| -> f64 {
        a.fill(1.0);
        a.gemv(1.0, gr, lam, 1.0);
        if a.min() <= floor {
            return f64::NEG_INFINITY;
        }
        a.iter().map(|&v| v.ln()).sum::<f64>() / nf
            - lam.iter().map(|&l| penalty.value(l.abs()).unwrap_or(f64::INFINITY)).sum::<f64>()
    };
    let mut steps = 0usize;
    loop {
        let f0 = objective(&lam, &mut a);
        if !f0.is_finite() {
            return (lam, false, steps);
        }
        let w = a.map(|v| 1.0 / v);
        let mut grad = DVector::zeros(k);
        grad.gemv_tr(1.0 / nf, gr, &w, 0.0);
        for c in 0..k {
            grad[c] -= penalty.deriv(lam[c].abs()).unwrap_or(penalty.tau) * signs[c];
        }
        if grad.amax() <= 0.1 * opts.kkt_tol {
            return (lam, true, steps);
        }
        if steps >= max_steps {
            return (lam, false, steps);
        }
        let mut b = gr.clone();
        for t in 0..n {
            let s = w[t] / nf.sqrt();
            for c in 0..k {
                b[(t, c)] *= s;
            }
        }
        let mut h = b.transpose() * &b;
        for c in 0..k {
            h[(c, c)] += penalty.second_deriv(lam[c].abs());
        }
        let delta = loop {
            match h.clone().cholesky() {
                Some(ch) => break ch.solve(&grad),
                None => {
                    for c in 0..k {
                        h[(c, c)] += opts.ridge.max(1e-12);
                    }
                }
            }
        };
        let slope = grad.dot(&delta);
        let mut alpha = max_feasible_step(gr, &a, &delta, floor);
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &lam + alpha * &delta;
            let f1 = objective(&trial, &mut a);
            if f1.is_finite() && f1 >= f0 + 1e-4 * alpha * slope {
                lam = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        steps += 1;
        if !accepted {
            return (lam, false, steps);
        }
    }
}

/// Working-set solve: sign-frozen Newton on a candidate support, removing
/// coordinates whose sign flips and admitting the worst subgradient
/// violators, until the full KKT system holds. Fast when warm-started with
/// a nearly correct support; returns `None` (falling back to the barrier
/// path) when it stalls or exhausts the step budget.
fn active_set_solve(
    g: &DMatrix<f64>,
    penalty: &PenaltySpec,
    opts: &DualOptions,
    floor: f64,
    seed: Option<&DVector<f64>>,
    steps_used: &mut usize,
) -> Option<DVector<f64>> {
    let r = g.ncols();
    let band = penalty.deriv_zero_plus();

    let mut support: Vec<usize> = Vec::new();
    let mut signs: Vec<f64> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    if let Some(seed) = seed {
        // prune grazers from the seed; violation rounds re-admit anything
        // genuinely active
        let mut scale = 1.0;
        for _ in 0..40 {
            let scaled = seed.map(|v| if v.abs() > GRAZE_TOL { v * scale } else { 0.0 });
            if feasible(g, &scaled, floor) {
                for j in 0..r {
                    if scaled[j] != 0.0 {
                        support.push(j);
                        signs.push(scaled[j].signum());
                        values.push(scaled[j]);
                    }
                }
                break;
            }
            scale *= 0.5;
        }
    }

    for _round in 0..60 {
        if *steps_used >= opts.max_newton {
            return None;
        }
        let full = if support.is_empty() {
            DVector::zeros(r)
        } else {
            let k = support.len();
            let gr = DMatrix::from_fn(g.nrows(), k, |t, c| g[(t, support[c])]);
            let sv = DVector::from_vec(signs.clone());
            let lam0 = DVector::from_vec(values.clone());
            let budget = opts.max_newton.saturating_sub(*steps_used).min(50);
            let (lam, converged, used) =
                reduced_newton(&gr, &sv, lam0, penalty, opts, floor, budget);
            *steps_used += used;
            if !converged {
                // drop sign-flipped coordinates and retry once per round
                let crossed: Vec<usize> =
                    (0..k).filter(|&c| lam[c] * signs[c] < 0.0).collect();
                if crossed.is_empty() {
                    return None;
                }
                for &c in crossed.iter().rev() {
                    support.remove(c);
                    signs.remove(c);
                    values.remove(c);
                }
                continue;
            }
            // converged on the frozen signs; sign flips mean the support
            // guess was wrong
            let crossed: Vec<usize> = (0..k).filter(|&c| lam[c] * signs[c] < 0.0).collect();
            if !crossed.is_empty() {
                for &c in crossed.iter().rev() {
                    support.remove(c);
                    signs.remove(c);
                    values.remove(c);
                }
                continue;
            }
            for c in 0..k {
                values[c] = lam[c];
            }
            let mut full = DVector::zeros(r);
            for c in 0..k {
                full[support[c]] = lam[c];
            }
            full
        };

        let eta = kkt_eta(g, &full, opts.active_tol);
        if kkt_residual(&eta, &full, penalty, opts.active_tol) <= opts.kkt_tol {
            if feasible(g, &full, floor) || support.is_empty() {
                return Some(full);
            }
            return None;
        }
        // admit the worst violators outside the current support
        let mut violators: Vec<(f64, usize)> = (0..r)
            .filter(|j| !support.contains(j))
            .map(|j| (eta[j].abs() - band, j))
            .filter(|&(v, _)| v > opts.kkt_tol)
            .collect();
        if violators.is_empty() {
            // violation must be inside the support: reduced solve tolerance
            // too loose for the outer test, give up and let the barrier run
            return None;
        }
        violators.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, j) in violators.iter().take(5) {
            let pos = support.binary_search(&j).unwrap_err();
            support.insert(pos, j);
            signs.insert(pos, eta[j].signum());
            values.insert(pos, 0.0);
        }
    }
    None
}

/// Maximize the penalized dual over the Owen domain `1 + lambda' g_t >= 1/n`.
///
/// `g` is the `n x r` matrix of per-observation moments at the current
/// parameter. `penalty` is the multiplier penalty (`tau = 0` recovers the
/// classical empirical-likelihood dual). Reaching the Newton cap returns a
/// solution flagged `converged = false` rather than an error.
pub fn maximize_dual(
    g: &DMatrix<f64>,
    penalty: &PenaltySpec,
    opts: &DualOptions,
) -> Result<DualSolution> {
    let (n, r) = (g.nrows(), g.ncols());
    if n == 0 || r == 0 {
        return Err(Error::Config("dual solver needs a nonempty moment matrix".into()));
    }
    for t in 0..n {
        for j in 0..r {
            if !g[(t, j)].is_finite() {
                return Err(Error::NumericalEval {
                    t,
                    detail: format!("moment column {j} is {}", g[(t, j)]),
                });
            }
        }
    }
    if penalty.tau == 0.0 {
        for j in 0..r {
            if (0..n).all(|t| g[(t, j)] == 0.0) {
                return Err(Error::UnboundedDirection(format!(
                    "moment column {j} is identically zero and the multiplier is unpenalized"
                )));
            }
        }
        solve_unpenalized(g, penalty, opts)
    } else {
        solve_split_barrier(g, penalty, opts)
    }
}

fn floor_of(n: usize) -> f64 {
    1.0 / n as f64
}

/// `1 + lambda' g_t` for all t.
fn slacks(g: &DMatrix<f64>, lambda: &DVector<f64>, out: &mut DVector<f64>) {
    out.fill(1.0);
    out.gemv(1.0, g, lambda, 1.0);
}

fn log_likelihood(a: &DVector<f64>) -> f64 {
    a.iter().map(|&v| v.ln()).sum::<f64>() / a.len() as f64
}

fn penalty_sum(lambda: &DVector<f64>, penalty: &PenaltySpec) -> f64 {
    lambda.iter().map(|&l| penalty.value(l.abs()).unwrap_or(f64::INFINITY)).sum()
}

fn finish(
    g: &DMatrix<f64>,
    lambda: DVector<f64>,
    penalty: &PenaltySpec,
    opts: &DualOptions,
    iterations: usize,
    converged: bool,
) -> DualSolution {
    let n = g.nrows();
    let mut a = DVector::zeros(n);
    slacks(g, &lambda, &mut a);
    let objective = log_likelihood(&a) - penalty_sum(&lambda, penalty);
    let weights = a.map(|v| 1.0 / (n as f64 * v));
    let eta = kkt_eta(g, &lambda, opts.active_tol);
    let active_set =
        (0..lambda.len()).filter(|&j| lambda[j].abs() > opts.active_tol).collect();
    DualSolution { lambda, active_set, objective, weights, eta, iterations, converged }
}

/// Classical damped Newton for `nu = 0`: feasibility kept by line search.
fn solve_unpenalized(
    g: &DMatrix<f64>,
    penalty: &PenaltySpec,
    opts: &DualOptions,
) -> Result<DualSolution> {
    let (n, r) = (g.nrows(), g.ncols());
    let floor = floor_of(n);
    let mut lambda = match &opts.warm_start {
        Some(l0) if l0.len() == r && feasible(g, l0, floor) => l0.clone(),
        _ => DVector::zeros(r),
    };
    let mut a = DVector::zeros(n);
    let mut steps = 0usize;

    loop {
        slacks(g, &lambda, &mut a);
        let w = a.map(|v| 1.0 / v);
        // grad = (1/n) G' w
        let mut grad = DVector::zeros(r);
        grad.gemv_tr(1.0 / n as f64, g, &w, 0.0);
        if grad.amax() <= opts.kkt_tol {
            return Ok(finish(g, lambda, penalty, opts, steps, true));
        }
        if steps >= opts.max_newton {
            return Ok(finish(g, lambda, penalty, opts, steps, false));
        }
        // H = (1/n) G' diag(w^2) G
        let mut b = g.clone();
        for t in 0..n {
            let s = w[t] / (n as f64).sqrt();
            for j in 0..r {
                b[(t, j)] *= s;
            }
        }
        let mut h = b.transpose() * &b;
        let delta = loop {
            match h.clone().cholesky() {
                Some(ch) => break ch.solve(&grad),
                None => {
                    for j in 0..r {
                        h[(j, j)] += opts.ridge.max(1e-14);
                    }
                }
            }
        };
        // Newton ascent step with feasibility and Armijo backtracking.
        let f0 = log_likelihood(&a);
        let slope = grad.dot(&delta);
        let mut alpha = max_feasible_step(g, &a, &delta, floor);
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &lambda + alpha * &delta;
            slacks(g, &trial, &mut a);
            if a.min() > floor && log_likelihood(&a) >= f0 + 1e-4 * alpha * slope {
                lambda = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        steps += 1;
        if !accepted {
            return Ok(finish(g, lambda, penalty, opts, steps, false));
        }
    }
}

fn feasible(g: &DMatrix<f64>, lambda: &DVector<f64>, floor: f64) -> bool {
    let mut a = DVector::zeros(g.nrows());
    slacks(g, lambda, &mut a);
    a.min() > floor
}

/// Largest step keeping `1 + (lambda + alpha delta)' g_t` strictly above the
/// floor; the slack is linear in alpha so the limit is exact.
fn max_feasible_step(g: &DMatrix<f64>, a: &DVector<f64>, delta: &DVector<f64>, floor: f64) -> f64 {
    let mut da = DVector::zeros(g.nrows());
    da.gemv(1.0, g, delta, 0.0);
    let mut alpha: f64 = 1.0;
    for t in 0..g.nrows() {
        if da[t] < 0.0 {
            alpha = alpha.min(0.99 * (a[t] - floor) / (-da[t]));
        }
    }
    alpha.max(1e-16)
}

struct SplitState {
    xp: DVector<f64>,
    xm: DVector<f64>,
}

impl SplitState {
    fn lambda(&self) -> DVector<f64> {
        &self.xp - &self.xm
    }
}

/// Interior-point solve of the split-variable penalized dual.
fn solve_split_barrier(
    g: &DMatrix<f64>,
    penalty: &PenaltySpec,
    opts: &DualOptions,
) -> Result<DualSolution> {
    let (n, r) = (g.nrows(), g.ncols());
    let nf = n as f64;
    let floor = floor_of(n);

    let (mut state, mut mu) = match &opts.warm_start {
        Some(l0) if l0.len() == r && feasible(g, l0, floor) => {
            let pad = 1e-8;
            let xp = l0.map(|v| v.max(0.0) + pad);
            let xm = l0.map(|v| (-v).max(0.0) + pad);
            (SplitState { xp, xm }, opts.warm_barrier_init)
        }
        _ => {
            let x0 = DVector::from_element(r, 1e-3);
            (SplitState { xp: x0.clone(), xm: x0 }, opts.barrier_init)
        }
    };

    let mut a = DVector::zeros(n);
    let mut steps = 0usize;
    let lasso = matches!(penalty.kind, PenaltyKind::Lasso);

    // A warm start may already satisfy the stationarity system; otherwise
    // the working-set path usually closes the problem without touching the
    // barrier at all. The barrier stages below are the fallback.
    {
        let lambda = state.lambda();
        if accept_exact(g, &lambda, penalty, opts) {
            return Ok(finish(g, lambda, penalty, opts, 0, true));
        }
        let seed = opts.warm_start.as_ref().filter(|l| l.len() == r);
        if let Some(l) = active_set_solve(g, penalty, opts, floor, seed, &mut steps) {
            return Ok(finish(g, l, penalty, opts, steps, true));
        }
    }

    loop {
        // Newton iterations for the current barrier level.
        for _ in 0..40 {
            if steps >= opts.max_newton {
                return Ok(finish(g, state.lambda(), penalty, opts, steps, false));
            }
            let lambda = state.lambda();
            slacks(g, &lambda, &mut a);
            let w = a.map(|v| 1.0 / v);
            let s_inv = a.map(|v| 1.0 / (v - floor));

            // q = (1/n) G'w + mu G's_inv  (log-likelihood + domain barrier)
            let mut q = DVector::zeros(r);
            q.gemv_tr(1.0 / nf, g, &w, 0.0);
            q.gemv_tr(mu, g, &s_inv, 1.0);

            let u = &state.xp + &state.xm;
            let pderiv = u.map(|v| penalty.deriv(v).unwrap_or(penalty.tau));
            let grad_p = DVector::from_fn(r, |j, _| q[j] - pderiv[j] + mu / state.xp[j]);
            let grad_m = DVector::from_fn(r, |j, _| -q[j] - pderiv[j] + mu / state.xm[j]);

            // curvature coefficient per observation
            let kdiag =
                DVector::from_fn(n, |t, _| w[t] * w[t] / nf + mu * s_inv[t] * s_inv[t]);
            let dp = DVector::from_fn(r, |j, _| mu / (state.xp[j] * state.xp[j]));
            let dm = DVector::from_fn(r, |j, _| mu / (state.xm[j] * state.xm[j]));

            let (delta_p, delta_m) = if lasso {
                woodbury_direction(g, &kdiag, &dp, &dm, &grad_p, &grad_m, opts.ridge)
            } else {
                dense_direction(g, &kdiag, &dp, &dm, penalty, &u, &grad_p, &grad_m, opts.ridge)
            };

            let decrement = grad_p.dot(&delta_p) + grad_m.dot(&delta_m);
            if decrement.abs() / 2.0 <= (1e-2 * mu).max(1e-17) {
                break;
            }

            // fraction-to-boundary on the split variables
            let mut alpha: f64 = 1.0;
            for j in 0..r {
                if delta_p[j] < 0.0 {
                    alpha = alpha.min(-0.99 * state.xp[j] / delta_p[j]);
                }
                if delta_m[j] < 0.0 {
                    alpha = alpha.min(-0.99 * state.xm[j] / delta_m[j]);
                }
            }
            // exact limit on the domain slack
            let dl = &delta_p - &delta_m;
            let mut da = DVector::zeros(n);
            da.gemv(1.0, g, &dl, 0.0);
            for t in 0..n {
                if da[t] < 0.0 {
                    alpha = alpha.min(0.99 * (a[t] - floor) / (-da[t]));
                }
            }

            let f0 = barrier_objective(g, penalty, &state, mu, floor, &mut a);
            let slope = decrement;
            let mut accepted = false;
            for _ in 0..60 {
                let trial = SplitState {
                    xp: &state.xp + alpha * &delta_p,
                    xm: &state.xm + alpha * &delta_m,
                };
                let f1 = barrier_objective(g, penalty, &trial, mu, floor, &mut a);
                if f1.is_finite() && f1 >= f0 + 1e-4 * alpha * slope {
                    state = trial;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            steps += 1;
            if !accepted {
                break;
            }
            // Stationarity of the true (non-barrier) problem.
            if accept_exact(g, &state.lambda(), penalty, opts) {
                return Ok(finish(g, state.lambda(), penalty, opts, steps, true));
            }
        }

        // Once the barrier is mild, attempt the working-set crossover; on
        // success it removes the remaining barrier perturbation exactly.
        if mu <= 1e-5 {
            let lambda = state.lambda();
            if let Some(l) = active_set_solve(g, penalty, opts, floor, Some(&lambda), &mut steps)
            {
                return Ok(finish(g, l, penalty, opts, steps, true));
            }
        }
        if mu <= opts.barrier_min {
            return Ok(finish(g, state.lambda(), penalty, opts, steps, false));
        }
        mu = (mu * opts.barrier_decay).max(opts.barrier_min * 0.999_999);
    }
}

fn barrier_objective(
    g: &DMatrix<f64>,
    penalty: &PenaltySpec,
    state: &SplitState,
    mu: f64,
    floor: f64,
    a: &mut DVector<f64>,
) -> f64 {
    if state.xp.iter().any(|&v| v <= 0.0) || state.xm.iter().any(|&v| v <= 0.0) {
        return f64::NEG_INFINITY;
    }
    let lambda = state.lambda();
    slacks(g, &lambda, a);
    if a.min() <= floor {
        return f64::NEG_INFINITY;
    }
    let mut f = log_likelihood(a);
    for j in 0..lambda.len() {
        let u = state.xp[j] + state.xm[j];
        f -= penalty.value(u).unwrap_or(f64::INFINITY);
        f += mu * (state.xp[j].ln() + state.xm[j].ln());
    }
    f += mu * a.iter().map(|&v| (v - floor).ln()).sum::<f64>();
    f
}

/// Newton direction via the Woodbury identity. The negated Hessian is
/// `D + V'V` with `D = diag(dp, dm)` and `V = [B, -B]`, `B = sqrt(kdiag) G`,
/// so only an n x n system is factored.
fn woodbury_direction(
    g: &DMatrix<f64>,
    kdiag: &DVector<f64>,
    dp: &DVector<f64>,
    dm: &DVector<f64>,
    grad_p: &DVector<f64>,
    grad_m: &DVector<f64>,
    ridge: f64,
) -> (DVector<f64>, DVector<f64>) {
    let (n, r) = (g.nrows(), g.ncols());
    let mut b = g.clone();
    for t in 0..n {
        let s = kdiag[t].sqrt();
        for j in 0..r {
            b[(t, j)] *= s;
        }
    }
    let dp_inv = dp.map(|v| 1.0 / v);
    let dm_inv = dm.map(|v| 1.0 / v);

    // core = I_n + B (dp_inv + dm_inv) B'
    let sum_inv = &dp_inv + &dm_inv;
    let mut bs = b.clone();
    for j in 0..r {
        let s = sum_inv[j];
        for t in 0..n {
            bs[(t, j)] *= s;
        }
    }
    let mut core = &bs * b.transpose();
    for t in 0..n {
        core[(t, t)] += 1.0;
    }

    // rhs in the reduced space: B (dp_inv grad_p - dm_inv grad_m)
    let zp = dp_inv.component_mul(grad_p);
    let zm = dm_inv.component_mul(grad_m);
    let mut rhs = DVector::zeros(n);
    rhs.gemv(1.0, &b, &(&zp - &zm), 0.0);

    let y = loop {
        match core.clone().cholesky() {
            Some(ch) => break ch.solve(&rhs),
            None => {
                for t in 0..n {
                    core[(t, t)] += ridge.max(1e-12);
                }
            }
        }
    };

    // back-substitute: delta = D^{-1} grad - D^{-1} V' y
    let mut bty = DVector::zeros(r);
    bty.gemv_tr(1.0, &b, &y, 0.0);
    let delta_p = &zp - &dp_inv.component_mul(&bty);
    let delta_m = &zm + &dm_inv.component_mul(&bty);
    (delta_p, delta_m)
}

/// Dense fallback for penalties with curvature (non-Lasso second penalty).
#[allow(clippy::too_many_arguments)]
fn dense_direction(
    g: &DMatrix<f64>,
    kdiag: &DVector<f64>,
    dp: &DVector<f64>,
    dm: &DVector<f64>,
    penalty: &PenaltySpec,
    u: &DVector<f64>,
    grad_p: &DVector<f64>,
    grad_m: &DVector<f64>,
    ridge: f64,
) -> (DVector<f64>, DVector<f64>) {
    let (n, r) = (g.nrows(), g.ncols());
    let mut b = g.clone();
    for t in 0..n {
        let s = kdiag[t].sqrt();
        for j in 0..r {
            b[(t, j)] *= s;
        }
    }
    let k = b.transpose() * &b;
    let mut h = DMatrix::zeros(2 * r, 2 * r);
    for i in 0..r {
        for j in 0..r {
            h[(i, j)] = k[(i, j)];
            h[(i + r, j + r)] = k[(i, j)];
            h[(i, j + r)] = -k[(i, j)];
            h[(i + r, j)] = -k[(i, j)];
        }
    }
    for j in 0..r {
        let w2 = penalty.second_deriv(u[j]);
        h[(j, j)] += dp[j] + w2;
        h[(j + r, j + r)] += dm[j] + w2;
        h[(j, j + r)] += w2;
        h[(j + r, j)] += w2;
    }
    let mut rhs = DVector::zeros(2 * r);
    rhs.rows_mut(0, r).copy_from(grad_p);
    rhs.rows_mut(r, r).copy_from(grad_m);
    let sol = loop {
        match h.clone().cholesky() {
            Some(ch) => break ch.solve(&rhs),
            None => {
                for j in 0..2 * r {
                    h[(j, j)] += ridge.max(1e-12);
                }
            }
        }
    };
    (sol.rows(0, r).clone_owned(), sol.rows(r, r).clone_owned())
}

/// Envelope-theorem gradient of the profiled objective,
/// `(1/n) sum_t J_t' lambda / (1 + lambda' g_t) = sum_t pi_t J_t' lambda`.
pub fn profile_gradient<M: MomentModel + ?Sized>(
    model: &M,
    theta: &DVector<f64>,
    solution: &DualSolution,
) -> Result<DVector<f64>> {
    if !solution.converged {
        return Err(Error::NonConvergence(
            "profile gradient requested at a non-converged dual solution".into(),
        ));
    }
    let p = model.param_dim();
    let mut grad = DVector::zeros(p);
    let mut v = DVector::zeros(model.moment_dim());
    for t in 0..model.n_obs() {
        v.copy_from(&solution.lambda);
        v *= solution.weights[t];
        model.jac_tv_accumulate(t, theta, &v, &mut grad);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::ClosureMoments;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn column(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(values.len(), 1, values)
    }

    /// 1-D bisection oracle for the classical EL root of
    /// `sum_t g_t / (1 + lambda g_t) = 0` on the feasible interval.
    pub(crate) fn bisection_oracle(g: &[f64]) -> f64 {
        let gmax = g.iter().cloned().fold(f64::MIN, f64::max);
        let gmin = g.iter().cloned().fold(f64::MAX, f64::min);
        assert!(gmax > 0.0 && gmin < 0.0, "oracle needs both signs");
        let score = |lambda: f64| -> f64 { g.iter().map(|&v| v / (1.0 + lambda * v)).sum() };
        let (mut lo, mut hi) = (-1.0 / gmax + 1e-12, -1.0 / gmin - 1e-12);
        let (mut flo, mut fhi) = (score(lo), score(hi));
        assert!(flo > 0.0 && fhi < 0.0, "score must bracket the root");
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let fm = score(mid);
            if fm > 0.0 {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
                fhi = fm;
            }
        }
        let _ = (flo, fhi);
        0.5 * (lo + hi)
    }

    #[test]
    fn zero_mean_single_moment_gives_zero_multiplier() {
        let g = column(&[-1.0, 0.5, 0.5]);
        let sol = maximize_dual(&g, &PenaltySpec::lasso(0.0).unwrap(), &DualOptions::default())
            .unwrap();
        assert!(sol.converged);
        assert!(sol.lambda[0].abs() < 1e-9);
        assert!(sol.objective.abs() < 1e-12);
        for w in sol.weights.iter() {
            assert_relative_eq!(*w, 1.0 / 3.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn unpenalized_solution_matches_bisection_oracle() {
        let data = [-0.5, 0.2, 0.6];
        let g = column(&data);
        let mut opts = DualOptions::default();
        opts.kkt_tol = 1e-11;
        let sol = maximize_dual(&g, &PenaltySpec::lasso(0.0).unwrap(), &opts).unwrap();
        assert!(sol.converged);
        let oracle = bisection_oracle(&data);
        assert!(
            (sol.lambda[0] - oracle).abs() <= 1e-8,
            "solver {} vs oracle {}",
            sol.lambda[0],
            oracle
        );
    }

    #[test]
    fn large_penalty_kills_the_multiplier() {
        let data = [-0.5, 0.2, 0.6];
        let g = column(&data);
        let gbar: f64 = data.iter().sum::<f64>() / 3.0;
        let nu = 2.0 * gbar.abs();
        let sol =
            maximize_dual(&g, &PenaltySpec::lasso(nu).unwrap(), &DualOptions::default()).unwrap();
        assert!(sol.converged);
        // subgradient condition at zero: |gbar| <= nu
        assert!(gbar.abs() <= nu);
        assert!(sol.lambda[0].abs() <= 1e-8, "lambda = {}", sol.lambda[0]);
        // grid confirmation that zero is the maximizer
        let objective = |l: f64| -> f64 {
            data.iter().map(|&v| (1.0 + l * v).ln()).sum::<f64>() / 3.0 - nu * l.abs()
        };
        let at_zero = objective(0.0);
        for i in -100..=100 {
            let l = i as f64 * 0.01;
            assert!(objective(l) <= at_zero + 1e-12);
        }
    }

    #[test]
    fn zero_column_with_zero_penalty_is_unbounded_direction() {
        let g = DMatrix::from_row_slice(3, 2, &[0.5, 0.0, -0.4, 0.0, 0.1, 0.0]);
        let err = maximize_dual(&g, &PenaltySpec::lasso(0.0).unwrap(), &DualOptions::default());
        assert!(matches!(err, Err(Error::UnboundedDirection(_))));
    }

    #[test]
    fn nan_moments_are_rejected() {
        let g = DMatrix::from_row_slice(2, 1, &[f64::NAN, 1.0]);
        let err = maximize_dual(&g, &PenaltySpec::lasso(0.1).unwrap(), &DualOptions::default());
        assert!(matches!(err, Err(Error::NumericalEval { .. })));
    }

    #[test]
    fn kkt_eta_at_zero_multiplier_is_the_sample_mean() {
        let g = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, 3.0, -1.0]);
        let eta = kkt_eta(&g, &DVector::zeros(2), 1e-8);
        assert_relative_eq!(eta[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(eta[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn converged_unpenalized_solution_has_tiny_eta() {
        let g = column(&[-0.5, 0.2, 0.6]);
        let sol = maximize_dual(&g, &PenaltySpec::lasso(0.0).unwrap(), &DualOptions::default())
            .unwrap();
        assert!(sol.eta.amax() <= 1e-8);
    }

    #[test]
    fn penalized_eta_matches_direct_summation() {
        let mut rng = crate::rng::stream_rng(21, 1);
        let g = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
        let sol =
            maximize_dual(&g, &PenaltySpec::lasso(0.05).unwrap(), &DualOptions::default()).unwrap();
        let lambda = &sol.lambda;
        let mut manual = DVector::zeros(2);
        for t in 0..6 {
            let mut a = 1.0;
            for j in 0..2 {
                if lambda[j].abs() > 1e-8 {
                    a += lambda[j] * g[(t, j)];
                }
            }
            for j in 0..2 {
                manual[j] += g[(t, j)] / a;
            }
        }
        manual /= 6.0;
        for j in 0..2 {
            assert_relative_eq!(sol.eta[j], manual[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn kkt_conditions_hold_at_penalized_solution() {
        let mut rng = crate::rng::stream_rng(22, 1);
        let g = DMatrix::from_fn(12, 4, |_, _| rng.random_range(-1.0..1.0));
        let nu = 0.03;
        let sol =
            maximize_dual(&g, &PenaltySpec::lasso(nu).unwrap(), &DualOptions::default()).unwrap();
        assert!(sol.converged, "iterations {}", sol.iterations);
        for j in 0..4 {
            if sol.lambda[j].abs() > 1e-8 {
                assert!(
                    (sol.eta[j] - nu * sol.lambda[j].signum()).abs() <= 1e-7,
                    "active KKT fails at {j}: eta {} lambda {}",
                    sol.eta[j],
                    sol.lambda[j],
                );
            } else {
                assert!(sol.eta[j].abs() <= nu + 1e-7);
            }
        }
        // weights positive, slack above the floor
        assert!(sol.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn weights_of_unpenalized_solution_sum_to_one() {
        let mut rng = crate::rng::stream_rng(23, 1);
        for _ in 0..5 {
            let g = DMatrix::from_fn(8, 2, |_, _| rng.random_range(-1.0..1.0));
            let sol =
                maximize_dual(&g, &PenaltySpec::lasso(0.0).unwrap(), &DualOptions::default())
                    .unwrap();
            if sol.converged {
                assert_relative_eq!(sol.weights.sum(), 1.0, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn concavity_certificate_along_random_rays() {
        let mut rng = crate::rng::stream_rng(24, 1);
        let g = DMatrix::from_fn(10, 3, |_, _| rng.random_range(-1.0..1.0));
        let nu = 0.02;
        let penalty = PenaltySpec::lasso(nu).unwrap();
        let sol = maximize_dual(&g, &penalty, &DualOptions::default()).unwrap();
        assert!(sol.converged);
        let objective = |l: &DVector<f64>| -> Option<f64> {
            let mut a = DVector::zeros(10);
            slacks(&g, l, &mut a);
            if a.min() <= 1.0 / 10.0 {
                return None;
            }
            Some(log_likelihood(&a) - penalty_sum(l, &penalty))
        };
        let at_opt = objective(&sol.lambda).unwrap();
        for _ in 0..20 {
            let dir = DVector::from_fn(3, |_, _| rng.random_range(-0.05..0.05));
            if let Some(v) = objective(&(&sol.lambda + dir)) {
                assert!(v <= at_opt + 1e-7, "{v} beats optimum {at_opt}");
            }
        }
    }

    #[test]
    fn l1_norm_shrinks_as_penalty_grows() {
        let mut rng = crate::rng::stream_rng(25, 1);
        for _ in 0..10 {
            let g = DMatrix::from_fn(9, 3, |_, _| rng.random_range(-1.0..1.0));
            let small =
                maximize_dual(&g, &PenaltySpec::lasso(0.01).unwrap(), &DualOptions::default())
                    .unwrap();
            let large =
                maximize_dual(&g, &PenaltySpec::lasso(0.05).unwrap(), &DualOptions::default())
                    .unwrap();
            if small.converged && large.converged {
                let l1 = |v: &DVector<f64>| v.iter().map(|x| x.abs()).sum::<f64>();
                assert!(l1(&large.lambda) <= l1(&small.lambda) + 1e-6);
            }
        }
    }

    #[test]
    fn profile_gradient_is_zero_at_zero_multiplier() {
        let model = ClosureMoments::new(3, 1, 1, |t, theta, out| {
            out[0] = t as f64 - 1.0 - theta[0];
        });
        let theta = DVector::zeros(1);
        let g = crate::moments::moment_matrix(&model, &theta).unwrap();
        let sol = maximize_dual(&g, &PenaltySpec::lasso(0.0).unwrap(), &DualOptions::default())
            .unwrap();
        let grad = profile_gradient(&model, &theta, &sol).unwrap();
        assert!(grad.amax() <= 1e-8);
    }

    #[test]
    fn profile_gradient_matches_hand_derived_linear_case() {
        // g_t = x_t - theta with x = {0, 2} and theta = 0.5: the inner
        // multiplier solves -0.5/(1-0.5 l) + 1.5/(1+1.5 l) = 0, so l = 2/3,
        // and the envelope gradient is -l * mean(weights * n) / n = -2/3.
        let model = ClosureMoments::new(2, 1, 1, |t, theta, out| {
            out[0] = 2.0 * t as f64 - theta[0];
        });
        let theta = DVector::from_vec(vec![0.5]);
        let g = crate::moments::moment_matrix(&model, &theta).unwrap();
        let mut opts = DualOptions::default();
        opts.kkt_tol = 1e-12;
        let sol = maximize_dual(&g, &PenaltySpec::lasso(0.0).unwrap(), &opts).unwrap();
        assert_relative_eq!(sol.lambda[0], 2.0 / 3.0, epsilon = 1e-9);
        let grad = profile_gradient(&model, &theta, &sol).unwrap();
        assert_relative_eq!(grad[0], -2.0 / 3.0, epsilon = 1e-8);
    }

    #[test]
    fn profile_gradient_matches_finite_differences_of_profiled_objective() {
        let mut rng = crate::rng::stream_rng(26, 1);
        let n = 8;
        let xs: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xs2 = xs.clone();
        let model = ClosureMoments::new(n, 2, 2, move |t, theta, out| {
            out[0] = xs2[t] - theta[0];
            out[1] = xs2[n + t] - theta[1] - 0.3 * theta[0] * theta[0];
        });
        let theta = DVector::from_vec(vec![0.1, -0.2]);
        let mut opts = DualOptions::default();
        opts.kkt_tol = 1e-12;
        let penalty = PenaltySpec::lasso(0.0).unwrap();
        let g = crate::moments::moment_matrix(&model, &theta).unwrap();
        let sol = maximize_dual(&g, &penalty, &opts).unwrap();
        let grad = profile_gradient(&model, &theta, &sol).unwrap();
        for j in 0..2 {
            let h = 1e-5;
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            let op = maximize_dual(&crate::moments::moment_matrix(&model, &tp).unwrap(), &penalty, &opts)
                .unwrap()
                .objective;
            let om = maximize_dual(&crate::moments::moment_matrix(&model, &tm).unwrap(), &penalty, &opts)
                .unwrap()
                .objective;
            let fd = (op - om) / (2.0 * h);
            assert!(
                (grad[j] - fd).abs() <= 1e-3 * (1.0 + fd.abs()),
                "coordinate {j}: analytic {} vs fd {fd}",
                grad[j]
            );
        }
    }
}
