//! L1 projection rows: for each target coordinate `k`, the sparsest
//! combination of moments whose Jacobian image pins down that coordinate,
//!
//! ```text
//! a_k = argmin |u|_1  s.t.  | Jbar' u - e_k |_inf <= varsigma
//! ```
//!
//! cast as a linear program over the split `u = u+ - u-` with `2p`
//! inequality rows and solved by the primal simplex. An infeasible program
//! reports the minimal feasible `varsigma` found by an auxiliary program.

use super::simplex::{solve_inequality_lp, LpOutcome};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Projection rows `A` (one per target coordinate) with the attained
/// sup-norm residuals.
#[derive(Debug, Clone)]
pub struct ProjectionRows {
    /// `m x r`; row `k` projects the moments for target `targets[k]`.
    pub a: DMatrix<f64>,
    /// Parameter indices being isolated, in row order.
    pub targets: Vec<usize>,
    pub varsigma: f64,
    /// `| Jbar' a_k - e_k |_inf` attained by each row.
    pub residual_sup: Vec<f64>,
}

/// Default tuning `0.2 n^{-1/3}` for the projection tolerance.
pub fn default_varsigma(n: usize) -> f64 {
    0.2 * (n as f64).powf(-1.0 / 3.0)
}

/// Solve the row programs for every target coordinate. `jbar` is the
/// `r x p` sample Jacobian of the averaged moments at the fitted parameter.
pub fn solve_projection(
    jbar: &DMatrix<f64>,
    targets: &[usize],
    varsigma: f64,
) -> Result<ProjectionRows> {
    let (r, p) = (jbar.nrows(), jbar.ncols());
    if !(varsigma > 0.0) {
        return Err(Error::Config(format!("varsigma must be positive, got {varsigma}")));
    }
    if targets.is_empty() {
        return Err(Error::Config("no target coordinates given".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&k| k >= p) {
        return Err(Error::Config(format!("target index {bad} out of range (p = {p})")));
    }

    // Shared inequality matrix: rows [ J' (u+ - u-) <= e_k + vs ]
    //                                [-J' (u+ - u-) <= vs - e_k ]
    let mut a_ineq = DMatrix::zeros(2 * p, 2 * r);
    for l in 0..p {
        for j in 0..r {
            let v = jbar[(j, l)];
            a_ineq[(l, j)] = v;
            a_ineq[(l, r + j)] = -v;
            a_ineq[(p + l, j)] = -v;
            a_ineq[(p + l, r + j)] = v;
        }
    }
    let cost = DVector::from_element(2 * r, 1.0);

    let rows: Vec<Result<(DVector<f64>, f64)>> = targets
        .par_iter()
        .map(|&k| {
            let mut b = DVector::from_element(2 * p, varsigma);
            b[k] += 1.0;
            b[p + k] -= 1.0;
            match solve_inequality_lp(&a_ineq, &b, &cost) {
                LpOutcome::Optimal { x, .. } => {
                    let u = DVector::from_fn(r, |j, _| x[j] - x[r + j]);
                    let resid = jbar.transpose() * &u;
                    let sup = (0..p)
                        .map(|l| (resid[l] - if l == k { 1.0 } else { 0.0 }).abs())
                        .fold(0.0f64, f64::max);
                    Ok((u, sup))
                }
                LpOutcome::Infeasible => Err(Error::InfeasibleProjection {
                    varsigma,
                    min_feasible: minimal_varsigma(jbar, k),
                }),
                LpOutcome::Unbounded => {
                    Err(Error::Degenerate(format!("projection row {k} is unbounded")))
                }
            }
        })
        .collect();

    let mut a = DMatrix::zeros(targets.len(), r);
    let mut residual_sup = Vec::with_capacity(targets.len());
    for (i, row) in rows.into_iter().enumerate() {
        let (u, sup) = row?;
        for j in 0..r {
            a[(i, j)] = u[j];
        }
        residual_sup.push(sup);
    }
    Ok(ProjectionRows { a, targets: targets.to_vec(), varsigma, residual_sup })
}

/// Auxiliary program `min t  s.t.  |J'u - e_k|_inf <= t`: the smallest
/// tolerance at which row `k` becomes feasible.
fn minimal_varsigma(jbar: &DMatrix<f64>, k: usize) -> f64 {
    let (r, p) = (jbar.nrows(), jbar.ncols());
    let mut a_ineq = DMatrix::zeros(2 * p, 2 * r + 1);
    for l in 0..p {
        for j in 0..r {
            let v = jbar[(j, l)];
            a_ineq[(l, j)] = v;
            a_ineq[(l, r + j)] = -v;
            a_ineq[(p + l, j)] = -v;
            a_ineq[(p + l, r + j)] = v;
        }
        a_ineq[(l, 2 * r)] = -1.0;
        a_ineq[(p + l, 2 * r)] = -1.0;
    }
    let mut b = DVector::zeros(2 * p);
    b[k] = 1.0;
    b[p + k] = -1.0;
    let mut cost = DVector::zeros(2 * r + 1);
    cost[2 * r] = 1.0;
    match solve_inequality_lp(&a_ineq, &b, &cost) {
        LpOutcome::Optimal { objective, .. } => objective,
        _ => f64::NAN,
    }
}
