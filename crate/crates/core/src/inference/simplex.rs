//! Dense two-phase primal simplex with Bland's rule.
//!
//! Solves `min c'x  s.t.  A x <= b, x >= 0`. Rows with negative right-hand
//! sides are flipped and given artificial variables; phase one drives the
//! artificials to zero (else the program is infeasible), phase two
//! optimizes the true objective. Bland's smallest-index rule breaks all
//! entering/leaving ties, which also guards against cycling.

use nalgebra::{DMatrix, DVector};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal { x: DVector<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    /// m x (cols + 1); last column is the right-hand side.
    t: DMatrix<f64>,
    /// Objective row (reduced costs), length cols + 1.
    z: DVector<f64>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.t[(row, col)];
        for j in 0..=self.cols {
            self.t[(row, j)] /= piv;
        }
        for i in 0..self.t.nrows() {
            if i != row {
                let f = self.t[(i, col)];
                if f != 0.0 {
                    for j in 0..=self.cols {
                        self.t[(i, j)] -= f * self.t[(row, j)];
                    }
                }
            }
        }
        let f = self.z[col];
        if f != 0.0 {
            for j in 0..=self.cols {
                self.z[j] -= f * self.t[(row, j)];
            }
        }
        self.basis[row] = col;
    }

    /// Bland's rule iteration until optimal or unbounded.
    fn run(&mut self, allowed: usize) -> bool {
        loop {
            let entering = (0..allowed).find(|&j| self.z[j] < -COST_TOL);
            let Some(col) = entering else { return true };
            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for i in 0..self.t.nrows() {
                let a = self.t[(i, col)];
                if a > PIVOT_TOL {
                    let ratio = self.t[(i, self.cols)] / a;
                    let better = ratio < best_ratio - 1e-12
                        || (ratio <= best_ratio + 1e-12
                            && leave.is_some_and(|l| self.basis[i] < self.basis[l]));
                    if better {
                        best_ratio = ratio;
                        leave = Some(i);
                    }
                }
            }
            let Some(row) = leave else { return false };
            self.pivot(row, col);
        }
    }
}

/// Minimize `c'x` subject to `A x <= b`, `x >= 0`.
pub fn solve_inequality_lp(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> LpOutcome {
    let (m, n) = (a.nrows(), a.ncols());
    let negative_rows: Vec<usize> = (0..m).filter(|&i| b[i] < 0.0).collect();
    let n_art = negative_rows.len();
    let cols = n + m + n_art;

    let mut t = DMatrix::zeros(m, cols + 1);
    let mut basis = vec![0usize; m];
    let mut art_idx = 0usize;
    for i in 0..m {
        let flip = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = flip * a[(i, j)];
        }
        t[(i, n + i)] = flip; // slack
        t[(i, cols)] = flip * b[i];
        if flip < 0.0 {
            let col = n + m + art_idx;
            t[(i, col)] = 1.0;
            basis[i] = col;
            art_idx += 1;
        } else {
            basis[i] = n + i;
        }
    }

    let mut tab = Tableau { t, z: DVector::zeros(cols + 1), basis, cols };

    if n_art > 0 {
        // Phase 1: minimize the artificial sum expressed in reduced form.
        for j in 0..=cols {
            let mut s = 0.0;
            for i in 0..m {
                if tab.basis[i] >= n + m {
                    s -= tab.t[(i, j)];
                }
            }
            tab.z[j] = s;
        }
        for j in n + m..cols {
            tab.z[j] += 1.0;
        }
        if !tab.run(cols) {
            return LpOutcome::Unbounded; // cannot happen: phase 1 is bounded
        }
        if tab.z[cols] < -1e-7 {
            return LpOutcome::Infeasible;
        }
        // Drive any degenerate artificial out of the basis.
        for i in 0..m {
            if tab.basis[i] >= n + m {
                if let Some(col) = (0..n + m).find(|&j| tab.t[(i, j)].abs() > PIVOT_TOL) {
                    tab.pivot(i, col);
                }
            }
        }
    }

    // Phase 2 objective: reduced costs of c against the current basis.
    tab.z.fill(0.0);
    for j in 0..n {
        tab.z[j] = c[j];
    }
    for i in 0..m {
        let bi = tab.basis[i];
        let cost = if bi < n { c[bi] } else { 0.0 };
        if cost != 0.0 {
            for j in 0..=cols {
                tab.z[j] -= cost * tab.t[(i, j)];
            }
        }
    }
    // Forbid artificial columns from re-entering.
    for j in n + m..cols {
        tab.z[j] = f64::INFINITY;
    }
    if !tab.run(n + m) {
        return LpOutcome::Unbounded;
    }

    let mut x = DVector::zeros(n);
    for i in 0..m {
        if tab.basis[i] < n {
            x[tab.basis[i]] = tab.t[(i, cols)];
        }
    }
    let objective = c.dot(&x);
    LpOutcome::Optimal { x, objective }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_textbook_program() {
        // max x + y s.t. x + 2y <= 4, 3x + y <= 6  ->  min -x - y
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 1.0]);
        let b = DVector::from_vec(vec![4.0, 6.0]);
        let c = DVector::from_vec(vec![-1.0, -1.0]);
        match solve_inequality_lp(&a, &b, &c) {
            LpOutcome::Optimal { x, objective } => {
                assert!((x[0] - 1.6).abs() < 1e-9);
                assert!((x[1] - 1.2).abs() < 1e-9);
                assert!((objective + 2.8).abs() < 1e-9);
            }
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn detects_infeasibility() {
        // x <= -1 with x >= 0
        let a = DMatrix::from_row_slice(1, 1, &[1.0]);
        let b = DVector::from_vec(vec![-1.0]);
        let c = DVector::from_vec(vec![1.0]);
        assert!(matches!(solve_inequality_lp(&a, &b, &c), LpOutcome::Infeasible));
    }

    #[test]
    fn detects_unboundedness() {
        // min -x s.t. -x <= 1
        let a = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let b = DVector::from_vec(vec![1.0]);
        let c = DVector::from_vec(vec![-1.0]);
        assert!(matches!(solve_inequality_lp(&a, &b, &c), LpOutcome::Unbounded));
    }

    #[test]
    fn handles_negative_rhs_via_phase_one() {
        // x >= 2 encoded as -x <= -2; min x -> 2
        let a = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let b = DVector::from_vec(vec![-2.0]);
        let c = DVector::from_vec(vec![1.0]);
        match solve_inequality_lp(&a, &b, &c) {
            LpOutcome::Optimal { x, objective } => {
                assert!((x[0] - 2.0).abs() < 1e-9);
                assert!((objective - 2.0).abs() < 1e-9);
            }
            other => panic!("expected optimal, got {other:?}"),
        }
    }
}
