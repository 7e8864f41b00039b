//! Generalized variance decomposition of a VAR(1): the share of variable
//! i's h-step forecast-error variance attributable to shocks in variable j,
//!
//! ```text
//! d_{ij}^h = sigma_jj^{-1} sum_{l<h} (e_i' G^l S e_j)^2
//!            / sum_{l<h} e_i' G^l S G^l' e_i
//! ```
//!
//! row-normalized into the connectedness matrix; column sums measure
//! out-connectedness per horizon.

use crate::error::{Error, Result};
use crate::linalg::spectral_radius;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct DecompositionStep {
    pub horizon: usize,
    /// Row-normalized decomposition matrix.
    pub dtilde: DMatrix<f64>,
    /// Column sums of `dtilde` (out-connectedness).
    pub column_sums: DVector<f64>,
}

pub fn variance_decomposition(
    g1: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    max_horizon: usize,
) -> Result<Vec<DecompositionStep>> {
    let d = g1.nrows();
    if g1.ncols() != d || sigma.nrows() != d || sigma.ncols() != d {
        return Err(Error::Config("coefficient and covariance shapes differ".into()));
    }
    if max_horizon == 0 {
        return Err(Error::Config("need at least one horizon".into()));
    }
    let rho = spectral_radius(g1);
    if rho >= 1.0 {
        return Err(Error::Degenerate(format!(
            "coefficient matrix is unstable: spectral radius {rho:.6}"
        )));
    }
    if (0..d).any(|j| sigma[(j, j)] <= 0.0) {
        return Err(Error::Degenerate("noise covariance has a non-positive diagonal".into()));
    }

    let mut steps = Vec::with_capacity(max_horizon);
    let mut numer: DMatrix<f64> = DMatrix::zeros(d, d);
    let mut denom: DVector<f64> = DVector::zeros(d);
    let mut power = DMatrix::identity(d, d); // G^l
    for ell in 0..max_horizon {
        let gs = &power * sigma; // G^l S
        let gsg = &gs * power.transpose(); // G^l S G^l'
        for i in 0..d {
            for j in 0..d {
                let v = gs[(i, j)];
                numer[(i, j)] += v * v / sigma[(j, j)];
            }
            denom[i] += gsg[(i, i)];
        }
        let horizon = ell + 1;
        let mut dtilde = DMatrix::zeros(d, d);
        for i in 0..d {
            if denom[i] == 0.0 {
                return Err(Error::Degenerate(format!(
                    "forecast-error variance of row {i} is zero at horizon {horizon}"
                )));
            }
            let row_sum: f64 = (0..d).map(|j| numer[(i, j)]).sum();
            if row_sum == 0.0 {
                return Err(Error::Degenerate(format!(
                    "decomposition row {i} is identically zero at horizon {horizon}"
                )));
            }
            for j in 0..d {
                dtilde[(i, j)] = numer[(i, j)] / row_sum;
            }
        }
        let column_sums = DVector::from_fn(d, |j, _| (0..d).map(|i| dtilde[(i, j)]).sum());
        steps.push(DecompositionStep { horizon, dtilde, column_sums });
        power = &power * g1;
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn no_propagation_gives_the_identity() {
        let g = DMatrix::zeros(3, 3);
        let sigma = DMatrix::identity(3, 3);
        for step in variance_decomposition(&g, &sigma, 4).unwrap() {
            assert_relative_eq!((step.dtilde - DMatrix::identity(3, 3)).amax(), 0.0);
            for j in 0..3 {
                assert_relative_eq!(step.column_sums[j], 1.0);
            }
        }
    }

    #[test]
    fn rows_sum_to_one_and_entries_stay_in_the_unit_interval() {
        let g = DMatrix::from_row_slice(3, 3, &[0.4, 0.1, 0.0, 0.2, 0.3, 0.1, 0.0, 0.2, 0.5]);
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 1.0]);
        for step in variance_decomposition(&g, &sigma, 6).unwrap() {
            for i in 0..3 {
                let sum: f64 = (0..3).map(|j| step.dtilde[(i, j)]).sum();
                assert!((sum - 1.0).abs() <= 1e-12);
                for j in 0..3 {
                    assert!((0.0..=1.0 + 1e-12).contains(&step.dtilde[(i, j)]));
                }
            }
        }
    }

    #[test]
    fn two_by_two_horizon_two_matches_the_symbolic_expansion() {
        let g = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.1, 0.4]);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let steps = variance_decomposition(&g, &sigma, 2).unwrap();
        let step = &steps[1];
        assert_eq!(step.horizon, 2);

        // expand l in {0, 1} by hand: G^0 = I, G^1 = G
        let gs = &g * &sigma;
        let gsg = &gs * g.transpose();
        for i in 0..2 {
            let mut numer = [0.0, 0.0];
            for j in 0..2 {
                let l0 = sigma[(i, j)];
                let l1 = gs[(i, j)];
                numer[j] = (l0 * l0 + l1 * l1) / sigma[(j, j)];
            }
            let _denom = sigma[(i, i)] + gsg[(i, i)];
            let row_sum = numer[0] + numer[1];
            for j in 0..2 {
                assert_relative_eq!(step.dtilde[(i, j)], numer[j] / row_sum, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn unstable_coefficients_are_rejected_with_the_radius() {
        let g = DMatrix::from_row_slice(2, 2, &[1.1, 0.0, 0.0, 0.2]);
        let err = variance_decomposition(&g, &DMatrix::identity(2, 2), 3);
        match err {
            Err(Error::Degenerate(msg)) => assert!(msg.contains("1.1")),
            other => panic!("expected degenerate error, got {other:?}"),
        }
    }
}
