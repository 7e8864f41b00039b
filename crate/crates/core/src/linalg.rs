//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (a + a.transpose())
}

pub fn min_eigenvalue_sym(a: &DMatrix<f64>) -> f64 {
    let eig = symmetrize(a).symmetric_eigen();
    eig.eigenvalues.min()
}

/// Symmetric PSD square root; eigenvalues below `clip` are treated as `clip`.
pub fn psd_sqrt(a: &DMatrix<f64>, clip: f64) -> DMatrix<f64> {
    let eig = symmetrize(a).symmetric_eigen();
    let d = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(clip).sqrt()),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Symmetric inverse square root with ridge regularization.
///
/// Returns the matrix and a flag that is true when any eigenvalue had to be
/// lifted by `ridge` to stay invertible.
pub fn psd_inv_sqrt(a: &DMatrix<f64>, ridge: f64) -> (DMatrix<f64>, bool) {
    let eig = symmetrize(a).symmetric_eigen();
    let mut regularized = false;
    let d = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| {
            if l <= ridge {
                regularized = true;
            }
            1.0 / l.max(ridge).sqrt()
        }),
    );
    (&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose(), regularized)
}

/// Symmetric inverse with ridge regularization on near-zero eigenvalues.
pub fn psd_inv(a: &DMatrix<f64>, ridge: f64) -> (DMatrix<f64>, bool) {
    let eig = symmetrize(a).symmetric_eigen();
    let mut regularized = false;
    let d = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| {
            if l <= ridge {
                regularized = true;
            }
            1.0 / l.max(ridge)
        }),
    );
    (&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose(), regularized)
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.clone().complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Solve `X = G X G^T + Q` for stable `G` by doubling iterations.
pub fn discrete_lyapunov(g: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = q.clone();
    let mut gk = g.clone();
    for _ in 0..64 {
        let update = &gk * &x * gk.transpose();
        let delta = update.amax();
        x += update;
        gk = &gk * &gk;
        if delta < 1e-14 * (1.0 + x.amax()) {
            break;
        }
    }
    x
}

/// Column-major half-vectorization index of entry `(i, j)` with `i >= j`.
pub fn vech_index(i: usize, j: usize, d: usize) -> usize {
    debug_assert!(i >= j && i < d);
    j * d - j * (j + 1) / 2 + i
}

/// Stack the lower triangle of a `d x d` matrix column by column.
pub fn vech(a: &DMatrix<f64>) -> DVector<f64> {
    let d = a.nrows();
    let mut out = DVector::zeros(d * (d + 1) / 2);
    for j in 0..d {
        for i in j..d {
            out[vech_index(i, j, d)] = a[(i, j)];
        }
    }
    out
}

/// Rebuild a lower-triangular matrix from its half-vectorization.
pub fn unvech_lower(v: &DVector<f64>, d: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(d, d);
    for j in 0..d {
        for i in j..d {
            out[(i, j)] = v[vech_index(i, j, d)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sqrt_of_psd_matrix_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = psd_sqrt(&a, 0.0);
        let back = &s * &s;
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(back[(i, j)], a[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn lyapunov_fixed_point_holds() {
        let g = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 0.3]);
        let q = DMatrix::identity(2, 2);
        let x = discrete_lyapunov(&g, &q);
        let rhs = &g * &x * g.transpose() + &q;
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(x[(i, j)], rhs[(i, j)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn vech_roundtrip_on_lower_triangle() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 2.0, 4.0, 0.0, 3.0, 5.0, 6.0]);
        let v = vech(&a);
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(unvech_lower(&v, 3), a);
    }
}
