//! Symmetric-matrix helpers on top of `nalgebra`'s eigendecomposition.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalue floor used when taking square roots of SPD matrices.
pub const EIGEN_FLOOR: f64 = 1e-12;

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in i + 1..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `(m + m^T) / 2` if `m` is square and symmetric within `tol`.
pub fn symmetrize(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::dims("square matrix columns", m.nrows(), m.ncols()));
    }
    let asym = max_asymmetry(m);
    if !(asym <= tol) {
        return Err(Error::NonSymmetric(asym));
    }
    Ok((m + m.transpose()) * 0.5)
}

/// Eigenvalues in ascending order.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    v.sort_by(f64::total_cmp);
    DVector::from_vec(v)
}

/// `V f(diag) V^T` for symmetric `m`.
pub fn sym_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Reject matrices that are not symmetric positive definite.
pub fn check_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = m.amax().max(1.0);
    let s = symmetrize(m, 1e-12 * scale)?;
    let min = sym_eigenvalues(&s).min();
    if !(min > EIGEN_FLOOR) {
        return Err(Error::NotPositiveDefinite(min));
    }
    Ok(s)
}

pub fn sqrt_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_apply(m, |x| x.max(EIGEN_FLOOR).sqrt())
}

pub fn inv_sqrt_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_apply(m, |x| 1.0 / x.max(EIGEN_FLOOR).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_root_squares_back() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let r = sqrt_spd(&m);
        assert!((&r * &r - &m).amax() < 1e-13);
        let ri = inv_sqrt_spd(&m);
        assert!((&ri * &m * &ri - DMatrix::identity(3, 3)).amax() < 1e-13);
    }

    #[test]
    fn spd_checks() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(check_spd(&asym), Err(Error::NonSymmetric(_))));
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            check_spd(&indef),
            Err(Error::NotPositiveDefinite(_))
        ));
        assert_eq!(sym_eigenvalues(&indef).as_slice(), &[-1.0, 1.0]);
    }
}
