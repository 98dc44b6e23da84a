//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Floor enforced on the smallest eigenvalue of every task Hessian.
pub const HESSIAN_FLOOR: f64 = 1e-8;

/// Column-stacking vectorization.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`]: reshape a length `rows * cols` vector column by column.
pub fn mat_of(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetrize, then shift the diagonal so the smallest eigenvalue is at least
/// [`HESSIAN_FLOOR`]. Matrices already above the floor are left untouched.
pub fn enforce_spd(m: &mut DMatrix<f64>) {
    symmetrize(m);
    let lo = min_eigenvalue(m);
    if lo < HESSIAN_FLOOR {
        // lo + (floor - lo) lands on the floor only up to rounding; the extra
        // floor keeps the post-condition strict.
        let shift = (HESSIAN_FLOOR - lo) + HESSIAN_FLOOR;
        for i in 0..m.nrows() {
            m[(i, i)] += shift;
        }
    }
}

pub fn all_finite<'a>(it: impl IntoIterator<Item = &'a f64>) -> bool {
    it.into_iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec_mat_roundtrip_is_column_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let v = vec_of(&m);
        assert_eq!(v.as_slice(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(mat_of(&v, 2, 3), m);
    }

    #[test]
    fn enforce_spd_lifts_singular_matrix() {
        let mut m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        enforce_spd(&mut m);
        assert!(min_eigenvalue(&m) >= HESSIAN_FLOOR);
    }

    #[test]
    fn enforce_spd_leaves_well_conditioned_alone() {
        let mut m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let before = m.clone();
        enforce_spd(&mut m);
        assert_eq!(m, before);
    }
}
