//! Small dense linear-algebra helpers shared by the filters.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// First jitter multiple of `trace / n` tried when a factorization fails.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter multiple before giving up.
pub const JITTER_MAX: f64 = 1e-6;

/// Lower Cholesky factor of a symmetric matrix, retrying with diagonal
/// jitter `k * trace / n * I` for `k = 1e-10, 1e-9, ..., 1e-6`.
pub fn cholesky_with_jitter(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if is_diagonal(a) && a.diagonal().iter().all(|&d| d > 0.0 && d.is_finite()) {
        // Same factor the general algorithm produces, without the O(n^3) work.
        let mut l = DMatrix::zeros(a.nrows(), a.ncols());
        l.set_diagonal(&a.diagonal().map(f64::sqrt));
        return Ok(l);
    }
    Ok(cholesky_factor(a)?.l())
}

pub(crate) fn is_diagonal(a: &DMatrix<f64>) -> bool {
    a.is_square()
        && a.column_iter()
            .enumerate()
            .all(|(j, col)| col.iter().enumerate().all(|(i, &x)| i == j || x == 0.0))
}

pub(crate) fn cholesky_factor(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "cholesky of {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(
            "non-finite entry in matrix to factor".into(),
        ));
    }
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    let n = a.nrows().max(1) as f64;
    let scale = a.trace() / n;
    if scale > 0.0 {
        let mut k = JITTER_START;
        while k <= JITTER_MAX * (1.0 + 1e-9) {
            let mut b = a.clone();
            for i in 0..a.nrows() {
                b[(i, i)] += k * scale;
            }
            if let Some(c) = Cholesky::new(b) {
                log::debug!("cholesky succeeded with jitter {k:e} * trace/n");
                return Ok(c);
            }
            k *= 10.0;
        }
    }
    Err(Error::Numerical(
        "matrix not positive definite after maximum jitter".into(),
    ))
}

/// Replaces `a` by `(a + a^T) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Solves `l x = b` for lower-triangular `l`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(x) = solve_diagonal(l, b) {
        return x;
    }
    l.solve_lower_triangular(b)
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))
}

pub fn solve_lower_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(x) = solve_diagonal(l, b) {
        return x;
    }
    l.solve_lower_triangular(b)
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))
}

/// Row scaling for diagonal `l`; `None` when `l` has off-diagonal entries.
fn solve_diagonal<C: nalgebra::Dim, S>(
    l: &DMatrix<f64>,
    b: &nalgebra::Matrix<f64, Dyn, C, S>,
) -> Option<Result<nalgebra::OMatrix<f64, Dyn, C>>>
where
    S: nalgebra::Storage<f64, Dyn, C>,
    nalgebra::DefaultAllocator: nalgebra::allocator::Allocator<Dyn, C>,
{
    if !is_diagonal(l) || l.nrows() != b.nrows() {
        return None;
    }
    let d = l.diagonal();
    if d.iter().any(|&x| x == 0.0) {
        return Some(Err(Error::Numerical("singular triangular factor".into())));
    }
    let mut x = b.clone_owned();
    for (i, mut row) in x.row_iter_mut().enumerate() {
        row /= d[i];
    }
    Some(Ok(x))
}

/// Inverse of a symmetric positive definite matrix through its Cholesky factor.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut inv = cholesky_factor(a)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Max-abs asymmetry `|a_ij - a_ji|`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_reconstructs() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let l = cholesky_with_jitter(&a).unwrap();
        let r = &l * l.transpose();
        assert!((r - &a).norm() / a.norm() < 1e-12);
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        // rank one
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let a = &v * v.transpose();
        let l = cholesky_with_jitter(&a).unwrap();
        let r = &l * l.transpose();
        assert!((r - &a).norm() / a.norm() < 1e-5);
    }

    #[test]
    fn indefinite_fails() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(cholesky_with_jitter(&a).is_err());
        let z = DMatrix::<f64>::zeros(2, 2);
        assert!(cholesky_with_jitter(&z).is_err());
    }

    #[test]
    fn symmetrize_and_inverse() {
        let mut a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        symmetrize(&mut a);
        assert_eq!(asymmetry(&a), 0.0);
        let inv = spd_inverse(&a).unwrap();
        let id = &a * &inv;
        assert!((id - DMatrix::identity(2, 2)).norm() < 1e-14);
        assert!(min_eigenvalue(&a) > 0.0);
    }
}
