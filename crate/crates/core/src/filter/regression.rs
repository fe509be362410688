use nalgebra::{DMatrix, DVector};

use super::model::MeasurementModel;
use super::GaussianBelief;
use crate::error::{dim_err, Error, Result};
use crate::linalg::{cholesky_with_jitter, solve_lower, solve_lower_vec};

/// The update step written as a whitened linear regression `z = W u + e`.
///
/// The stack is `[prior mean; v - h(u_prior) + H u_prior]` with joint
/// covariance `blkdiag(P, R) = C C^T`; both sides are pre-multiplied by
/// `C^-1` through triangular solves.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    /// Whitened stacked observation, length `n + m`.
    pub z: DVector<f64>,
    /// Whitened design matrix `C^-1 [I; H]`, shape `(n + m) x n`.
    pub w: DMatrix<f64>,
    /// Lower Cholesky factor of the prior covariance.
    pub chol_p: DMatrix<f64>,
    /// Lower Cholesky factor of the measurement noise covariance.
    pub chol_r: DMatrix<f64>,
    pub prior_mean: DVector<f64>,
    /// Prior covariance as given, returned verbatim when the update is held.
    pub prior_cov: DMatrix<f64>,
    /// Measurement Jacobian at the prior mean.
    pub h: DMatrix<f64>,
    /// Innovation `v - h(u_prior)`.
    pub innovation: DVector<f64>,
    /// `C_R^-1 (v - h(u_prior))`.
    pub whitened_innovation: DVector<f64>,
}

impl RegressionProblem {
    pub fn state_dim(&self) -> usize {
        self.prior_mean.len()
    }

    pub fn measurement_dim(&self) -> usize {
        self.innovation.len()
    }

    /// Whitened residual `z - W u`.
    pub fn residual(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.z - &self.w * u
    }

    pub(crate) fn state_rows(&self) -> nalgebra::DMatrixView<'_, f64> {
        self.w.rows(0, self.state_dim())
    }

    pub(crate) fn measurement_rows(&self) -> nalgebra::DMatrixView<'_, f64> {
        self.w.rows(self.state_dim(), self.measurement_dim())
    }

    /// `W_u^T diag(d) W_u`, the information of the reweighted prior.
    pub fn weighted_prior_information(&self, d_state: &DVector<f64>) -> DMatrix<f64> {
        weighted_gram(self.state_rows(), d_state)
    }

    /// `H^T R~^-1 H = W_v^T diag(d) W_v`.
    pub fn weighted_measurement_information(&self, d_meas: &DVector<f64>) -> DMatrix<f64> {
        weighted_gram(self.measurement_rows(), d_meas)
    }

    /// `H^T R~^-1 (v - h(u_prior) + H u_prior) = W_v^T diag(d) z_v`.
    pub fn weighted_measurement_vector(&self, d_meas: &DVector<f64>) -> DVector<f64> {
        let n = self.state_dim();
        let zv = self.z.rows(n, self.measurement_dim());
        self.measurement_rows().tr_mul(&zv.component_mul(d_meas))
    }
}

/// `A^T diag(d) A` computed as `(sqrt(d) A)^T (sqrt(d) A)`; exactly symmetric.
pub(crate) fn weighted_gram(a: nalgebra::DMatrixView<'_, f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    let s = d.map(f64::sqrt);
    let scaled = DMatrix::from_fn(rows, cols, |i, j| a[(i, j)] * s[i]);
    let mut g = DMatrix::<f64>::zeros(cols, cols);
    let (r, c) = (rows as isize, cols as isize);
    // SAFETY: both operands are contiguous column-major buffers of the
    // stated shapes and `g` does not alias them.
    unsafe {
        matrixmultiply::dgemm(
            cols,
            rows,
            cols,
            1.0,
            scaled.as_ptr(),
            r,
            1,
            scaled.as_ptr(),
            1,
            r,
            0.0,
            g.as_mut_ptr(),
            1,
            c,
        );
    }
    for j in 0..cols {
        for k in 0..j {
            g[(k, j)] = g[(j, k)];
        }
    }
    g
}

/// Builds the whitened regression for `prior` and measurement `v`.
pub fn build_regression(
    prior: &GaussianBelief,
    v: &DVector<f64>,
    model: &dyn MeasurementModel,
) -> Result<RegressionProblem> {
    let n = prior.mean.len();
    let m = model.measurement_dim();
    if v.len() != m {
        return dim_err(format!(
            "measurement has length {}, model expects {m}",
            v.len()
        ));
    }
    if prior.cov.shape() != (n, n) {
        return dim_err("prior covariance does not match mean");
    }
    let hx = model.measure(&prior.mean);
    let h = model.measurement_jacobian(&prior.mean);
    if h.shape() != (m, n) || hx.len() != m {
        return dim_err(format!(
            "measurement Jacobian is {:?}, expected ({m}, {n})",
            h.shape()
        ));
    }
    if hx.iter().chain(h.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Model(
            "non-finite measurement prediction or Jacobian".into(),
        ));
    }

    let chol_p = cholesky_with_jitter(&prior.cov)?;
    let chol_r = cholesky_with_jitter(model.measurement_noise())?;

    let innovation = v - &hx;
    let pseudo = &innovation + &h * &prior.mean;

    let w_u = solve_lower(&chol_p, &DMatrix::identity(n, n))?;
    let w_v = solve_lower(&chol_r, &h)?;
    let z_u = solve_lower_vec(&chol_p, &prior.mean)?;
    let z_v = solve_lower_vec(&chol_r, &pseudo)?;
    let whitened_innovation = solve_lower_vec(&chol_r, &innovation)?;

    let mut w = DMatrix::zeros(n + m, n);
    w.rows_mut(0, n).copy_from(&w_u);
    w.rows_mut(n, m).copy_from(&w_v);
    let mut z = DVector::zeros(n + m);
    z.rows_mut(0, n).copy_from(&z_u);
    z.rows_mut(n, m).copy_from(&z_v);

    Ok(RegressionProblem {
        z,
        w,
        chol_p,
        chol_r,
        prior_mean: prior.mean.clone(),
        prior_cov: prior.cov.clone(),
        h,
        innovation,
        whitened_innovation,
    })
}
