use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::gate::{chi_square_quantile, gate_statistic, InnovationCovariance};
use super::model::{MeasurementModel, ProcessModel};
use super::regression::{build_regression, weighted_gram, RegressionProblem};
use super::{GateCovariance, GaussianBelief, UpdateConfig};
use crate::error::{dim_err, Error, Result};
use crate::kernel::{weights_unchecked, DiagonalWeights};
use crate::linalg::{all_finite, spd_inverse, symmetrize};

/// Lower clamp on kernel weights so the reweighted covariances stay finite.
pub const WEIGHT_FLOOR: f64 = 1e-8;

/// Result of one measurement update.
#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    pub belief: GaussianBelief,
    /// Number of reweighting passes performed.
    pub iterations: usize,
    /// The iteration met its relative-change tolerance.
    pub converged: bool,
    /// The measurement was rejected and `belief` is the prior.
    pub gated: bool,
    pub gate_statistic: Option<f64>,
    /// Weights used by the last pass, after clamping.
    pub final_weights: DiagonalWeights,
    /// How many weights hit [`WEIGHT_FLOOR`] over all passes.
    pub clamped: usize,
}

impl UpdateOutcome {
    fn held(
        prior: GaussianBelief,
        weights: DiagonalWeights,
        iterations: usize,
        stat: Option<f64>,
    ) -> Self {
        Self {
            belief: prior,
            iterations,
            converged: false,
            gated: true,
            gate_statistic: stat,
            final_weights: weights,
            clamped: 0,
        }
    }
}

/// Propagates the belief through the process model:
/// `mean = f(u)`, `cov = G P G^T + Q`.
pub fn predict(prior: &GaussianBelief, model: &dyn ProcessModel) -> Result<GaussianBelief> {
    let n = prior.dim();
    if model.state_dim() != n {
        return dim_err(format!(
            "process model has dimension {}, belief {n}",
            model.state_dim()
        ));
    }
    let mean = model.transition(&prior.mean);
    let g = model.transition_jacobian(&prior.mean);
    if g.shape() != (n, n) || mean.len() != n {
        return Err(Error::Model(
            "transition Jacobian has the wrong shape".into(),
        ));
    }
    if !all_finite(&g) || mean.iter().any(|x| !x.is_finite()) {
        return Err(Error::Model("non-finite transition or Jacobian".into()));
    }
    let mut cov = &g * &prior.cov * g.transpose() + model.process_noise();
    symmetrize(&mut cov);
    Ok(GaussianBelief { mean, cov })
}

/// Gain `P H^T (H P H^T + R)^-1` in covariance form.
pub fn kalman_gain(p: &DMatrix<f64>, r: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let pht = p * h.transpose();
    let s = h * &pht + r;
    let s_inv = spd_inverse(&s)?;
    Ok(pht * s_inv)
}

/// Joseph form `(I - K H) P (I - K H)^T + K R K^T`, symmetrised.
pub fn joseph_covariance(
    p: &DMatrix<f64>,
    k: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = p.nrows();
    let a = DMatrix::identity(n, n) - k * h;
    let mut out = &a * p * a.transpose() + k * r * k.transpose();
    symmetrize(&mut out);
    out
}

fn clamp_weights(w: &mut DiagonalWeights) -> usize {
    let mut hits = 0;
    for x in w.state.iter_mut().chain(w.measurement.iter_mut()) {
        if !(*x >= WEIGHT_FLOOR) {
            *x = WEIGHT_FLOOR;
            hits += 1;
        }
    }
    hits
}

/// Normal matrix `W^T D W` of the reweighted regression.
fn normal_matrix(prob: &RegressionProblem, w: &DiagonalWeights) -> DMatrix<f64> {
    prob.weighted_prior_information(&w.state)
        + prob.weighted_measurement_information(&w.measurement)
}

/// Mean correction `K (v - h(u_prior))` for the given weights.
fn correction(
    prob: &RegressionProblem,
    chol: &Cholesky<f64, Dyn>,
    w: &DiagonalWeights,
) -> DVector<f64> {
    let rhs = prob
        .measurement_rows()
        .tr_mul(&prob.whitened_innovation.component_mul(&w.measurement));
    chol.solve(&rhs)
}

impl RegressionProblem {
    /// Gain of the reweighted problem, `(P~^-1 + H^T R~^-1 H)^-1 H^T R~^-1`.
    pub fn gain(&self, w: &DiagonalWeights) -> Result<DMatrix<f64>> {
        let chol = Cholesky::new(normal_matrix(self, w))
            .ok_or_else(|| Error::Numerical("reweighted normal matrix is singular".into()))?;
        let mut b = self.measurement_rows().transpose();
        for (j, mut col) in b.column_iter_mut().enumerate() {
            col *= w.measurement[j];
        }
        // b C_R^-1 = (C_R^-T b^T)^T
        let bt = self
            .chol_r
            .tr_solve_lower_triangular(&b.transpose())
            .ok_or_else(|| Error::Numerical("singular noise factor".into()))?;
        Ok(chol.solve(&bt.transpose()))
    }

    /// Reweighted prior covariance `C_P D_u^-1 C_P^T`.
    pub fn weighted_prior_cov(&self, d_state: &DVector<f64>) -> DMatrix<f64> {
        scaled_outer(&self.chol_p, d_state)
    }

    /// Reweighted noise covariance `C_R D_v^-1 C_R^T`.
    pub fn weighted_noise_cov(&self, d_meas: &DVector<f64>) -> DMatrix<f64> {
        scaled_outer(&self.chol_r, d_meas)
    }
}

fn scaled_outer(c: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut s = c.clone();
    for (j, mut col) in s.column_iter_mut().enumerate() {
        col /= d[j].sqrt();
    }
    let mut out = &s * s.transpose();
    symmetrize(&mut out);
    out
}

/// Runs the reweighted fixed-point iteration on `prob`.
///
/// Each pass evaluates kernel weights on the whitened residual
/// `z - W u^(t-1)`, rebuilds `P~ = C_P D_u^-1 C_P^T` and
/// `R~ = C_R D_v^-1 C_R^T`, and sets `u^(t) = u_prior + K (v - h(u_prior))`.
/// The result is the stationary point of the weighted least-squares
/// problem. The returned covariance is the Joseph form with the nominal `R`.
/// A gated or failed update hands back the prior untouched.
pub fn fixed_point_update(prob: &RegressionProblem, cfg: &UpdateConfig) -> Result<UpdateOutcome> {
    cfg.validate()?;
    let n = prob.state_dim();
    let m = prob.measurement_dim();
    let prior = || GaussianBelief {
        mean: prob.prior_mean.clone(),
        cov: prob.prior_cov.clone(),
    };

    let mut estimate = prob.prior_mean.clone();
    let mut weights = DiagonalWeights {
        state: DVector::from_element(n, 1.0),
        measurement: DVector::from_element(m, 1.0),
    };
    let mut chol = None;
    let mut clamped = 0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iters {
        iterations += 1;
        let residual = prob.residual(&estimate);
        weights = weights_unchecked(&residual, &cfg.kernel, n);
        clamped += clamp_weights(&mut weights);

        let Some(c) = Cholesky::new(normal_matrix(prob, &weights)) else {
            log::warn!("reweighted normal matrix not invertible; holding prior");
            return Ok(UpdateOutcome::held(prior(), weights, iterations, None));
        };
        let next = &prob.prior_mean + correction(prob, &c, &weights);
        chol = Some(c);
        if next.iter().any(|x| !x.is_finite()) {
            log::warn!("non-finite fixed-point iterate; holding prior");
            return Ok(UpdateOutcome::held(prior(), weights, iterations, None));
        }
        let change = (&next - &estimate).norm();
        let scale = estimate.norm();
        estimate = next;
        if cfg.kernel.is_constant() || change <= cfg.epsilon * scale || change == 0.0 {
            converged = true;
            break;
        }
    }
    let chol = chol.expect("at least one iteration runs");

    let mut statistic = None;
    if let Some(gate) = cfg.gate {
        let mu = gate.mu.unwrap_or_else(|| chi_square_quantile(0.999, m));
        let stat = match gate.covariance {
            GateCovariance::Regularized => regularized_statistic(prob, &chol, &weights),
            GateCovariance::Literal => {
                let p_tilde = prob.weighted_prior_cov(&weights.state);
                gate_statistic(
                    &prob.innovation,
                    &prob.h,
                    &p_tilde,
                    InnovationCovariance::Literal,
                )
            }
        };
        statistic = Some(stat);
        if !(stat.abs() <= mu) {
            return Ok(UpdateOutcome::held(
                prior(),
                weights,
                iterations,
                Some(stat),
            ));
        }
    }

    // Joseph form with K = Y^-1 W_v^T D_v C_R^-1, Y = W^T D W:
    // (I - KH) P~ (I - KH)^T = Y^-1 P~^-1 Y^-1 and K R K^T = Y^-1 W_v^T D_v^2 W_v Y^-1.
    let d_sq = weights.measurement.component_mul(&weights.measurement);
    let middle = prob.weighted_prior_information(&weights.state)
        + weighted_gram(prob.measurement_rows(), &d_sq);
    let y_inv = chol.inverse();
    let mut cov = &y_inv * middle * &y_inv;
    symmetrize(&mut cov);
    if !all_finite(&cov) {
        return Err(Error::Numerical("non-finite posterior covariance".into()));
    }

    Ok(UpdateOutcome {
        belief: GaussianBelief {
            mean: estimate,
            cov,
        },
        iterations,
        converged,
        gated: false,
        gate_statistic: statistic,
        final_weights: weights,
        clamped,
    })
}

/// `Pi^T (H P~ H^T + R~)^-1 Pi` through the Woodbury identity on the
/// whitened problem.
fn regularized_statistic(
    prob: &RegressionProblem,
    chol: &Cholesky<f64, Dyn>,
    w: &DiagonalWeights,
) -> f64 {
    let weighted = prob.whitened_innovation.component_mul(&w.measurement);
    let direct = prob.whitened_innovation.dot(&weighted);
    let b = prob.measurement_rows().tr_mul(&weighted);
    let correction = b.dot(&chol.solve(&b));
    direct - correction
}

/// A single-node robust EKF: predict, reweighted update, optional gate.
#[derive(Debug, Clone)]
pub struct RobustEkf {
    pub belief: GaussianBelief,
    pub config: UpdateConfig,
}

impl RobustEkf {
    pub fn new(initial: GaussianBelief, config: UpdateConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            belief: initial,
            config,
        })
    }

    /// One predict + update cycle. On a numerical failure in the update the
    /// filter keeps the predicted belief and reports a gated outcome.
    pub fn step(
        &mut self,
        process: &dyn ProcessModel,
        measurement: &dyn MeasurementModel,
        v: &DVector<f64>,
    ) -> Result<UpdateOutcome> {
        let prior = predict(&self.belief, process)?;
        let outcome = match build_regression(&prior, v, measurement) {
            Ok(prob) => fixed_point_update(&prob, &self.config)?,
            Err(Error::Numerical(msg)) => {
                log::warn!("skipping update: {msg}");
                let n = prior.dim();
                let m = measurement.measurement_dim();
                UpdateOutcome::held(
                    prior,
                    DiagonalWeights {
                        state: DVector::from_element(n, 1.0),
                        measurement: DVector::from_element(m, 1.0),
                    },
                    0,
                    None,
                )
            }
            Err(e) => return Err(e),
        };
        self.belief = outcome.belief.clone();
        Ok(outcome)
    }
}
