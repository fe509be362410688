//! Local robust extended Kalman filter.
//!
//! The update step is solved as a reweighted least-squares problem in whitened
//! coordinates: every iteration recomputes per-component kernel weights from
//! the current residual and re-solves the normal equations. With unit weights
//! this is exactly the textbook EKF update.

mod diagnostic;
mod gate;
mod model;
mod regression;
mod update;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::kernel::BaselineKernel;
use crate::linalg::symmetrize;

pub use diagnostic::contraction_diagnostic;
pub use gate::{
    chi_square_quantile, gate_statistic, threshold_gate, GateDecision, InnovationCovariance,
};
pub use model::{
    finite_difference_jacobian, AffineProcess, LinearMeasurement, MeasurementModel, ProcessModel,
};
pub use regression::{build_regression, RegressionProblem};
pub use update::{
    fixed_point_update, joseph_covariance, kalman_gain, predict, RobustEkf, UpdateOutcome,
    WEIGHT_FLOOR,
};

/// Mean and covariance of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, mut cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.shape() != (n, n) {
            return dim_err(format!(
                "covariance {:?} does not match state length {n}",
                cov.shape()
            ));
        }
        symmetrize(&mut cov);
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_finite(&self) -> bool {
        self.mean
            .iter()
            .chain(self.cov.iter())
            .all(|x| x.is_finite())
    }
}

/// Which innovation covariance the threshold gate normalises by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateCovariance {
    /// `H P~ H^T + R~`, always invertible.
    #[default]
    Regularized,
    /// `H P~ H^T` only; singular whenever `m` exceeds its rank, in which
    /// case the gate rejects.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GateConfig {
    /// Threshold on the normalised innovation. `None` selects the 99.9%
    /// chi-square quantile with `m` degrees of freedom.
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub covariance: GateCovariance,
}

/// Settings of one fixed-point update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateConfig {
    /// Relative mean change at which the iteration stops.
    pub epsilon: f64,
    pub max_iters: usize,
    pub kernel: BaselineKernel,
    #[serde(default)]
    pub gate: Option<GateConfig>,
}

impl UpdateConfig {
    pub fn new(kernel: BaselineKernel) -> Self {
        Self {
            epsilon: 1e-6,
            max_iters: 50,
            kernel,
            gate: None,
        }
    }

    pub fn with_gate(mut self, gate: GateConfig) -> Self {
        self.gate = Some(gate);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return crate::error::param_err("epsilon must be positive");
        }
        if self.max_iters == 0 {
            return crate::error::param_err("max_iters must be at least 1");
        }
        if let Some(GateConfig { mu: Some(mu), .. }) = self.gate {
            if !(mu > 0.0) {
                return crate::error::param_err("gate threshold must be positive");
            }
        }
        self.kernel.validate()
    }
}
