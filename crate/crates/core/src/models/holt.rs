//! Holt's two-parameter exponential smoothing as a state transition.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Result};
use crate::filter::AffineProcess;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoltParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for HoltParams {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            beta: 0.5,
        }
    }
}

impl HoltParams {
    pub fn validate(&self) -> Result<()> {
        // The closed interval admits pure persistence (alpha = 1, beta = 0).
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return param_err("holt smoothing constants must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Per-component level and trend.
#[derive(Debug, Clone, PartialEq)]
pub struct HoltState {
    pub params: HoltParams,
    pub level: DVector<f64>,
    pub trend: DVector<f64>,
}

impl HoltState {
    /// Level at `x0`, zero trend.
    pub fn new(params: HoltParams, x0: DVector<f64>) -> Result<Self> {
        params.validate()?;
        let n = x0.len();
        Ok(Self {
            params,
            level: x0,
            trend: DVector::zeros(n),
        })
    }

    /// Current forecast `level + trend`.
    pub fn forecast(&self) -> DVector<f64> {
        &self.level + &self.trend
    }

    /// Folds in the estimate `x` and returns the next forecast with its
    /// Jacobian `alpha (1 + beta) I`:
    ///
    /// `level' = alpha x + (1 - alpha)(level + trend)`,
    /// `trend' = beta (level' - level) + (1 - beta) trend`.
    pub fn advance(&mut self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if x.len() != self.level.len() {
            return dim_err(format!(
                "estimate length {} vs holt state {}",
                x.len(),
                self.level.len()
            ));
        }
        let HoltParams { alpha, beta } = self.params;
        let level = x * alpha + self.forecast() * (1.0 - alpha);
        let trend = (&level - &self.level) * beta + &self.trend * (1.0 - beta);
        self.level = level;
        self.trend = trend;
        let n = x.len();
        Ok((
            self.forecast(),
            DMatrix::identity(n, n) * (alpha * (1.0 + beta)),
        ))
    }

    /// Advances with `x` and packages the step as an affine process whose
    /// value at `x` is the new forecast.
    pub fn transition(&mut self, x: &DVector<f64>, q: &DMatrix<f64>) -> Result<AffineProcess> {
        let (pred, g) = self.advance(x)?;
        let offset = &pred - &g * x;
        AffineProcess::new(g, offset, q.clone())
    }
}

/// Stateless form of one Holt step: `(prediction, G)` for the given
/// level/trend and new estimate.
pub fn holt_transition(
    params: HoltParams,
    level: &DVector<f64>,
    trend: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mut s = HoltState {
        params,
        level: level.clone(),
        trend: trend.clone(),
    };
    params.validate()?;
    s.advance(x)
}
