use nalgebra::{Cholesky, DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::model::MeasurementModel;
use super::GaussianBelief;

/// Which covariance normalises the innovation in the gate statistic.
#[derive(Debug, Clone, Copy)]
pub enum InnovationCovariance<'a> {
    /// `H P H^T` alone.
    Literal,
    /// `H P H^T + R`.
    WithNoise(&'a DMatrix<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision {
    pub pass: bool,
    /// Normalised innovation `Pi^T G^-1 Pi`; infinite when `G` is singular.
    pub statistic: f64,
}

/// `p`-quantile of the chi-square distribution with `dof` degrees of freedom.
pub fn chi_square_quantile(p: f64, dof: usize) -> f64 {
    ChiSquared::new(dof.max(1) as f64)
        .map(|d| d.inverse_cdf(p))
        .unwrap_or(f64::INFINITY)
}

/// `Pi^T G^-1 Pi` with `G = H P H^T (+ R)`; `+inf` if `G` is not positive definite.
pub fn gate_statistic(
    innovation: &DVector<f64>,
    h: &DMatrix<f64>,
    state_cov: &DMatrix<f64>,
    cov: InnovationCovariance<'_>,
) -> f64 {
    let mut g = h * state_cov * h.transpose();
    if let InnovationCovariance::WithNoise(r) = cov {
        g += r;
    }
    match Cholesky::new(g) {
        Some(c) => {
            let s = innovation.dot(&c.solve(innovation));
            if s.is_finite() {
                s
            } else {
                f64::INFINITY
            }
        }
        None => f64::INFINITY,
    }
}

/// Tests the innovation `v - h(u)` of `prior` against threshold `mu`.
/// Passing is inclusive (`|stat| <= mu`); a singular innovation covariance
/// always fails.
pub fn threshold_gate(
    prior: &GaussianBelief,
    v: &DVector<f64>,
    model: &dyn MeasurementModel,
    mu: f64,
    cov: InnovationCovariance<'_>,
) -> GateDecision {
    let innovation = v - model.measure(&prior.mean);
    let h = model.measurement_jacobian(&prior.mean);
    let statistic = gate_statistic(&innovation, &h, &prior.cov, cov);
    GateDecision {
        pass: statistic.abs() <= mu,
        statistic,
    }
}
