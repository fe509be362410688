//! Correntropy kernels and the per-residual weights they induce.
//!
//! All kernels here act on *whitened* scalar residuals, so bandwidths and
//! centers are expressed in whitened (unit-variance) units.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Result};

/// Student's t degrees of freedom used when a configuration leaves it out.
pub const DEFAULT_DOF: f64 = 3.0;

/// Free coefficients of the Student's t + Cauchy mixture kernel.
///
/// `alpha` is the Student's t bandwidth, `omega` the Cauchy scale (it enters
/// as a squared width), `lambda` the Student's t degrees of freedom and
/// `a1`/`a2` the two kernel centers. `theta` weights the Student's t part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub theta: f64,
    pub alpha: f64,
    pub omega: f64,
    #[serde(default = "default_dof")]
    pub lambda: f64,
    #[serde(default)]
    pub a1: f64,
    #[serde(default)]
    pub a2: f64,
}

fn default_dof() -> f64 {
    DEFAULT_DOF
}

impl KernelParams {
    pub fn new(theta: f64, alpha: f64, omega: f64, lambda: f64, a1: f64, a2: f64) -> Result<Self> {
        let p = Self {
            theta,
            alpha,
            omega,
            lambda,
            a1,
            a2,
        };
        p.validate()?;
        Ok(p)
    }

    /// The fixed-coefficient setting used by the non-adaptive MKMMC filter:
    /// `omega = 1.5`, `alpha = 2.2`, `a1 = -0.025`, `a2 = 0.0032`.
    pub fn fixed_benchmark(theta: f64) -> Self {
        Self {
            theta,
            alpha: 2.2,
            omega: 1.5,
            lambda: DEFAULT_DOF,
            a1: -0.025,
            a2: 0.0032,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return param_err(format!("mixture coefficient {} outside [0, 1]", self.theta));
        }
        check_positive("alpha", self.alpha)?;
        check_positive("omega", self.omega)?;
        check_positive("lambda", self.lambda)?;
        if !self.a1.is_finite() || !self.a2.is_finite() {
            return param_err("kernel centers must be finite");
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn eval(&self, e: f64) -> f64 {
        let s = student_t_raw(e - self.a1, self.alpha, self.lambda);
        let c = cauchy_raw(e - self.a2, self.omega);
        self.theta * s + (1.0 - self.theta) * c
    }
}

impl Default for KernelParams {
    fn default() -> Self {
        Self::fixed_benchmark(0.5)
    }
}

/// Kernel used to weight residuals inside the fixed-point update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineKernel {
    /// Unit weights: plain (extended) Kalman update.
    None,
    /// Single Gaussian kernel (maximum correntropy criterion).
    Gaussian { sigma: f64 },
    /// Convex mixture of two zero-mean Gaussian kernels.
    GaussianMixture {
        theta: f64,
        sigma1: f64,
        sigma2: f64,
    },
    /// Student's t + Cauchy mixture.
    Mkmc(KernelParams),
}

impl BaselineKernel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BaselineKernel::None => Ok(()),
            BaselineKernel::Gaussian { sigma } => check_positive("sigma", sigma),
            BaselineKernel::GaussianMixture {
                theta,
                sigma1,
                sigma2,
            } => {
                if !(0.0..=1.0).contains(&theta) {
                    return param_err(format!("mixture coefficient {theta} outside [0, 1]"));
                }
                check_positive("sigma1", sigma1)?;
                check_positive("sigma2", sigma2)
            }
            BaselineKernel::Mkmc(p) => p.validate(),
        }
    }

    /// Weight of a single whitened residual. Assumes a validated kernel.
    #[inline]
    pub fn weight(&self, e: f64) -> f64 {
        match *self {
            BaselineKernel::None => 1.0,
            BaselineKernel::Gaussian { sigma } => gaussian_raw(e, sigma),
            BaselineKernel::GaussianMixture {
                theta,
                sigma1,
                sigma2,
            } => theta * gaussian_raw(e, sigma1) + (1.0 - theta) * gaussian_raw(e, sigma2),
            BaselineKernel::Mkmc(p) => p.eval(e),
        }
    }

    /// True when the weights do not depend on the residual.
    pub fn is_constant(&self) -> bool {
        matches!(self, BaselineKernel::None)
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        param_err(format!("{name} must be positive and finite, got {v}"))
    }
}

#[inline]
pub(crate) fn student_t_raw(d: f64, alpha: f64, lambda: f64) -> f64 {
    let base = 1.0 + d * d / (lambda * alpha * alpha);
    let twice = lambda + 2.0;
    // Integer and half-integer exponents avoid powf, which dominates filter runtime.
    if twice <= 64.0 && twice.fract() == 0.0 {
        let k = twice as i32;
        let whole = base.powi(k / 2);
        return if k % 2 == 0 {
            1.0 / whole
        } else {
            1.0 / (whole * base.sqrt())
        };
    }
    base.powf(-twice / 2.0)
}

#[inline]
pub(crate) fn cauchy_raw(d: f64, omega: f64) -> f64 {
    1.0 / (1.0 + d * d / omega)
}

#[inline]
fn gaussian_raw(e: f64, sigma: f64) -> f64 {
    (-e * e / (2.0 * sigma * sigma)).exp()
}

/// Student's t kernel `(1 + (e - a1)^2 / (lambda alpha^2))^(-(lambda + 2) / 2)`.
pub fn student_t_kernel(e: f64, a1: f64, alpha: f64, lambda: f64) -> Result<f64> {
    check_positive("alpha", alpha)?;
    check_positive("lambda", lambda)?;
    Ok(student_t_raw(e - a1, alpha, lambda))
}

/// Cauchy kernel `1 / (1 + (e - a2)^2 / omega)`.
pub fn cauchy_kernel(e: f64, a2: f64, omega: f64) -> Result<f64> {
    check_positive("omega", omega)?;
    Ok(cauchy_raw(e - a2, omega))
}

/// Zero-mean Gaussian kernel `exp(-e^2 / (2 sigma^2))`.
pub fn gaussian_kernel(e: f64, sigma: f64) -> Result<f64> {
    check_positive("sigma", sigma)?;
    Ok(gaussian_raw(e, sigma))
}

/// The MKMC mixture `theta S(e - a1) + (1 - theta) C(e - a2)`.
pub fn mkmc_value(e: f64, p: &KernelParams) -> Result<f64> {
    p.validate()?;
    Ok(p.eval(e))
}

/// Small-error quadratic approximation of the mixture. Centers are ignored,
/// so this is only meaningful near `a1 = a2 = 0`.
pub fn mkmc_quadratic_approx(e: f64, p: &KernelParams) -> Result<f64> {
    p.validate()?;
    Ok(1.0 - quadratic_coefficient(p) * e * e)
}

/// Curvature coefficient `theta (lambda + 1) / (2 lambda alpha^2) + (1 - theta) / omega`.
pub fn quadratic_coefficient(p: &KernelParams) -> f64 {
    p.theta * (p.lambda + 1.0) / (2.0 * p.lambda * p.alpha * p.alpha) + (1.0 - p.theta) / p.omega
}

/// Weight of one whitened residual under kernel `k`.
pub fn weight_value(e: f64, k: &BaselineKernel) -> Result<f64> {
    k.validate()?;
    Ok(k.weight(e))
}

/// Diagonals of the state-block and measurement-block weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalWeights {
    pub state: DVector<f64>,
    pub measurement: DVector<f64>,
}

/// Splits the weights of the stacked residual `errors` (state block first,
/// `n` entries, then the measurement block) into the two diagonals.
pub fn weight_matrix(
    errors: &DVector<f64>,
    k: &BaselineKernel,
    n: usize,
) -> Result<DiagonalWeights> {
    k.validate()?;
    if errors.is_empty() || n > errors.len() {
        return dim_err(format!(
            "stacked residual of length {} cannot hold a state block of {}",
            errors.len(),
            n
        ));
    }
    Ok(weights_unchecked(errors, k, n))
}

pub(crate) fn weights_unchecked(
    errors: &DVector<f64>,
    k: &BaselineKernel,
    n: usize,
) -> DiagonalWeights {
    let m = errors.len() - n;
    DiagonalWeights {
        state: DVector::from_fn(n, |i, _| k.weight(errors[i])),
        measurement: DVector::from_fn(m, |i, _| k.weight(errors[n + i])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_zero() -> KernelParams {
        KernelParams::new(0.5, 1.0, 1.0, 3.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn student_t_at_center_is_one() {
        assert_eq!(student_t_kernel(0.7, 0.7, 2.2, 3.0).unwrap(), 1.0);
    }

    #[test]
    fn student_t_inner_term_two() {
        for alpha in [0.3, 1.0, 4.5] {
            let d = alpha * 2f64.sqrt();
            assert_relative_eq!(
                student_t_kernel(d, 0.0, alpha, 2.0).unwrap(),
                0.25,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn student_t_reference_value() {
        // (1 + 25/3)^(-5/2), evaluated independently with mpmath.
        let v = student_t_kernel(5.0, 0.0, 1.0, 3.0).unwrap();
        assert_relative_eq!(v, 0.003_757_578_467_073_848_4, max_relative = 1e-13);
    }

    #[test]
    fn cauchy_values() {
        assert_eq!(cauchy_kernel(1.3, 1.3, 0.4).unwrap(), 1.0);
        assert_relative_eq!(
            cauchy_kernel(2.0 + 1.5f64.sqrt(), 2.0, 1.5).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        // 1 / (1 + 25/1.5) = 3/53
        assert_relative_eq!(
            cauchy_kernel(5.0, 0.0, 1.5).unwrap(),
            3.0 / 53.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(student_t_kernel(0.0, 0.0, 0.0, 3.0).is_err());
        assert!(student_t_kernel(0.0, 0.0, 1.0, -1.0).is_err());
        assert!(cauchy_kernel(0.0, 0.0, 0.0).is_err());
        assert!(KernelParams::new(1.2, 1.0, 1.0, 3.0, 0.0, 0.0).is_err());
        assert!(BaselineKernel::Gaussian { sigma: -1.0 }.validate().is_err());
        assert!(weight_value(
            0.0,
            &BaselineKernel::GaussianMixture {
                theta: 0.5,
                sigma1: 1.0,
                sigma2: 0.0
            }
        )
        .is_err());
    }

    #[test]
    fn mixture_at_shared_center() {
        let p = KernelParams::new(0.5, 0.8, 2.0, 3.0, 1.0, 1.0).unwrap();
        assert_eq!(mkmc_value(1.0, &p).unwrap(), 1.0);
    }

    #[test]
    fn mixture_reference_value() {
        // theta = 0.5, alpha = 2.2, omega = 1.5, lambda = 3, zero centers, e = 5:
        // 0.5 (1 + 25/14.52)^(-2.5) + 0.5 * 3/53, evaluated with mpmath.
        let p = KernelParams::new(0.5, 2.2, 1.5, 3.0, 0.0, 0.0).unwrap();
        assert_relative_eq!(
            mkmc_value(5.0, &p).unwrap(),
            0.069_213_273_982_978_39,
            max_relative = 1e-12
        );
    }

    #[test]
    fn reductions_are_bitwise() {
        let mut p = KernelParams::new(1.0, 1.7, 0.9, 4.0, 0.3, -0.2).unwrap();
        for e in [-3.0, -0.1, 0.0, 0.4, 12.0] {
            assert_eq!(
                mkmc_value(e, &p).unwrap(),
                student_t_kernel(e, p.a1, p.alpha, p.lambda).unwrap()
            );
        }
        p.theta = 0.0;
        for e in [-3.0, -0.1, 0.0, 0.4, 12.0] {
            assert_eq!(
                mkmc_value(e, &p).unwrap(),
                cauchy_kernel(e, p.a2, p.omega).unwrap()
            );
        }
    }

    #[test]
    fn quadratic_approx_cases() {
        let p = unit_zero();
        assert_eq!(mkmc_quadratic_approx(0.0, &p).unwrap(), 1.0);
        let q = KernelParams::new(1.0, 1.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        assert_relative_eq!(
            mkmc_quadratic_approx(0.3, &q).unwrap(),
            1.0 - 0.09,
            epsilon = 1e-15
        );
    }

    #[test]
    fn cauchy_part_error_is_fourth_order() {
        let p = KernelParams::new(0.0, 1.0, 1.0, 3.0, 0.0, 0.0).unwrap();
        let mut e = 1e-3;
        while e <= 1e-1 {
            let err = (mkmc_value(e, &p).unwrap() - mkmc_quadratic_approx(e, &p).unwrap()).abs();
            assert!(err / e.powi(4) <= 1.01, "e = {e}");
            e *= 1.2;
        }
    }

    #[test]
    fn student_part_keeps_second_order_residual() {
        // The Student's t curvature is (lambda + 2) / (2 lambda alpha^2), so the
        // approximation leaves theta e^2 / (2 lambda alpha^2) at second order.
        let p = unit_zero();
        let e = 1e-3;
        let err = mkmc_value(e, &p).unwrap() - mkmc_quadratic_approx(e, &p).unwrap();
        let lead = -p.theta / (2.0 * p.lambda * p.alpha * p.alpha);
        assert_relative_eq!(err / (e * e), lead, max_relative = 1e-4);
    }

    #[test]
    fn heavier_tail_than_matched_gaussian() {
        let p = KernelParams::new(0.5, 2.2, 1.5, 3.0, 0.0, 0.0).unwrap();
        let sigma = (1.0 / (2.0 * quadratic_coefficient(&p))).sqrt();
        for e in [5.0, 10.0, 20.0] {
            assert!(mkmc_value(e, &p).unwrap() > gaussian_kernel(e, sigma).unwrap());
        }
    }

    #[test]
    fn monotone_decay_about_center() {
        let p = KernelParams::new(0.3, 1.1, 0.7, 3.0, 0.6, 0.6).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..400 {
            let d = i as f64 * 0.05;
            let up = mkmc_value(0.6 + d, &p).unwrap();
            let down = mkmc_value(0.6 - d, &p).unwrap();
            assert!(up < prev || i == 0);
            assert_relative_eq!(up, down, max_relative = 1e-14);
            prev = up;
        }
    }

    #[test]
    fn baseline_weights() {
        assert_eq!(weight_value(123.0, &BaselineKernel::None).unwrap(), 1.0);
        assert_eq!(
            weight_value(0.0, &BaselineKernel::Gaussian { sigma: 1.8 }).unwrap(),
            1.0
        );
        let mmc = BaselineKernel::GaussianMixture {
            theta: 0.25,
            sigma1: 1.6,
            sigma2: 1.2,
        };
        let e: f64 = 1.1;
        let expect =
            0.25 * (-e * e / (2.0 * 1.6 * 1.6)).exp() + 0.75 * (-e * e / (2.0 * 1.2 * 1.2)).exp();
        assert_relative_eq!(weight_value(e, &mmc).unwrap(), expect, max_relative = 1e-15);
    }

    #[test]
    fn benchmark_mkmc_weight() {
        // theta = 0.5 with the fixed benchmark centers and bandwidths at e = 3,
        // evaluated independently with mpmath.
        let k = BaselineKernel::Mkmc(KernelParams::fixed_benchmark(0.5));
        assert_relative_eq!(
            weight_value(3.0, &k).unwrap(),
            0.218_913_455_746_473_1,
            max_relative = 1e-12
        );
    }

    #[test]
    fn weight_matrix_blocks() {
        let p = KernelParams::new(0.5, 1.0, 1.0, 3.0, 0.2, 0.2).unwrap();
        let k = BaselineKernel::Mkmc(p);
        let w = weight_matrix(&DVector::from_element(5, 0.2), &k, 2).unwrap();
        assert_eq!(w.state, DVector::from_element(2, 1.0));
        assert_eq!(w.measurement, DVector::from_element(3, 1.0));

        let w = weight_matrix(&DVector::zeros(4), &BaselineKernel::None, 1).unwrap();
        assert!(w
            .state
            .iter()
            .chain(w.measurement.iter())
            .all(|&x| x == 1.0));

        let errs = DVector::from_vec(vec![0.1, -0.3, 0.2, 1e3, 0.5]);
        let w = weight_matrix(&errs, &k, 2).unwrap();
        let big = w.measurement[1];
        assert!(w
            .state
            .iter()
            .chain([w.measurement[0], w.measurement[2]].iter())
            .all(|&x| x > big));

        assert!(weight_matrix(&DVector::zeros(0), &k, 0).is_err());
        assert!(weight_matrix(&DVector::zeros(3), &k, 4).is_err());
    }
}
