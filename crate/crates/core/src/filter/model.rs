use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Result};

/// State transition `u_k = f(u_{k-1}) + q`.
pub trait ProcessModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn transition(&self, u: &DVector<f64>) -> DVector<f64>;
    fn transition_jacobian(&self, u: &DVector<f64>) -> DMatrix<f64>;
    fn process_noise(&self) -> &DMatrix<f64>;
}

/// Measurement `v_k = h(u_k) + r`.
pub trait MeasurementModel: Send + Sync {
    fn measurement_dim(&self) -> usize;
    fn measure(&self, u: &DVector<f64>) -> DVector<f64>;
    fn measurement_jacobian(&self, u: &DVector<f64>) -> DMatrix<f64>;
    fn measurement_noise(&self) -> &DMatrix<f64>;
}

/// `f(u) = F u + c`.
#[derive(Debug, Clone)]
pub struct AffineProcess {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub noise: DMatrix<f64>,
}

impl AffineProcess {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>, noise: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if !matrix.is_square() || offset.len() != n || noise.shape() != (n, n) {
            return dim_err("affine process needs square F, matching offset and Q");
        }
        Ok(Self {
            matrix,
            offset,
            noise,
        })
    }

    pub fn linear(matrix: DMatrix<f64>, noise: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        Self::new(matrix, DVector::zeros(n), noise)
    }
}

impl ProcessModel for AffineProcess {
    fn state_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn transition(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.matrix * u + &self.offset
    }

    fn transition_jacobian(&self, _u: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }

    fn process_noise(&self) -> &DMatrix<f64> {
        &self.noise
    }
}

/// `h(u) = H u`.
#[derive(Debug, Clone)]
pub struct LinearMeasurement {
    pub matrix: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

impl LinearMeasurement {
    pub fn new(matrix: DMatrix<f64>, noise: DMatrix<f64>) -> Result<Self> {
        let m = matrix.nrows();
        if noise.shape() != (m, m) {
            return dim_err(format!("R must be {m}x{m}, got {:?}", noise.shape()));
        }
        Ok(Self { matrix, noise })
    }
}

impl MeasurementModel for LinearMeasurement {
    fn measurement_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn measure(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.matrix * u
    }

    fn measurement_jacobian(&self, _u: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }

    fn measurement_noise(&self) -> &DMatrix<f64> {
        &self.noise
    }
}

/// Central finite-difference Jacobian of `f` at `u`.
pub fn finite_difference_jacobian<F>(f: F, u: &DVector<f64>, step: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let f0 = f(u);
    let mut jac = DMatrix::zeros(f0.len(), u.len());
    let mut probe = u.clone();
    for j in 0..u.len() {
        let orig = probe[j];
        probe[j] = orig + step;
        let fp = f(&probe);
        probe[j] = orig - step;
        let fm = f(&probe);
        probe[j] = orig;
        jac.set_column(j, &((fp - fm) / (2.0 * step)));
    }
    jac
}
