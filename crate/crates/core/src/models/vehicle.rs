//! Constant-velocity land vehicle observed through a two-row sensor.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::noise::{sample_noise, NoiseModel};
use crate::error::{dim_err, Result};
use crate::filter::{AffineProcess, GaussianBelief, LinearMeasurement};
use crate::linalg::cholesky_with_jitter;

pub const VEHICLE_DT: f64 = 0.3;

/// `[north, east, north velocity, east velocity]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleModel {
    pub f: DMatrix<f64>,
    pub hm: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Noise covariance assumed by the filters.
    pub r: DMatrix<f64>,
    chol_q: DMatrix<f64>,
}

pub fn vehicle_transition_matrix(dt: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.0, dt, 0.0, 0.0, 1.0, 0.0, dt, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0,
        ],
    )
}

pub fn vehicle_measurement_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 4, &[-1.0, 0.0, -1.0, 0.0, 0.0, -1.0, 0.0, -1.0])
}

impl VehicleModel {
    pub fn new(dt: f64, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if q.shape() != (4, 4) || r.shape() != (2, 2) {
            return dim_err("vehicle model needs 4x4 Q and 2x2 R");
        }
        let chol_q = if q.iter().all(|&x| x == 0.0) {
            DMatrix::zeros(4, 4)
        } else {
            cholesky_with_jitter(&q)?
        };
        Ok(Self {
            f: vehicle_transition_matrix(dt),
            hm: vehicle_measurement_matrix(),
            q,
            r,
            chol_q,
        })
    }

    /// `dt = 0.3`, `Q = 1e-2 I`, `R = I`.
    pub fn standard() -> Self {
        Self::new(
            VEHICLE_DT,
            DMatrix::identity(4, 4) * 1e-2,
            DMatrix::identity(2, 2),
        )
        .expect("valid defaults")
    }

    pub fn process(&self) -> AffineProcess {
        AffineProcess::linear(self.f.clone(), self.q.clone()).expect("square transition")
    }

    pub fn measurement(&self) -> LinearMeasurement {
        LinearMeasurement::new(self.hm.clone(), self.r.clone()).expect("consistent shapes")
    }

    pub fn initial_truth() -> DVector<f64> {
        DVector::from_vec(vec![0.0, 10.0, 3f64.sqrt(), 10.0])
    }

    pub fn initial_belief() -> GaussianBelief {
        GaussianBelief {
            mean: DVector::from_element(4, 1.0),
            cov: DMatrix::from_diagonal(&DVector::from_vec(vec![900.0, 900.0, 4.0, 4.0])),
        }
    }

    /// `F u + q`, `q ~ N(0, Q)`.
    pub fn step<R: Rng + ?Sized>(&self, u: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let white = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.f * u + &self.chol_q * white
    }

    /// `Hm u + r` with i.i.d. components of `r` from `noise`.
    pub fn measure<R: Rng + ?Sized>(
        &self,
        u: &DVector<f64>,
        noise: &NoiseModel,
        rng: &mut R,
    ) -> DVector<f64> {
        let r = DVector::from_fn(2, |_, _| sample_noise(noise, rng));
        &self.hm * u + r
    }
}
