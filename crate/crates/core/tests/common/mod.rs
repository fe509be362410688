#![allow(dead_code)]

use mkmc_core::filter::{GaussianBelief, LinearMeasurement};
use mkmc_core::kernel::KernelParams;
use mkmc_core::tuning::GramPair;
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn normal_vector<R: Rng>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// `A A^T / k + floor I`, eigenvalues bounded away from zero.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, floor: f64) -> DMatrix<f64> {
    let a = normal_matrix(rng, n, n);
    let mut s = &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * floor;
    let t = s.transpose();
    s = (&s + t) * 0.5;
    s
}

/// A linear measurement update: prior, model and a measurement drawn near the prior.
pub struct LinearProblem {
    pub prior: GaussianBelief,
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub model: LinearMeasurement,
    pub v: DVector<f64>,
}

pub fn linear_problem<R: Rng>(rng: &mut R, n: usize, m: usize) -> LinearProblem {
    let mean = normal_vector(rng, n);
    let p = random_spd(rng, n, 0.2);
    let h = normal_matrix(rng, m, n);
    let r = random_spd(rng, m, 0.3);
    let v = &h * &mean + normal_vector(rng, m) * 1.5;
    LinearProblem {
        prior: GaussianBelief::new(mean, p).unwrap(),
        model: LinearMeasurement::new(h.clone(), r.clone()).unwrap(),
        h,
        r,
        v,
    }
}

/// Covariance-form Kalman update with the Joseph covariance.
pub fn textbook_kf(
    mean: &DVector<f64>,
    p: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    v: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let s = h * p * h.transpose() + r;
    let k = p * h.transpose() * s.try_inverse().unwrap();
    let post_mean = mean + &k * (v - h * mean);
    let a = DMatrix::identity(mean.len(), mean.len()) - &k * h;
    let post_cov = &a * p * a.transpose() + &k * r * k.transpose();
    (post_mean, post_cov)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

pub fn max_abs_diff_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).abs().max()
}

pub fn symmetric_min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let s = (a + a.transpose()) * 0.5;
    s.symmetric_eigenvalues().min()
}

pub fn student_t(d: f64, alpha: f64, lambda: f64) -> f64 {
    (1.0 + d * d / (lambda * alpha * alpha)).powf(-(lambda + 2.0) / 2.0)
}

/// Mixture kernel written out directly, independent of the library.
pub fn mixture(e: f64, p: &KernelParams) -> f64 {
    p.theta * student_t(e - p.a1, p.alpha, p.lambda)
        + (1.0 - p.theta) / (1.0 + (e - p.a2).powi(2) / p.omega)
}

/// Iteratively reweighted least squares on the stacked, jointly whitened system.
pub fn brute_force_irls(lp: &LinearProblem, p: &KernelParams) -> DVector<f64> {
    let n = lp.prior.dim();
    let m = lp.v.len();
    let mut joint = DMatrix::zeros(n + m, n + m);
    joint.view_mut((0, 0), (n, n)).copy_from(&lp.prior.cov);
    joint.view_mut((n, n), (m, m)).copy_from(&lp.r);
    let l = joint.cholesky().unwrap().l();
    let l_inv = l.try_inverse().unwrap();
    let mut design = DMatrix::zeros(n + m, n);
    design.view_mut((0, 0), (n, n)).fill_with_identity();
    design.view_mut((n, 0), (m, n)).copy_from(&lp.h);
    let mut stacked = DVector::zeros(n + m);
    stacked.rows_mut(0, n).copy_from(&lp.prior.mean);
    stacked.rows_mut(n, m).copy_from(&lp.v);
    let w = &l_inv * design;
    let z = &l_inv * stacked;

    let mut u = lp.prior.mean.clone();
    for _ in 0..100_000 {
        let e = &z - &w * &u;
        let d = DMatrix::from_diagonal(&e.map(|x| mixture(x, p)));
        let lhs = w.transpose() * &d * &w;
        let rhs = w.transpose() * &d * &z;
        let next = lhs.lu().solve(&rhs).unwrap();
        let done = (&next - &u).norm() <= 1e-15 * (1.0 + u.norm());
        u = next;
        if done {
            break;
        }
    }
    u
}

/// One sensor: `(H, R, v)`.
pub type Sensor = (DMatrix<f64>, DMatrix<f64>, DVector<f64>);

pub fn random_sensor<R: Rng>(rng: &mut R, prior: &GaussianBelief, m: usize) -> Sensor {
    let n = prior.dim();
    let h = normal_matrix(rng, m, n);
    let r = random_spd(rng, m, 0.3);
    let v = &h * &prior.mean + normal_vector(rng, m);
    (h, r, v)
}

/// Centralized Kalman update on all sensors stacked into one measurement.
pub fn stacked_kf(prior: &GaussianBelief, sensors: &[Sensor]) -> (DVector<f64>, DMatrix<f64>) {
    let n = prior.dim();
    let total: usize = sensors.iter().map(|s| s.0.nrows()).sum();
    let mut h = DMatrix::zeros(total, n);
    let mut r = DMatrix::zeros(total, total);
    let mut v = DVector::zeros(total);
    let mut at = 0;
    for (hs, rs, vs) in sensors {
        let m = hs.nrows();
        h.view_mut((at, 0), (m, n)).copy_from(hs);
        r.view_mut((at, at), (m, m)).copy_from(rs);
        v.rows_mut(at, m).copy_from(vs);
        at += m;
    }
    textbook_kf(&prior.mean, &prior.cov, &h, &r, &v)
}

/// Random spanning tree plus a few extra edges.
pub fn random_connected<R: Rng>(rng: &mut R, b: usize, extra: usize) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = (1..b).map(|i| (rng.gen_range(0..i), i)).collect();
    for _ in 0..extra {
        let i = rng.gen_range(0..b);
        let j = rng.gen_range(0..b);
        if i != j {
            edges.push((i, j));
        }
    }
    edges
}

/// Ridge-regularized fit objective, written out directly.
pub fn ridge_objective(g: &GramPair, gamma: f64, t: (f64, f64)) -> f64 {
    let (a, b) = t;
    let quad = g.gram[(0, 0)] * a * a + 2.0 * g.gram[(0, 1)] * a * b + g.gram[(1, 1)] * b * b;
    -0.5 * quad + a * g.means[0] + b * g.means[1] - 0.5 * gamma * (a * a + b * b)
}

/// Gram pair with eigenvalues in [0.3, 3].
pub fn random_pair<R: Rng>(rng: &mut R) -> GramPair {
    let angle = rng.gen_range(0.0..std::f64::consts::PI);
    let (c, s) = (angle.cos(), angle.sin());
    let rot = Matrix2::new(c, -s, s, c);
    let eig = Matrix2::from_diagonal(&Vector2::new(
        rng.gen_range(0.3..3.0),
        rng.gen_range(0.3..3.0),
    ));
    GramPair {
        gram: rot * eig * rot.transpose(),
        means: Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
    }
}

/// Exhaustive maximization on a `cells x cells` grid; returns `(argmax, cell width)`.
pub fn grid_argmax(g: &GramPair, gamma: f64, cells: usize) -> ((f64, f64), f64) {
    // |t*| <= |Gamma| / (lambda_min(Theta) + gamma) and lambda_min >= 0.3.
    let bound = 1.2 * g.means.norm() / 0.3;
    let h = 2.0 * bound / (cells - 1) as f64;
    let mut best = (f64::NEG_INFINITY, (0.0, 0.0));
    for i in 0..cells {
        for j in 0..cells {
            let t = (-bound + h * i as f64, -bound + h * j as f64);
            let v = ridge_objective(g, gamma, t);
            if v > best.0 {
                best = (v, t);
            }
        }
    }
    (best.1, h)
}
