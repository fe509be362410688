//! Data-driven selection of the MKMC coefficients.
//!
//! Given a window of recent whitened residuals, the centers come from a
//! two-cluster K-means, the bandwidths from a grid search over the
//! density-matching objective `-1/2 t^T Theta t + t^T Gamma`, and the mixture
//! coefficient from the ridge solution `t* = (Theta + gamma I)^-1 Gamma`.

use std::collections::VecDeque;

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::kernel::KernelParams;

/// Bounded FIFO of finite residual samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorWindow {
    samples: VecDeque<f64>,
    capacity: usize,
}

impl ErrorWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return param_err("window capacity must be at least 1");
        }
        Ok(Self {
            samples: VecDeque::with_capacity(capacity),
            capacity,
        })
    }

    pub fn from_samples(capacity: usize, samples: &[f64]) -> Result<Self> {
        let mut w = Self::new(capacity)?;
        w.extend(samples.iter().copied())?;
        Ok(w)
    }

    /// Appends a sample, evicting the oldest when full. Non-finite samples
    /// are rejected.
    pub fn push(&mut self, e: f64) -> Result<()> {
        if !e.is_finite() {
            return param_err("non-finite residual");
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(e);
        Ok(())
    }

    /// Pushes every finite sample; returns how many were rejected.
    pub fn extend<I: IntoIterator<Item = f64>>(&mut self, it: I) -> Result<usize> {
        let mut rejected = 0;
        for e in it {
            if self.push(e).is_err() {
                rejected += 1;
            }
        }
        Ok(rejected)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn samples(&self) -> Vec<f64> {
        self.samples.iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningConfig {
    /// Ridge coefficient in the mixture-coefficient solve.
    pub gamma: f64,
    /// Candidate `(alpha, omega)` pairs.
    pub bandwidth_grid: Vec<(f64, f64)>,
    /// Half-width of the quadrature domain around the centers. `None` uses
    /// eight times the widest bandwidth; ranges narrower than five
    /// bandwidths are widened.
    pub quad_range: Option<f64>,
    pub quad_points: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iters: usize,
    pub seed: u64,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            gamma: 1e-3,
            bandwidth_grid: cartesian_grid(
                &[0.5, 1.0, 1.5, 2.2, 3.0, 5.0],
                &[0.5, 1.0, 1.5, 2.5, 5.0],
            ),
            quad_range: None,
            quad_points: 2049,
            kmeans_restarts: 5,
            kmeans_max_iters: 100,
            seed: 0x6b6d_6d63,
        }
    }
}

impl TuningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return param_err("gamma must be positive");
        }
        if self.bandwidth_grid.is_empty() {
            return param_err("bandwidth grid is empty");
        }
        if self
            .bandwidth_grid
            .iter()
            .any(|&(a, o)| !(a > 0.0 && o > 0.0 && a.is_finite() && o.is_finite()))
        {
            return param_err("bandwidths must be positive and finite");
        }
        if self.quad_points < 2 {
            return param_err("quadrature needs at least two nodes");
        }
        if self.kmeans_restarts == 0 || self.kmeans_max_iters == 0 {
            return param_err("k-means needs at least one restart and one iteration");
        }
        Ok(())
    }
}

/// Every `(alpha, omega)` combination.
pub fn cartesian_grid(alphas: &[f64], omegas: &[f64]) -> Vec<(f64, f64)> {
    alphas
        .iter()
        .flat_map(|&a| omegas.iter().map(move |&o| (a, o)))
        .collect()
}

/// Kernel Gram matrix over the real line and the sample means of the two kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramPair {
    /// `Theta_jk = integral k_j(v - a_j) k_k(v - a_k) dv`.
    pub gram: Matrix2<f64>,
    /// `Gamma_j = mean_i k_j(e_i - a_j)`.
    pub means: Vector2<f64>,
}

use crate::kernel::{cauchy_raw as cauchy, student_t_raw as student_t};

/// `(lo, hi)` of the quadrature domain for the given centers and widths.
fn quadrature_domain(centers: (f64, f64), width: f64, cfg: &TuningConfig) -> (f64, f64) {
    let need = 5.0 * width;
    let half = match cfg.quad_range {
        Some(r) if r >= need => r,
        Some(r) => {
            log::debug!(
                "quadrature half-width {r} below five bandwidths, widening to {}",
                8.0 * width
            );
            8.0 * width
        }
        None => 8.0 * width,
    };
    (
        centers.0.min(centers.1) - half,
        centers.0.max(centers.1) + half,
    )
}

fn kernel_width(alpha: f64, omega: f64) -> f64 {
    alpha.max(omega.sqrt())
}

/// Composite trapezoid `h (sum f - (f_0 + f_last) / 2)` of `f * g` on uniform nodes.
fn trapezoid_product(f: &[f64], g: &[f64], h: f64) -> f64 {
    let last = f.len() - 1;
    let inner: f64 = f.iter().zip(g).map(|(a, b)| a * b).sum();
    h * (inner - 0.5 * (f[0] * g[0] + f[last] * g[last]))
}

fn nodes(lo: f64, hi: f64, count: usize) -> (Vec<f64>, f64) {
    let h = (hi - lo) / (count - 1) as f64;
    ((0..count).map(|i| lo + h * i as f64).collect(), h)
}

fn gram_from_tabulated(s: &[f64], c: &[f64], h: f64) -> Matrix2<f64> {
    let ss = trapezoid_product(s, s, h);
    let sc = trapezoid_product(s, c, h);
    let cc = trapezoid_product(c, c, h);
    Matrix2::new(ss, sc, sc, cc)
}

fn kernel_means(
    samples: &[f64],
    centers: (f64, f64),
    alpha: f64,
    omega: f64,
    lambda: f64,
) -> Vector2<f64> {
    let n = samples.len() as f64;
    let (mut g1, mut g2) = (0.0, 0.0);
    for &e in samples {
        g1 += student_t(e - centers.0, alpha, lambda);
        g2 += cauchy(e - centers.1, omega);
    }
    Vector2::new(g1 / n, g2 / n)
}

/// Builds `(Theta, Gamma)` for one bandwidth pair.
pub fn build_gram(
    win: &ErrorWindow,
    centers: (f64, f64),
    bandwidths: (f64, f64),
    lambda: f64,
    cfg: &TuningConfig,
) -> Result<GramPair> {
    cfg.validate()?;
    let (alpha, omega) = bandwidths;
    if !(alpha > 0.0 && omega > 0.0 && lambda > 0.0) {
        return param_err("bandwidths and degrees of freedom must be positive");
    }
    if win.is_empty() {
        return param_err("empty error window");
    }
    let (lo, hi) = quadrature_domain(centers, kernel_width(alpha, omega), cfg);
    let (xs, h) = nodes(lo, hi, cfg.quad_points);
    let s: Vec<f64> = xs
        .iter()
        .map(|&x| student_t(x - centers.0, alpha, lambda))
        .collect();
    let c: Vec<f64> = xs.iter().map(|&x| cauchy(x - centers.1, omega)).collect();
    Ok(GramPair {
        gram: gram_from_tabulated(&s, &c, h),
        means: kernel_means(&win.samples(), centers, alpha, omega, lambda),
    })
}

/// Ridge solution of the density-matching objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaSolution {
    /// `(Theta + gamma I)^-1 Gamma`.
    pub raw: Vector2<f64>,
    /// `raw_1 / (raw_1 + raw_2)` clamped to `[0, 1]`; 0.5 when the sum is not positive.
    pub theta: f64,
}

pub fn solve_theta(g: &GramPair, gamma: f64) -> Result<ThetaSolution> {
    if !(gamma > 0.0) {
        return param_err("gamma must be positive");
    }
    let a = g.gram + Matrix2::identity() * gamma;
    let raw = a
        .cholesky()
        .map(|c| c.solve(&g.means))
        .or_else(|| a.try_inverse().map(|inv| inv * g.means))
        .unwrap_or_else(|| Vector2::new(0.5, 0.5));
    let sum = raw[0] + raw[1];
    let theta = if sum > 0.0 && sum.is_finite() {
        (raw[0] / sum).clamp(0.0, 1.0)
    } else {
        log::debug!("mixture weights sum to {sum}; falling back to 0.5");
        0.5
    };
    Ok(ThetaSolution { raw, theta })
}

/// `-1/2 t^T Theta t + t^T Gamma`.
pub fn objective(g: &GramPair, t: &Vector2<f64>) -> f64 {
    -0.5 * t.dot(&(g.gram * t)) + t.dot(&g.means)
}

/// Objective value of one grid candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthScore {
    pub alpha: f64,
    pub omega: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthSelection {
    pub alpha: f64,
    pub omega: f64,
    pub objective: f64,
    /// Every candidate in grid order.
    pub scores: Vec<BandwidthScore>,
    /// Quadrature half-width shared by all candidates.
    pub quad_range: f64,
}

/// Evaluates the objective at `t* = (Theta + gamma I)^-1 Gamma` for every
/// grid pair and returns the maximiser; ties go to the smaller `alpha + omega`.
///
/// All candidates share one quadrature domain wide enough for the widest
/// kernel, so their Gram matrices are directly comparable.
pub fn select_bandwidths(
    win: &ErrorWindow,
    centers: (f64, f64),
    lambda: f64,
    cfg: &TuningConfig,
) -> Result<BandwidthSelection> {
    cfg.validate()?;
    if win.is_empty() {
        return param_err("empty error window");
    }
    if !(lambda > 0.0) {
        return param_err("degrees of freedom must be positive");
    }
    let widest = cfg
        .bandwidth_grid
        .iter()
        .map(|&(a, o)| kernel_width(a, o))
        .fold(0.0, f64::max);
    let shared = TuningConfig {
        quad_range: Some(match cfg.quad_range {
            Some(r) if r >= 5.0 * widest => r,
            _ => 8.0 * widest,
        }),
        ..cfg.clone()
    };
    let quad_range = shared.quad_range.unwrap_or_default();
    let (lo, hi) = quadrature_domain(centers, widest, &shared);
    let (xs, h) = nodes(lo, hi, cfg.quad_points);
    let samples = win.samples();

    // Kernel tabulations depend on one bandwidth each, so cache them.
    let mut s_cache: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut c_cache: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut scores = Vec::with_capacity(cfg.bandwidth_grid.len());
    let mut best: Option<BandwidthScore> = None;
    for &(alpha, omega) in &cfg.bandwidth_grid {
        if !s_cache.iter().any(|(a, _)| *a == alpha) {
            s_cache.push((
                alpha,
                xs.iter()
                    .map(|&x| student_t(x - centers.0, alpha, lambda))
                    .collect(),
            ));
        }
        if !c_cache.iter().any(|(o, _)| *o == omega) {
            c_cache.push((
                omega,
                xs.iter().map(|&x| cauchy(x - centers.1, omega)).collect(),
            ));
        }
        let s = &s_cache.iter().find(|(a, _)| *a == alpha).expect("cached").1;
        let c = &c_cache.iter().find(|(o, _)| *o == omega).expect("cached").1;
        let pair = GramPair {
            gram: gram_from_tabulated(s, c, h),
            means: kernel_means(&samples, centers, alpha, omega, lambda),
        };
        let sol = solve_theta(&pair, cfg.gamma)?;
        let score = BandwidthScore {
            alpha,
            omega,
            objective: objective(&pair, &sol.raw),
        };
        scores.push(score);
        best = match best {
            None => Some(score),
            Some(b)
                if score.objective > b.objective
                    || (score.objective == b.objective && alpha + omega < b.alpha + b.omega) =>
            {
                Some(score)
            }
            keep => keep,
        };
    }
    let best = best.expect("grid is non-empty");
    Ok(BandwidthSelection {
        alpha: best.alpha,
        omega: best.omega,
        objective: best.objective,
        scores,
        quad_range,
    })
}

/// Two-cluster K-means (Lloyd, seeded restarts) on scalar samples.
///
/// Returns `(a1, a2)` where `a2`, which feeds the heavier-tailed Cauchy
/// kernel, is the center of the cluster with the larger fourth central
/// moment. Equal moments put the smaller center first.
pub fn estimate_centers(win: &ErrorWindow, cfg: &TuningConfig) -> Result<(f64, f64)> {
    let samples = win.samples();
    if samples.is_empty() {
        return param_err("empty error window");
    }
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| {
            (l.min(x), h.max(x))
        });
    if lo == hi {
        return Ok((lo, lo));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(f64, [f64; 2])> = None;
    for restart in 0..cfg.kmeans_restarts {
        let mut c = if restart == 0 {
            [lo, hi]
        } else {
            let i = rng.gen_range(0..samples.len());
            let mut j = rng.gen_range(0..samples.len());
            let mut guard = 0;
            while samples[j] == samples[i] && guard < 64 {
                j = rng.gen_range(0..samples.len());
                guard += 1;
            }
            [samples[i], samples[j]]
        };
        for _ in 0..cfg.kmeans_max_iters {
            let mut sum = [0.0; 2];
            let mut cnt = [0usize; 2];
            for &x in &samples {
                let k = usize::from((x - c[1]).abs() < (x - c[0]).abs());
                sum[k] += x;
                cnt[k] += 1;
            }
            let mut next = c;
            for k in 0..2 {
                if cnt[k] > 0 {
                    next[k] = sum[k] / cnt[k] as f64;
                }
            }
            if next == c {
                break;
            }
            c = next;
        }
        let inertia: f64 = samples
            .iter()
            .map(|&x| ((x - c[0]).powi(2)).min((x - c[1]).powi(2)))
            .sum();
        if best.is_none_or(|(b, _)| inertia < b) {
            best = Some((inertia, c));
        }
    }
    let (_, c) = best.expect("at least one restart");
    let (mut lo_c, mut hi_c) = (c[0].min(c[1]), c[0].max(c[1]));
    if lo_c == hi_c {
        return Ok((lo_c, hi_c));
    }

    let moment = |center: f64, other: f64| -> f64 {
        let members: Vec<f64> = samples
            .iter()
            .copied()
            .filter(|&x| (x - center).abs() <= (x - other).abs())
            .collect();
        if members.is_empty() {
            return 0.0;
        }
        let mean = members.iter().sum::<f64>() / members.len() as f64;
        members.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / members.len() as f64
    };
    if moment(lo_c, hi_c) > moment(hi_c, lo_c) {
        std::mem::swap(&mut lo_c, &mut hi_c);
    }
    Ok((lo_c, hi_c))
}

/// Full record of one adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct Adaptation {
    pub params: KernelParams,
    pub objective: f64,
    /// The previous parameters were kept because adaptation failed.
    pub fell_back: bool,
}

/// Picks centers, bandwidths and mixture coefficient from `win`.
/// Falls back to `previous` if any stage fails.
pub fn adapt(
    win: &ErrorWindow,
    lambda: f64,
    cfg: &TuningConfig,
    previous: &KernelParams,
) -> KernelParams {
    adapt_detailed(win, lambda, cfg, previous).params
}

pub fn adapt_detailed(
    win: &ErrorWindow,
    lambda: f64,
    cfg: &TuningConfig,
    previous: &KernelParams,
) -> Adaptation {
    match try_adapt(win, lambda, cfg) {
        Ok(a) => a,
        Err(e) => {
            log::debug!("kernel adaptation fell back: {e}");
            Adaptation {
                params: *previous,
                objective: f64::NAN,
                fell_back: true,
            }
        }
    }
}

fn try_adapt(win: &ErrorWindow, lambda: f64, cfg: &TuningConfig) -> Result<Adaptation> {
    let centers = estimate_centers(win, cfg)?;
    let bw = select_bandwidths(win, centers, lambda, cfg)?;
    let shared = TuningConfig {
        quad_range: Some(bw.quad_range),
        ..cfg.clone()
    };
    let pair = build_gram(win, centers, (bw.alpha, bw.omega), lambda, &shared)?;
    let mut theta = solve_theta(&pair, cfg.gamma)?.theta;
    // A window with no spread carries no shape information.
    if centers.0 == centers.1 && win.samples().iter().all(|&x| x == centers.0) {
        theta = 0.5;
    }
    let params = KernelParams::new(theta, bw.alpha, bw.omega, lambda, centers.0, centers.1)?;
    Ok(Adaptation {
        params,
        objective: bw.objective,
        fell_back: false,
    })
}
