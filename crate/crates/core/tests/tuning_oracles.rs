mod common;

use common::*;
use mkmc_core::kernel::KernelParams;
use mkmc_core::tuning::{
    adapt, build_gram, estimate_centers, select_bandwidths, solve_theta, ErrorWindow, GramPair,
    TuningConfig,
};
use nalgebra::{Matrix2, Vector2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Normal};

const GAMMA: f64 = 1e-3;

#[test]
fn ridge_solution_matches_a_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let g = random_pair(&mut rng);
        let (best, h) = grid_argmax(&g, GAMMA, 200);
        let sol = solve_theta(&g, GAMMA).unwrap();
        let at_solution = ridge_objective(&g, GAMMA, (sol.raw[0], sol.raw[1]));
        assert!(at_solution >= ridge_objective(&g, GAMMA, best) - 1e-12);
        let dist = ((sol.raw[0] - best.0).powi(2) + (sol.raw[1] - best.1).powi(2)).sqrt();
        // Condition number is at most 10, so the grid argmax lies within a few cells.
        assert!(dist <= 4.0 * h, "distance {dist}, cell {h}");
        let sum = sol.raw[0] + sol.raw[1];
        if sum > 0.0 {
            assert_eq!(sol.theta, (sol.raw[0] / sum).clamp(0.0, 1.0));
        } else {
            assert_eq!(sol.theta, 0.5);
        }
    }
}

#[test]
fn kmeans_recovers_symmetric_modes() {
    let cfg = TuningConfig::default();
    let mode = Normal::new(0.0, 0.3).unwrap();
    let mut hits = 0;
    for trial in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let samples: Vec<f64> = (0..200)
            .map(|_| if rng.gen_bool(0.5) { 2.0 } else { -2.0 } + mode.sample(&mut rng))
            .collect();
        let win = ErrorWindow::from_samples(200, &samples).unwrap();
        let (a1, a2) = estimate_centers(&win, &cfg).unwrap();
        let (lo, hi) = (a1.min(a2), a1.max(a2));
        if (lo + 2.0).abs() < 0.1 && (hi - 2.0).abs() < 0.1 {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits} of 100");
}

#[test]
fn selected_mixture_fits_the_error_density() {
    let cfg = TuningConfig::default();
    let scales = [0.5, 1.0, 2.0];
    let mut fits = 0;
    let trials = 30;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + trial);
        let scale = scales[trial as usize % scales.len()];
        let dist = Cauchy::new(0.0, scale).unwrap();
        let samples: Vec<f64> = (0..200).map(|_| dist.sample(&mut rng)).collect();
        let win = ErrorWindow::from_samples(200, &samples).unwrap();
        let sel = select_bandwidths(&win, (0.0, 0.0), 3.0, &cfg).unwrap();
        let pair = build_gram(&win, (0.0, 0.0), (sel.alpha, sel.omega), 3.0, &cfg).unwrap();
        let t = solve_theta(&pair, cfg.gamma).unwrap().raw;

        // Integrated squared error of the fitted mixture against the true density.
        let density = |v: f64| 1.0 / (std::f64::consts::PI * scale * (1.0 + (v / scale).powi(2)));
        let (lo, hi, nodes) = (-400.0, 400.0, 160_001);
        let h = (hi - lo) / (nodes - 1) as f64;
        let (mut ise, mut norm) = (0.0, 0.0);
        for i in 0..nodes {
            let v = lo + h * i as f64;
            let fit = t[0] * student_t(v, sel.alpha, 3.0) + t[1] / (1.0 + v * v / sel.omega);
            let w = if i == 0 || i == nodes - 1 { 0.5 * h } else { h };
            ise += w * (fit - density(v)).powi(2);
            norm += w * density(v).powi(2);
        }
        if ise < 0.1 * norm {
            fits += 1;
        }
    }
    assert!(fits * 10 >= trials * 8, "{fits} of {trials}");
}

#[test]
fn adaptation_is_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let samples: Vec<f64> = (0..150).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let win = ErrorWindow::from_samples(200, &samples).unwrap();
    let cfg = TuningConfig::default();
    let prev = KernelParams::default();
    let a = adapt(&win, 3.0, &cfg, &prev);
    let b = adapt(&win, 3.0, &cfg, &prev);
    assert_eq!(a, b);
    assert!(cfg.bandwidth_grid.contains(&(a.alpha, a.omega)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn theta_stays_in_the_unit_interval(
        a in 0.0..5.0f64, b in -2.0..2.0f64, c in 0.0..5.0f64,
        g1 in -3.0..3.0f64, g2 in -3.0..3.0f64, gamma in 1e-6..1.0f64,
    ) {
        // Diagonally dominated, so Theta is PSD.
        let off = b.clamp(-(a * c).sqrt(), (a * c).sqrt());
        let g = GramPair { gram: Matrix2::new(a, off, off, c), means: Vector2::new(g1, g2) };
        let sol = solve_theta(&g, gamma).unwrap();
        prop_assert!((0.0..=1.0).contains(&sol.theta));
        prop_assert!((g.gram + Matrix2::identity() * gamma).cholesky().is_some());
    }

    #[test]
    fn gram_matrices_are_psd(
        samples in prop::collection::vec(-10.0..10.0f64, 1..60),
        a1 in -2.0..2.0f64, a2 in -2.0..2.0f64, alpha in 0.3..5.0f64, omega in 0.3..5.0f64,
    ) {
        let win = ErrorWindow::from_samples(200, &samples).unwrap();
        let cfg = TuningConfig { quad_points: 513, ..TuningConfig::default() };
        let g = build_gram(&win, (a1, a2), (alpha, omega), 3.0, &cfg).unwrap();
        let det = g.gram[(0, 0)] * g.gram[(1, 1)] - g.gram[(0, 1)].powi(2);
        prop_assert!(g.gram[(0, 0)] > 0.0 && g.gram[(1, 1)] > 0.0 && det >= -1e-12);
        prop_assert!(g.means.iter().all(|&m| m > 0.0 && m <= 1.0));
    }
}
