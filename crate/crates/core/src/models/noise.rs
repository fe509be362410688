//! Scalar measurement-noise generators.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};

/// One weighted Gaussian component of a custom mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    #[serde(default)]
    pub mean: f64,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Gaussian {
        #[serde(default)]
        mean: f64,
        var: f64,
    },
    /// Two-component Gaussian mixture; both components share `mean`.
    MixedGaussian {
        w1: f64,
        var1: f64,
        w2: f64,
        var2: f64,
        #[serde(default)]
        mean: f64,
    },
    /// Density `(t / sigma^2) exp(-t^2 / (2 sigma^2))` on `t >= 0`.
    Rayleigh {
        sigma: f64,
    },
    Custom {
        components: Vec<GaussianComponent>,
    },
}

impl NoiseModel {
    /// `0.4 N(0, 0.1) + 0.6 N(0, 25)`.
    pub fn mixed_gaussian_default() -> Self {
        NoiseModel::MixedGaussian {
            w1: 0.4,
            var1: 0.1,
            w2: 0.6,
            var2: 25.0,
            mean: 0.0,
        }
    }

    pub fn rayleigh_default() -> Self {
        NoiseModel::Rayleigh { sigma: 3.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        match self {
            NoiseModel::Gaussian { mean, var } => {
                if !mean.is_finite() || !(*var >= 0.0 && var.is_finite()) {
                    return param_err("gaussian noise needs finite mean and non-negative variance");
                }
            }
            NoiseModel::MixedGaussian {
                w1,
                var1,
                w2,
                var2,
                mean,
            } => {
                if !(*w1 >= 0.0 && *w2 >= 0.0) || (w1 + w2 - 1.0).abs() > 1e-9 {
                    return param_err("mixture weights must be non-negative and sum to 1");
                }
                if !positive(*var1) || !positive(*var2) || !mean.is_finite() {
                    return param_err("mixture variances must be positive");
                }
            }
            NoiseModel::Rayleigh { sigma } => {
                if !positive(*sigma) {
                    return param_err("rayleigh scale must be positive");
                }
            }
            NoiseModel::Custom { components } => {
                if components.is_empty() {
                    return param_err("custom mixture has no components");
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if components
                    .iter()
                    .any(|c| !(c.weight >= 0.0) || !positive(c.var) || !c.mean.is_finite())
                    || (total - 1.0).abs() > 1e-9
                {
                    return param_err(
                        "custom mixture weights must sum to 1 with positive variances",
                    );
                }
            }
        }
        Ok(())
    }

    /// Theoretical variance of one draw.
    pub fn variance(&self) -> f64 {
        match self {
            NoiseModel::Gaussian { var, .. } => *var,
            NoiseModel::MixedGaussian {
                w1, var1, w2, var2, ..
            } => w1 * var1 + w2 * var2,
            NoiseModel::Rayleigh { sigma } => (4.0 - std::f64::consts::PI) / 2.0 * sigma * sigma,
            NoiseModel::Custom { components } => {
                let mean: f64 = components.iter().map(|c| c.weight * c.mean).sum();
                components
                    .iter()
                    .map(|c| c.weight * (c.var + c.mean * c.mean))
                    .sum::<f64>()
                    - mean * mean
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            NoiseModel::Gaussian { mean, .. } | NoiseModel::MixedGaussian { mean, .. } => *mean,
            NoiseModel::Rayleigh { sigma } => sigma * (std::f64::consts::FRAC_PI_2).sqrt(),
            NoiseModel::Custom { components } => components.iter().map(|c| c.weight * c.mean).sum(),
        }
    }
}

fn gaussian<R: Rng + ?Sized>(mean: f64, var: f64, rng: &mut R) -> f64 {
    // var >= 0 is validated, so construction cannot fail.
    Normal::new(mean, var.sqrt())
        .expect("validated variance")
        .sample(rng)
}

/// One draw from `model`. Mixtures consume one uniform for the component
/// and one normal for the value.
pub fn sample_noise<R: Rng + ?Sized>(model: &NoiseModel, rng: &mut R) -> f64 {
    match model {
        NoiseModel::Gaussian { mean, var } => gaussian(*mean, *var, rng),
        NoiseModel::MixedGaussian {
            w1,
            var1,
            var2,
            mean,
            ..
        } => {
            let var = if rng.gen::<f64>() < *w1 { *var1 } else { *var2 };
            gaussian(*mean, var, rng)
        }
        NoiseModel::Rayleigh { sigma } => {
            // Inverse CDF; 1 - u lies in (0, 1].
            let u: f64 = rng.gen();
            sigma * (-2.0 * (1.0 - u).ln()).sqrt()
        }
        NoiseModel::Custom { components } => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = components.last().expect("validated non-empty");
            for c in components {
                acc += c.weight;
                if u < acc {
                    pick = c;
                    break;
                }
            }
            gaussian(pick.mean, pick.var, rng)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments(model: &NoiseModel, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| sample_noise(model, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, var)
    }

    #[test]
    fn mixture_variance() {
        let (_, var) = moments(&NoiseModel::mixed_gaussian_default(), 1_000_000, 1);
        assert!((var / 15.04 - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn gaussian_variance() {
        let (_, var) = moments(
            &NoiseModel::Gaussian {
                mean: 0.0,
                var: 2.5,
            },
            1_000_000,
            2,
        );
        assert!((var / 2.5 - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn rayleigh_mean_and_mode() {
        let model = NoiseModel::rayleigh_default();
        let (mean, _) = moments(&model, 100_000, 3);
        assert!((mean / 3.759_942 - 1.0).abs() < 0.02, "{mean}");

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut hist = [0usize; 40];
        for _ in 0..200_000 {
            let x = sample_noise(&model, &mut rng);
            let b = (x / 0.25) as usize;
            if b < hist.len() {
                hist[b] += 1;
            }
        }
        let mode_bin = hist.iter().enumerate().max_by_key(|(_, c)| **c).unwrap().0;
        let mode = (mode_bin as f64 + 0.5) * 0.25;
        assert!((mode - 3.0).abs() <= 0.5, "{mode}");
    }

    #[test]
    fn deterministic_per_seed() {
        let m = NoiseModel::mixed_gaussian_default();
        assert_eq!(moments(&m, 1000, 9), moments(&m, 1000, 9));
    }

    #[test]
    fn validation() {
        assert!(NoiseModel::MixedGaussian {
            w1: 0.5,
            var1: 1.0,
            w2: 0.4,
            var2: 1.0,
            mean: 0.0
        }
        .validate()
        .is_err());
        assert!(NoiseModel::Rayleigh { sigma: 0.0 }.validate().is_err());
        assert!(NoiseModel::Custom { components: vec![] }
            .validate()
            .is_err());
        assert!(NoiseModel::mixed_gaussian_default().validate().is_ok());
    }

    #[test]
    fn custom_matches_formula() {
        let m = NoiseModel::Custom {
            components: vec![
                GaussianComponent {
                    weight: 0.3,
                    mean: -1.0,
                    var: 0.5,
                },
                GaussianComponent {
                    weight: 0.7,
                    mean: 2.0,
                    var: 1.0,
                },
            ],
        };
        let (mean, var) = moments(&m, 400_000, 7);
        assert!((mean - m.mean()).abs() < 0.02);
        assert!((var / m.variance() - 1.0).abs() < 0.02);
    }
}
