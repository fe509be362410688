//! Error metrics over Monte Carlo runs.

use nalgebra::DVector;

/// `RMSE(t) = sqrt(1/M sum_runs ||u(t) - u_hat(t)||^2)` over the `group` components.
///
/// `truth[run][t]` and `estimate[run][t]` must have matching shapes.
pub fn rmse(
    truth: &[Vec<DVector<f64>>],
    estimate: &[Vec<DVector<f64>>],
    group: &[usize],
) -> Vec<f64> {
    per_step(truth, estimate, |t, e| {
        group.iter().map(|&c| (t[c] - e[c]).powi(2)).sum::<f64>()
    })
    .into_iter()
    .map(f64::sqrt)
    .collect()
}

/// `MAE(t)`: mean absolute error over runs and `group` components.
pub fn mae(
    truth: &[Vec<DVector<f64>>],
    estimate: &[Vec<DVector<f64>>],
    group: &[usize],
) -> Vec<f64> {
    let k = group.len().max(1) as f64;
    per_step(truth, estimate, |t, e| {
        group.iter().map(|&c| (t[c] - e[c]).abs()).sum::<f64>() / k
    })
}

/// Mean of an RMSE series over all steps.
pub fn armse(series: &[f64]) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    series.iter().sum::<f64>() / series.len() as f64
}

fn per_step<F>(truth: &[Vec<DVector<f64>>], estimate: &[Vec<DVector<f64>>], f: F) -> Vec<f64>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> f64,
{
    assert_eq!(truth.len(), estimate.len(), "run counts differ");
    let runs = truth.len();
    if runs == 0 {
        return Vec::new();
    }
    let steps = truth[0].len();
    (0..steps)
        .map(|t| {
            (0..runs)
                .map(|r| f(&truth[r][t], &estimate[r][t]))
                .sum::<f64>()
                / runs as f64
        })
        .collect()
}

/// Streaming accumulator of the per-step sums behind [`rmse`] and [`mae`].
///
/// Samples are added one run at a time and normalised by the sample count
/// at the end, so summing runs in a fixed order gives identical results
/// however the runs were scheduled.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorAccumulator {
    pub squared: Vec<f64>,
    pub absolute: Vec<f64>,
    pub samples: Vec<usize>,
    components: usize,
}

impl ErrorAccumulator {
    pub fn new(steps: usize, components: usize) -> Self {
        Self {
            squared: vec![0.0; steps],
            absolute: vec![0.0; steps],
            samples: vec![0; steps],
            components,
        }
    }

    pub fn add(
        &mut self,
        step: usize,
        truth: &DVector<f64>,
        estimate: &DVector<f64>,
        group: &[usize],
    ) {
        for &c in group {
            let d = truth[c] - estimate[c];
            self.squared[step] += d * d;
            self.absolute[step] += d.abs();
        }
        self.samples[step] += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        for t in 0..self.squared.len() {
            self.squared[t] += other.squared[t];
            self.absolute[t] += other.absolute[t];
            self.samples[t] += other.samples[t];
        }
    }

    pub fn rmse(&self) -> Vec<f64> {
        self.squared
            .iter()
            .zip(&self.samples)
            .map(|(s, &n)| if n == 0 { 0.0 } else { (s / n as f64).sqrt() })
            .collect()
    }

    pub fn mae(&self) -> Vec<f64> {
        let k = self.components.max(1) as f64;
        self.absolute
            .iter()
            .zip(&self.samples)
            .map(|(s, &n)| if n == 0 { 0.0 } else { s / (n as f64 * k) })
            .collect()
    }
}
