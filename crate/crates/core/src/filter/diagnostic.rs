use nalgebra::{Cholesky, DMatrix, DVector};

use super::regression::RegressionProblem;
use super::UpdateConfig;
use crate::kernel::weights_unchecked;

/// One application of the fixed-point map
/// `g(u) = (W^T D(u) W)^-1 W^T D(u) z`, with `D(u)` the weights of `z - W u`.
fn fixed_point_map(
    prob: &RegressionProblem,
    cfg: &UpdateConfig,
    u: &DVector<f64>,
) -> Option<DVector<f64>> {
    let n = prob.state_dim();
    let mut w = weights_unchecked(&prob.residual(u), &cfg.kernel, n);
    for x in w.state.iter_mut().chain(w.measurement.iter_mut()) {
        *x = x.max(super::WEIGHT_FLOOR);
    }
    let d = DVector::from_iterator(
        n + prob.measurement_dim(),
        w.state.iter().chain(w.measurement.iter()).copied(),
    );
    let mut scaled = prob.w.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= d[i];
    }
    let normal = prob.w.tr_mul(&scaled);
    let rhs = scaled.tr_mul(&prob.z);
    Cholesky::new(normal).map(|c| c.solve(&rhs))
}

/// Induced 1-norm of a central finite-difference Jacobian of the fixed-point
/// map at `at`. Values below one mean the map is locally contracting.
pub fn contraction_diagnostic(
    prob: &RegressionProblem,
    cfg: &UpdateConfig,
    at: &DVector<f64>,
    step: f64,
) -> f64 {
    let n = prob.state_dim();
    let mut jac = DMatrix::zeros(n, n);
    let mut probe = at.clone();
    for j in 0..n {
        let orig = probe[j];
        probe[j] = orig + step;
        let plus = fixed_point_map(prob, cfg, &probe);
        probe[j] = orig - step;
        let minus = fixed_point_map(prob, cfg, &probe);
        probe[j] = orig;
        match (plus, minus) {
            (Some(p), Some(m)) => jac.set_column(j, &((p - m) / (2.0 * step))),
            _ => return f64::INFINITY,
        }
    }
    jac.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
