//! Sensor-network topology, Metropolis averaging and information-form fusion.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Error, Result};
use crate::filter::{GaussianBelief, RegressionProblem};
use crate::kernel::DiagonalWeights;
use crate::linalg::{cholesky_factor, solve_lower, solve_lower_vec, spd_inverse, symmetrize};

/// Connected undirected graph with its Metropolis weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    weights: DMatrix<f64>,
}

impl Topology {
    /// Builds the graph from 0-based edges. Duplicate and reversed edges are
    /// merged; self-loops, out-of-range endpoints and disconnected graphs
    /// are rejected.
    pub fn new(nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::Topology("network needs at least one node".into()));
        }
        let mut canonical = Vec::with_capacity(edges.len());
        for &(i, j) in edges {
            if i >= nodes || j >= nodes {
                return Err(Error::Topology(format!(
                    "edge ({i}, {j}) outside 0..{nodes}"
                )));
            }
            if i == j {
                return Err(Error::Topology(format!("self-loop at node {i}")));
            }
            canonical.push((i.min(j), i.max(j)));
        }
        canonical.sort_unstable();
        canonical.dedup();

        let mut neighbors = vec![Vec::new(); nodes];
        for &(i, j) in &canonical {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        if !is_connected(&neighbors) {
            return Err(Error::Topology("graph is not connected".into()));
        }
        let weights = metropolis_from_neighbors(&neighbors);
        Ok(Self {
            nodes,
            edges: canonical,
            neighbors,
            weights,
        })
    }

    pub fn complete(nodes: usize) -> Result<Self> {
        let edges: Vec<_> = (0..nodes)
            .flat_map(|i| ((i + 1)..nodes).map(move |j| (i, j)))
            .collect();
        Self::new(nodes, &edges)
    }

    pub fn ring(nodes: usize) -> Result<Self> {
        let edges: Vec<_> = match nodes {
            0 | 1 => Vec::new(),
            2 => vec![(0, 1)],
            _ => (0..nodes).map(|i| (i, (i + 1) % nodes)).collect(),
        };
        Self::new(nodes, &edges)
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    /// Canonical `(min, max)` edges in sorted order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }
}

fn is_connected(neighbors: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; neighbors.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &j in &neighbors[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn metropolis_from_neighbors(neighbors: &[Vec<usize>]) -> DMatrix<f64> {
    let b = neighbors.len();
    let mut w = DMatrix::zeros(b, b);
    for i in 0..b {
        for &j in &neighbors[i] {
            w[(i, j)] = 1.0 / (1.0 + neighbors[i].len().max(neighbors[j].len()) as f64);
        }
    }
    for i in 0..b {
        let off: f64 = neighbors[i].iter().map(|&j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    w
}

/// `pi_ij = 1 / (1 + max(d_i, d_j))` on edges, the remaining mass on the diagonal.
pub fn metropolis_weights(edges: &[(usize, usize)], nodes: usize) -> Result<DMatrix<f64>> {
    Ok(Topology::new(nodes, edges)?.weights)
}

/// I.i.d. symmetric link drops during a window of time steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkFaultModel {
    pub drop_probability: f64,
    /// First step at which drops apply.
    pub start: usize,
    /// First step at which drops stop; `None` keeps them to the end.
    #[serde(default)]
    pub end: Option<usize>,
}

impl LinkFaultModel {
    pub fn none() -> Self {
        Self {
            drop_probability: 0.0,
            start: 0,
            end: None,
        }
    }

    pub fn new(drop_probability: f64, start: usize, end: Option<usize>) -> Result<Self> {
        let f = Self {
            drop_probability,
            start,
            end,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return param_err("drop probability must lie in [0, 1]");
        }
        if matches!(self.end, Some(e) if e < self.start) {
            return param_err("fault window ends before it starts");
        }
        Ok(())
    }

    pub fn is_active(&self, step: usize) -> bool {
        self.drop_probability > 0.0 && step >= self.start && self.end.is_none_or(|e| step < e)
    }
}

impl Default for LinkFaultModel {
    fn default() -> Self {
        Self::none()
    }
}

/// Mixing matrix of one round: links that drop are removed in both
/// directions and their weight is returned to each endpoint's self-weight.
/// One Bernoulli draw per edge, in canonical edge order, only while the
/// fault window is active.
pub fn round_weights<R: Rng + ?Sized>(
    topo: &Topology,
    faults: &LinkFaultModel,
    step: usize,
    rng: &mut R,
) -> (DMatrix<f64>, usize) {
    let mut w = topo.weights.clone();
    if !faults.is_active(step) {
        return (w, 0);
    }
    let mut dropped = 0;
    for &(i, j) in &topo.edges {
        if rng.gen_bool(faults.drop_probability) {
            let p = w[(i, j)];
            w[(i, j)] = 0.0;
            w[(j, i)] = 0.0;
            w[(i, i)] += p;
            w[(j, j)] += p;
            dropped += 1;
        }
    }
    (w, dropped)
}

/// Values that can be linearly mixed across nodes.
pub trait Mixable: Clone {
    fn same_shape(&self, other: &Self) -> bool;
    fn zeroed(&self) -> Self;
    /// `self += w * other`.
    fn add_scaled(&mut self, w: f64, other: &Self);
}

impl Mixable for f64 {
    fn same_shape(&self, _: &Self) -> bool {
        true
    }
    fn zeroed(&self) -> Self {
        0.0
    }
    fn add_scaled(&mut self, w: f64, other: &Self) {
        *self += w * other;
    }
}

impl Mixable for DVector<f64> {
    fn same_shape(&self, other: &Self) -> bool {
        self.len() == other.len()
    }
    fn zeroed(&self) -> Self {
        DVector::zeros(self.len())
    }
    fn add_scaled(&mut self, w: f64, other: &Self) {
        self.axpy(w, other, 1.0);
    }
}

impl Mixable for DMatrix<f64> {
    fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }
    fn zeroed(&self) -> Self {
        DMatrix::zeros(self.nrows(), self.ncols())
    }
    fn add_scaled(&mut self, w: f64, other: &Self) {
        self.zip_apply(other, |a, b| *a += w * b);
    }
}

/// Replaces every node's value by the `w`-weighted sum over its row.
pub fn mix<T: Mixable>(values: &[T], w: &DMatrix<f64>) -> Result<Vec<T>> {
    let b = values.len();
    if w.shape() != (b, b) {
        return dim_err(format!("{b} values for a {:?} mixing matrix", w.shape()));
    }
    if let Some(first) = values.first() {
        if values.iter().any(|v| !v.same_shape(first)) {
            return dim_err("consensus values differ in shape");
        }
    }
    Ok((0..b)
        .map(|i| {
            let mut acc = values[i].zeroed();
            for j in 0..b {
                let wij = w[(i, j)];
                if wij != 0.0 {
                    acc.add_scaled(wij, &values[j]);
                }
            }
            acc
        })
        .collect())
}

/// One synchronous consensus round under the fault model.
pub fn consensus_round<T: Mixable, R: Rng + ?Sized>(
    values: &[T],
    topo: &Topology,
    faults: &LinkFaultModel,
    step: usize,
    rng: &mut R,
) -> Result<Vec<T>> {
    if values.len() != topo.node_count() {
        return dim_err(format!(
            "{} values for {} nodes",
            values.len(),
            topo.node_count()
        ));
    }
    let (w, _) = round_weights(topo, faults, step, rng);
    mix(values, &w)
}

/// Information matrix `Omega = H^T R~^-1 H` and vector
/// `Xi = H^T R~^-1 (v - h(u) + H u)` exchanged between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusTerms {
    pub omega: DMatrix<f64>,
    pub xi: DVector<f64>,
}

impl ConsensusTerms {
    pub fn zeros(n: usize) -> Self {
        Self {
            omega: DMatrix::zeros(n, n),
            xi: DVector::zeros(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }
}

impl Mixable for ConsensusTerms {
    fn same_shape(&self, other: &Self) -> bool {
        self.omega.same_shape(&other.omega) && self.xi.same_shape(&other.xi)
    }
    fn zeroed(&self) -> Self {
        Self {
            omega: self.omega.zeroed(),
            xi: self.xi.zeroed(),
        }
    }
    fn add_scaled(&mut self, w: f64, other: &Self) {
        self.omega.add_scaled(w, &other.omega);
        self.xi.add_scaled(w, &other.xi);
    }
}

/// Dense construction from `H`, the (reweighted) noise covariance `R~`, the
/// innovation `v - h(u)` and the linearisation point `u`.
pub fn init_consensus_terms(
    h: &DMatrix<f64>,
    r_tilde: &DMatrix<f64>,
    innovation: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<ConsensusTerms> {
    let (m, n) = h.shape();
    if r_tilde.shape() != (m, m) || innovation.len() != m || u.len() != n {
        return dim_err("consensus term inputs disagree in shape");
    }
    let l = cholesky_factor(r_tilde)?.l();
    let wh = solve_lower(&l, h)?;
    let wz = solve_lower_vec(&l, &(innovation + h * u))?;
    let mut omega = wh.transpose() * &wh;
    symmetrize(&mut omega);
    Ok(ConsensusTerms {
        xi: wh.transpose() * wz,
        omega,
    })
}

/// Same terms read off a whitened regression problem and its final kernel
/// weights, for which `R~^-1 = C_R^-T D_v C_R^-1`.
pub fn terms_from_regression(
    prob: &RegressionProblem,
    weights: &DiagonalWeights,
) -> ConsensusTerms {
    ConsensusTerms {
        omega: prob.weighted_measurement_information(&weights.measurement),
        xi: prob.weighted_measurement_vector(&weights.measurement),
    }
}

/// `P = (P_prior^-1 + b Omega)^-1`, `u = P (P_prior^-1 u_prior + b Xi)`.
pub fn distributed_update(
    prior: &GaussianBelief,
    terms: &ConsensusTerms,
    nodes: usize,
) -> Result<GaussianBelief> {
    let info = spd_inverse(&prior.cov)?;
    distributed_update_information(&prior.mean, &info, terms, nodes)
}

/// [`distributed_update`] with the prior already in information form.
pub fn distributed_update_information(
    prior_mean: &DVector<f64>,
    prior_information: &DMatrix<f64>,
    terms: &ConsensusTerms,
    nodes: usize,
) -> Result<GaussianBelief> {
    let n = prior_mean.len();
    if prior_information.shape() != (n, n) || terms.dim() != n || terms.omega.shape() != (n, n) {
        return dim_err("distributed update inputs disagree in shape");
    }
    if nodes == 0 {
        return param_err("node count must be positive");
    }
    let b = nodes as f64;
    let mut post_info = prior_information + &terms.omega * b;
    symmetrize(&mut post_info);
    let chol = cholesky_factor(&post_info)?;
    let rhs = prior_information * prior_mean + &terms.xi * b;
    let mean = chol.solve(&rhs);
    let mut cov = chol.inverse();
    symmetrize(&mut cov);
    if mean.iter().chain(cov.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite fused belief".into()));
    }
    Ok(GaussianBelief { mean, cov })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn path_and_star_weights() {
        let w = metropolis_weights(&[(0, 1)], 2).unwrap();
        assert_eq!(w, DMatrix::from_element(2, 2, 0.5));
        let w = metropolis_weights(&[(0, 1), (0, 2)], 3).unwrap();
        let third = 1.0 / 3.0;
        assert_relative_eq!(w[(0, 0)], third, epsilon = 1e-15);
        assert_relative_eq!(w[(0, 1)], third, epsilon = 1e-15);
        assert_relative_eq!(w[(1, 0)], third, epsilon = 1e-15);
        assert_relative_eq!(w[(1, 1)], 2.0 * third, epsilon = 1e-15);
        assert_eq!(w[(1, 2)], 0.0);
    }

    #[test]
    fn rejects_bad_graphs() {
        assert!(Topology::new(3, &[(0, 1)]).is_err());
        assert!(Topology::new(2, &[(0, 0), (0, 1)]).is_err());
        assert!(Topology::new(2, &[(0, 2)]).is_err());
        assert!(Topology::new(0, &[]).is_err());
        assert!(Topology::new(1, &[]).is_ok());
    }

    #[test]
    fn duplicate_edges_merge() {
        let t = Topology::new(3, &[(0, 1), (1, 0), (1, 2)]).unwrap();
        assert_eq!(t.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(t.degree(1), 2);
    }

    #[test]
    fn complete_graph_averages_in_one_round() {
        let t = Topology::complete(5).unwrap();
        let vals: Vec<f64> = vec![1.0, 2.0, 7.0, -3.0, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = consensus_round(&vals, &t, &LinkFaultModel::none(), 0, &mut rng).unwrap();
        for v in out {
            assert_relative_eq!(v, 7.5 / 5.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn drops_keep_rows_stochastic() {
        let t = Topology::ring(8).unwrap();
        let f = LinkFaultModel::new(0.5, 0, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let (w, _) = round_weights(&t, &f, 0, &mut rng);
            for i in 0..8 {
                assert_relative_eq!(w.row(i).sum(), 1.0, epsilon = 1e-12);
                assert!(w.row(i).iter().all(|&x| x >= 0.0));
            }
            assert_eq!(w, w.transpose());
        }
    }

    #[test]
    fn inactive_window_draws_nothing() {
        let t = Topology::ring(4).unwrap();
        let f = LinkFaultModel::new(1.0, 10, Some(20)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let before = rng.clone();
        let (w, d) = round_weights(&t, &f, 5, &mut rng);
        assert_eq!((w, d), (t.weights().clone(), 0));
        assert_eq!(rng, before);
        let (w, d) = round_weights(&t, &f, 10, &mut rng);
        assert_eq!(d, 4);
        assert_eq!(w, DMatrix::identity(4, 4));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let t = Topology::ring(2).unwrap();
        let vals = vec![DVector::zeros(2), DVector::zeros(3)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(consensus_round(&vals, &t, &LinkFaultModel::none(), 0, &mut rng).is_err());
    }

    #[test]
    fn identity_terms() {
        let u = DVector::from_vec(vec![0.3, -1.2]);
        let terms = init_consensus_terms(
            &DMatrix::identity(2, 2),
            &DMatrix::identity(2, 2),
            &DVector::zeros(2),
            &u,
        )
        .unwrap();
        assert_eq!(terms.omega, DMatrix::identity(2, 2));
        assert_relative_eq!(terms.xi, u, epsilon = 1e-15);
    }

    #[test]
    fn scalar_terms() {
        let (h, r, v_minus_h, u) = (2.0, 0.5, 0.7, 1.5);
        let terms = init_consensus_terms(
            &DMatrix::from_element(1, 1, h),
            &DMatrix::from_element(1, 1, r),
            &DVector::from_element(1, v_minus_h),
            &DVector::from_element(1, u),
        )
        .unwrap();
        assert_relative_eq!(terms.omega[(0, 0)], h * h / r, epsilon = 1e-12);
        assert_relative_eq!(terms.xi[0], h * (v_minus_h + h * u) / r, epsilon = 1e-12);
    }

    #[test]
    fn zero_terms_leave_belief() {
        let prior = GaussianBelief::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        )
        .unwrap();
        let post = distributed_update(&prior, &ConsensusTerms::zeros(2), 4).unwrap();
        assert_relative_eq!(post.mean, prior.mean, epsilon = 1e-12);
        assert_relative_eq!(post.cov, prior.cov, epsilon = 1e-12);
    }
}
