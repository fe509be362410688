//! Distributed robust filtering over a sensor network.
//!
//! Every time step each node predicts, optionally re-tunes its kernel from
//! its own residual window, solves its local reweighted update, and
//! publishes the resulting information terms. After `L` consensus rounds
//! each node fuses the averaged terms with its own reweighted prior.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::{
    distributed_update_information, mix, round_weights, terms_from_regression, ConsensusTerms,
    LinkFaultModel, Topology,
};
use crate::error::{dim_err, param_err, Error, Result};
use crate::filter::{
    build_regression, fixed_point_update, predict, GateConfig, GaussianBelief, MeasurementModel,
    ProcessModel, UpdateConfig,
};
use crate::kernel::{BaselineKernel, KernelParams, DEFAULT_DOF};
use crate::linalg::spd_inverse;
use crate::models::HoltState;
use crate::tuning::{adapt_detailed, ErrorWindow, TuningConfig};

/// How a node propagates its belief between steps.
#[derive(Clone)]
pub enum NodeProcess {
    Fixed(Arc<dyn ProcessModel>),
    /// Holt smoothing driven by the node's own posterior mean.
    Holt {
        state: HoltState,
        noise: DMatrix<f64>,
    },
}

impl std::fmt::Debug for NodeProcess {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NodeProcess::Fixed(p) => write!(f, "Fixed(dim {})", p.state_dim()),
            NodeProcess::Holt { state, .. } => write!(f, "Holt({:?})", state.params),
        }
    }
}

impl NodeProcess {
    fn predict(&mut self, belief: &GaussianBelief) -> Result<GaussianBelief> {
        match self {
            NodeProcess::Fixed(p) => predict(belief, p.as_ref()),
            NodeProcess::Holt { state, noise } => {
                let step = state.transition(&belief.mean, noise)?;
                predict(belief, &step)
            }
        }
    }
}

/// Which estimator the network runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub name: String,
    /// Kernel used when not adapting (and before the window fills).
    pub kernel: BaselineKernel,
    #[serde(default)]
    pub adaptive: bool,
    #[serde(default)]
    pub gate: Option<GateConfig>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

fn default_epsilon() -> f64 {
    1e-6
}

fn default_max_iters() -> usize {
    50
}

impl FilterSpec {
    pub fn new(name: impl Into<String>, kernel: BaselineKernel) -> Self {
        Self {
            name: name.into(),
            kernel,
            adaptive: false,
            gate: None,
            epsilon: default_epsilon(),
            max_iters: default_max_iters(),
        }
    }

    pub fn dekf() -> Self {
        Self::new("DEKF", BaselineKernel::None)
    }

    pub fn mcc(sigma: f64) -> Self {
        Self::new("MCC-DEKF", BaselineKernel::Gaussian { sigma })
    }

    pub fn mmc(theta: f64, sigma1: f64, sigma2: f64) -> Self {
        Self::new(
            "MMC-DEKF",
            BaselineKernel::GaussianMixture {
                theta,
                sigma1,
                sigma2,
            },
        )
    }

    pub fn mkmmc(params: KernelParams) -> Self {
        Self::new("MKMMC-DEKF", BaselineKernel::Mkmc(params))
    }

    /// Adaptive kernel with the fixed benchmark coefficients as fallback,
    /// plus the default innovation gate.
    pub fn amkmmc() -> Self {
        Self {
            adaptive: true,
            gate: Some(GateConfig::default()),
            ..Self::new(
                "AMKMMC-RDEKF",
                BaselineKernel::Mkmc(KernelParams::default()),
            )
        }
    }

    /// The five filters compared in the benchmarks.
    pub fn benchmark_suite() -> Vec<Self> {
        vec![
            Self::dekf(),
            Self::mcc(1.8),
            Self::mmc(0.5, 1.6, 1.2),
            Self::mkmmc(KernelParams::default()),
            Self::amkmmc(),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.adaptive && !matches!(self.kernel, BaselineKernel::Mkmc(_)) {
            return param_err(format!(
                "adaptive filter '{}' needs an mkmc base kernel",
                self.name
            ));
        }
        self.update_config(self.kernel).validate()
    }

    fn update_config(&self, kernel: BaselineKernel) -> UpdateConfig {
        UpdateConfig {
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            kernel,
            gate: self.gate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Consensus rounds per step. Zero turns every node into a local filter.
    pub consensus_rounds: usize,
    pub faults: LinkFaultModel,
    pub tuning: TuningConfig,
    pub window_capacity: usize,
    /// Samples needed before the kernel is re-tuned.
    pub min_adapt_samples: usize,
    /// Student's t degrees of freedom used by adaptation.
    pub lambda: f64,
    /// Seed of the link-fault generator.
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            consensus_rounds: 3,
            faults: LinkFaultModel::none(),
            tuning: TuningConfig::default(),
            window_capacity: 200,
            min_adapt_samples: 20,
            lambda: DEFAULT_DOF,
            seed: 0,
        }
    }
}

/// One sensor with its models and local filter state.
#[derive(Debug, Clone)]
pub struct SensorNode {
    pub belief: GaussianBelief,
    pub process: NodeProcess,
    pub measurement: Arc<dyn MeasurementModel>,
    pub window: ErrorWindow,
    /// Most recent adapted kernel coefficients.
    pub kernel: KernelParams,
}

impl std::fmt::Debug for dyn MeasurementModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MeasurementModel(dim {})", self.measurement_dim())
    }
}

impl SensorNode {
    pub fn new(
        belief: GaussianBelief,
        process: NodeProcess,
        measurement: Arc<dyn MeasurementModel>,
        window_capacity: usize,
    ) -> Result<Self> {
        Ok(Self {
            belief,
            process,
            measurement,
            window: ErrorWindow::new(window_capacity)?,
            kernel: KernelParams::default(),
        })
    }
}

/// What happened at one node during a step.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeReport {
    pub iterations: usize,
    pub gated: bool,
    /// Prediction or update failed; the node kept its prior.
    pub failed: bool,
    /// No measurement arrived.
    pub missing: bool,
    pub gate_statistic: Option<f64>,
    /// Kernel coefficients chosen by adaptation this step.
    pub adapted: Option<KernelParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub nodes: Vec<NodeReport>,
    /// Links dropped, summed over all rounds.
    pub dropped_links: usize,
}

struct LocalResult {
    prior: GaussianBelief,
    prior_information: Option<DMatrix<f64>>,
    terms: ConsensusTerms,
    residuals: Vec<f64>,
    report: NodeReport,
}

/// A network of [`SensorNode`]s running one [`FilterSpec`].
#[derive(Debug, Clone)]
pub struct Network {
    pub topology: Topology,
    pub nodes: Vec<SensorNode>,
    pub filter: FilterSpec,
    pub config: NetworkConfig,
    rng: ChaCha8Rng,
}

impl Network {
    pub fn new(
        topology: Topology,
        nodes: Vec<SensorNode>,
        filter: FilterSpec,
        config: NetworkConfig,
    ) -> Result<Self> {
        if nodes.len() != topology.node_count() {
            return dim_err(format!(
                "{} nodes for a {}-node topology",
                nodes.len(),
                topology.node_count()
            ));
        }
        let n = nodes.first().map(|s| s.belief.dim()).unwrap_or(0);
        if nodes.iter().any(|s| s.belief.dim() != n) {
            return dim_err("nodes disagree on state dimension");
        }
        filter.validate()?;
        config.tuning.validate()?;
        config.faults.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            topology,
            nodes,
            filter,
            config,
            rng,
        })
    }

    pub fn beliefs(&self) -> Vec<&GaussianBelief> {
        self.nodes.iter().map(|n| &n.belief).collect()
    }

    /// Advances every node by one step. `measurements[i] = None` means
    /// node `i` received nothing; it still takes part in consensus.
    pub fn step(
        &mut self,
        step: usize,
        measurements: &[Option<DVector<f64>>],
    ) -> Result<StepReport> {
        let b = self.nodes.len();
        if measurements.len() != b {
            return dim_err(format!(
                "{} measurement slots for {b} nodes",
                measurements.len()
            ));
        }
        let locals: Vec<LocalResult> = (0..b)
            .map(|i| self.local_step(i, measurements[i].as_ref()))
            .collect::<Result<_>>()?;

        let mut terms: Vec<ConsensusTerms> = locals.iter().map(|l| l.terms.clone()).collect();
        let mut dropped = 0;
        for _ in 0..self.config.consensus_rounds {
            let (w, d) = round_weights(&self.topology, &self.config.faults, step, &mut self.rng);
            dropped += d;
            terms = mix(&terms, &w)?;
        }

        // Without any exchange a node only holds its own information.
        let scale = if self.config.consensus_rounds == 0 {
            1
        } else {
            b
        };
        let mut reports = Vec::with_capacity(b);
        for (i, (local, fused)) in locals.into_iter().zip(terms).enumerate() {
            let mut report = local.report;
            let node = &mut self.nodes[i];
            let update = local
                .prior_information
                .as_ref()
                .map(|info| distributed_update_information(&local.prior.mean, info, &fused, scale));
            node.belief = match update {
                Some(Ok(post)) => post,
                Some(Err(e)) => {
                    log::warn!("node {i}: fusion failed at step {step}: {e}");
                    report.failed = true;
                    local.prior
                }
                None => local.prior,
            };
            node.window.extend(local.residuals)?;
            reports.push(report);
        }
        Ok(StepReport {
            nodes: reports,
            dropped_links: dropped,
        })
    }

    fn local_step(&mut self, i: usize, v: Option<&DVector<f64>>) -> Result<LocalResult> {
        let filter = &self.filter;
        let cfg = &self.config;
        let node = &mut self.nodes[i];
        let n = node.belief.dim();
        let mut report = NodeReport {
            iterations: 0,
            gated: false,
            failed: false,
            missing: v.is_none(),
            gate_statistic: None,
            adapted: None,
        };
        let hold = |prior: GaussianBelief, report: NodeReport| LocalResult {
            prior,
            prior_information: None,
            terms: ConsensusTerms::zeros(n),
            residuals: Vec::new(),
            report,
        };

        let prior = match node.process.predict(&node.belief) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("node {i}: prediction failed: {e}");
                report.failed = true;
                return Ok(hold(node.belief.clone(), report));
            }
        };

        let Some(v) = v else {
            // Still fuses the neighbours' information with the plain prior.
            return Ok(match spd_inverse(&prior.cov) {
                Ok(info) => LocalResult {
                    prior,
                    prior_information: Some(info),
                    terms: ConsensusTerms::zeros(n),
                    residuals: Vec::new(),
                    report,
                },
                Err(_) => {
                    report.failed = true;
                    hold(prior, report)
                }
            });
        };
        if v.len() != node.measurement.measurement_dim() {
            return dim_err(format!("node {i}: measurement length {}", v.len()));
        }

        let kernel = if filter.adaptive && node.window.len() >= cfg.min_adapt_samples {
            let a = adapt_detailed(&node.window, cfg.lambda, &cfg.tuning, &node.kernel);
            node.kernel = a.params;
            report.adapted = Some(a.params);
            BaselineKernel::Mkmc(a.params)
        } else {
            filter.kernel
        };

        let prob = match build_regression(&prior, v, node.measurement.as_ref()) {
            Ok(p) => p,
            Err(Error::Numerical(msg)) => {
                log::warn!("node {i}: regression failed: {msg}");
                report.failed = true;
                return Ok(hold(prior, report));
            }
            Err(e) => return Err(e),
        };
        let outcome = fixed_point_update(&prob, &filter.update_config(kernel))?;
        report.iterations = outcome.iterations;
        report.gated = outcome.gated;
        report.gate_statistic = outcome.gate_statistic;

        let ones = DVector::from_element(n, 1.0);
        let (prior_information, terms, residuals) = if outcome.gated {
            // The held estimate is the prior, so its post-fit residual is the whitened innovation.
            let residuals = prob.whitened_innovation.iter().copied().collect();
            (
                prob.weighted_prior_information(&ones),
                ConsensusTerms::zeros(n),
                residuals,
            )
        } else {
            let w = &outcome.final_weights;
            let post_fit = prob.residual(&outcome.belief.mean);
            (
                prob.weighted_prior_information(&w.state),
                terms_from_regression(&prob, w),
                post_fit
                    .rows(n, post_fit.len() - n)
                    .iter()
                    .copied()
                    .collect(),
            )
        };
        Ok(LocalResult {
            prior,
            prior_information: Some(prior_information),
            terms,
            residuals,
            report,
        })
    }
}
