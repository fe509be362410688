//! Monte Carlo scenario execution.

use std::sync::Arc;

use mkmc_core::consensus::{LinkFaultModel, Topology};
use mkmc_core::filter::{GaussianBelief, MeasurementModel};
use mkmc_core::kernel::KernelParams;
use mkmc_core::models::{sample_noise, HoltState, PowerGrid, PowerMeasurement, VehicleModel};
use mkmc_core::network::{FilterSpec, Network, NetworkConfig, NodeProcess, SensorNode};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigError, LossMode, ModelConfig, ScenarioConfig};
use crate::metrics::{armse, ErrorAccumulator};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "MKMC_WORKERS";

const TRUTH_STREAM: u64 = 0;
const LOSS_STREAM: u64 = 1;

/// Worker count from [`WORKERS_ENV`], if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV)
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("filter '{filter}' failed in run {run}: {source}")]
    Filter {
        filter: String,
        run: usize,
        #[source]
        source: mkmc_core::Error,
    },
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

/// Named set of state indices that a metric is computed over.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateGroup {
    pub name: String,
    pub indices: Vec<usize>,
}

enum Plant {
    Power {
        grid: Arc<PowerGrid>,
        sensors: Vec<Arc<PowerMeasurement>>,
        holt: mkmc_core::models::HoltParams,
        q: DMatrix<f64>,
        p0: f64,
        truth_sd: f64,
    },
    Vehicle {
        model: VehicleModel,
    },
}

/// A validated configuration with its models built.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub topology: Topology,
    pub filters: Vec<FilterSpec>,
    pub groups: Vec<StateGroup>,
    plant: Plant,
    packet_loss: Option<LinkFaultModel>,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let topology = config.network.topology()?;
        let filters = config.filters.specs()?;
        let bad = |e: mkmc_core::Error| ConfigError::Invalid(e.to_string());
        let b = config.network.nodes;
        let (plant, groups) = match &config.model {
            ModelConfig::PowerIeee14 {
                selections,
                measurements_per_node,
                holt,
                r,
                q,
                p0,
                truth_q,
            } => {
                let grid = Arc::new(PowerGrid::ieee14());
                let mut sensors = Vec::with_capacity(b);
                for i in 0..b {
                    let sel = grid
                        .selection(&selections[i % selections.len()], *measurements_per_node)
                        .map_err(bad)?;
                    let m = sel.len();
                    let meas =
                        PowerMeasurement::new(grid.clone(), sel, DMatrix::identity(m, m) * *r)
                            .map_err(bad)?;
                    sensors.push(Arc::new(meas));
                }
                let n = grid.state_dim();
                let groups = vec![
                    StateGroup {
                        name: "V-M".into(),
                        indices: grid.magnitude_indices(),
                    },
                    StateGroup {
                        name: "V-A".into(),
                        indices: grid.angle_indices(),
                    },
                ];
                (
                    Plant::Power {
                        grid,
                        sensors,
                        holt: *holt,
                        q: DMatrix::identity(n, n) * *q,
                        p0: *p0,
                        truth_sd: truth_q.sqrt(),
                    },
                    groups,
                )
            }
            ModelConfig::Vehicle { dt, q, r } => {
                let model = VehicleModel::new(
                    *dt,
                    DMatrix::identity(4, 4) * *q,
                    DMatrix::identity(2, 2) * *r,
                )
                .map_err(bad)?;
                let groups = vec![
                    StateGroup {
                        name: "position".into(),
                        indices: vec![0, 1],
                    },
                    StateGroup {
                        name: "velocity".into(),
                        indices: vec![2, 3],
                    },
                ];
                (Plant::Vehicle { model }, groups)
            }
        };
        let packet_loss = config.events.iter().find_map(|e| e.fault_model());
        Ok(Self {
            config,
            topology,
            filters,
            groups,
            plant,
            packet_loss,
        })
    }

    fn run_seed(&self, run: usize) -> u64 {
        self.config.run.seed.wrapping_add(run as u64)
    }

    fn node_count(&self) -> usize {
        self.topology.node_count()
    }

    /// Truth trajectory and per-node measurements for one run. Every filter
    /// consumes exactly this data.
    pub fn simulate(&self, run: usize) -> RunData {
        let seed = self.run_seed(run);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(TRUTH_STREAM);
        let mut loss_rng = ChaCha8Rng::seed_from_u64(seed);
        loss_rng.set_stream(LOSS_STREAM);
        let horizon = self.config.run.horizon;
        let noise = &self.config.noise;
        let b = self.node_count();

        let mut state = match &self.plant {
            Plant::Power { grid, .. } => grid.initial_state.clone(),
            Plant::Vehicle { .. } => VehicleModel::initial_truth(),
        };
        let mut truth = Vec::with_capacity(horizon);
        let mut measurements = Vec::with_capacity(horizon);
        for step in 0..horizon {
            state = match &self.plant {
                Plant::Power { truth_sd, .. } => {
                    let sd = *truth_sd;
                    state.map(|x| x + sd * rng.sample::<f64, _>(StandardNormal))
                }
                Plant::Vehicle { model } => model.step(&state, &mut rng),
            };
            for e in &self.config.events {
                e.apply_to_truth(&mut state, step);
            }
            let mut row = Vec::with_capacity(b);
            for i in 0..b {
                let v = match &self.plant {
                    Plant::Power { sensors, .. } => {
                        let clean = sensors[i].measure(&state);
                        clean.map(|x| x + sample_noise(noise, &mut rng))
                    }
                    Plant::Vehicle { model } => model.measure(&state, noise, &mut rng),
                };
                row.push(Some(v));
            }
            if self.config.network.loss_mode == LossMode::Measurement {
                if let Some(f) = self.packet_loss.filter(|f| f.is_active(step)) {
                    for slot in row.iter_mut() {
                        if loss_rng.gen_bool(f.drop_probability) {
                            *slot = None;
                        }
                    }
                }
            }
            truth.push(state.clone());
            measurements.push(row);
        }
        RunData {
            truth,
            measurements,
        }
    }

    fn build_network(
        &self,
        spec: &FilterSpec,
        run: usize,
        consensus_rounds: usize,
    ) -> Result<Network, mkmc_core::Error> {
        let b = self.node_count();
        let mut nodes = Vec::with_capacity(b);
        let window = 200;
        for i in 0..b {
            let node = match &self.plant {
                Plant::Power {
                    grid,
                    sensors,
                    holt,
                    q,
                    p0,
                    ..
                } => {
                    let n = grid.state_dim();
                    let belief = GaussianBelief::new(
                        grid.initial_state.clone(),
                        DMatrix::identity(n, n) * *p0,
                    )?;
                    let process = NodeProcess::Holt {
                        state: HoltState::new(*holt, grid.initial_state.clone())?,
                        noise: q.clone(),
                    };
                    SensorNode::new(
                        belief,
                        process,
                        sensors[i].clone() as Arc<dyn MeasurementModel>,
                        window,
                    )?
                }
                Plant::Vehicle { model } => SensorNode::new(
                    VehicleModel::initial_belief(),
                    NodeProcess::Fixed(Arc::new(model.process())),
                    Arc::new(model.measurement()),
                    window,
                )?,
            };
            nodes.push(node);
        }
        let faults = match self.config.network.loss_mode {
            LossMode::Link => self.packet_loss.unwrap_or_else(LinkFaultModel::none),
            LossMode::Measurement => LinkFaultModel::none(),
        };
        let config = NetworkConfig {
            consensus_rounds,
            faults,
            tuning: self.config.filters.tuning.clone(),
            window_capacity: window,
            // One stream per run shared by all filters, so they see the same link drops.
            seed: self.run_seed(run) ^ 0x6c69_6e6b_6472_6f70,
            ..NetworkConfig::default()
        };
        Network::new(self.topology.clone(), nodes, spec.clone(), config)
    }

    /// Runs one filter over one run's data.
    pub fn run_filter(
        &self,
        spec: &FilterSpec,
        run: usize,
        data: &RunData,
        consensus_rounds: usize,
    ) -> Result<FilterRun, mkmc_core::Error> {
        let horizon = data.truth.len();
        let mut net = self.build_network(spec, run, consensus_rounds)?;
        let report_node = self.config.run.report_node.map(|k| k - 1);
        let mut acc: Vec<ErrorAccumulator> = self
            .groups
            .iter()
            .map(|g| ErrorAccumulator::new(horizon, g.indices.len()))
            .collect();
        let mut out = FilterRun {
            errors: Vec::new(),
            iterations: vec![0; horizon],
            updates: vec![0; horizon],
            gated: 0,
            failed: 0,
            non_finite: 0,
            psd_violations: 0,
            step_errors: 0,
            adaptation: Vec::new(),
        };
        for step in 0..horizon {
            let report = match net.step(step, &data.measurements[step]) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!(
                        "filter '{}' failed at step {step} of run {run}: {e}",
                        spec.name
                    );
                    out.step_errors += 1;
                    break;
                }
            };
            for (i, node) in report.nodes.iter().enumerate() {
                out.iterations[step] += node.iterations;
                out.updates[step] += usize::from(!node.missing && !node.failed);
                out.gated += usize::from(node.gated);
                out.failed += usize::from(node.failed);
                if run == 0 && i == report_node.unwrap_or(0) {
                    if let Some(p) = node.adapted {
                        out.adaptation.push((step, p));
                    }
                }
            }
            for (i, node) in net.nodes.iter().enumerate() {
                if report_node.is_some_and(|k| k != i) {
                    continue;
                }
                let belief = &node.belief;
                if !belief.is_finite() {
                    out.non_finite += 1;
                    continue;
                }
                if !is_psd(&belief.cov) {
                    out.psd_violations += 1;
                }
                for (g, a) in self.groups.iter().zip(acc.iter_mut()) {
                    a.add(step, &data.truth[step], &belief.mean, &g.indices);
                }
            }
        }
        out.errors = acc;
        Ok(out)
    }

    /// All filters over all runs; runs fan out over `workers` threads.
    pub fn run(&self, workers: Option<usize>) -> Result<MetricsReport, RunError> {
        self.run_with_rounds(self.config.network.consensus_rounds, workers)
    }

    pub fn run_with_rounds(
        &self,
        consensus_rounds: usize,
        workers: Option<usize>,
    ) -> Result<MetricsReport, RunError> {
        let runs = self.config.run.mc_runs;
        let one_run = |run: usize| -> Result<Vec<FilterRun>, RunError> {
            let data = self.simulate(run);
            self.filters
                .iter()
                .map(|f| {
                    self.run_filter(f, run, &data, consensus_rounds)
                        .map_err(|source| RunError::Filter {
                            filter: f.name.clone(),
                            run,
                            source,
                        })
                })
                .collect()
        };
        let results: Vec<Vec<FilterRun>> = match workers {
            Some(1) => (0..runs).map(one_run).collect::<Result<_, _>>()?,
            _ => {
                let mut builder = rayon::ThreadPoolBuilder::new();
                if let Some(n) = workers {
                    builder = builder.num_threads(n);
                }
                let pool = builder.build().map_err(|e| RunError::Pool(e.to_string()))?;
                pool.install(|| {
                    (0..runs)
                        .into_par_iter()
                        .map(one_run)
                        .collect::<Result<_, _>>()
                })?
            }
        };
        Ok(self.reduce(results, consensus_rounds))
    }

    /// Folds per-run results in run order.
    fn reduce(&self, results: Vec<Vec<FilterRun>>, consensus_rounds: usize) -> MetricsReport {
        let horizon = self.config.run.horizon;
        let mut filters = Vec::with_capacity(self.filters.len());
        for (k, spec) in self.filters.iter().enumerate() {
            let mut acc: Vec<ErrorAccumulator> = self
                .groups
                .iter()
                .map(|g| ErrorAccumulator::new(horizon, g.indices.len()))
                .collect();
            let mut iterations = vec![0usize; horizon];
            let mut updates = vec![0usize; horizon];
            let (mut gated, mut failed, mut non_finite, mut psd, mut errors) = (0, 0, 0, 0, 0);
            let mut adaptation = Vec::new();
            for (run, per_filter) in results.iter().enumerate() {
                let r = &per_filter[k];
                for (a, e) in acc.iter_mut().zip(&r.errors) {
                    a.merge(e);
                }
                for t in 0..horizon {
                    iterations[t] += r.iterations[t];
                    updates[t] += r.updates[t];
                }
                gated += r.gated;
                failed += r.failed;
                non_finite += r.non_finite;
                psd += r.psd_violations;
                errors += r.step_errors;
                if run == 0 {
                    adaptation = r.adaptation.clone();
                }
            }
            let groups = self
                .groups
                .iter()
                .zip(&acc)
                .map(|(g, a)| {
                    let rmse = a.rmse();
                    GroupMetrics {
                        group: g.name.clone(),
                        armse: armse(&rmse),
                        mean_mae: armse(&a.mae()),
                        rmse,
                        mae: a.mae(),
                    }
                })
                .collect::<Vec<_>>();
            let mean_iterations = iterations
                .iter()
                .zip(&updates)
                .map(|(&i, &u)| if u == 0 { 0.0 } else { i as f64 / u as f64 })
                .collect();
            let degraded = errors > 0
                || non_finite > 0
                || psd > 0
                || groups
                    .iter()
                    .any(|g| g.rmse.iter().chain(&g.mae).any(|x| !x.is_finite()));
            filters.push(FilterMetrics {
                filter: spec.name.clone(),
                groups,
                mean_iterations,
                gated_updates: gated,
                failed_updates: failed,
                non_finite_beliefs: non_finite,
                psd_violations: psd,
                step_errors: errors,
                degraded,
                adaptation: adaptation
                    .into_iter()
                    .map(|(step, p)| AdaptationRow {
                        step,
                        theta: p.theta,
                        alpha: p.alpha,
                        omega: p.omega,
                        a1: p.a1,
                        a2: p.a2,
                    })
                    .collect(),
            });
        }
        MetricsReport {
            scenario: self.config.display_name(),
            seed: self.config.run.seed,
            mc_runs: self.config.run.mc_runs,
            horizon,
            consensus_rounds,
            nodes: self.node_count(),
            filters,
        }
    }
}

fn is_psd(cov: &DMatrix<f64>) -> bool {
    if Cholesky::new(cov.clone()).is_some() {
        return true;
    }
    let scale = cov.diagonal().amax().max(f64::MIN_POSITIVE);
    mkmc_core::linalg::min_eigenvalue(cov) >= -1e-10 * scale
}

/// Simulated data of one Monte Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunData {
    pub truth: Vec<DVector<f64>>,
    /// `measurements[step][node]`.
    pub measurements: Vec<Vec<Option<DVector<f64>>>>,
}

/// Raw accumulations of one filter over one run.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    pub errors: Vec<ErrorAccumulator>,
    pub iterations: Vec<usize>,
    pub updates: Vec<usize>,
    pub gated: usize,
    pub failed: usize,
    pub non_finite: usize,
    pub psd_violations: usize,
    /// Runs cut short by a step error.
    pub step_errors: usize,
    pub adaptation: Vec<(usize, KernelParams)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupMetrics {
    pub group: String,
    pub armse: f64,
    /// Mean of the MAE series.
    pub mean_mae: f64,
    #[serde(skip)]
    pub rmse: Vec<f64>,
    #[serde(skip)]
    pub mae: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdaptationRow {
    pub step: usize,
    pub theta: f64,
    pub alpha: f64,
    pub omega: f64,
    pub a1: f64,
    pub a2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterMetrics {
    pub filter: String,
    pub groups: Vec<GroupMetrics>,
    /// Mean fixed-point iterations per updating node, per step.
    #[serde(skip)]
    pub mean_iterations: Vec<f64>,
    pub gated_updates: usize,
    pub failed_updates: usize,
    pub non_finite_beliefs: usize,
    pub psd_violations: usize,
    pub step_errors: usize,
    pub degraded: bool,
    /// Adaptation trace of the reported node in the first run.
    #[serde(skip)]
    pub adaptation: Vec<AdaptationRow>,
}

impl FilterMetrics {
    pub fn group(&self, name: &str) -> Option<&GroupMetrics> {
        self.groups.iter().find(|g| g.group == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub mc_runs: usize,
    pub horizon: usize,
    pub consensus_rounds: usize,
    pub nodes: usize,
    pub filters: Vec<FilterMetrics>,
}

impl MetricsReport {
    pub fn filter(&self, name: &str) -> Option<&FilterMetrics> {
        self.filters.iter().find(|f| f.filter == name)
    }

    pub fn degraded(&self) -> bool {
        self.filters.iter().any(|f| f.degraded)
    }

    pub fn armse(&self, filter: &str, group: &str) -> Option<f64> {
        Some(self.filter(filter)?.group(group)?.armse)
    }
}

/// One row of a consensus-round sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub rounds: usize,
    pub filter: String,
    pub group: String,
    pub armse: f64,
}

/// Reruns the scenario with identical seeds for each round count.
pub fn sweep_consensus(
    scenario: &Scenario,
    rounds: &[usize],
    workers: Option<usize>,
) -> Result<Vec<SweepRow>, RunError> {
    let mut rows = Vec::new();
    for &l in rounds {
        let report = scenario.run_with_rounds(l, workers)?;
        for f in &report.filters {
            for g in &f.groups {
                rows.push(SweepRow {
                    rounds: l,
                    filter: f.filter.clone(),
                    group: g.group.clone(),
                    armse: g.armse,
                });
            }
        }
    }
    Ok(rows)
}
