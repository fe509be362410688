//! Scenario configuration files.

use std::path::Path;

use mkmc_core::consensus::Topology;
use mkmc_core::kernel::{BaselineKernel, KernelParams};
use mkmc_core::models::{HoltParams, NoiseModel, PowerGrid, ScenarioEvent};
use mkmc_core::network::FilterSpec;
use mkmc_core::tuning::TuningConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    PowerIeee14 {
        /// Selection names assigned to nodes round-robin (node 1 gets the first).
        #[serde(default = "default_selections")]
        selections: Vec<String>,
        /// Pad every selection to this many entries.
        #[serde(default = "default_measurements")]
        measurements_per_node: Option<usize>,
        #[serde(default)]
        holt: HoltParams,
        /// Filter noise variance, `R = r I`.
        #[serde(default = "default_power_r")]
        r: f64,
        /// Filter process noise, `Q = q I`.
        #[serde(default = "default_power_q")]
        q: f64,
        /// Initial covariance, `P0 = p0 I`.
        #[serde(default = "default_power_r")]
        p0: f64,
        /// Variance of the random-walk increments of the true state.
        #[serde(default = "default_power_q")]
        truth_q: f64,
    },
    Vehicle {
        #[serde(default = "default_dt")]
        dt: f64,
        /// `Q = q I` for both the truth and the filters.
        #[serde(default = "default_vehicle_q")]
        q: f64,
        /// Filter noise variance, `R = r I`.
        #[serde(default = "default_vehicle_r")]
        r: f64,
    },
}

fn default_selections() -> Vec<String> {
    vec!["T1".into(), "T2".into()]
}
fn default_measurements() -> Option<usize> {
    Some(96)
}
fn default_power_r() -> f64 {
    1e-2
}
fn default_power_q() -> f64 {
    1e-5
}
fn default_dt() -> f64 {
    mkmc_core::models::VEHICLE_DT
}
fn default_vehicle_q() -> f64 {
    1e-2
}
fn default_vehicle_r() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Packet loss drops consensus links.
    #[default]
    Link,
    /// Packet loss drops whole measurements at the node.
    Measurement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub nodes: usize,
    /// 1-based undirected edges.
    pub edges: Vec<[usize; 2]>,
    #[serde(default = "default_rounds")]
    pub consensus_rounds: usize,
    #[serde(default)]
    pub loss_mode: LossMode,
}

fn default_rounds() -> usize {
    3
}

impl NetworkSection {
    /// Ring `1-2-...-10-1` plus chords `{1,6}` and `{3,8}`.
    pub fn default_ten_node() -> Self {
        let mut edges: Vec<[usize; 2]> = (1..=10).map(|i| [i, i % 10 + 1]).collect();
        edges.push([1, 6]);
        edges.push([3, 8]);
        Self {
            nodes: 10,
            edges,
            consensus_rounds: 3,
            loss_mode: LossMode::Link,
        }
    }

    pub fn topology(&self) -> Result<Topology, ConfigError> {
        let mut zero_based = Vec::with_capacity(self.edges.len());
        for &[i, j] in &self.edges {
            if i == 0 || j == 0 {
                return invalid("network edges are 1-based");
            }
            zero_based.push((i - 1, j - 1));
        }
        Topology::new(self.nodes, &zero_based).map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiltersSection {
    /// Built-in filters by name.
    #[serde(default = "default_filter_names", rename = "use")]
    pub builtin: Vec<String>,
    /// Mixture coefficient of the fixed MMC baseline.
    #[serde(default = "half")]
    pub mmc_theta: f64,
    /// Mixture coefficient of the fixed MKMMC filter.
    #[serde(default = "half")]
    pub mkmmc_theta: f64,
    /// Fully specified extra filters.
    #[serde(default)]
    pub custom: Vec<FilterSpec>,
    #[serde(default)]
    pub tuning: TuningConfig,
}

fn half() -> f64 {
    0.5
}

fn default_filter_names() -> Vec<String> {
    FilterSpec::benchmark_suite()
        .into_iter()
        .map(|f| f.name)
        .collect()
}

impl Default for FiltersSection {
    fn default() -> Self {
        Self {
            builtin: default_filter_names(),
            mmc_theta: 0.5,
            mkmmc_theta: 0.5,
            custom: Vec::new(),
            tuning: TuningConfig::default(),
        }
    }
}

impl FiltersSection {
    pub fn specs(&self) -> Result<Vec<FilterSpec>, ConfigError> {
        let mut out = Vec::new();
        for name in &self.builtin {
            let spec = match name.as_str() {
                "DEKF" => FilterSpec::dekf(),
                "MCC-DEKF" => FilterSpec::mcc(1.8),
                "MMC-DEKF" => FilterSpec::mmc(self.mmc_theta, 1.6, 1.2),
                "MKMMC-DEKF" => FilterSpec::mkmmc(KernelParams::fixed_benchmark(self.mkmmc_theta)),
                "AMKMMC-RDEKF" => FilterSpec::amkmmc(),
                other => return invalid(format!("unknown filter '{other}'")),
            };
            out.push(spec);
        }
        out.extend(self.custom.iter().cloned());
        for (i, f) in out.iter().enumerate() {
            f.validate()
                .map_err(|e| ConfigError::Invalid(format!("filter '{}': {e}", f.name)))?;
            if out[..i].iter().any(|g| g.name == f.name) {
                return invalid(format!("duplicate filter name '{}'", f.name));
            }
        }
        if out.is_empty() {
            return invalid("no filters configured");
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub horizon: usize,
    #[serde(default = "default_runs")]
    pub mc_runs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Report a single 1-based node instead of pooling all nodes.
    #[serde(default)]
    pub report_node: Option<usize>,
}

fn default_runs() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelConfig,
    pub noise: NoiseModel,
    #[serde(default)]
    pub events: Vec<ScenarioEvent>,
    #[serde(default = "NetworkSection::default_ten_node")]
    pub network: NetworkSection,
    #[serde(default)]
    pub filters: FiltersSection,
    pub run: RunSection,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |e: mkmc_core::Error| ConfigError::Invalid(e.to_string());
        if self.run.horizon == 0 {
            return invalid("run.horizon must be at least 1");
        }
        if self.run.mc_runs == 0 {
            return invalid("run.mc_runs must be at least 1");
        }
        if let Some(k) = self.run.report_node {
            if k == 0 || k > self.network.nodes {
                return invalid(format!(
                    "run.report_node {k} outside 1..={}",
                    self.network.nodes
                ));
            }
        }
        self.noise.validate().map_err(bad)?;
        self.network.topology()?;
        self.filters.specs()?;
        self.filters.tuning.validate().map_err(bad)?;

        let buses = match &self.model {
            ModelConfig::PowerIeee14 {
                selections,
                measurements_per_node,
                holt,
                r,
                q,
                p0,
                truth_q,
            } => {
                holt.validate().map_err(bad)?;
                if !(*r > 0.0 && *p0 > 0.0 && *q >= 0.0 && *truth_q >= 0.0) {
                    return invalid("power model needs r, p0 > 0 and q, truth_q >= 0");
                }
                if selections.is_empty() {
                    return invalid("model.selections is empty");
                }
                if matches!(measurements_per_node, Some(0)) {
                    return invalid("model.measurements_per_node must be positive");
                }
                let grid = PowerGrid::ieee14();
                for s in selections {
                    grid.selection(s, *measurements_per_node).map_err(bad)?;
                }
                Some(grid.n_bus)
            }
            ModelConfig::Vehicle { dt, q, r } => {
                if !(*dt > 0.0 && *q >= 0.0 && *r > 0.0) {
                    return invalid("vehicle model needs dt, r > 0 and q >= 0");
                }
                None
            }
        };
        for e in &self.events {
            e.validate(self.run.horizon, buses).map_err(bad)?;
        }
        if self
            .events
            .iter()
            .filter(|e| e.fault_model().is_some())
            .count()
            > 1
        {
            return invalid("at most one packet-loss event is supported");
        }
        Ok(())
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| match self.model {
            ModelConfig::PowerIeee14 { .. } => "power-ieee14".into(),
            ModelConfig::Vehicle { .. } => "vehicle".into(),
        })
    }

    /// Kernel of the named filter, for reporting.
    pub fn filter_kernel(&self, name: &str) -> Option<BaselineKernel> {
        self.filters
            .specs()
            .ok()?
            .into_iter()
            .find(|f| f.name == name)
            .map(|f| f.kernel)
    }
}
