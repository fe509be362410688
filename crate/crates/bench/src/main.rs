use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mkmc_bench::config::ScenarioConfig;
use mkmc_bench::report;
use mkmc_bench::runner::{sweep_consensus, workers_from_env, RunError, Scenario, WORKERS_ENV};

const EXIT_CONFIG: u8 = 1;
const EXIT_DEGRADED: u8 = 2;

#[derive(Parser)]
#[command(name = "mkmc", version, about = "Distributed robust filter benchmarks")]
#[command(after_help = "Set MKMC_WORKERS to fix the number of worker threads.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured filter and write metric CSVs plus summary.json.
    Simulate {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// ARMSE against the number of consensus rounds.
    #[command(name = "sweep-L")]
    SweepL {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// One run of the adaptive filters, dumping the tuned kernel parameters.
    AdaptDemo {
        config: PathBuf,
        /// Write the trace here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a config file and exit.
    Validate { config: PathBuf },
}

enum Failure {
    Config(String),
    Degraded(String),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => Failure::Config(c.to_string()),
            other => Failure::Degraded(other.to_string()),
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario, Failure> {
    let mut cfg = ScenarioConfig::load(path).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    Scenario::new(cfg).map_err(|e| Failure::Config(e.to_string()))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Degraded(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Degraded(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    let workers = workers_from_env();
    log::debug!("{WORKERS_ENV}={workers:?}");
    match cmd {
        Command::Validate { config } => {
            let scenario = load(&config, None)?;
            println!(
                "{}: ok ({} nodes, {} filters, T = {}, {} runs)",
                config.display(),
                scenario.topology.node_count(),
                scenario.filters.len(),
                scenario.config.run.horizon,
                scenario.config.run.mc_runs
            );
            Ok(())
        }
        Command::Simulate { config, out, seed } => {
            let scenario = load(&config, seed)?;
            let report = scenario.run(workers)?;
            report::write_report(&out, &report, &scenario.config)
                .map_err(|e| Failure::Degraded(format!("{}: {e}", out.display())))?;
            print!("{}", report::armse_table(&report));
            if report.degraded() {
                let names: Vec<_> = report
                    .filters
                    .iter()
                    .filter(|f| f.degraded)
                    .map(|f| f.filter.as_str())
                    .collect();
                return Err(Failure::Degraded(format!(
                    "degraded filters: {}",
                    names.join(", ")
                )));
            }
            Ok(())
        }
        Command::SweepL {
            config,
            values,
            out,
            seed,
        } => {
            let scenario = load(&config, seed)?;
            let rows = sweep_consensus(&scenario, &values, workers)?;
            emit(out.as_deref(), &report::sweep_csv(&rows))
        }
        Command::AdaptDemo { config, out, seed } => {
            let mut scenario = load(&config, seed)?;
            scenario.filters.retain(|f| f.adaptive);
            if scenario.filters.is_empty() {
                return Err(Failure::Config("no adaptive filter configured".into()));
            }
            scenario.config.run.mc_runs = 1;
            let report = scenario.run(workers)?;
            emit(out.as_deref(), &report::adaptation_csv(&report))?;
            if report.degraded() {
                return Err(Failure::Degraded("adaptive filter degraded".into()));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return if usage_error {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Degraded(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DEGRADED)
        }
    }
}
