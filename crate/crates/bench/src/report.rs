//! CSV and JSON output.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::runner::{MetricsReport, SweepRow};

/// Header shared by every metric file.
pub const CSV_HEADER: &str = "step,filter,group,value";

fn push_row(out: &mut String, step: usize, filter: &str, group: &str, value: f64) {
    // `{:?}` prints the shortest string that round-trips.
    writeln!(out, "{step},{filter},{group},{value:?}").expect("write to String");
}

pub fn rmse_csv(report: &MetricsReport) -> String {
    series_csv(report, |g| &g.rmse)
}

pub fn mae_csv(report: &MetricsReport) -> String {
    series_csv(report, |g| &g.mae)
}

fn series_csv(
    report: &MetricsReport,
    pick: impl Fn(&crate::runner::GroupMetrics) -> &Vec<f64>,
) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for f in &report.filters {
        for g in &f.groups {
            for (t, &v) in pick(g).iter().enumerate() {
                push_row(&mut out, t, &f.filter, &g.group, v);
            }
        }
    }
    out
}

/// Mean fixed-point iterations; the group column is `all`.
pub fn iterations_csv(report: &MetricsReport) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for f in &report.filters {
        for (t, &v) in f.mean_iterations.iter().enumerate() {
            push_row(&mut out, t, &f.filter, "all", v);
        }
    }
    out
}

/// Adapted kernel parameters; the group column names the parameter.
pub fn adaptation_csv(report: &MetricsReport) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for f in &report.filters {
        for row in &f.adaptation {
            for (name, v) in [
                ("theta", row.theta),
                ("alpha", row.alpha),
                ("omega", row.omega),
                ("a1", row.a1),
                ("a2", row.a2),
            ] {
                push_row(&mut out, row.step, &f.filter, name, v);
            }
        }
    }
    out
}

/// Sweep rows; the step column holds the round count.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        push_row(&mut out, r.rounds, &r.filter, &r.group, r.armse);
    }
    out
}

#[derive(Serialize)]
struct Summary<'a> {
    #[serde(flatten)]
    report: &'a MetricsReport,
    degraded: bool,
    config: &'a ScenarioConfig,
}

pub fn summary_json(report: &MetricsReport, config: &ScenarioConfig) -> String {
    let summary = Summary {
        report,
        degraded: report.degraded(),
        config,
    };
    let mut s = serde_json::to_string_pretty(&summary).expect("summary serialises");
    s.push('\n');
    s
}

/// Writes `rmse.csv`, `mae.csv`, `iterations.csv`, `adaptation.csv` and
/// `summary.json` into `dir`.
pub fn write_report(dir: &Path, report: &MetricsReport, config: &ScenarioConfig) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("rmse.csv"), rmse_csv(report))?;
    fs::write(dir.join("mae.csv"), mae_csv(report))?;
    fs::write(dir.join("iterations.csv"), iterations_csv(report))?;
    fs::write(dir.join("adaptation.csv"), adaptation_csv(report))?;
    fs::write(dir.join("summary.json"), summary_json(report, config))?;
    Ok(())
}

/// Plain-text ARMSE table.
pub fn armse_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    let groups: Vec<&str> = report
        .filters
        .first()
        .map(|f| f.groups.iter().map(|g| g.group.as_str()).collect())
        .unwrap_or_default();
    write!(out, "{:<14}", "filter").unwrap();
    for g in &groups {
        write!(out, " {:>12}", g).unwrap();
    }
    out.push('\n');
    for f in &report.filters {
        write!(out, "{:<14}", f.filter).unwrap();
        for g in &f.groups {
            write!(out, " {:>12.6}", g.armse).unwrap();
        }
        if f.degraded {
            out.push_str("  degraded");
        }
        out.push('\n');
    }
    out
}
