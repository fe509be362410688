use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_mkmc");

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn mkmc(args: &[&str], workers: Option<&str>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env("RUST_LOG", "error");
    match workers {
        Some(w) => cmd.env("MKMC_WORKERS", w),
        None => cmd.env_remove("MKMC_WORKERS"),
    };
    cmd.output().expect("binary runs")
}

const SMALL_VEHICLE: &str = r#"
name = "small"

[model]
kind = "vehicle"
r = 18.0

[noise]
kind = "rayleigh"
sigma = 3.0

[network]
nodes = 4
edges = [[1, 2], [2, 3], [3, 4], [4, 1]]
consensus_rounds = 2

[run]
horizon = 25
mc_runs = 3
seed = 9
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn shipped_configs_validate() {
    let mut seen = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let out = mkmc(&["validate", path.to_str().unwrap()], None);
            assert_eq!(
                out.status.code(),
                Some(0),
                "{}: {}",
                path.display(),
                String::from_utf8_lossy(&out.stderr)
            );
            seen += 1;
        }
    }
    assert!(seen >= 4);
}

#[test]
fn missing_config_is_a_config_error() {
    let out = mkmc(&["simulate", "/nonexistent/scenario.toml"], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read"));
}

#[test]
fn invalid_config_and_bad_usage_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(
        dir.path(),
        "bad.toml",
        &SMALL_VEHICLE.replace("horizon = 25", "horizon = 0"),
    );
    assert_eq!(
        mkmc(&["validate", bad.to_str().unwrap()], None)
            .status
            .code(),
        Some(1)
    );
    let unknown = write_config(
        dir.path(),
        "unknown.toml",
        &format!("{SMALL_VEHICLE}\nextra = 1\n"),
    );
    assert_eq!(
        mkmc(&["simulate", unknown.to_str().unwrap()], None)
            .status
            .code(),
        Some(1)
    );
    assert_eq!(mkmc(&["sweep-L"], None).status.code(), Some(1));
    assert_eq!(mkmc(&["frobnicate"], None).status.code(), Some(1));
    assert_eq!(mkmc(&["--help"], None).status.code(), Some(0));
}

#[test]
fn numerical_breakdown_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let text =
        "[model]\nkind = \"vehicle\"\ndt = 1e200\n\n[noise]\nkind = \"gaussian\"\nvar = 1.0\n\n\
                [filters]\nuse = [\"DEKF\"]\n\n[run]\nhorizon = 3\nmc_runs = 1\n";
    let cfg = write_config(dir.path(), "blowup.toml", text);
    let out_dir = dir.path().join("out");
    let out = mkmc(
        &[
            "simulate",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["degraded"], true);
    assert_eq!(summary["filters"][0]["degraded"], true);
}

#[test]
fn simulate_writes_metric_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL_VEHICLE);
    let out_dir = dir.path().join("out");
    let out = mkmc(
        &[
            "simulate",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    for name in ["rmse.csv", "mae.csv", "iterations.csv"] {
        let text = fs::read_to_string(out_dir.join(name)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("step,filter,group,value"));
        let rows: Vec<&str> = lines.collect();
        let groups = if name == "iterations.csv" { 1 } else { 2 };
        assert_eq!(rows.len(), 5 * groups * 25, "{name}");
        for row in rows {
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!(cols.len(), 4);
            assert!(cols[3].parse::<f64>().unwrap().is_finite());
        }
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 9);
    assert_eq!(summary["filters"].as_array().unwrap().len(), 5);
    assert_eq!(summary["config"]["run"]["horizon"], 25);
    let adaptation = fs::read_to_string(out_dir.join("adaptation.csv")).unwrap();
    assert!(adaptation
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(1) == Some("AMKMMC-RDEKF")));
    assert!(adaptation.lines().count() > 1);
}

#[test]
fn seed_override_changes_the_draws() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL_VEHICLE);
    let run = |seed: &str, sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = mkmc(
            &[
                "simulate",
                cfg.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
                "--seed",
                seed,
            ],
            None,
        );
        assert_eq!(out.status.code(), Some(0));
        fs::read_to_string(out_dir.join("rmse.csv")).unwrap()
    };
    assert_ne!(run("1", "a"), run("2", "b"));
    assert_eq!(
        run("9", "c"),
        fs::read_to_string({
            let out_dir = dir.path().join("d");
            mkmc(
                &[
                    "simulate",
                    cfg.to_str().unwrap(),
                    "--out",
                    out_dir.to_str().unwrap(),
                ],
                None,
            );
            out_dir.join("rmse.csv")
        })
        .unwrap()
    );
}

#[test]
fn outputs_are_identical_serial_or_parallel() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL_VEHICLE);
    let mut outputs = Vec::new();
    for (i, workers) in [Some("1"), Some("4"), None, Some("1")]
        .into_iter()
        .enumerate()
    {
        let out_dir = dir.path().join(format!("out{i}"));
        let out = mkmc(
            &[
                "simulate",
                cfg.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
            ],
            workers,
        );
        assert_eq!(out.status.code(), Some(0));
        let files: Vec<Vec<u8>> = [
            "rmse.csv",
            "mae.csv",
            "iterations.csv",
            "adaptation.csv",
            "summary.json",
        ]
        .iter()
        .map(|f| fs::read(out_dir.join(f)).unwrap())
        .collect();
        outputs.push((files, out.stdout));
    }
    for other in &outputs[1..] {
        assert!(other == &outputs[0]);
    }
}

#[test]
fn sweep_emits_one_row_per_filter_and_round_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "small.toml",
        &SMALL_VEHICLE
            .replace("mc_runs = 3", "mc_runs = 1")
            .replace("horizon = 25", "horizon = 10"),
    );
    let out = mkmc(
        &["sweep-L", cfg.to_str().unwrap(), "--values", "1,2,3,5,8,10"],
        None,
    );
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,filter,group,value"));
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect();
    // Both state groups are reported, so each (filter, L) pair appears once per group.
    assert_eq!(rows.len(), 6 * 5 * 2);
    for l in ["1", "2", "3", "5", "8", "10"] {
        for f in ["DEKF", "MCC-DEKF", "MMC-DEKF", "MKMMC-DEKF", "AMKMMC-RDEKF"] {
            for g in ["position", "velocity"] {
                let n = rows
                    .iter()
                    .filter(|r| r[0] == l && r[1] == f && r[2] == g)
                    .count();
                assert_eq!(n, 1, "L={l} {f} {g}");
            }
        }
    }
}

#[test]
fn adapt_demo_prints_the_parameter_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL_VEHICLE);
    let out = mkmc(&["adapt-demo", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let params: std::collections::BTreeSet<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap())
        .collect();
    assert_eq!(
        params.into_iter().collect::<Vec<_>>(),
        ["a1", "a2", "alpha", "omega", "theta"]
    );

    let fixed_only = write_config(
        dir.path(),
        "fixed.toml",
        &format!("{SMALL_VEHICLE}\n[filters]\nuse = [\"DEKF\"]\n"),
    );
    assert_eq!(
        mkmc(&["adapt-demo", fixed_only.to_str().unwrap()], None)
            .status
            .code(),
        Some(1)
    );
}
