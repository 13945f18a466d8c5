use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sbdnet::ExperimentConfig;

fn sbdnet(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbdnet")).args(args).arg("--out").arg(out).output().unwrap()
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path.to_str().unwrap().to_string()
}

fn small_config(events: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::reference();
    cfg.budget.events = Some(events);
    cfg
}

#[test]
fn lambda_c_reports_the_load_factor() {
    let dir = tempfile::tempdir().unwrap();
    let out = sbdnet(&["lambda-c"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("load factor") && l.ends_with(" 1.6")), "{stdout}");
    let eps = fs::read_to_string(dir.path().join("eps_table.csv")).unwrap();
    assert_eq!(eps.lines().count(), 5);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn schema_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "name = \"x\"\nunknown_key = 3\n").unwrap();
    let out = sbdnet(&["lambda-c", "--config", path.to_str().unwrap()], &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(2));

    let mut cfg = ExperimentConfig::reference();
    cfg.n0 = -1.0;
    let path = write_config(dir.path(), &cfg);
    let out = sbdnet(&["lambda-c", "--config", &path], &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn identical_runs_write_identical_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config(3_000));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = sbdnet(&["simulate", "--config", &cfg, "--seed", "7"], d);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    assert_eq!(names.len(), 3);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n}");
    }
}

#[test]
fn sweep_covers_every_rate_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config(2_000));
    let out = sbdnet(&["sweep", "--config", &cfg, "--lambda-rel", "0.9,1.1", "--jobs", "2"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rd = csv::Reader::from_path(dir.path().join("verdicts.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 10);
    let keys: Vec<(String, String)> = rows.iter().map(|r| (r[0].to_string(), r[3].to_string())).collect();
    let mut sorted = keys.clone();
    sorted.sort_by_key(|(i, s)| (i.parse::<u32>().unwrap(), s.parse::<u64>().unwrap()));
    assert_eq!(keys, sorted);
}

#[test]
fn lambda_c_and_sweep_resolve_the_same_rates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config(500));
    let (lc_dir, sw_dir) = (dir.path().join("lc"), dir.path().join("sw"));
    assert!(sbdnet(&["lambda-c", "--config", &cfg, "--seed", "1"], &lc_dir).status.success());
    assert!(sbdnet(&["sweep", "--config", &cfg, "--seed", "1"], &sw_dir).status.success());
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(lc_dir.join("lambda_c.json")).unwrap()).unwrap();
    let resolved: Vec<f64> =
        json["resolved_rates"].as_array().unwrap().iter().map(|r| r["lambda"].as_f64().unwrap()).collect();
    let mut rd = csv::Reader::from_path(sw_dir.join("sweep_summary.csv")).unwrap();
    let swept: Vec<f64> = rd.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    assert_eq!(resolved.len(), swept.len());
    for (a, b) in resolved.iter().zip(&swept) {
        assert!((a - b).abs() <= 1e-12 * a);
    }
}

#[test]
fn fig_lambda_table_has_one_row_per_mixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = sbdnet(&["preset", "fig-lambda"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rd = csv::Reader::from_path(dir.path().join("lambda_p.csv")).unwrap();
    assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), ["p12", "lambda_c", "lambda_p", "ratio"]);
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 9);
    // p12 = 0.2 is the reference mixture
    let lc: f64 = rows[1][1].parse().unwrap();
    assert!((lc - 1.273835).abs() < 1e-6);
}

#[test]
fn heuristic_outputs_per_class_densities() {
    let dir = tempfile::tempdir().unwrap();
    let out = sbdnet(&["heuristic", "cavity", "--lambda-rel", "0.5,1.5"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("cavity.json")).unwrap()).unwrap();
    let runs = json.as_array().unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[0]["converged"], true);
    assert_eq!(runs[0]["mu"].as_object().unwrap().len(), 3);
    assert_eq!(runs[1]["converged"], false);
}
