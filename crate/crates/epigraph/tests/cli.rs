use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use epigraph::io::{read_series_csv, write_case_csv};
use epigraph_core::calibrate::{synthesize, FitParams, FitSpec, Param};
use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_epigraph"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn put(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn exec(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> i32 {
    let o = bin()
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out-dir")
        .arg(out)
        .args(extra)
        .output()
        .unwrap();
    o.status.code().unwrap()
}

fn one_node(steps: usize) -> Value {
    json!({
        "mode": "sir",
        "params": { "lambda": 0.002, "gamma": 0.05 },
        "initial": { "s": [95], "i": [5] },
        "steps": steps,
    })
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn uniform_two_node_chain_echoes_adjacency() {
    let d = TempDir::new().unwrap();
    let g = put(d.path(), "g.json", &json!({"nodes": 2, "edges": [[0, 1]], "pi": [0.5, 0.5], "multiplicity": 1}));
    assert_eq!(exec("mcmc", &g, d.path(), &[]), 0);
    assert_eq!(fs::read_to_string(d.path().join("Q.csv")).unwrap(), "0.5,0.5\n0.5,0.5\n");
    let diag: Value = serde_json::from_str(&fs::read_to_string(d.path().join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["chains"][0]["reversibility_residual"], 0.0);
    assert!(diag["chains"][0].get("occupancy").is_none());
}

#[test]
fn malformed_pi_is_a_validation_error() {
    let d = TempDir::new().unwrap();
    let g = put(d.path(), "g.json", &json!({"nodes": 2, "edges": [[0, 1]], "pi": [0.5, 0.4], "multiplicity": 1}));
    assert_eq!(exec("mcmc", &g, &d.path().join("out"), &[]), 2);
}

#[test]
fn group_chains_match_their_occupancy() {
    let d = TempDir::new().unwrap();
    let g = scenarios().join("six_rooms.graph.json");
    assert_eq!(exec("mcmc", &g, d.path(), &["--seed", "3"]), 0);
    assert!(d.path().join("Q_group0.csv").exists() && d.path().join("Q_group1.csv").exists());
    let diag: Value = serde_json::from_str(&fs::read_to_string(d.path().join("diagnostics.json")).unwrap()).unwrap();
    for c in diag["chains"].as_array().unwrap() {
        assert!(c["occupancy"]["l1"].as_f64().unwrap() < 0.01);
        assert!(c["reversibility_residual"].as_f64().unwrap() < 1e-12);
    }
}

#[test]
fn zero_steps_gives_header_and_initial_row() {
    let d = TempDir::new().unwrap();
    let c = put(d.path(), "c.json", &one_node(0));
    assert_eq!(exec("run", &c, d.path(), &["--seed", "1"]), 0);
    let text = fs::read_to_string(d.path().join("timeseries.csv")).unwrap();
    assert_eq!(text, "t,node,group,S,E,I,R\n0,0,0,95,0,5,0\n");
}

#[test]
fn stochastic_run_without_seed_is_refused() {
    let d = TempDir::new().unwrap();
    let c = put(d.path(), "c.json", &one_node(10));
    assert_eq!(exec("run", &c, d.path(), &[]), 2);
}

#[test]
fn seed_flag_overrides_config_seed() {
    let d = TempDir::new().unwrap();
    let mut cfg = one_node(60);
    cfg["seed"] = json!(5);
    let c = put(d.path(), "c.json", &cfg);
    let (a, b, z) = (d.path().join("a"), d.path().join("b"), d.path().join("z"));
    assert_eq!(exec("run", &c, &a, &[]), 0);
    assert_eq!(exec("run", &c, &b, &["--seed", "5"]), 0);
    assert_eq!(exec("run", &c, &z, &["--seed", "6"]), 0);
    assert_eq!(files(&a), files(&b));
    assert_ne!(files(&a), files(&z));
}

#[test]
fn replicated_runs_are_byte_identical_and_conserve_population() {
    let d = TempDir::new().unwrap();
    let c = scenarios().join("two_rooms_sir.json");
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(exec("run", &c, out, &["--seed", "42", "--replicas", "8", "--format", "svg"]), 0);
    }
    assert_eq!(files(&a), files(&b));
    let names: Vec<String> = files(&a).into_iter().map(|f| f.0).collect();
    assert_eq!(names, ["plot.svg", "replicas.csv", "summary.json", "timeseries.csv"]);

    let mut rdr = csv::Reader::from_path(a.join("replicas.csv")).unwrap();
    let mut totals = std::collections::BTreeMap::<(u64, String), f64>::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let pop: f64 = (4..8).map(|k| rec[k].parse::<f64>().unwrap()).sum();
        *totals.entry((rec[0].parse().unwrap(), rec[1].to_string())).or_default() += pop;
    }
    assert!(totals.values().all(|&p| p == 300.0));
}

#[test]
fn two_room_run_has_three_curves_per_node() {
    let d = TempDir::new().unwrap();
    assert_eq!(exec("run", &scenarios().join("two_rooms_sir.json"), d.path(), &[]), 0);
    let rows = read_series_csv(&d.path().join("timeseries.csv")).unwrap();
    assert_eq!(rows.len(), 401 * 2);
    assert!(rows.iter().all(|r| r.3[1] == 0.0));
    let rooms: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.1).collect();
    assert_eq!(rooms.len(), 2);
}

#[test]
fn every_mode_runs_deterministically() {
    let d = TempDir::new().unwrap();
    for name in ["two_rooms_forecast", "stadium_sei", "six_rooms_agents", "lockdown_one_node", "two_waves_ode"] {
        let c = scenarios().join(format!("{name}.json"));
        let (a, b) = (d.path().join(format!("{name}_a")), d.path().join(format!("{name}_b")));
        assert_eq!(exec("run", &c, &a, &["--format", "json"]), 0, "{name}");
        assert_eq!(exec("run", &c, &b, &["--format", "json"]), 0, "{name}");
        assert_eq!(files(&a), files(&b), "{name}");
    }
    assert!(d.path().join("six_rooms_agents_a/events.csv").exists());
}

#[test]
fn delay_mode_requires_a_delay() {
    let d = TempDir::new().unwrap();
    let mut cfg = one_node(10);
    cfg["mode"] = json!("delay");
    let c = put(d.path(), "c.json", &cfg);
    assert_eq!(exec("run", &c, d.path(), &["--seed", "1"]), 2);
    cfg["params"]["delay_t0"] = json!(3.0);
    let c = put(d.path(), "c.json", &cfg);
    assert_eq!(exec("run", &c, d.path(), &["--seed", "1"]), 0);
}

#[test]
fn missing_inputs_and_bad_outputs_have_distinct_codes() {
    let d = TempDir::new().unwrap();
    assert_eq!(exec("run", &d.path().join("nope.json"), d.path(), &["--seed", "1"]), 2);
    let mut cfg = one_node(5);
    cfg["graph"] = json!("missing.graph.json");
    let c = put(d.path(), "c.json", &cfg);
    assert_eq!(exec("run", &c, d.path(), &["--seed", "1"]), 2);
    let blocker = d.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let c = put(d.path(), "ok.json", &one_node(5));
    assert_eq!(exec("run", &c, &blocker, &["--seed", "1"]), 3);
}

#[test]
fn empty_sweep_gives_empty_report() {
    let d = TempDir::new().unwrap();
    let s = put(
        d.path(),
        "s.json",
        &json!({"check": "variance", "n": [], "h": [], "t": [], "lambda_n": 0.3, "gamma": 0.02,
                "initial_infected_fraction": 0.01, "replicas": 10}),
    );
    assert_eq!(exec("verify", &s, d.path(), &["--seed", "1"]), 0);
    let r: Value = serde_json::from_str(&fs::read_to_string(d.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(r["report"]["points"], json!([]));
}

#[test]
fn step_beyond_recovery_time_is_rejected() {
    let d = TempDir::new().unwrap();
    let s = put(
        d.path(),
        "s.json",
        &json!({"check": "variance", "n": [100], "h": [0.6], "t": [5], "lambda_n": 0.3, "gamma": 2.0,
                "initial_infected_fraction": 0.01, "replicas": 10}),
    );
    assert_eq!(exec("verify", &s, d.path(), &["--seed", "1"]), 2);
}

#[test]
fn small_variance_sweep_is_reproducible() {
    let d = TempDir::new().unwrap();
    let s = put(
        d.path(),
        "s.json",
        &json!({"check": "variance", "n": [100, 1000], "h": [0.5], "t": [5, 10], "lambda_n": 0.3, "gamma": 0.02,
                "initial_infected_fraction": 0.01, "replicas": 200}),
    );
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    assert_eq!(exec("verify", &s, &a, &["--seed", "8"]), 0);
    assert_eq!(exec("verify", &s, &b, &["--seed", "8"]), 0);
    assert_eq!(files(&a), files(&b));
    let r: Value = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["report"]["points"].as_array().unwrap().len(), 4);
}

fn fit_spec(restarts: usize, detection: Param) -> Value {
    let spec = FitSpec {
        total_population: 1e5,
        initial_infected: 10.0,
        nodes: 1,
        lambda_n: vec![Param::free(0.25, 0.05, 1.0)],
        gamma: Param::free(0.03, 0.005, 0.1),
        epsilon: Param::fixed(0.0),
        detection_rate: detection,
        split: None,
        train_until: 80,
        backend: Default::default(),
    };
    let mut v = serde_json::to_value(spec).unwrap();
    v["restarts"] = json!(restarts);
    v
}

fn case_file(dir: &Path) -> PathBuf {
    let spec: FitSpec = serde_json::from_value(fit_spec(1, Param::fixed(0.5))).unwrap();
    let truth = FitParams {
        lambda_n: vec![0.3],
        gamma: 0.02,
        epsilon: 0.0,
        detection_rate: 0.5,
        split: None,
    };
    let data = synthesize(&spec, &truth, 100).unwrap();
    let p = dir.join("cases.csv");
    write_case_csv(&p, &data).unwrap();
    p
}

#[test]
fn fit_recovers_rates_with_known_detection() {
    let d = TempDir::new().unwrap();
    let data = case_file(d.path());
    let c = put(d.path(), "fit.json", &fit_spec(3, Param::fixed(0.5)));
    let data = data.to_str().unwrap();
    assert_eq!(exec("fit", &c, d.path(), &["--seed", "2", "--data", data]), 0);
    let r: Value = serde_json::from_str(&fs::read_to_string(d.path().join("fit.json")).unwrap()).unwrap();
    let l = r["params"]["lambda_n"][0].as_f64().unwrap();
    let g = r["params"]["gamma"].as_f64().unwrap();
    assert!((l - 0.3).abs() < 0.03 && (g - 0.02).abs() < 0.002, "{l} {g}");
    assert!(r["test_loss"].is_number());
}

#[test]
fn fit_rejects_zero_restarts_and_bad_detection() {
    let d = TempDir::new().unwrap();
    let data = case_file(d.path());
    let data = data.to_str().unwrap();
    let c = put(d.path(), "zero.json", &fit_spec(0, Param::fixed(0.5)));
    assert_eq!(exec("fit", &c, d.path(), &["--seed", "2", "--data", data]), 2);
    let c = put(d.path(), "det.json", &fit_spec(2, Param::free(1.5, 0.05, 1.0)));
    assert_eq!(exec("fit", &c, d.path(), &["--seed", "2", "--data", data]), 2);
    let c = put(d.path(), "det0.json", &fit_spec(2, Param::free(0.5, 0.0, 1.0)));
    assert_eq!(exec("fit", &c, d.path(), &["--seed", "2", "--data", data]), 2);
}
