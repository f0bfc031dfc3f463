use excursion_core::panel::write_panel;
use excursion_core::simulation::{gen_decay, gen_scenario, DecayConfig};
use excursion_core::{PanelSchema, ScenarioConfig, ScenarioId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use tempfile::TempDir;

fn excursion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_excursion")).args(args).env("RUST_LOG", "error").output().expect("binary runs")
}

fn scenario_csv(dir: &Path, scenario: ScenarioId, n: usize, t: u32) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (data, _) = gen_scenario(&ScenarioConfig::new(scenario, n, t, 99), &mut rng).unwrap();
    let path = dir.join("panel.csv");
    let schema = if data.has_rand_prob() { PanelSchema::with_probabilities(data.k_arms()) } else { PanelSchema::default() };
    write_panel(&data, &path, &schema).unwrap();
    path.to_str().unwrap().to_string()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_single_intercept_estimate() {
    let dir = TempDir::new().unwrap();
    let csv = scenario_csv(dir.path(), ScenarioId::S1, 40, 30);
    let out = dir.path().join("out");
    let res = excursion(&["analyze", "-i", &csv, "--prob-col", "prob1", "-e", "EMEE-NonP", "-m", "1", "-o", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report = json(&out.join("report.json"));
    let params = report["reports"][0]["parameters"].as_array().unwrap();
    assert_eq!(params.len(), 1);
    let se = params[0]["se"].as_f64().unwrap();
    assert!(se.is_finite() && se > 0.0);
    let table = fs::read_to_string(out.join("report.txt")).unwrap();
    for col in ["Estimate", "SE", "95% CI", "p-Value"] {
        assert!(table.contains(col));
    }
    assert!(table.starts_with("#% "));
}

#[test]
fn malformed_csv_is_input_error() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "participant,t,availability,outcome\na,1,1,0\n").unwrap();
    let res = excursion(&["analyze", "-i", path_str(&path), "-o", path_str(&dir.path().join("o"))]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("`arm`"), "{err}");
    assert!(err.contains("bad.csv"), "{err}");
}

#[test]
fn missing_input_and_bad_flags_exit_2() {
    let dir = TempDir::new().unwrap();
    assert_eq!(excursion(&["analyze", "-i", path_str(&dir.path().join("nope.csv"))]).status.code(), Some(2));
    assert_eq!(excursion(&["simulate", "--bogus"]).status.code(), Some(2));
    let o = dir.path().join("o");
    assert_eq!(excursion(&["simulate", "-s", "3", "-T", "20", "-R", "2", "-o", path_str(&o)]).status.code(), Some(2));
    assert_eq!(excursion(&["simulate", "-s", "1", "-R", "1", "-o", path_str(&o)]).status.code(), Some(2));
}

#[test]
fn estimation_failure_exits_1() {
    let dir = TempDir::new().unwrap();
    let csv = scenario_csv(dir.path(), ScenarioId::S4, 20, 10);
    let res = excursion(&["analyze", "-i", &csv, "--prob-col", "prob1", "--prob-col", "prob2", "-e", "ECE", "-o", path_str(&dir.path().join("o"))]);
    assert_eq!(res.status.code(), Some(1), "{}", String::from_utf8_lossy(&res.stderr));

    let o = dir.path().join("sim");
    let res = excursion(&["simulate", "-s", "4", "-n", "10", "-T", "5", "-R", "3", "-e", "ECE", "-o", path_str(&o)]);
    assert_eq!(res.status.code(), Some(1));
    let log = fs::read_to_string(o.join("failures.log")).unwrap();
    assert_eq!(log.lines().filter(|l| l.starts_with("T=5 rep")).count(), 3, "{log}");
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    let args = |o: &Path| -> Vec<String> {
        ["simulate", "-s", "1", "-n", "60", "-T", "30", "-R", "5", "-e", "EMEE-NonP", "--seed", "11", "-o", path_str(o)]
            .iter()
            .map(|s| s.to_string())
            .collect()
    };
    let run = |v: Vec<String>, extra: &[&str]| {
        let mut all: Vec<&str> = v.iter().map(String::as_str).collect();
        all.extend_from_slice(extra);
        let res = excursion(&all);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    };
    run(args(&a), &["-w", "1"]);
    run(args(&b), &["-w", "4"]);
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(summary, fs::read_to_string(b.join("summary.csv")).unwrap());
    let rows: Vec<&str> = summary.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("Estimator,Time Length,Parameter,Bias,SE,SD,RMSE,CP"));
    assert!(rows[1].starts_with("EMEE-NonP,30,1,"));
    assert!(summary.contains("#% seed = 11"));

    // rerun from the config embedded in the summary itself
    let res = excursion(&["simulate", "--config", path_str(&a.join("summary.csv")), "-o", path_str(&c)]);
    assert!(res.status.success());
    for f in ["summary.csv", "summary.txt", "run.conf"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(c.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn simulate_thompson_probabilities_clipped() {
    let dir = TempDir::new().unwrap();
    let o = dir.path().join("ts");
    let res = excursion(&["simulate", "-s", "3", "-n", "100", "-T", "30", "-R", "50", "-e", "EMEE-NonP", "-o", path_str(&o)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(o.join("summary.txt")).unwrap();
    let note = text.lines().find(|l| l.starts_with("# T=30")).unwrap();
    let range = note.split('[').nth(1).unwrap().split(']').next().unwrap();
    let (lo, hi) = range.split_once(", ").unwrap();
    let (lo, hi): (f64, f64) = (lo.parse().unwrap(), hi.parse().unwrap());
    assert!(lo >= 0.05 && hi <= 0.95, "{note}");
    assert!(o.join("summary.csv").exists());
}

#[test]
fn decaying_effect_is_detected() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data = gen_decay(&DecayConfig::default(), &mut rng).unwrap();
    let csv = dir.path().join("decay.csv");
    write_panel(&data, &csv, &PanelSchema::with_probabilities(1)).unwrap();
    let out = dir.path().join("out");
    let res = excursion(&[
        "analyze", "-i", path_str(&csv), "--prob-col", "prob1", "-e", "EMEE-NonP",
        "-m", "1", "-m", "days_since_download", "-c", "1", "-c", "days_since_download", "-o", path_str(&out),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report = json(&out.join("report.json"));
    let slope = &report["reports"][0]["parameters"][1];
    assert_eq!(slope["name"], "days_since_download");
    let est = slope["estimate"].as_f64().unwrap();
    assert!(est < 0.0, "{est}");
    assert!(slope["ci_upper"].as_f64().unwrap() < 0.0, "{slope}");
}

#[test]
fn saved_nuisance_model_reproduces_estimates() {
    let dir = TempDir::new().unwrap();
    let csv = scenario_csv(dir.path(), ScenarioId::S2, 40, 30);
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let common = ["-e", "DR-EMEE-NonP", "--nuisance-term", "Z", "--nuisance-term", "arm_lag1"];
    let mut a = vec!["analyze", "-i", csv.as_str(), "-o", path_str(&first)];
    a.extend_from_slice(&common);
    assert!(excursion(&a).status.success());
    let model = first.join("nuisance.json");
    let mut b = vec!["analyze", "-i", csv.as_str(), "-o", path_str(&second), "--nuisance-model", path_str(&model)];
    b.extend_from_slice(&common);
    let res = excursion(&b);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let est = |p: &Path| json(&p.join("report.json"))["reports"][0]["parameters"][0]["estimate"].as_f64().unwrap();
    assert_eq!(est(&first), est(&second));
}
