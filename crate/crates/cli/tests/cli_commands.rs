use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SCALAR: &str = r#"{
  "name": "scalar",
  "system": {"kind": "linear", "a": [[1.0]], "b": [[1.0]]},
  "control_box": {"bound": 20.0},
  "cost": {"q": [[1.0]], "r": [[1.0]]},
  "disturbance": {"kind": "sinusoid", "period": 20.0, "w_c": 0.5, "seed": 3},
  "run": {"steps": 60, "seed": 3},
  "x0": [2.0],
  "controller": "known_preview"
}"#;

fn rhc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rhc")).args(args).output().expect("binary runs")
}

fn write_scenario(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Applies `patch` as a shallow-per-key merge onto the scalar scenario.
fn scalar_with(patch: Value) -> String {
    let mut base: Value = serde_json::from_str(SCALAR).unwrap();
    for (k, v) in patch.as_object().unwrap() {
        match (base.get_mut(k), v) {
            (Some(Value::Object(dst)), Value::Object(src)) => {
                for (kk, vv) in src {
                    dst.insert(kk.clone(), vv.clone());
                }
            }
            _ => {
                base[k] = v.clone();
            }
        }
    }
    base.to_string()
}

fn invoke(cmd: &str, scenario: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    rhc(&args)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn run_writes_trajectory_metrics_and_constants() {
    let dir = TempDir::new().unwrap();
    let sc = write_scenario(dir.path(), "s.json", SCALAR);
    let out = dir.path().join("out");
    let o = invoke("run", &sc, &out, &["--gamma", "0.5,2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,x_0,u_0,w_0,stage_cost,V_t,cumulative_cost,cumulative_energy,phase,seed,controller"
    );
    assert_eq!(lines.count(), 60);

    let metrics = read_json(&out.join("metrics.json"));
    assert_eq!(metrics["steps"], 60);
    let gammas: Vec<f64> = metrics["regret"].as_array().unwrap().iter().map(|r| r["gamma"].as_f64().unwrap()).collect();
    assert!(gammas.contains(&0.5) && gammas.contains(&2.0));
    let constants = read_json(&out.join("constants.json"));
    assert_eq!(constants["provenance"]["value_bounds"], "quadratic_form");
    assert!(constants["constants"]["gamma_c"].as_f64().unwrap() > 0.0);
}

#[test]
fn horizon_below_threshold_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let text = scalar_with(serde_json::json!({
        "run": {"horizon": 2},
        "constants": {"alpha_hi": 1.0, "gamma_bar": 1.0}
    }));
    let sc = write_scenario(dir.path(), "s.json", &text);
    let out = dir.path().join("out");
    let o = invoke("run", &sc, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("M_min=3"), "{err}");
    let e = read_json(&out.join("error.json"));
    assert_eq!(e["kind"], "config");
    assert_eq!(e["exit_code"], 2);
}

#[test]
fn unknown_preview_without_estimator_is_rejected() {
    let dir = TempDir::new().unwrap();
    let text = scalar_with(serde_json::json!({"controller": "unknown_preview"}));
    let sc = write_scenario(dir.path(), "s.json", &text);
    let o = invoke("run", &sc, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_fields_are_rejected() {
    let dir = TempDir::new().unwrap();
    let text = scalar_with(serde_json::json!({"horizon_typo": 3}));
    let sc = write_scenario(dir.path(), "s.json", &text);
    let o = invoke("run", &sc, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn certify_passes_on_certified_lq_run() {
    let dir = TempDir::new().unwrap();
    let sc = write_scenario(dir.path(), "s.json", SCALAR);
    let out = dir.path().join("out");
    let o = invoke("certify", &sc, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let c = read_json(&out.join("certification.json"));
    assert_eq!(c["passed"], true);
    let names: Vec<&str> = c["checks"].as_array().unwrap().iter().map(|x| x["inequality"].as_str().unwrap()).collect();
    assert_eq!(names, ["value_decrease", "cost_envelope"]);
}

#[test]
fn certify_catches_understated_constants() {
    let dir = TempDir::new().unwrap();
    let text = scalar_with(serde_json::json!({
        "disturbance": {"kind": "constant", "w_c": 1.0},
        "x0": [0.0],
        "run": {"horizon": 4},
        "constants": {"alpha_hi": 1.7, "gamma_bar": 1e-6}
    }));
    let sc = write_scenario(dir.path(), "s.json", &text);
    let out = dir.path().join("out");
    let o = invoke("certify", &sc, &out, &[]);
    assert_eq!(o.status.code(), Some(3));
    let c = read_json(&out.join("certification.json"));
    assert_eq!(c["passed"], false);
    let constants = read_json(&out.join("constants.json"));
    assert_eq!(constants["provenance"]["spot_check"]["consistent"], false);
}

#[test]
fn resting_start_with_no_disturbance_is_trivially_certified() {
    let dir = TempDir::new().unwrap();
    let text = scalar_with(serde_json::json!({
        "disturbance": {"kind": "zero", "w_c": 0.0},
        "x0": [0.0]
    }));
    let sc = write_scenario(dir.path(), "s.json", &text);
    let out = dir.path().join("out");
    let o = invoke("certify", &sc, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(&out.join("metrics.json"));
    assert_eq!(m["total_cost"].as_f64().unwrap(), 0.0);
}

#[test]
fn minmax_certify_reports_envelope() {
    let dir = TempDir::new().unwrap();
    let text = scalar_with(serde_json::json!({
        "controller": "minmax",
        "disturbance": {"kind": "greedy", "w_c": 0.5, "seed": 1},
        "run": {"steps": 40},
        "certification": {"samples": 30}
    }));
    let sc = write_scenario(dir.path(), "s.json", &text);
    let out = dir.path().join("out");
    let o = invoke("certify", &sc, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let c = read_json(&out.join("certification.json"));
    let env = &c["minmax_envelope"];
    assert_eq!(env["passed"], true);
    assert!(env["total_cost"].as_f64().unwrap() <= env["bound"].as_f64().unwrap());
}

#[test]
fn empty_sweep_axis_gives_header_only_csv() {
    let dir = TempDir::new().unwrap();
    let sc = write_scenario(dir.path(), "s.json", SCALAR);
    let out = dir.path().join("out");
    let o = invoke("sweep", &sc, &out, &["--sweep", "steps="]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert!(csv.starts_with("cell,steps,gamma,gamma_c,regret"));
}

#[test]
fn sweep_over_steps_has_one_row_per_cell_and_gamma() {
    let dir = TempDir::new().unwrap();
    let sc = write_scenario(dir.path(), "s.json", SCALAR);
    let out = dir.path().join("out");
    let o = invoke("sweep", &sc, &out, &["--sweep", "steps=20,40,80", "--gamma", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    // one row at gamma_c plus one at gamma = 1 for each cell
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| &r[10] == "ok"));
    let costs: Vec<f64> = rows.iter().step_by(2).map(|r| r[6].parse().unwrap()).collect();
    assert!(costs[0] < costs[1] && costs[1] < costs[2]);
}

#[test]
fn sweep_rejects_unknown_axis() {
    let dir = TempDir::new().unwrap();
    let sc = write_scenario(dir.path(), "s.json", SCALAR);
    let o = invoke("sweep", &sc, &dir.path().join("out"), &["--sweep", "q=1,2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runs_are_byte_identical_for_a_fixed_seed() {
    let dir = TempDir::new().unwrap();
    let text = scalar_with(serde_json::json!({"disturbance": {"kind": "uniform", "w_c": 0.5, "seed": 9}}));
    let sc = write_scenario(dir.path(), "s.json", &text);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert!(invoke("run", &sc, &a, &["--seed", "11"]).status.success());
    assert!(invoke("run", &sc, &b, &["--seed", "11"]).status.success());
    assert!(invoke("run", &sc, &c, &["--seed", "12"]).status.success());
    let read = |p: &Path| fs::read(p.join("trajectory.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn shipped_scenarios_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut n = 0;
    for entry in fs::read_dir(&root).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "json") {
            rhc_cli::Scenario::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}

#[test]
fn schema_lists_every_scenario_field() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let schema = read_json(&root.join("docs/scenario.schema.json"));
    let mut documented: Vec<&String> = schema["properties"].as_object().unwrap().keys().collect();
    documented.sort();
    let s = rhc_cli::Scenario::parse(SCALAR).unwrap();
    let serialized = serde_json::to_value(&s).unwrap();
    let mut actual: Vec<&String> = serialized.as_object().unwrap().keys().collect();
    actual.sort();
    assert_eq!(documented, actual);
}
