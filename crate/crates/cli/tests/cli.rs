use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};
use sigcorr::io::{parse_table, save_model, TIMESTAMP_KEY};
use sigcorr::model::pauli;
use sigcorr::reference::{kxminus_closed, QubitExampleParams};
use sigcorr::{MeasurementChannel, SystemModel};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn sigcorr(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_sigcorr"))
        .args(args)
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_json(path: &Path, v: &Value) {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

/// Figure model saved as `model.json` in `dir`.
fn figure_model(dir: &Path) -> PathBuf {
    let path = dir.join("model.json");
    save_model(&QubitExampleParams::figure_defaults().model().unwrap(), &path).unwrap();
    path
}

fn entries(m: &sigcorr::Operator) -> Value {
    json!((0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect::<Vec<_>>())
        .collect::<Vec<_>>())
}

fn without_timestamp(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with(&format!("# {TIMESTAMP_KEY}")))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn exact_pointwise_grid_matches_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    figure_model(dir.path());
    let params = QubitExampleParams {
        z0: 0.3,
        ..QubitExampleParams::figure_defaults()
    };
    let cfg = dir.path().join("exact.json");
    write_json(
        &cfg,
        &json!({
            "model": "model.json",
            "initial": {"density": entries(&params.initial_state())},
            "requests": [{"kind": "pointwise_grid", "detectors": ["x", "minus"], "times": [0.2, 0.7, 1.3, 2.0]}],
            "output": "grid.csv"
        }),
    );
    let r = sigcorr(&["exact", p(&cfg)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let text = fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert!(text.contains("# model_sha256: "));
    assert!(text.contains(&format!("# {TIMESTAMP_KEY}: ")));
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 16);
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        let (entries, value) = (cells[2], cells[3].parse::<f64>().unwrap());
        let t: Vec<f64> = entries
            .split(';')
            .map(|e| e.split_once('@').unwrap().1.parse().unwrap())
            .collect();
        if t[0] == t[1] {
            continue;
        }
        let closed = kxminus_closed(&params, t[0], t[1]).unwrap();
        assert!((value - closed).abs() < 1e-9, "{entries}: {value} vs {closed}");
    }
}

#[test]
fn invalid_efficiency_is_rejected_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let model = figure_model(dir.path());
    let text = fs::read_to_string(&model).unwrap().replacen("\"eta\": 1.0", "\"eta\": 1.5", 1);
    assert!(text.contains("1.5"));
    fs::write(&model, text).unwrap();
    let cfg = dir.path().join("exact.json");
    write_json(
        &cfg,
        &json!({"model": "model.json", "requests": [{"kind": "pointwise", "points": [[0, 0.1], [1, 0.5]]}], "output": "out.csv"}),
    );
    let r = sigcorr(&["exact", p(&cfg)]);
    assert_eq!(r.code, 2);
    let err: Value = serde_json::from_str(r.stderr.trim()).unwrap();
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("efficiency"));
    assert!(!dir.path().join("out.csv").exists());
}

#[test]
fn fifth_order_smoothed_request_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    figure_model(dir.path());
    let filters: Vec<Value> = (0..5)
        .map(|i| json!({"detector": "x", "filter": {"kind": "exponential", "center": i as f64, "bandwidth": 10.0}}))
        .collect();
    let cfg = dir.path().join("exact.json");
    write_json(&cfg, &json!({"model": "model.json", "requests": [{"kind": "smoothed", "filters": filters}]}));
    let r = sigcorr(&["exact", p(&cfg), "--out", p(&dir.path().join("o.csv"))]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("limit of 4"), "{}", r.stderr);
    assert!(!dir.path().join("o.csv").exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    figure_model(dir.path());
    let cfg = dir.path().join("exact.json");
    write_json(&cfg, &json!({"model": "model.json", "requests": [], "colour": "blue"}));
    let r = sigcorr(&["exact", p(&cfg)]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("colour"));
}

fn fig1(dir: &Path, extra: &[&str]) -> Run {
    let mut args = vec!["reproduce-fig1", "--duration", "200", "--out", p(dir)];
    args.extend_from_slice(extra);
    let r = sigcorr(&args);
    assert_eq!(r.code, 0, "{}", r.stderr);
    r
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    parse_table(&fs::read_to_string(path).unwrap()).unwrap().column(name).unwrap()
}

#[test]
fn figure_run_is_deterministic_and_responds_to_seed_and_efficiency() {
    let root = tempfile::tempdir().unwrap();
    let (a, b, c, d) = (
        root.path().join("a"),
        root.path().join("b"),
        root.path().join("c"),
        root.path().join("d"),
    );
    let r = fig1(&a, &[]);
    assert!(r.stdout.contains("kxminus: 61 lags"));
    fig1(&b, &[]);
    fig1(&c, &["--seed", "7"]);
    fig1(&d, &["--eta", "0.5"]);

    for name in ["kxminus.csv", "kxx.csv"] {
        let x = fs::read_to_string(a.join(name)).unwrap();
        let y = fs::read_to_string(b.join(name)).unwrap();
        assert_eq!(without_timestamp(&x), without_timestamp(&y));
        assert_eq!(column(&a.join(name), "exact"), column(&c.join(name), "exact"));
        assert_ne!(column(&a.join(name), "estimate"), column(&c.join(name), "estimate"));
    }
    assert!(a.join("plot_fig1.py").exists());
    let summary: Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 2024);
    assert!((summary["kxx_zero_lag_equal_point"].as_f64().unwrap() - 1.25).abs() < 1e-9);

    let lags = column(&a.join("kxx.csv"), "lag");
    let zero = lags.iter().position(|&l| l == 0.0).unwrap();
    let kxx1 = column(&a.join("kxx.csv"), "exact");
    let kxx2 = column(&d.join("kxx.csv"), "exact");
    assert!((kxx2[zero] - kxx1[zero] - 10.0 / 8.0 * (1.0 / 0.5 - 1.0)).abs() < 1e-9);
    let km1 = column(&a.join("kxminus.csv"), "exact");
    let km2 = column(&d.join("kxminus.csv"), "exact");
    for (u, v) in km1.iter().zip(&km2) {
        assert!((u - v).abs() < 1e-9);
    }
}

#[test]
fn simulate_writes_the_record_with_its_header() {
    let dir = tempfile::tempdir().unwrap();
    figure_model(dir.path());
    let cfg = dir.path().join("sim.json");
    write_json(
        &cfg,
        &json!({"model": "model.json", "dt": 1e-3, "duration": 0.5, "seed": 3, "scheme": "kraus",
                "snapshot_stride": 100, "states_output": "states.csv", "output": "traj.csv"}),
    );
    let r = sigcorr(&["simulate", p(&cfg)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let table = parse_table(&fs::read_to_string(dir.path().join("traj.csv")).unwrap()).unwrap();
    assert_eq!(table.columns, ["t", "dr_x", "dr_minus"]);
    assert_eq!(table.rows.len(), 500);
    assert_eq!(table.comment("seed"), Some("3"));
    assert_eq!(table.comment("dt"), Some("0.001"));
    assert_eq!(table.comment("model_sha256").map(str::len), Some(64));
    let states = parse_table(&fs::read_to_string(dir.path().join("states.csv")).unwrap()).unwrap();
    assert_eq!(states.rows.len(), 6);
    let trace: Vec<f64> = states.rows.iter().map(|r| r[2] + r[8]).collect();
    assert!(trace.iter().all(|t| (t - 1.0).abs() < 1e-12));

    let r = sigcorr(&["simulate", p(&cfg), "--seed", "4", "--out", p(&dir.path().join("t4.csv"))]);
    assert_eq!(r.code, 0);
    let t4 = parse_table(&fs::read_to_string(dir.path().join("t4.csv")).unwrap()).unwrap();
    assert_eq!(t4.comment("seed"), Some("4"));
    assert_ne!(t4.rows, table.rows);
}

#[test]
fn estimate_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    figure_model(dir.path());
    let est = dir.path().join("est.json");
    write_json(
        &est,
        &json!({"model": "model.json", "plot_script": true, "output": "curves.csv", "method": {
            "kind": "ergodic", "pairs": [[0, 1], [0, 0]], "bandwidth": 10.0,
            "lags": (-10..=10).map(|i| i as f64 * 0.1).collect::<Vec<_>>(),
            "record_interval": 0.1, "duration": 500.0, "dt": 1e-3, "seed": 5, "burn_in": 10.0,
            "scheme": "kraus"}}),
    );
    let r = sigcorr(&["estimate", p(&est)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let curves = dir.path().join("curves.csv");
    let z = column(&curves, "z");
    assert_eq!(z.len(), 42);
    assert!(z.iter().all(|z| z.abs() < 5.0), "{z:?}");
    assert!(dir.path().join("curves.py").exists());

    let unit = SystemModel::new(
        2,
        None,
        vec![],
        vec![
            MeasurementChannel::new("x", pauli::sigma_x(), 1.0).unwrap(),
            MeasurementChannel::new("minus", pauli::sigma_minus(), 1.0).unwrap(),
        ],
    )
    .unwrap();
    save_model(&unit, dir.path().join("unit.json")).unwrap();
    let fit = dir.path().join("fit.json");
    let params = json!([
        {"name": "gamma_minus", "target": {"kind": "rate", "channel": "minus"}, "lower": 0.2, "upper": 3.0, "initial": 1.5},
        {"name": "gamma_x", "target": {"kind": "rate", "channel": "x"}, "lower": 0.1, "upper": 2.0, "initial": 1.0},
        {"name": "eta_x", "target": {"kind": "efficiency", "channel": "x"}, "lower": 0.2, "upper": 1.0, "initial": 0.6}
    ]);
    write_json(
        &fit,
        &json!({"model": "unit.json", "parameters": params, "observations": "curves.csv", "output": "fit_result.json"}),
    );
    let r = sigcorr(&["fit", p(&fit)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let res: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("fit_result.json")).unwrap()).unwrap();
    let result = &res["result"];
    assert_eq!(result["converged"], true);
    let gm = result["parameters"][0]["value"].as_f64().unwrap();
    assert!((gm - 1.0).abs() < 0.5, "{res}");

    write_json(
        &fit,
        &json!({"model": "unit.json", "parameters": params, "observations": "curves.csv", "budget": 5, "output": "fit_short.json"}),
    );
    let r = sigcorr(&["fit", p(&fit)]);
    assert_eq!(r.code, 4, "{}", r.stderr);
    assert!(dir.path().join("fit_short.json").exists());
}

#[test]
fn non_unique_stationary_state_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let dephasing = SystemModel::new(
        2,
        None,
        vec![],
        vec![MeasurementChannel::new("z", pauli::sigma_z(), 1.0).unwrap()],
    )
    .unwrap();
    save_model(&dephasing, dir.path().join("model.json")).unwrap();
    let cfg = dir.path().join("est.json");
    write_json(
        &cfg,
        &json!({"model": "model.json", "method": {
            "kind": "ergodic", "pairs": [[0, 0]], "bandwidth": 10.0, "lags": [0.0],
            "record_interval": 0.1, "duration": 10.0, "dt": 1e-3, "seed": 1, "burn_in": 0.0}}),
    );
    let r = sigcorr(&["estimate", p(&cfg), "--out", p(&dir.path().join("o.csv"))]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(r.stderr.contains("\"numeric\""));
}

#[test]
fn povm_check_reports_second_order_convergence() {
    let dir = tempfile::tempdir().unwrap();
    figure_model(dir.path());
    let cfg = dir.path().join("povm.json");
    write_json(
        &cfg,
        &json!({"model": "model.json", "initial": {"density": entries(&QubitExampleParams::figure_defaults().initial_state())},
                "points": [["x", 0.3], ["minus", 1.1]], "output": "povm.csv"}),
    );
    let r = sigcorr(&["povm-check", p(&cfg)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let table = parse_table(&fs::read_to_string(dir.path().join("povm.csv")).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 4);
    let slope: f64 = table.comment("log_log_slope").unwrap().parse().unwrap();
    assert!((1.8..=2.2).contains(&slope), "{slope}");
}
