use std::path::{Path, PathBuf};

use serde::Serialize;
use sigcorr::calibrate::{self, read_observations, FitProblem, ModelTemplate};
use sigcorr::estimators::{
    ensemble_estimate, ergodic_estimate, importance_estimate, povm_extrapolated, povm_oracle,
    EnsembleConfig,
};
use sigcorr::exact::{CorrelatorSpec, Engine, EngineOptions, InitialState};
use sigcorr::io::{
    model_hash, write_records, write_table, write_trajectory, CsvHeader, Table,
};
use sigcorr::reference::filtered_pair;
use sigcorr::trajectories::{self, simulate_linear, LinearMode, SimulationConfig, Snapshot};
use sigcorr::{Error, Result, SystemModel};

use crate::config::{
    self, resolve, DetectorRef, EstimateConfig, EstimateMethod, ExactConfig, ExactRequest,
    FilterEntry, FitConfig, PovmConfig, SimulateConfig, SimulationMode,
};
use crate::plot;
use crate::Globals;

fn header<T: Serialize>(model: &SystemModel, command: &str, cfg: &T) -> CsvHeader {
    CsvHeader::new()
        .param("command", command)
        .model(model)
        .param("config", serde_json::to_string(cfg).expect("plain data"))
        .with_timestamp()
}

fn output(g: &Globals, config_path: &Path, configured: &Option<PathBuf>, default: &str) -> PathBuf {
    g.out
        .clone()
        .or_else(|| configured.as_ref().map(|p| resolve(config_path, p)))
        .unwrap_or_else(|| PathBuf::from(default))
}

fn label(model: &SystemModel, k: usize) -> &str {
    &model.channels()[k].label
}

fn points(model: &SystemModel, pts: &[(DetectorRef, f64)]) -> Result<Vec<(usize, f64)>> {
    pts.iter().map(|(d, t)| Ok((d.resolve(model)?, *t))).collect()
}

fn filters(model: &SystemModel, entries: &[FilterEntry]) -> Result<Vec<(usize, sigcorr::filters::TestFunction)>> {
    entries
        .iter()
        .map(|e| {
            e.filter.validate()?;
            Ok((e.detector.resolve(model)?, e.filter.clone()))
        })
        .collect()
}

fn echo_points(model: &SystemModel, pts: &[(usize, f64)]) -> String {
    pts.iter()
        .map(|(k, t)| format!("{}@{t}", label(model, *k)))
        .collect::<Vec<_>>()
        .join(";")
}

fn echo_filters(model: &SystemModel, fs: &[(usize, sigcorr::filters::TestFunction)]) -> String {
    fs.iter()
        .map(|(k, f)| format!("{}:{}", label(model, *k), f.describe()))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn exact(path: &Path, g: &Globals) -> Result<()> {
    let cfg: ExactConfig = config::load(path)?;
    let model = config::model(path, &cfg.model, g.eta)?;
    let initial = cfg.initial.resolve(&model)?;
    let mut options = EngineOptions::default();
    if let Some(tol) = cfg.tol {
        if !(tol > 0.0) {
            return Err(Error::Schema(format!("tol {tol} must be positive")));
        }
        options.tol = tol;
    }
    let engine = Engine::with_options(&model, options);
    let out = output(g, path, &cfg.output, "exact.csv");

    let mut rows = Vec::new();
    let mut push = |i: usize, kind: &str, entries: String, value: f64| {
        rows.push(vec![i.to_string(), kind.to_string(), entries, value.to_string()]);
    };
    for (i, req) in cfg.requests.iter().enumerate() {
        match req {
            ExactRequest::Pointwise { points: p } => {
                let p = points(&model, p)?;
                let v = engine.pointwise_correlator(&CorrelatorSpec::points(initial.clone(), &p))?;
                push(i, "pointwise", echo_points(&model, &p), v);
            }
            ExactRequest::PointwiseGrid { detectors, times } => {
                let (a, b) = (detectors.0.resolve(&model)?, detectors.1.resolve(&model)?);
                for &ta in times {
                    for &tb in times {
                        if a == b && ta == tb {
                            continue;
                        }
                        let p = [(a, ta), (b, tb)];
                        let v =
                            engine.pointwise_correlator(&CorrelatorSpec::points(initial.clone(), &p))?;
                        push(i, "pointwise", echo_points(&model, &p), v);
                    }
                }
            }
            ExactRequest::Smoothed { filters: f } | ExactRequest::Full { filters: f } => {
                let f = filters(&model, f)?;
                let echo = echo_filters(&model, &f);
                let spec = CorrelatorSpec::filters(initial.clone(), f);
                if matches!(req, ExactRequest::Smoothed { .. }) {
                    push(i, "smoothed", echo, engine.smoothed_correlator(&spec)?);
                } else {
                    push(i, "full", echo, engine.full_correlator(&spec)?);
                }
            }
            ExactRequest::FilteredPair {
                detectors,
                bandwidth,
                lags,
            } => {
                if initial != InitialState::Stationary {
                    return Err(Error::Schema("filtered_pair requests need the stationary state".into()));
                }
                let (a, b) = (detectors.0.resolve(&model)?, detectors.1.resolve(&model)?);
                for &lag in lags {
                    let spec = filtered_pair(a, b, lag, *bandwidth)?;
                    let echo = format!(
                        "{}:exp(t={lag},lambda={bandwidth});{}:exp(t=0,lambda={bandwidth})",
                        label(&model, a),
                        label(&model, b)
                    );
                    push(i, "full", echo, engine.full_correlator(&spec)?);
                }
            }
        }
    }
    write_records(
        &out,
        &header(&model, "exact", &cfg),
        &["request", "kind", "entries", "value"],
        &rows,
    )?;
    println!("wrote {} values to {}", rows.len(), out.display());
    Ok(())
}

fn states_table(model: &SystemModel, snapshots: &[Snapshot], dt: f64) -> Table {
    let d = model.dim();
    let mut cols = vec!["step".to_string(), "t".to_string()];
    for i in 0..d {
        for j in 0..d {
            cols.push(format!("re_{i}{j}"));
            cols.push(format!("im_{i}{j}"));
        }
    }
    let mut t = Table {
        columns: cols,
        ..Table::default()
    };
    for s in snapshots {
        let mut row = vec![s.step as f64, s.step as f64 * dt];
        for i in 0..d {
            for j in 0..d {
                row.push(s.rho[(i, j)].re);
                row.push(s.rho[(i, j)].im);
            }
        }
        t.push(row);
    }
    t
}

pub fn simulate(path: &Path, g: &Globals) -> Result<()> {
    let mut cfg: SimulateConfig = config::load(path)?;
    cfg.dt = g.dt.unwrap_or(cfg.dt);
    cfg.seed = g.seed.unwrap_or(cfg.seed);
    let model = config::model(path, &cfg.model, g.eta)?;
    let rho0 = cfg.initial.density(&model)?;
    let mut sim = SimulationConfig::new(cfg.dt, cfg.duration, cfg.seed)
        .with_scheme(cfg.scheme)
        .with_positivity_tol(cfg.positivity_tol);
    if let Some(stride) = cfg.snapshot_stride {
        sim = sim.with_snapshots(stride);
    }
    let traj = match cfg.mode {
        SimulationMode::Nonlinear => trajectories::simulate(&model, &rho0, &sim)?,
        SimulationMode::PhysicalNoise => simulate_linear(&model, &rho0, &sim, LinearMode::PhysicalNoise)?,
        SimulationMode::WienerDriven => simulate_linear(&model, &rho0, &sim, LinearMode::WienerDriven)?,
    };
    let out = output(g, path, &cfg.output, "trajectory.csv");
    let head = header(&model, "simulate", &cfg);
    write_trajectory(&out, &model, &traj, head.clone())?;
    if let Some(states) = &cfg.states_output {
        let snaps = if cfg.mode == SimulationMode::WienerDriven {
            &traj.linear_snapshots
        } else {
            &traj.snapshots
        };
        write_table(resolve(path, states), &head, &states_table(&model, snaps, traj.dt))?;
    }
    println!("wrote {} steps to {}", traj.n_steps, out.display());
    Ok(())
}

pub fn estimate(path: &Path, g: &Globals) -> Result<()> {
    let mut cfg: EstimateConfig = config::load(path)?;
    match &mut cfg.method {
        EstimateMethod::Ergodic(e) => {
            e.dt = g.dt.unwrap_or(e.dt);
            e.seed = g.seed.unwrap_or(e.seed);
        }
        EstimateMethod::Ensemble(e) | EstimateMethod::Importance(e) => {
            e.dt = g.dt.unwrap_or(e.dt);
            e.seed = g.seed.unwrap_or(e.seed);
        }
    }
    let model = config::model(path, &cfg.model, g.eta)?;
    let initial = cfg.initial.resolve(&model)?;
    let out = output(g, path, &cfg.output, "estimate.csv");
    let head = header(&model, "estimate", &cfg);
    let engine = Engine::new(&model);

    match &cfg.method {
        EstimateMethod::Ergodic(e) => {
            let start = match &initial {
                InitialState::Density(rho) => Some(rho),
                InitialState::Stationary => None,
            };
            let res = ergodic_estimate(&model, start, e)?;
            let mut cols = vec!["detector_a", "detector_b", "lambda", "lag", "value", "stderr", "n"];
            if cfg.compare_exact {
                cols.extend(["exact", "z"]);
            }
            let mut t = Table::new(&cols);
            for curve in &res.curves {
                let (a, b) = curve.pair;
                for (lag, est) in curve.lags.iter().zip(&curve.estimates) {
                    let mut row = vec![
                        a as f64,
                        b as f64,
                        e.bandwidth,
                        *lag,
                        est.value,
                        est.stderr,
                        est.n_samples as f64,
                    ];
                    if cfg.compare_exact {
                        let exact = engine.full_correlator(&filtered_pair(a, b, *lag, e.bandwidth)?)?;
                        row.extend([exact, (est.value - exact) / est.stderr]);
                    }
                    t.push(row);
                }
            }
            let head = head
                .param("batches", res.batches)
                .param("sample_times", res.sample_times)
                .param("worst_eigenvalue", res.positivity.worst_eigenvalue);
            write_table(&out, &head, &t)?;
            if cfg.plot_script {
                let script = out.with_extension("py");
                plot::write_curves_script(&script, &out, cfg.compare_exact)?;
            }
        }
        EstimateMethod::Ensemble(s) | EstimateMethod::Importance(s) => {
            let f = filters(&model, &s.filters)?;
            let echo = echo_filters(&model, &f);
            let spec = CorrelatorSpec::filters(initial, f);
            let ec = EnsembleConfig::new(s.trajectories, s.dt, s.seed)
                .with_scheme(s.scheme)
                .with_positivity_tol(s.positivity_tol);
            let est = if matches!(cfg.method, EstimateMethod::Ensemble(_)) {
                ensemble_estimate(&model, &spec, &ec)?
            } else {
                importance_estimate(&model, &spec, &ec)?
            };
            let mut cols = vec!["entries", "value", "stderr", "n"];
            let mut row = vec![
                echo,
                est.value.to_string(),
                est.stderr.to_string(),
                est.n_samples.to_string(),
            ];
            if cfg.compare_exact {
                let exact = engine.full_correlator(&spec)?;
                cols.extend(["exact", "z"]);
                row.extend([exact.to_string(), ((est.value - exact) / est.stderr).to_string()]);
            }
            write_records(&out, &head, &cols, &[row])?;
        }
    }
    println!("wrote estimates to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct FitOutput<'a> {
    model_sha256: String,
    config: &'a FitConfig,
    result: &'a calibrate::FitResult,
}

pub fn fit(path: &Path, g: &Globals) -> Result<()> {
    let cfg: FitConfig = config::load(path)?;
    let base = config::model(path, &cfg.model, g.eta)?;
    let template = ModelTemplate::new(base.clone(), cfg.parameters.clone())
        .map_err(|e| Error::Schema(e.to_string()))?;
    let obs = read_observations(resolve(path, &cfg.observations))?;
    let problem = FitProblem::new(template, obs).map_err(|e| Error::Schema(e.to_string()))?;
    let res = calibrate::fit(&problem, cfg.budget)?;
    let out = output(g, path, &cfg.output, "fit.json");
    let doc = FitOutput {
        model_sha256: model_hash(&base),
        config: &cfg,
        result: &res,
    };
    std::fs::write(&out, serde_json::to_string_pretty(&doc).expect("plain data") + "\n")?;
    for p in &res.parameters {
        println!(
            "{} = {:.6} (curvature {:.3e}{})",
            p.name,
            p.value,
            p.curvature,
            if p.identifiable { "" } else { ", unidentifiable" }
        );
    }
    println!(
        "residual {:.4} with {} degrees of freedom after {} evaluations",
        res.residual, res.degrees_of_freedom, res.evaluations
    );
    if !res.converged {
        return Err(Error::NotConverged(format!(
            "budget of {} evaluations exhausted; best point written to {}",
            cfg.budget,
            out.display()
        )));
    }
    Ok(())
}

/// Least-squares slope of `log y` against `log x`.
pub(crate) fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub fn povm_check(path: &Path, g: &Globals) -> Result<()> {
    let cfg: PovmConfig = config::load(path)?;
    let model = config::model(path, &cfg.model, g.eta)?;
    let initial = cfg.initial.resolve(&model)?;
    if cfg.deltas.len() < 2 || cfg.deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::Schema("povm-check needs at least two positive deltas".into()));
    }
    let p = points(&model, &cfg.points)?;
    let spec = CorrelatorSpec::points(initial, &p);
    let exact = Engine::new(&model).pointwise_correlator(&spec)?;
    let mut t = Table::new(&["delta", "value", "abs_error"]);
    let mut errors = Vec::new();
    for &d in &cfg.deltas {
        let v = povm_oracle(&model, &spec, d)?;
        errors.push((v - exact).abs());
        t.push(vec![d, v, (v - exact).abs()]);
    }
    let slope = log_log_slope(&cfg.deltas, &errors);
    let smallest = cfg.deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let extrapolated = povm_extrapolated(&model, &spec, smallest)?;
    let out = output(g, path, &cfg.output, "povm.csv");
    let head = header(&model, "povm-check", &cfg)
        .param("points", echo_points(&model, &p))
        .param("exact", exact)
        .param("log_log_slope", slope)
        .param("extrapolated", extrapolated)
        .param("extrapolated_error", (extrapolated - exact).abs());
    write_table(&out, &head, &t)?;
    println!("exact {exact:.10}");
    println!("observed order {slope:.3}");
    println!("extrapolated {extrapolated:.10} (error {:.2e})", (extrapolated - exact).abs());
    Ok(())
}
