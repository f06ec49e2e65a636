use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use sigcorr::estimators::{ergodic_estimate, PositivityReport};
use sigcorr::exact::Engine;
use sigcorr::io::{model_hash, write_table, CsvHeader, Table};
use sigcorr::reference::{
    figure_ergodic_config, filtered_pair, QubitExampleParams, FIGURE_SEED,
};
use sigcorr::{Error, Result};

use crate::{plot, Globals};

/// Agreement threshold in batch-means standard errors.
const Z_LIMIT: f64 = 4.0;

#[derive(Debug, Serialize)]
struct CurveSummary {
    name: String,
    lags: usize,
    max_abs_z: f64,
    rms_z: f64,
    within_4_sigma: bool,
}

#[derive(Debug, Serialize)]
struct Summary {
    model_sha256: String,
    seed: u64,
    eta: f64,
    dt: f64,
    duration: f64,
    bandwidth: f64,
    batches: usize,
    sample_times: usize,
    curves: Vec<CurveSummary>,
    /// Exact `K_{x,x}(0)` minus its smoothed part.
    kxx_zero_lag_equal_point: f64,
    positivity: PositivityReport,
    all_within_4_sigma: bool,
}

pub fn run(duration: f64, g: &Globals) -> Result<()> {
    let eta = g.eta.unwrap_or(1.0);
    let seed = g.seed.unwrap_or(FIGURE_SEED);
    let defaults = QubitExampleParams::figure_defaults();
    let p = QubitExampleParams::new(defaults.gamma_x, defaults.gamma_minus, eta, eta, defaults.z0)
        .map_err(|e| Error::Schema(e.to_string()))?;
    let model = p.model()?;
    let mut cfg = figure_ergodic_config(seed, duration);
    cfg.dt = g.dt.unwrap_or(cfg.dt);
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("fig1"));

    let res = ergodic_estimate(&model, None, &cfg)?;
    let engine = Engine::new(&model);
    fs::create_dir_all(&dir)?;

    let names = ["kxminus", "kxx"];
    let mut curves = Vec::new();
    let mut equal_point = f64::NAN;
    for (curve, name) in res.curves.iter().zip(names) {
        let (a, b) = curve.pair;
        let mut t = Table::new(&["lag", "exact", "smoothed", "estimate", "stderr", "z"]);
        let mut zs = Vec::new();
        for (lag, est) in curve.lags.iter().zip(&curve.estimates) {
            let spec = filtered_pair(a, b, *lag, cfg.bandwidth)?;
            let exact = engine.full_correlator(&spec)?;
            let smoothed = engine.smoothed_correlator(&spec)?;
            if a == b && *lag == 0.0 {
                equal_point = exact - smoothed;
            }
            let z = (est.value - exact) / est.stderr;
            zs.push(z);
            t.push(vec![*lag, exact, smoothed, est.value, est.stderr, z]);
        }
        let header = CsvHeader::new()
            .param("command", "reproduce-fig1")
            .model(&model)
            .param("config", serde_json::to_string(&cfg).expect("plain data"))
            .param("pair", format!("{a},{b}"))
            .with_timestamp();
        write_table(dir.join(format!("{name}.csv")), &header, &t)?;
        let max_abs_z = zs.iter().fold(0.0f64, |m, z| m.max(z.abs()));
        let rms_z = (zs.iter().map(|z| z * z).sum::<f64>() / zs.len() as f64).sqrt();
        curves.push(CurveSummary {
            name: name.to_string(),
            lags: zs.len(),
            max_abs_z,
            rms_z,
            within_4_sigma: max_abs_z <= Z_LIMIT,
        });
    }

    let summary = Summary {
        model_sha256: model_hash(&model),
        seed,
        eta,
        dt: cfg.dt,
        duration,
        bandwidth: cfg.bandwidth,
        batches: res.batches,
        sample_times: res.sample_times,
        all_within_4_sigma: curves.iter().all(|c| c.within_4_sigma),
        curves,
        kxx_zero_lag_equal_point: equal_point,
        positivity: res.positivity,
    };
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("plain data") + "\n",
    )?;
    plot::write_fig1_script(&dir.join("plot_fig1.py"))?;

    for c in &summary.curves {
        println!(
            "{}: {} lags, max |z| = {:.2}, rms z = {:.2}",
            c.name, c.lags, c.max_abs_z, c.rms_z
        );
    }
    println!("K_xx(0) equal-point part: {:.6}", summary.kxx_zero_lag_equal_point);
    println!(
        "worst eigenvalue {:.3e}; all lags within 4 sigma: {}",
        summary.positivity.worst_eigenvalue, summary.all_within_4_sigma
    );
    println!("wrote {}", dir.display());
    Ok(())
}
