//! JSON run configurations. Every struct rejects unknown keys; relative paths
//! are resolved against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sigcorr::calibrate::FreeParameter;
use sigcorr::estimators::ErgodicConfig;
use sigcorr::exact::InitialState;
use sigcorr::filters::TestFunction;
use sigcorr::io::{load_model, MatrixEntries};
use sigcorr::trajectories::{Scheme, POSITIVITY_TOL};
use sigcorr::{Error, Operator, Result, SystemModel};

/// A detector given by index or by channel label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DetectorRef {
    Index(usize),
    Label(String),
}

impl DetectorRef {
    pub fn resolve(&self, model: &SystemModel) -> Result<usize> {
        match self {
            DetectorRef::Index(k) => model.channel(*k).map(|_| *k),
            DetectorRef::Label(l) => model.channel_index(l),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialConfig {
    #[default]
    Stationary,
    Density(MatrixEntries),
}

impl InitialConfig {
    pub fn resolve(&self, model: &SystemModel) -> Result<InitialState> {
        match self {
            InitialConfig::Stationary => Ok(InitialState::Stationary),
            InitialConfig::Density(e) => {
                let d = model.dim();
                if e.len() != d || e.iter().any(|r| r.len() != d) {
                    return Err(Error::Schema(format!("initial density must be {d}x{d}")));
                }
                Ok(InitialState::Density(Operator::from_fn(d, d, |i, j| {
                    sigcorr::densemath::C64::new(e[i][j][0], e[i][j][1])
                })))
            }
        }
    }

    /// Explicit density, or the stationary state.
    pub fn density(&self, model: &SystemModel) -> Result<Operator> {
        match self.resolve(model)? {
            InitialState::Density(rho) => Ok(rho),
            InitialState::Stationary => sigcorr::model::stationary_state(model),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterEntry {
    pub detector: DetectorRef,
    pub filter: TestFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExactRequest {
    /// `K(t_1..t_N)` at distinct points.
    Pointwise { points: Vec<(DetectorRef, f64)> },
    /// Pointwise two-point function on every `(t_a, t_b)` pair of `times`,
    /// skipping same-detector coincidences.
    PointwiseGrid {
        detectors: (DetectorRef, DetectorRef),
        times: Vec<f64>,
    },
    /// `K°`, without equal-point terms.
    Smoothed { filters: Vec<FilterEntry> },
    /// `K` with equal-point terms.
    Full { filters: Vec<FilterEntry> },
    /// `K_{ab}(f^τ, f^0)` with exponential filters, one row per lag.
    FilteredPair {
        detectors: (DetectorRef, DetectorRef),
        bandwidth: f64,
        lags: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactConfig {
    pub model: PathBuf,
    #[serde(default)]
    pub initial: InitialConfig,
    pub requests: Vec<ExactRequest>,
    /// Absolute quadrature tolerance of `K°`.
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMode {
    #[default]
    Nonlinear,
    PhysicalNoise,
    WienerDriven,
}

fn default_positivity_tol() -> f64 {
    POSITIVITY_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: PathBuf,
    #[serde(default)]
    pub initial: InitialConfig,
    pub dt: f64,
    pub duration: f64,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub mode: SimulationMode,
    #[serde(default = "default_positivity_tol")]
    pub positivity_tol: f64,
    /// Write the state every `snapshot_stride` steps to `states_output`.
    #[serde(default)]
    pub snapshot_stride: Option<usize>,
    #[serde(default)]
    pub states_output: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimateMethod {
    /// Time averages over one long stationary run.
    Ergodic(ErgodicConfig),
    /// Average over independent trajectories from the initial state.
    Ensemble(EnsembleSettings),
    /// White-noise records weighted by the linear-state trace.
    Importance(EnsembleSettings),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSettings {
    pub trajectories: usize,
    pub dt: f64,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_positivity_tol")]
    pub positivity_tol: f64,
    pub filters: Vec<FilterEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub model: PathBuf,
    #[serde(default)]
    pub initial: InitialConfig,
    pub method: EstimateMethod,
    /// Add the exact value next to every estimate.
    #[serde(default = "yes")]
    pub compare_exact: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Also write a matplotlib script next to the output.
    #[serde(default)]
    pub plot_script: bool,
}

fn yes() -> bool {
    true
}

fn default_budget() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Model whose channel and decay operators carry unit rate.
    pub model: PathBuf,
    pub parameters: Vec<FreeParameter>,
    /// CSV with `detector_a, detector_b, lambda, lag, value, stderr[, weight]`.
    pub observations: PathBuf,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_deltas() -> Vec<f64> {
    vec![0.1, 0.05, 0.025, 0.0125]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PovmConfig {
    pub model: PathBuf,
    #[serde(default)]
    pub initial: InitialConfig,
    pub points: Vec<(DetectorRef, f64)>,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// Reads and parses `path`; returns the config with relative paths resolved.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Schema(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("config {}: {e}", path.display())))
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Loads the model and applies a global efficiency override.
pub fn model(config_path: &Path, model: &Path, eta: Option<f64>) -> Result<SystemModel> {
    let mut m = load_model(resolve(config_path, model))?;
    if let Some(eta) = eta {
        for k in 0..m.channels().len() {
            m = m.with_efficiency(k, eta).map_err(|e| Error::Schema(e.to_string()))?;
        }
    }
    Ok(m)
}
