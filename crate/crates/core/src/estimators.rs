//! Monte Carlo correlator estimates from simulated records, and the
//! deterministic two-outcome POVM oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densemath::{kron, CMatrix};
use crate::exact::{normalise_supports, normalise_times, ordered_trace, CorrelatorSpec, Engine, Probe};
use crate::filters::{apply, ExponentialSmoother, SignalGrid, TestFunction, EXP_SUPPORT_WIDTHS};
use crate::model::{stationary_state, Operator, SuperOperator, SystemModel};
use crate::trajectories::{
    derive_seed, simulate, simulate_linear, simulate_with, LinearMode, Scheme,
    SimulationConfig, POSITIVITY_TOL,
};
use crate::{Error, Result};

/// Above this value of `δ‖c‖` the POVM elements are far from isometric.
pub const POVM_DELTA_WARN: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithError {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

impl EstimateWithError {
    /// Mean and `sd/√n` of iid samples (Welford accumulation, in order).
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 samples, got {n}")));
        }
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for (i, &x) in samples.iter().enumerate() {
            let delta = x - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (x - mean);
        }
        let var = m2 / (n - 1) as f64;
        Ok(Self {
            value: mean,
            stderr: (var / n as f64).sqrt(),
            n_samples: n,
        })
    }

    /// `|value − target| ≤ k·stderr`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.stderr
    }
}

/// Mean over all samples with the error from `batches` contiguous batch means.
/// Trailing samples that do not fill a batch are dropped from both.
pub fn batch_means(samples: &[f64], batches: usize) -> Result<EstimateWithError> {
    if batches < 2 {
        return Err(Error::InvalidInput("batch means needs at least 2 batches".into()));
    }
    let size = samples.len() / batches;
    if size == 0 {
        return Err(Error::InvalidInput(format!(
            "{} samples cannot fill {batches} batches",
            samples.len()
        )));
    }
    let means: Vec<f64> = samples
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let est = EstimateWithError::from_samples(&means)?;
    Ok(EstimateWithError {
        n_samples: size * batches,
        ..est
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub trajectories: usize,
    pub dt: f64,
    pub seed: u64,
    pub positivity_tol: f64,
    /// Integrator of the nonlinear trajectories; importance sampling always
    /// uses [`Scheme::Kraus`].
    pub scheme: Scheme,
}

impl EnsembleConfig {
    pub fn new(trajectories: usize, dt: f64, seed: u64) -> Self {
        Self {
            trajectories,
            dt,
            seed,
            positivity_tol: POSITIVITY_TOL,
            scheme: Scheme::Euler,
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_positivity_tol(mut self, tol: f64) -> Self {
        self.positivity_tol = tol;
        self
    }

    fn check(&self) -> Result<()> {
        if self.trajectories < 2 {
            return Err(Error::InvalidInput(format!(
                "ensemble needs at least 2 trajectories, got {}",
                self.trajectories
            )));
        }
        Ok(())
    }
}

/// Filters shifted to the simulation origin, the initial state, and the
/// number of steps whose grid covers every support.
struct Prepared {
    filters: Vec<(usize, TestFunction)>,
    rho0: Operator,
    sim: SimulationConfig,
}

fn prepare(model: &SystemModel, spec: &CorrelatorSpec, cfg: &EnsembleConfig) -> Result<Prepared> {
    cfg.check()?;
    let mut filters = Vec::with_capacity(spec.entries.len());
    for e in &spec.entries {
        model.channel(e.detector)?;
        match &e.probe {
            Probe::Filter(f) => {
                f.validate()?;
                filters.push((e.detector, f.clone()));
            }
            Probe::Time(_) => {
                return Err(Error::InvalidInput(
                    "Monte Carlo estimates need test functions, not time points".into(),
                ))
            }
        }
    }
    if filters.is_empty() {
        return Err(Error::InvalidInput("correlator needs at least one entry".into()));
    }
    let filters = normalise_supports(filters, &spec.initial)?;
    let rho0 = match &spec.initial {
        crate::exact::InitialState::Density(rho) => rho.clone(),
        crate::exact::InitialState::Stationary => stationary_state(model)?,
    };
    let horizon = filters.iter().map(|(_, f)| f.support().1).fold(0.0, f64::max);
    let n_steps = (horizon / cfg.dt - 1e-9).ceil().max(0.0) as usize + 1;
    let sim = SimulationConfig::new(cfg.dt, n_steps as f64 * cfg.dt, cfg.seed)
        .with_positivity_tol(cfg.positivity_tol)
        .with_scheme(cfg.scheme);
    Ok(Prepared { filters, rho0, sim })
}

fn product_of_integrals(filters: &[(usize, TestFunction)], increments: &[Vec<f64>], dt: f64) -> Result<f64> {
    let mut prod = 1.0;
    for (d, f) in filters {
        let grid = SignalGrid {
            start: 0.0,
            dt,
            increments: &increments[*d],
        };
        prod *= apply(f, &grid)?;
    }
    Ok(prod)
}

fn reduce(per_path: Vec<Result<f64>>) -> Result<EstimateWithError> {
    let samples = per_path.into_iter().collect::<Result<Vec<f64>>>()?;
    EstimateWithError::from_samples(&samples)
}

fn aborted(seed: u64, e: Error) -> Error {
    Error::TrajectoryAborted {
        seed,
        source: Box::new(e),
    }
}

/// `E[I_{ℓ_1}(f_1)⋯I_{ℓ_N}(f_N)]` over independent nonlinear trajectories.
///
/// Trajectory `i` uses seed `derive_seed(cfg.seed, i)`; the reduction runs in
/// index order, so the result does not depend on the thread count.
pub fn ensemble_estimate(
    model: &SystemModel,
    spec: &CorrelatorSpec,
    cfg: &EnsembleConfig,
) -> Result<EstimateWithError> {
    let prep = prepare(model, spec, cfg)?;
    let per_path: Vec<Result<f64>> = (0..cfg.trajectories as u64)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(cfg.seed, i);
            let sim = SimulationConfig { seed, ..prep.sim };
            let traj = simulate(model, &prep.rho0, &sim).map_err(|e| aborted(seed, e))?;
            product_of_integrals(&prep.filters, &traj.increments, cfg.dt)
        })
        .collect();
    reduce(per_path)
}

/// `E_ref[I(f_1)⋯I(f_N) tr ρ̃(T)]` with white-noise records and the linear
/// state as likelihood ratio. Uses the positive linear step.
pub fn importance_estimate(
    model: &SystemModel,
    spec: &CorrelatorSpec,
    cfg: &EnsembleConfig,
) -> Result<EstimateWithError> {
    let prep = prepare(model, spec, cfg)?;
    let per_path: Vec<Result<f64>> = (0..cfg.trajectories as u64)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(cfg.seed, i);
            let sim = SimulationConfig { seed, ..prep.sim }.with_scheme(Scheme::Kraus);
            let traj = simulate_linear(model, &prep.rho0, &sim, LinearMode::WienerDriven)
                .map_err(|e| aborted(seed, e))?;
            let weight = traj.final_weight().unwrap_or(1.0);
            Ok(product_of_integrals(&prep.filters, &traj.increments, cfg.dt)? * weight)
        })
        .collect();
    reduce(per_path)
}

/// One long trajectory, exponential filters, and a grid of lags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErgodicConfig {
    /// `(a, b)` pairs: each curve estimates `K_{ab}(f^τ, f^0)`.
    pub pairs: Vec<(usize, usize)>,
    pub bandwidth: f64,
    /// Every lag must be an integer multiple of `record_interval`.
    pub lags: Vec<f64>,
    /// Spacing of the stored filtered signals; an integer multiple of `dt`.
    pub record_interval: f64,
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
    pub burn_in: f64,
    /// Spacing of sample times; defaults to the filter support length.
    #[serde(default)]
    pub sample_stride: Option<f64>,
    /// Defaults to `⌊√duration⌋`.
    #[serde(default)]
    pub batches: Option<usize>,
    #[serde(default = "default_positivity_tol")]
    pub positivity_tol: f64,
    #[serde(default)]
    pub scheme: Scheme,
}

fn default_positivity_tol() -> f64 {
    POSITIVITY_TOL
}

impl ErgodicConfig {
    /// Symmetric lag grid `−max_lag..=max_lag` in steps of `record_interval`.
    pub fn symmetric_lags(max_lag: f64, record_interval: f64) -> Vec<f64> {
        let k = (max_lag / record_interval).round() as i64;
        (-k..=k).map(|i| i as f64 * record_interval).collect()
    }

    pub fn support_length(&self) -> f64 {
        EXP_SUPPORT_WIDTHS / self.bandwidth
    }
}

fn integer_ratio(x: f64, unit: f64, what: &str) -> Result<i64> {
    let r = x / unit;
    let k = r.round();
    if (r - k).abs() > 1e-6 * r.abs().max(1.0) {
        return Err(Error::InvalidInput(format!("{what} {x} is not a multiple of {unit}")));
    }
    Ok(k as i64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicCurve {
    pub pair: (usize, usize),
    pub lags: Vec<f64>,
    pub estimates: Vec<EstimateWithError>,
}

/// Positivity of the conditional state over the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub worst_eigenvalue: f64,
    /// Fraction of steps with minimum eigenvalue below the default tolerance.
    pub fraction_below_default: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicResult {
    pub curves: Vec<ErgodicCurve>,
    /// Sample times are `first_sample + k·sample_spacing`, `k < sample_times`.
    pub first_sample: f64,
    pub sample_spacing: f64,
    pub sample_times: usize,
    pub batches: usize,
    pub positivity: PositivityReport,
}

/// Time averages of `I_a(f^{t+τ}) I_b(f^t)` along one trajectory.
///
/// `initial = None` starts in the stationary state. Sample times `t` are
/// common to all lags and satisfy: every filter involved lies after
/// `burn_in`, and the later one ends inside the record.
pub fn ergodic_estimate(
    model: &SystemModel,
    initial: Option<&Operator>,
    cfg: &ErgodicConfig,
) -> Result<ErgodicResult> {
    // the time average only converges to a unique limit
    let rho_ss = stationary_state(model)?;
    let rho0 = initial.cloned().unwrap_or(rho_ss);
    if !(cfg.bandwidth > 0.0 && cfg.bandwidth.is_finite()) {
        return Err(Error::InvalidInput(format!("bandwidth {} must be positive", cfg.bandwidth)));
    }
    if cfg.pairs.is_empty() || cfg.lags.is_empty() {
        return Err(Error::InvalidInput("ergodic estimate needs pairs and lags".into()));
    }
    if !(cfg.burn_in >= 0.0) {
        return Err(Error::InvalidInput(format!("burn-in {} must be non-negative", cfg.burn_in)));
    }
    for &(a, b) in &cfg.pairs {
        model.channel(a)?;
        model.channel(b)?;
    }
    let sim = SimulationConfig::new(cfg.dt, cfg.duration, cfg.seed)
        .with_positivity_tol(cfg.positivity_tol)
        .with_scheme(cfg.scheme);
    let n_steps = sim.n_steps()?;
    let record_every = integer_ratio(cfg.record_interval, cfg.dt, "record interval")?;
    if record_every < 1 {
        return Err(Error::InvalidInput("record interval shorter than dt".into()));
    }
    let h = record_every as f64 * cfg.dt;
    let lag_steps: Vec<i64> = cfg
        .lags
        .iter()
        .map(|&l| integer_ratio(l, h, "lag"))
        .collect::<Result<_>>()?;
    let stride = cfg.sample_stride.unwrap_or(cfg.support_length());
    let stride_records = ((stride / h).round() as i64).max(1);
    let support_records = (cfg.support_length() / h).ceil() as i64;
    let burn_records = (cfg.burn_in / h).ceil() as i64;
    let n_records = ((n_steps - 1) / record_every as usize + 1) as i64;
    let min_lag = *lag_steps.iter().min().unwrap();
    let max_lag = *lag_steps.iter().max().unwrap();
    let first = burn_records + support_records + (-min_lag).max(0);
    let last = n_records - 1 - max_lag.max(0);
    if last < first {
        return Err(Error::InvalidInput(format!(
            "duration {} too short for burn-in {}, support {} and lags",
            cfg.duration,
            cfg.burn_in,
            cfg.support_length()
        )));
    }
    let samples: Vec<i64> = (first..=last).step_by(stride_records as usize).collect();
    let batches = cfg
        .batches
        .unwrap_or((cfg.duration.sqrt().floor() as usize).max(2));

    let k = model.channels().len();
    let mut smoothers: Vec<ExponentialSmoother> =
        (0..k).map(|_| ExponentialSmoother::new(cfg.bandwidth, cfg.dt)).collect();
    let mut records: Vec<Vec<f64>> = vec![Vec::with_capacity(n_records as usize); k];
    let mut worst = f64::INFINITY;
    let mut below = 0usize;
    simulate_with(model, &rho0, &sim, |i, dr, stepper| {
        for (s, &x) in smoothers.iter_mut().zip(dr) {
            s.push(x);
        }
        if i % record_every as usize == 0 {
            for (rec, s) in records.iter_mut().zip(&smoothers) {
                rec.push(s.value());
            }
        }
        let e = stepper.min_eigenvalue();
        worst = worst.min(e);
        if e < POSITIVITY_TOL {
            below += 1;
        }
    })
    .map_err(|e| aborted(cfg.seed, e))?;

    let mut curves = Vec::with_capacity(cfg.pairs.len());
    for &(a, b) in &cfg.pairs {
        let mut estimates = Vec::with_capacity(lag_steps.len());
        for &lag in &lag_steps {
            let products: Vec<f64> = samples
                .iter()
                .map(|&r| records[a][(r + lag) as usize] * records[b][r as usize])
                .collect();
            estimates.push(batch_means(&products, batches)?);
        }
        curves.push(ErgodicCurve {
            pair: (a, b),
            lags: lag_steps.iter().map(|&l| l as f64 * h).collect(),
            estimates,
        });
    }
    Ok(ErgodicResult {
        curves,
        first_sample: first as f64 * h,
        sample_spacing: stride_records as f64 * h,
        sample_times: samples.len(),
        batches,
        positivity: PositivityReport {
            worst_eigenvalue: worst,
            fraction_below_default: below as f64 / n_steps as f64,
        },
    })
}

/// Superoperator `[M₊(·)M₊† − M₋(·)M₋†]/δ` with
/// `M_± = (I ± δc − δ²c†c/2)/√2`.
pub fn povm_insertion(c: &Operator, delta: f64) -> Result<SuperOperator> {
    let d = c.nrows();
    let id = CMatrix::identity(d, d);
    let second = (c.adjoint() * c).scale(0.5 * delta * delta);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let plus = (&id + c.scale(delta) - &second).scale(s);
    let minus = (&id - c.scale(delta) - &second).scale(s);
    let sup = |m: &Operator| kron(&m.conjugate(), m);
    Ok((sup(&plus) - sup(&minus)).unscale(delta))
}

fn spectral_norm(c: &Operator) -> f64 {
    c.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// `E[R_{ℓ_1}⋯R_{ℓ_N}]/δ^N / 2^N` for binary-outcome measurements at the
/// given times, summed over outcomes (no sampling). Tends to the pointwise
/// correlator as `δ → 0` with an `O(δ²)` error.
pub fn povm_oracle(model: &SystemModel, spec: &CorrelatorSpec, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidInput(format!("delta {delta} must be positive")));
    }
    let engine = Engine::new(model);
    let mut points = Vec::with_capacity(spec.entries.len());
    for e in &spec.entries {
        let ch = model.channel(e.detector)?;
        match e.probe {
            Probe::Time(t) if t.is_finite() => points.push((e.detector, t)),
            _ => {
                return Err(Error::InvalidInput(
                    "the POVM oracle needs finite time points".into(),
                ))
            }
        }
        let strength = delta * spectral_norm(&ch.op);
        if strength > POVM_DELTA_WARN {
            log::warn!(
                "δ‖c‖ = {strength:.3} for detector '{}': POVM elements far from isometric",
                ch.label
            );
        }
    }
    if points.is_empty() {
        return Err(Error::InvalidInput("correlator needs at least one entry".into()));
    }
    let inserts: Vec<SuperOperator> = model
        .channels()
        .iter()
        .map(|c| povm_insertion(&c.op, delta))
        .collect::<Result<_>>()?;
    let v0 = engine.initial_vector(&spec.initial)?;
    let points = normalise_times(points, &spec.initial)?;
    let n = points.len();
    let total = ordered_trace(engine.propagator(), &v0, &points, |k| &inserts[k])?;
    Ok(total.re / 2f64.powi(n as i32))
}

/// Richardson step `(4 K(δ/2) − K(δ))/3`, cancelling the `δ²` error term.
pub fn povm_extrapolated(model: &SystemModel, spec: &CorrelatorSpec, delta: f64) -> Result<f64> {
    let coarse = povm_oracle(model, spec, delta)?;
    let fine = povm_oracle(model, spec, 0.5 * delta)?;
    Ok((4.0 * fine - coarse) / 3.0)
}
