//! Least-squares fits of rates and efficiencies to measured two-point curves.
//!
//! Observations are stationary `K_{ab}(f^τ, f^0)` values with exponential
//! filters of bandwidth `λ`. The search is a bounded Nelder–Mead simplex in
//! coordinates scaled to `[0, 1]`, restarted around the best vertex whenever
//! it stalls.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::exact::{CorrelatorSpec, Engine, InitialState};
use crate::filters::TestFunction;
use crate::io::read_table;
use crate::{Error, ErrorCategory, Operator, Result, SystemModel};

/// Simplex diameter (scaled coordinates) below which the search has stalled.
pub const STALL_DIAMETER: f64 = 1e-6;
/// Scaled sensitivity, relative to the largest one, below which a parameter
/// is reported as unidentifiable.
pub const IDENTIFIABILITY_RTOL: f64 = 1e-9;
const MAX_RESTARTS: usize = 8;
const INITIAL_STEP: f64 = 0.1;
const SENSITIVITY_STEP: f64 = 1e-4;

/// What a free parameter controls in the template model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParameterTarget {
    /// Monitored channel operator scaled by `√rate`.
    Rate { channel: String },
    Efficiency { channel: String },
    /// Unmonitored decay operator `index` scaled by `√rate`.
    DecayRate { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeParameter {
    pub name: String,
    pub target: ParameterTarget,
    pub lower: f64,
    pub upper: f64,
    pub initial: f64,
}

impl FreeParameter {
    pub fn new(name: &str, target: ParameterTarget, lower: f64, upper: f64, initial: f64) -> Self {
        Self {
            name: name.into(),
            target,
            lower,
            upper,
            initial,
        }
    }

    fn scale(&self) -> f64 {
        self.upper - self.lower
    }

    fn to_physical(&self, u: f64) -> f64 {
        self.lower + u.clamp(0.0, 1.0) * self.scale()
    }

    fn to_scaled(&self, x: f64) -> f64 {
        (x - self.lower) / self.scale()
    }
}

/// A base model whose channel and decay operators carry unit rate, plus the
/// parameters that rescale them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTemplate {
    pub base: SystemModel,
    pub parameters: Vec<FreeParameter>,
}

impl ModelTemplate {
    pub fn new(base: SystemModel, parameters: Vec<FreeParameter>) -> Result<Self> {
        let t = Self { base, parameters };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        if self.parameters.is_empty() {
            return Err(Error::InvalidInput("no free parameters".into()));
        }
        for (i, p) in self.parameters.iter().enumerate() {
            let bad = |msg: &str| Err(Error::InvalidInput(format!("parameter {}: {msg}", p.name)));
            if !(p.lower.is_finite() && p.upper.is_finite() && p.lower < p.upper) {
                return bad("bounds must be finite with lower < upper");
            }
            if !(p.initial >= p.lower && p.initial <= p.upper) {
                return bad("initial value outside bounds");
            }
            match &p.target {
                ParameterTarget::Rate { channel } => {
                    self.base.channel_index(channel)?;
                    if p.lower < 0.0 {
                        return bad("rates must be bounded below by 0");
                    }
                }
                ParameterTarget::Efficiency { channel } => {
                    self.base.channel_index(channel)?;
                    if !(p.lower > 0.0 && p.upper <= 1.0) {
                        return bad("efficiency bounds must lie in (0, 1]");
                    }
                }
                ParameterTarget::DecayRate { index } => {
                    if *index >= self.base.decay().len() {
                        return bad("decay index out of range");
                    }
                    if p.lower < 0.0 {
                        return bad("rates must be bounded below by 0");
                    }
                }
            }
            if self.parameters[..i].iter().any(|q| q.target == p.target || q.name == p.name) {
                return bad("duplicate name or target");
            }
        }
        Ok(())
    }

    pub fn instantiate(&self, values: &[f64]) -> Result<SystemModel> {
        if values.len() != self.parameters.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                values.len(),
                self.parameters.len()
            )));
        }
        let mut channels = self.base.channels().to_vec();
        let mut decay = self.base.decay().to_vec();
        for (p, &v) in self.parameters.iter().zip(values) {
            match &p.target {
                ParameterTarget::Rate { channel } => {
                    let k = self.base.channel_index(channel)?;
                    channels[k].op = self.base.channels()[k].op.scale(v.max(0.0).sqrt());
                }
                ParameterTarget::Efficiency { channel } => {
                    channels[self.base.channel_index(channel)?].eta = v;
                }
                ParameterTarget::DecayRate { index } => {
                    decay[*index] = self.base.decay()[*index].scale(v.max(0.0).sqrt());
                }
            }
        }
        SystemModel::new(
            self.base.dim(),
            Some(self.base.hamiltonian().clone()),
            decay,
            channels,
        )
    }

    pub fn initial_values(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.initial).collect()
    }
}

/// One measured point of `K_{ab}(f^τ, f^0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub detector_a: usize,
    pub detector_b: usize,
    pub lambda: f64,
    pub lag: f64,
    pub value: f64,
    pub stderr: f64,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl Observation {
    pub fn new(detector_a: usize, detector_b: usize, lambda: f64, lag: f64, value: f64, stderr: f64) -> Self {
        Self {
            detector_a,
            detector_b,
            lambda,
            lag,
            value,
            stderr,
            weight: 1.0,
        }
    }

    /// Stationary pair, or with an explicit start state the pair translated
    /// so that the earlier support begins at `t = 0`.
    fn spec(&self, initial: &Option<Operator>) -> Result<CorrelatorSpec> {
        let fa = TestFunction::exponential(self.lag, self.lambda)?;
        let fb = TestFunction::exponential(0.0, self.lambda)?;
        Ok(match initial {
            None => CorrelatorSpec::filters(
                InitialState::Stationary,
                vec![(self.detector_a, fa), (self.detector_b, fb)],
            ),
            Some(rho) => {
                let shift = -fa.support().0.min(fb.support().0);
                CorrelatorSpec::filters(
                    InitialState::Density(rho.clone()),
                    vec![(self.detector_a, fa.shifted(shift)), (self.detector_b, fb.shifted(shift))],
                )
            }
        })
    }
}

/// Reads `detector_a, detector_b, lambda, lag, value, stderr[, weight]`.
pub fn read_observations(path: impl AsRef<Path>) -> Result<Vec<Observation>> {
    let table = read_table(path)?;
    let col = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| Error::Schema(format!("observation file lacks column {name}")))
    };
    let (a, b, l, lag, v, s) = (
        col("detector_a")?,
        col("detector_b")?,
        col("lambda")?,
        col("lag")?,
        col("value")?,
        col("stderr")?,
    );
    let w = table.column("weight");
    let index = |x: f64| {
        if x >= 0.0 && x.fract() == 0.0 {
            Ok(x as usize)
        } else {
            Err(Error::Schema(format!("detector index {x} is not a non-negative integer")))
        }
    };
    (0..table.rows.len())
        .map(|i| {
            Ok(Observation {
                detector_a: index(a[i])?,
                detector_b: index(b[i])?,
                lambda: l[i],
                lag: lag[i],
                value: v[i],
                stderr: s[i],
                weight: w.as_ref().map_or(1.0, |w| w[i]),
            })
        })
        .collect()
}

/// Exact predictions for `observations` under `model`. `initial = None`
/// evaluates in the stationary state.
pub fn predict_curves(
    model: &SystemModel,
    observations: &[Observation],
    initial: &Option<Operator>,
) -> Result<Vec<f64>> {
    let engine = Engine::new(model);
    observations
        .par_iter()
        .map(|o| engine.full_correlator(&o.spec(initial)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitProblem {
    pub template: ModelTemplate,
    pub observations: Vec<Observation>,
    /// Start state for the predictions; `None` means stationary.
    pub initial_state: Option<Operator>,
}

impl FitProblem {
    pub fn new(template: ModelTemplate, observations: Vec<Observation>) -> Result<Self> {
        let p = Self {
            template,
            observations,
            initial_state: None,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        self.template.validate()?;
        let n = self.template.parameters.len();
        if self.observations.len() < n {
            return Err(Error::InvalidInput(format!(
                "{} observations for {n} free parameters",
                self.observations.len()
            )));
        }
        let k = self.template.base.channels().len();
        for (i, o) in self.observations.iter().enumerate() {
            if o.detector_a >= k || o.detector_b >= k {
                return Err(Error::InvalidInput(format!("observation {i}: detector out of range")));
            }
            if !(o.stderr > 0.0 && o.stderr.is_finite()) {
                return Err(Error::InvalidInput(format!("observation {i}: stderr must be positive")));
            }
            if !(o.weight >= 0.0 && o.weight.is_finite()) || !o.value.is_finite() {
                return Err(Error::InvalidInput(format!("observation {i}: bad value or weight")));
            }
        }
        Ok(())
    }

    pub fn objective(&self, predicted: &[f64]) -> f64 {
        self.observations
            .iter()
            .zip(predicted)
            .map(|(o, p)| o.weight * ((o.value - p) / o.stderr).powi(2))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate {
    pub name: String,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    /// Gauss–Newton curvature `Σ w (∂pred/∂θ / σ)²` at the estimate.
    pub curvature: f64,
    pub identifiable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: Vec<ParameterEstimate>,
    /// Weighted sum of squared standardized residuals.
    pub residual: f64,
    pub degrees_of_freedom: usize,
    pub converged: bool,
    pub evaluations: usize,
    pub restarts: usize,
}

impl FitResult {
    pub fn values(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.value).collect()
    }

    pub fn get(&self, name: &str) -> Option<&ParameterEstimate> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

/// Objective in scaled coordinates with a per-point cache.
struct Objective<'a> {
    problem: &'a FitProblem,
    cache: Mutex<HashMap<Vec<u64>, (f64, Vec<f64>)>>,
    evaluations: Mutex<usize>,
}

impl<'a> Objective<'a> {
    fn new(problem: &'a FitProblem) -> Self {
        Self {
            problem,
            cache: Mutex::new(HashMap::new()),
            evaluations: Mutex::new(0),
        }
    }

    fn physical(&self, u: &[f64]) -> Vec<f64> {
        self.problem
            .template
            .parameters
            .iter()
            .zip(u)
            .map(|(p, &x)| p.to_physical(x))
            .collect()
    }

    fn eval(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        let key: Vec<u64> = u.iter().map(|x| x.clamp(0.0, 1.0).to_bits()).collect();
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let model = self.problem.template.instantiate(&self.physical(u))?;
        let pred = predict_curves(&model, &self.problem.observations, &self.problem.initial_state)?;
        let value = self.problem.objective(&pred);
        *self.evaluations.lock().expect("counter lock") += 1;
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, (value, pred.clone()));
        Ok((value, pred))
    }

    fn value(&self, u: &[f64]) -> Result<f64> {
        self.eval(u).map(|(v, _)| v)
    }

    fn evaluations(&self) -> usize {
        *self.evaluations.lock().expect("counter lock")
    }
}

enum Outcome {
    Stalled,
    Budget,
}

fn clamp_unit(x: Vec<f64>) -> Vec<f64> {
    x.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

fn diameter(simplex: &[(Vec<f64>, f64)]) -> f64 {
    let best = &simplex[0].0;
    simplex[1..]
        .iter()
        .map(|(x, _)| x.iter().zip(best).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
}

/// One bounded Nelder–Mead run from `start`; returns the best vertex.
fn nelder_mead(
    obj: &Objective,
    start: &[f64],
    step: f64,
    budget: usize,
) -> Result<(Vec<f64>, f64, Outcome)> {
    let n = start.len();
    let mut simplex = vec![(start.to_vec(), obj.value(start)?)];
    for i in 0..n {
        let mut x = start.to_vec();
        // step inward when the start sits near the upper bound
        x[i] = if x[i] + step <= 1.0 { x[i] + step } else { x[i] - step };
        let x = clamp_unit(x);
        let f = obj.value(&x)?;
        simplex.push((x, f));
    }
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if diameter(&simplex) < STALL_DIAMETER {
            let (x, f) = simplex.swap_remove(0);
            return Ok((x, f, Outcome::Stalled));
        }
        if obj.evaluations() >= budget {
            let (x, f) = simplex.swap_remove(0);
            return Ok((x, f, Outcome::Budget));
        }
        let worst = simplex[n].clone();
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| {
            clamp_unit(
                centroid
                    .iter()
                    .zip(&worst.0)
                    .map(|(c, w)| c + t * (c - w))
                    .collect(),
            )
        };
        let xr = along(1.0);
        let fr = obj.value(&xr)?;
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = obj.value(&xe)?;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let x = along(0.5);
            let f = obj.value(&x)?;
            (x, f)
        } else {
            let x = along(-0.5);
            let f = obj.value(&x)?;
            (x, f)
        };
        if fc < worst.1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        // shrink towards the best vertex
        let best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = v.0.iter().zip(&best).map(|(x, b)| b + 0.5 * (x - b)).collect();
            let f = obj.value(&x)?;
            *v = (x, f);
        }
    }
}

/// Bounded simplex search from the template's initial point, restarted at
/// the best vertex after each stall until a restart no longer improves the
/// objective. Running out of `budget` evaluations returns the best point
/// with `converged = false`.
pub fn fit(problem: &FitProblem, budget: usize) -> Result<FitResult> {
    problem.validate()?;
    let params = &problem.template.parameters;
    let obj = Objective::new(problem);
    let mut u: Vec<f64> = params.iter().map(|p| p.to_scaled(p.initial)).collect();
    let mut best = obj.value(&u)?;
    let mut converged = false;
    let mut restarts = 0;
    let mut step = INITIAL_STEP;
    loop {
        let (x, f, outcome) = nelder_mead(&obj, &u, step, budget)?;
        let improved = f < best - 1e-12 * best.abs().max(1e-300);
        if f <= best {
            u = x;
            best = f;
        }
        match outcome {
            Outcome::Budget => break,
            Outcome::Stalled if !improved && restarts > 0 => {
                converged = true;
                break;
            }
            Outcome::Stalled if restarts >= MAX_RESTARTS => {
                converged = true;
                break;
            }
            Outcome::Stalled => {
                restarts += 1;
                step = (step * 0.5).max(1e-3);
            }
        }
    }

    let (residual, pred0) = obj.eval(&u)?;
    let mut scaled_sens = Vec::with_capacity(params.len());
    for (i, p) in params.iter().enumerate() {
        let mut hi = u.clone();
        let mut lo = u.clone();
        hi[i] = (u[i] + SENSITIVITY_STEP).min(1.0);
        lo[i] = (u[i] - SENSITIVITY_STEP).max(0.0);
        let (_, ph) = obj.eval(&hi)?;
        let (_, pl) = obj.eval(&lo)?;
        let h = hi[i] - lo[i];
        let s: f64 = problem
            .observations
            .iter()
            .zip(ph.iter().zip(&pl))
            .map(|(o, (a, b))| o.weight * ((a - b) / h / o.stderr).powi(2))
            .sum();
        scaled_sens.push((s, p.scale()));
    }
    let max_sens = scaled_sens.iter().map(|s| s.0).fold(0.0, f64::max);
    let parameters = params
        .iter()
        .zip(&u)
        .zip(&scaled_sens)
        .map(|((p, &x), &(s, scale))| ParameterEstimate {
            name: p.name.clone(),
            value: p.to_physical(x),
            lower: p.lower,
            upper: p.upper,
            curvature: s / (scale * scale),
            identifiable: s > IDENTIFIABILITY_RTOL * max_sens && s > 0.0,
        })
        .collect();
    debug_assert_eq!(pred0.len(), problem.observations.len());
    Ok(FitResult {
        parameters,
        residual,
        degrees_of_freedom: problem.observations.len() - params.len(),
        converged,
        evaluations: obj.evaluations(),
        restarts,
    })
}

impl FitResult {
    /// Error category a front end should report for this result, if any.
    pub fn failure(&self) -> Option<ErrorCategory> {
        (!self.converged).then_some(ErrorCategory::Convergence)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::pauli;
    use crate::reference::{kxminus_filtered, QubitExampleParams, DETECTOR_MINUS, DETECTOR_X};
    use crate::MeasurementChannel;

    fn base() -> SystemModel {
        SystemModel::new(
            2,
            None,
            vec![],
            vec![
                MeasurementChannel::new("x", pauli::sigma_x(), 1.0).unwrap(),
                MeasurementChannel::new("minus", pauli::sigma_minus(), 1.0).unwrap(),
            ],
        )
        .unwrap()
    }

    fn template() -> ModelTemplate {
        ModelTemplate::new(
            base(),
            vec![
                FreeParameter::new("gamma_minus", ParameterTarget::Rate { channel: "minus".into() }, 0.1, 3.0, 1.5),
                FreeParameter::new("gamma_x", ParameterTarget::Rate { channel: "x".into() }, 0.05, 3.0, 1.0),
                FreeParameter::new("eta_x", ParameterTarget::Efficiency { channel: "x".into() }, 0.1, 1.0, 0.6),
            ],
        )
        .unwrap()
    }

    #[test]
    fn template_reproduces_the_example() {
        let m = template().instantiate(&[1.0, 0.5, 1.0]).unwrap();
        assert_eq!(m, QubitExampleParams::figure_defaults().model().unwrap());
    }

    #[test]
    fn predictions_match_the_reference() {
        let m = template().instantiate(&[1.0, 0.5, 1.0]).unwrap();
        let obs: Vec<_> = [-1.0, 0.0, 0.7]
            .iter()
            .map(|&lag| Observation::new(DETECTOR_X, DETECTOR_MINUS, 10.0, lag, 0.0, 1.0))
            .collect();
        let pred = predict_curves(&m, &obs, &None).unwrap();
        let p = QubitExampleParams::figure_defaults();
        for (o, v) in obs.iter().zip(&pred) {
            assert!((v - kxminus_filtered(&p, o.lag, 10.0).unwrap()).abs() < 1e-5);
        }
    }

    #[test]
    fn efficiency_moves_only_same_detector_points() {
        let t = template();
        let obs = [
            Observation::new(DETECTOR_X, DETECTOR_X, 10.0, 0.0, 0.0, 1.0),
            Observation::new(DETECTOR_X, DETECTOR_MINUS, 10.0, 0.3, 0.0, 1.0),
        ];
        let a = predict_curves(&t.instantiate(&[1.0, 0.5, 1.0]).unwrap(), &obs, &None).unwrap();
        let b = predict_curves(&t.instantiate(&[1.0, 0.5, 0.5]).unwrap(), &obs, &None).unwrap();
        assert!((b[0] - a[0] - 1.25).abs() < 1e-9);
        assert_eq!(a[1], b[1]);
    }

    #[test]
    fn degenerate_model_gives_white_noise_only() {
        let m = template().instantiate(&[0.0, 0.0, 0.5]).unwrap();
        let rho = Operator::identity(2, 2).scale(0.5);
        let obs = [
            Observation::new(DETECTOR_X, DETECTOR_MINUS, 10.0, 0.3, 0.0, 1.0),
            Observation::new(DETECTOR_X, DETECTOR_X, 10.0, 0.05, 0.0, 1.0),
        ];
        let pred = predict_curves(&m, &obs, &Some(rho)).unwrap();
        assert_eq!(pred[0], 0.0);
        // (λ/2) e^{-λ|τ|} / (4η)
        let white = 10.0 / 2.0 * (-0.5f64).exp() / (4.0 * 0.5);
        assert!((pred[1] - white).abs() < 1e-12, "{} vs {white}", pred[1]);
    }

    #[test]
    fn validation() {
        let bad = FreeParameter::new("r", ParameterTarget::Rate { channel: "x".into() }, -1.0, 1.0, 0.5);
        assert!(ModelTemplate::new(base(), vec![bad]).is_err());
        let bad = FreeParameter::new("e", ParameterTarget::Efficiency { channel: "x".into() }, 0.1, 1.5, 0.5);
        assert!(ModelTemplate::new(base(), vec![bad]).is_err());
        let bad = FreeParameter::new("e", ParameterTarget::Rate { channel: "y".into() }, 0.1, 1.0, 0.5);
        assert!(ModelTemplate::new(base(), vec![bad]).is_err());
        let few = vec![Observation::new(0, 1, 10.0, 0.0, 0.1, 0.01)];
        assert!(FitProblem::new(template(), few).is_err());
    }
}
