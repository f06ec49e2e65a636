//! Euler–Maruyama integration of the stochastic master equation
//!
//! ```text
//! dρ  = 𝓛(ρ) dt + Σ_k √η_k 𝓗[c_k](ρ) dW_k
//! dr_k = ½ tr[(c_k + c_k†) ρ] dt + dW_k / (2√η_k)
//! ```
//!
//! and of its linear counterpart `dρ̃ = 𝓛(ρ̃) dt + Σ_k 2η_k c_k⁺ρ̃ dr_k`.
//!
//! Signal convention: `dr` carries half the expectation of `c + c†` and noise
//! of variance `dt/(4η)`. Some references define the signal with an extra
//! factor of 2; rescale before comparing.
//!
//! The state is held as a column-stacked vector and every operator as a
//! precomputed superoperator, so a step is a handful of small matrix-vector
//! products with no allocation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::densemath::{kron, min_eigenvalue_hermitian, unvec, vec, vec_trace, CVector, C64, ONE, ZERO};
use crate::exact::validate_density;
use crate::model::{averaged_generator, insertion, Operator, SuperOperator, SystemModel};
use crate::{Error, Result};

/// Minimum eigenvalue below which the nonlinear integration aborts.
pub const POSITIVITY_TOL: f64 = -1e-3;
const TRACE_RANGE: (f64, f64) = (1e-12, 1e12);

/// SplitMix64 finalizer; derives independent seeds from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent Wiener increments of variance `dt`, one ChaCha stream per
/// detector. The same seed reproduces the same increments bit for bit.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    streams: Vec<ChaCha8Rng>,
    sqrt_dt: f64,
}

impl NoiseStream {
    pub fn new(seed: u64, detectors: usize, dt: f64) -> Self {
        let streams = (0..detectors)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                rng
            })
            .collect();
        Self {
            seed,
            streams,
            sqrt_dt: dt.sqrt(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fill(&mut self, dw: &mut [f64]) {
        for (x, rng) in dw.iter_mut().zip(self.streams.iter_mut()) {
            let g: f64 = StandardNormal.sample(rng);
            *x = g * self.sqrt_dt;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub dt: f64,
    pub duration: f64,
    pub seed: u64,
    /// Record the state every this many steps (plus the initial state).
    pub snapshot_stride: Option<usize>,
    /// Abort when the minimum eigenvalue of ρ drops below this.
    pub positivity_tol: f64,
    pub scheme: Scheme,
}

impl SimulationConfig {
    pub fn new(dt: f64, duration: f64, seed: u64) -> Self {
        Self {
            dt,
            duration,
            seed,
            snapshot_stride: None,
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

    pub fn with_snapshots(mut self, stride: usize) -> Self {
        self.snapshot_stride = Some(stride);
        self
    }

    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidInput(format!("time step {} must be positive", self.dt)));
        }
        if !(self.duration >= self.dt) {
            return Err(Error::InvalidInput(format!(
                "duration {} shorter than one step {}",
                self.duration, self.dt
            )));
        }
        if self.snapshot_stride == Some(0) {
            return Err(Error::InvalidInput("snapshot stride must be positive".into()));
        }
        Ok((self.duration / self.dt).round() as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub rho: Operator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearMode {
    /// `dr` comes from a nonlinear trajectory integrated alongside with the
    /// same noise; `ρ̃/tr ρ̃` then tracks `ρ` path by path.
    PhysicalNoise,
    /// `dr_k = dξ_k/(2√η_k)` with `ξ_k` a raw Wiener process; `tr ρ̃(T)` is the
    /// importance weight that turns white-noise averages into signal averages.
    WienerDriven,
}

/// Time discretization shared by the nonlinear and linear integrators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Plain Euler–Maruyama. Near-pure states pick up negative eigenvalues of
    /// order `dt − dW²` per step, and long runs can leave the positive cone
    /// for good; `tr ρ̃` is an exact discrete martingale.
    #[default]
    Euler,
    /// `ρ ← M ρ M† + Σ_j w_j a_j ρ a_j† dt` with
    /// `M = I + (−iH − ½Σ a†a) dt + Σ_k 2η_k c_k dr_k` (renormalized in the
    /// nonlinear case): the same first-order expansion, positive by
    /// construction.
    Kraus,
}

/// One simulated record.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
    /// `increments[k][i]` is `dr_k` over `[i dt, (i+1) dt)`.
    pub increments: Vec<Vec<f64>>,
    /// Normalized conditional state (nonlinear and physical-noise modes).
    pub snapshots: Vec<Snapshot>,
    /// Unnormalized linear state (linear modes).
    pub linear_snapshots: Vec<Snapshot>,
    /// `tr ρ̃` after each step (linear modes).
    pub trace_weights: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn final_weight(&self) -> Option<f64> {
        self.trace_weights.as_ref().and_then(|w| w.last().copied())
    }
}

fn hermitize_in_place(v: &mut CVector, d: usize) {
    for j in 0..d {
        v[j * d + j].im = 0.0;
        for i in 0..j {
            let a = v[j * d + i];
            let b = v[i * d + j];
            let avg = 0.5 * (a + b.conj());
            v[j * d + i] = avg;
            v[i * d + j] = avg.conj();
        }
    }
}

/// `y ← α A x` (or `y += α A x`) for a small column-major `A`.
#[inline]
fn matvec(y: &mut CVector, a: &SuperOperator, x: &CVector, alpha: C64, accumulate: bool) {
    let n = x.len();
    let ys = y.as_mut_slice();
    if !accumulate {
        ys.fill(ZERO);
    }
    for (col, &xj) in a.as_slice().chunks_exact(n).zip(x.iter()) {
        let s = alpha * xj;
        for (yi, &aij) in ys.iter_mut().zip(col) {
            *yi += aij * s;
        }
    }
}

fn min_eigenvalue_of_vec(v: &CVector, d: usize) -> Result<f64> {
    if d == 2 {
        // Hermitian 2x2 in column-stacked order (ρ00, ρ10, ρ01, ρ11)
        let (p, q) = (v[0].re, v[3].re);
        let half = 0.5 * (p - q);
        return Ok(0.5 * (p + q) - (half * half + v[1].norm_sqr()).sqrt());
    }
    Ok(min_eigenvalue_hermitian(&unvec(v, d)?))
}

/// Shared superoperators of the integrators.
#[derive(Debug, Clone)]
struct Operators {
    d: usize,
    generator: SuperOperator,
    insertions: Vec<SuperOperator>,
    eta: Vec<f64>,
}

impl Operators {
    fn new(model: &SystemModel) -> Self {
        Self {
            d: model.dim(),
            generator: averaged_generator(model),
            insertions: model
                .channels()
                .iter()
                .map(|c| insertion(&c.op).expect("validated square"))
                .collect(),
            eta: model.channels().iter().map(|c| c.eta).collect(),
        }
    }
}

/// Nonlinear SME integrator with preallocated buffers.
#[derive(Debug, Clone)]
pub struct SmeStepper {
    ops: Operators,
    kraus: Option<KrausParts>,
    state: CVector,
    drift: CVector,
    inserted: Vec<CVector>,
    step: usize,
    positivity_tol: f64,
    min_eigenvalue: f64,
}

impl SmeStepper {
    pub fn new(model: &SystemModel, rho0: &Operator) -> Result<Self> {
        validate_density(rho0, model.dim())?;
        let ops = Operators::new(model);
        let n = ops.d * ops.d;
        let k = ops.insertions.len();
        Ok(Self {
            ops,
            kraus: None,
            state: vec(rho0)?,
            drift: CVector::zeros(n),
            inserted: vec![CVector::zeros(n); k],
            step: 0,
            positivity_tol: POSITIVITY_TOL,
            min_eigenvalue: min_eigenvalue_hermitian(rho0),
        })
    }

    pub fn with_positivity_tol(mut self, tol: f64) -> Self {
        self.positivity_tol = tol;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme, model: &SystemModel) -> Self {
        self.kraus = match scheme {
            Scheme::Euler => None,
            Scheme::Kraus => Some(KrausParts::new(model)),
        };
        self
    }

    /// Smallest eigenvalue of the state after the latest step.
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn state(&self) -> Operator {
        unvec(&self.state, self.ops.d).expect("square state")
    }

    pub fn state_vector(&self) -> &CVector {
        &self.state
    }

    /// Advances by `dt` with Wiener increments `dw`; writes the signal
    /// increments (computed from the pre-step state) into `dr`.
    pub fn step(&mut self, dt: f64, dw: &[f64], dr: &mut [f64]) -> Result<()> {
        let ops = &self.ops;
        if let Some(kraus) = self.kraus.as_mut() {
            for (k, c) in kraus.channels.iter().enumerate() {
                let expectation = insertion_expectation(c, &self.state, ops.d);
                dr[k] = 0.5 * expectation * dt + dw[k] / (2.0 * ops.eta[k].sqrt());
            }
            kraus.update(&mut self.state, &ops.eta, dt, dr);
        } else {
            matvec(&mut self.drift, &ops.generator, &self.state, C64::new(dt, 0.0), false);
            for k in 0..ops.insertions.len() {
                let buf = &mut self.inserted[k];
                matvec(buf, &ops.insertions[k], &self.state, ONE, false);
                let expectation = vec_trace(buf, ops.d).re;
                let sqrt_eta = ops.eta[k].sqrt();
                dr[k] = 0.5 * expectation * dt + dw[k] / (2.0 * sqrt_eta);
                let w = sqrt_eta * dw[k];
                // √η (c⁺ρ − tr[c⁺ρ] ρ) dW
                for ((u, &b), &r) in self.drift.iter_mut().zip(buf.iter()).zip(self.state.iter()) {
                    *u += (b - r * expectation) * w;
                }
            }
            self.state += &self.drift;
        }
        hermitize_in_place(&mut self.state, ops.d);
        let tr = vec_trace(&self.state, ops.d).re;
        self.state.unscale_mut(tr);
        self.step += 1;
        let min_eig = min_eigenvalue_of_vec(&self.state, ops.d)?;
        self.min_eigenvalue = min_eig;
        if !(min_eig >= self.positivity_tol) {
            return Err(Error::Positivity {
                step: self.step,
                min_eigenvalue: min_eig,
            });
        }
        Ok(())
    }
}

/// Operators of the positive step `ρ ← MρM† + Σ w a ρ a† dt` with
/// `M = A + Σ_k x_k c_k`, `A = I + (−iH − ½ Σ a†a) dt` and `x_k = 2η_k dr_k`.
#[derive(Debug, Clone)]
struct KrausParts {
    /// `−iH − ½ Σ a†a` over decay and measured channels.
    drift: Operator,
    /// `(a, w)` with `w = 1` for decay and `1 − η` for measured channels.
    jumps: Vec<(Operator, f64)>,
    channels: Vec<Operator>,
    dt: f64,
    a: Operator,
    /// `Σ w conj(a) ⊗ a dt`
    jump_super: SuperOperator,
    m: Vec<C64>,
    tmp: Vec<C64>,
    buf: CVector,
}

impl KrausParts {
    fn new(model: &SystemModel) -> Self {
        let d = model.dim();
        let mut drift = model.hamiltonian() * C64::new(0.0, -1.0);
        let mut jumps = Vec::new();
        for a in model.decay() {
            drift -= (a.adjoint() * a).scale(0.5);
            jumps.push((a.clone(), 1.0));
        }
        for ch in model.channels() {
            drift -= (ch.op.adjoint() * &ch.op).scale(0.5);
            if ch.eta < 1.0 {
                jumps.push((ch.op.clone(), 1.0 - ch.eta));
            }
        }
        Self {
            drift,
            jumps,
            channels: model.channels().iter().map(|c| c.op.clone()).collect(),
            dt: f64::NAN,
            a: Operator::identity(d, d),
            jump_super: SuperOperator::zeros(d * d, d * d),
            m: vec![ZERO; d * d],
            tmp: vec![ZERO; d * d],
            buf: CVector::zeros(d * d),
        }
    }

    fn prepare(&mut self, dt: f64) {
        if self.dt == dt {
            return;
        }
        let d = self.drift.nrows();
        self.a = Operator::identity(d, d) + self.drift.scale(dt);
        // vec(XρY†) = (conj(Y) ⊗ X) vec(ρ)
        self.jump_super = SuperOperator::zeros(d * d, d * d);
        for (j, w) in &self.jumps {
            self.jump_super += kron(&j.conjugate(), j).scale(w * dt);
        }
        self.dt = dt;
    }

    fn update(&mut self, state: &mut CVector, eta: &[f64], dt: f64, dr: &[f64]) {
        self.prepare(dt);
        let d = self.a.nrows();
        self.m.copy_from_slice(self.a.as_slice());
        for (k, c) in self.channels.iter().enumerate() {
            let x = 2.0 * eta[k] * dr[k];
            for (m, &ck) in self.m.iter_mut().zip(c.as_slice()) {
                *m += ck * x;
            }
        }
        let (m, tmp, rho) = (&self.m, &mut self.tmp, state.as_slice());
        // tmp = M ρ
        for j in 0..d {
            for i in 0..d {
                let mut s = ZERO;
                for l in 0..d {
                    s += m[i + d * l] * rho[l + d * j];
                }
                tmp[i + d * j] = s;
            }
        }
        matvec(&mut self.buf, &self.jump_super, state, ONE, false);
        // buf += tmp M†
        let out = self.buf.as_mut_slice();
        for j in 0..d {
            for i in 0..d {
                let mut s = ZERO;
                for l in 0..d {
                    s += tmp[i + d * l] * m[j + d * l].conj();
                }
                out[i + d * j] += s;
            }
        }
        std::mem::swap(state, &mut self.buf);
    }
}

/// `Re tr[c⁺ρ] = 2 Re tr[cρ]` for column-major `c` and `ρ`.
#[inline]
fn insertion_expectation(c: &Operator, rho: &CVector, d: usize) -> f64 {
    let (c, r) = (c.as_slice(), rho.as_slice());
    let mut s = 0.0;
    for i in 0..d {
        for l in 0..d {
            let (a, b) = (c[i + d * l], r[l + d * i]);
            s += a.re * b.re - a.im * b.im;
        }
    }
    2.0 * s
}

/// Linear SME integrator for `ρ̃`.
#[derive(Debug, Clone)]
pub struct LinearStepper {
    ops: Operators,
    kraus: Option<KrausParts>,
    state: CVector,
    drift: CVector,
    step: usize,
}

impl LinearStepper {
    pub fn new(model: &SystemModel, rho0: &Operator) -> Result<Self> {
        validate_density(rho0, model.dim())?;
        let ops = Operators::new(model);
        let n = ops.d * ops.d;
        Ok(Self {
            ops,
            kraus: None,
            state: vec(rho0)?,
            drift: CVector::zeros(n),
            step: 0,
        })
    }

    pub fn with_scheme(mut self, scheme: Scheme, model: &SystemModel) -> Self {
        self.kraus = match scheme {
            Scheme::Euler => None,
            Scheme::Kraus => Some(KrausParts::new(model)),
        };
        self
    }

    pub fn state(&self) -> Operator {
        unvec(&self.state, self.ops.d).expect("square state")
    }

    pub fn trace(&self) -> f64 {
        vec_trace(&self.state, self.ops.d).re
    }

    /// `ρ̃ ← ρ̃ + 𝓛ρ̃ dt + Σ_k 2η_k c_k⁺ρ̃ dr_k`; returns the new trace.
    pub fn step(&mut self, dt: f64, dr: &[f64]) -> Result<f64> {
        let ops = &self.ops;
        if let Some(kraus) = self.kraus.as_mut() {
            kraus.update(&mut self.state, &ops.eta, dt, dr);
        } else {
            matvec(&mut self.drift, &ops.generator, &self.state, C64::new(dt, 0.0), false);
            for k in 0..ops.insertions.len() {
                let x = C64::new(2.0 * ops.eta[k] * dr[k], 0.0);
                matvec(&mut self.drift, &ops.insertions[k], &self.state, x, true);
            }
            self.state += &self.drift;
        }
        hermitize_in_place(&mut self.state, ops.d);
        self.step += 1;
        let tr = self.trace();
        if !(tr > TRACE_RANGE.0 && tr < TRACE_RANGE.1) {
            return Err(Error::TraceWeight {
                step: self.step,
                trace: tr,
            });
        }
        Ok(tr)
    }
}

/// Streams a nonlinear trajectory without storing it: `on_step(i, dr)` sees
/// the increments over `[i dt, (i+1) dt)`.
pub fn simulate_with<F>(
    model: &SystemModel,
    rho0: &Operator,
    cfg: &SimulationConfig,
    mut on_step: F,
) -> Result<SmeStepper>
where
    F: FnMut(usize, &[f64], &SmeStepper),
{
    let n_steps = cfg.n_steps()?;
    let k = model.channels().len();
    let mut stepper = SmeStepper::new(model, rho0)?
        .with_positivity_tol(cfg.positivity_tol)
        .with_scheme(cfg.scheme, model);
    let mut noise = NoiseStream::new(cfg.seed, k, cfg.dt);
    let mut dw = vec![0.0; k];
    let mut dr = vec![0.0; k];
    for i in 0..n_steps {
        noise.fill(&mut dw);
        stepper.step(cfg.dt, &dw, &mut dr)?;
        on_step(i, &dr, &stepper);
    }
    Ok(stepper)
}

/// Nonlinear SME trajectory with its signal record.
pub fn simulate(model: &SystemModel, rho0: &Operator, cfg: &SimulationConfig) -> Result<Trajectory> {
    let n_steps = cfg.n_steps()?;
    let k = model.channels().len();
    let mut increments = vec![Vec::with_capacity(n_steps); k];
    let mut snapshots = Vec::new();
    if cfg.snapshot_stride.is_some() {
        snapshots.push(Snapshot {
            step: 0,
            rho: rho0.clone(),
        });
    }
    simulate_with(model, rho0, cfg, |i, dr, stepper| {
        for (rec, &x) in increments.iter_mut().zip(dr) {
            rec.push(x);
        }
        if let Some(stride) = cfg.snapshot_stride {
            if (i + 1) % stride == 0 {
                snapshots.push(Snapshot {
                    step: i + 1,
                    rho: stepper.state(),
                });
            }
        }
    })?;
    Ok(Trajectory {
        dt: cfg.dt,
        n_steps,
        seed: cfg.seed,
        increments,
        snapshots,
        linear_snapshots: Vec::new(),
        trace_weights: None,
    })
}

/// Streams a linear-SME trajectory: `on_step(i, dr, tr ρ̃)`.
pub fn simulate_linear_with<F>(
    model: &SystemModel,
    rho0: &Operator,
    cfg: &SimulationConfig,
    mode: LinearMode,
    mut on_step: F,
) -> Result<()>
where
    F: FnMut(usize, &[f64], &LinearStepper, Option<&SmeStepper>),
{
    let n_steps = cfg.n_steps()?;
    let k = model.channels().len();
    let mut linear = LinearStepper::new(model, rho0)?.with_scheme(cfg.scheme, model);
    let mut nonlinear = match mode {
        LinearMode::PhysicalNoise => {
            Some(
                SmeStepper::new(model, rho0)?
                    .with_positivity_tol(cfg.positivity_tol)
                    .with_scheme(cfg.scheme, model),
            )
        }
        LinearMode::WienerDriven => None,
    };
    let half_inv_sqrt_eta: Vec<f64> = model
        .channels()
        .iter()
        .map(|c| 0.5 / c.eta.sqrt())
        .collect();
    let mut noise = NoiseStream::new(cfg.seed, k, cfg.dt);
    let mut dw = vec![0.0; k];
    let mut dr = vec![0.0; k];
    for i in 0..n_steps {
        noise.fill(&mut dw);
        match nonlinear.as_mut() {
            Some(sme) => sme.step(cfg.dt, &dw, &mut dr)?,
            None => {
                for ((r, w), s) in dr.iter_mut().zip(&dw).zip(&half_inv_sqrt_eta) {
                    *r = w * s;
                }
            }
        }
        linear.step(cfg.dt, &dr)?;
        on_step(i, &dr, &linear, nonlinear.as_ref());
    }
    Ok(())
}

/// Linear-SME trajectory with trace weights after every step.
pub fn simulate_linear(
    model: &SystemModel,
    rho0: &Operator,
    cfg: &SimulationConfig,
    mode: LinearMode,
) -> Result<Trajectory> {
    let n_steps = cfg.n_steps()?;
    let k = model.channels().len();
    let mut increments = vec![Vec::with_capacity(n_steps); k];
    let mut weights = Vec::with_capacity(n_steps);
    let mut snapshots = Vec::new();
    let mut linear_snapshots = Vec::new();
    if cfg.snapshot_stride.is_some() {
        linear_snapshots.push(Snapshot {
            step: 0,
            rho: rho0.clone(),
        });
        if mode == LinearMode::PhysicalNoise {
            snapshots.push(Snapshot {
                step: 0,
                rho: rho0.clone(),
            });
        }
    }
    simulate_linear_with(model, rho0, cfg, mode, |i, dr, lin, sme| {
        for (rec, &x) in increments.iter_mut().zip(dr) {
            rec.push(x);
        }
        weights.push(lin.trace());
        if let Some(stride) = cfg.snapshot_stride {
            if (i + 1) % stride == 0 {
                linear_snapshots.push(Snapshot {
                    step: i + 1,
                    rho: lin.state(),
                });
                if let Some(sme) = sme {
                    snapshots.push(Snapshot {
                        step: i + 1,
                        rho: sme.state(),
                    });
                }
            }
        }
    })?;
    Ok(Trajectory {
        dt: cfg.dt,
        n_steps,
        seed: cfg.seed,
        increments,
        snapshots,
        linear_snapshots,
        trace_weights: Some(weights),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densemath::{is_hermitian, max_abs};
    use crate::model::{pauli, MeasurementChannel};
    use crate::reference::QubitExampleParams;

    fn free_model(eta: f64) -> SystemModel {
        SystemModel::new(
            2,
            None,
            vec![],
            vec![MeasurementChannel::new("z", Operator::zeros(2, 2), eta).unwrap()],
        )
        .unwrap()
    }

    fn plus_state() -> Operator {
        Operator::from_element(2, 2, C64::new(0.5, 0.0))
    }

    #[test]
    fn seeds_are_reproducible_and_streams_independent() {
        let mut a = NoiseStream::new(42, 2, 1e-3);
        let mut b = NoiseStream::new(42, 2, 1e-3);
        let mut xa = [0.0; 2];
        let mut xb = [0.0; 2];
        let mut same_lane = 0;
        for _ in 0..1000 {
            a.fill(&mut xa);
            b.fill(&mut xb);
            assert_eq!(xa, xb);
            if xa[0] == xa[1] {
                same_lane += 1;
            }
        }
        assert_eq!(same_lane, 0);
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
    }

    #[test]
    fn free_evolution_has_pure_noise_signal() {
        let eta = 0.4;
        let model = free_model(eta);
        let cfg = SimulationConfig::new(1e-3, 100.0, 3).with_snapshots(10_000);
        let traj = simulate(&model, &plus_state(), &cfg).unwrap();
        assert_eq!(traj.n_steps, 100_000);
        for s in &traj.snapshots {
            assert!(max_abs(&(&s.rho - plus_state())) < 1e-12);
        }
        let dr = &traj.increments[0];
        let n = dr.len() as f64;
        let mean = dr.iter().sum::<f64>() / n;
        let var = dr.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = cfg.dt / (4.0 * eta);
        let se = expected * (2.0 / (n - 1.0)).sqrt();
        assert!((var - expected).abs() < 4.0 * se, "{var} vs {expected}");
    }

    #[test]
    fn same_seed_same_trajectory() {
        let model = QubitExampleParams::figure_defaults().model().unwrap();
        let rho0 = QubitExampleParams::figure_defaults().initial_state();
        let cfg = SimulationConfig::new(1e-3, 2.0, 99)
            .with_snapshots(100)
            .with_positivity_tol(f64::NEG_INFINITY);
        let a = simulate(&model, &rho0, &cfg).unwrap();
        let b = simulate(&model, &rho0, &cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate(&model, &rho0, &SimulationConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.increments, c.increments);
    }

    #[test]
    fn snapshots_stay_physical() {
        let p = QubitExampleParams::figure_defaults();
        let cfg = SimulationConfig::new(1e-3, 20.0, 5)
            .with_snapshots(50)
            .with_positivity_tol(f64::NEG_INFINITY);
        let traj = simulate(&p.model().unwrap(), &p.initial_state(), &cfg).unwrap();
        assert_eq!(traj.snapshots.len(), 20_000 / 50 + 1);
        for s in &traj.snapshots {
            assert!((s.rho.trace().re - 1.0).abs() < 1e-9);
            assert!(is_hermitian(&s.rho, 1e-12));
        }
    }

    #[test]
    fn near_pure_states_trip_the_default_positivity_check() {
        // Euler leaves an O(dt − dW²) eigenvalue next to a pure state
        let p = QubitExampleParams::figure_defaults();
        let cfg = SimulationConfig::new(1e-3, 10.0, 5);
        let res = simulate(&p.model().unwrap(), &p.initial_state(), &cfg);
        assert!(matches!(res, Err(Error::Positivity { .. })), "{res:?}");
    }

    #[test]
    fn weak_measurement_of_a_mixed_state_stays_positive() {
        let p = QubitExampleParams {
            eta_x: 0.2,
            eta_minus: 0.2,
            ..QubitExampleParams::figure_defaults()
        };
        let model = p.model().unwrap();
        let rho0 = Operator::identity(2, 2).scale(0.5);
        let cfg = SimulationConfig::new(1e-3, 5.0, 2).with_snapshots(10);
        let traj = simulate(&model, &rho0, &cfg).unwrap();
        for s in &traj.snapshots {
            assert!(min_eigenvalue_hermitian(&s.rho) > POSITIVITY_TOL);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = free_model(1.0);
        assert!(simulate(&model, &Operator::identity(2, 2), &SimulationConfig::new(1e-3, 1.0, 0)).is_err());
        assert!(simulate(&model, &plus_state(), &SimulationConfig::new(0.0, 1.0, 0)).is_err());
        assert!(simulate(&model, &plus_state(), &SimulationConfig::new(0.1, 0.01, 0)).is_err());
    }

    #[test]
    fn coarse_steps_trigger_positivity_abort() {
        // a strong measurement with a huge step drives ρ far outside the cone
        let model = SystemModel::new(
            2,
            None,
            vec![],
            vec![MeasurementChannel::new("x", pauli::sigma_x().scale(30.0), 1.0).unwrap()],
        )
        .unwrap();
        let rho0 = (Operator::identity(2, 2) + pauli::sigma_z().scale(0.5)).scale(0.5);
        let res = simulate(&model, &rho0, &SimulationConfig::new(0.5, 50.0, 1));
        assert!(matches!(res, Err(Error::Positivity { .. })), "{res:?}");
    }

    #[test]
    fn linear_state_preserves_trace_without_measurement() {
        let model = free_model(0.7);
        let cfg = SimulationConfig::new(1e-3, 5.0, 8);
        for mode in [LinearMode::WienerDriven, LinearMode::PhysicalNoise] {
            let traj = simulate_linear(&model, &plus_state(), &cfg, mode).unwrap();
            let w = traj.trace_weights.unwrap();
            assert!(w.iter().all(|x| (x - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn linear_trace_out_of_range_aborts() {
        let model = SystemModel::new(
            2,
            None,
            vec![],
            vec![MeasurementChannel::new("x", pauli::sigma_x().scale(40.0), 1.0).unwrap()],
        )
        .unwrap();
        let res = simulate_linear(
            &model,
            &plus_state(),
            &SimulationConfig::new(1e-2, 200.0, 2),
            LinearMode::WienerDriven,
        );
        assert!(matches!(res, Err(Error::TraceWeight { .. })), "{res:?}");
    }
}
