//! Closed-form results for the two-detector qubit example: a qubit with no
//! Hamiltonian, monitored through `c_x = √γx σx` and `c_- = √γ₋ σ₋`.
//!
//! `z0` is measured with [`example_sigma_z`], which is `+1` on the state that
//! `σ₋ = |1><0|` relaxes into. With that convention the stationary value of
//! `z` is `+γ₋/(γ₋ + 2γx)`.

use crate::densemath::{ONE, ZERO};
use crate::estimators::ErgodicConfig;
use crate::exact::{CorrelatorSpec, Engine, InitialState};
use crate::trajectories::Scheme;
use crate::filters::TestFunction;
use crate::model::{pauli, MeasurementChannel, Operator, SystemModel};
use crate::{Error, Result};

pub const DETECTOR_X: usize = 0;
pub const DETECTOR_MINUS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitExampleParams {
    pub gamma_x: f64,
    pub gamma_minus: f64,
    pub eta_x: f64,
    pub eta_minus: f64,
    pub z0: f64,
}

impl QubitExampleParams {
    pub fn new(gamma_x: f64, gamma_minus: f64, eta_x: f64, eta_minus: f64, z0: f64) -> Result<Self> {
        if !(gamma_x > 0.0 && gamma_minus > 0.0) {
            return Err(Error::InvalidInput("qubit example rates must be positive".into()));
        }
        for eta in [eta_x, eta_minus] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::InvalidInput(format!("efficiency {eta} outside (0, 1]")));
            }
        }
        if !(-1.0..=1.0).contains(&z0) {
            return Err(Error::InvalidInput(format!("z0 = {z0} outside [-1, 1]")));
        }
        Ok(Self {
            gamma_x,
            gamma_minus,
            eta_x,
            eta_minus,
            z0,
        })
    }

    /// `γ₋ = 1`, `γx = 0.5`, `η = 1`, started in the state σ₋ relaxes into.
    pub fn figure_defaults() -> Self {
        Self {
            gamma_x: 0.5,
            gamma_minus: 1.0,
            eta_x: 1.0,
            eta_minus: 1.0,
            z0: 1.0,
        }
    }

    pub fn model(&self) -> Result<SystemModel> {
        SystemModel::new(
            2,
            None,
            vec![],
            vec![
                MeasurementChannel::new("x", pauli::sigma_x().scale(self.gamma_x.sqrt()), self.eta_x)?,
                MeasurementChannel::new(
                    "minus",
                    pauli::sigma_minus().scale(self.gamma_minus.sqrt()),
                    self.eta_minus,
                )?,
            ],
        )
    }

    /// `(1 + z0 σz)/2` with [`example_sigma_z`] and no transverse polarization.
    pub fn initial_state(&self) -> Operator {
        (Operator::identity(2, 2) + example_sigma_z().scale(self.z0)).scale(0.5)
    }

    fn relaxation_rate(&self) -> f64 {
        self.gamma_minus + 2.0 * self.gamma_x
    }

    fn prefactor(&self) -> f64 {
        0.5 * (self.gamma_minus * self.gamma_x).sqrt()
    }
}

/// `diag(-1, +1)`: `+1` on the image of `σ₋`.
pub fn example_sigma_z() -> Operator {
    Operator::from_row_slice(2, 2, &[-ONE, ZERO, ZERO, ONE])
}

/// `K_{x,-}(t1, t2) = E[I_x(t1) I_-(t2)]` in closed form.
///
/// For `t2 > t1` this is `(√(γ₋γx)/2) e^{-γ₋(t2-t1)/2}`. For `t1 > t2` the same
/// prefactor multiplies `2γx/Γ − (z0 − γ₋/Γ) e^{−Γ t2}` with `Γ = γ₋ + 2γx`: the
/// bracket is `1 − z` evaluated at the earlier time `t2`, where the `σ₋`
/// insertion acts.
pub fn kxminus_closed(p: &QubitExampleParams, t1: f64, t2: f64) -> Result<f64> {
    if !(t1 >= 0.0 && t2 >= 0.0) {
        return Err(Error::InvalidInput("time arguments must be non-negative".into()));
    }
    if t1 == t2 {
        return Err(Error::InvalidInput(format!(
            "discontinuity point: K_x- is not defined at t1 = t2 = {t1}"
        )));
    }
    let gamma = p.relaxation_rate();
    let envelope = p.prefactor() * (-0.5 * p.gamma_minus * (t2 - t1).abs()).exp();
    if t2 > t1 {
        Ok(envelope)
    } else {
        let bracket = 2.0 * p.gamma_x / gamma
            - (p.z0 - p.gamma_minus / gamma) * (-gamma * t2).exp();
        Ok(envelope * bracket)
    }
}

/// `∫ (λ/2) e^{−λ|s−τ|} g(s) ds` for `g(s) = left e^{κs}` (s < 0) and
/// `g(s) = right e^{−κs}` (s > 0).
fn laplace_smoothed(tau: f64, lambda: f64, kappa: f64, left: f64, right: f64) -> f64 {
    if tau < 0.0 {
        return laplace_smoothed(-tau, lambda, kappa, right, left);
    }
    let half = 0.5 * lambda;
    // (e^{−κτ} − e^{−λτ})/(λ − κ), stable as λ → κ
    let gap = lambda - kappa;
    let between = if (gap * tau).abs() < 1e-8 {
        tau * (-kappa * tau).exp()
    } else {
        (-kappa * tau).exp() * -(-gap * tau).exp_m1() / gap
    };
    let from_left = left * half * (-lambda * tau).exp() / (lambda + kappa);
    let from_right = right * half * (between + (-kappa * tau).exp() / (lambda + kappa));
    from_left + from_right
}

/// `K_{x,-}(f^τ, f^0)` in the stationary state for exponential filters of
/// bandwidth `lambda`.
///
/// The two filters combine into a Laplace kernel `(λ/2)e^{−λ|w|}` over the
/// time difference, which is integrated against the closed form in closed
/// form. The stationary `z` comes from the model's null space.
pub fn kxminus_filtered(p: &QubitExampleParams, tau: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput("bandwidth must be positive".into()));
    }
    let z_ss = stationary_z(p)?;
    let gamma = p.relaxation_rate();
    // closed-form bracket with z(t) ≡ z_ss
    let bracket = 2.0 * p.gamma_x / gamma - (z_ss - p.gamma_minus / gamma);
    let a = p.prefactor();
    Ok(laplace_smoothed(tau, lambda, 0.5 * p.gamma_minus, a, a * bracket))
}

/// `tr[σz ρ_ss]` with [`example_sigma_z`].
pub fn stationary_z(p: &QubitExampleParams) -> Result<f64> {
    let rho = crate::model::stationary_state(&p.model()?)?;
    Ok((example_sigma_z() * rho).trace().re)
}

/// Equal-point part of `K_{x,x}(f^τ, f^0)`: `λ e^{−λ|τ|} / (8 ηx)`.
pub fn kxx_equal_point(p: &QubitExampleParams, tau: f64, lambda: f64) -> f64 {
    lambda * (-lambda * tau.abs()).exp() / (8.0 * p.eta_x)
}

/// `K_{x,x}(f^τ, f^0)` in the stationary state, evaluated with the exact engine
/// (smoothed part plus the equal-point contraction).
pub fn kxx_filtered(engine: &Engine, tau: f64, lambda: f64) -> Result<f64> {
    engine.full_correlator(&filtered_pair(DETECTOR_X, DETECTOR_X, tau, lambda)?)
}

/// Stationary spec for `K_{ab}(f^τ, f^0)` with exponential filters.
pub fn filtered_pair(a: usize, b: usize, tau: f64, lambda: f64) -> Result<CorrelatorSpec> {
    Ok(CorrelatorSpec::filters(
        InitialState::Stationary,
        vec![
            (a, TestFunction::exponential(tau, lambda)?),
            (b, TestFunction::exponential(0.0, lambda)?),
        ],
    ))
}


/// Seed of the figure reproduction.
pub const FIGURE_SEED: u64 = 2024;
/// Bandwidth of the figure's filters.
pub const FIGURE_BANDWIDTH: f64 = 10.0;

/// Ergodic run of the figure: both curves on 61 lags in `[−3, 3]`,
/// `dt = 1e-3`, positive (Kraus) steps, burn-in 10.
pub fn figure_ergodic_config(seed: u64, duration: f64) -> ErgodicConfig {
    ErgodicConfig {
        pairs: vec![(DETECTOR_X, DETECTOR_MINUS), (DETECTOR_X, DETECTOR_X)],
        bandwidth: FIGURE_BANDWIDTH,
        lags: ErgodicConfig::symmetric_lags(3.0, 0.1),
        record_interval: 0.1,
        duration,
        dt: 1e-3,
        seed,
        burn_in: 10.0,
        sample_stride: None,
        batches: None,
        positivity_tol: crate::trajectories::POSITIVITY_TOL,
        scheme: Scheme::Kraus,
    }
}
