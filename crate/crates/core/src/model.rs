//! Physical model: monitored channels, the measurement-averaged Lindblad
//! generator, insertion superoperators and the propagator `Φ_t = exp(t 𝓛)`.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::Schur;

use crate::densemath::{
    expm, hermitian_part, identity, is_hermitian, kron, max_abs, min_eigenvalue_hermitian,
    trace_functional, unvec, vec_trace, CMatrix, CVector, C64, I, ONE, ZERO,
};
use crate::{Error, Result};

/// A `d x d` system operator.
pub type Operator = CMatrix;
/// A `d² x d²` map acting on column-stacked operators.
pub type SuperOperator = CMatrix;

const HERMITIAN_TOL: f64 = 1e-12;

/// Pauli matrices and ladder operators in the computational basis.
pub mod pauli {
    use super::*;

    pub fn sigma_x() -> Operator {
        Operator::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
    }

    pub fn sigma_y() -> Operator {
        Operator::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
    }

    pub fn sigma_z() -> Operator {
        Operator::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
    }

    /// `(σx - iσy)/2 = |1><0|`.
    pub fn sigma_minus() -> Operator {
        (sigma_x() - sigma_y() * I).scale(0.5)
    }
}

/// A monitored decay channel `c` read out with efficiency `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementChannel {
    pub label: String,
    pub op: Operator,
    pub eta: f64,
}

impl MeasurementChannel {
    pub fn new(label: impl Into<String>, op: Operator, eta: f64) -> Result<Self> {
        let label = label.into();
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "channel {label}: efficiency {eta} outside (0, 1]"
            )));
        }
        if !op.is_square() {
            return Err(Error::Dimension(format!("channel {label}: operator is not square")));
        }
        Ok(Self { label, op, eta })
    }
}

/// Hamiltonian, unmonitored decay operators and monitored channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    dim: usize,
    hamiltonian: Operator,
    decay: Vec<Operator>,
    channels: Vec<MeasurementChannel>,
}

impl SystemModel {
    pub fn new(
        dim: usize,
        hamiltonian: Option<Operator>,
        decay: Vec<Operator>,
        channels: Vec<MeasurementChannel>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("model dimension must be positive".into()));
        }
        let hamiltonian = hamiltonian.unwrap_or_else(|| Operator::zeros(dim, dim));
        let check = |what: &str, op: &Operator| {
            if op.nrows() != dim || op.ncols() != dim {
                Err(Error::Dimension(format!(
                    "{what} is {}x{}, model dimension is {dim}",
                    op.nrows(),
                    op.ncols()
                )))
            } else {
                Ok(())
            }
        };
        check("hamiltonian", &hamiltonian)?;
        if !is_hermitian(&hamiltonian, HERMITIAN_TOL) {
            return Err(Error::InvalidInput("hamiltonian is not Hermitian".into()));
        }
        for (j, l) in decay.iter().enumerate() {
            check(&format!("decay operator {j}"), l)?;
        }
        for ch in &channels {
            check(&format!("channel {}", ch.label), &ch.op)?;
            if !(ch.eta > 0.0 && ch.eta <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "channel {}: efficiency {} outside (0, 1]",
                    ch.label, ch.eta
                )));
            }
        }
        for (i, a) in channels.iter().enumerate() {
            if channels[..i].iter().any(|b| b.label == a.label) {
                return Err(Error::InvalidInput(format!("duplicate channel label {}", a.label)));
            }
        }
        Ok(Self {
            dim,
            hamiltonian,
            decay,
            channels,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.hamiltonian
    }

    pub fn decay(&self) -> &[Operator] {
        &self.decay
    }

    pub fn channels(&self) -> &[MeasurementChannel] {
        &self.channels
    }

    pub fn channel(&self, k: usize) -> Result<&MeasurementChannel> {
        self.channels.get(k).ok_or_else(|| {
            Error::InvalidInput(format!(
                "detector index {k} out of range ({} channels)",
                self.channels.len()
            ))
        })
    }

    pub fn channel_index(&self, label: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c.label == label)
            .ok_or_else(|| Error::InvalidInput(format!("unknown detector label {label:?}")))
    }

    /// Same model with channel `k` read out at efficiency `eta`.
    pub fn with_efficiency(&self, k: usize, eta: f64) -> Result<Self> {
        let mut channels = self.channels.clone();
        let ch = channels.get_mut(k).ok_or_else(|| {
            Error::InvalidInput(format!("detector index {k} out of range"))
        })?;
        ch.eta = eta;
        Self::new(self.dim, Some(self.hamiltonian.clone()), self.decay.clone(), channels)
    }

    /// Appends a monitored channel.
    pub fn with_channel(&self, channel: MeasurementChannel) -> Result<Self> {
        let mut channels = self.channels.clone();
        channels.push(channel);
        Self::new(self.dim, Some(self.hamiltonian.clone()), self.decay.clone(), channels)
    }
}

fn require_square(c: &Operator, what: &str) -> Result<usize> {
    if c.is_square() {
        Ok(c.nrows())
    } else {
        Err(Error::Dimension(format!("{what}: operator is not square")))
    }
}

/// `D[c](ρ) = cρc† − ½{c†c, ρ}` in vectorized form.
pub fn dissipator(c: &Operator) -> Result<SuperOperator> {
    let d = require_square(c, "dissipator")?;
    let id = identity(d);
    let cdc = c.adjoint() * c;
    // vec(AρB) = (Bᵀ ⊗ A) vec(ρ)
    Ok(kron(&c.conjugate(), c)
        - (kron(&id, &cdc) + kron(&cdc.transpose(), &id)).scale(0.5))
}

/// The insertion `c⁺ · ρ = cρ + ρc†` in vectorized form.
pub fn insertion(c: &Operator) -> Result<SuperOperator> {
    let d = require_square(c, "insertion")?;
    let id = identity(d);
    Ok(kron(&id, c) + kron(&c.conjugate(), &id))
}

/// `-i[H, ·]` in vectorized form.
pub fn hamiltonian_part(h: &Operator) -> Result<SuperOperator> {
    let d = require_square(h, "hamiltonian_part")?;
    let id = identity(d);
    Ok((kron(&id, h) - kron(&h.transpose(), &id)) * (-I))
}

/// Innovation term `𝓗[c](ρ) = cρ + ρc† − tr[(c+c†)ρ] ρ`.
pub fn innovation(c: &Operator, rho: &Operator) -> Result<Operator> {
    require_square(c, "innovation")?;
    if rho.shape() != c.shape() {
        return Err(Error::Dimension("innovation: c and rho differ in shape".into()));
    }
    if !is_hermitian(rho, 1e-9) || (rho.trace() - ONE).norm() > 1e-9 {
        return Err(Error::InvalidInput(
            "innovation: rho must be Hermitian with unit trace".into(),
        ));
    }
    let c_plus = c * rho + rho * c.adjoint();
    let weight = c_plus.trace();
    Ok(c_plus - rho * weight)
}

/// `𝓛 = −i[H,·] + Σ_j D[L_j] + Σ_k D[c_k]`. Efficiencies do not enter.
pub fn averaged_generator(model: &SystemModel) -> SuperOperator {
    let mut gen = hamiltonian_part(&model.hamiltonian).expect("validated square");
    for l in &model.decay {
        gen += dissipator(l).expect("validated square");
    }
    for ch in &model.channels {
        gen += dissipator(&ch.op).expect("validated square");
    }
    gen
}

/// `Φ_t = exp(t 𝓛)`.
pub fn propagator(model: &SystemModel, t: f64) -> Result<SuperOperator> {
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("propagator time {t} is negative")));
    }
    expm(&averaged_generator(model), t)
}

const NULL_TOL: f64 = 1e-9;
const GAP_TOL: f64 = 1e-6;

/// Unique stationary state of the averaged dynamics.
///
/// The null space is read off the singular values of the vectorized
/// generator; the second-smallest singular value must exceed `1e-6`.
pub fn stationary_state(model: &SystemModel) -> Result<Operator> {
    let d = model.dim;
    let gen = averaged_generator(model);
    let scale = max_abs(&gen).max(1.0);
    let svd = gen.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));

    let smallest = svd.singular_values[order[0]];
    let null_dim = order
        .iter()
        .filter(|&&i| svd.singular_values[i] <= GAP_TOL * scale)
        .count();
    if smallest > NULL_TOL * scale {
        return Err(Error::NonUniqueStationary(0));
    }
    if null_dim > 1 {
        return Err(Error::NonUniqueStationary(null_dim));
    }

    let v: CVector = v_t.row(order[0]).adjoint();
    let rho = unvec(&v, d)?;
    let tr = rho.trace();
    if tr.norm() < 1e-12 {
        return Err(Error::InvalidInput(
            "stationary null vector is traceless".into(),
        ));
    }
    let rho = hermitian_part(&rho.map(|z| z / tr));
    let rho = rho.map(|z| z / rho.trace().re);
    if min_eigenvalue_hermitian(&rho) < -1e-9 {
        return Err(Error::InvalidInput(
            "stationary null vector is not positive semidefinite".into(),
        ));
    }
    let residual = (&gen * crate::densemath::vec(&rho)?).camax();
    if residual > 1e-10 * scale {
        return Err(Error::InvalidInput(format!(
            "stationary state residual {residual:.3e} too large"
        )));
    }
    Ok(rho)
}

/// Eigen-decomposition `𝓛 = V diag(λ) V⁻¹` used to apply `Φ_t` cheaply.
#[derive(Debug, Clone)]
pub struct ModalForm {
    pub eigenvalues: CVector,
    pub vectors: CMatrix,
    pub inverse: CMatrix,
}

impl ModalForm {
    const COND_LIMIT: f64 = 1e6;

    fn new(gen: &SuperOperator) -> Option<Self> {
        let n = gen.nrows();
        if n == 0 {
            return None;
        }
        let scale = max_abs(gen).max(1e-300);
        let (q, t) = Schur::try_new(gen.clone(), f64::EPSILON, 10_000)?.unpack();

        // eigenvectors of the triangular factor by back substitution
        let mut y = CMatrix::zeros(n, n);
        for k in 0..n {
            y[(k, k)] = ONE;
            for i in (0..k).rev() {
                let s: C64 = (i + 1..=k).map(|j| t[(i, j)] * y[(j, k)]).sum();
                let gap = t[(i, i)] - t[(k, k)];
                if gap.norm() <= 1e-10 * scale {
                    if s.norm() <= 1e-10 * scale {
                        y[(i, k)] = ZERO;
                    } else {
                        return None;
                    }
                } else {
                    y[(i, k)] = -s / gap;
                }
            }
            let norm = y.column(k).norm();
            y.column_mut(k).unscale_mut(norm);
        }
        let vectors = &q * &y;
        let inverse = vectors.clone().try_inverse()?;
        let cond = max_abs(&vectors) * max_abs(&inverse) * n as f64;
        if !cond.is_finite() || cond > Self::COND_LIMIT {
            return None;
        }
        let eigenvalues = t.diagonal();
        let rebuilt = &vectors * CMatrix::from_diagonal(&eigenvalues) * &inverse;
        if max_abs(&(rebuilt - gen)) > 1e-11 * scale {
            return None;
        }
        Some(Self {
            eigenvalues,
            vectors,
            inverse,
        })
    }
}

/// `w · Φ_Δ v = Σ_j coeffs_j exp(λ_j Δ)` for a fixed functional `w` and vector `v`.
#[derive(Debug, Clone)]
pub struct ModalSum {
    coeffs: CVector,
    eigenvalues: CVector,
}

impl ModalSum {
    pub fn eval(&self, dt: f64) -> C64 {
        self.coeffs
            .iter()
            .zip(self.eigenvalues.iter())
            .map(|(c, l)| c * (l * dt).exp())
            .sum()
    }

    /// `(coefficient, eigenvalue)` pairs.
    pub fn terms(&self) -> impl Iterator<Item = (C64, C64)> + '_ {
        self.coeffs.iter().copied().zip(self.eigenvalues.iter().copied())
    }
}

const CACHE_LIMIT: usize = 4096;

/// Memoized access to `Φ_t` for one generator.
///
/// When the generator is diagonalizable with a well-conditioned eigenbasis
/// [`Propagator::apply`] uses the modal form; otherwise it falls back to
/// cached [`expm`] evaluations. The cache is safe to share across threads.
#[derive(Debug)]
pub struct Propagator {
    generator: SuperOperator,
    dim: usize,
    modal: Option<ModalForm>,
    cache: RwLock<HashMap<u64, Arc<SuperOperator>>>,
}

impl Propagator {
    pub fn new(model: &SystemModel) -> Self {
        Self::from_generator(averaged_generator(model), model.dim())
    }

    pub fn from_generator(generator: SuperOperator, dim: usize) -> Self {
        let modal = ModalForm::new(&generator);
        Self {
            generator,
            dim,
            modal,
            cache: RwLock::new(HashMap::new()),
        }
    }

    /// Same propagator without the modal shortcut; every call goes through `expm`.
    pub fn dense_only(model: &SystemModel) -> Self {
        Self {
            generator: averaged_generator(model),
            dim: model.dim(),
            modal: None,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn generator(&self) -> &SuperOperator {
        &self.generator
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modal(&self) -> Option<&ModalForm> {
        self.modal.as_ref()
    }

    /// `Φ_t` as a dense matrix.
    pub fn matrix(&self, t: f64) -> Result<Arc<SuperOperator>> {
        if !(t >= 0.0) {
            return Err(Error::InvalidInput(format!("propagator time {t} is negative")));
        }
        let key = t.to_bits();
        if let Some(m) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(m.clone());
        }
        let m = Arc::new(expm(&self.generator, t)?);
        let mut cache = self.cache.write().expect("cache lock");
        if cache.len() >= CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(key, m.clone());
        Ok(m)
    }

    /// `Φ_t v`.
    pub fn apply(&self, t: f64, v: &CVector) -> Result<CVector> {
        if !(t >= 0.0) {
            return Err(Error::InvalidInput(format!("propagator time {t} is negative")));
        }
        if t == 0.0 {
            return Ok(v.clone());
        }
        match &self.modal {
            Some(m) => {
                let mut coords = &m.inverse * v;
                for (c, l) in coords.iter_mut().zip(m.eigenvalues.iter()) {
                    *c *= (l * t).exp();
                }
                Ok(&m.vectors * coords)
            }
            None => Ok(self.matrix(t)?.as_ref() * v),
        }
    }

    /// Modal expansion of `Δ ↦ w · Φ_Δ v`, when available.
    pub fn modal_sum(&self, w: &CVector, v: &CVector) -> Option<ModalSum> {
        let m = self.modal.as_ref()?;
        let left = m.vectors.tr_mul(w); // (wᵀ V)ᵀ
        let right = &m.inverse * v;
        Some(ModalSum {
            coeffs: left.component_mul(&right),
            eigenvalues: m.eigenvalues.clone(),
        })
    }

    /// `tr[Φ_t ρ]` for a vectorized `ρ`.
    pub fn trace_after(&self, t: f64, v: &CVector) -> Result<C64> {
        Ok(vec_trace(&self.apply(t, v)?, self.dim))
    }

    pub fn trace_functional(&self) -> CVector {
        trace_functional(self.dim)
    }
}
