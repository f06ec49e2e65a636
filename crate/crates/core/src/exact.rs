//! Exact signal correlators.
//!
//! * [`Engine::pointwise_correlator`]: `K(t_1..t_N) = 2^{-N} tr[c⁺ Φ ⋯ c⁺ Φ ρ(0)]`
//!   for time-ordered arguments.
//! * [`Engine::smoothed_correlator`]: `K°`, the pointwise correlator integrated
//!   against test functions over the time-ordered simplex, summed over orderings.
//! * [`Engine::full_correlator`]: `K°` plus the equal-point contributions, i.e.
//!   Wick pairings of same-detector test functions weighted by `1/(4η)`.

use std::collections::HashMap;
use std::sync::OnceLock;

use itertools::Itertools;

use crate::densemath::{
    integrate, min_eigenvalue_hermitian, pairings, vec, vec_trace, CVector, Pairing, QuadOptions,
    C64,
};
use crate::filters::{overlap, TestFunction};
use crate::model::{insertion, stationary_state, Operator, Propagator, SuperOperator, SystemModel};
use crate::{Error, Result};

fn permutations(n: usize) -> Vec<Vec<usize>> {
    (0..n).permutations(n).collect()
}

/// Largest order accepted by the smoothed and full correlators.
pub const MAX_SMOOTHED_ORDER: usize = 4;

const IMAG_TOL: f64 = 1e-10;

/// Where a detector is probed: at a time point or through a test function.
#[derive(Debug, Clone, PartialEq)]
pub enum Probe {
    Time(f64),
    Filter(TestFunction),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub detector: usize,
    pub probe: Probe,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Density(Operator),
    /// The unique stationary state of the averaged dynamics. Correlators are
    /// then invariant under a common time shift, and arguments may be negative.
    Stationary,
}

/// Indices `ℓ_1..ℓ_N` with their probes, plus the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatorSpec {
    pub entries: Vec<Entry>,
    pub initial: InitialState,
}

impl CorrelatorSpec {
    pub fn points(initial: InitialState, points: &[(usize, f64)]) -> Self {
        Self {
            entries: points
                .iter()
                .map(|&(detector, t)| Entry {
                    detector,
                    probe: Probe::Time(t),
                })
                .collect(),
            initial,
        }
    }

    pub fn filters(initial: InitialState, filters: Vec<(usize, TestFunction)>) -> Self {
        Self {
            entries: filters
                .into_iter()
                .map(|(detector, f)| Entry {
                    detector,
                    probe: Probe::Filter(f),
                })
                .collect(),
            initial,
        }
    }

    fn times(&self) -> Result<Vec<(usize, f64)>> {
        self.entries
            .iter()
            .map(|e| match e.probe {
                Probe::Time(t) if t.is_finite() => Ok((e.detector, t)),
                Probe::Time(t) => Err(Error::InvalidInput(format!("non-finite time {t}"))),
                Probe::Filter(_) => Err(Error::InvalidInput(
                    "mixed probes: pointwise evaluation needs time points only".into(),
                )),
            })
            .collect()
    }

    fn test_functions(&self) -> Result<Vec<(usize, TestFunction)>> {
        self.entries
            .iter()
            .map(|e| match &e.probe {
                Probe::Filter(f) => {
                    f.validate()?;
                    Ok((e.detector, f.clone()))
                }
                Probe::Time(_) => Err(Error::InvalidInput(
                    "mixed probes: smoothed evaluation needs test functions only".into(),
                )),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EngineOptions {
    /// Absolute tolerance of the `K°` quadrature.
    pub tol: f64,
    /// Panel budget of each one-dimensional quadrature in the nested scheme.
    pub max_panels: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_panels: 20_000,
        }
    }
}

/// Correlator evaluator for one model. Cheap to share across threads.
#[derive(Debug)]
pub struct Engine {
    model: SystemModel,
    propagator: Propagator,
    insertions: Vec<SuperOperator>,
    // row functionals x ↦ tr[c⁺ x], one per detector
    trace_insertions: Vec<CVector>,
    stationary: OnceLock<CVector>,
    options: EngineOptions,
}

impl Engine {
    pub fn new(model: &SystemModel) -> Self {
        Self::with_options(model, EngineOptions::default())
    }

    pub fn with_options(model: &SystemModel, options: EngineOptions) -> Self {
        Self::from_parts(model, Propagator::new(model), options)
    }

    pub(crate) fn from_parts(
        model: &SystemModel,
        propagator: Propagator,
        options: EngineOptions,
    ) -> Self {
        let insertions: Vec<SuperOperator> = model
            .channels()
            .iter()
            .map(|c| insertion(&c.op).expect("validated square"))
            .collect();
        let trace = propagator.trace_functional();
        let trace_insertions = insertions.iter().map(|s| s.tr_mul(&trace)).collect();
        Self {
            model: model.clone(),
            propagator,
            insertions,
            trace_insertions,
            stationary: OnceLock::new(),
            options,
        }
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }

    pub fn options(&self) -> EngineOptions {
        self.options
    }

    pub fn insertion(&self, detector: usize) -> Result<&SuperOperator> {
        self.model.channel(detector)?;
        Ok(&self.insertions[detector])
    }

    pub fn stationary_state(&self) -> Result<Operator> {
        let v = self.stationary_vector()?;
        crate::densemath::unvec(&v, self.model.dim())
    }

    fn stationary_vector(&self) -> Result<CVector> {
        if let Some(v) = self.stationary.get() {
            return Ok(v.clone());
        }
        let v = vec(&stationary_state(&self.model)?)?;
        let _ = self.stationary.set(v.clone());
        Ok(v)
    }

    pub(crate) fn initial_vector(&self, initial: &InitialState) -> Result<CVector> {
        match initial {
            InitialState::Stationary => self.stationary_vector(),
            InitialState::Density(rho) => {
                validate_density(rho, self.model.dim())?;
                vec(rho)
            }
        }
    }

    fn check_detectors(&self, entries: &[Entry]) -> Result<()> {
        if entries.is_empty() {
            return Err(Error::InvalidInput("correlator needs at least one entry".into()));
        }
        for e in entries {
            self.model.channel(e.detector)?;
        }
        Ok(())
    }

    /// `K_{ℓ_1..ℓ_N}(t_1..t_N)` for distinct `(ℓ, t)` pairs.
    ///
    /// Entries are evaluated in time order, so the value does not depend on
    /// their listing order. Different detectors at the same instant are
    /// averaged over their insertion orders; the same detector twice at one
    /// instant is a white-noise singularity and is rejected.
    pub fn pointwise_correlator(&self, spec: &CorrelatorSpec) -> Result<f64> {
        self.check_detectors(&spec.entries)?;
        let points = spec.times()?;
        let v0 = self.initial_vector(&spec.initial)?;
        let points = normalise_times(points, &spec.initial)?;
        let n = points.len();
        let total = ordered_trace(&self.propagator, &v0, &points, |k| &self.insertions[k])?;
        real_part(total / 2f64.powi(n as i32))
    }

    /// `K°(f_1..f_N)`, the smoothed correlator without equal-point terms.
    pub fn smoothed_correlator(&self, spec: &CorrelatorSpec) -> Result<f64> {
        self.check_detectors(&spec.entries)?;
        let filters = spec.test_functions()?;
        if filters.len() > MAX_SMOOTHED_ORDER {
            return Err(Error::OrderLimit(filters.len()));
        }
        let v0 = self.initial_vector(&spec.initial)?;
        let filters = normalise_supports(filters, &spec.initial)?;
        self.smoothed_normalised(&v0, &filters, self.options.tol)
    }

    fn smoothed_normalised(
        &self,
        v0: &CVector,
        filters: &[(usize, TestFunction)],
        tol: f64,
    ) -> Result<f64> {
        let n = filters.len();
        if n == 0 {
            return real_part(vec_trace(v0, self.model.dim()));
        }
        let orders = permutations(n);
        let per_order = tol / orders.len() as f64;
        let nested = Nested {
            engine: self,
            filters,
        };
        let mut total = 0.0;
        for order in &orders {
            total += nested.level(order, 0, 0.0, v0, per_order)?;
        }
        Ok(total)
    }

    /// `K(f_1..f_N)` including every equal-point (Wick) contribution.
    pub fn full_correlator(&self, spec: &CorrelatorSpec) -> Result<f64> {
        self.check_detectors(&spec.entries)?;
        let filters = spec.test_functions()?;
        let n = filters.len();
        if n > MAX_SMOOTHED_ORDER {
            return Err(Error::OrderLimit(n));
        }
        let v0 = self.initial_vector(&spec.initial)?;
        let filters = normalise_supports(filters, &spec.initial)?;

        // Σ over even subsets s (|s| ≥ 2) and pairings P of s of
        // Π_{(p,q)∈P} [δ_{ℓp ℓq}/(4η)] ∫ f_p f_q  ×  K°(complement of s)
        let mut contraction_weights: HashMap<u32, f64> = HashMap::new();
        for mask in 1u32..(1 << n) {
            let size = mask.count_ones() as usize;
            if size < 2 || size % 2 == 1 {
                continue;
            }
            let subset: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let mut weight = 0.0;
            for pairing in pairings(size / 2) {
                weight += equal_point_term(&self.model, &filters, &subset, &pairing)?;
            }
            if weight != 0.0 {
                contraction_weights.insert(mask, weight);
            }
        }
        // one tolerance share for K° and one per surviving complement
        let shares = 1.0 + contraction_weights.len() as f64;
        let mut total = self.smoothed_normalised(&v0, &filters, self.options.tol / shares)?;
        let mut masks: Vec<_> = contraction_weights.into_iter().collect();
        masks.sort_by_key(|&(m, _)| m);
        for (mask, weight) in masks {
            let rest: Vec<(usize, TestFunction)> = (0..n)
                .filter(|i| mask & (1 << i) == 0)
                .map(|i| filters[i].clone())
                .collect();
            let tol = self.options.tol / shares / weight.abs().max(1.0);
            total += weight * self.smoothed_normalised(&v0, &rest, tol)?;
        }
        Ok(total)
    }
}

/// Product of contractions `Π_{(p,q)} [δ_{ℓp ℓq}/(4η_ℓp)] ∫ f_p f_q` for one
/// pairing of the entries listed in `subset` (pairing indices refer to
/// positions within `subset`). Zero as soon as a pair joins two detectors.
pub fn equal_point_term(
    model: &SystemModel,
    filters: &[(usize, TestFunction)],
    subset: &[usize],
    pairing: &Pairing,
) -> Result<f64> {
    if subset.len() % 2 == 1 || pairing.pairs.len() * 2 != subset.len() {
        return Err(Error::InvalidInput(
            "equal_point_term: pairing does not match the selected entries".into(),
        ));
    }
    let pick = |p: usize| -> Result<&(usize, TestFunction)> {
        subset
            .get(p)
            .and_then(|&i| filters.get(i))
            .ok_or_else(|| Error::InvalidInput(format!("pairing index {p} out of range")))
    };
    if pairing
        .pairs
        .iter()
        .map(|&(p, q)| Ok(pick(p)?.0 != pick(q)?.0))
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .any(|b| b)
    {
        return Ok(0.0);
    }
    let mut product = 1.0;
    for &(p, q) in &pairing.pairs {
        let (det, f) = pick(p)?;
        let (_, g) = pick(q)?;
        let eta = model.channel(*det)?.eta;
        product *= overlap(f, g)? / (4.0 * eta);
    }
    Ok(product)
}

struct Nested<'a> {
    engine: &'a Engine,
    filters: &'a [(usize, TestFunction)],
}

impl Nested<'_> {
    /// `∫_{t ≥ t_prev} (f(t)/2) [rest of the ordered product]` for the entry
    /// `order[level]`, with `v` the state after all earlier insertions.
    fn level(&self, order: &[usize], level: usize, t_prev: f64, v: &CVector, tol: f64) -> Result<f64> {
        let (det, f) = &self.filters[order[level]];
        let (lo, hi) = f.support();
        let a = lo.max(t_prev);
        if a >= hi {
            return Ok(0.0);
        }
        let mut cuts: Vec<f64> = f
            .breakpoints()
            .into_iter()
            .chain(
                order[level + 1..]
                    .iter()
                    .flat_map(|&j| self.filters[j].1.breakpoints()),
            )
            .filter(|&x| x > a && x < hi)
            .collect();
        cuts.push(a);
        cuts.push(hi);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let opts = QuadOptions {
            tol: tol / (cuts.len() - 1) as f64,
            max_panels: self.engine.options.max_panels,
        };
        let propagator = &self.engine.propagator;
        let mut total = 0.0;

        if level + 1 == order.len() {
            let w = &self.engine.trace_insertions[*det];
            let modal = propagator.modal_sum(w, v);
            if let Some(m) = &modal {
                let moments: Option<C64> = m
                    .terms()
                    .map(|(c, l)| f.exp_moment(l, a, hi, t_prev).map(|x| c * x))
                    .sum();
                if let Some(z) = moments {
                    if z.im.abs() > 1e-9 * z.re.abs().max(1.0) {
                        return Err(Error::ImaginaryResidue(z.im));
                    }
                    return Ok(0.5 * z.re);
                }
            }
            let trace_at = |t: f64| -> Result<C64> {
                match &modal {
                    Some(m) => Ok(m.eval(t - t_prev)),
                    None => Ok(w.dot(&propagator.apply(t - t_prev, v)?)),
                }
            };
            for piece in cuts.windows(2) {
                total += integrate(
                    |t| {
                        let fv = f.eval(t);
                        if fv == 0.0 {
                            return Ok(0.0);
                        }
                        let z = trace_at(t)?;
                        if z.im.abs() > 1e-9 * z.re.abs().max(1.0) {
                            return Err(Error::ImaginaryResidue(z.im));
                        }
                        Ok(0.5 * fv * z.re)
                    },
                    piece[0],
                    piece[1],
                    opts,
                )?
                .value;
            }
        } else {
            let ins = &self.engine.insertions[*det];
            let inner_tol = 0.1 * tol / (0.5 * f.abs_mass()).max(1e-300);
            for piece in cuts.windows(2) {
                total += integrate(
                    |t| {
                        let fv = f.eval(t);
                        if fv == 0.0 {
                            return Ok(0.0);
                        }
                        let u = ins * propagator.apply(t - t_prev, v)?;
                        Ok(0.5 * fv * self.level(order, level + 1, t, &u, inner_tol)?)
                    },
                    piece[0],
                    piece[1],
                    opts,
                )?
                .value;
            }
        }
        Ok(total)
    }
}

/// Sorts `(detector, time)` pairs and evaluates `tr[S_N Φ ⋯ S_1 Φ_{t_1} v0]`
/// with `S_k = insert(ℓ_k)`, averaging over insertion orders for equal times.
pub(crate) fn ordered_trace<'s, F>(
    propagator: &Propagator,
    v0: &CVector,
    points: &[(usize, f64)],
    insert: F,
) -> Result<C64>
where
    F: Fn(usize) -> &'s SuperOperator,
{
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut v = v0.clone();
    let mut t_prev = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].1;
        let mut j = i + 1;
        while j < sorted.len() && sorted[j].1 == t {
            j += 1;
        }
        let group: Vec<usize> = sorted[i..j].iter().map(|p| p.0).collect();
        for (a, &da) in group.iter().enumerate() {
            if group[..a].contains(&da) {
                return Err(Error::Coincidence { detector: da, time: t });
            }
        }
        v = propagator.apply(t - t_prev, &v)?;
        v = if group.len() == 1 {
            insert(group[0]) * v
        } else {
            let orders = permutations(group.len());
            let mut acc = CVector::zeros(v.len());
            for order in &orders {
                let mut w = v.clone();
                for &k in order {
                    w = insert(group[k]) * w;
                }
                acc += w;
            }
            acc.unscale(orders.len() as f64)
        };
        t_prev = t;
        i = j;
    }
    Ok(vec_trace(&v, propagator.dim()))
}

pub(crate) fn normalise_times(
    mut points: Vec<(usize, f64)>,
    initial: &InitialState,
) -> Result<Vec<(usize, f64)>> {
    match initial {
        InitialState::Stationary => {
            let t0 = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            for p in points.iter_mut() {
                p.1 -= t0;
            }
        }
        InitialState::Density(_) => {
            if let Some(p) = points.iter().find(|p| p.1 < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "time {} precedes the initial state at t = 0",
                    p.1
                )));
            }
        }
    }
    Ok(points)
}

/// Stationary specs are shifted so the earliest support starts at 0; explicit
/// initial states require every support to start at or after 0.
pub(crate) fn normalise_supports(
    filters: Vec<(usize, TestFunction)>,
    initial: &InitialState,
) -> Result<Vec<(usize, TestFunction)>> {
    let earliest = filters
        .iter()
        .map(|(_, f)| f.support().0)
        .fold(f64::INFINITY, f64::min);
    match initial {
        InitialState::Stationary => Ok(filters
            .into_iter()
            .map(|(d, f)| (d, f.shifted(-earliest)))
            .collect()),
        InitialState::Density(_) => {
            if earliest < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "filter support starts at {earliest}, before the record origin t = 0"
                )));
            }
            Ok(filters)
        }
    }
}

pub(crate) fn validate_density(rho: &Operator, d: usize) -> Result<()> {
    if rho.nrows() != d || rho.ncols() != d {
        return Err(Error::Dimension(format!(
            "initial state is {}x{}, model dimension is {d}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    if !crate::densemath::is_hermitian(rho, 1e-9) {
        return Err(Error::InvalidInput("initial state is not Hermitian".into()));
    }
    if (rho.trace().re - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput("initial state does not have unit trace".into()));
    }
    if min_eigenvalue_hermitian(rho) < -1e-9 {
        return Err(Error::InvalidInput("initial state is not positive semidefinite".into()));
    }
    Ok(())
}

fn real_part(z: C64) -> Result<f64> {
    if z.im.abs() > IMAG_TOL * z.re.abs().max(1.0) {
        return Err(Error::ImaginaryResidue(z.im));
    }
    Ok(z.re)
}
