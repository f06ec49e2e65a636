//! Test functions modelling the amplifier transfer kernel, their overlap
//! integrals, and their discrete application to recorded signal increments.

use serde::{Deserialize, Serialize};

use crate::densemath::{integrate, QuadOptions, C64};
use crate::{Error, Result};

/// Support length of the exponential kernel in units of `1/λ`; the neglected
/// tail carries `e^{-28} < 1e-12` of the mass.
pub const EXP_SUPPORT_WIDTHS: f64 = 28.0;

/// A smoothing kernel `f` turning a record `r` into `I(f) = ∫ f dr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    /// First-order low-pass read out at `center`:
    /// `f(u) = θ(center − u) λ exp(−λ (center − u))`.
    Exponential { center: f64, bandwidth: f64 },
    /// `height` on `[start, end]`, zero elsewhere.
    Box { start: f64, end: f64, height: f64 },
    /// Piecewise-linear interpolation of `values` on the increasing `grid`;
    /// zero outside the grid.
    Tabulated { grid: Vec<f64>, values: Vec<f64> },
}

impl TestFunction {
    pub fn exponential(center: f64, bandwidth: f64) -> Result<Self> {
        let f = TestFunction::Exponential { center, bandwidth };
        f.validate()?;
        Ok(f)
    }

    pub fn boxcar(start: f64, end: f64, height: f64) -> Result<Self> {
        let f = TestFunction::Box { start, end, height };
        f.validate()?;
        Ok(f)
    }

    /// Box of unit mass centred on `center`.
    pub fn unit_box(center: f64, width: f64) -> Result<Self> {
        Self::boxcar(center - 0.5 * width, center + 0.5 * width, 1.0 / width)
    }

    pub fn tabulated(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let f = TestFunction::Tabulated { grid, values };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TestFunction::Exponential { center, bandwidth } => {
                if !center.is_finite() || !(bandwidth.is_finite() && *bandwidth > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "exponential filter needs finite center and positive bandwidth, got ({center}, {bandwidth})"
                    )));
                }
            }
            TestFunction::Box { start, end, height } => {
                if !(start.is_finite() && end.is_finite() && height.is_finite()) || start >= end {
                    return Err(Error::InvalidInput(format!(
                        "box filter needs finite start < end, got [{start}, {end}]"
                    )));
                }
            }
            TestFunction::Tabulated { grid, values } => {
                if grid.len() < 2 || grid.len() != values.len() {
                    return Err(Error::InvalidInput(
                        "tabulated filter needs at least two points and matching lengths".into(),
                    ));
                }
                if grid.windows(2).any(|w| !(w[0] < w[1]))
                    || grid.iter().chain(values.iter()).any(|x| !x.is_finite())
                {
                    return Err(Error::InvalidInput(
                        "tabulated filter grid must be finite and strictly increasing".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Value at `u`. Tabulated kernels vanish outside their grid.
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            TestFunction::Exponential { center, bandwidth } => {
                if u > *center {
                    0.0
                } else {
                    bandwidth * (-bandwidth * (center - u)).exp()
                }
            }
            TestFunction::Box { start, end, height } => {
                if u >= *start && u <= *end {
                    *height
                } else {
                    0.0
                }
            }
            TestFunction::Tabulated { grid, values } => {
                if u < grid[0] || u > grid[grid.len() - 1] {
                    return 0.0;
                }
                let k = grid.partition_point(|&g| g <= u).clamp(1, grid.len() - 1);
                let (x0, x1) = (grid[k - 1], grid[k]);
                let w = (u - x0) / (x1 - x0);
                values[k - 1] * (1.0 - w) + values[k] * w
            }
        }
    }

    /// `∫_a^b f(t) e^{α (t − origin)} dt` in closed form, restricted to the
    /// effective support. `None` for tabulated kernels.
    pub fn exp_moment(&self, alpha: C64, a: f64, b: f64, origin: f64) -> Option<C64> {
        let (lo, hi) = self.support();
        let (a, b) = (a.max(lo), b.min(hi));
        if !(a < b) {
            return Some(C64::new(0.0, 0.0));
        }
        match self {
            TestFunction::Exponential { center, bandwidth } => {
                let l = *bandwidth;
                let z = alpha + l;
                let start = (alpha * (a - origin) - l * (center - a)).exp();
                Some(start * l * exprel(z, b - a))
            }
            TestFunction::Box { height, .. } => {
                Some((alpha * (a - origin)).exp() * *height * exprel(alpha, b - a))
            }
            TestFunction::Tabulated { .. } => None,
        }
    }

    /// Effective support `[lo, hi]`.
    pub fn support(&self) -> (f64, f64) {
        match self {
            TestFunction::Exponential { center, bandwidth } => {
                (center - EXP_SUPPORT_WIDTHS / bandwidth, *center)
            }
            TestFunction::Box { start, end, .. } => (*start, *end),
            TestFunction::Tabulated { grid, .. } => (grid[0], grid[grid.len() - 1]),
        }
    }

    /// Points inside the support where the kernel is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            TestFunction::Tabulated { grid, .. } => grid.clone(),
            _ => {
                let (lo, hi) = self.support();
                vec![lo, hi]
            }
        }
    }

    /// `∫ |f|` over the effective support.
    pub fn abs_mass(&self) -> f64 {
        match self {
            TestFunction::Exponential { .. } => 1.0,
            TestFunction::Box { start, end, height } => height.abs() * (end - start),
            TestFunction::Tabulated { grid, values } => grid
                .windows(2)
                .zip(values.windows(2))
                .map(|(g, v)| {
                    let h = g[1] - g[0];
                    if v[0] * v[1] >= 0.0 {
                        0.5 * h * (v[0].abs() + v[1].abs())
                    } else {
                        0.5 * h * (v[0] * v[0] + v[1] * v[1]) / (v[0].abs() + v[1].abs())
                    }
                })
                .sum(),
        }
    }

    /// Same kernel translated by `shift`.
    pub fn shifted(&self, shift: f64) -> Self {
        match self {
            TestFunction::Exponential { center, bandwidth } => TestFunction::Exponential {
                center: center + shift,
                bandwidth: *bandwidth,
            },
            TestFunction::Box { start, end, height } => TestFunction::Box {
                start: start + shift,
                end: end + shift,
                height: *height,
            },
            TestFunction::Tabulated { grid, values } => TestFunction::Tabulated {
                grid: grid.iter().map(|g| g + shift).collect(),
                values: values.clone(),
            },
        }
    }

    pub fn describe(&self) -> String {
        match self {
            TestFunction::Exponential { center, bandwidth } => {
                format!("exp(t={center},lambda={bandwidth})")
            }
            TestFunction::Box { start, end, height } => format!("box({start},{end},h={height})"),
            TestFunction::Tabulated { grid, .. } => {
                format!("tab({}..{},n={})", grid[0], grid[grid.len() - 1], grid.len())
            }
        }
    }
}

/// `(e^{z h} − 1)/z`, finite as `z → 0`.
fn exprel(z: C64, h: f64) -> C64 {
    let w = z * h;
    if w.norm() < 1e-4 {
        h * (1.0 + w * (0.5 + w * (1.0 / 6.0 + w / 24.0)))
    } else {
        (w.exp() - 1.0) / z
    }
}

/// `∫ f g`.
///
/// Closed forms cover exponential×exponential and box×box; every other
/// combination is integrated numerically over the intersection of supports.
/// The result is symmetric in its arguments bit for bit.
pub fn overlap(f: &TestFunction, g: &TestFunction) -> Result<f64> {
    use TestFunction::*;
    // order the arguments canonically so that overlap(f, g) == overlap(g, f)
    let (f, g) = if canonical_key(f) <= canonical_key(g) {
        (f, g)
    } else {
        (g, f)
    };
    match (f, g) {
        (
            Exponential {
                center: t1,
                bandwidth: l1,
            },
            Exponential {
                center: t2,
                bandwidth: l2,
            },
        ) => {
            let m = t1.min(*t2);
            Ok(l1 * l2 / (l1 + l2) * (-(l1 * (t1 - m)) - l2 * (t2 - m)).exp())
        }
        (
            Box {
                start: a1,
                end: b1,
                height: h1,
            },
            Box {
                start: a2,
                end: b2,
                height: h2,
            },
        ) => Ok(h1 * h2 * (b1.min(*b2) - a1.max(*a2)).max(0.0)),
        _ => overlap_numeric(f, g, 1e-12),
    }
}

fn canonical_key(f: &TestFunction) -> (u8, Vec<u64>) {
    match f {
        TestFunction::Exponential { center, bandwidth } => {
            (0, vec![center.to_bits(), bandwidth.to_bits()])
        }
        TestFunction::Box { start, end, height } => {
            (1, vec![start.to_bits(), end.to_bits(), height.to_bits()])
        }
        TestFunction::Tabulated { grid, values } => (
            2,
            grid.iter().chain(values.iter()).map(|x| x.to_bits()).collect(),
        ),
    }
}

/// `∫ f g` by adaptive quadrature, split at every kink of either kernel.
pub fn overlap_numeric(f: &TestFunction, g: &TestFunction, tol: f64) -> Result<f64> {
    let (flo, fhi) = f.support();
    let (glo, ghi) = g.support();
    let lo = flo.max(glo);
    let hi = fhi.min(ghi);
    if lo >= hi {
        return Ok(0.0);
    }
    let mut cuts: Vec<f64> = f
        .breakpoints()
        .into_iter()
        .chain(g.breakpoints())
        .filter(|&x| x > lo && x < hi)
        .collect();
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let pieces = (cuts.len() - 1) as f64;
    let mut total = 0.0;
    for w in cuts.windows(2) {
        // evaluate strictly inside each piece so kernel jumps at the cut
        // points are attributed to the right side
        let est = integrate(
            |u| Ok(f.eval(u) * g.eval(u)),
            w[0],
            w[1],
            QuadOptions::with_tol(tol / pieces),
        )?;
        total += est.value;
    }
    Ok(total)
}

/// A uniformly sampled record: increment `k` covers `[start + k dt, start + (k+1) dt)`.
#[derive(Debug, Clone, Copy)]
pub struct SignalGrid<'a> {
    pub start: f64,
    pub dt: f64,
    pub increments: &'a [f64],
}

impl SignalGrid<'_> {
    pub fn end(&self) -> f64 {
        self.start + self.dt * self.increments.len() as f64
    }
}

/// `I(f) = ∫ f dr` as the left-point sum `Σ f(u_i) dr_i`.
///
/// The grid must cover the support of `f`.
pub fn apply(f: &TestFunction, grid: &SignalGrid) -> Result<f64> {
    let (lo, hi) = f.support();
    let slack = 1e-9 * grid.dt;
    if lo < grid.start - slack || hi > grid.end() + slack {
        return Err(Error::GridCoverage {
            start: grid.start,
            end: grid.end(),
            lo,
            hi,
        });
    }
    let first = (((lo - grid.start) / grid.dt).floor().max(0.0)) as usize;
    let last = ((((hi - grid.start) / grid.dt).ceil() as usize) + 1).min(grid.increments.len());
    Ok((first..last)
        .map(|i| f.eval(grid.start + i as f64 * grid.dt) * grid.increments[i])
        .sum())
}

/// One-pass form of [`apply`] for the exponential kernel: after pushing the
/// increment that starts at `u_m`, [`ExponentialSmoother::value`] equals the
/// left-point sum for `f^{u_m}`.
#[derive(Debug, Clone)]
pub struct ExponentialSmoother {
    bandwidth: f64,
    decay: f64,
    value: f64,
    primed: bool,
}

impl ExponentialSmoother {
    pub fn new(bandwidth: f64, dt: f64) -> Self {
        Self {
            bandwidth,
            decay: (-bandwidth * dt).exp(),
            value: 0.0,
            primed: false,
        }
    }

    pub fn push(&mut self, dr: f64) -> f64 {
        self.value = if self.primed {
            self.value * self.decay + self.bandwidth * dr
        } else {
            self.bandwidth * dr
        };
        self.primed = true;
        self.value
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}
