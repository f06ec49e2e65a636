use super::{identity, is_finite, norm1, CMatrix, C64};
use crate::{Error, Result};

// Degree-13 Padé coefficients and the 1-norm bound below which a single
// approximant is accurate to double precision (Higham, 2005).
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;
const MAX_SQUARINGS: i32 = 1000;

/// Matrix exponential `exp(t M)` by scaling and squaring with a degree-13
/// Padé approximant.
pub fn expm(m: &CMatrix, t: f64) -> Result<CMatrix> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "expm expects a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !t.is_finite() || !is_finite(m) {
        return Err(Error::InvalidInput("expm: non-finite input".into()));
    }
    let n = m.nrows();
    if t == 0.0 || n == 0 {
        return Ok(identity(n));
    }
    let a = m.scale(t);
    let norm = norm1(&a);
    if norm == 0.0 {
        return Ok(identity(n));
    }

    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    if squarings > MAX_SQUARINGS {
        return Err(Error::Overflow(format!(
            "expm: ||tM||_1 = {norm:.3e} needs {squarings} squarings"
        )));
    }
    let a = a.scale(0.5f64.powi(squarings));

    let b = |k: usize| C64::new(PADE13[k], 0.0);
    let id = identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9))
        + &a6 * b(7)
        + &a4 * b(5)
        + &a2 * b(3)
        + &id * b(1);
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8))
        + &a6 * b(6)
        + &a4 * b(4)
        + &a2 * b(2)
        + &id * b(0);

    let denom = &v - &u;
    let numer = &v + &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .ok_or_else(|| Error::Overflow("expm: singular Padé denominator".into()))?;

    for _ in 0..squarings {
        r = &r * &r;
    }
    if !is_finite(&r) {
        return Err(Error::Overflow(format!(
            "expm: result overflowed for ||tM||_1 = {norm:.3e}"
        )));
    }
    Ok(r)
}
