//! Dense complex linear algebra and numerical utilities.
//!
//! Vectorization convention: column stacking. `vec(A)` lists the columns of
//! `A` one after another, which is the native storage order of
//! [`nalgebra::DMatrix`]. With this convention
//!
//! ```text
//! vec(X * rho * Y) = kron(Y^T, X) * vec(rho)
//! ```
//!
//! and every superoperator in the crate is built on that identity.

mod expm;
mod pairings;
mod quad;

pub use expm::expm;
pub use pairings::{double_factorial_odd, pairings, Pairing};
pub use quad::{integrate, quad, QuadEstimate, QuadOptions};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Column-stacking vectorization of a square matrix.
pub fn vec(a: &CMatrix) -> Result<CVector> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "vec expects a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(CVector::from_column_slice(a.as_slice()))
}

/// Inverse of [`vec`] for a `d x d` matrix.
pub fn unvec(v: &CVector, d: usize) -> Result<CMatrix> {
    if v.len() != d * d {
        return Err(Error::Dimension(format!(
            "unvec: vector of length {} cannot be a {d}x{d} matrix",
            v.len()
        )));
    }
    Ok(CMatrix::from_column_slice(d, d, v.as_slice()))
}

/// Trace of the matrix whose column-stacked vectorization is `v`.
pub fn vec_trace(v: &CVector, d: usize) -> C64 {
    (0..d).map(|i| v[i * d + i]).sum()
}

/// Row vector `w` such that `w · vec(A) = tr(A)`.
pub fn trace_functional(d: usize) -> CVector {
    let mut w = CVector::zeros(d * d);
    for i in 0..d {
        w[i * d + i] = ONE;
    }
    w
}

pub fn identity(d: usize) -> CMatrix {
    CMatrix::identity(d, d)
}

pub fn is_finite(a: &CMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn is_hermitian(a: &CMatrix, tol: f64) -> bool {
    a.is_square() && (a - a.adjoint()).iter().all(|z| z.norm() <= tol)
}

pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).scale(0.5)
}

/// Max-abs entry norm.
pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

/// Induced 1-norm (maximum absolute column sum).
pub fn norm1(a: &CMatrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Smallest eigenvalue of a Hermitian matrix. Only the Hermitian part is used.
pub fn min_eigenvalue_hermitian(a: &CMatrix) -> f64 {
    if a.nrows() == 2 {
        let p = a[(0, 0)].re;
        let q = a[(1, 1)].re;
        let b = 0.5 * (a[(0, 1)] + a[(1, 0)].conj());
        let mean = 0.5 * (p + q);
        let half = 0.5 * (p - q);
        return mean - (half * half + b.norm_sqr()).sqrt();
    }
    SymmetricEigen::new(hermitian_part(a))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Choi matrix `Σ_ij |i><j| ⊗ S(|i><j|)` of a superoperator acting on
/// column-stacked `d x d` matrices.
pub fn choi_matrix(superop: &CMatrix, d: usize) -> Result<CMatrix> {
    if superop.nrows() != d * d || superop.ncols() != d * d {
        return Err(Error::Dimension(format!(
            "choi_matrix: superoperator is {}x{}, expected {}x{}",
            superop.nrows(),
            superop.ncols(),
            d * d,
            d * d
        )));
    }
    let mut choi = CMatrix::zeros(d * d, d * d);
    for i in 0..d {
        for j in 0..d {
            // vec(|i><j|) has a single unit entry at column-major index j*d + i.
            let image = superop.column(j * d + i);
            for a in 0..d {
                for b in 0..d {
                    choi[(i * d + a, j * d + b)] = image[b * d + a];
                }
            }
        }
    }
    Ok(choi)
}
