use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Sweep limit of [`solve_dare`].
pub const DARE_MAX_SWEEPS: usize = 10_000;
/// Relative stopping tolerance on the sweep-to-sweep change of `P`.
pub const DARE_TOLERANCE: f64 = 1e-12;

/// Solves `P = AᵀPA - AᵀPB (R + BᵀPB)⁻¹ BᵀPA + Q` by fixed-point iteration
/// from `P = Q`.
///
/// Iterates until `max|ΔP| < 1e-12 · max(1, max|P|)`.
pub fn solve_dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let nx = a.nrows();
    let nu = b.ncols();
    if a.shape() != (nx, nx) || b.nrows() != nx || q.shape() != (nx, nx) || r.shape() != (nu, nu) {
        return Err(Error::InvalidDims("Riccati data shapes are inconsistent".into()));
    }
    let mut p = q.clone();
    for _ in 0..DARE_MAX_SWEEPS {
        let next = riccati_map(a, b, q, r, &p)?;
        let change = (&next - &p).amax();
        let scale = next.amax().max(1.0);
        p = next;
        if !change.is_finite() {
            break;
        }
        if change < DARE_TOLERANCE * scale {
            return Ok(p);
        }
    }
    Err(Error::DareDiverged { sweeps: DARE_MAX_SWEEPS })
}

fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let pa = p * a;
    let pb = p * b;
    let s = r + b.transpose() * &pb;
    let gain = s
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?
        .solve(&(b.transpose() * &pa));
    let next = a.transpose() * &pa - (a.transpose() * &pb) * gain + q;
    Ok(0.5 * (&next + next.transpose()))
}

/// `max|AᵀPA - AᵀPB (R + BᵀPB)⁻¹ BᵀPA + Q - P|`.
pub fn dare_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    match riccati_map(a, b, q, r, p) {
        Ok(next) => (next - p).amax(),
        Err(_) => f64::INFINITY,
    }
}
