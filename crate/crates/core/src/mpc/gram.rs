//! Closed-form inverse of the lifted MPC Gram matrix
//!
//! ```text
//!   M = [ I + Y_a²   -I         -q        ]
//!       [ -I         I + Y_b²    q        ]
//!       [ -qᵀ        qᵀ          qᵀq + y_c² ]
//! ```
//!
//! Per input coordinate `j`, with `a = y_a,j²`, `b = y_b,j²` and
//! `den = a + b + ab`, the bound blocks invert through `D = 1/den`,
//! `A = a/den`, `B = b/den`; the terminal row enters through the scalar
//! `r = 1 / (Σ q_j² ab/den + y_c²)`.

use nalgebra::{DMatrix, DVector};

use super::ops;
use crate::error::{Error, Result};

/// Applies `M⁻¹` to `rhs = [r_a; r_b; r_c]` in `O(N·nu)` operations.
pub fn structured_gram_apply(
    y_a: &DVector<f64>,
    y_b: &DVector<f64>,
    y_c: f64,
    q: &DVector<f64>,
    rhs: &DVector<f64>,
) -> Result<DVector<f64>> {
    let len = q.len();
    assert!(
        y_a.len() == len && y_b.len() == len && rhs.len() == 2 * len + 1,
        "inconsistent Gram block sizes"
    );
    let mut d = DVector::zeros(len);
    let mut big_a = DVector::zeros(len);
    let mut big_b = DVector::zeros(len);
    let mut schur = y_c * y_c;
    for j in 0..len {
        let a = y_a[j] * y_a[j];
        let b = y_b[j] * y_b[j];
        let den = a + b + a * b;
        if !(den > 0.0) {
            return Err(Error::DegenerateSlacks { index: j });
        }
        d[j] = 1.0 / den;
        big_a[j] = a * d[j];
        big_b[j] = b * d[j];
        schur += q[j] * q[j] * a * b * d[j];
    }
    ops::add(13 * len + 2);
    if !(schur > 0.0) {
        return Err(Error::RankDeficientConstraints);
    }
    let r = 1.0 / schur;

    let ra = rhs.rows(0, len);
    let rb = rhs.rows(len, len);
    let rc = rhs[2 * len];
    let mut w = rc;
    for j in 0..len {
        w += q[j] * (big_b[j] * ra[j] - big_a[j] * rb[j]);
    }
    w *= r;
    let mut out = DVector::zeros(2 * len + 1);
    for j in 0..len {
        let (dj, aj, bj) = (d[j], big_a[j], big_b[j]);
        out[j] = (dj + bj) * ra[j] + dj * rb[j] + w * bj * q[j];
        out[len + j] = dj * ra[j] + (dj + aj) * rb[j] - w * aj * q[j];
    }
    out[2 * len] = w;
    ops::add(5 * len + 2 + 18 * len);
    Ok(out)
}

/// Dense assembly of `M`, used to check the structured inverse.
pub fn assemble_gram(y_a: &DVector<f64>, y_b: &DVector<f64>, y_c: f64, q: &DVector<f64>) -> DMatrix<f64> {
    let len = q.len();
    let mut m = DMatrix::zeros(2 * len + 1, 2 * len + 1);
    for j in 0..len {
        m[(j, j)] = 1.0 + y_a[j] * y_a[j];
        m[(len + j, len + j)] = 1.0 + y_b[j] * y_b[j];
        m[(j, len + j)] = -1.0;
        m[(len + j, j)] = -1.0;
        m[(j, 2 * len)] = -q[j];
        m[(2 * len, j)] = -q[j];
        m[(len + j, 2 * len)] = q[j];
        m[(2 * len, len + j)] = q[j];
    }
    m[(2 * len, 2 * len)] = q.norm_squared() + y_c * y_c;
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn decoupled_blocks_without_terminal_gradient() {
        let y_a = v(&[0.5, 2.0]);
        let y_b = v(&[1.5, 0.1]);
        let q = v(&[0.0, 0.0]);
        let rhs = v(&[1.0, -2.0, 0.5, 3.0, 4.0]);
        let x = structured_gram_apply(&y_a, &y_b, 1.0, &q, &rhs).unwrap();
        let dense = assemble_gram(&y_a, &y_b, 1.0, &q).lu().solve(&rhs).unwrap();
        assert_abs_diff_eq!(x, dense, epsilon = 1e-12);
        assert_abs_diff_eq!(x[4], 4.0, epsilon = 1e-15);
    }

    #[test]
    fn unit_slacks_give_one_third_blocks() {
        // a = b = 1: den = 3, D = A = B = 1/3, each 2×2 inverse is [[2,1],[1,2]]/3.
        let ones = v(&[1.0, 1.0, 1.0]);
        let q = v(&[0.0, 0.0, 0.0]);
        let rhs = v(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let x = structured_gram_apply(&ones, &ones, 2.0, &q, &rhs).unwrap();
        assert_abs_diff_eq!(x, v(&[2.0 / 3.0, 1.0 / 3.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 0.0, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn residual_with_random_coupling() {
        let y_a = v(&[0.3, 1.7, 0.02]);
        let y_b = v(&[2.2, 0.4, 1.1]);
        let q = v(&[0.8, -1.3, 2.5]);
        let rhs = v(&[0.1, -0.7, 1.9, 0.4, -2.0, 0.6, 1.2]);
        let x = structured_gram_apply(&y_a, &y_b, 0.35, &q, &rhs).unwrap();
        let m = assemble_gram(&y_a, &y_b, 0.35, &q);
        assert_abs_diff_eq!(&m * x, rhs, epsilon = 1e-10);
    }

    #[test]
    fn vanishing_slack_pair_is_degenerate() {
        let err = structured_gram_apply(&v(&[1.0, 0.0]), &v(&[1.0, 0.0]), 1.0, &v(&[0.0, 0.0]), &DVector::zeros(5));
        assert_eq!(err.unwrap_err(), Error::DegenerateSlacks { index: 1 });
    }
}
