//! The weighted entrywise norm: entry `(k, l)` (1-based) contributes its
//! modulus scaled by `2^-(k+l)`, summed over the whole matrix.
//!
//! Weights are exact binary powers and the summation order is fixed
//! (anti-diagonals of increasing `k+l`, then increasing `k`) so results are
//! reproducible bit for bit. The total weight over all index pairs is 1,
//! which makes the norm dominated by the operator norm; the mass the
//! truncation ignores has the closed form `2^(1-N) - 4^-N` and is reported
//! with every value so audits can state how much an infinite-dimensional
//! claim could hide beyond the truncation.

use thiserror::Error;

use crate::krylov::{projection, KrylovForm};
use crate::operator::{CMatrix, Operator};
use crate::scalar::{half_pow, sc, Scalar};

#[derive(Debug, Error)]
pub enum EnormError {
    #[error("corner index {k} out of range 1..={n}")]
    IndexOutOfRange { k: usize, n: usize },
}

/// A weighted-norm evaluation together with the rigorous bound on the mass
/// ignored beyond the truncation dimension.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ENormValue<S: Scalar> {
    pub value: S,
    pub truncation_bound: S,
}

/// Weighted entrywise sum of a raw matrix, in the fixed anti-diagonal
/// order. This is the hot-path routine: no truncation bound.
pub fn enorm_value<S: Scalar>(m: &CMatrix<S>) -> S {
    let n = m.nrows();
    let mut total = S::zero();
    // d = k + l runs over anti-diagonals; k increases within each.
    for d in 2..=(2 * n) {
        let weight = half_pow::<S>(d as u32);
        let k_lo = if d > n + 1 { d - n } else { 1 };
        let k_hi = (d - 1).min(n);
        let mut diag_sum = S::zero();
        for k in k_lo..=k_hi {
            let l = d - k;
            let e = m[(k - 1, l - 1)];
            // hypot keeps the modulus exact into the subnormal range, so
            // zero norm really does force the zero matrix.
            diag_sum += e.re.hypot(e.im);
        }
        total += weight * diag_sum;
    }
    total
}

/// Weighted entrywise norm of an operator expressed in the Krylov basis,
/// with the closed-form truncation bound `||A|| * (2^(1-N) - 4^-N)`.
pub fn enorm<S: Scalar>(a: &Operator<S>) -> ENormValue<S> {
    let n = a.dim() as u32;
    let tail_mass = sc::<S>(2.0) * half_pow::<S>(n) - half_pow::<S>(2 * n);
    ENormValue {
        value: enorm_value(a.matrix()),
        truncation_bound: a.operator_norm() * tail_mass,
    }
}

/// A compression-defect evaluation. `degenerate` marks the full-truncation
/// corner, where the defect is identically zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompressionDefect<S: Scalar> {
    pub value: S,
    pub degenerate: bool,
}

/// Weighted norm of `E_k H E_k - H E_k` for the Hessenberg form `H`.
///
/// The difference has a single nonzero entry, at position `(k+1, k)` with
/// modulus `subdiag(k)`, so the brute-force sum must equal
/// `2^-(2k+1) * subdiag(k)`; both routes are evaluated and their agreement
/// is asserted before the brute-force value is returned. `k = N` returns an
/// exact zero flagged degenerate.
pub fn compression_defect<S: Scalar>(
    kform: &KrylovForm<S>,
    k: usize,
) -> Result<CompressionDefect<S>, EnormError> {
    let n = kform.dim();
    if k == 0 || k > n {
        return Err(EnormError::IndexOutOfRange { k, n });
    }
    if k == n {
        return Ok(CompressionDefect { value: S::zero(), degenerate: true });
    }
    let ek = projection::<S>(k, n).expect("validated index");
    let h = kform.h();
    let hek = h * &ek;
    let brute = enorm_value((&(&ek * &hek) - &hek).matrix());
    let closed = half_pow::<S>(2 * k as u32 + 1) * kform.subdiag()[k - 1];
    let slack = sc::<S>(1e-13).max(S::default_epsilon() * sc::<S>(64.0));
    assert!(
        (brute - closed).abs() <= slack,
        "compression defect routes disagree at k={k}: brute {:?} vs closed {:?}",
        brute.to_f64(),
        closed.to_f64()
    );
    Ok(CompressionDefect { value: brute, degenerate: false })
}
