//! Krylov orthonormalization: from a unit cyclic vector to an orthonormal
//! basis in which the operator is upper Hessenberg, plus the nested
//! coordinate projections onto the leading basis vectors.
//!
//! The iteration is Arnoldi with modified Gram-Schmidt and one full
//! reorthogonalization pass. Subdiagonal coefficients are the residual
//! norms, hence real and nonnegative; that choice fixes the phase freedom
//! of the basis. When the residual at step `b` falls below the breakdown
//! tolerance the starting vector is not cyclic: the first `b` basis vectors
//! already span an invariant subspace, which is recorded, and the basis is
//! completed by restarting on the coordinate direction least covered so
//! far (the continuation keeps the form unitary and Hessenberg, with an
//! exact zero subdiagonal at the stall).

use nalgebra::{Complex, ComplexField};
use serde_json::{json, Value};
use thiserror::Error;

use crate::operator::{CVector, Operator};
use crate::scalar::{sc, Scalar};

#[derive(Debug, Error)]
pub enum KrylovError {
    #[error("starting vector must be unit norm, got {norm}")]
    NonUnitVector { norm: f64 },
    #[error("dimension mismatch: operator is {dim}x{dim}, vector has length {len}")]
    DimensionMismatch { dim: usize, len: usize },
    #[error("breakdown tolerance must be positive, got {tol}")]
    NonPositiveTolerance { tol: f64 },
    #[error("projection index {k} out of range 1..={n}")]
    IndexOutOfRange { k: usize, n: usize },
}

/// Unitary basis change `Q`, Hessenberg form `H = Q* T Q`, the real
/// nonnegative subdiagonal of `H`, and the first breakdown step if the
/// starting vector failed to be cyclic.
#[derive(Clone, Debug)]
pub struct KrylovForm<S: Scalar> {
    q: Operator<S>,
    h: Operator<S>,
    subdiag: Vec<S>,
    breakdown: Option<usize>,
}

impl<S: Scalar> KrylovForm<S> {
    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    /// Columns are the orthonormal basis vectors in input coordinates.
    pub fn q(&self) -> &Operator<S> {
        &self.q
    }

    /// The operator in the Krylov basis; upper Hessenberg by construction
    /// (entries below the first subdiagonal are exact zeros).
    pub fn h(&self) -> &Operator<S> {
        &self.h
    }

    /// `h(k+1, k)` for `k = 1..dim-1` (1-based), each real and >= 0.
    pub fn subdiag(&self) -> &[S] {
        &self.subdiag
    }

    /// First step at which the Krylov residual vanished, 1-based; `None`
    /// means the starting vector is cyclic at this truncation.
    pub fn breakdown(&self) -> Option<usize> {
        self.breakdown
    }

    pub fn to_json_value(&self) -> Value {
        json!({
            "q": self.q.to_json_value(),
            "h": self.h.to_json_value(),
            "breakdown": self.breakdown,
            "subdiag": self
                .subdiag
                .iter()
                .map(|s| s.to_f64().expect("finite subdiagonal"))
                .collect::<Vec<f64>>(),
        })
    }
}

/// Orthonormal projection onto the span of the first `k` basis vectors,
/// as a matrix in the Krylov basis: `diag(1 x k, 0, ..., 0)`. Exactly
/// idempotent and self-adjoint.
pub fn projection<S: Scalar>(k: usize, n: usize) -> Result<Operator<S>, KrylovError> {
    if k == 0 || k > n {
        return Err(KrylovError::IndexOutOfRange { k, n });
    }
    Ok(Operator::from_fn(n, |i, j| {
        if i == j && i < k {
            Complex::new(S::one(), S::zero())
        } else {
            Complex::new(S::zero(), S::zero())
        }
    }))
}

/// Breakdown threshold used by the harness: `1e-12` scaled by the operator
/// norm (never below `1e-12` itself).
pub fn default_breakdown_tol<S: Scalar>(t: &Operator<S>) -> S {
    sc::<S>(1e-12) * S::one().max(t.operator_norm())
}

/// Run the Krylov orthonormalization of `t` starting from the unit vector
/// `v`.
pub fn orthonormalize<S: Scalar>(
    t: &Operator<S>,
    v: &CVector<S>,
    breakdown_tol: S,
) -> Result<KrylovForm<S>, KrylovError> {
    let n = t.dim();
    if v.len() != n {
        return Err(KrylovError::DimensionMismatch { dim: n, len: v.len() });
    }
    if breakdown_tol <= S::zero() {
        return Err(KrylovError::NonPositiveTolerance {
            tol: breakdown_tol.to_f64().unwrap_or(f64::NAN),
        });
    }
    let vnorm = v.norm();
    if (vnorm - S::one()).abs() > sc::<S>(1e-12) {
        return Err(KrylovError::NonUnitVector {
            norm: vnorm.to_f64().unwrap_or(f64::NAN),
        });
    }

    let mut basis: Vec<CVector<S>> = Vec::with_capacity(n);
    basis.push(v.clone());
    let mut h = Operator::<S>::zeros(n).into_matrix();
    let mut subdiag = vec![S::zero(); n.saturating_sub(1)];
    let mut breakdown = None;

    for j in 0..n {
        let mut w = t.matrix() * &basis[j];
        // Modified Gram-Schmidt, then one reorthogonalization pass; the
        // correction folds into the same coefficients.
        let mut coeffs = vec![Complex::new(S::zero(), S::zero()); j + 1];
        for _pass in 0..2 {
            for (i, e) in basis.iter().enumerate().take(j + 1) {
                let c = e.dotc(&w);
                w -= e * c;
                coeffs[i] += c;
            }
        }
        for (i, c) in coeffs.into_iter().enumerate() {
            h[(i, j)] = c;
        }
        if j + 1 == n {
            break;
        }
        let res = w.norm();
        if res < breakdown_tol {
            if breakdown.is_none() {
                breakdown = Some(j + 1);
            }
            subdiag[j] = S::zero();
            basis.push(restart_direction(&basis, n));
        } else {
            subdiag[j] = res;
            h[(j + 1, j)] = Complex::new(res, S::zero());
            basis.push(w.unscale(res));
        }
    }

    let q = Operator::from_fn(n, |i, j| basis[j][i]);
    let h = Operator::new(h).expect("hessenberg coefficients are finite");
    Ok(KrylovForm { q, h, subdiag, breakdown })
}

/// Deterministic continuation direction after a breakdown: take the
/// coordinate direction with the least mass inside the current span and
/// orthonormalize it against the basis (two passes).
fn restart_direction<S: Scalar>(basis: &[CVector<S>], n: usize) -> CVector<S> {
    let mut best_i = 0;
    let mut best_gap = -S::one();
    for i in 0..n {
        let mut mass = S::zero();
        for e in basis {
            mass += e[i].modulus_squared();
        }
        let gap = S::one() - mass;
        if gap > best_gap {
            best_gap = gap;
            best_i = i;
        }
    }
    let mut w = CVector::<S>::from_fn(n, |i, _| {
        if i == best_i {
            Complex::new(S::one(), S::zero())
        } else {
            Complex::new(S::zero(), S::zero())
        }
    });
    for _pass in 0..2 {
        for e in basis {
            let c = e.dotc(&w);
            w -= e * c;
        }
    }
    let norm = w.norm();
    w.unscale(norm)
}

/// True when the orthonormalization of `(t, v)` runs to full dimension
/// without a breakdown.
pub fn is_cyclic<S: Scalar>(
    t: &Operator<S>,
    v: &CVector<S>,
    breakdown_tol: S,
) -> Result<bool, KrylovError> {
    Ok(orthonormalize(t, v, breakdown_tol)?.breakdown().is_none())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::CMatrix;
    use approx::assert_relative_eq;
    use nalgebra::Complex;

    type C = Complex<f64>;
    type Op = Operator<f64>;

    fn e1(n: usize) -> CVector<f64> {
        CVector::from_fn(n, |i, _| if i == 0 { C::new(1.0, 0.0) } else { C::new(0.0, 0.0) })
    }

    fn shift(n: usize) -> Op {
        Op::from_fn(n, |i, j| if i == j + 1 { C::new(1.0, 0.0) } else { C::new(0.0, 0.0) })
    }

    fn max_below_subdiag(h: &Op) -> f64 {
        let n = h.dim();
        let mut m: f64 = 0.0;
        for j in 0..n {
            for i in (j + 2)..n {
                m = m.max(h.entry(i, j).modulus());
            }
        }
        m
    }

    fn unitarity_defect(q: &Op) -> f64 {
        let n = q.dim();
        let gram = q.matrix().adjoint() * q.matrix();
        let id = CMatrix::<f64>::identity(n, n);
        Op::new(gram - id).unwrap().operator_norm()
    }

    fn form_defect(t: &Op, kf: &KrylovForm<f64>) -> f64 {
        let recon = kf.q().matrix().adjoint() * t.matrix() * kf.q().matrix();
        let mut m: f64 = 0.0;
        for j in 0..t.dim() {
            for i in 0..t.dim() {
                m = m.max((recon[(i, j)] - kf.h().entry(i, j)).modulus());
            }
        }
        m
    }

    #[test]
    fn shift_is_its_own_krylov_form() {
        let n = 8;
        let t = shift(n);
        let kf = orthonormalize(&t, &e1(n), 1e-12).unwrap();
        assert!(kf.breakdown().is_none());
        assert_eq!(kf.q(), &Op::identity(n));
        assert_eq!(kf.h(), &t);
        assert!(kf.subdiag().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn identity_breaks_down_at_step_one() {
        let n = 4;
        let t = Op::identity(n);
        let kf = orthonormalize(&t, &e1(n), 1e-12).unwrap();
        assert_eq!(kf.breakdown(), Some(1));
        // Continuation still yields a unitary basis and an exact form.
        assert!(unitarity_defect(kf.q()) <= 1e-12);
        assert!(form_defect(&t, &kf) <= 1e-12);
        assert!(kf.subdiag().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn hermitian_distinct_diagonal_with_ones_vector_is_cyclic() {
        let t = Op::from_real_diagonal(&[1.0, 2.0, 3.0]);
        let v = CVector::from_element(3, C::new(1.0 / 3.0f64.sqrt(), 0.0));
        let kf = orthonormalize(&t, &v, 1e-12).unwrap();
        assert!(kf.breakdown().is_none());
        assert!(unitarity_defect(kf.q()) <= 1e-12);
        assert!(form_defect(&t, &kf) <= 1e-12);
        assert!(max_below_subdiag(kf.h()) == 0.0);
        // Hermitian input makes the Hessenberg form tridiagonal.
        let h = kf.h();
        for j in 0..3 {
            for i in 0..3 {
                if i + 1 < j {
                    assert!(h.entry(i, j).modulus() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn cyclicity_verdicts() {
        assert!(is_cyclic(&shift(6), &e1(6), 1e-12).unwrap());
        assert!(!is_cyclic(&Op::identity(5), &e1(5), 1e-12).unwrap());

        // Repeated eigenvalue on a normal operator: never cyclic, breakdown
        // within two steps whatever the start vector.
        let t = Op::from_real_diagonal(&[1.0, 1.0, 2.0]);
        for seed in 0..5u64 {
            let raw = CVector::from_fn(3, |i, _| {
                let x = ((seed * 31 + i as u64 * 17 + 3) % 97) as f64 / 97.0 + 0.1;
                let y = ((seed * 53 + i as u64 * 29 + 7) % 89) as f64 / 89.0;
                C::new(x, y)
            });
            let v = raw.clone().unscale(raw.norm());
            let kf = orthonormalize(&t, &v, 1e-10).unwrap();
            let b = kf.breakdown().expect("repeated eigenvalue must break down");
            assert!(b <= 2, "breakdown step {b}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = shift(3);
        let long = CVector::from_element(4, C::new(0.5, 0.0));
        assert!(matches!(
            orthonormalize(&t, &long, 1e-12),
            Err(KrylovError::DimensionMismatch { dim: 3, len: 4 })
        ));
        let not_unit = CVector::from_element(3, C::new(1.0, 0.0));
        assert!(matches!(
            orthonormalize(&t, &not_unit, 1e-12),
            Err(KrylovError::NonUnitVector { .. })
        ));
        assert!(matches!(
            orthonormalize(&t, &e1(3), 0.0),
            Err(KrylovError::NonPositiveTolerance { .. })
        ));
    }

    #[test]
    fn projection_examples() {
        let p1 = projection::<f64>(1, 3).unwrap();
        assert_eq!(p1, Op::from_real_diagonal(&[1.0, 0.0, 0.0]));
        assert_eq!(projection::<f64>(3, 3).unwrap(), Op::identity(3));
        let p2 = projection::<f64>(2, 4).unwrap();
        let p3 = projection::<f64>(3, 4).unwrap();
        assert_eq!(&p2 * &p3, p2);
        assert_eq!(&p2 * &p2, p2);
        assert_eq!(p2.adjoint(), p2);
        assert!(projection::<f64>(0, 3).is_err());
        assert!(projection::<f64>(5, 3).is_err());
    }

    #[test]
    fn nested_projections_multiply_to_the_smaller() {
        let n = 6;
        for k in 1..=n {
            for l in 1..=n {
                let pk = projection::<f64>(k, n).unwrap();
                let pl = projection::<f64>(l, n).unwrap();
                assert_eq!(&pk * &pl, projection::<f64>(k.min(l), n).unwrap());
            }
        }
    }

    #[test]
    fn below_corner_block_is_rank_one_at_the_subdiagonal() {
        // (I - E_k) H E_k has a single nonzero entry at (k+1, k) with
        // modulus subdiag(k).
        let t = Op::from_real_diagonal(&[0.1, 0.35, 0.55, 0.8, 0.95]);
        let v = CVector::from_element(5, C::new(1.0 / 5.0f64.sqrt(), 0.0));
        let kf = orthonormalize(&t, &v, 1e-14).unwrap();
        assert!(kf.breakdown().is_none());
        let n = 5;
        for k in 1..n {
            let ek = projection::<f64>(k, n).unwrap();
            let id = Op::identity(n);
            let block = &(&(&id - &ek) * kf.h()) * &ek;
            for j in 0..n {
                for i in 0..n {
                    let want = if (i, j) == (k, k - 1) { kf.subdiag()[k - 1] } else { 0.0 };
                    assert_relative_eq!(block.entry(i, j).modulus(), want, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn breakdown_leaves_an_invariant_subspace() {
        // Block-diagonal operator with an invariant 2-dimensional block and
        // a start vector inside it.
        let t = Op::from_fn(5, |i, j| match (i, j) {
            (0, 0) => C::new(0.3, 0.0),
            (0, 1) => C::new(0.7, 0.1),
            (1, 0) => C::new(-0.2, 0.0),
            (1, 1) => C::new(0.5, 0.0),
            (2, 3) => C::new(1.0, 0.0),
            (3, 4) => C::new(0.4, 0.0),
            (4, 2) => C::new(0.9, 0.0),
            _ => C::new(0.0, 0.0),
        });
        let tol = 1e-12;
        let kf = orthonormalize(&t, &e1(5), tol).unwrap();
        let b = kf.breakdown().expect("start vector lives in a 2d invariant block");
        assert_eq!(b, 2);
        // Soundness: || (I - P_b) T P_b || stays within 10x the tolerance,
        // measured in the Krylov basis.
        let h_exact = kf.q().matrix().adjoint() * t.matrix() * kf.q().matrix();
        let pb = projection::<f64>(b, 5).unwrap();
        let id = Op::identity(5);
        let outside = &(&(&id - &pb) * &Op::new(h_exact).unwrap()) * &pb;
        assert!(outside.operator_norm() <= 10.0 * tol);
    }

    #[test]
    fn krylov_form_serializes_with_breakdown_and_subdiag() {
        let kf = orthonormalize(&shift(3), &e1(3), 1e-12).unwrap();
        let v = kf.to_json_value();
        assert_eq!(v["breakdown"], serde_json::Value::Null);
        assert_eq!(v["subdiag"], serde_json::json!([1.0, 1.0]));
        assert!(v["q"]["re"].is_array());
        assert!(v["h"]["n"].as_u64() == Some(3));
    }
}
