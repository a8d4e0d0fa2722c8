//! Window-indexed constraint families over the diagonal algebra.
//!
//! The projections onto leading basis vectors generate, at truncation `N`,
//! exactly the diagonal matrices in the Krylov basis; the positive unit
//! ball of that algebra is the box `[0, 1]^N`, which is how candidates are
//! parameterized here ([`DiagonalElement`]). A [`Window`] `(k, l)` with
//! `k <= l` names three subsets of the box:
//!
//! * the *floor* family: first entry zero and every entry across the window
//!   at least one half;
//! * the *defect* family: the weighted norm of `A E_k H E_k A - H E_k A`
//!   stays below the compression defect at every index the window covers;
//! * the *spectral* family: first entry zero and one half sits in the
//!   spectrum of every windowed truncation `A E_n`.
//!
//! Membership tests return a graded [`MembershipVerdict`]: the margin is
//! the smallest slack over all inequalities, negative meaning violated, and
//! the worst constraint is named so audit rows can be re-derived in
//! isolation. [`check_inclusion`] samples one family set and tests the
//! sample (witness first, then seeded random members) against another
//! window's set, surfacing the first counterexample found.

use nalgebra::{Complex, ComplexField, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::enorm::{compression_defect, enorm_value};
use crate::krylov::{projection, KrylovForm};
use crate::operator::{CMatrix, Operator};
use crate::scalar::{sc, Scalar};

#[derive(Debug, Error)]
pub enum ConstraintError {
    #[error("diagonal entry {index} = {value} lies outside [0,1] beyond 1e-12")]
    EntryOutOfBox { index: usize, value: f64 },
    #[error("window requires 1 <= k <= l, got ({k},{l})")]
    BadWindow { k: usize, l: usize },
    #[error("window ({k},{l}) does not fit dimension {n}")]
    WindowOutOfRange { k: usize, l: usize, n: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("corner index {k} out of range 1..={n}")]
    IndexOutOfRange { k: usize, n: usize },
    #[error("invalid diagonal JSON: {0}")]
    Json(String),
}

/// Element of the positive unit ball of the diagonal algebra: a real vector
/// in `[0, 1]^N` holding the diagonal entries in the Krylov basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalElement<S: Scalar> {
    a: DVector<S>,
}

impl<S: Scalar> DiagonalElement<S> {
    /// Accepts entries within `1e-12` of the box and clamps them onto it.
    pub fn new(entries: Vec<S>) -> Result<Self, ConstraintError> {
        let slack = sc::<S>(1e-12);
        let mut a = DVector::from_vec(entries);
        for (i, x) in a.iter_mut().enumerate() {
            if !x.is_finite() || *x < -slack || *x > S::one() + slack {
                return Err(ConstraintError::EntryOutOfBox {
                    index: i,
                    value: x.to_f64().unwrap_or(f64::NAN),
                });
            }
            *x = (*x).clamp(S::zero(), S::one());
        }
        Ok(Self { a })
    }

    pub fn zeros(n: usize) -> Self {
        Self { a: DVector::from_element(n, S::zero()) }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.len() == 0
    }

    pub fn entries(&self) -> &[S] {
        self.a.as_slice()
    }

    pub fn to_json_value(&self) -> Value {
        json!({
            "a": self
                .a
                .iter()
                .map(|x| x.to_f64().expect("finite entry"))
                .collect::<Vec<f64>>()
        })
    }

    pub fn from_json_value(v: &Value) -> Result<Self, ConstraintError> {
        let arr = v
            .get("a")
            .and_then(Value::as_array)
            .ok_or_else(|| ConstraintError::Json("expected object with array field \"a\"".into()))?;
        let entries = arr
            .iter()
            .map(|x| {
                x.as_f64()
                    .map(sc::<S>)
                    .ok_or_else(|| ConstraintError::Json("non-numeric entry".into()))
            })
            .collect::<Result<Vec<S>, _>>()?;
        Self::new(entries)
    }
}

/// Index pair `(k, l)` with `1 <= k <= l` naming a constraint window.
///
/// A window fits dimension `n` when `l + 1 <= n`; `l == n` is the
/// degenerate truncation artifact, admitted only where a caller opts in
/// (the defect bound at index `n` is identically zero there).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Window {
    k: usize,
    l: usize,
}

impl Window {
    pub fn new(k: usize, l: usize) -> Result<Self, ConstraintError> {
        if k == 0 || k > l {
            return Err(ConstraintError::BadWindow { k, l });
        }
        Ok(Self { k, l })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn check_at(&self, n: usize, allow_degenerate: bool) -> Result<(), ConstraintError> {
        let limit = if allow_degenerate { n } else { n.saturating_sub(1) };
        if self.l > limit {
            return Err(ConstraintError::WindowOutOfRange { k: self.k, l: self.l, n });
        }
        Ok(())
    }

    pub fn is_degenerate_at(&self, n: usize) -> bool {
        self.l == n
    }
}

impl std::fmt::Display for Window {
    // Colon-separated so window labels can sit inside comma-separated
    // report fields.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}:{})", self.k, self.l)
    }
}

/// Which inequality of a membership system was tightest (or violated).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintId {
    /// `a_1 = 0`.
    FirstEntryZero,
    /// `a_{s+1} >= 1/2` for the 1-based window index `s`.
    Floor { s: usize },
    /// Weighted-norm bound against the compression defect at index `s`.
    DefectBound { s: usize },
    /// `1/2` must lie in the spectrum of the truncation `A E_n`.
    HalfInSpectrum { n: usize },
}

impl std::fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConstraintId::FirstEntryZero => write!(f, "a1=0"),
            ConstraintId::Floor { s } => write!(f, "floor(s={s})"),
            ConstraintId::DefectBound { s } => write!(f, "defect(s={s})"),
            ConstraintId::HalfInSpectrum { n } => write!(f, "half_in_spectrum(n={n})"),
        }
    }
}

/// Graded outcome of a membership test. `member` holds exactly when
/// `margin >= -tol` for the tolerance the test ran with.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MembershipVerdict<S: Scalar> {
    pub member: bool,
    pub margin: S,
    pub worst: ConstraintId,
}

/// Diagonal matrix carrying the element's entries. Exactly positive and of
/// operator norm `max a_n`.
pub fn embed<S: Scalar>(d: &DiagonalElement<S>) -> Operator<S> {
    Operator::from_real_diagonal(d.entries())
}

/// The canonical member of a window's floor and defect families: one half
/// on basis positions `k+1 ..= l+1` (1-based), zero elsewhere. Equals
/// `(E_{l+1} - E_k) / 2` exactly.
pub fn witness<S: Scalar>(w: Window, n: usize) -> Result<DiagonalElement<S>, ConstraintError> {
    w.check_at(n, true)?;
    let half = sc::<S>(0.5);
    let hi = (w.l + 1).min(n);
    let entries = (0..n)
        .map(|i| if i >= w.k && i < hi { half } else { S::zero() })
        .collect();
    DiagonalElement::new(entries)
}

/// Floor-family membership: `a_1 = 0` and `a_{s+1} >= 1/2` for every
/// window index `s`.
pub fn floor_membership<S: Scalar>(
    d: &DiagonalElement<S>,
    w: Window,
    tol: S,
) -> Result<MembershipVerdict<S>, ConstraintError> {
    let n = d.len();
    w.check_at(n, true)?;
    let a = d.entries();
    let mut margin = -a[0];
    let mut worst = ConstraintId::FirstEntryZero;
    let half = sc::<S>(0.5);
    let s_hi = w.l.min(n - 1);
    for s in w.k..=s_hi {
        let slack = a[s] - half;
        if slack < margin {
            margin = slack;
            worst = ConstraintId::Floor { s };
        }
    }
    Ok(MembershipVerdict { member: margin >= -tol, margin, worst })
}

/// The left-hand side of the defect family's inequality system: the
/// weighted norm of `A E_k H E_k A - H E_k A` with `A = embed(d)`.
pub fn defect_lhs<S: Scalar>(
    d: &DiagonalElement<S>,
    k: usize,
    kform: &KrylovForm<S>,
) -> Result<S, ConstraintError> {
    let n = kform.dim();
    if d.len() != n {
        return Err(ConstraintError::DimensionMismatch { expected: n, got: d.len() });
    }
    if k == 0 || k > n {
        return Err(ConstraintError::IndexOutOfRange { k, n });
    }
    let a = d.entries();
    let h = kform.h().matrix();
    let zero = Complex::new(S::zero(), S::zero());
    let mut x = CMatrix::<S>::from_element(n, n, zero);
    // Columns beyond k vanish under the right projection; inside them the
    // corner term keeps rows < k scaled on both sides, the direct term
    // keeps every row scaled by the column entry only.
    for j in 0..k {
        for i in 0..n {
            let corner = if i < k { h[(i, j)].scale(a[i]) } else { zero };
            x[(i, j)] = (corner - h[(i, j)]).scale(a[j]);
        }
    }
    Ok(enorm_value(&x))
}

/// Defect-family membership: the left-hand value must stay below the
/// compression defect at every index the window covers. A window with
/// `l == n` includes the degenerate zero bound at index `n`.
pub fn defect_membership<S: Scalar>(
    d: &DiagonalElement<S>,
    w: Window,
    kform: &KrylovForm<S>,
    tol: S,
) -> Result<MembershipVerdict<S>, ConstraintError> {
    let n = kform.dim();
    w.check_at(n, true)?;
    let lhs = defect_lhs(d, w.k, kform)?;
    let mut margin = S::zero();
    let mut worst = ConstraintId::DefectBound { s: w.k };
    let mut first = true;
    for s in w.k..=w.l {
        let rhs = if s == n {
            S::zero()
        } else {
            compression_defect(kform, s).expect("validated index").value
        };
        let slack = rhs - lhs;
        if first || slack < margin {
            margin = slack;
            worst = ConstraintId::DefectBound { s };
            first = false;
        }
    }
    Ok(MembershipVerdict { member: margin >= -tol, margin, worst })
}

/// Spectral-family membership: `a_1 = 0` and, for every covered index `n`,
/// some entry among the first `n` equals one half (the spectrum of the
/// diagonal truncation `A E_n` is the leading entries together with zero).
pub fn spectral_membership<S: Scalar>(
    d: &DiagonalElement<S>,
    w: Window,
    tol: S,
) -> Result<MembershipVerdict<S>, ConstraintError> {
    let dim = d.len();
    w.check_at(dim, true)?;
    let a = d.entries();
    let half = sc::<S>(0.5);
    let mut margin = -a[0];
    let mut worst = ConstraintId::FirstEntryZero;
    let mut best_dist = (a[0] - half).abs();
    // Distance of the leading spectrum to one half only shrinks as the
    // truncation grows, so scan indices in order and keep the running best.
    for i in 1..w.k {
        best_dist = best_dist.min((a[i] - half).abs());
    }
    for nn in w.k..=w.l {
        best_dist = best_dist.min((a[nn - 1] - half).abs());
        let slack = -best_dist;
        if slack < margin {
            margin = slack;
            worst = ConstraintId::HalfInSpectrum { n: nn };
        }
    }
    Ok(MembershipVerdict { member: margin >= -tol, margin, worst })
}

/// Row compression `E_k B`: keeps the first `k` rows, zeroes the rest.
pub fn compress_rows<S: Scalar>(b: &Operator<S>, k: usize) -> Result<Operator<S>, ConstraintError> {
    let n = b.dim();
    if k == 0 || k > n {
        return Err(ConstraintError::IndexOutOfRange { k, n });
    }
    let zero = Complex::new(S::zero(), S::zero());
    Ok(Operator::from_fn(n, |i, j| if i < k { b.entry(i, j) } else { zero }))
}

/// The corner commutation residual `B E_k H E_k B - H E_k B` for a general
/// operator `B`; its weighted norm drives the defect family.
pub fn corner_residual<S: Scalar>(
    b: &Operator<S>,
    k: usize,
    kform: &KrylovForm<S>,
) -> Result<Operator<S>, ConstraintError> {
    let n = kform.dim();
    if b.dim() != n {
        return Err(ConstraintError::DimensionMismatch { expected: n, got: b.dim() });
    }
    if k == 0 || k > n {
        return Err(ConstraintError::IndexOutOfRange { k, n });
    }
    let ek = projection::<S>(k, n).expect("validated index");
    let hek = kform.h() * &ek;
    let corner = &ek * &hek;
    Ok(&(&(b * &corner) * b) - &(&hek * b))
}

/// Which family a sampled inclusion audit runs over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InclusionFamily {
    Floor,
    Defect,
}

impl std::fmt::Display for InclusionFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InclusionFamily::Floor => write!(f, "floor"),
            InclusionFamily::Defect => write!(f, "defect"),
        }
    }
}

/// Outcome of a sampled set-inclusion audit.
#[derive(Clone, Debug)]
pub enum InclusionOutcome<S: Scalar> {
    /// Every tested member of the first set belonged to the second.
    Holds { tested: usize, min_margin: S },
    /// A member of the first set outside the second, with its verdict
    /// there. The witness element is tested first, so a failing witness is
    /// always the counterexample reported.
    Counterexample { point: DiagonalElement<S>, verdict: MembershipVerdict<S> },
    /// No member of the first set was found within the rejection budget.
    Vacuous { attempts: usize },
}

/// Sample members of `family(w)` (the deterministic witness, then seeded
/// uniform draws over the family's box, rejection-filtered on any
/// nonlinear inequality) and test each in `family(w2)`.
pub fn check_inclusion<S: Scalar>(
    family: InclusionFamily,
    w: Window,
    w2: Window,
    kform: &KrylovForm<S>,
    samples: usize,
    seed: u64,
    tol: S,
) -> Result<InclusionOutcome<S>, ConstraintError> {
    let n = kform.dim();
    w.check_at(n, false)?;
    w2.check_at(n, false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = sc::<S>(0.5);

    let in_first = |d: &DiagonalElement<S>| -> Result<bool, ConstraintError> {
        Ok(match family {
            InclusionFamily::Floor => floor_membership(d, w, tol)?.member,
            InclusionFamily::Defect => defect_membership(d, w, kform, tol)?.member,
        })
    };
    let in_second = |d: &DiagonalElement<S>| -> Result<MembershipVerdict<S>, ConstraintError> {
        match family {
            InclusionFamily::Floor => floor_membership(d, w2, tol),
            InclusionFamily::Defect => defect_membership(d, w2, kform, tol),
        }
    };

    let mut tested = 0usize;
    let mut attempts = 0usize;
    let mut min_margin = S::zero();
    let max_attempts = 50 * samples.max(1) + 100;

    let mut candidate_index = 0usize;
    while tested < samples && attempts < max_attempts {
        let d = if candidate_index == 0 {
            witness::<S>(w, n)?
        } else {
            let entries: Vec<S> = (0..n)
                .map(|i| {
                    let u = sc::<S>(rng.gen::<f64>());
                    match family {
                        InclusionFamily::Floor => {
                            if i == 0 {
                                S::zero()
                            } else if i >= w.k && i <= w.l {
                                // Box implied by the floor constraints.
                                half + u * half
                            } else {
                                u
                            }
                        }
                        InclusionFamily::Defect => u,
                    }
                })
                .collect();
            DiagonalElement::new(entries).expect("sampled inside the box")
        };
        candidate_index += 1;
        attempts += 1;
        if !in_first(&d)? {
            continue;
        }
        let verdict = in_second(&d)?;
        if !verdict.member {
            return Ok(InclusionOutcome::Counterexample { point: d, verdict });
        }
        if tested == 0 || verdict.margin < min_margin {
            min_margin = verdict.margin;
        }
        tested += 1;
    }
    if tested == 0 {
        return Ok(InclusionOutcome::Vacuous { attempts });
    }
    Ok(InclusionOutcome::Holds { tested, min_margin })
}
