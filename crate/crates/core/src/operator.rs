//! Dense complex operator kernel: adjoints, the operator norm, positivity,
//! spectra, and the truncated graph norm.
//!
//! An [`Operator`] is a finite section of a bounded operator expressed in an
//! orthonormal basis: entry `(k, l)` stores the inner product of basis vector
//! `k` against the image of basis vector `l`, with the inner product taken
//! conjugate-linear in the first slot. Entries are validated finite at
//! construction so every downstream routine may assume a well-formed matrix.

use nalgebra::{Complex, ComplexField, DMatrix, DVector};
use serde_json::{json, Value};
use thiserror::Error;

use crate::scalar::{sc, Scalar};

/// Dense complex matrix storage used throughout the crate.
pub type CMatrix<S> = DMatrix<Complex<S>>;
/// Dense complex vector storage used throughout the crate.
pub type CVector<S> = DVector<Complex<S>>;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("operator must be square and nonempty, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("operator entry ({row},{col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("eigenvalue iteration did not converge; input was:\n{input}")]
    EigenNonConvergence { input: String },
    #[error("invalid operator JSON: {0}")]
    Json(String),
}

/// Square complex matrix with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator<S: Scalar> {
    mat: CMatrix<S>,
}

impl<S: Scalar> Operator<S> {
    /// Wrap a matrix, checking squareness and entry finiteness.
    pub fn new(mat: CMatrix<S>) -> Result<Self, OperatorError> {
        if mat.nrows() == 0 || mat.nrows() != mat.ncols() {
            return Err(OperatorError::NotSquare {
                rows: mat.nrows(),
                cols: mat.ncols(),
            });
        }
        for j in 0..mat.ncols() {
            for i in 0..mat.nrows() {
                let e = mat[(i, j)];
                if !e.re.is_finite() || !e.im.is_finite() {
                    return Err(OperatorError::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(Self { mat })
    }

    /// Build from an entry function; the closure must produce finite values.
    pub fn from_fn(n: usize, f: impl FnMut(usize, usize) -> Complex<S>) -> Self {
        Self::new(CMatrix::from_fn(n, n, f)).expect("entry function produced invalid operator")
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| {
            if i == j {
                Complex::new(S::one(), S::zero())
            } else {
                Complex::new(S::zero(), S::zero())
            }
        })
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_fn(n, |_, _| Complex::new(S::zero(), S::zero()))
    }

    /// Diagonal operator with real entries.
    pub fn from_real_diagonal(diag: &[S]) -> Self {
        Self::from_fn(diag.len(), |i, j| {
            if i == j {
                Complex::new(diag[i], S::zero())
            } else {
                Complex::new(S::zero(), S::zero())
            }
        })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix<S> {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix<S> {
        self.mat
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex<S> {
        self.mat[(i, j)]
    }

    /// Conjugate transpose. An exact involution: `adjoint(adjoint(A)) == A`.
    pub fn adjoint(&self) -> Self {
        Self {
            mat: self.mat.adjoint(),
        }
    }

    /// Largest singular value, computed as `sqrt(lambda_max(A* A))` through
    /// the self-adjoint eigensolver (more robust than iterative complex SVD
    /// on defective inputs).
    pub fn operator_norm(&self) -> S {
        let gram = self.mat.adjoint() * &self.mat;
        let eigs = gram.symmetric_eigen().eigenvalues;
        let mut top = S::zero();
        for &e in eigs.iter() {
            if e > top {
                top = e;
            }
        }
        top.sqrt()
    }

    /// Positive semidefiniteness test: self-adjoint up to
    /// `tol * max(1, norm)` and the Hermitian part has minimum eigenvalue
    /// at least `-tol`. Eigenvalue-based so callers get a graded margin.
    pub fn is_positive(&self, tol: S) -> bool {
        let skew = &self.mat - self.mat.adjoint();
        let skew_norm = Operator { mat: skew }.operator_norm();
        let scale = S::one().max(self.operator_norm());
        if skew_norm > tol * scale {
            return false;
        }
        self.hermitian_part_min_eigenvalue() >= -tol
    }

    /// Minimum eigenvalue of `(A + A*) / 2`.
    pub fn hermitian_part_min_eigenvalue(&self) -> S {
        let herm = (&self.mat + self.mat.adjoint()).map(|c| c * Complex::new(sc::<S>(0.5), S::zero()));
        let eigs = herm.symmetric_eigen().eigenvalues;
        let mut low = S::zero();
        let mut first = true;
        for &e in eigs.iter() {
            if first || e < low {
                low = e;
                first = false;
            }
        }
        low
    }

    fn is_exactly_lower_triangular(&self) -> bool {
        let n = self.dim();
        for j in 1..n {
            for i in 0..j {
                let e = self.mat[(i, j)];
                if e.re != S::zero() || e.im != S::zero() {
                    return false;
                }
            }
        }
        true
    }

    fn is_exactly_upper_triangular(&self) -> bool {
        let n = self.dim();
        for j in 0..n {
            for i in (j + 1)..n {
                let e = self.mat[(i, j)];
                if e.re != S::zero() || e.im != S::zero() {
                    return false;
                }
            }
        }
        true
    }

    fn is_exactly_hermitian(&self) -> bool {
        self.mat == self.mat.adjoint()
    }

    /// Eigenvalues with algebraic multiplicity.
    ///
    /// Triangular inputs (diagonal included) report their diagonal exactly;
    /// exactly Hermitian inputs go through the self-adjoint solver; anything
    /// else goes through the Schur iteration, whose non-convergence is
    /// reported as an error carrying the offending input.
    pub fn spectrum(&self) -> Result<Spectrum<S>, OperatorError> {
        let n = self.dim();
        if self.is_exactly_lower_triangular() || self.is_exactly_upper_triangular() {
            let values = (0..n).map(|i| self.mat[(i, i)]).collect();
            return Ok(Spectrum::from_values(values));
        }
        if self.is_exactly_hermitian() {
            let eigs = self.mat.clone().symmetric_eigen().eigenvalues;
            let values = eigs.iter().map(|&e| Complex::new(e, S::zero())).collect();
            return Ok(Spectrum::from_values(values));
        }
        let max_iter = 200 * n.max(10);
        let schur = self
            .mat
            .clone()
            .try_schur(S::default_epsilon(), max_iter)
            .ok_or_else(|| OperatorError::EigenNonConvergence {
                input: format!("{}", self.mat),
            })?;
        let eigs = schur
            .eigenvalues()
            .ok_or_else(|| OperatorError::EigenNonConvergence {
                input: format!("{}", self.mat),
            })?;
        Ok(Spectrum::from_values(eigs.iter().copied().collect()))
    }

    /// Serialize to the interchange object `{"n": N, "re": [[..]], "im": [[..]]}`
    /// with row-major coefficient arrays.
    pub fn to_json_value(&self) -> Value {
        let n = self.dim();
        let row = |i: usize, pick: fn(Complex<S>) -> S| -> Vec<f64> {
            (0..n)
                .map(|j| pick(self.mat[(i, j)]).to_f64().expect("finite entry"))
                .collect()
        };
        let re: Vec<Vec<f64>> = (0..n).map(|i| row(i, |c| c.re)).collect();
        let im: Vec<Vec<f64>> = (0..n).map(|i| row(i, |c| c.im)).collect();
        json!({ "n": n, "re": re, "im": im })
    }

    /// Parse the interchange object, rejecting ragged or non-finite input.
    pub fn from_json_value(v: &Value) -> Result<Self, OperatorError> {
        let obj = v
            .as_object()
            .ok_or_else(|| OperatorError::Json("expected an object".into()))?;
        for key in obj.keys() {
            if key != "n" && key != "re" && key != "im" {
                return Err(OperatorError::Json(format!("unknown key {key:?}")));
            }
        }
        let n = obj
            .get("n")
            .and_then(Value::as_u64)
            .ok_or_else(|| OperatorError::Json("missing positive integer field \"n\"".into()))?
            as usize;
        if n == 0 {
            return Err(OperatorError::Json("\"n\" must be at least 1".into()));
        }
        let grid = |key: &str| -> Result<Vec<Vec<f64>>, OperatorError> {
            let rows = obj
                .get(key)
                .and_then(Value::as_array)
                .ok_or_else(|| OperatorError::Json(format!("missing array field {key:?}")))?;
            if rows.len() != n {
                return Err(OperatorError::Json(format!(
                    "field {key:?} has {} rows, expected {n}",
                    rows.len()
                )));
            }
            rows.iter()
                .map(|r| {
                    let r = r
                        .as_array()
                        .ok_or_else(|| OperatorError::Json(format!("ragged {key:?} row")))?;
                    if r.len() != n {
                        return Err(OperatorError::Json(format!(
                            "ragged {key:?} row: {} entries, expected {n}",
                            r.len()
                        )));
                    }
                    r.iter()
                        .map(|x| {
                            x.as_f64().ok_or_else(|| {
                                OperatorError::Json(format!("non-numeric entry in {key:?}"))
                            })
                        })
                        .collect()
                })
                .collect()
        };
        let re = grid("re")?;
        let im = grid("im")?;
        Self::new(CMatrix::from_fn(n, n, |i, j| {
            Complex::new(sc::<S>(re[i][j]), sc::<S>(im[i][j]))
        }))
    }

    pub fn from_json_str(s: &str) -> Result<Self, OperatorError> {
        let v: Value =
            serde_json::from_str(s).map_err(|e| OperatorError::Json(e.to_string()))?;
        Self::from_json_value(&v)
    }

    pub fn to_json_string(&self) -> String {
        self.to_json_value().to_string()
    }
}

impl<S: Scalar> std::ops::Add for &Operator<S> {
    type Output = Operator<S>;
    fn add(self, rhs: Self) -> Operator<S> {
        Operator {
            mat: &self.mat + &rhs.mat,
        }
    }
}

impl<S: Scalar> std::ops::Sub for &Operator<S> {
    type Output = Operator<S>;
    fn sub(self, rhs: Self) -> Operator<S> {
        Operator {
            mat: &self.mat - &rhs.mat,
        }
    }
}

impl<S: Scalar> std::ops::Mul for &Operator<S> {
    type Output = Operator<S>;
    fn mul(self, rhs: Self) -> Operator<S> {
        Operator {
            mat: &self.mat * &rhs.mat,
        }
    }
}

impl<S: Scalar> Operator<S> {
    pub fn scale_real(&self, factor: S) -> Self {
        Self {
            mat: self.mat.map(|c| c.scale(factor)),
        }
    }
}

/// Eigenvalue multiset, sorted by real part then imaginary part so equal
/// inputs print identically.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum<S: Scalar> {
    values: Vec<Complex<S>>,
}

impl<S: Scalar> Spectrum<S> {
    fn from_values(mut values: Vec<Complex<S>>) -> Self {
        values.sort_by(|a, b| {
            a.re.partial_cmp(&b.re)
                .expect("finite eigenvalue")
                .then(a.im.partial_cmp(&b.im).expect("finite eigenvalue"))
        });
        Self { values }
    }

    pub fn values(&self) -> &[Complex<S>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest absolute imaginary part; zero for a real spectrum.
    pub fn max_imaginary_magnitude(&self) -> S {
        let mut m = S::zero();
        for v in &self.values {
            let a = v.im.abs();
            if a > m {
                m = a;
            }
        }
        m
    }
}

/// Outcome of the truncated graph-norm series.
#[derive(Clone, Debug, PartialEq)]
pub enum GraphNorm<S: Scalar> {
    /// Partial sums stabilized; the square root of the settled sum.
    Converged(S),
    /// No stabilization within the term budget; carries the last partial
    /// sum of squares so the blow-up is inspectable.
    Diverged { partial_sum: S },
}

/// Truncation of the series `sum_n ||T^n x||^2` (n from 0), reported as its
/// square root once the last five relative increments drop below
/// `growth_tol`, and as [`GraphNorm::Diverged`] otherwise.
pub fn graph_norm<S: Scalar>(
    x: &CVector<S>,
    t: &Operator<S>,
    max_terms: usize,
    growth_tol: S,
) -> Result<GraphNorm<S>, OperatorError> {
    if x.len() != t.dim() {
        return Err(OperatorError::DimensionMismatch {
            expected: t.dim(),
            got: x.len(),
        });
    }
    const STABLE_WINDOW: usize = 5;
    let mut power = x.clone();
    let mut sum = power.norm_squared();
    let mut stable_run = 0usize;
    for _ in 1..=max_terms {
        power = t.matrix() * &power;
        let inc = power.norm_squared();
        sum += inc;
        let rel = if sum > S::zero() { inc / sum } else { S::zero() };
        if rel < growth_tol {
            stable_run += 1;
            if stable_run >= STABLE_WINDOW {
                return Ok(GraphNorm::Converged(sum.sqrt()));
            }
        } else {
            stable_run = 0;
        }
        if !sum.is_finite() {
            break;
        }
    }
    Ok(GraphNorm::Diverged { partial_sum: sum })
}
