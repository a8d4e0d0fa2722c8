//! Feasibility search over the diagonal box and the audit machinery built
//! on top of it.
//!
//! A [`FeasibilityProblem`] fixes a Krylov form, a list of windows, the
//! constraint family pair (floor or spectral, each intersected with the
//! defect family), a membership tolerance, and a search budget. The
//! scalarization is a sum of squared hinge violations of every membership
//! margin, zero exactly when all memberships hold within tolerance.
//!
//! [`search`] runs deterministic warm starts and seeded multi-start
//! projected descent (central finite differences, box projection), falls
//! back to simulated annealing once half the restart budget passes without
//! improvement, and finally consults the exhaustive [`grid_oracle`] when
//! the dimension guard admits it. Verdicts are therefore `feasible` with a
//! point, `infeasible_on_grid` when the oracle exhausted the grid, or
//! `budget_exhausted` when nothing conclusive remains. Everything is
//! deterministic given the seed: restart seeds derive from the master seed
//! by index and reports serialize identically across runs.

use std::collections::BTreeMap;

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::constraints::{
    defect_membership, floor_membership, spectral_membership, witness, ConstraintError,
    DiagonalElement, MembershipVerdict, Window,
};
use crate::enorm::{compression_defect, enorm_value};
use crate::krylov::KrylovForm;
use crate::operator::{CMatrix, Operator};
use crate::scalar::{sc, Scalar};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error("budget misconfiguration: {0}")]
    BadBudget(String),
    #[error("grid oracle guard: dimension {n} exceeds 8")]
    GridGuard { n: usize },
    #[error("grid oracle guard: visited more than {cap} grid points")]
    GridBudget { cap: usize },
    #[error("window list must hold between 1 and {max} windows, got {got}")]
    WindowCount { got: usize, max: usize },
}

/// Constraint family pair driving a feasibility problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// Floor family intersected with the defect family.
    FloorDefect,
    /// Spectral family intersected with the defect family.
    SpectralDefect,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::FloorDefect => "floor_defect",
            Family::SpectralDefect => "spectral_defect",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Search budget: restart count, descent iterations per restart, and the
/// optional grid resolution for the oracle fallback.
#[derive(Clone, Copy, Debug)]
pub struct Budget<S: Scalar> {
    pub restarts: usize,
    pub iterations: usize,
    pub grid_resolution: Option<S>,
}

impl<S: Scalar> Budget<S> {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.restarts == 0 || self.iterations == 0 {
            return Err(SolverError::BadBudget(
                "restarts and iterations must be positive".into(),
            ));
        }
        if let Some(r) = self.grid_resolution {
            if r <= S::zero() || r > sc::<S>(0.5) {
                return Err(SolverError::BadBudget(format!(
                    "grid resolution must lie in (0, 1/2], got {:?}",
                    r.to_f64()
                )));
            }
        }
        Ok(())
    }
}

/// All (k, l) with `1 <= k <= l <= n-1`, in lexicographic order.
pub fn all_windows(n: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for k in 1..n {
        for l in k..n {
            out.push(Window::new(k, l).expect("k <= l"));
        }
    }
    out
}

/// The diagonal windows (k, k), `k = 1..n-1`.
pub fn diagonal_windows(n: usize) -> Vec<Window> {
    (1..n).map(|k| Window::new(k, k).expect("k <= k")).collect()
}

/// The degenerate truncation windows (k, n); their defect bound at index
/// `n` is identically zero, so they pin the left-hand side to zero.
pub fn degenerate_windows(n: usize) -> Vec<Window> {
    (1..=n).map(|k| Window::new(k, n).expect("k <= n")).collect()
}

/// A feasibility problem over the diagonal box.
pub struct FeasibilityProblem<'a, S: Scalar> {
    kform: &'a KrylovForm<S>,
    windows: Vec<Window>,
    family: Family,
    tol: S,
    budget: Budget<S>,
}

impl<'a, S: Scalar> FeasibilityProblem<'a, S> {
    /// `allow_degenerate` admits windows with `l == n` (the truncation
    /// artifact); everything else requires `l + 1 <= n`.
    pub fn new(
        kform: &'a KrylovForm<S>,
        windows: Vec<Window>,
        family: Family,
        tol: S,
        budget: Budget<S>,
        allow_degenerate: bool,
    ) -> Result<Self, SolverError> {
        budget.validate()?;
        let n = kform.dim();
        for w in &windows {
            w.check_at(n, allow_degenerate)?;
        }
        Ok(Self { kform, windows, family, tol, budget })
    }

    pub fn dim(&self) -> usize {
        self.kform.dim()
    }

    pub fn kform(&self) -> &KrylovForm<S> {
        self.kform
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn tol(&self) -> S {
        self.tol
    }

    pub fn budget(&self) -> Budget<S> {
        self.budget
    }

    /// Defect bound at 1-based index `s`, with the degenerate zero at `n`.
    fn rhs(&self, s: usize) -> S {
        if s == self.dim() {
            S::zero()
        } else {
            compression_defect(self.kform, s).expect("validated index").value
        }
    }

    /// Per-coordinate lower bounds implied by the floor constraints
    /// (`a_1 = 0` is encoded as lower = upper = 0).
    fn box_lower(&self) -> Vec<S> {
        let n = self.dim();
        let mut lo = vec![S::zero(); n];
        if self.family == Family::FloorDefect {
            let half = sc::<S>(0.5);
            for w in &self.windows {
                for s in w.k()..=w.l().min(n - 1) {
                    if lo[s] < half {
                        lo[s] = half;
                    }
                }
            }
        }
        lo
    }

    fn box_upper(&self) -> Vec<S> {
        let n = self.dim();
        let mut hi = vec![S::one(); n];
        hi[0] = S::zero();
        hi
    }
}

/// Primary-family margin (floor or spectral) followed by the defect margin
/// for one window.
pub fn window_margins<S: Scalar>(
    d: &DiagonalElement<S>,
    w: Window,
    family: Family,
    kform: &KrylovForm<S>,
    tol: S,
) -> Result<(MembershipVerdict<S>, MembershipVerdict<S>), ConstraintError> {
    let primary = match family {
        Family::FloorDefect => floor_membership(d, w, tol)?,
        Family::SpectralDefect => spectral_membership(d, w, tol)?,
    };
    let defect = defect_membership(d, w, kform, tol)?;
    Ok((primary, defect))
}

/// Sum over windows of squared hinge violations of both membership
/// margins. Zero exactly when every membership holds within tolerance.
pub fn penalty<S: Scalar>(d: &DiagonalElement<S>, problem: &FeasibilityProblem<'_, S>) -> S {
    penalty_raw(d.entries(), problem)
}

fn hinge_sq<S: Scalar>(margin: S) -> S {
    let v = (-margin).max(S::zero());
    v * v
}

fn penalty_raw<S: Scalar>(a: &[S], problem: &FeasibilityProblem<'_, S>) -> S {
    let n = problem.dim();
    let half = sc::<S>(0.5);
    let mut total = S::zero();

    // Defect side: the left-hand value depends on the window only through
    // k, so evaluate it once per distinct k.
    let mut lhs_cache: BTreeMap<usize, S> = BTreeMap::new();
    for w in &problem.windows {
        let lhs = *lhs_cache
            .entry(w.k())
            .or_insert_with(|| defect_lhs_slice(a, w.k(), problem.kform));
        let mut defect_margin = S::zero();
        let mut first = true;
        for s in w.k()..=w.l() {
            let slack = problem.rhs(s) - lhs;
            if first || slack < defect_margin {
                defect_margin = slack;
                first = false;
            }
        }
        total += hinge_sq(defect_margin);

        let primary_margin = match problem.family {
            Family::FloorDefect => {
                let mut m = -a[0];
                for s in w.k()..=w.l().min(n - 1) {
                    m = m.min(a[s] - half);
                }
                m
            }
            Family::SpectralDefect => {
                let mut m = -a[0];
                let mut best = (a[0] - half).abs();
                for (i, &x) in a.iter().enumerate().take(w.k() - 1).skip(1) {
                    let _ = i;
                    best = best.min((x - half).abs());
                }
                for nn in w.k()..=w.l() {
                    best = best.min((a[nn - 1] - half).abs());
                    m = m.min(-best);
                }
                m
            }
        };
        total += hinge_sq(primary_margin);
    }
    total
}

/// Slice-level defect left-hand side (same quantity as
/// [`crate::constraints::defect_lhs`], no element construction).
fn defect_lhs_slice<S: Scalar>(a: &[S], k: usize, kform: &KrylovForm<S>) -> S {
    let n = kform.dim();
    let h = kform.h().matrix();
    let zero = Complex::new(S::zero(), S::zero());
    let mut x = CMatrix::<S>::from_element(n, n, zero);
    for j in 0..k {
        for i in 0..n {
            let corner = if i < k { h[(i, j)].scale(a[i]) } else { zero };
            x[(i, j)] = (corner - h[(i, j)]).scale(a[j]);
        }
    }
    enorm_value(&x)
}

/// Orthogonal projection onto the closed range of a diagonal candidate,
/// with its dimensions and how far the range is from invariance.
#[derive(Clone, Debug)]
pub struct SubspaceCandidate<S: Scalar> {
    pub projection: Operator<S>,
    pub rank: usize,
    pub kernel_dim: usize,
    /// `|| (I - P) H P ||`; zero exactly when the range is invariant.
    pub invariance_defect: S,
    /// Rank 0 or full rank: the subspace carries no information.
    pub trivial: bool,
}

impl<S: Scalar> SubspaceCandidate<S> {
    pub fn to_json_value(&self) -> Value {
        json!({
            "projection": self.projection.to_json_value(),
            "rank": self.rank,
            "kernel_dim": self.kernel_dim,
            "invariance_defect": self.invariance_defect.to_f64(),
            "trivial": self.trivial,
        })
    }
}

/// Commutation residual `||M H M - H M||` in the weighted norm together
/// with the range subspace of `M = embed(d)`: for diagonal `M` the closed
/// range is exactly the span of the coordinates above `rank_tol`.
pub fn evaluate_candidate<S: Scalar>(
    d: &DiagonalElement<S>,
    kform: &KrylovForm<S>,
    rank_tol: S,
) -> (S, SubspaceCandidate<S>) {
    let n = kform.dim();
    assert_eq!(d.len(), n, "candidate dimension must match the form");
    let a = d.entries();
    let h = kform.h().matrix();
    let zero = Complex::new(S::zero(), S::zero());

    // (M H M - H M)(i, j) = h_ij a_j (a_i - 1).
    let mut x = CMatrix::<S>::from_element(n, n, zero);
    for j in 0..n {
        for i in 0..n {
            x[(i, j)] = h[(i, j)].scale(a[j] * (a[i] - S::one()));
        }
    }
    let residual = enorm_value(&x);

    let keep: Vec<bool> = a.iter().map(|&x| x > rank_tol).collect();
    let rank = keep.iter().filter(|&&b| b).count();
    let projection = Operator::from_fn(n, |i, j| {
        if i == j && keep[i] {
            Complex::new(S::one(), S::zero())
        } else {
            zero
        }
    });

    // (I - P) H P: rows outside the range, columns inside.
    let outside = Operator::from_fn(n, |i, j| {
        if !keep[i] && keep[j] {
            h[(i, j)]
        } else {
            zero
        }
    });
    let invariance_defect = outside.operator_norm();

    let candidate = SubspaceCandidate {
        projection,
        rank,
        kernel_dim: n - rank,
        invariance_defect,
        trivial: rank == 0 || rank == n,
    };
    (residual, candidate)
}

/// Outcome of a feasibility run.
#[derive(Clone, Debug)]
pub enum FeasibilityVerdict<S: Scalar> {
    Feasible(DiagonalElement<S>),
    InfeasibleOnGrid,
    BudgetExhausted,
}

impl<S: Scalar> FeasibilityVerdict<S> {
    pub fn label(&self) -> &'static str {
        match self {
            FeasibilityVerdict::Feasible(_) => "feasible",
            FeasibilityVerdict::InfeasibleOnGrid => "infeasible_on_grid",
            FeasibilityVerdict::BudgetExhausted => "budget_exhausted",
        }
    }
}

/// Full diagnostics of a [`search`] run, serializable deterministically.
#[derive(Clone, Debug)]
pub struct FeasibilityReport<S: Scalar> {
    pub verdict: FeasibilityVerdict<S>,
    /// The window list was empty: every box point is a member.
    pub vacuous: bool,
    pub best_penalty: S,
    pub best_point: DiagonalElement<S>,
    /// Per window, the smaller of the primary and defect margins at the
    /// best point.
    pub per_window_margins: BTreeMap<Window, S>,
    /// Commutation residual of the best point.
    pub residual: S,
    pub subspace: Option<SubspaceCandidate<S>>,
    /// Whether the grid oracle was consulted during the run.
    pub grid_consulted: bool,
    /// Filled by harness cross-checks, never by `search` itself.
    pub oracle_agreement: Option<bool>,
}

impl<S: Scalar> FeasibilityReport<S> {
    pub fn to_json_value(&self) -> Value {
        let margins: BTreeMap<String, f64> = self
            .per_window_margins
            .iter()
            .map(|(w, m)| (format!("{},{}", w.k(), w.l()), m.to_f64().expect("finite margin")))
            .collect();
        json!({
            "verdict": self.verdict.label(),
            "feasible_point": match &self.verdict {
                FeasibilityVerdict::Feasible(d) => d.to_json_value(),
                _ => Value::Null,
            },
            "vacuous": self.vacuous,
            "best_penalty": self.best_penalty.to_f64(),
            "best_point": self.best_point.to_json_value(),
            "per_window_margins": margins,
            "residual": self.residual.to_f64(),
            "subspace": self.subspace.as_ref().map(|s| s.to_json_value()).unwrap_or(Value::Null),
            "grid_consulted": self.grid_consulted,
            "oracle_agreement": self.oracle_agreement,
        })
    }
}

fn clamp_to_box<S: Scalar>(x: &mut [S], lo: &[S], hi: &[S]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Projected descent with central finite differences and backtracking, in
/// place; returns the final penalty.
fn descend<S: Scalar>(
    x: &mut Vec<S>,
    problem: &FeasibilityProblem<'_, S>,
    lo: &[S],
    hi: &[S],
    iterations: usize,
    target: S,
) -> S {
    let fd_step = sc::<S>(1e-6);
    let mut pen = penalty_raw(x, problem);
    for _ in 0..iterations {
        if pen <= target {
            break;
        }
        // Central differences on the free coordinates, clipped to the box.
        let mut grad = vec![S::zero(); x.len()];
        let mut grad_norm_sq = S::zero();
        for i in 0..x.len() {
            if hi[i] <= lo[i] {
                continue;
            }
            let xp = (x[i] + fd_step).min(hi[i]);
            let xm = (x[i] - fd_step).max(lo[i]);
            let spread = xp - xm;
            if spread <= S::zero() {
                continue;
            }
            let orig = x[i];
            x[i] = xp;
            let fp = penalty_raw(x, problem);
            x[i] = xm;
            let fm = penalty_raw(x, problem);
            x[i] = orig;
            let g = (fp - fm) / spread;
            grad[i] = g;
            grad_norm_sq += g * g;
        }
        if grad_norm_sq == S::zero() {
            break;
        }
        // Backtracking projected step.
        let mut alpha = sc::<S>(0.5);
        let mut advanced = false;
        for _ in 0..30 {
            let mut trial = x.clone();
            for i in 0..trial.len() {
                trial[i] -= alpha * grad[i];
            }
            clamp_to_box(&mut trial, lo, hi);
            let p = penalty_raw(&trial, problem);
            if p < pen {
                *x = trial;
                pen = p;
                advanced = true;
                break;
            }
            alpha *= sc::<S>(0.5);
        }
        if !advanced {
            break;
        }
    }
    pen
}

/// Snap near-boundary and near-half coordinates onto their exact values
/// whenever that does not worsen the penalty; exact actives make the
/// downstream residuals exact zeros instead of rounding dust.
fn snap_polish<S: Scalar>(
    x: &mut Vec<S>,
    problem: &FeasibilityProblem<'_, S>,
    lo: &[S],
    hi: &[S],
) -> S {
    let snap_tol = sc::<S>(1e-5);
    let half = sc::<S>(0.5);
    let mut pen = penalty_raw(x, problem);
    for _pass in 0..2 {
        for i in 0..x.len() {
            for target in [lo[i], hi[i], half, S::zero(), S::one()] {
                if target < lo[i] || target > hi[i] || x[i] == target {
                    continue;
                }
                if (x[i] - target).abs() < snap_tol {
                    let orig = x[i];
                    x[i] = target;
                    let p = penalty_raw(x, problem);
                    if p <= pen {
                        pen = p;
                    } else {
                        x[i] = orig;
                    }
                }
            }
        }
    }
    pen
}

fn restart_seed(master: u64, index: u64) -> u64 {
    master.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Multi-start feasibility search; deterministic given the seed.
pub fn search<S: Scalar>(
    problem: &FeasibilityProblem<'_, S>,
    seed: u64,
) -> Result<FeasibilityReport<S>, SolverError> {
    let n = problem.dim();
    let tol = problem.tol;
    let target = tol * tol;

    if problem.windows.is_empty() {
        // Vacuous: any box point belongs to the empty intersection.
        let point = witness::<S>(Window::new(1, 1).expect("valid"), n)?;
        return Ok(finish_report(problem, point, S::zero(), true, false));
    }

    let lo = problem.box_lower();
    let hi = problem.box_upper();
    let half = sc::<S>(0.5);

    // Deterministic warm starts.
    let min_k = problem.windows.iter().map(Window::k).min().expect("nonempty");
    let max_l = problem.windows.iter().map(Window::l).max().expect("nonempty");
    let witness_start = {
        let mut v = witness::<S>(Window::new(min_k, max_l).expect("k <= l"), n)?
            .entries()
            .to_vec();
        clamp_to_box(&mut v, &lo, &hi);
        v
    };
    let mut starts: Vec<Vec<S>> = vec![
        witness_start,
        hi.clone(),
        lo.clone(),
        lo.iter().zip(hi.iter()).map(|(&a, &b)| (a + b).scale(half)).collect(),
        {
            let mut v = vec![half; n];
            v[0] = S::zero();
            clamp_to_box(&mut v, &lo, &hi);
            v
        },
    ];
    for i in 0..problem.budget.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(seed, i as u64 + 1));
        let v: Vec<S> = lo
            .iter()
            .zip(hi.iter())
            .map(|(&a, &b)| a + (b - a) * sc::<S>(rng.gen::<f64>()))
            .collect();
        starts.push(v);
    }

    let mut best: Option<(S, Vec<S>)> = None;
    let stall_budget = problem.budget.restarts.div_ceil(2).max(1);
    let mut since_improvement = 0usize;
    for start in starts {
        let mut x = start;
        let mut pen = descend(&mut x, problem, &lo, &hi, problem.budget.iterations, target);
        pen = snap_polish(&mut x, problem, &lo, &hi).min(pen);
        let improved = best.as_ref().map(|(b, _)| pen < *b).unwrap_or(true);
        if improved {
            best = Some((pen, x));
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        let (bp, _) = best.as_ref().expect("just set");
        if *bp <= target {
            break;
        }
        if since_improvement >= stall_budget {
            // Descent has stalled on half the restart budget; hand the
            // remaining effort to annealing.
            break;
        }
    }
    let (mut best_pen, mut best_x) = best.expect("at least one start");

    if best_pen > target {
        let anneal_iters = problem.budget.iterations.max(50) * 25;
        let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(seed, 0xA11EA1));
        let mut x = best_x.clone();
        let mut pen = best_pen;
        let t0 = best_pen.max(sc::<S>(1e-8));
        let t_end = sc::<S>(1e-14);
        let cool = (t_end / t0).powf(S::one() / sc::<S>(anneal_iters as f64));
        let mut temp = t0;
        for _ in 0..anneal_iters {
            let i = 1 + rng.gen_range(0..n.saturating_sub(1).max(1));
            if i >= n || hi[i] <= lo[i] {
                temp *= cool;
                continue;
            }
            let scale = (hi[i] - lo[i]) * sc::<S>(0.3) * (temp / t0).sqrt().max(sc::<S>(1e-3));
            let mut trial = x.clone();
            trial[i] = (trial[i] + scale * sc::<S>(2.0 * rng.gen::<f64>() - 1.0)).clamp(lo[i], hi[i]);
            let p = penalty_raw(&trial, problem);
            let accept = p <= pen || {
                let ratio = ((pen - p) / temp).exp();
                sc::<S>(rng.gen::<f64>()) < ratio
            };
            if accept {
                x = trial;
                pen = p;
                if pen < best_pen {
                    best_pen = pen;
                    best_x = x.clone();
                    if best_pen <= target {
                        break;
                    }
                }
            }
            temp *= cool;
        }
        best_pen = snap_polish(&mut best_x, problem, &lo, &hi).min(best_pen);
    }

    if best_pen <= target {
        let point = DiagonalElement::new(best_x)?;
        return Ok(finish_report(problem, point, best_pen, false, false));
    }

    // Inconclusive search: consult the grid oracle when the guard admits.
    if let Some(res) = problem.budget.grid_resolution {
        if n <= GRID_DIM_GUARD {
            match grid_oracle(problem, res)? {
                GridOutcome::Feasible(d) => {
                    return Ok(finish_report(problem, d, S::zero(), false, true));
                }
                GridOutcome::InfeasibleOnGrid { .. } => {
                    let best_point = DiagonalElement::new(best_x)?;
                    let mut report = finish_report(problem, best_point, best_pen, false, true);
                    report.verdict = FeasibilityVerdict::InfeasibleOnGrid;
                    return Ok(report);
                }
            }
        }
    }

    let best_point = DiagonalElement::new(best_x)?;
    let mut report = finish_report(problem, best_point, best_pen, false, false);
    report.verdict = FeasibilityVerdict::BudgetExhausted;
    Ok(report)
}

fn finish_report<S: Scalar>(
    problem: &FeasibilityProblem<'_, S>,
    point: DiagonalElement<S>,
    pen: S,
    vacuous: bool,
    grid_consulted: bool,
) -> FeasibilityReport<S> {
    let target = problem.tol * problem.tol;
    let mut margins = BTreeMap::new();
    for w in &problem.windows {
        let (primary, defect) =
            window_margins(&point, *w, problem.family, problem.kform, problem.tol)
                .expect("windows validated at construction");
        margins.insert(*w, primary.margin.min(defect.margin));
    }
    let (residual, subspace) = evaluate_candidate(&point, problem.kform, sc::<S>(1e-12));
    let feasible = pen <= target;
    FeasibilityReport {
        verdict: if feasible {
            FeasibilityVerdict::Feasible(point.clone())
        } else {
            FeasibilityVerdict::BudgetExhausted
        },
        vacuous,
        best_penalty: pen,
        best_point: point,
        per_window_margins: margins,
        residual,
        subspace: Some(subspace),
        grid_consulted,
        oracle_agreement: None,
    }
}

const GRID_DIM_GUARD: usize = 8;
const GRID_VISIT_CAP: usize = 10_000_000;

/// Grid oracle outcome.
#[derive(Clone, Debug)]
pub enum GridOutcome<S: Scalar> {
    /// Lexicographically first feasible grid point.
    Feasible(DiagonalElement<S>),
    InfeasibleOnGrid { visited: usize },
}

/// Exhaustive oracle over the grid `a_1 = 0`, `a_i in {0} u {1/2, 1/2+r,
/// ..., 1}`: depth-first in lexicographic order with sound prefix pruning
/// (floor bounds act coordinatewise, the defect left-hand side at corner
/// `k` is fixed once the first `k` coordinates are), so the first point
/// reported is the lexicographic minimum of the feasible grid set.
pub fn grid_oracle<S: Scalar>(
    problem: &FeasibilityProblem<'_, S>,
    resolution: S,
) -> Result<GridOutcome<S>, SolverError> {
    let n = problem.dim();
    if n > GRID_DIM_GUARD {
        return Err(SolverError::GridGuard { n });
    }
    if resolution <= S::zero() || resolution > sc::<S>(0.5) {
        return Err(SolverError::BadBudget(format!(
            "grid resolution must lie in (0, 1/2], got {:?}",
            resolution.to_f64()
        )));
    }
    if problem.windows.is_empty() {
        return Ok(GridOutcome::Feasible(DiagonalElement::zeros(n)));
    }

    let half = sc::<S>(0.5);
    let mut upper_values = vec![half];
    let mut i = 1u32;
    loop {
        let x = half + sc::<S>(i as f64) * resolution;
        if x > S::one() + sc::<S>(1e-12) {
            break;
        }
        upper_values.push(x.min(S::one()));
        i += 1;
    }

    let lo = problem.box_lower();
    let tol = problem.tol;

    // Values per coordinate, ascending; floored coordinates skip zero.
    let values_at = |i: usize| -> Vec<S> {
        if i == 0 {
            vec![S::zero()]
        } else if lo[i] > S::zero() {
            upper_values.clone()
        } else {
            let mut v = vec![S::zero()];
            v.extend_from_slice(&upper_values);
            v
        }
    };

    // Spectral coverage: indices n (1-based) that demand one half in the
    // leading spectrum.
    let spectral_covered: Vec<bool> = {
        let mut cov = vec![false; n + 1];
        if problem.family == Family::SpectralDefect {
            for w in &problem.windows {
                for s in w.k()..=w.l() {
                    cov[s] = true;
                }
            }
        }
        cov
    };

    // Defect prune thresholds: for each corner k, the tightest bound among
    // windows anchored there.
    let mut defect_cap: BTreeMap<usize, S> = BTreeMap::new();
    for w in &problem.windows {
        let mut rhs_min = problem.rhs(w.k());
        for s in (w.k() + 1)..=w.l() {
            rhs_min = rhs_min.min(problem.rhs(s));
        }
        defect_cap
            .entry(w.k())
            .and_modify(|c| *c = (*c).min(rhs_min))
            .or_insert(rhs_min);
    }

    struct Dfs<'p, 'a, S: Scalar> {
        problem: &'p FeasibilityProblem<'a, S>,
        defect_cap: BTreeMap<usize, S>,
        spectral_covered: Vec<bool>,
        visited: usize,
        tol: S,
    }

    impl<S: Scalar> Dfs<'_, '_, S> {
        fn run(
            &mut self,
            x: &mut Vec<S>,
            depth: usize,
            best_half_dist: S,
            values_at: &dyn Fn(usize) -> Vec<S>,
        ) -> Result<Option<Vec<S>>, SolverError> {
            let n = self.problem.dim();
            if depth == n {
                if penalty_raw(x, self.problem) <= self.tol * self.tol {
                    return Ok(Some(x.clone()));
                }
                return Ok(None);
            }
            let half = sc::<S>(0.5);
            for v in values_at(depth) {
                self.visited += 1;
                if self.visited > GRID_VISIT_CAP {
                    return Err(SolverError::GridBudget { cap: GRID_VISIT_CAP });
                }
                x[depth] = v;
                let dist = best_half_dist.min((v - half).abs());

                // Spectral prune: a covered index with no half in the
                // prefix can never recover.
                if self.spectral_covered[depth + 1] && dist > self.tol {
                    continue;
                }
                // Defect prune: the corner anchored at k = depth + 1 is
                // now fully determined.
                if let Some(cap) = self.defect_cap.get(&(depth + 1)) {
                    let lhs = defect_lhs_slice(&x[..=depth], depth + 1, self.problem.kform);
                    if lhs > *cap + self.tol {
                        continue;
                    }
                }
                if let Some(hit) = self.run(x, depth + 1, dist, values_at)? {
                    return Ok(Some(hit));
                }
            }
            x[depth] = S::zero();
            Ok(None)
        }
    }

    let mut dfs = Dfs {
        problem,
        defect_cap,
        spectral_covered,
        visited: 0,
        tol,
    };
    let mut x = vec![S::zero(); n];
    let found = dfs.run(&mut x, 0, S::one(), &values_at)?;
    match found {
        Some(v) => Ok(GridOutcome::Feasible(DiagonalElement::new(v)?)),
        None => Ok(GridOutcome::InfeasibleOnGrid { visited: dfs.visited }),
    }
}

const FIP_MAX_WINDOWS: usize = 10;

/// Margins of the combined witness inside one member window's families.
#[derive(Clone, Debug)]
pub struct FipEntry<S: Scalar> {
    pub window: Window,
    pub floor: MembershipVerdict<S>,
    pub defect: MembershipVerdict<S>,
}

/// Finite-intersection audit: the combined window's witness tested in
/// every member window's floor and defect families.
#[derive(Clone, Debug)]
pub struct FipReport<S: Scalar> {
    pub combined: Window,
    pub witness_point: DiagonalElement<S>,
    pub entries: Vec<FipEntry<S>>,
    pub pass: bool,
}

impl<S: Scalar> FipReport<S> {
    /// Worst margin across all entries and both sides.
    pub fn worst_margin(&self) -> S {
        let mut worst = S::zero();
        let mut first = true;
        for e in &self.entries {
            for m in [e.floor.margin, e.defect.margin] {
                if first || m < worst {
                    worst = m;
                    first = false;
                }
            }
        }
        worst
    }
}

/// Form the combined window (min k, max l) of a finite window collection
/// and test its witness for membership in every member's floor and defect
/// families, reporting graded margins per window.
pub fn fip_audit<S: Scalar>(
    windows: &[Window],
    kform: &KrylovForm<S>,
    tol: S,
) -> Result<FipReport<S>, SolverError> {
    if windows.is_empty() || windows.len() > FIP_MAX_WINDOWS {
        return Err(SolverError::WindowCount { got: windows.len(), max: FIP_MAX_WINDOWS });
    }
    let n = kform.dim();
    for w in windows {
        w.check_at(n, false)?;
    }
    let k = windows.iter().map(Window::k).min().expect("nonempty");
    let l = windows.iter().map(Window::l).max().expect("nonempty");
    let combined = Window::new(k, l).expect("min k <= max l");
    let witness_point = witness::<S>(combined, n)?;
    let mut entries = Vec::with_capacity(windows.len());
    let mut pass = true;
    for w in windows {
        let floor = floor_membership(&witness_point, *w, tol)?;
        let defect = defect_membership(&witness_point, *w, kform, tol)?;
        pass &= floor.member && defect.member;
        entries.push(FipEntry { window: *w, floor, defect });
    }
    Ok(FipReport { combined, witness_point, entries, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{defect_lhs, embed, ConstraintId};
    use crate::krylov::orthonormalize;
    use crate::operator::CVector;
    use approx::assert_relative_eq;

    type C = Complex<f64>;
    type Op = Operator<f64>;

    fn e1(n: usize) -> CVector<f64> {
        CVector::from_fn(n, |i, _| if i == 0 { C::new(1.0, 0.0) } else { C::new(0.0, 0.0) })
    }

    fn shift_form(n: usize) -> KrylovForm<f64> {
        let t = Op::from_fn(n, |i, j| if i == j + 1 { C::new(1.0, 0.0) } else { C::new(0.0, 0.0) });
        orthonormalize(&t, &e1(n), 1e-12).unwrap()
    }

    fn budget(res: Option<f64>) -> Budget<f64> {
        Budget { restarts: 6, iterations: 80, grid_resolution: res }
    }

    fn w(k: usize, l: usize) -> Window {
        Window::new(k, l).unwrap()
    }

    fn diag(entries: &[f64]) -> DiagonalElement<f64> {
        DiagonalElement::new(entries.to_vec()).unwrap()
    }

    #[test]
    fn penalty_examples() {
        let n = 8;
        let kf = shift_form(n);

        let p1 = FeasibilityProblem::new(
            &kf,
            vec![w(1, 1)],
            Family::FloorDefect,
            1e-10,
            budget(None),
            false,
        )
        .unwrap();
        let wit = witness::<f64>(w(1, 1), n).unwrap();
        assert_eq!(penalty(&wit, &p1), 0.0);

        // The zero element violates the floor constraint.
        assert!(penalty(&DiagonalElement::zeros(n), &p1) > 0.0);

        // (0,1,...,1) on window (2,3): the defect margin is 1/128 - 1/32.
        let p2 = FeasibilityProblem::new(
            &kf,
            vec![w(2, 3)],
            Family::FloorDefect,
            1e-10,
            budget(None),
            false,
        )
        .unwrap();
        let mut ones = vec![1.0; n];
        ones[0] = 0.0;
        let d = diag(&ones);
        let (primary, defect) = window_margins(&d, w(2, 3), Family::FloorDefect, &kf, 1e-10).unwrap();
        assert!(primary.member);
        assert_eq!(defect.margin, 1.0 / 128.0 - 1.0 / 32.0);
        let expect = (1.0 / 32.0 - 1.0 / 128.0) * (1.0 / 32.0 - 1.0 / 128.0);
        assert_relative_eq!(penalty(&d, &p2), expect, max_relative = 1e-15);
    }

    #[test]
    fn search_shift_diagonal_windows_is_feasible_with_zero_residual() {
        let n = 8;
        let kf = shift_form(n);
        let problem = FeasibilityProblem::new(
            &kf,
            diagonal_windows(n),
            Family::FloorDefect,
            1e-10,
            budget(Some(0.1)),
            false,
        )
        .unwrap();
        let report = search(&problem, 42).unwrap();
        match &report.verdict {
            FeasibilityVerdict::Feasible(d) => {
                assert_eq!(d.entries()[0], 0.0);
                assert!(d.entries()[1] >= 0.5 - 1e-10);
            }
            other => panic!("expected feasible, got {other:?}"),
        }
        assert_eq!(report.best_penalty, 0.0);
        assert!(report.residual <= 1e-12);
        let sub = report.subspace.as_ref().unwrap();
        assert_eq!(sub.rank, n - 1);
        assert_eq!(sub.kernel_dim, 1);
        assert!(sub.invariance_defect <= 1e-12);
        assert!(!sub.trivial);
        assert!(!report.vacuous);
        assert!(report.per_window_margins.values().all(|&m| m >= -1e-10));
    }

    #[test]
    fn search_shift_all_windows_is_infeasible_on_grid() {
        let n = 8;
        let kf = shift_form(n);
        let problem = FeasibilityProblem::new(
            &kf,
            all_windows(n),
            Family::FloorDefect,
            1e-10,
            budget(Some(0.05)),
            false,
        )
        .unwrap();
        let report = search(&problem, 42).unwrap();
        assert!(matches!(report.verdict, FeasibilityVerdict::InfeasibleOnGrid));
        assert!(report.grid_consulted);
        assert!(report.best_penalty > 0.0);
    }

    #[test]
    fn search_empty_windows_is_vacuous() {
        let n = 6;
        let kf = shift_form(n);
        let problem =
            FeasibilityProblem::new(&kf, vec![], Family::FloorDefect, 1e-10, budget(None), false)
                .unwrap();
        let report = search(&problem, 1).unwrap();
        assert!(report.vacuous);
        match &report.verdict {
            FeasibilityVerdict::Feasible(d) => {
                assert_eq!(d, &witness::<f64>(w(1, 1), n).unwrap());
            }
            other => panic!("expected vacuous feasible, got {other:?}"),
        }
    }

    #[test]
    fn grid_oracle_finds_the_lexicographic_minimum() {
        // Independent reference: enumerate the full grid in lexicographic
        // order without any pruning and keep the first feasible point.
        let n = 5;
        let kf = shift_form(n);
        let problem = FeasibilityProblem::new(
            &kf,
            diagonal_windows(n),
            Family::FloorDefect,
            1e-10,
            budget(Some(0.25)),
            false,
        )
        .unwrap();

        let values = [0.0, 0.5, 0.75, 1.0];
        let mut reference: Option<Vec<f64>> = None;
        'outer: for a1 in values {
            for a2 in values {
                for a3 in values {
                    for a4 in values {
                        let cand = vec![0.0, a1, a2, a3, a4];
                        let d = diag(&cand);
                        let ok = problem.windows().iter().all(|win| {
                            let (p, q) =
                                window_margins(&d, *win, Family::FloorDefect, &kf, 1e-10).unwrap();
                            p.member && q.member
                        });
                        if ok {
                            reference = Some(cand);
                            break 'outer;
                        }
                    }
                }
            }
        }
        let reference = reference.expect("diagonal windows admit feasible grid points");

        match grid_oracle(&problem, 0.25).unwrap() {
            GridOutcome::Feasible(d) => assert_eq!(d.entries(), reference.as_slice()),
            other => panic!("expected feasible, got {other:?}"),
        }
    }

    #[test]
    fn grid_oracle_confirms_infeasibility_with_all_windows() {
        let n = 5;
        let kf = shift_form(n);
        let problem = FeasibilityProblem::new(
            &kf,
            all_windows(n),
            Family::FloorDefect,
            1e-10,
            budget(Some(0.05)),
            false,
        )
        .unwrap();
        match grid_oracle(&problem, 0.05).unwrap() {
            GridOutcome::InfeasibleOnGrid { visited } => assert!(visited > 0),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn grid_oracle_empty_windows_is_immediately_feasible() {
        let n = 4;
        let kf = shift_form(n);
        let problem =
            FeasibilityProblem::new(&kf, vec![], Family::FloorDefect, 1e-10, budget(None), false)
                .unwrap();
        match grid_oracle(&problem, 0.25).unwrap() {
            GridOutcome::Feasible(d) => assert_eq!(d.entries(), &[0.0; 4]),
            other => panic!("expected feasible, got {other:?}"),
        }
    }

    #[test]
    fn grid_oracle_guards_dimension() {
        let n = 9;
        let kf = shift_form(n);
        let problem = FeasibilityProblem::new(
            &kf,
            diagonal_windows(n),
            Family::FloorDefect,
            1e-10,
            budget(Some(0.5)),
            false,
        )
        .unwrap();
        assert!(matches!(
            grid_oracle(&problem, 0.5),
            Err(SolverError::GridGuard { n: 9 })
        ));
    }

    #[test]
    fn spectral_family_search_finds_half_pinned_points() {
        // Window (2,2) on the shift: spectral membership wants a half among
        // the first two entries with a1 = 0, and the defect bound at s = 2
        // tolerates lhs = 2^-6 <= 2^-5.
        let n = 6;
        let kf = shift_form(n);
        let problem = FeasibilityProblem::new(
            &kf,
            vec![w(2, 2)],
            Family::SpectralDefect,
            1e-10,
            budget(Some(0.25)),
            false,
        )
        .unwrap();
        let report = search(&problem, 7).unwrap();
        match &report.verdict {
            FeasibilityVerdict::Feasible(d) => {
                assert_eq!(d.entries()[0], 0.0);
                assert!((d.entries()[1] - 0.5).abs() <= 1e-9);
            }
            other => panic!("expected feasible, got {other:?}"),
        }

        // Window (1,1) under the spectral family is empty: the first entry
        // must vanish yet carry the half.
        let impossible = FeasibilityProblem::new(
            &kf,
            vec![w(1, 1)],
            Family::SpectralDefect,
            1e-10,
            budget(Some(0.25)),
            false,
        )
        .unwrap();
        let report = search(&impossible, 7).unwrap();
        assert!(matches!(report.verdict, FeasibilityVerdict::InfeasibleOnGrid));
    }

    #[test]
    fn fip_audit_examples() {
        let n = 8;
        let kf = shift_form(n);

        // Single window: reduces to the witness chain.
        for k in 1..n {
            for l in k..n {
                let r = fip_audit(&[w(k, l)], &kf, 1e-10).unwrap();
                assert!(r.pass, "({k},{l})");
                assert_eq!(r.combined, w(k, l));
            }
        }

        // The two-window collection {(1,3),(2,3)}: the floor side holds,
        // the defect side fails at (2,3) by exactly 1/128.
        let r = fip_audit(&[w(1, 3), w(2, 3)], &kf, 1e-10).unwrap();
        assert!(!r.pass);
        assert_eq!(r.combined, w(1, 3));
        let failing = &r.entries[1];
        assert_eq!(failing.window, w(2, 3));
        assert!(failing.floor.member);
        assert!(!failing.defect.member);
        assert_eq!(failing.defect.margin, -1.0 / 128.0);
        assert_eq!(failing.defect.worst, ConstraintId::DefectBound { s: 3 });

        // Identical windows collapse to the single-window case.
        let r = fip_audit(&[w(2, 4), w(2, 4), w(2, 4)], &kf, 1e-10).unwrap();
        assert!(r.pass);

        assert!(fip_audit::<f64>(&[], &kf, 1e-10).is_err());
        let eleven = vec![w(1, 1); 11];
        assert!(fip_audit(&eleven, &kf, 1e-10).is_err());
    }

    #[test]
    fn evaluate_candidate_examples() {
        let n = 8;
        let kf = shift_form(n);

        let mut ones = vec![1.0; n];
        ones[0] = 0.0;
        let (residual, sub) = evaluate_candidate(&diag(&ones), &kf, 1e-12);
        assert_eq!(residual, 0.0);
        assert_eq!(sub.rank, n - 1);
        assert_eq!(sub.kernel_dim, 1);
        assert_eq!(sub.invariance_defect, 0.0);
        assert!(!sub.trivial);

        let (residual, sub) = evaluate_candidate(&DiagonalElement::zeros(n), &kf, 1e-12);
        assert_eq!(residual, 0.0);
        assert!(sub.trivial);
        assert_eq!(sub.rank, 0);

        // witness((1,1)): the lone surviving entry of MHM - HM sits at
        // (3,2) with value -1/2, weighted 2^-5; and the range span(e_2) is
        // thrown onto e_3 by the shift.
        let wit = witness::<f64>(w(1, 1), n).unwrap();
        let (residual, sub) = evaluate_candidate(&wit, &kf, 1e-12);
        assert_eq!(residual, 0.5f64.powi(5) * 0.5);
        assert_eq!(residual, 1.0 / 64.0);
        assert_eq!(sub.rank, 1);
        assert_relative_eq!(sub.invariance_defect, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn residual_triangle_decomposition_holds() {
        let n = 10;
        let kf = shift_form(n);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let d = DiagonalElement::new((0..n).map(|_| rng.gen::<f64>()).collect()).unwrap();
            let m = embed(&d);
            let h = kf.h();
            let full = enorm_value((&(&(&m * h) * &m) - &(h * &m)).matrix());
            for k in 1..=n {
                let ek = crate::krylov::projection::<f64>(k, n).unwrap();
                let corner = &(&m * &(&ek * &(h * &ek))) * &m;
                let t1 = enorm_value((&(&(&m * h) * &m) - &corner).matrix());
                let t2 = enorm_value((&corner - &(&(h * &ek) * &m)).matrix());
                let t3 = enorm_value((&(&(h * &ek) * &m) - &(h * &m)).matrix());
                assert!(full <= t1 + t2 + t3 + 1e-12);
            }
        }
    }

    #[test]
    fn defect_bound_chain_holds_for_diagonal_window_members() {
        // Any point passing every diagonal-window defect membership keeps
        // its corner residual below the compression defect at each k.
        let n = 8;
        let kf = shift_form(n);
        let mut ones = vec![1.0; n];
        ones[0] = 0.0;
        let d = diag(&ones);
        for k in 1..n {
            let v = defect_membership(&d, w(k, k), &kf, 1e-10).unwrap();
            assert!(v.member);
            let lhs = defect_lhs(&d, k, &kf).unwrap();
            assert!(lhs <= compression_defect(&kf, k).unwrap().value + 1e-10);
        }
    }

    #[test]
    fn kernel_range_duality_for_diagonal_candidates() {
        let n = 9;
        let kf = shift_form(n);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..20 {
            let d = DiagonalElement::new(
                (0..n)
                    .map(|_| if rng.gen::<f64>() < 0.3 { 0.0 } else { rng.gen::<f64>() })
                    .collect(),
            )
            .unwrap();
            let (_, sub) = evaluate_candidate(&d, &kf, 1e-12);
            assert_eq!(sub.rank + sub.kernel_dim, n);
            // P M = M for the range projection of a diagonal candidate.
            let m = embed(&d);
            let pm = &sub.projection * &m;
            assert!((&pm - &m).operator_norm() <= 1e-12);
            // P is an exact orthogonal projection.
            assert_eq!(&sub.projection * &sub.projection, sub.projection);
            assert_eq!(sub.projection.adjoint(), sub.projection);
        }
    }

    #[test]
    fn search_is_deterministic_bit_for_bit() {
        let n = 6;
        let kf = shift_form(n);
        let run = || {
            let problem = FeasibilityProblem::new(
                &kf,
                all_windows(n),
                Family::FloorDefect,
                1e-10,
                budget(Some(0.1)),
                false,
            )
            .unwrap();
            search(&problem, 2024).unwrap().to_json_value().to_string()
        };
        assert_eq!(run(), run());
    }

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
}
