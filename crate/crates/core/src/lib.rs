//! Finite-dimensional operator laboratory.
//!
//! Builds Krylov orthonormal bases and Hessenberg forms from a cyclic vector,
//! evaluates a geometrically weighted entrywise norm with closed-form
//! compression defects, decides membership in window-indexed constraint
//! families over the diagonal algebra, searches the resulting feasibility
//! systems for commuting elements whose ranges are candidate invariant
//! subspaces, and drives all of it from a reproducible audit harness.
//!
//! All numerics are generic over the real scalar via [`scalar::Scalar`];
//! `f64` is the production type and the concrete aliases below pin it.

pub mod scalar;

pub mod claims;
pub mod constraints;
pub mod enorm;
pub mod harness;
pub mod krylov;
pub mod operator;
pub mod solver;
pub mod zoo;

pub use constraints::{
    check_inclusion, compress_rows, corner_residual, defect_membership, embed, floor_membership,
    spectral_membership, witness, ConstraintError, ConstraintId, DiagonalElement, InclusionFamily,
    InclusionOutcome, MembershipVerdict, Window,
};
pub use enorm::{compression_defect, enorm, CompressionDefect, ENormValue, EnormError};
pub use krylov::{is_cyclic, orthonormalize, projection, KrylovError, KrylovForm};
pub use operator::{graph_norm, GraphNorm, Operator, OperatorError, Spectrum};
pub use scalar::Scalar;
pub use solver::{
    all_windows, diagonal_windows, evaluate_candidate, fip_audit, grid_oracle, penalty, search,
    Budget, Family, FeasibilityProblem, FeasibilityReport, FeasibilityVerdict, FipReport,
    GridOutcome, SolverError, SubspaceCandidate,
};

/// Production-precision operator.
pub type Operator64 = operator::Operator<f64>;
/// Single-precision operator for quick smoke runs.
pub type Operator32 = operator::Operator<f32>;
