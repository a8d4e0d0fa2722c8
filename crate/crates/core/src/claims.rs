//! The audited claim catalog.
//!
//! Each claim is a machine-checkable predicate over a concrete operator;
//! the identifiers are the stable labels used in configuration files,
//! audit CSV rows, and summaries.

use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
#[error("unknown claim id {0:?}")]
pub struct UnknownClaim(pub String);

/// Identifier of one audited claim.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClaimId {
    /// Floor families nest: shrinking a window enlarges the set.
    FloorNesting,
    /// The window witness belongs to its floor family.
    WitnessFloor,
    /// The witness equals half the difference of the window's projections.
    WitnessTelescoping,
    /// The witness belongs to its defect family with vanishing left side.
    WitnessDefect,
    /// The witness sits in the intersection of both families.
    WitnessIntersection,
    /// Floor-side inclusion of a combined window into its members.
    FloorInclusion,
    /// Defect-side inclusion of a combined window into its members.
    DefectInclusion,
    /// Finite window collections keep the combined witness in every member
    /// intersection.
    FiniteIntersection,
    /// The grand intersection over a window list is nonempty.
    GrandIntersection,
    /// Compression defects decay under the geometric envelope and match
    /// their closed form.
    DefectDecay,
    /// A feasible candidate commutes through the operator on its range.
    Commutation,
    /// A feasible candidate's range is a nontrivial invariant subspace.
    InvariantSubspace,
}

impl ClaimId {
    pub const ALL: [ClaimId; 12] = [
        ClaimId::FloorNesting,
        ClaimId::WitnessFloor,
        ClaimId::WitnessTelescoping,
        ClaimId::WitnessDefect,
        ClaimId::WitnessIntersection,
        ClaimId::FloorInclusion,
        ClaimId::DefectInclusion,
        ClaimId::FiniteIntersection,
        ClaimId::GrandIntersection,
        ClaimId::DefectDecay,
        ClaimId::Commutation,
        ClaimId::InvariantSubspace,
    ];

    /// Stable label used in configs, CSV rows, and summaries.
    pub fn label(&self) -> &'static str {
        match self {
            ClaimId::FloorNesting => "2.13",
            ClaimId::WitnessFloor => "2.16",
            ClaimId::WitnessTelescoping => "2.17",
            ClaimId::WitnessDefect => "2.18",
            ClaimId::WitnessIntersection => "2.19",
            ClaimId::FloorInclusion => "2.31",
            ClaimId::DefectInclusion => "2.32",
            ClaimId::FiniteIntersection => "2.33",
            ClaimId::GrandIntersection => "2.35",
            ClaimId::DefectDecay => "2.44",
            ClaimId::Commutation => "2.48",
            ClaimId::InvariantSubspace => "2.51",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            ClaimId::FloorNesting => "floor families nest under window shrinking",
            ClaimId::WitnessFloor => "window witness belongs to its floor family",
            ClaimId::WitnessTelescoping => "witness equals half the projection difference",
            ClaimId::WitnessDefect => "window witness belongs to its defect family",
            ClaimId::WitnessIntersection => "witness sits in the family intersection",
            ClaimId::FloorInclusion => "combined floor family includes into members",
            ClaimId::DefectInclusion => "combined defect family includes into members",
            ClaimId::FiniteIntersection => "combined witness survives finite collections",
            ClaimId::GrandIntersection => "the grand intersection is nonempty",
            ClaimId::DefectDecay => "compression defects decay with closed form",
            ClaimId::Commutation => "feasible candidate commutes through the operator",
            ClaimId::InvariantSubspace => "feasible candidate yields a nontrivial invariant range",
        }
    }
}

impl std::fmt::Display for ClaimId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ClaimId {
    type Err = UnknownClaim;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClaimId::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| UnknownClaim(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        for c in ClaimId::ALL {
            assert_eq!(c.label().parse::<ClaimId>().unwrap(), c);
        }
        assert!("9.99".parse::<ClaimId>().is_err());
    }

    #[test]
    fn labels_are_unique_and_ordered() {
        let mut labels: Vec<&str> = ClaimId::ALL.iter().map(|c| c.label()).collect();
        labels.dedup();
        assert_eq!(labels.len(), 12);
    }
}
