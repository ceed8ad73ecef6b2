//! Networks shipped with the library.

use crate::dsl::{parse_network, DslError};
use crate::network::ReactionNetwork;

/// Phosphorylation cycle of three proteins: 9 species, 12 rates, with the
/// heterodimer `pAB` observed.
pub const THREE_PROTEIN: &str = include_str!("../networks/three_protein.rxn");

/// Ephrin-A1 driven f-actin regulation: 33 species, 48 rates, one external
/// ligand field, `Actin_on` observed.
pub const FACTIN: &str = include_str!("../networks/factin.rxn");

pub fn three_protein() -> Result<ReactionNetwork, DslError> {
    parse_network(THREE_PROTEIN)
}

pub fn factin() -> Result<ReactionNetwork, DslError> {
    parse_network(FACTIN)
}

/// Looks up a bundled network by name (`three_protein` or `factin`).
pub fn source(name: &str) -> Option<&'static str> {
    match name {
        "three_protein" | "three-protein" => Some(THREE_PROTEIN),
        "factin" | "f-actin" => Some(FACTIN),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_parse_with_expected_sizes() {
        let net = three_protein().unwrap();
        assert_eq!((net.n_species(), net.n_rates(), net.n_externals()), (9, 12, 0));
        let net = factin().unwrap();
        assert_eq!((net.n_species(), net.n_rates(), net.n_externals()), (33, 48, 1));
        assert!(source("nope").is_none());
    }

    #[test]
    fn both_are_certified() {
        use crate::network::{build_l_certificate, check_quasi_positivity, check_sum_bound, validate_assumptions, Kinetics};
        for net in [three_protein().unwrap(), factin().unwrap()] {
            assert!(validate_assumptions(&net).is_compliant(), "{}", validate_assumptions(&net));
            Kinetics::new(&net).unwrap();
            check_quasi_positivity(&net).unwrap();
            assert!(build_l_certificate(&net).unwrap().is_lower_triangular());
            check_sum_bound(&net).unwrap();
        }
    }

    #[test]
    fn serialized_documents_rebuild_the_same_network() {
        // species order within a category may change; names, flags and reactions may not
        let summary = |net: &ReactionNetwork| {
            let mut species: Vec<_> = net.species().iter().map(|s| format!("{s:?}")).collect();
            species.sort();
            let reactions: Vec<_> =
                (0..net.reactions().len()).map(|i| (net.describe_reaction(i), net.reactions()[i].direction)).collect();
            (species, reactions, net.externals().to_vec())
        };
        for text in [THREE_PROTEIN, FACTIN] {
            let doc = crate::dsl::parse(text).unwrap();
            let again = crate::dsl::parse_network(&crate::dsl::serialize(&doc)).unwrap();
            assert_eq!(summary(&again), summary(&doc.to_network().unwrap()));
        }
    }
}
