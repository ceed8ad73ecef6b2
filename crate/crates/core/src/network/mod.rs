//! Mass-action protein interaction networks.
//!
//! A [`ReactionNetwork`] holds state species (one PDE each) ordered by
//! category, prescribed external species (data fields with no PDE), and
//! elementary reactions with one rate constant each. Everything downstream
//! (reaction functions, Jacobians, certificates, the solvers) is derived
//! from this immutable description.

mod certificates;
mod forms;
mod kinetics;
mod moieties;
mod validation;

pub use certificates::{
    build_l_certificate, check_quasi_positivity, check_quasi_positivity_forms, check_sum_bound,
    CertificateError, LCertificate, QuasiPositivityCertificate, SumBoundCertificate,
};
pub use forms::{build_reaction_functions, Coefficient, Monomial, QuadraticForm};
pub use kinetics::{Kinetics, KineticsError};
pub use moieties::{conserved_moieties, Moiety};
pub use validation::{validate_assumptions, ValidationReport, Violation, ViolationKind};

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// Errors raised while assembling a network from declarations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("duplicate species `{0}`")]
    DuplicateSpecies(String),
    #[error("unknown species `{0}`")]
    UnknownSpecies(String),
    #[error("species `{0}` has an empty composition")]
    EmptyComposition(String),
    #[error("rate constant `{0}` is used by more than one reaction")]
    DuplicateRate(String),
    #[error("network does not satisfy the kinetics assumptions: {0}")]
    NonCompliantNetwork(String),
}

/// A state species: one concentration field governed by a reaction-diffusion PDE.
#[derive(Debug, Clone, PartialEq)]
pub struct Species {
    pub name: String,
    /// Multiset of base proteins, kept sorted. Modification states do not
    /// change the composition (`pA` and `A` both have composition `{A}`).
    pub composition: Vec<String>,
    /// Membrane-bound species get the slow diffusivity bound table.
    pub membrane: bool,
    /// Default observation flag carried over from the network file.
    pub observed: bool,
}

impl Species {
    /// Number of base proteins in the complex (the category α).
    pub fn category(&self) -> usize {
        self.composition.len()
    }
}

/// A prescribed field (e.g. a ligand concentration given as data).
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalSpecies {
    pub name: String,
    pub composition: Vec<String>,
}

/// Reference to either a state species or an external field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpeciesRef {
    State(usize),
    External(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReactionKind {
    /// Two reactants bind into one product.
    Association,
    /// One complex splits into two products.
    Dissociation,
    /// One species turns into another with the same composition.
    Conversion,
}

impl fmt::Display for ReactionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ReactionKind::Association => "association",
            ReactionKind::Dissociation => "dissociation",
            ReactionKind::Conversion => "conversion",
        };
        f.write_str(s)
    }
}

/// Whether a rate constant belongs to the forward or backward half of a
/// reversible statement. Selects the default bound table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementaryReaction {
    pub reactants: Vec<SpeciesRef>,
    pub products: Vec<SpeciesRef>,
    /// Zero-based index into the rate vector `k`.
    pub rate_index: usize,
    pub rate_name: String,
    pub direction: Direction,
}

impl ElementaryReaction {
    /// Classification by arity; `None` for shapes the kinetics model rejects.
    pub fn kind(&self) -> Option<ReactionKind> {
        match (self.reactants.len(), self.products.len()) {
            (2, 1) => Some(ReactionKind::Association),
            (1, 2) => Some(ReactionKind::Dissociation),
            (1, 1) => Some(ReactionKind::Conversion),
            _ => None,
        }
    }
}

/// Species declaration used to assemble a network.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesDecl {
    pub name: String,
    pub composition: Vec<String>,
    pub external: bool,
    pub observed: bool,
    pub membrane: bool,
}

impl SpeciesDecl {
    pub fn new(name: impl Into<String>, composition: &[&str]) -> Self {
        SpeciesDecl {
            name: name.into(),
            composition: composition.iter().map(|s| s.to_string()).collect(),
            external: false,
            observed: false,
            membrane: false,
        }
    }

    pub fn external(mut self) -> Self {
        self.external = true;
        self
    }

    pub fn observed(mut self) -> Self {
        self.observed = true;
        self
    }

    pub fn membrane(mut self) -> Self {
        self.membrane = true;
        self
    }
}

/// One elementary reaction by species name, in rate-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionDecl {
    pub reactants: Vec<String>,
    pub products: Vec<String>,
    pub rate_name: String,
    pub direction: Direction,
}

impl ReactionDecl {
    pub fn new(reactants: &[&str], products: &[&str], rate_name: impl Into<String>) -> Self {
        ReactionDecl {
            reactants: reactants.iter().map(|s| s.to_string()).collect(),
            products: products.iter().map(|s| s.to_string()).collect(),
            rate_name: rate_name.into(),
            direction: Direction::Forward,
        }
    }

    pub fn backward(mut self) -> Self {
        self.direction = Direction::Backward;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactionNetwork {
    species: Vec<Species>,
    externals: Vec<ExternalSpecies>,
    reactions: Vec<ElementaryReaction>,
    lookup: HashMap<String, SpeciesRef>,
}

impl ReactionNetwork {
    /// Builds a network. State species are stably sorted by category so the
    /// declared order is kept within each category. Rate indices follow the
    /// order of `reactions`.
    pub fn new(species: Vec<SpeciesDecl>, reactions: Vec<ReactionDecl>) -> Result<Self, NetworkError> {
        let mut seen = HashMap::new();
        for decl in &species {
            if decl.composition.is_empty() {
                return Err(NetworkError::EmptyComposition(decl.name.clone()));
            }
            if seen.insert(decl.name.clone(), ()).is_some() {
                return Err(NetworkError::DuplicateSpecies(decl.name.clone()));
            }
        }

        let (ext_decls, mut state_decls): (Vec<_>, Vec<_>) =
            species.into_iter().partition(|d| d.external);
        state_decls.sort_by_key(|d| d.composition.len());

        let sorted = |mut v: Vec<String>| {
            v.sort();
            v
        };
        let state: Vec<Species> = state_decls
            .into_iter()
            .map(|d| Species {
                name: d.name,
                composition: sorted(d.composition),
                membrane: d.membrane,
                observed: d.observed,
            })
            .collect();
        let externals: Vec<ExternalSpecies> = ext_decls
            .into_iter()
            .map(|d| ExternalSpecies { name: d.name, composition: sorted(d.composition) })
            .collect();

        let mut lookup = HashMap::new();
        for (i, s) in state.iter().enumerate() {
            lookup.insert(s.name.clone(), SpeciesRef::State(i));
        }
        for (i, s) in externals.iter().enumerate() {
            lookup.insert(s.name.clone(), SpeciesRef::External(i));
        }

        let mut rates = HashMap::new();
        let mut elementary = Vec::with_capacity(reactions.len());
        for (rate_index, decl) in reactions.into_iter().enumerate() {
            if rates.insert(decl.rate_name.clone(), rate_index).is_some() {
                return Err(NetworkError::DuplicateRate(decl.rate_name));
            }
            let resolve = |names: &[String]| -> Result<Vec<SpeciesRef>, NetworkError> {
                names
                    .iter()
                    .map(|n| lookup.get(n).copied().ok_or_else(|| NetworkError::UnknownSpecies(n.clone())))
                    .collect()
            };
            elementary.push(ElementaryReaction {
                reactants: resolve(&decl.reactants)?,
                products: resolve(&decl.products)?,
                rate_index,
                rate_name: decl.rate_name,
                direction: decl.direction,
            });
        }

        Ok(ReactionNetwork { species: state, externals, reactions: elementary, lookup })
    }

    /// Number of state species (N).
    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    /// Number of rate constants (M).
    pub fn n_rates(&self) -> usize {
        self.reactions.len()
    }

    pub fn n_externals(&self) -> usize {
        self.externals.len()
    }

    pub fn species(&self) -> &[Species] {
        &self.species
    }

    pub fn externals(&self) -> &[ExternalSpecies] {
        &self.externals
    }

    pub fn reactions(&self) -> &[ElementaryReaction] {
        &self.reactions
    }

    pub fn lookup(&self, name: &str) -> Option<SpeciesRef> {
        self.lookup.get(name).copied()
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        match self.lookup(name) {
            Some(SpeciesRef::State(i)) => Some(i),
            _ => None,
        }
    }

    pub fn external_index(&self, name: &str) -> Option<usize> {
        match self.lookup(name) {
            Some(SpeciesRef::External(i)) => Some(i),
            _ => None,
        }
    }

    pub fn rate_index(&self, name: &str) -> Option<usize> {
        self.reactions.iter().position(|r| r.rate_name == name)
    }

    pub fn rate_names(&self) -> impl Iterator<Item = &str> {
        self.reactions.iter().map(|r| r.rate_name.as_str())
    }

    pub fn name_of(&self, r: SpeciesRef) -> &str {
        match r {
            SpeciesRef::State(i) => &self.species[i].name,
            SpeciesRef::External(i) => &self.externals[i].name,
        }
    }

    pub fn composition_of(&self, r: SpeciesRef) -> &[String] {
        match r {
            SpeciesRef::State(i) => &self.species[i].composition,
            SpeciesRef::External(i) => &self.externals[i].composition,
        }
    }

    pub fn category_of(&self, r: SpeciesRef) -> usize {
        self.composition_of(r).len()
    }

    /// Human-readable equation for reports, e.g. `pA + B -> pAB`.
    pub fn describe_reaction(&self, index: usize) -> String {
        let r = &self.reactions[index];
        let side = |refs: &[SpeciesRef]| {
            refs.iter().map(|&s| self.name_of(s)).collect::<Vec<_>>().join(" + ")
        };
        format!("{} -> {}", side(&r.reactants), side(&r.products))
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn species_sorted_by_category_stably() {
        let net = ReactionNetwork::new(
            vec![
                SpeciesDecl::new("AB", &["B", "A"]),
                SpeciesDecl::new("A", &["A"]),
                SpeciesDecl::new("v", &["L"]).external(),
                SpeciesDecl::new("B", &["B"]),
            ],
            vec![],
        )
        .unwrap();
        let names: Vec<_> = net.species().iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["A", "B", "AB"]);
        assert_eq!(net.species()[2].composition, ["A", "B"]);
        assert_eq!(net.lookup("v"), Some(SpeciesRef::External(0)));
    }

    #[test]
    fn duplicate_rate_rejected() {
        let err = ReactionNetwork::new(
            vec![SpeciesDecl::new("A", &["A"]), SpeciesDecl::new("B", &["A"])],
            vec![ReactionDecl::new(&["A"], &["B"], "k"), ReactionDecl::new(&["B"], &["A"], "k")],
        )
        .unwrap_err();
        assert_eq!(err, NetworkError::DuplicateRate("k".into()));
    }

    #[test]
    fn unknown_and_duplicate_species() {
        let err = ReactionNetwork::new(vec![SpeciesDecl::new("A", &["A"])], vec![ReactionDecl::new(&["A"], &["Z"], "k")])
            .unwrap_err();
        assert_eq!(err, NetworkError::UnknownSpecies("Z".into()));
        let err = ReactionNetwork::new(vec![SpeciesDecl::new("A", &["A"]), SpeciesDecl::new("A", &["B"])], vec![])
            .unwrap_err();
        assert_eq!(err, NetworkError::DuplicateSpecies("A".into()));
    }

    #[test]
    fn three_protein_layout() {
        let net = fixtures::three_protein();
        assert_eq!(net.n_species(), 9);
        assert_eq!(net.n_rates(), 12);
        assert_eq!(net.species_index("pAB"), Some(6));
        assert_eq!(net.reactions()[3].kind(), Some(ReactionKind::Association));
        assert_eq!(net.reactions()[3].direction, Direction::Backward);
        assert_eq!(net.describe_reaction(2), "pAB -> pA + pB");
    }
}
