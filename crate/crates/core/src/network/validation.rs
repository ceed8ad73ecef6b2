use std::fmt;

use super::{ReactionNetwork, SpeciesRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// (A) more than two molecules bind at once.
    TooManyReactants,
    /// (B) a complex splits into more than two molecules.
    TooManyProducts,
    /// (C) binding and dissociation in the same elementary step.
    BindingWithDissociation,
    /// A side with no species.
    EmptySide,
    /// An external species on the product side. External fields are data,
    /// so the released copy leaves the system. Reported, not blocking.
    ExternalProduct,
    /// An association product must be of strictly higher category than each
    /// of its state reactants, otherwise the L certificate is not lower triangular.
    CategoryOrder,
    /// Base-protein multisets differ across the arrow. Reported, not blocking.
    CompositionImbalance,
}

impl ViolationKind {
    pub fn is_blocking(self) -> bool {
        !matches!(self, ViolationKind::CompositionImbalance | ViolationKind::ExternalProduct)
    }

    pub fn label(self) -> &'static str {
        match self {
            ViolationKind::TooManyReactants => "(A) more than two reactants",
            ViolationKind::TooManyProducts => "(B) more than two products",
            ViolationKind::BindingWithDissociation => "(C) binding and dissociation at once",
            ViolationKind::EmptySide => "empty reaction side",
            ViolationKind::ExternalProduct => "external species released (warning)",
            ViolationKind::CategoryOrder => "association product category not above reactants",
            ViolationKind::CompositionImbalance => "composition imbalance (warning)",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub reaction: usize,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    /// True when no blocking rule is violated.
    pub fn is_compliant(&self) -> bool {
        self.violations.iter().all(|v| !v.kind.is_blocking())
    }

    pub fn blocking(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.kind.is_blocking())
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| !v.kind.is_blocking())
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "compliant: assumptions (A), (B), (C) hold");
        }
        for v in &self.violations {
            writeln!(f, "reaction {}: {}: {}", v.reaction + 1, v.kind.label(), v.detail)?;
        }
        Ok(())
    }
}

/// Checks every reaction against the kinetics assumptions. Violations are
/// collected, never raised.
pub fn validate_assumptions(network: &ReactionNetwork) -> ValidationReport {
    let mut violations = Vec::new();
    for (idx, r) in network.reactions().iter().enumerate() {
        let desc = network.describe_reaction(idx);
        let mut push = |kind, detail: String| violations.push(Violation { reaction: idx, kind, detail });
        let (nr, np) = (r.reactants.len(), r.products.len());

        if nr == 0 || np == 0 {
            push(ViolationKind::EmptySide, desc.clone());
        }
        if nr > 2 {
            push(ViolationKind::TooManyReactants, format!("{desc} has {nr} reactants"));
        }
        if np > 2 {
            push(ViolationKind::TooManyProducts, format!("{desc} has {np} products"));
        }
        if nr == 2 && np == 2 {
            push(ViolationKind::BindingWithDissociation, desc.clone());
        }
        for p in &r.products {
            if let SpeciesRef::External(_) = p {
                push(ViolationKind::ExternalProduct, format!("{desc} produces {}", network.name_of(*p)));
            }
        }
        if nr == 2 && np == 1 {
            let product_cat = network.category_of(r.products[0]);
            for &s in &r.reactants {
                if matches!(s, SpeciesRef::State(_)) && network.category_of(s) >= product_cat {
                    push(
                        ViolationKind::CategoryOrder,
                        format!(
                            "{desc}: {} (category {}) binds into category {}",
                            network.name_of(s),
                            network.category_of(s),
                            product_cat
                        ),
                    );
                }
            }
        }

        let gather = |refs: &[SpeciesRef]| {
            let mut all: Vec<&str> =
                refs.iter().flat_map(|&s| network.composition_of(s).iter().map(String::as_str)).collect();
            all.sort_unstable();
            all
        };
        if nr > 0 && np > 0 && gather(&r.reactants) != gather(&r.products) {
            push(
                ViolationKind::CompositionImbalance,
                format!("{desc}: {{{}}} vs {{{}}}", gather(&r.reactants).join(","), gather(&r.products).join(",")),
            );
        }
    }
    ValidationReport { violations }
}
