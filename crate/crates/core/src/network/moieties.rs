use super::{ReactionNetwork, SpeciesRef};

/// A conserved total: `Σ_i weights_i · u_i` is invariant under the
/// reaction dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct Moiety {
    pub base: String,
    pub weights: Vec<f64>,
}

/// Per-base-protein composition counts that are left null vectors of the
/// stoichiometric matrix. External species are ignored, so a base carried
/// in from an external field is not conserved and is dropped.
pub fn conserved_moieties(network: &ReactionNetwork) -> Vec<Moiety> {
    let mut bases: Vec<&str> =
        network.species().iter().flat_map(|s| s.composition.iter().map(String::as_str)).collect();
    bases.sort_unstable();
    bases.dedup();

    let mut out = Vec::new();
    for base in bases {
        let weights: Vec<f64> = network
            .species()
            .iter()
            .map(|s| s.composition.iter().filter(|c| c.as_str() == base).count() as f64)
            .collect();
        let weight = |s: &SpeciesRef| match *s {
            SpeciesRef::State(i) => weights[i],
            SpeciesRef::External(_) => 0.0,
        };
        let conserved = network.reactions().iter().all(|r| {
            let lhs: f64 = r.reactants.iter().map(weight).sum();
            let rhs: f64 = r.products.iter().map(weight).sum();
            lhs == rhs
        });
        if conserved {
            out.push(Moiety { base: base.to_string(), weights });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::{fixtures, Kinetics, ReactionDecl, SpeciesDecl};
    use super::*;

    #[test]
    fn binding_has_two_moieties() {
        let m = conserved_moieties(&fixtures::reversible_binding());
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].weights, [1.0, 0.0, 1.0]);
        assert_eq!(m[1].weights, [0.0, 1.0, 1.0]);
    }

    #[test]
    fn total_a_in_three_protein() {
        let m = conserved_moieties(&fixtures::three_protein());
        let a = m.iter().find(|m| m.base == "A").unwrap();
        let ones: Vec<usize> = (0..9).filter(|&i| a.weights[i] == 1.0).collect();
        assert_eq!(ones, [0, 1, 6, 8]);
        assert_eq!(m.len(), 3);
    }

    #[test]
    fn external_base_is_dropped() {
        let net = ReactionNetwork::new(
            vec![
                SpeciesDecl::new("R", &["R"]),
                SpeciesDecl::new("L", &["L"]).external(),
                SpeciesDecl::new("RL", &["R", "L"]),
            ],
            vec![ReactionDecl::new(&["L", "R"], &["RL"], "k1"), ReactionDecl::new(&["RL"], &["R"], "k2")],
        )
        .unwrap();
        let m = conserved_moieties(&net);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].base, "R");
        let kin = Kinetics::new(&net).unwrap();
        let r = kin.evaluate(&[1.3, 0.4], &[2.0, 0.5], &[0.9]).unwrap();
        let total: f64 = m[0].weights.iter().zip(&r).map(|(w, x)| w * x).sum();
        assert!(total.abs() < 1e-14);
    }
}
