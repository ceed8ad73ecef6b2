//! Symbolic certificates for global existence: quasi-positivity, the
//! lower-triangular L bound on the quadratic part, and the sum bound.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use thiserror::Error;

use super::forms::mass_action_forms;
use super::{validate_assumptions, Coefficient, Monomial, QuadraticForm, ReactionNetwork, SpeciesRef};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertificateError {
    #[error("network is not compliant: {0}")]
    NonCompliant(String),
    #[error("r_{species} has negative term {term} without its own factor")]
    QuasiPositivity { species: usize, term: String },
    #[error("L certificate construction failed: {0}")]
    Construction(String),
    #[error("sum bound failed: {0}")]
    SumBound(String),
}

fn compliant_forms(network: &ReactionNetwork) -> Result<Vec<QuadraticForm>, CertificateError> {
    let report = validate_assumptions(network);
    if !report.is_compliant() {
        return Err(CertificateError::NonCompliant(report.to_string().trim_end().to_string()));
    }
    Ok(mass_action_forms(network))
}

fn describe(m: &Monomial) -> String {
    let mut s = format!("k{}", m.rate + 1);
    for e in &m.external {
        s.push_str(&format!("·v{}", e + 1));
    }
    for i in &m.state {
        s.push_str(&format!("·u{}", i + 1));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuasiPositivityCertificate {
    /// Number of negative terms checked, per species.
    pub negative_terms: Vec<usize>,
}

/// Every negative term of r_i must carry the factor u_i, so r_i ≥ 0 on the
/// face u_i = 0 of the nonnegative orthant.
pub fn check_quasi_positivity_forms(forms: &[QuadraticForm]) -> Result<QuasiPositivityCertificate, CertificateError> {
    let mut negative_terms = Vec::with_capacity(forms.len());
    for (i, form) in forms.iter().enumerate() {
        let mut count = 0;
        for (m, s) in form.terms() {
            if s < 0.0 {
                if !m.contains_state(i) {
                    return Err(CertificateError::QuasiPositivity { species: i + 1, term: describe(m) });
                }
                count += 1;
            }
        }
        negative_terms.push(count);
    }
    Ok(QuasiPositivityCertificate { negative_terms })
}

pub fn check_quasi_positivity(network: &ReactionNetwork) -> Result<QuasiPositivityCertificate, CertificateError> {
    check_quasi_positivity_forms(&compliant_forms(network)?)
}

/// Lower-triangular L with unit diagonal and nonnegative entries such that
/// every state-quadratic coefficient of L·r is non-positive.
#[derive(Debug, Clone, PartialEq)]
pub struct LCertificate {
    pub matrix: DMatrix<f64>,
    /// The combined forms (L·r)_i.
    pub combined: Vec<QuadraticForm>,
}

impl LCertificate {
    pub fn is_lower_triangular(&self) -> bool {
        let n = self.matrix.nrows();
        (0..n).all(|i| (i + 1..n).all(|j| self.matrix[(i, j)] == 0.0))
    }
}

/// Positive state-quadratic terms of a form.
fn positive_quadratic(form: &QuadraticForm) -> impl Iterator<Item = (&Monomial, f64)> {
    form.terms().filter(|(m, s)| m.state_degree() == 2 && *s > 0.0)
}

/// Builds L row by row. For row i, products are visited from i downwards;
/// every association `l + m → n` with λ_n > 0 raises λ_l and λ_m to at
/// least λ_n / 2, which cancels the `+λ_n k u_l u_m` term against
/// `−(λ_l + λ_m) k u_l u_m`. Reactants have strictly lower category, so
/// λ_n is final when n is visited and the row stays lower triangular.
pub fn build_l_certificate(network: &ReactionNetwork) -> Result<LCertificate, CertificateError> {
    let forms = compliant_forms(network)?;
    let n = network.n_species();

    // association pairs grouped by product
    let mut feeds: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for r in network.reactions() {
        if r.reactants.len() != 2 || r.products.len() != 1 {
            continue;
        }
        if let (SpeciesRef::State(l), SpeciesRef::State(m), SpeciesRef::State(p)) =
            (r.reactants[0], r.reactants[1], r.products[0])
        {
            let (l, m) = if l <= m { (l, m) } else { (m, l) };
            feeds[p].push((l, m));
        }
    }
    for f in &mut feeds {
        f.sort_unstable();
    }

    let mut matrix = DMatrix::zeros(n, n);
    let mut combined = Vec::with_capacity(n);
    for i in 0..n {
        let mut lambda = vec![0.0; n];
        lambda[i] = 1.0;
        for p in (0..=i).rev() {
            if lambda[p] == 0.0 {
                continue;
            }
            for &(l, m) in &feeds[p] {
                if l >= p || m >= p {
                    return Err(CertificateError::Construction(format!(
                        "association into species {} has a reactant at or above it",
                        p + 1
                    )));
                }
                let half = 0.5 * lambda[p];
                lambda[l] = f64::max(lambda[l], half);
                lambda[m] = f64::max(lambda[m], half);
            }
        }
        let mut form = QuadraticForm::new();
        for (j, &lj) in lambda.iter().enumerate() {
            matrix[(i, j)] = lj;
            form.add_scaled(&forms[j], lj);
        }
        if let Some((m, s)) = positive_quadratic(&form).next() {
            return Err(CertificateError::Construction(format!(
                "row {} keeps positive term {s}·{}",
                i + 1,
                describe(m)
            )));
        }
        combined.push(form);
    }
    Ok(LCertificate { matrix, combined })
}

/// Σ_i r_i ≤ a(1 + Σ_i u_i): the quadratic part of the sum is
/// non-positive and `a` is read off the constant and linear parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SumBoundCertificate {
    pub sum: QuadraticForm,
    pub constant: Coefficient,
    pub linear: BTreeMap<usize, Coefficient>,
}

impl SumBoundCertificate {
    /// Smallest nonnegative `a` bounding the constant and every linear
    /// coefficient at the given rates and external levels.
    pub fn bound_constant(&self, k: &[f64], ext: &[f64]) -> f64 {
        self.linear
            .values()
            .map(|c| c.evaluate(k, ext))
            .chain(std::iter::once(self.constant.evaluate(k, ext)))
            .fold(0.0, f64::max)
    }
}

pub fn check_sum_bound(network: &ReactionNetwork) -> Result<SumBoundCertificate, CertificateError> {
    let forms = compliant_forms(network)?;
    let mut sum = QuadraticForm::new();
    for f in &forms {
        sum.add_scaled(f, 1.0);
    }
    if let Some((m, s)) = positive_quadratic(&sum).next() {
        return Err(CertificateError::SumBound(format!("positive term {s}·{}", describe(m))));
    }
    Ok(SumBoundCertificate { constant: sum.constant_part(), linear: sum.linear_part(), sum })
}

#[cfg(test)]
mod tests {
    use super::super::{fixtures, ReactionDecl, SpeciesDecl};
    use super::*;

    #[test]
    fn l_matrix_matches_printed_example() {
        let cert = build_l_certificate(&fixtures::three_protein()).unwrap();
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(9, 9, &[
            1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0,
            0.5, 0.0, 0.5, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 0.5, 0.0, 0.5, 0.5, 0.0, 1.0, 0.0,
            0.5, 0.5, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 1.0,
        ]);
        assert_eq!(cert.matrix, expected);
        assert!(cert.is_lower_triangular());
    }

    #[test]
    fn association_free_network_gives_identity() {
        let net = ReactionNetwork::new(
            vec![SpeciesDecl::new("A", &["A"]), SpeciesDecl::new("pA", &["A"])],
            vec![ReactionDecl::new(&["A"], &["pA"], "k1"), ReactionDecl::new(&["pA"], &["A"], "k2")],
        )
        .unwrap();
        let cert = build_l_certificate(&net).unwrap();
        assert_eq!(cert.matrix, DMatrix::identity(2, 2));
    }

    #[test]
    fn nested_complexes_propagate_weights() {
        // A + B → AB, AB + C → ABC: row ABC needs AB and C at 1/2, then A, B at 1/4.
        let net = ReactionNetwork::new(
            vec![
                SpeciesDecl::new("A", &["A"]),
                SpeciesDecl::new("B", &["B"]),
                SpeciesDecl::new("C", &["C"]),
                SpeciesDecl::new("AB", &["A", "B"]),
                SpeciesDecl::new("ABC", &["A", "B", "C"]),
            ],
            vec![ReactionDecl::new(&["A", "B"], &["AB"], "k1"), ReactionDecl::new(&["AB", "C"], &["ABC"], "k2")],
        )
        .unwrap();
        let cert = build_l_certificate(&net).unwrap();
        let row: Vec<f64> = cert.matrix.row(4).iter().copied().collect();
        assert_eq!(row, [0.25, 0.25, 0.5, 0.5, 1.0]);
        for form in &cert.combined {
            assert!(form.quadratic_part().values().all(Coefficient::is_nonpositive));
        }
    }

    #[test]
    fn quasi_positivity_certified_for_three_protein() {
        let cert = check_quasi_positivity(&fixtures::three_protein()).unwrap();
        // −k1·u1·u4, −k4·u1·u3, −k9·u1·u5
        assert_eq!(cert.negative_terms[0], 3);
    }

    #[test]
    fn spurious_negative_term_fails() {
        let mut forms = mass_action_forms(&fixtures::three_protein());
        forms[0].add_term(Monomial { rate: 0, state: vec![1], external: vec![] }, -1.0);
        let err = check_quasi_positivity_forms(&forms).unwrap_err();
        assert_eq!(err, CertificateError::QuasiPositivity { species: 1, term: "k1·u2".into() });
    }

    #[test]
    fn sum_bound_of_single_binding() {
        let cert = check_sum_bound(&fixtures::reversible_binding()).unwrap();
        let q = cert.sum.quadratic_part();
        assert_eq!(q.len(), 1);
        assert_eq!(q[&(0, 1)].evaluate(&[2.0, 7.0], &[]), -2.0);
        // kb·u_C enters the sum once (−1 + 1 + 1)
        assert_eq!(cert.bound_constant(&[2.0, 7.0], &[]), 7.0);
    }

    #[test]
    fn sum_bound_of_empty_network_is_zero() {
        let net = ReactionNetwork::new(vec![SpeciesDecl::new("A", &["A"])], vec![]).unwrap();
        let cert = check_sum_bound(&net).unwrap();
        assert_eq!(cert.bound_constant(&[], &[]), 0.0);
    }

    #[test]
    fn sum_bound_three_protein() {
        let cert = check_sum_bound(&fixtures::three_protein()).unwrap();
        assert!(cert.sum.quadratic_part().values().all(Coefficient::is_nonpositive));
    }
}
