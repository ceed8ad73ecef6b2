use std::collections::BTreeMap;
use std::fmt;

use super::{validate_assumptions, NetworkError, ReactionNetwork, SpeciesRef};

/// `k_rate · Π u_state · Π v_external`. Factor lists are sorted and may
/// repeat an index (self-association gives `u_A²`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Monomial {
    pub rate: usize,
    pub state: Vec<usize>,
    pub external: Vec<usize>,
}

impl Monomial {
    /// Degree in the state variables only; external fields are data.
    pub fn state_degree(&self) -> usize {
        self.state.len()
    }

    /// Total degree counting external factors.
    pub fn degree(&self) -> usize {
        self.state.len() + self.external.len()
    }

    pub fn contains_state(&self, i: usize) -> bool {
        self.state.contains(&i)
    }

    pub fn evaluate(&self, u: &[f64], k: &[f64], ext: &[f64]) -> f64 {
        let mut v = k[self.rate];
        for &i in &self.state {
            v *= u[i];
        }
        for &e in &self.external {
            v *= ext[e];
        }
        v
    }

    fn render(&self, network: &ReactionNetwork) -> String {
        let mut parts = vec![network.reactions()[self.rate].rate_name.clone()];
        parts.extend(self.external.iter().map(|&e| format!("[{}]", network.externals()[e].name)));
        parts.extend(self.state.iter().map(|&i| format!("[{}]", network.species()[i].name)));
        parts.join("·")
    }
}

/// A coefficient that is linear in `k` (and in external data):
/// `Σ scale · k_rate · Π v_external`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Coefficient {
    pub terms: BTreeMap<(usize, Vec<usize>), f64>,
}

impl Coefficient {
    fn add(&mut self, rate: usize, external: Vec<usize>, scale: f64) {
        let e = self.terms.entry((rate, external)).or_insert(0.0);
        *e += scale;
        if *e == 0.0 {
            self.terms.retain(|_, v| *v != 0.0);
        }
    }

    pub fn evaluate(&self, k: &[f64], ext: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|((rate, external), s)| s * k[*rate] * external.iter().map(|&e| ext[e]).product::<f64>())
            .sum()
    }

    /// Non-positive for every `k > 0` and nonnegative external data.
    pub fn is_nonpositive(&self) -> bool {
        self.terms.values().all(|&s| s <= 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
}

/// A reaction function r_i as a polynomial in the state, with coefficients
/// linear in the rate constants. Mass action under the kinetics
/// assumptions keeps the state degree at most two.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuadraticForm {
    terms: BTreeMap<Monomial, f64>,
}

impl QuadraticForm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_term(&mut self, monomial: Monomial, scale: f64) {
        let entry = self.terms.entry(monomial.clone()).or_insert(0.0);
        *entry += scale;
        if *entry == 0.0 {
            self.terms.remove(&monomial);
        }
    }

    /// `self += factor · other`.
    pub fn add_scaled(&mut self, other: &QuadraticForm, factor: f64) {
        if factor == 0.0 {
            return;
        }
        for (m, s) in &other.terms {
            self.add_term(m.clone(), factor * s);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, s)| (m, *s))
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Highest state degree among the terms (0 for the zero form).
    pub fn state_degree(&self) -> usize {
        self.terms.keys().map(Monomial::state_degree).max().unwrap_or(0)
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn constant_part(&self) -> Coefficient {
        let mut c = Coefficient::default();
        for (m, s) in self.terms().filter(|(m, _)| m.state.is_empty()) {
            c.add(m.rate, m.external.clone(), s);
        }
        c
    }

    pub fn linear_part(&self) -> BTreeMap<usize, Coefficient> {
        let mut out: BTreeMap<usize, Coefficient> = BTreeMap::new();
        for (m, s) in self.terms().filter(|(m, _)| m.state.len() == 1) {
            out.entry(m.state[0]).or_default().add(m.rate, m.external.clone(), s);
        }
        out
    }

    pub fn quadratic_part(&self) -> BTreeMap<(usize, usize), Coefficient> {
        let mut out: BTreeMap<(usize, usize), Coefficient> = BTreeMap::new();
        for (m, s) in self.terms().filter(|(m, _)| m.state.len() == 2) {
            out.entry((m.state[0], m.state[1])).or_default().add(m.rate, m.external.clone(), s);
        }
        out
    }

    pub fn evaluate(&self, u: &[f64], k: &[f64], ext: &[f64]) -> f64 {
        self.terms().map(|(m, s)| s * m.evaluate(u, k, ext)).sum()
    }

    pub fn display<'a>(&'a self, network: &'a ReactionNetwork) -> FormDisplay<'a> {
        FormDisplay { form: self, network }
    }
}

pub struct FormDisplay<'a> {
    form: &'a QuadraticForm,
    network: &'a ReactionNetwork,
}

impl fmt::Display for FormDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.form.is_empty() {
            return f.write_str("0");
        }
        for (n, (m, s)) in self.form.terms().enumerate() {
            let sign = match (n, s < 0.0) {
                (0, false) => "",
                (0, true) => "-",
                (_, false) => " + ",
                (_, true) => " - ",
            };
            let mag = s.abs();
            if mag == 1.0 {
                write!(f, "{sign}{}", m.render(self.network))?;
            } else {
                write!(f, "{sign}{mag}·{}", m.render(self.network))?;
            }
        }
        Ok(())
    }
}

/// Mass-action reaction functions without the compliance gate. Used by the
/// certificate checks, which must also inspect hand-built forms.
pub(crate) fn mass_action_forms(network: &ReactionNetwork) -> Vec<QuadraticForm> {
    let mut forms = vec![QuadraticForm::new(); network.n_species()];
    for r in network.reactions() {
        let mut state = Vec::new();
        let mut external = Vec::new();
        for s in &r.reactants {
            match *s {
                SpeciesRef::State(i) => state.push(i),
                SpeciesRef::External(e) => external.push(e),
            }
        }
        state.sort_unstable();
        external.sort_unstable();
        let flux = Monomial { rate: r.rate_index, state, external };
        for s in &r.reactants {
            if let SpeciesRef::State(i) = *s {
                forms[i].add_term(flux.clone(), -1.0);
            }
        }
        for p in &r.products {
            if let SpeciesRef::State(i) = *p {
                forms[i].add_term(flux.clone(), 1.0);
            }
        }
    }
    forms
}

/// Builds r_i for every state species. Each association `l + m → n` with
/// rate `k_a` contributes `−k_a u_l u_m` to r_l and r_m and `+k_a u_l u_m`
/// to r_n; dissociations and conversions contribute analogously.
pub fn build_reaction_functions(network: &ReactionNetwork) -> Result<Vec<QuadraticForm>, NetworkError> {
    let report = validate_assumptions(network);
    if !report.is_compliant() {
        return Err(NetworkError::NonCompliantNetwork(report.to_string().trim_end().to_string()));
    }
    Ok(mass_action_forms(network))
}
