//! Parameter files: one `name = value` per line. Diffusivities and rate
//! constants are scalars annotated with their natural log; initial fields
//! are comma lists over the active cells in row-major order.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{bail, Context};
use rdident_core::problem::{IdentificationProblem, ParameterSet};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ThetaValues {
    /// `d.<species>` and `k.<rate>`.
    pub scalars: BTreeMap<String, f64>,
    /// `I.<species>`.
    pub fields: BTreeMap<String, Vec<f64>>,
}

impl ThetaValues {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut out = ThetaValues::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (name, value) = line
                .split_once('=')
                .with_context(|| format!("parameter line {}: expected `name = value`", i + 1))?;
            let name = name.trim().to_string();
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .with_context(|| format!("parameter line {}: bad number `{}`", i + 1, s.trim()))
            };
            if name.starts_with("I.") {
                let values = value
                    .split(',')
                    .map(parse)
                    .collect::<anyhow::Result<Vec<_>>>()?;
                out.fields.insert(name, values);
            } else if name.starts_with("d.") || name.starts_with("k.") {
                out.scalars.insert(name, parse(value)?);
            } else {
                bail!("parameter line {}: unknown name `{name}`", i + 1);
            }
        }
        Ok(out)
    }

    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }
}

/// Text for θ; `observed_initial` (one field per observed species) is
/// appended when given so a simulated truth can be replayed.
pub fn format_theta(
    problem: &IdentificationProblem,
    theta: &ParameterSet,
    observed_initial: Option<&[f64]>,
) -> String {
    let net = &problem.network;
    let nc = problem.n_cells();
    let mut s = String::from(
        "# diffusivities and rate constants (natural log noted); initial fields per active cell\n",
    );
    for (sp, v) in net.species().iter().zip(&theta.d) {
        writeln!(s, "d.{} = {v:e}  # log = {:.6}", sp.name, v.ln()).unwrap();
    }
    for (rate, v) in net.rate_names().zip(&theta.k) {
        writeln!(s, "k.{rate} = {v:e}  # log = {:.6}", v.ln()).unwrap();
    }
    let mut field = |i: usize, values: &[f64]| {
        let list: Vec<String> = values.iter().map(|v| format!("{v:e}")).collect();
        writeln!(s, "I.{} = {}", net.species()[i].name, list.join(", ")).unwrap();
    };
    for (j, &i) in problem.observation.unknown().iter().enumerate() {
        field(i, &theta.initial[j * nc..(j + 1) * nc]);
    }
    if let Some(obs) = observed_initial {
        for (j, &i) in problem.observation.observed().iter().enumerate() {
            field(i, &obs[j * nc..(j + 1) * nc]);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn values_survive_text(d in prop::collection::vec(1e-16f64..1e3, 1..6), cells in prop::collection::vec(0.0f64..1.0, 1..20)) {
            let mut text = String::new();
            for (i, v) in d.iter().enumerate() {
                text.push_str(&format!("d.S{i} = {v:e}  # log = {:.3}\n", v.ln()));
            }
            let list: Vec<String> = cells.iter().map(|v| format!("{v:e}")).collect();
            text.push_str(&format!("I.S0 = {}\n", list.join(", ")));
            let t = ThetaValues::parse(&text).unwrap();
            for (i, v) in d.iter().enumerate() {
                prop_assert_eq!(t.scalars[&format!("d.S{i}")], *v);
            }
            prop_assert_eq!(&t.fields["I.S0"], &cells);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(ThetaValues::parse("d.A 3").is_err());
        assert!(ThetaValues::parse("x.A = 3").is_err());
        assert!(ThetaValues::parse("k.k1 = fast").is_err());
    }
}
