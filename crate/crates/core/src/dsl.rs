//! Line-oriented `.rxn` network format.
//!
//! ```text
//! # comment
//! species pA {A} observed
//! species B {B}
//! species pAB {A,B} membrane
//! rxn pA + B <=> pAB : k1, k2
//! ```
//!
//! Species declarations come first. A reversible statement desugars to a
//! forward reaction followed by its reverse, taking consecutive rate indices.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::network::{NetworkError, ReactionDecl, ReactionNetwork, SpeciesDecl};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DslError {
    #[error("line {line}, column {col}: expected {expected}, found {found}")]
    Syntax { line: usize, col: usize, expected: String, found: String },
    #[error("line {line}, column {col}: unknown species `{name}`")]
    UnknownSpecies { line: usize, col: usize, name: String },
    #[error("line {line}: duplicate species `{name}`")]
    DuplicateSpecies { line: usize, name: String },
    #[error("line {line}: {count} terms on one side, at most 2 allowed")]
    Arity { line: usize, count: usize },
    #[error("line {line}: rate constant `{name}` already used")]
    DuplicateRate { line: usize, name: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Source position of a statement, 1-based.
#[derive(Debug, Clone, Copy, Default)]
pub struct Span {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone)]
pub struct SpeciesStatement {
    pub name: String,
    pub composition: Vec<String>,
    pub external: bool,
    pub observed: bool,
    pub membrane: bool,
    pub span: Span,
}

impl SpeciesStatement {
    fn key(&self) -> (&str, Vec<&str>, bool, bool, bool) {
        let mut comp: Vec<&str> = self.composition.iter().map(String::as_str).collect();
        comp.sort_unstable();
        (&self.name, comp, self.external, self.observed, self.membrane)
    }
}

#[derive(Debug, Clone)]
pub struct ReactionStatement {
    pub lhs: Vec<String>,
    pub rhs: Vec<String>,
    pub reversible: bool,
    /// One rate name, or two for a reversible statement (forward, backward).
    pub rates: Vec<String>,
    pub span: Span,
}

impl ReactionStatement {
    fn key(&self) -> (&[String], &[String], bool, &[String]) {
        (&self.lhs, &self.rhs, self.reversible, &self.rates)
    }
}

#[derive(Debug, Clone, Default)]
pub struct NetworkDocument {
    pub species: Vec<SpeciesStatement>,
    pub reactions: Vec<ReactionStatement>,
}

/// Structural equality: spans and species declaration order are ignored,
/// reaction order is significant since it fixes rate indices.
impl PartialEq for NetworkDocument {
    fn eq(&self, other: &Self) -> bool {
        let species = |d: &'_ NetworkDocument| {
            let mut v: Vec<_> = d.species.iter().map(SpeciesStatement::key).map(|k| format!("{k:?}")).collect();
            v.sort();
            v
        };
        self.reactions.len() == other.reactions.len()
            && self.reactions.iter().zip(&other.reactions).all(|(a, b)| a.key() == b.key())
            && species(self) == species(other)
    }
}

impl NetworkDocument {
    /// Number of rate constants after desugaring.
    pub fn n_rates(&self) -> usize {
        self.reactions.iter().map(|r| r.rates.len()).sum()
    }

    pub fn to_network(&self) -> Result<ReactionNetwork, NetworkError> {
        let species = self
            .species
            .iter()
            .map(|s| SpeciesDecl {
                name: s.name.clone(),
                composition: s.composition.clone(),
                external: s.external,
                observed: s.observed,
                membrane: s.membrane,
            })
            .collect();
        let mut reactions = Vec::with_capacity(self.n_rates());
        for st in &self.reactions {
            let lhs: Vec<&str> = st.lhs.iter().map(String::as_str).collect();
            let rhs: Vec<&str> = st.rhs.iter().map(String::as_str).collect();
            reactions.push(ReactionDecl::new(&lhs, &rhs, st.rates[0].clone()));
            if st.reversible {
                reactions.push(ReactionDecl::new(&rhs, &lhs, st.rates[1].clone()).backward());
            }
        }
        ReactionNetwork::new(species, reactions)
    }
}

/// Parses and builds the network in one go.
pub fn parse_network(text: &str) -> Result<ReactionNetwork, DslError> {
    Ok(parse(text)?.to_network()?)
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '/' | '.' | '\'' | '-')
}

struct Cursor {
    chars: Vec<char>,
    pos: usize,
    line: usize,
}

impl Cursor {
    fn new(src: &str, line: usize) -> Self {
        Cursor { chars: src.chars().collect(), pos: 0, line }
    }

    fn col(&self) -> usize {
        self.pos + 1
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.chars.len()
    }

    fn peek_str(&self) -> String {
        if self.pos >= self.chars.len() {
            "end of line".into()
        } else {
            let rest: String = self.chars[self.pos..].iter().take(12).collect();
            format!("`{}`", rest.split_whitespace().next().unwrap_or(&rest))
        }
    }

    fn error(&self, expected: &str) -> DslError {
        DslError::Syntax { line: self.line, col: self.col(), expected: expected.into(), found: self.peek_str() }
    }

    fn ident(&mut self, what: &str) -> Result<(String, usize), DslError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.chars.len() {
            let c = self.chars[self.pos];
            if c == '-' && self.chars.get(self.pos + 1) == Some(&'>') {
                break;
            }
            if !is_ident_char(c) {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.error(what));
        }
        Ok((self.chars[start..self.pos].iter().collect(), start + 1))
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        let t: Vec<char> = token.chars().collect();
        if self.chars[self.pos..].starts_with(&t) {
            self.pos += t.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) -> Result<(), DslError> {
        if self.eat(token) {
            Ok(())
        } else {
            Err(self.error(&format!("`{token}`")))
        }
    }
}

pub fn parse(text: &str) -> Result<NetworkDocument, DslError> {
    let mut doc = NetworkDocument::default();
    let mut declared: HashSet<String> = HashSet::new();
    let mut rates: HashMap<String, usize> = HashMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let line = match line.find('#') {
            Some(p) => &line[..p],
            None => line,
        };
        let mut cur = Cursor::new(line, line_no);
        if cur.at_end() {
            continue;
        }
        let (keyword, col) = cur.ident("`species` or `rxn`")?;
        let span = Span { line: line_no, col };
        match keyword.as_str() {
            "species" => {
                if !doc.reactions.is_empty() {
                    return Err(DslError::Syntax {
                        line: line_no,
                        col,
                        expected: "`rxn` (species must be declared before reactions)".into(),
                        found: "`species`".into(),
                    });
                }
                let (name, _) = cur.ident("species name")?;
                cur.expect("{")?;
                let mut composition = vec![cur.ident("base protein")?.0];
                while cur.eat(",") {
                    composition.push(cur.ident("base protein")?.0);
                }
                cur.expect("}")?;
                let (mut external, mut observed, mut membrane) = (false, false, false);
                while !cur.at_end() {
                    let (flag, fcol) = cur.ident("flag")?;
                    match flag.as_str() {
                        "external" => external = true,
                        "observed" => observed = true,
                        "membrane" => membrane = true,
                        other => {
                            return Err(DslError::Syntax {
                                line: line_no,
                                col: fcol,
                                expected: "`external`, `observed` or `membrane`".into(),
                                found: format!("`{other}`"),
                            })
                        }
                    }
                }
                if !declared.insert(name.clone()) {
                    return Err(DslError::DuplicateSpecies { line: line_no, name });
                }
                doc.species.push(SpeciesStatement { name, composition, external, observed, membrane, span });
            }
            "rxn" => {
                let side = |cur: &mut Cursor| -> Result<Vec<String>, DslError> {
                    let mut terms = Vec::new();
                    loop {
                        let (name, ncol) = cur.ident("species name")?;
                        if !declared.contains(&name) {
                            return Err(DslError::UnknownSpecies { line: line_no, col: ncol, name });
                        }
                        terms.push(name);
                        if !cur.eat("+") {
                            break;
                        }
                    }
                    if terms.len() > 2 {
                        return Err(DslError::Arity { line: line_no, count: terms.len() });
                    }
                    Ok(terms)
                };
                let lhs = side(&mut cur)?;
                let reversible = if cur.eat("<=>") {
                    true
                } else if cur.eat("->") {
                    false
                } else {
                    return Err(cur.error("`+`, `->` or `<=>`"));
                };
                let rhs = side(&mut cur)?;
                cur.expect(":")?;
                let mut names = vec![cur.ident("rate constant")?.0];
                if reversible {
                    cur.expect(",")?;
                    names.push(cur.ident("backward rate constant")?.0);
                }
                if !cur.at_end() {
                    return Err(cur.error("end of line"));
                }
                for n in &names {
                    if rates.insert(n.clone(), line_no).is_some() {
                        return Err(DslError::DuplicateRate { line: line_no, name: n.clone() });
                    }
                }
                doc.reactions.push(ReactionStatement { lhs, rhs, reversible, rates: names, span });
            }
            _ => {
                return Err(DslError::Syntax {
                    line: line_no,
                    col,
                    expected: "`species` or `rxn`".into(),
                    found: format!("`{keyword}`"),
                })
            }
        }
    }
    Ok(doc)
}

/// Canonical text: species by category then name, reactions in rate order,
/// LF line endings.
pub fn serialize(doc: &NetworkDocument) -> String {
    let mut species: Vec<&SpeciesStatement> = doc.species.iter().collect();
    species.sort_by(|a, b| a.composition.len().cmp(&b.composition.len()).then_with(|| a.name.cmp(&b.name)));
    let mut out = String::new();
    for s in species {
        let mut comp = s.composition.clone();
        comp.sort();
        write!(out, "species {} {{{}}}", s.name, comp.join(",")).unwrap();
        for (on, flag) in [(s.external, "external"), (s.observed, "observed"), (s.membrane, "membrane")] {
            if on {
                write!(out, " {flag}").unwrap();
            }
        }
        out.push('\n');
    }
    for r in &doc.reactions {
        let arrow = if r.reversible { "<=>" } else { "->" };
        writeln!(out, "rxn {} {arrow} {} : {}", r.lhs.join(" + "), r.rhs.join(" + "), r.rates.join(", ")).unwrap();
    }
    out
}
