//! Run configuration: `[section]` headers, `key = value` lines, `#`
//! comments, lists as comma-separated values.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use rdident_core::grid::MaskKind;
use rdident_core::optimizer::OptimizerSettings;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("config line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    /// File path, or `bundled:<name>`.
    pub network: String,
    pub mask: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub external: Option<PathBuf>,
    pub parameters: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Rectangle,
    Disk,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    /// Used when no mask file is given.
    pub shape: Shape,
    pub mask_kind: MaskKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    None,
    /// Pins the diffusivity of `Actin_on` at 1e-16.
    Factin,
}

/// How values missing from the config and parameter file are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    /// Log-uniform d, k; smooth random initial fields (seeded).
    Random,
    /// Geometric bound midpoints for d, k; arithmetic midpoint for fields.
    Midpoint,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Entry {
    pub value: Option<f64>,
    pub bounds: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub preset: Preset,
    pub start: Start,
    /// Keyed `d.<species>`, `k.<rate>` or `I.<species>`.
    pub entries: BTreeMap<String, Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub settings: OptimizerSettings,
    /// 0 keeps every forward level; otherwise the checkpoint stride.
    pub checkpoint_stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub seed: u64,
    pub dump_adjoint: bool,
    pub full_state: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub paths: Paths,
    pub domain: Domain,
    pub t_final: f64,
    pub nt: usize,
    /// Observed species; `None` uses the network's flags.
    pub observed: Option<Vec<String>>,
    pub parameters: Parameters,
    pub optimizer: Optimizer,
    pub output: Output,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut section = String::new();
        let mut raw: BTreeMap<(String, String), (usize, String)> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(ln, "unterminated section header"))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(err(ln, format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(ln, "expected `key = value`"))?;
            if section.is_empty() {
                return Err(err(ln, "key outside of any section"));
            }
            let key = key.trim().to_string();
            if raw
                .insert(
                    (section.clone(), key.clone()),
                    (ln, value.trim().to_string()),
                )
                .is_some()
            {
                return Err(err(ln, format!("duplicate key `{key}`")));
            }
        }
        Reader { raw }.finish()
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        Ok(Self::parse(&text)?)
    }
}

const SECTIONS: [&str; 7] = [
    "paths",
    "domain",
    "time",
    "observation",
    "parameters",
    "optimizer",
    "output",
];

struct Reader {
    raw: BTreeMap<(String, String), (usize, String)>,
}

impl Reader {
    fn take(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        self.raw.remove(&(section.to_string(), key.to_string()))
    }

    fn required(&mut self, section: &str, key: &str) -> Result<(usize, String), ConfigError> {
        self.take(section, key)
            .ok_or_else(|| err(0, format!("missing [{section}] {key}")))
    }

    fn number<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError> {
        v.parse()
            .map_err(|_| err(line, format!("`{key}`: cannot parse `{v}`")))
    }

    fn opt_number<T: std::str::FromStr>(
        &mut self,
        section: &str,
        key: &str,
        default: T,
    ) -> Result<T, ConfigError> {
        match self.take(section, key) {
            Some((ln, v)) => Self::number(ln, key, &v),
            None => Ok(default),
        }
    }

    fn flag(&mut self, section: &str, key: &str) -> Result<bool, ConfigError> {
        match self.take(section, key) {
            None => Ok(false),
            Some((_, v)) if v == "true" => Ok(true),
            Some((_, v)) if v == "false" => Ok(false),
            Some((ln, v)) => Err(err(
                ln,
                format!("`{key}`: expected true or false, found `{v}`"),
            )),
        }
    }

    fn finish(mut self) -> Result<RunConfig, ConfigError> {
        let path = |r: &mut Self, key: &str| r.take("paths", key).map(|(_, v)| PathBuf::from(v));
        let paths = Paths {
            network: self.required("paths", "network")?.1,
            mask: path(&mut self, "mask"),
            data: path(&mut self, "data"),
            external: path(&mut self, "external"),
            parameters: path(&mut self, "parameters"),
            output: path(&mut self, "output").unwrap_or_else(|| PathBuf::from("out")),
        };

        let (ln, v) = self.required("domain", "nx")?;
        let nx: usize = Self::number(ln, "nx", &v)?;
        let ny = self.opt_number("domain", "ny", nx)?;
        let (ln, v) = self.required("domain", "hx")?;
        let hx: f64 = Self::number(ln, "hx", &v)?;
        let hy = self.opt_number("domain", "hy", hx)?;
        let shape = match self.take("domain", "shape") {
            None => Shape::Rectangle,
            Some((_, v)) if v == "rectangle" => Shape::Rectangle,
            Some((_, v)) if v == "disk" => Shape::Disk,
            Some((ln, v)) => return Err(err(ln, format!("unknown shape `{v}`"))),
        };
        let mask_kind = match self.take("domain", "mask_kind") {
            None => MaskKind::Binary,
            Some((_, v)) if v == "binary" => MaskKind::Binary,
            Some((_, v)) if v == "signed_distance" => MaskKind::SignedDistance,
            Some((ln, v)) => return Err(err(ln, format!("unknown mask_kind `{v}`"))),
        };
        if nx == 0 || ny == 0 || !(hx > 0.0) || !(hy > 0.0) {
            return Err(err(ln, "grid sizes and spacings must be positive"));
        }
        if shape == Shape::Disk && nx != ny {
            return Err(err(0, "disk domains need nx = ny"));
        }
        let domain = Domain {
            nx,
            ny,
            hx,
            hy,
            shape,
            mask_kind,
        };

        let (ln, v) = self.required("time", "T")?;
        let t_final: f64 = Self::number(ln, "T", &v)?;
        let (ln, v) = self.required("time", "nt")?;
        let nt: usize = Self::number(ln, "nt", &v)?;
        if !(t_final > 0.0) || nt == 0 {
            return Err(err(ln, "T and nt must be positive"));
        }

        let observed = self.take("observation", "observed").map(|(_, v)| list(&v));

        let preset = match self.take("parameters", "preset") {
            None => Preset::None,
            Some((_, v)) if v == "none" => Preset::None,
            Some((_, v)) if v == "factin" => Preset::Factin,
            Some((ln, v)) => return Err(err(ln, format!("unknown preset `{v}`"))),
        };
        let start = match self.take("parameters", "start") {
            None => Start::Random,
            Some((_, v)) if v == "random" => Start::Random,
            Some((_, v)) if v == "midpoint" => Start::Midpoint,
            Some((ln, v)) => return Err(err(ln, format!("unknown start `{v}`"))),
        };
        let keys: Vec<String> = self
            .raw
            .keys()
            .filter(|(s, _)| s == "parameters")
            .map(|(_, k)| k.clone())
            .collect();
        let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
        for key in keys {
            let (ln, v) = self.take("parameters", &key).unwrap();
            if !(key.starts_with("d.") || key.starts_with("k.") || key.starts_with("I.")) {
                return Err(err(ln, format!("unknown parameter key `{key}`")));
            }
            if let Some(name) = key.strip_suffix(".bounds") {
                let parts = list(&v);
                if parts.len() != 2 {
                    return Err(err(ln, format!("`{key}`: expected `lower, upper`")));
                }
                let lo: f64 = Self::number(ln, &key, &parts[0])?;
                let hi: f64 = Self::number(ln, &key, &parts[1])?;
                if !(lo > 0.0 && lo <= hi) {
                    return Err(err(ln, format!("`{key}`: need 0 < lower ≤ upper")));
                }
                entries.entry(name.to_string()).or_default().bounds = Some((lo, hi));
            } else {
                let value: f64 = Self::number(ln, &key, &v)?;
                if !(value > 0.0) {
                    return Err(err(ln, format!("`{key}` must be positive")));
                }
                entries.entry(key).or_default().value = Some(value);
            }
        }

        let d = OptimizerSettings::default();
        let settings = OptimizerSettings {
            memory: self.opt_number("optimizer", "memory", d.memory)?,
            max_iterations: self.opt_number("optimizer", "max_iterations", d.max_iterations)?,
            tolerance: self.opt_number("optimizer", "tolerance", d.tolerance)?,
            sufficient_decrease: self.opt_number(
                "optimizer",
                "sufficient_decrease",
                d.sufficient_decrease,
            )?,
            shrink: self.opt_number("optimizer", "shrink", d.shrink)?,
            max_trials: self.opt_number("optimizer", "max_trials", d.max_trials)?,
            time_limit: match self.take("optimizer", "time_limit") {
                Some((ln, v)) => Some(Self::number(ln, "time_limit", &v)?),
                None => None,
            },
        };
        settings.validate().map_err(|m| err(0, m))?;
        let checkpoint_stride = self.opt_number("optimizer", "checkpoint_stride", 0)?;

        let output = Output {
            seed: self.opt_number("output", "seed", 0)?,
            dump_adjoint: self.flag("output", "dump_adjoint")?,
            full_state: self.flag("output", "full_state")?,
        };

        if let Some(((s, k), (ln, _))) = self.raw.iter().next() {
            return Err(err(*ln, format!("unknown key `{k}` in [{s}]")));
        }
        Ok(RunConfig {
            paths,
            domain,
            t_final,
            nt,
            observed,
            parameters: Parameters {
                preset,
                start,
                entries,
            },
            optimizer: Optimizer {
                settings,
                checkpoint_stride,
            },
            output,
        })
    }
}

fn list(v: &str) -> Vec<String> {
    v.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Canonical text; parses back to an equal config.
impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        let p = &self.paths;
        writeln!(s, "[paths]\nnetwork = {}", p.network)?;
        for (key, v) in [
            ("mask", &p.mask),
            ("data", &p.data),
            ("external", &p.external),
            ("parameters", &p.parameters),
        ] {
            if let Some(v) = v {
                writeln!(s, "{key} = {}", v.display())?;
            }
        }
        writeln!(s, "output = {}", p.output.display())?;

        let d = &self.domain;
        let shape = match d.shape {
            Shape::Rectangle => "rectangle",
            Shape::Disk => "disk",
        };
        let kind = match d.mask_kind {
            MaskKind::Binary => "binary",
            MaskKind::SignedDistance => "signed_distance",
        };
        writeln!(s, "\n[domain]\nnx = {}\nny = {}\nhx = {:?}\nhy = {:?}\nshape = {shape}\nmask_kind = {kind}", d.nx, d.ny, d.hx, d.hy)?;
        writeln!(s, "\n[time]\nT = {:?}\nnt = {}", self.t_final, self.nt)?;
        if let Some(obs) = &self.observed {
            writeln!(s, "\n[observation]\nobserved = {}", obs.join(", "))?;
        }

        let preset = match self.parameters.preset {
            Preset::None => "none",
            Preset::Factin => "factin",
        };
        let start = match self.parameters.start {
            Start::Random => "random",
            Start::Midpoint => "midpoint",
        };
        writeln!(s, "\n[parameters]\npreset = {preset}\nstart = {start}")?;
        for (name, e) in &self.parameters.entries {
            if let Some(v) = e.value {
                writeln!(s, "{name} = {v:?}")?;
            }
            if let Some((lo, hi)) = e.bounds {
                writeln!(s, "{name}.bounds = {lo:?}, {hi:?}")?;
            }
        }

        let o = &self.optimizer.settings;
        writeln!(
            s,
            "\n[optimizer]\nmemory = {}\nmax_iterations = {}\ntolerance = {:?}\nsufficient_decrease = {:?}\nshrink = {:?}\nmax_trials = {}",
            o.memory, o.max_iterations, o.tolerance, o.sufficient_decrease, o.shrink, o.max_trials
        )?;
        if let Some(t) = o.time_limit {
            writeln!(s, "time_limit = {t:?}")?;
        }
        writeln!(
            s,
            "checkpoint_stride = {}",
            self.optimizer.checkpoint_stride
        )?;
        let out = &self.output;
        write!(
            s,
            "\n[output]\nseed = {}\ndump_adjoint = {}\nfull_state = {}\n",
            out.seed, out.dump_adjoint, out.full_state
        )?;
        f.write_str(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = "
# twin run
[paths]
network = bundled:three_protein
output = out

[domain]
nx = 16
hx = 0.0625
shape = disk

[time]
T = 1
nt = 100

[parameters]
d.pA = 0.3
d.pA.bounds = 0.1, 1
k.k2.bounds = 1e-7, 1e-3

[optimizer]
max_iterations = 50
";

    #[test]
    fn sample_parses_with_defaults() {
        let c = RunConfig::parse(SAMPLE).unwrap();
        assert_eq!((c.domain.nx, c.domain.ny, c.domain.hy), (16, 16, 0.0625));
        assert_eq!(c.domain.shape, Shape::Disk);
        assert_eq!(
            c.parameters.entries["d.pA"],
            Entry {
                value: Some(0.3),
                bounds: Some((0.1, 1.0))
            }
        );
        assert_eq!(c.parameters.entries["k.k2"].value, None);
        assert_eq!(c.optimizer.settings.max_iterations, 50);
        assert_eq!(c.optimizer.settings.memory, 10);
        assert_eq!(c.output.seed, 0);
    }

    #[test]
    fn printed_config_parses_back() {
        let c = RunConfig::parse(SAMPLE).unwrap();
        assert_eq!(RunConfig::parse(&c.to_string()).unwrap(), c);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = SAMPLE.replace("nt = 100", "nt = many");
        assert_eq!(RunConfig::parse(&bad).unwrap_err().line, 14);
        let bad = SAMPLE.replace("[time]", "[timing]");
        assert!(RunConfig::parse(&bad)
            .unwrap_err()
            .message
            .contains("unknown section"));
        let bad = SAMPLE.replace("nt = 100", "nt = 100\nsteps = 3");
        assert!(RunConfig::parse(&bad)
            .unwrap_err()
            .message
            .contains("unknown key"));
        let bad = SAMPLE.replace("d.pA.bounds = 0.1, 1", "d.pA.bounds = 1, 0.1");
        assert!(RunConfig::parse(&bad).is_err());
    }

    proptest! {
        #[test]
        fn random_configs_round_trip(
            nx in 1usize..64,
            h in 1e-3f64..1.0,
            t in 1e-2f64..100.0,
            nt in 1usize..1000,
            seed in any::<u64>(),
            values in prop::collection::vec((1e-8f64..10.0, 1e-9f64..1e-8), 0..5),
            limit in prop::option::of(1.0f64..1e4),
        ) {
            let mut text = format!("[paths]\nnetwork = net.rxn\n[domain]\nnx = {nx}\nhx = {h:?}\n[time]\nT = {t:?}\nnt = {nt}\n[output]\nseed = {seed}\n[parameters]\n");
            for (i, (v, lo)) in values.iter().enumerate() {
                text.push_str(&format!("k.k{i} = {v:?}\nk.k{i}.bounds = {lo:?}, 10\n"));
            }
            if let Some(l) = limit {
                text.push_str(&format!("[optimizer]\ntime_limit = {l:?}\n"));
            }
            let c = RunConfig::parse(&text).unwrap();
            prop_assert_eq!(RunConfig::parse(&c.to_string()).unwrap(), c);
        }
    }
}
