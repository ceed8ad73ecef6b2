//! Problem data shared by the solvers: time axis, observation operator,
//! initial-value map, data, external fields, parameters and their bounds.

use thiserror::Error;

use crate::forward::ForwardSettings;
use crate::grid::SpatialGrid;
use crate::network::{Direction, Kinetics, NetworkError, ReactionNetwork};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: String, expected: usize, got: usize },
    #[error("invalid time axis: T = {t_final}, nt = {nt}")]
    InvalidTimeAxis { t_final: f64, nt: usize },
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("invalid bounds for {name}: [{lo}, {hi}]")]
    InvalidBounds { name: String, lo: f64, hi: f64 },
    #[error("{name} = {value} lies outside [{lo}, {hi}]")]
    OutOfBounds { name: String, value: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

fn expect_len(what: &str, expected: usize, got: usize) -> Result<(), ProblemError> {
    if expected == got {
        Ok(())
    } else {
        Err(ProblemError::DimensionMismatch { what: what.into(), expected, got })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeAxis {
    t_final: f64,
    nt: usize,
}

impl TimeAxis {
    pub fn new(t_final: f64, nt: usize) -> Result<Self, ProblemError> {
        if !(t_final > 0.0 && t_final.is_finite()) || nt == 0 {
            return Err(ProblemError::InvalidTimeAxis { t_final, nt });
        }
        Ok(TimeAxis { t_final, nt })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt()
    }
}

/// 0/1 selection F of the observed species; the complement carries the
/// unknown initial fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationOperator {
    n_species: usize,
    observed: Vec<usize>,
    unknown: Vec<usize>,
}

impl ObservationOperator {
    pub fn new(n_species: usize, mut observed: Vec<usize>) -> Result<Self, ProblemError> {
        observed.sort_unstable();
        if observed.windows(2).any(|w| w[0] == w[1]) {
            return Err(ProblemError::InvalidObservation("species observed twice".into()));
        }
        if let Some(&i) = observed.iter().find(|&&i| i >= n_species) {
            return Err(ProblemError::InvalidObservation(format!("index {i} out of range for {n_species} species")));
        }
        let unknown = (0..n_species).filter(|i| observed.binary_search(i).is_err()).collect();
        Ok(ObservationOperator { n_species, observed, unknown })
    }

    /// Species flagged `observed` in the network.
    pub fn from_network(network: &ReactionNetwork) -> Result<Self, ProblemError> {
        let obs = network.species().iter().enumerate().filter(|(_, s)| s.observed).map(|(i, _)| i).collect();
        Self::new(network.n_species(), obs)
    }

    pub fn n_species(&self) -> usize {
        self.n_species
    }

    pub fn n_observed(&self) -> usize {
        self.observed.len()
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn unknown(&self) -> &[usize] {
        &self.unknown
    }

    /// `F u` for one level (`N × nc` in, `N* × nc` out).
    pub fn observe(&self, u: &[f64], nc: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.observed.len() * nc);
        for &i in &self.observed {
            out.extend_from_slice(&u[i * nc..(i + 1) * nc]);
        }
        out
    }

    /// `Fᵀ(F u − c)` into `out` (`N × nc`).
    pub fn residual_into(&self, u: &[f64], c: &[f64], nc: usize, out: &mut [f64]) {
        out.fill(0.0);
        for (j, &i) in self.observed.iter().enumerate() {
            let (ui, cj) = (&u[i * nc..(i + 1) * nc], &c[j * nc..(j + 1) * nc]);
            for (o, (a, b)) in out[i * nc..(i + 1) * nc].iter_mut().zip(ui.iter().zip(cj)) {
                *o = a - b;
            }
        }
    }

    pub fn residual(&self, u: &[f64], c: &[f64], nc: usize) -> Result<Vec<f64>, ProblemError> {
        expect_len("state level", self.n_species * nc, u.len())?;
        expect_len("data level", self.observed.len() * nc, c.len())?;
        let mut out = vec![0.0; u.len()];
        self.residual_into(u, c, nc, &mut out);
        Ok(out)
    }

    /// `G(I)`: unknown species from `initial` (`q × nc`), observed species
    /// from the data at t = 0 (`N* × nc`).
    pub fn initial_state(&self, initial: &[f64], data0: &[f64], nc: usize) -> Vec<f64> {
        let mut u0 = vec![0.0; self.n_species * nc];
        for (j, &i) in self.unknown.iter().enumerate() {
            u0[i * nc..(i + 1) * nc].copy_from_slice(&initial[j * nc..(j + 1) * nc]);
        }
        for (j, &i) in self.observed.iter().enumerate() {
            u0[i * nc..(i + 1) * nc].copy_from_slice(&data0[j * nc..(j + 1) * nc]);
        }
        u0
    }
}

/// A stack of `nt + 1` levels of `n_fields × n_cells` values.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelStack {
    n_fields: usize,
    n_cells: usize,
    levels: Vec<Vec<f64>>,
}

impl LevelStack {
    pub fn new(n_fields: usize, n_cells: usize, levels: Vec<Vec<f64>>) -> Result<Self, ProblemError> {
        for l in &levels {
            expect_len("level", n_fields * n_cells, l.len())?;
        }
        Ok(LevelStack { n_fields, n_cells, levels })
    }

    pub fn zeros(n_fields: usize, n_cells: usize, n_levels: usize) -> Self {
        LevelStack { n_fields, n_cells, levels: vec![vec![0.0; n_fields * n_cells]; n_levels] }
    }

    pub fn n_fields(&self) -> usize {
        self.n_fields
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, n: usize) -> &[f64] {
        &self.levels[n]
    }

    pub fn level_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.levels[n]
    }

    pub fn field(&self, n: usize, f: usize) -> &[f64] {
        &self.levels[n][f * self.n_cells..(f + 1) * self.n_cells]
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn into_levels(self) -> Vec<Vec<f64>> {
        self.levels
    }

    /// Linear interpolation in time onto `n_levels` equally spaced levels
    /// spanning the same interval.
    pub fn resample(&self, n_levels: usize) -> Self {
        let src = self.levels.len();
        if src == n_levels || src == 0 {
            return self.clone();
        }
        let levels = (0..n_levels)
            .map(|n| {
                let s = if n_levels == 1 { 0.0 } else { n as f64 * (src - 1) as f64 / (n_levels - 1) as f64 };
                let lo = (s.floor() as usize).min(src - 1);
                let hi = (lo + 1).min(src - 1);
                let w = s - lo as f64;
                self.levels[lo].iter().zip(&self.levels[hi]).map(|(a, b)| (1.0 - w) * a + w * b).collect()
            })
            .collect();
        LevelStack { n_fields: self.n_fields, n_cells: self.n_cells, levels }
    }
}

/// Observed data `c` at every level (`N* × nc` each).
pub type DataSet = LevelStack;

/// Prescribed external fields (`n_ext × nc` each level). The step from
/// level n to n+1 uses level n+1.
pub type ExternalFields = LevelStack;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub fn new(lo: f64, hi: f64) -> Self {
        Bound { lo, hi }
    }

    pub fn pinned(&self) -> bool {
        self.lo == self.hi
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.lo).min(self.hi)
    }
}

/// Box bounds for θ = (d, k, I). Initial-field bounds are per unknown
/// species and apply to every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub d: Vec<Bound>,
    pub k: Vec<Bound>,
    pub initial: Vec<Bound>,
}

pub const MEMBRANE_D: Bound = Bound { lo: 1e-3, hi: 0.1 };
pub const CYTOSOL_D: Bound = Bound { lo: 0.1, hi: 1.0 };
pub const FORWARD_K: Bound = Bound { lo: 1e-3, hi: 10.0 };
pub const BACKWARD_K: Bound = Bound { lo: 1e-7, hi: 1e-3 };
pub const INITIAL: Bound = Bound { lo: 1e-4, hi: 1.0 };

impl Bounds {
    /// Default tables: slow membrane diffusion, fast cytosolic diffusion,
    /// forward and backward rate ranges, and the initial-value range.
    pub fn defaults(network: &ReactionNetwork, observation: &ObservationOperator) -> Self {
        let d = network.species().iter().map(|s| if s.membrane { MEMBRANE_D } else { CYTOSOL_D }).collect();
        let k = network
            .reactions()
            .iter()
            .map(|r| match r.direction {
                Direction::Forward => FORWARD_K,
                Direction::Backward => BACKWARD_K,
            })
            .collect();
        let initial = vec![INITIAL; observation.unknown().len()];
        Bounds { d, k, initial }
    }

    pub fn validate(&self, network: &ReactionNetwork) -> Result<(), ProblemError> {
        expect_len("d bounds", network.n_species(), self.d.len())?;
        expect_len("k bounds", network.n_rates(), self.k.len())?;
        let names = network
            .species()
            .iter()
            .map(|s| format!("d.{}", s.name))
            .chain(network.rate_names().map(|k| format!("k.{k}")))
            .chain((0..self.initial.len()).map(|j| format!("I[{j}]")));
        for (b, name) in self.d.iter().chain(&self.k).chain(&self.initial).zip(names) {
            if !(b.lo > 0.0 && b.lo <= b.hi && b.hi.is_finite()) {
                return Err(ProblemError::InvalidBounds { name, lo: b.lo, hi: b.hi });
            }
        }
        Ok(())
    }
}

/// θ = (d, k, I) with its bounds. `initial` holds the q unknown fields,
/// `q × nc`, in the order of `ObservationOperator::unknown`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub d: Vec<f64>,
    pub k: Vec<f64>,
    pub initial: Vec<f64>,
    pub bounds: Bounds,
}

impl ParameterSet {
    /// Elementwise clamp into the box.
    pub fn project(&mut self) {
        let nc = if self.bounds.initial.is_empty() { 0 } else { self.initial.len() / self.bounds.initial.len() };
        for (v, b) in self.d.iter_mut().zip(&self.bounds.d) {
            *v = b.clamp(*v);
        }
        for (v, b) in self.k.iter_mut().zip(&self.bounds.k) {
            *v = b.clamp(*v);
        }
        for (j, b) in self.bounds.initial.iter().enumerate() {
            for v in &mut self.initial[j * nc..(j + 1) * nc] {
                *v = b.clamp(*v);
            }
        }
    }

    pub fn check_bounds(&self) -> Result<(), ProblemError> {
        let check = |name: String, v: f64, b: &Bound| {
            if v >= b.lo && v <= b.hi {
                Ok(())
            } else {
                Err(ProblemError::OutOfBounds { name, value: v, lo: b.lo, hi: b.hi })
            }
        };
        for (i, (v, b)) in self.d.iter().zip(&self.bounds.d).enumerate() {
            check(format!("d[{i}]"), *v, b)?;
        }
        for (i, (v, b)) in self.k.iter().zip(&self.bounds.k).enumerate() {
            check(format!("k[{i}]"), *v, b)?;
        }
        let nc = if self.bounds.initial.is_empty() { 0 } else { self.initial.len() / self.bounds.initial.len() };
        for (j, b) in self.bounds.initial.iter().enumerate() {
            for v in &self.initial[j * nc..(j + 1) * nc] {
                check(format!("I[{j}]"), *v, b)?;
            }
        }
        Ok(())
    }
}

/// Everything except θ: network, discretisation, observation and data.
#[derive(Debug, Clone)]
pub struct IdentificationProblem {
    pub network: ReactionNetwork,
    pub kinetics: Kinetics,
    pub grid: SpatialGrid,
    pub time: TimeAxis,
    pub observation: ObservationOperator,
    pub data: DataSet,
    pub external: ExternalFields,
    pub forward: ForwardSettings,
}

impl IdentificationProblem {
    pub fn new(
        network: ReactionNetwork,
        grid: SpatialGrid,
        time: TimeAxis,
        observation: ObservationOperator,
        data: DataSet,
        external: ExternalFields,
    ) -> Result<Self, ProblemError> {
        let kinetics = Kinetics::new(&network)?;
        let nc = grid.n_active();
        expect_len("observation species", network.n_species(), observation.n_species())?;
        expect_len("data fields", observation.n_observed(), data.n_fields())?;
        expect_len("data cells", nc, data.n_cells())?;
        expect_len("data levels", time.nt() + 1, data.n_levels())?;
        expect_len("external fields", network.n_externals(), external.n_fields())?;
        if network.n_externals() > 0 {
            expect_len("external cells", nc, external.n_cells())?;
            expect_len("external levels", time.nt() + 1, external.n_levels())?;
        }
        Ok(IdentificationProblem {
            network,
            kinetics,
            grid,
            time,
            observation,
            data,
            external,
            forward: ForwardSettings::default(),
        })
    }

    pub fn n_cells(&self) -> usize {
        self.grid.n_active()
    }

    /// External values for the step ending at `level`.
    pub fn external_at(&self, level: usize) -> &[f64] {
        if self.external.n_fields() == 0 {
            &[]
        } else {
            self.external.level(level)
        }
    }

    pub fn default_bounds(&self) -> Bounds {
        Bounds::defaults(&self.network, &self.observation)
    }

    pub fn check_parameters(&self, theta: &ParameterSet) -> Result<(), ProblemError> {
        expect_len("d", self.network.n_species(), theta.d.len())?;
        expect_len("k", self.network.n_rates(), theta.k.len())?;
        expect_len("initial fields", self.observation.unknown().len() * self.n_cells(), theta.initial.len())?;
        theta.bounds.validate(&self.network)?;
        expect_len("initial bounds", self.observation.unknown().len(), theta.bounds.initial.len())
    }

    /// u⁰ = G(I).
    pub fn initial_state(&self, theta: &ParameterSet) -> Vec<f64> {
        self.observation.initial_state(&theta.initial, self.data.level(0), self.n_cells())
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures;

    #[test]
    fn residual_selects_observed() {
        let f = ObservationOperator::new(3, vec![2]).unwrap();
        let u = [1.0, 1.0, 7.0];
        let r = f.residual(&u, &[2.0], 1).unwrap();
        assert_eq!(r, [0.0, 0.0, 5.0]);
        assert_eq!(f.residual(&u, &[7.0], 1).unwrap(), [0.0; 3]);
        assert!(f.residual(&u, &[7.0, 1.0], 1).is_err());
    }

    #[test]
    fn residual_matches_dense_selection() {
        let f = ObservationOperator::new(4, vec![3, 1]).unwrap();
        let nc = 2;
        let u: Vec<f64> = (0..8).map(|v| v as f64 * 0.5).collect();
        let c = [0.1, 0.2, 0.3, 0.4];
        let mut fm = [[0.0; 4]; 2];
        fm[0][1] = 1.0;
        fm[1][3] = 1.0;
        let got = f.residual(&u, &c, nc).unwrap();
        for cell in 0..nc {
            for i in 0..4 {
                let mut want = 0.0;
                for j in 0..2 {
                    let fu: f64 = (0..4).map(|l| fm[j][l] * u[l * nc + cell]).sum();
                    want += fm[j][i] * (fu - c[j * nc + cell]);
                }
                assert_eq!(got[i * nc + cell], want);
            }
        }
    }

    #[test]
    fn initial_map_injects_unknowns() {
        // q = 2 unknown of N = 3
        let f = ObservationOperator::new(3, vec![2]).unwrap();
        assert_eq!(f.unknown(), [0, 1]);
        let u0 = f.initial_state(&[0.1, 0.2], &[0.9], 1);
        assert_eq!(u0, [0.1, 0.2, 0.9]);
        assert!(ObservationOperator::new(3, vec![1, 1]).is_err());
        assert!(ObservationOperator::new(3, vec![3]).is_err());
    }

    #[test]
    fn default_tables() {
        let net = fixtures::three_protein();
        let f = ObservationOperator::from_network(&net).unwrap();
        let b = Bounds::defaults(&net, &f);
        assert_eq!(b.d[0], CYTOSOL_D);
        assert_eq!(b.k[0], FORWARD_K);
        assert_eq!(b.k[1], BACKWARD_K);
        assert_eq!(b.initial.len(), 9 - f.n_observed());
        b.validate(&net).unwrap();
    }

    #[test]
    fn projection_is_idempotent() {
        let bounds = Bounds { d: vec![Bound::new(0.1, 1.0)], k: vec![Bound::new(1e-3, 10.0)], initial: vec![INITIAL] };
        let mut theta = ParameterSet { d: vec![5.0], k: vec![1e-9], initial: vec![0.5, 2.0, -1.0], bounds };
        assert!(theta.check_bounds().is_err());
        theta.project();
        assert_eq!(theta.d, [1.0]);
        assert_eq!(theta.k, [1e-3]);
        assert_eq!(theta.initial, [0.5, 1.0, 1e-4]);
        let once = theta.clone();
        theta.project();
        assert_eq!(theta, once);
        theta.check_bounds().unwrap();
    }

    #[test]
    fn resample_is_linear() {
        let s = LevelStack::new(1, 1, vec![vec![0.0], vec![2.0], vec![4.0]]).unwrap();
        let r = s.resample(5);
        let v: Vec<f64> = r.levels().iter().map(|l| l[0]).collect();
        assert_eq!(v, [0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn time_axis_validation() {
        assert!(TimeAxis::new(0.0, 10).is_err());
        assert!(TimeAxis::new(1.0, 0).is_err());
        assert_eq!(TimeAxis::new(1.0, 4).unwrap().dt(), 0.25);
    }
}
