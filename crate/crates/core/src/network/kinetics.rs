//! Compiled pointwise evaluation of the reaction functions and their
//! derivatives. The hot loops of the solvers call these once per grid cell,
//! so everything works on plain slices without allocation.

use thiserror::Error;

use super::{validate_assumptions, NetworkError, ReactionNetwork, SpeciesRef};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KineticsError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
}

#[derive(Debug, Clone)]
struct Flux {
    rate: usize,
    /// State reactants with multiplicity (at most two).
    state: Vec<usize>,
    external: Vec<usize>,
    products: Vec<usize>,
}

impl Flux {
    /// Flux divided by the rate constant.
    #[inline]
    fn basis(&self, u: &[f64], ext: &[f64]) -> f64 {
        let mut v = 1.0;
        for &i in &self.state {
            v *= u[i];
        }
        for &e in &self.external {
            v *= ext[e];
        }
        v
    }

    #[inline]
    fn ext_factor(&self, ext: &[f64]) -> f64 {
        self.external.iter().map(|&e| ext[e]).product()
    }
}

/// Mass-action kinetics of a compliant network, ready for numeric work.
#[derive(Debug, Clone)]
pub struct Kinetics {
    n: usize,
    m: usize,
    n_ext: usize,
    fluxes: Vec<Flux>,
}

impl Kinetics {
    pub fn new(network: &ReactionNetwork) -> Result<Self, NetworkError> {
        let report = validate_assumptions(network);
        if !report.is_compliant() {
            return Err(NetworkError::NonCompliantNetwork(report.to_string().trim_end().to_string()));
        }
        let fluxes = network
            .reactions()
            .iter()
            .map(|r| {
                let mut state = Vec::new();
                let mut external = Vec::new();
                for s in &r.reactants {
                    match *s {
                        SpeciesRef::State(i) => state.push(i),
                        SpeciesRef::External(e) => external.push(e),
                    }
                }
                let products = r
                    .products
                    .iter()
                    .filter_map(|p| match *p {
                        SpeciesRef::State(i) => Some(i),
                        SpeciesRef::External(_) => None,
                    })
                    .collect();
                Flux { rate: r.rate_index, state, external, products }
            })
            .collect();
        Ok(Kinetics { n: network.n_species(), m: network.n_rates(), n_ext: network.n_externals(), fluxes })
    }

    pub fn n_species(&self) -> usize {
        self.n
    }

    pub fn n_rates(&self) -> usize {
        self.m
    }

    pub fn n_externals(&self) -> usize {
        self.n_ext
    }

    /// Checks input lengths once before a batch of unchecked calls.
    pub fn check_dims(&self, u: usize, k: usize, ext: usize) -> Result<(), KineticsError> {
        let check = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(KineticsError::DimensionMismatch { what, expected, got })
            }
        };
        check("u", self.n, u)?;
        check("k", self.m, k)?;
        check("ext", self.n_ext, ext)
    }

    /// r(u, k) into `out` (length N).
    pub fn rates_into(&self, u: &[f64], k: &[f64], ext: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for f in &self.fluxes {
            let w = k[f.rate] * f.basis(u, ext);
            for &i in &f.state {
                out[i] -= w;
            }
            for &i in &f.products {
                out[i] += w;
            }
        }
    }

    /// Production/loss split r_i = p_i − u_i·q_i with p, q ≥ 0 for u ≥ 0.
    /// Every consumption term carries its own factor u_i, so q_i is the term
    /// with one u_i removed.
    pub fn split_into(&self, u: &[f64], k: &[f64], ext: &[f64], p: &mut [f64], q: &mut [f64]) {
        p.fill(0.0);
        q.fill(0.0);
        for f in &self.fluxes {
            let kv = k[f.rate] * f.ext_factor(ext);
            match f.state.as_slice() {
                [] => {
                    for &i in &f.products {
                        p[i] += kv;
                    }
                }
                [a] => {
                    q[*a] += kv;
                    let w = kv * u[*a];
                    for &i in &f.products {
                        p[i] += w;
                    }
                }
                [a, b] => {
                    q[*a] += kv * u[*b];
                    q[*b] += kv * u[*a];
                    let w = kv * u[*a] * u[*b];
                    for &i in &f.products {
                        p[i] += w;
                    }
                }
                _ => unreachable!("compliant networks have at most two reactants"),
            }
        }
    }

    /// ∂r/∂u, row-major N×N: `out[i*N + j] = ∂r_i/∂u_j`.
    pub fn jacobian_u_into(&self, u: &[f64], k: &[f64], ext: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.fill(0.0);
        for f in &self.fluxes {
            let kv = k[f.rate] * f.ext_factor(ext);
            let mut add = |j: usize, d: f64| {
                for &i in &f.state {
                    out[i * n + j] -= d;
                }
                for &i in &f.products {
                    out[i * n + j] += d;
                }
            };
            match f.state.as_slice() {
                [] => {}
                [a] => add(*a, kv),
                [a, b] => {
                    add(*a, kv * u[*b]);
                    add(*b, kv * u[*a]);
                }
                _ => unreachable!(),
            }
        }
    }

    /// ∂r/∂k, row-major N×M: `out[i*M + m] = ∂r_i/∂k_m`.
    pub fn jacobian_k_into(&self, u: &[f64], ext: &[f64], out: &mut [f64]) {
        let m = self.m;
        out.fill(0.0);
        for f in &self.fluxes {
            let b = f.basis(u, ext);
            for &i in &f.state {
                out[i * m + f.rate] -= b;
            }
            for &i in &f.products {
                out[i * m + f.rate] += b;
            }
        }
    }

    /// `out += (∂r/∂u)ᵀ ζ`.
    pub fn jacobian_u_transpose_add(&self, u: &[f64], k: &[f64], ext: &[f64], zeta: &[f64], out: &mut [f64]) {
        for f in &self.fluxes {
            let kv = k[f.rate] * f.ext_factor(ext);
            let net: f64 = f.products.iter().map(|&i| zeta[i]).sum::<f64>() - f.state.iter().map(|&i| zeta[i]).sum::<f64>();
            match f.state.as_slice() {
                [] => {}
                [a] => out[*a] += kv * net,
                [a, b] => {
                    out[*a] += kv * u[*b] * net;
                    out[*b] += kv * u[*a] * net;
                }
                _ => unreachable!(),
            }
        }
    }

    /// `out += (∂r/∂u) v`.
    pub fn jacobian_u_apply_add(&self, u: &[f64], k: &[f64], ext: &[f64], v: &[f64], out: &mut [f64]) {
        for f in &self.fluxes {
            let kv = k[f.rate] * f.ext_factor(ext);
            let d = match f.state.as_slice() {
                [] => 0.0,
                [a] => kv * v[*a],
                [a, b] => kv * (u[*b] * v[*a] + u[*a] * v[*b]),
                _ => unreachable!(),
            };
            for &i in &f.state {
                out[i] -= d;
            }
            for &i in &f.products {
                out[i] += d;
            }
        }
    }

    /// `out += scale · (∂r/∂k)ᵀ ζ`, length M.
    pub fn jacobian_k_transpose_add(&self, u: &[f64], ext: &[f64], zeta: &[f64], scale: f64, out: &mut [f64]) {
        for f in &self.fluxes {
            let net: f64 = f.products.iter().map(|&i| zeta[i]).sum::<f64>() - f.state.iter().map(|&i| zeta[i]).sum::<f64>();
            out[f.rate] += scale * f.basis(u, ext) * net;
        }
    }

    /// Checked r(u, k).
    pub fn evaluate(&self, u: &[f64], k: &[f64], ext: &[f64]) -> Result<Vec<f64>, KineticsError> {
        self.check_dims(u.len(), k.len(), ext.len())?;
        let mut out = vec![0.0; self.n];
        self.rates_into(u, k, ext, &mut out);
        Ok(out)
    }

    /// Checked ∂r/∂u as an N×N row-major matrix.
    pub fn jacobian_u(&self, u: &[f64], k: &[f64], ext: &[f64]) -> Result<Vec<f64>, KineticsError> {
        self.check_dims(u.len(), k.len(), ext.len())?;
        let mut out = vec![0.0; self.n * self.n];
        self.jacobian_u_into(u, k, ext, &mut out);
        Ok(out)
    }

    /// Checked ∂r/∂k as an N×M row-major matrix.
    pub fn jacobian_k(&self, u: &[f64], k: &[f64], ext: &[f64]) -> Result<Vec<f64>, KineticsError> {
        self.check_dims(u.len(), k.len(), ext.len())?;
        let mut out = vec![0.0; self.n * self.m];
        self.jacobian_k_into(u, ext, &mut out);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{fixtures, ReactionDecl, SpeciesDecl};
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Term-by-term oracle straight from the reaction list.
    fn oracle(net: &ReactionNetwork, u: &[f64], k: &[f64], ext: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; net.n_species()];
        for rx in net.reactions() {
            let mut w = k[rx.rate_index];
            for s in &rx.reactants {
                w *= match *s {
                    SpeciesRef::State(i) => u[i],
                    SpeciesRef::External(e) => ext[e],
                };
            }
            for s in &rx.reactants {
                if let SpeciesRef::State(i) = *s {
                    r[i] -= w;
                }
            }
            for s in &rx.products {
                if let SpeciesRef::State(i) = *s {
                    r[i] += w;
                }
            }
        }
        r
    }

    fn ligand_network() -> ReactionNetwork {
        ReactionNetwork::new(
            vec![
                SpeciesDecl::new("R", &["R"]),
                SpeciesDecl::new("L", &["L"]).external(),
                SpeciesDecl::new("RL", &["R", "L"]),
                SpeciesDecl::new("AA", &["R", "R"]),
            ],
            vec![
                ReactionDecl::new(&["L", "R"], &["RL"], "k1"),
                ReactionDecl::new(&["RL"], &["R"], "k2"),
                ReactionDecl::new(&["R", "R"], &["AA"], "k3"),
                ReactionDecl::new(&["AA"], &["R", "R"], "k4"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn r4_hand_value_and_derivatives() {
        let kin = Kinetics::new(&fixtures::three_protein()).unwrap();
        let mut u = vec![0.0; 9];
        u[0] = 1.0;
        u[3] = 2.0;
        u[6] = 3.0;
        let mut k = vec![1.0; 12];
        k[1] = 2.0;
        assert_eq!(kin.evaluate(&u, &k, &[]).unwrap()[3], 4.0);
        let ju = kin.jacobian_u(&u, &k, &[]).unwrap();
        assert_eq!(ju[3 * 9], -2.0);
        let jk = kin.jacobian_k(&u, &k, &[]).unwrap();
        assert_eq!(jk[3 * 12 + 1], 3.0);
    }

    #[test]
    fn origin_gives_nonnegative_rates() {
        let kin = Kinetics::new(&fixtures::three_protein()).unwrap();
        let r = kin.evaluate(&[0.0; 9], &[1.0; 12], &[]).unwrap();
        assert!(r.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn dimension_mismatch_reported() {
        let kin = Kinetics::new(&fixtures::three_protein()).unwrap();
        assert_eq!(
            kin.evaluate(&[0.0; 8], &[1.0; 12], &[]),
            Err(KineticsError::DimensionMismatch { what: "u", expected: 9, got: 8 })
        );
        assert!(kin.jacobian_k(&[0.0; 9], &[1.0; 11], &[]).is_err());
        assert!(kin.jacobian_u(&[0.0; 9], &[1.0; 12], &[1.0]).is_err());
    }

    #[test]
    fn non_compliant_network_rejected() {
        let net = ReactionNetwork::new(
            vec![SpeciesDecl::new("A", &["A"]), SpeciesDecl::new("B", &["B"]), SpeciesDecl::new("pA", &["A"]), SpeciesDecl::new("pB", &["B"])],
            vec![ReactionDecl::new(&["A", "B"], &["pA", "pB"], "k")],
        )
        .unwrap();
        assert!(matches!(Kinetics::new(&net), Err(NetworkError::NonCompliantNetwork(_))));
    }

    fn vec_in(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(lo..hi, n)
    }

    proptest! {
        #[test]
        fn matches_oracle_and_split(u in vec_in(9, 0.0, 3.0), k in vec_in(12, 0.01, 5.0)) {
            let net = fixtures::three_protein();
            let kin = Kinetics::new(&net).unwrap();
            let r = kin.evaluate(&u, &k, &[]).unwrap();
            let want = oracle(&net, &u, &k, &[]);
            let (mut p, mut q) = (vec![0.0; 9], vec![0.0; 9]);
            kin.split_into(&u, &k, &[], &mut p, &mut q);
            for i in 0..9 {
                prop_assert!((r[i] - want[i]).abs() <= 1e-12 * (1.0 + want[i].abs()));
                prop_assert!(p[i] >= 0.0 && q[i] >= 0.0);
                prop_assert!((p[i] - u[i] * q[i] - r[i]).abs() <= 1e-12 * (1.0 + p[i]));
            }
        }

        #[test]
        fn jacobians_match_central_differences(u in vec_in(3, 0.1, 3.0), v in 0.1f64..2.0, k in vec_in(4, 0.1, 3.0)) {
            let net = ligand_network();
            let kin = Kinetics::new(&net).unwrap();
            let ext = [v];
            let ju = kin.jacobian_u(&u, &k, &ext).unwrap();
            let jk = kin.jacobian_k(&u, &k, &ext).unwrap();
            let h = 1e-5;
            for j in 0..3 {
                let (mut up, mut um) = (u.clone(), u.clone());
                up[j] += h;
                um[j] -= h;
                let (rp, rm) = (oracle(&net, &up, &k, &ext), oracle(&net, &um, &k, &ext));
                for i in 0..3 {
                    let fd = (rp[i] - rm[i]) / (2.0 * h);
                    prop_assert!((fd - ju[i * 3 + j]).abs() <= 1e-8 * fd.abs().max(1.0));
                }
            }
            for m in 0..4 {
                let (mut kp, mut km) = (k.clone(), k.clone());
                kp[m] += h;
                km[m] -= h;
                let (rp, rm) = (oracle(&net, &u, &kp, &ext), oracle(&net, &u, &km, &ext));
                for i in 0..3 {
                    let fd = (rp[i] - rm[i]) / (2.0 * h);
                    prop_assert!((fd - jk[i * 4 + m]).abs() <= 1e-8 * fd.abs().max(1.0));
                }
            }
        }

        #[test]
        fn matrix_free_products_match_jacobians(u in vec_in(3, 0.0, 3.0), z in vec_in(3, -2.0, 2.0), k in vec_in(4, 0.1, 3.0)) {
            let kin = Kinetics::new(&ligand_network()).unwrap();
            let ext = [0.7];
            let ju = kin.jacobian_u(&u, &k, &ext).unwrap();
            let jk = kin.jacobian_k(&u, &k, &ext).unwrap();
            let mut jt = vec![0.0; 3];
            let mut jv = vec![0.0; 3];
            let mut kt = vec![0.0; 4];
            kin.jacobian_u_transpose_add(&u, &k, &ext, &z, &mut jt);
            kin.jacobian_u_apply_add(&u, &k, &ext, &z, &mut jv);
            kin.jacobian_k_transpose_add(&u, &ext, &z, 2.0, &mut kt);
            for j in 0..3 {
                let want: f64 = (0..3).map(|i| ju[i * 3 + j] * z[i]).sum();
                assert_relative_eq!(jt[j], want, epsilon = 1e-12);
                let want: f64 = (0..3).map(|i| ju[j * 3 + i] * z[i]).sum();
                assert_relative_eq!(jv[j], want, epsilon = 1e-12);
            }
            for m in 0..4 {
                let want: f64 = (0..3).map(|i| jk[i * 4 + m] * z[i]).sum();
                assert_relative_eq!(kt[m], 2.0 * want, epsilon = 1e-12);
            }
        }
    }
}
