//! Transverse-field Ising model `H = -J Σ_<a,b> Z_a Z_b - h Σ_a X_a` on rings, chains and
//! heavy-hex patches, its first-order Trotter circuits and exact magnetization
//! `M(t) = <0| e^{-iHt} Z_site e^{iHt} |0>`.
//!
//! One Trotter step is `U(τ) = Π exp(-iJτ Z_a Z_b) · Π exp(-ihτ X_a) ≈ e^{iHτ}`, emitted as
//! `Rx(2hτ)` on every site followed by `Rzz(2Jτ)` on every edge, edges grouped into
//! colour classes so each layer acts on disjoint pairs.
//!
//! Heavy-hex patches are built from a honeycomb of `k` hexagonal cells with a degree-2
//! node inserted on every honeycomb edge: one cell has 6 + 6 = 12 nodes, two cells sharing
//! an edge have 10 + 11 = 21, and a 2x2 rhombus of cells has 16 + 19 = 35.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, Gate};
use crate::error::{Error, Result};
use crate::ev::{build_ev_circuit, lightcone};
use crate::pauli::{Pauli, PauliString};
use crate::statevector::Statevector;

/// Largest register the dense exact propagator accepts.
pub const MAX_EXACT_SITES: usize = 24;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatticeKind {
    Ring { n: usize },
    Chain { n: usize },
    HeavyHex { cells: usize },
    Custom,
}

impl fmt::Display for LatticeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatticeKind::Ring { n } => write!(f, "ring({n})"),
            LatticeKind::Chain { n } => write!(f, "chain({n})"),
            LatticeKind::HeavyHex { cells } => write!(f, "heavy_hex_cells({cells})"),
            LatticeKind::Custom => write!(f, "custom"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpinLattice {
    pub kind: LatticeKind,
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl SpinLattice {
    /// Validate and normalise an edge list: endpoints ordered, no loops, no duplicates.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut out: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::IndexOutOfRange {
                    index: a.max(b),
                    n_qubits: n_nodes,
                });
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop on node {a}")));
            }
            let e = (a.min(b), a.max(b));
            if out.contains(&e) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate edge ({}, {})",
                    e.0, e.1
                )));
            }
            out.push(e);
        }
        Ok(SpinLattice {
            kind: LatticeKind::Custom,
            n_nodes,
            edges: out,
        })
    }

    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidArgument(format!(
                "a ring needs at least 3 sites, got {n}"
            )));
        }
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let mut l = Self::from_edges(n, &edges)?;
        l.kind = LatticeKind::Ring { n };
        Ok(l)
    }

    pub fn chain(n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidArgument("a chain needs at least 1 site".into()));
        }
        let edges: Vec<(usize, usize)> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
        let mut l = Self::from_edges(n, &edges)?;
        l.kind = LatticeKind::Chain { n };
        Ok(l)
    }

    /// `cells` hexagons laid out row by row in a rhombus of width `⌈√cells⌉`, with every
    /// honeycomb edge subdivided. Honeycomb vertices come first (ordered by row, then
    /// column), then the inserted edge nodes.
    pub fn heavy_hex_cells(cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidArgument("heavy-hex patch needs at least one cell".into()));
        }
        let width = (cells as f64).sqrt().ceil() as usize;
        // Brick-wall embedding of the honeycomb: cell (i, j) spans x = 2i + j .. 2i + j + 2
        // and y = j .. j + 1.
        let mut hex_edges: Vec<((usize, usize), (usize, usize))> = Vec::new();
        for c in 0..cells {
            let (i, j) = (c % width, c / width);
            let (x, y) = (2 * i + j, j);
            let cell = [
                ((x, y), (x + 1, y)),
                ((x + 1, y), (x + 2, y)),
                ((x, y + 1), (x + 1, y + 1)),
                ((x + 1, y + 1), (x + 2, y + 1)),
                ((x, y), (x, y + 1)),
                ((x + 2, y), (x + 2, y + 1)),
            ];
            for e in cell {
                if !hex_edges.contains(&e) {
                    hex_edges.push(e);
                }
            }
        }
        let mut vertex: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for &(a, b) in &hex_edges {
            // Keyed (y, x) so vertices are numbered row by row.
            vertex.insert((a.1, a.0), 0);
            vertex.insert((b.1, b.0), 0);
        }
        for (idx, v) in vertex.values_mut().enumerate() {
            *v = idx;
        }
        let nv = vertex.len();
        let mut edges = Vec::with_capacity(2 * hex_edges.len());
        for (k, &(a, b)) in hex_edges.iter().enumerate() {
            let m = nv + k;
            edges.push((vertex[&(a.1, a.0)], m));
            edges.push((m, vertex[&(b.1, b.0)]));
        }
        let mut l = Self::from_edges(nv + hex_edges.len(), &edges)?;
        l.kind = LatticeKind::HeavyHex { cells };
        Ok(l)
    }

    pub fn build(kind: &LatticeKind) -> Result<Self> {
        match *kind {
            LatticeKind::Ring { n } => Self::ring(n),
            LatticeKind::Chain { n } => Self::chain(n),
            LatticeKind::HeavyHex { cells } => Self::heavy_hex_cells(cells),
            LatticeKind::Custom => Err(Error::InvalidArgument(
                "custom lattices are loaded from an edge list".into(),
            )),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, site: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == site {
                    Some(b)
                } else if b == site {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n_nodes)
            .map(|s| self.neighbors(s).len())
            .max()
            .unwrap_or(0)
    }

    /// Greedy proper edge colouring in edge-list order. Rings of even length and
    /// heavy-hex patches come out with 2 and 3 colours respectively.
    pub fn edge_layers(&self) -> Vec<Vec<(usize, usize)>> {
        let mut used: Vec<Vec<usize>> = vec![Vec::new(); self.n_nodes];
        let mut layers: Vec<Vec<(usize, usize)>> = Vec::new();
        for &(a, b) in &self.edges {
            let c = (0..)
                .find(|c| !used[a].contains(c) && !used[b].contains(c))
                .unwrap();
            used[a].push(c);
            used[b].push(c);
            if layers.len() <= c {
                layers.resize(c + 1, Vec::new());
            }
            layers[c].push((a, b));
        }
        layers
    }

    /// Text form: a `nodes N` line followed by one `a b` line per edge. `#` starts a
    /// comment.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {}", self.kind)?;
        writeln!(w, "nodes {}", self.n_nodes)?;
        for (a, b) in &self.edges {
            writeln!(w, "{a} {b}")?;
        }
        Ok(())
    }

    pub fn read_edge_list<R: BufRead>(r: R) -> Result<Self> {
        let mut n_nodes: Option<usize> = None;
        let mut edges = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let parts: Vec<&str> = body.split_whitespace().collect();
            let bad = || Error::Config(format!("edge list line {}: '{}'", lineno + 1, line));
            match parts.as_slice() {
                ["nodes", n] => n_nodes = Some(n.parse().map_err(|_| bad())?),
                [a, b] => edges.push((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?)),
                _ => return Err(bad()),
            }
        }
        let n = n_nodes.ok_or_else(|| Error::Config("edge list lacks a 'nodes N' line".into()))?;
        Self::from_edges(n, &edges)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IsingModel {
    pub lattice: SpinLattice,
    pub j_coupling: f64,
    pub h_field: f64,
}

impl IsingModel {
    pub fn new(lattice: SpinLattice, j_coupling: f64, h_field: f64) -> Result<Self> {
        if !j_coupling.is_finite() || !h_field.is_finite() {
            return Err(Error::InvalidArgument("J and h must be finite".into()));
        }
        Ok(IsingModel {
            lattice,
            j_coupling,
            h_field,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.lattice.n_nodes()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrotterPlan {
    pub steps: usize,
    pub tau: f64,
    pub measured_site: usize,
}

impl TrotterPlan {
    pub fn total_time(&self) -> f64 {
        self.steps as f64 * self.tau
    }
}

pub fn trotter_step(model: &IsingModel, tau: f64) -> Circuit {
    let n = model.n_sites();
    let mut gates = Vec::with_capacity(n + model.lattice.edges().len());
    let rx = 2.0 * model.h_field * tau;
    let rzz = 2.0 * model.j_coupling * tau;
    if rx != 0.0 {
        gates.extend((0..n).map(|q| Gate::Rx(q, rx)));
    }
    if rzz != 0.0 {
        for layer in model.lattice.edge_layers() {
            gates.extend(layer.into_iter().map(|(a, b)| Gate::Rzz(a, b, rzz)));
        }
    }
    Circuit::from_gates(n, gates).expect("lattice gates are in range")
}

/// `K` repetitions of [`trotter_step`].
pub fn trotter_circuit(model: &IsingModel, tau: f64, steps: usize) -> Circuit {
    let step = trotter_step(model, tau);
    let mut c = Circuit::new(model.n_sites());
    for _ in 0..steps {
        c.extend(&step).expect("same register");
    }
    c
}

pub fn magnetization_observable(n_sites: usize, site: usize) -> Result<PauliString> {
    PauliString::single(n_sites, site, Pauli::Z)
}

fn check_site(model: &IsingModel, site: usize) -> Result<()> {
    if site >= model.n_sites() {
        return Err(Error::IndexOutOfRange {
            index: site,
            n_qubits: model.n_sites(),
        });
    }
    Ok(())
}

/// Number of lattice sites inside the light cone of `Z_site` after `K = 1..=k_max` steps.
pub fn lightcone_sizes(model: &IsingModel, tau: f64, k_max: usize, site: usize) -> Result<Vec<usize>> {
    check_site(model, site)?;
    let v = magnetization_observable(model.n_sites(), site)?;
    Ok((1..=k_max)
        .map(|k| lightcone(&trotter_circuit(model, tau, k), &v).qubits.len())
        .collect())
}

/// Noiseless Trotterised magnetization after `K` steps, simulated on the light cone only.
pub fn trotter_magnetization(model: &IsingModel, tau: f64, steps: usize, site: usize) -> Result<f64> {
    check_site(model, site)?;
    let v = magnetization_observable(model.n_sites(), site)?;
    let u = trotter_circuit(model, tau, steps);
    let ev = crate::ev::lightcone_reduce(&build_ev_circuit(&u, &v)?)?;
    let (c, _) = ev.compacted()?;
    if c.n_system() > 30 {
        return Err(Error::InvalidArgument(format!(
            "light cone of {} sites is beyond the dense simulator",
            c.n_system()
        )));
    }
    let mut psi = Statevector::zero(c.n_system());
    psi.apply_circuit(c.u())?;
    psi.expectation(c.observable())
}

fn apply_hamiltonian(model: &IsingModel, psi: &[Complex64], out: &mut [Complex64]) {
    let n = model.n_sites();
    let (j, h) = (model.j_coupling, model.h_field);
    let edge_masks: Vec<usize> = model
        .lattice
        .edges()
        .iter()
        .map(|&(a, b)| (1usize << a) | (1usize << b))
        .collect();
    let n_edges = edge_masks.len() as f64;
    out.par_iter_mut().enumerate().for_each(|(k, o)| {
        // Z_a Z_b = +1 unless exactly one of the two bits is set.
        let odd = edge_masks
            .iter()
            .filter(|&&m| (k & m).count_ones() == 1)
            .count() as f64;
        let zz = n_edges - 2.0 * odd;
        let mut acc = psi[k] * (-j * zz);
        if h != 0.0 {
            let mut flips = Complex64::new(0.0, 0.0);
            for q in 0..n {
                flips += psi[k ^ (1 << q)];
            }
            acc -= flips * h;
        }
        *o = acc;
    });
}

/// `e^{iHt}|0…0>` by a truncated Taylor series in substeps with `‖H‖·dt ≤ 1/2`.
pub fn evolve_exact(model: &IsingModel, t: f64) -> Result<Vec<Complex64>> {
    let n = model.n_sites();
    if n > MAX_EXACT_SITES {
        return Err(Error::InvalidArgument(format!(
            "{n} sites exceed the dense propagator limit of {MAX_EXACT_SITES}"
        )));
    }
    let dim = 1usize << n;
    let mut psi = vec![Complex64::new(0.0, 0.0); dim];
    psi[0] = Complex64::new(1.0, 0.0);
    let bound = model.j_coupling.abs() * model.lattice.edges().len() as f64
        + model.h_field.abs() * n as f64;
    if t == 0.0 || bound == 0.0 {
        return Ok(psi);
    }
    let substeps = ((bound * t.abs()) / 0.5).ceil().max(1.0) as usize;
    let dt = t / substeps as f64;
    let mut term = vec![Complex64::new(0.0, 0.0); dim];
    let mut next = vec![Complex64::new(0.0, 0.0); dim];
    for _ in 0..substeps {
        term.copy_from_slice(&psi);
        for m in 1..60 {
            apply_hamiltonian(model, &term, &mut next);
            let f = Complex64::new(0.0, dt / m as f64);
            let mut norm = 0.0;
            for (tm, nx) in term.iter_mut().zip(&next) {
                *tm = nx * f;
                norm += tm.norm_sqr();
            }
            for (p, tm) in psi.iter_mut().zip(&term) {
                *p += tm;
            }
            if norm.sqrt() < 1e-17 {
                break;
            }
        }
    }
    Ok(psi)
}

/// `M(t) = <0| e^{-iHt} Z_site e^{iHt} |0>` on the full lattice.
pub fn exact_magnetization(model: &IsingModel, t: f64, site: usize) -> Result<f64> {
    check_site(model, site)?;
    let psi = evolve_exact(model, t)?;
    let bit = 1usize << site;
    let m: f64 = psi
        .iter()
        .enumerate()
        .map(|(k, a)| if k & bit == 0 { a.norm_sqr() } else { -a.norm_sqr() })
        .sum();
    Ok(m.clamp(-1.0, 1.0))
}

/// `|M_trotter(t; τ) − M(t)|` with `K = t/τ` steps (which must be an integer).
pub fn trotter_error(model: &IsingModel, t: f64, site: usize, tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Err(Error::InvalidArgument("τ must be positive".into()));
    }
    let k = (t / tau).round();
    if (k * tau - t).abs() > 1e-9 * t.abs().max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "t = {t} is not a whole number of steps of τ = {tau}"
        )));
    }
    let trot = trotter_magnetization(model, tau, k as usize, site)?;
    Ok((trot - exact_magnetization(model, t, site)?).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(l: SpinLattice, j: f64, h: f64) -> IsingModel {
        IsingModel::new(l, j, h).unwrap()
    }

    #[test]
    fn lattice_sizes() {
        let r = SpinLattice::ring(12).unwrap();
        assert_eq!((r.n_nodes(), r.edges().len()), (12, 12));
        let h1 = SpinLattice::heavy_hex_cells(1).unwrap();
        assert_eq!((h1.n_nodes(), h1.edges().len()), (12, 12));
        let h2 = SpinLattice::heavy_hex_cells(2).unwrap();
        assert_eq!((h2.n_nodes(), h2.edges().len()), (21, 22));
        let h4 = SpinLattice::heavy_hex_cells(4).unwrap();
        assert_eq!((h4.n_nodes(), h4.edges().len()), (35, 38));
        assert!(h4.max_degree() <= 3);
        assert!(SpinLattice::heavy_hex_cells(0).is_err());
        assert!(SpinLattice::ring(2).is_err());
    }

    #[test]
    fn edge_layers_are_matchings() {
        for l in [
            SpinLattice::ring(12).unwrap(),
            SpinLattice::heavy_hex_cells(2).unwrap(),
            SpinLattice::heavy_hex_cells(4).unwrap(),
        ] {
            let layers = l.edge_layers();
            assert!(layers.len() <= 3, "{} colours", layers.len());
            assert_eq!(layers.iter().map(Vec::len).sum::<usize>(), l.edges().len());
            for layer in &layers {
                let mut seen = vec![false; l.n_nodes()];
                for &(a, b) in layer {
                    assert!(!seen[a] && !seen[b]);
                    seen[a] = true;
                    seen[b] = true;
                }
            }
        }
        assert_eq!(SpinLattice::ring(12).unwrap().edge_layers().len(), 2);
    }

    #[test]
    fn edge_list_round_trip() {
        let l = SpinLattice::heavy_hex_cells(2).unwrap();
        let mut buf = Vec::new();
        l.write_edge_list(&mut buf).unwrap();
        let back = SpinLattice::read_edge_list(buf.as_slice()).unwrap();
        assert_eq!(back.edges(), l.edges());
        assert_eq!(back.n_nodes(), 21);
        assert!(SpinLattice::read_edge_list("nodes 3\n0 0\n".as_bytes()).is_err());
        assert!(SpinLattice::read_edge_list("0 1\n".as_bytes()).is_err());
    }

    #[test]
    fn zero_tau_is_identity() {
        let m = model(SpinLattice::ring(5).unwrap(), 1.0, 0.7);
        assert!(trotter_step(&m, 0.0).is_empty());
    }

    #[test]
    fn single_edge_step_is_zz_exponential() {
        let l = SpinLattice::chain(2).unwrap();
        let m = model(l, 1.0, 0.0);
        let tau = 0.37;
        let c = trotter_step(&m, tau);
        // exp(-iτ Z⊗Z) is diagonal with phases e^{-iτ}, e^{+iτ}, e^{+iτ}, e^{-iτ}.
        for k in 0..4usize {
            let mut psi = Statevector::basis_state(2, k).unwrap();
            psi.apply_circuit(&c).unwrap();
            let parity = (k.count_ones() % 2) as f64;
            let want = Complex64::from_polar(1.0, if parity == 0.0 { -tau } else { tau });
            assert!((psi.amplitudes()[k] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn exact_magnetization_examples() {
        let m = model(SpinLattice::ring(6).unwrap(), 0.0, 1.3);
        assert!((exact_magnetization(&m, 0.0, 2).unwrap() - 1.0).abs() < 1e-15);
        for t in [0.1, 0.5, 1.7] {
            let got = exact_magnetization(&m, t, 2).unwrap();
            assert!((got - (2.0 * 1.3 * t).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn propagator_matches_dense_exponential_on_two_sites() {
        // Two sites, one edge: compare against a fine Trotter product (error O(τ)).
        let m = model(SpinLattice::chain(2).unwrap(), 0.8, 0.5);
        let exact = exact_magnetization(&m, 0.6, 0).unwrap();
        let fine = trotter_magnetization(&m, 0.6 / 4000.0, 4000, 0).unwrap();
        assert!((exact - fine).abs() < 1e-3);
    }

    #[test]
    fn commuting_limits_have_no_trotter_error() {
        let chain = SpinLattice::chain(3).unwrap();
        let m = model(chain.clone(), 0.0, 1.1);
        assert!(trotter_error(&m, 0.5, 1, 0.1).unwrap() < 1e-12);
        let m = model(chain, 1.1, 0.0);
        assert!(trotter_error(&m, 0.5, 1, 0.1).unwrap() < 1e-12);
    }

    #[test]
    fn trotter_error_is_first_order() {
        let m = model(SpinLattice::chain(3).unwrap(), 1.0, 0.7);
        let t = 0.8;
        let e1 = trotter_error(&m, t, 0, 0.1).unwrap();
        let e2 = trotter_error(&m, t, 0, 0.05).unwrap();
        let ratio = e1 / e2;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn lightcone_grows_monotonically() {
        let m = model(SpinLattice::ring(12).unwrap(), 1.0, 1.0);
        let sizes = lightcone_sizes(&m, 0.1, 8, 0).unwrap();
        assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*sizes.last().unwrap(), 12);
    }
}
