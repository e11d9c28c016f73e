//! Echo verification: circuit construction, light-cone reduction, postselection,
//! ancilla tomography and the estimator family.
//!
//! The EV circuit on `n` system qubits plus one ancilla (qubit `n`) is
//! `H(anc) · U · C-V · U† · H(anc)`. Postselecting the system register on `|0…0>` leaves
//! the ancilla in a state whose Bloch components satisfy, noiselessly,
//! `e_z = 2v/(1+v²)` and `e_x = (1-v²)/(1+v²)` with `v = <0|U†VU|0>`, and the
//! postselection succeeds with probability `(1+v²)/2`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand_distr::{Binomial, Distribution};

use crate::cdr::RegressionFit;
use crate::circuit::{Circuit, Gate};
use crate::error::{Error, Result};
use crate::pauli::{Pauli, PauliString};
use crate::statevector::{
    sample_trajectories, stream_rng, Basis, DensityMatrix, NoiseModel, ShotRecord, Statevector,
};

/// Largest total qubit count the exact density-matrix pipeline accepts.
pub const MAX_EXACT_QUBITS: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct EvCircuit {
    circuit: Circuit,
    u: Circuit,
    observable: PauliString,
}

impl EvCircuit {
    /// Full circuit on `n_system + 1` qubits.
    pub fn circuit(&self) -> &Circuit {
        &self.circuit
    }

    /// The state-preparation circuit `U` on the system register.
    pub fn u(&self) -> &Circuit {
        &self.u
    }

    pub fn observable(&self) -> &PauliString {
        &self.observable
    }

    pub fn n_system(&self) -> usize {
        self.u.n_qubits()
    }

    pub fn n_qubits(&self) -> usize {
        self.u.n_qubits() + 1
    }

    pub fn ancilla_index(&self) -> usize {
        self.u.n_qubits()
    }

    pub fn system_indices(&self) -> Vec<usize> {
        (0..self.n_system()).collect()
    }

    /// Hilbert-space dimension of system plus ancilla, as used by the depolarizing
    /// formulas.
    pub fn dimension(&self) -> f64 {
        2f64.powi(self.n_qubits() as i32)
    }

    /// Rebuild with new rotation angles for `U` (indexed as in [`Circuit::parameters`]).
    pub fn with_parameters(&self, theta: &[f64]) -> Result<EvCircuit> {
        build_ev_circuit(&self.u.with_parameters(theta)?, &self.observable)
    }

    /// Drop system qubits that no retained gate touches and that `V` does not act on.
    /// Returns the compacted circuit and, for each new system qubit, its original index.
    pub fn compacted(&self) -> Result<(EvCircuit, Vec<usize>)> {
        let n = self.n_system();
        let mut used = vec![false; n];
        for q in self.observable.support() {
            used[q] = true;
        }
        for g in self.u.gates() {
            for q in g.all_qubits() {
                used[q] = true;
            }
        }
        let active: Vec<usize> = (0..n).filter(|&q| used[q]).collect();
        let mut new_index = vec![usize::MAX; n];
        for (j, &q) in active.iter().enumerate() {
            new_index[q] = j;
        }
        let u = self.u.remapped(active.len(), &|q| new_index[q])?;
        let v = self.observable.restrict(&active);
        Ok((build_ev_circuit(&u, &v)?, active))
    }
}

/// Assemble `H(anc) · U · C-V · U† · H(anc)`. The controlled-V block is a product of
/// controlled single-qubit Paulis over V's support; a `-1` sign becomes a `Z` on the
/// ancilla.
pub fn build_ev_circuit(u: &Circuit, v: &PauliString) -> Result<EvCircuit> {
    let n = u.n_qubits();
    if v.n_qubits() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: v.n_qubits(),
        });
    }
    if !v.is_hermitian() {
        return Err(Error::InvalidArgument(format!(
            "observable {v} is not Hermitian"
        )));
    }
    let anc = n;
    let mut gates = Vec::with_capacity(2 * u.len() + v.weight() + 3);
    gates.push(Gate::H(anc));
    gates.extend_from_slice(u.gates());
    for q in v.support() {
        gates.push(Gate::ControlledPauli {
            control: anc,
            target: q,
            pauli: v.get(q),
        });
    }
    if v.phase_exponent() == 2 {
        gates.push(Gate::Z(anc));
    }
    gates.extend(u.gates().iter().rev().map(Gate::inverse));
    gates.push(Gate::H(anc));
    Ok(EvCircuit {
        circuit: Circuit::from_gates(n + 1, gates)?,
        u: u.clone(),
        observable: v.clone(),
    })
}

/// Backward light cone of `V` through `U`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LightCone {
    /// Positions in `U` of the gates that can affect `U†VU`, ascending.
    pub gates: Vec<usize>,
    /// Parameter indices (positions among the rotations of `U`) inside the cone.
    pub parameters: Vec<usize>,
    /// System qubits reached by the back-propagated support, ascending.
    pub qubits: Vec<usize>,
}

pub fn lightcone(u: &Circuit, v: &PauliString) -> LightCone {
    let n = u.n_qubits();
    let mut in_cone = vec![false; n];
    for q in v.support() {
        if q < n {
            in_cone[q] = true;
        }
    }
    let mut kept = Vec::new();
    for (i, g) in u.gates().iter().enumerate().rev() {
        let qs = g.all_qubits();
        if qs.iter().any(|&q| in_cone[q]) {
            for q in qs {
                in_cone[q] = true;
            }
            kept.push(i);
        }
    }
    kept.reverse();
    let rotations = u.rotation_positions();
    let parameters = rotations
        .iter()
        .enumerate()
        .filter(|(_, pos)| kept.binary_search(pos).is_ok())
        .map(|(k, _)| k)
        .collect();
    LightCone {
        gates: kept,
        parameters,
        qubits: (0..n).filter(|&q| in_cone[q]).collect(),
    }
}

/// Remove every gate of `U` (and its mirror in `U†`) outside the light cone of `V`.
/// The qubit register is unchanged; see [`EvCircuit::compacted`] to drop idle qubits.
pub fn lightcone_reduce(ev: &EvCircuit) -> Result<EvCircuit> {
    let cone = lightcone(&ev.u, &ev.observable);
    let gates = cone.gates.iter().map(|&i| ev.u.gates()[i]).collect();
    build_ev_circuit(&Circuit::from_gates(ev.n_system(), gates)?, &ev.observable)
}

// Postselection

/// Accept a shot when every `neighborhood` bit is 0 and at most `max_hamming` of the
/// remaining system bits are 1.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PostselectionRule {
    pub neighborhood: Vec<usize>,
    pub max_hamming: usize,
}

impl PostselectionRule {
    pub fn new(neighborhood: Vec<usize>, max_hamming: usize) -> Self {
        let mut neighborhood = neighborhood;
        neighborhood.sort_unstable();
        neighborhood.dedup();
        PostselectionRule {
            neighborhood,
            max_hamming,
        }
    }

    /// Strict zero-state postselection.
    pub fn exact() -> Self {
        PostselectionRule {
            neighborhood: Vec::new(),
            max_hamming: 0,
        }
    }

    /// Accept everything on an `n_system`-qubit register.
    pub fn accept_all(n_system: usize) -> Self {
        PostselectionRule {
            neighborhood: Vec::new(),
            max_hamming: n_system,
        }
    }

    pub fn validate(&self, n_system: usize) -> Result<()> {
        if n_system > 64 {
            return Err(Error::InvalidArgument(format!(
                "postselection supports at most 64 system qubits, got {n_system}"
            )));
        }
        match self.neighborhood.iter().find(|&&q| q >= n_system) {
            Some(&q) => Err(Error::IndexOutOfRange {
                index: q,
                n_qubits: n_system,
            }),
            None => Ok(()),
        }
    }

    pub fn mask(&self) -> u64 {
        self.neighborhood.iter().fold(0, |m, &q| m | (1u64 << q))
    }

    #[inline]
    pub fn accepts(&self, system_bits: u64) -> bool {
        let mask = self.mask();
        system_bits & mask == 0 && (system_bits & !mask).count_ones() as usize <= self.max_hamming
    }

    /// Express the rule on a compacted register (`active[j]` is the original index of
    /// new qubit `j`). Qubits outside `active` stay in `|0>` and never flip.
    pub fn remapped(&self, active: &[usize]) -> PostselectionRule {
        let neighborhood = active
            .iter()
            .enumerate()
            .filter(|(_, q)| self.neighborhood.contains(q))
            .map(|(j, _)| j)
            .collect();
        PostselectionRule {
            neighborhood,
            max_hamming: self.max_hamming,
        }
    }
}

/// Keep records accepted by `rule`. Returns the kept records and their fraction.
pub fn postselect(
    records: &[ShotRecord],
    rule: &PostselectionRule,
) -> Result<(Vec<ShotRecord>, f64)> {
    if records.is_empty() {
        return Err(Error::Empty("shot records"));
    }
    let mask = rule.mask();
    let kept: Vec<ShotRecord> = records
        .iter()
        .filter(|r| {
            r.system_bits & mask == 0
                && (r.system_bits & !mask).count_ones() as usize <= rule.max_hamming
        })
        .copied()
        .collect();
    let p0 = kept.len() as f64 / records.len() as f64;
    Ok((kept, p0))
}

// Tomography

/// Estimate of one ancilla Pauli expectation. `shots == 0` marks an exact value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasisEstimate {
    pub mean: f64,
    pub shots: u64,
    pub plus: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AncillaTomogram {
    pub x: Option<BasisEstimate>,
    pub y: Option<BasisEstimate>,
    pub z: Option<BasisEstimate>,
    pub p0_hat: f64,
    pub n_total: u64,
    pub n_kept: u64,
    /// Number of components clamped into [-1, 1].
    pub clamped: u32,
}

fn clamp_unit(v: f64, clamped: &mut u32) -> f64 {
    if v > 1.0 {
        *clamped += 1;
        1.0
    } else if v < -1.0 {
        *clamped += 1;
        -1.0
    } else {
        v
    }
}

impl AncillaTomogram {
    /// Per-basis means of kept records. `n_total` counts all shots issued, kept or not.
    pub fn from_kept(kept: &[ShotRecord], n_total: u64, bases: &[Basis]) -> Result<Self> {
        if n_total == 0 {
            return Err(Error::Empty("shot records"));
        }
        let mut t = AncillaTomogram {
            x: None,
            y: None,
            z: None,
            p0_hat: kept.len() as f64 / n_total as f64,
            n_total,
            n_kept: kept.len() as u64,
            clamped: 0,
        };
        for &b in bases {
            let (mut shots, mut plus) = (0u64, 0u64);
            for r in kept.iter().filter(|r| r.basis == b) {
                shots += 1;
                if r.ancilla_outcome > 0 {
                    plus += 1;
                }
            }
            if shots == 0 {
                return Err(Error::PostselectionAnnihilated);
            }
            let mean = (2.0 * plus as f64 - shots as f64) / shots as f64;
            *t.slot(b) = Some(BasisEstimate { mean, shots, plus });
        }
        Ok(t)
    }

    /// Postselect then tomograph.
    pub fn from_shots(
        records: &[ShotRecord],
        rule: &PostselectionRule,
        bases: &[Basis],
    ) -> Result<Self> {
        let (kept, _) = postselect(records, rule)?;
        Self::from_kept(&kept, records.len() as u64, bases)
    }

    /// Exact tomogram from a normalised 2x2 ancilla density matrix.
    pub fn from_density(rho: &[[Complex64; 2]; 2], p0: f64) -> Self {
        let mut clamped = 0;
        let exact = |v: f64, c: &mut u32| {
            Some(BasisEstimate {
                mean: clamp_unit(v, c),
                shots: 0,
                plus: 0,
            })
        };
        let x = exact(2.0 * rho[0][1].re, &mut clamped);
        let y = exact(-2.0 * rho[0][1].im, &mut clamped);
        let z = exact(rho[0][0].re - rho[1][1].re, &mut clamped);
        AncillaTomogram {
            x,
            y,
            z,
            p0_hat: p0,
            n_total: 0,
            n_kept: 0,
            clamped,
        }
    }

    /// Exact tomogram from Bloch components.
    pub fn from_components(e_x: f64, e_y: f64, e_z: f64, p0: f64) -> Self {
        let half = Complex64::new(0.5, 0.0);
        let rho01 = Complex64::new(e_x / 2.0, -e_y / 2.0);
        let rho = [
            [half * (1.0 + e_z), rho01],
            [rho01.conj(), half * (1.0 - e_z)],
        ];
        Self::from_density(&rho, p0)
    }

    fn slot(&mut self, b: Basis) -> &mut Option<BasisEstimate> {
        match b {
            Basis::X => &mut self.x,
            Basis::Y => &mut self.y,
            Basis::Z => &mut self.z,
        }
    }

    pub fn basis(&self, b: Basis) -> Option<&BasisEstimate> {
        match b {
            Basis::X => self.x.as_ref(),
            Basis::Y => self.y.as_ref(),
            Basis::Z => self.z.as_ref(),
        }
    }

    pub fn component(&self, b: Basis) -> Result<f64> {
        self.basis(b).map(|e| e.mean).ok_or(Error::InvalidArgument(format!(
            "tomogram has no {b:?}-basis data"
        )))
    }

    pub fn e_x(&self) -> Result<f64> {
        self.component(Basis::X)
    }

    pub fn e_y(&self) -> Result<f64> {
        self.component(Basis::Y)
    }

    pub fn e_z(&self) -> Result<f64> {
        self.component(Basis::Z)
    }

    /// `Tr(ρ²) = (1 + e_x² + e_y² + e_z²)/2`; missing bases count as zero.
    pub fn purity(&self) -> f64 {
        let s: f64 = Basis::ALL
            .iter()
            .filter_map(|&b| self.basis(b))
            .map(|e| e.mean * e.mean)
            .sum();
        0.5 * (1.0 + s)
    }

    /// Bloch-vector length; missing bases count as zero.
    pub fn bloch_norm(&self) -> f64 {
        (2.0 * self.purity() - 1.0).max(0.0).sqrt()
    }

    pub fn is_exact(&self) -> bool {
        Basis::ALL
            .iter()
            .filter_map(|&b| self.basis(b))
            .all(|e| e.shots == 0)
    }
}

// Estimators

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Standard,
    /// `e_z / (1 + √(1 - e_z))`, as printed.
    ZBias,
    /// `e_z / (1 + √(1 - e_z²))`, the form consistent with `e_x² + e_z² = 1`.
    ZBiasSquared,
    XBias,
    PurityNormalized,
    SpectralPurified,
    DepolarizationTolerant,
    Evcdr,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Standard,
        Variant::ZBias,
        Variant::ZBiasSquared,
        Variant::XBias,
        Variant::PurityNormalized,
        Variant::SpectralPurified,
        Variant::DepolarizationTolerant,
        Variant::Evcdr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::ZBias => "z_bias",
            Variant::ZBiasSquared => "z_bias_squared",
            Variant::XBias => "x_bias",
            Variant::PurityNormalized => "purity_normalized",
            Variant::SpectralPurified => "spectral_purified",
            Variant::DepolarizationTolerant => "depolarization_tolerant",
            Variant::Evcdr => "evcdr",
        }
    }

    /// Bases the variant reads.
    pub fn required_bases(self) -> &'static [Basis] {
        match self {
            Variant::ZBias | Variant::ZBiasSquared => &[Basis::Z],
            Variant::PurityNormalized | Variant::SpectralPurified => &Basis::ALL,
            Variant::DepolarizationTolerant => &[Basis::X, Basis::Z],
            _ => &[Basis::X, Basis::Z],
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator variant '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// A component or radicand was clamped to its valid range.
    Clamped,
    /// Spectral purification met a maximally mixed state.
    Degenerate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorResult {
    pub value: f64,
    pub variance: f64,
    pub variant: Variant,
    pub flags: Vec<Flag>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bootstrap {
    pub resamples: usize,
    pub seed: u64,
}

/// Extra inputs some variants need.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EstimatorContext {
    /// Known depolarization rate. When absent the tolerant variant estimates it from the
    /// tomogram.
    pub delta: Option<f64>,
    /// Hilbert-space dimension `d` (system plus ancilla).
    pub dimension: Option<f64>,
    pub bootstrap: Option<Bootstrap>,
    /// `(f_X, f_Z)` for the EVCDR variant.
    pub fits: Option<(RegressionFit, RegressionFit)>,
}

impl EstimatorContext {
    pub fn with_dimension(d: f64) -> Self {
        EstimatorContext {
            dimension: Some(d),
            ..Default::default()
        }
    }
}

/// `e_z / (1 + e_x)`.
pub fn standard_estimate(e_x: f64, e_z: f64) -> Result<f64> {
    let den = 1.0 + e_x;
    if den.abs() < 1e-15 {
        return Err(Error::Numerical("standard estimator with e_x = -1".into()));
    }
    Ok(e_z / den)
}

/// Noiseless forward map `v -> (e_x, e_z)`.
pub fn forward_map(v: f64) -> (f64, f64) {
    let den = 1.0 + v * v;
    ((1.0 - v * v) / den, 2.0 * v / den)
}

#[derive(Clone, Copy)]
struct Components {
    x: f64,
    y: f64,
    z: f64,
    p0: f64,
}

fn point_value(
    c: Components,
    variant: Variant,
    ctx: &EstimatorContext,
    flags: &mut Vec<Flag>,
) -> Result<f64> {
    match variant {
        Variant::Standard => standard_estimate(c.x, c.z),
        Variant::ZBias => {
            let r = 1.0 - c.z;
            Ok(c.z / (1.0 + r.max(0.0).sqrt()))
        }
        Variant::ZBiasSquared => {
            let r = 1.0 - c.z * c.z;
            Ok(c.z / (1.0 + r.max(0.0).sqrt()))
        }
        Variant::XBias => {
            if c.x <= -1.0 {
                return Err(Error::Numerical("x-bias estimator with e_x = -1".into()));
            }
            let sign = if c.z < 0.0 { -1.0 } else { 1.0 };
            Ok(sign * ((1.0 - c.x) / (1.0 + c.x)).max(0.0).sqrt())
        }
        Variant::PurityNormalized => {
            let r = (c.x * c.x + c.y * c.y + c.z * c.z).sqrt();
            if r < 1e-15 {
                return Err(Error::Numerical(
                    "purity normalisation of a zero Bloch vector".into(),
                ));
            }
            standard_estimate(c.x / r, c.z / r)
        }
        Variant::SpectralPurified => {
            let rho01 = Complex64::new(c.x / 2.0, -c.y / 2.0);
            let (a, d) = ((1.0 + c.z) / 2.0, (1.0 - c.z) / 2.0);
            let gap = ((a - d) * (a - d) + 4.0 * rho01.norm_sqr()).sqrt();
            if gap < 1e-12 {
                if !flags.contains(&Flag::Degenerate) {
                    flags.push(Flag::Degenerate);
                }
                return standard_estimate(c.x, c.z);
            }
            let (x, z) = dominant_bloch(a, d, rho01, gap);
            standard_estimate(x, z)
        }
        Variant::DepolarizationTolerant => {
            let d = ctx.dimension.ok_or_else(|| {
                Error::InvalidArgument("depolarization-tolerant estimator needs d".into())
            })?;
            let delta = match ctx.delta {
                Some(delta) => delta,
                None => depolarization_rate(c.x, c.y, c.z, c.p0, d)?,
            };
            if (1.0 - delta).abs() < 1e-15 {
                return Err(Error::Numerical(
                    "depolarization-tolerant estimator at δ = 1".into(),
                ));
            }
            Ok(standard_estimate(c.x, c.z)? * (1.0 + 2.0 * delta / (d * (1.0 - delta))))
        }
        Variant::Evcdr => {
            let (fx, fz) = ctx.fits.as_ref().ok_or_else(|| {
                Error::InvalidArgument("EVCDR estimator needs fitted (f_X, f_Z)".into())
            })?;
            crate::cdr::evcdr_point(c.x, c.z, fx, fz)
        }
    }
}

/// Bloch components `(x, z)` of the dominant eigenvector of
/// `[[a, rho01], [conj(rho01), d]]`, given the eigenvalue gap.
fn dominant_bloch(a: f64, d: f64, rho01: Complex64, gap: f64) -> (f64, f64) {
    let lambda = 0.5 * (a + d + gap);
    // Eigenvector (rho01, λ - a), or (λ - d, conj(rho01)) when that one vanishes.
    let (u0, u1) = if (lambda - a).abs() + rho01.norm() > (lambda - d).abs() + rho01.norm() {
        (rho01, Complex64::new(lambda - a, 0.0))
    } else {
        (Complex64::new(lambda - d, 0.0), rho01.conj())
    };
    let norm = u0.norm_sqr() + u1.norm_sqr();
    let x = 2.0 * (u0.conj() * u1).re / norm;
    let z = (u0.norm_sqr() - u1.norm_sqr()) / norm;
    (x, z)
}

fn components(t: &AncillaTomogram, variant: Variant, flags: &mut Vec<Flag>) -> Result<Components> {
    for &b in variant.required_bases() {
        if t.basis(b).is_none() {
            return Err(Error::InvalidArgument(format!(
                "{variant} estimator needs {b:?}-basis data"
            )));
        }
    }
    let mut clamped = 0;
    let mut get = |b| {
        t.basis(b)
            .map(|e| clamp_unit(e.mean, &mut clamped))
            .unwrap_or(0.0)
    };
    let c = Components {
        x: get(Basis::X),
        y: get(Basis::Y),
        z: get(Basis::Z),
        p0: t.p0_hat,
    };
    if clamped > 0 || t.clamped > 0 {
        flags.push(Flag::Clamped);
    }
    Ok(c)
}

/// Evaluate `variant` on a tomogram. The variance is a parametric bootstrap over the
/// per-basis binomial counts (and zero for exact tomograms or without a bootstrap
/// request).
pub fn estimate(
    t: &AncillaTomogram,
    variant: Variant,
    ctx: &EstimatorContext,
) -> Result<EstimatorResult> {
    let mut flags = Vec::new();
    let c = components(t, variant, &mut flags)?;
    let value = point_value(c, variant, ctx, &mut flags)?;
    let variance = match ctx.bootstrap {
        Some(b) if !t.is_exact() => bootstrap_estimator_variance(t, variant, ctx, b)?,
        _ => 0.0,
    };
    Ok(EstimatorResult {
        value,
        variance,
        variant,
        flags,
    })
}

fn bootstrap_estimator_variance(
    t: &AncillaTomogram,
    variant: Variant,
    ctx: &EstimatorContext,
    b: Bootstrap,
) -> Result<f64> {
    if b.resamples < 2 {
        return Err(Error::InvalidArgument(
            "bootstrap needs at least 2 resamples".into(),
        ));
    }
    let mut rng = stream_rng(b.seed, 0xB007);
    let resample = |e: Option<&BasisEstimate>, rng: &mut _| -> Result<f64> {
        match e {
            None => Ok(0.0),
            Some(e) if e.shots == 0 => Ok(e.mean),
            Some(e) => {
                let p = e.plus as f64 / e.shots as f64;
                let bin = Binomial::new(e.shots, p)
                    .map_err(|err| Error::Numerical(format!("binomial resampling: {err}")))?;
                let k = bin.sample(rng);
                Ok((2.0 * k as f64 - e.shots as f64) / e.shots as f64)
            }
        }
    };
    let p0_bin = if t.n_total > 0 {
        Some(
            Binomial::new(t.n_total, t.p0_hat.clamp(0.0, 1.0))
                .map_err(|err| Error::Numerical(format!("binomial resampling: {err}")))?,
        )
    } else {
        None
    };
    let mut values = Vec::with_capacity(b.resamples);
    let mut scratch = Vec::new();
    for _ in 0..b.resamples {
        let c = Components {
            x: resample(t.x.as_ref(), &mut rng)?,
            y: resample(t.y.as_ref(), &mut rng)?,
            z: resample(t.z.as_ref(), &mut rng)?,
            p0: match &p0_bin {
                Some(bin) => bin.sample(&mut rng) as f64 / t.n_total as f64,
                None => t.p0_hat,
            },
        };
        // Resamples that land on a singular point (e.g. e_x = -1) are skipped.
        if let Ok(v) = point_value(c, variant, ctx, &mut scratch) {
            if v.is_finite() {
                values.push(v);
            }
        }
    }
    if values.len() < 2 {
        return Err(Error::Numerical(
            "bootstrap produced fewer than two finite estimates".into(),
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0))
}

/// `δ = d·p0·(1-γ) / (1 + √(2γ-1))` with `γ = (1 + e_x² + e_y² + e_z²)/2`.
pub fn depolarization_rate(e_x: f64, e_y: f64, e_z: f64, p0: f64, d: f64) -> Result<f64> {
    let gamma = 0.5 * (1.0 + e_x * e_x + e_y * e_y + e_z * e_z);
    if gamma <= 0.5 {
        return Err(Error::Numerical(format!(
            "purity {gamma} ≤ 1/2: depolarization rate undefined"
        )));
    }
    Ok(d * p0 * (1.0 - gamma) / (1.0 + (2.0 * gamma - 1.0).sqrt()))
}

pub fn estimate_depolarization_rate(t: &AncillaTomogram, d: f64) -> Result<f64> {
    let get = |b| t.basis(b).map(|e: &BasisEstimate| e.mean.clamp(-1.0, 1.0)).unwrap_or(0.0);
    depolarization_rate(get(Basis::X), get(Basis::Y), get(Basis::Z), t.p0_hat, d)
}

// Pipelines

/// Normalised postselected ancilla state and acceptance probability from the exact
/// density-matrix evolution.
pub fn exact_ancilla_state(
    ev: &EvCircuit,
    noise: &NoiseModel,
    rule: &PostselectionRule,
) -> Result<([[Complex64; 2]; 2], f64)> {
    if ev.n_qubits() > MAX_EXACT_QUBITS {
        return Err(Error::InvalidArgument(format!(
            "exact mode supports at most {MAX_EXACT_QUBITS} qubits, got {}",
            ev.n_qubits()
        )));
    }
    rule.validate(ev.n_system())?;
    let mut rho = DensityMatrix::zero(ev.n_qubits());
    rho.evolve_noisy(ev.circuit(), noise)?;
    let (p0, mut block) = rho.postselected_ancilla(ev.ancilla_index(), &|b| rule.accepts(b))?;
    if p0 <= 1e-300 {
        return Err(Error::PostselectionAnnihilated);
    }
    for row in block.iter_mut() {
        for e in row.iter_mut() {
            *e /= p0;
        }
    }
    Ok((block, p0))
}

pub fn exact_tomogram(
    ev: &EvCircuit,
    noise: &NoiseModel,
    rule: &PostselectionRule,
) -> Result<AncillaTomogram> {
    let (rho, p0) = exact_ancilla_state(ev, noise, rule)?;
    Ok(AncillaTomogram::from_density(&rho, p0))
}

/// Noiseless exact tomogram via the statevector (no qubit limit beyond memory).
pub fn noiseless_tomogram(ev: &EvCircuit, rule: &PostselectionRule) -> Result<AncillaTomogram> {
    rule.validate(ev.n_system())?;
    let mut psi = Statevector::zero(ev.n_qubits());
    psi.apply_circuit(ev.circuit())?;
    let (p0, mut block) = psi.postselected_ancilla(ev.ancilla_index(), &|b| rule.accepts(b))?;
    if p0 <= 1e-300 {
        return Err(Error::PostselectionAnnihilated);
    }
    for row in block.iter_mut() {
        for e in row.iter_mut() {
            *e /= p0;
        }
    }
    Ok(AncillaTomogram::from_density(&block, p0))
}

/// Shot budget for the sampled pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingPlan {
    pub bases: Vec<Basis>,
    pub shots_per_basis: usize,
    /// Independent noise trajectories; each contributes an equal share of the shots.
    pub trajectories: usize,
    pub seed: u64,
}

/// Trajectory-sampled shots: exactly `shots_per_basis` records per basis.
pub fn sample_ev_shots(
    ev: &EvCircuit,
    noise: &NoiseModel,
    plan: &SamplingPlan,
) -> Result<Vec<ShotRecord>> {
    if plan.shots_per_basis == 0 || plan.trajectories == 0 || plan.bases.is_empty() {
        return Err(Error::InvalidArgument(
            "sampling plan needs shots, trajectories and at least one basis".into(),
        ));
    }
    let traj = if noise.is_noiseless() {
        1
    } else {
        plan.trajectories.min(plan.shots_per_basis)
    };
    let per = plan.shots_per_basis.div_ceil(traj);
    let records = sample_trajectories(
        ev.circuit(),
        noise,
        ev.ancilla_index(),
        &plan.bases,
        traj,
        per,
        plan.seed,
    )?;
    let mut taken = [0usize; 3];
    Ok(records
        .into_iter()
        .filter(|r| {
            let slot = &mut taken[r.basis as usize];
            *slot += 1;
            *slot <= plan.shots_per_basis
        })
        .collect())
}

pub fn sampled_tomogram(
    ev: &EvCircuit,
    noise: &NoiseModel,
    rule: &PostselectionRule,
    plan: &SamplingPlan,
) -> Result<AncillaTomogram> {
    rule.validate(ev.n_system())?;
    let records = sample_ev_shots(ev, noise, plan)?;
    AncillaTomogram::from_shots(&records, rule, &plan.bases)
}

/// Noiseless `<0|U†VU|0>` via the statevector.
pub fn exact_expectation(u: &Circuit, v: &PauliString) -> Result<f64> {
    let mut psi = Statevector::zero(u.n_qubits());
    psi.apply_circuit(u)?;
    psi.expectation(v)
}

/// Ancilla-only Pauli (`P` on the ancilla of an `n_system + 1` register).
pub fn ancilla_pauli(n_system: usize, p: Pauli) -> PauliString {
    PauliString::single(n_system + 1, n_system, p).expect("ancilla index in range")
}
