//! Closed-form ancilla state of echo verification under a Pauli channel applied to the
//! full register (system plus ancilla) just before measurement.
//!
//! For an error `P_i = P_i^sys ⊗ Q` with rate `λ_i`, write `δ_i = 1` if `P_i^sys` is
//! Z-type (0 otherwise) and `Γ_i = <0|U†VU P_i^sys|0>`. Postselection on the zero system
//! state leaves the unnormalised ancilla block
//! `Σ_i λ_i Q σ_i Q` with `σ_i = ½[δ_i|+><+| + |Γ_i|²|−><−| + δ_i<V>(|+><−| + |−><+|)]`.
//! Its trace is `p0 = Σ_i λ_i p_{0|i}`, `p_{0|i} = (δ_i + |Γ_i|²)/2`.

use num_complex::Complex64;
use rand::Rng;

use crate::circuit::Circuit;
use crate::error::{Error, Result};
use crate::ev::{build_ev_circuit, exact_ancilla_state, forward_map, PostselectionRule};
use crate::pauli::{Pauli, PauliString};
use crate::statevector::{DensityMatrix, NoiseModel, PauliChannel, Statevector};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelFactors {
    pub lambda_z: f64,
    pub lambda_x: f64,
    pub omega_x: f64,
}

/// Signs of the Z- and X-components of `Q|±><±|Q`-type terms per ancilla factor.
fn signs(q: Pauli) -> (f64, f64) {
    match q {
        Pauli::I => (1.0, 1.0),
        Pauli::X => (-1.0, 1.0),
        Pauli::Y => (-1.0, -1.0),
        Pauli::Z => (1.0, -1.0),
    }
}

/// `Λ_Z = Σ_{Z-type} (λ^I − λ^X − λ^Y + λ^Z)`, `Λ_X = Σ_{Z-type} (λ^I + λ^X − λ^Y − λ^Z)`
/// and `Ω_X = Σ_{other} (λ^I + λ^X − λ^Y − λ^Z)`, grouping errors by their ancilla factor.
pub fn channel_factors(channel: &PauliChannel, ancilla_index: usize) -> Result<ChannelFactors> {
    let mut f = ChannelFactors {
        lambda_z: 0.0,
        lambda_x: 0.0,
        omega_x: 0.0,
    };
    for (p, lambda) in channel.errors() {
        let split = p.split(ancilla_index)?;
        let (sz, sx) = signs(split.ancilla_part);
        if split.system_part.is_z_type() {
            f.lambda_z += sz * lambda;
            f.lambda_x += sx * lambda;
        } else {
            f.omega_x += sx * lambda;
        }
    }
    Ok(f)
}

/// `(tr_x, tr_y, tr_z) = ((1−v²)/(1+v²)·Λ_X − Ω_X, 0, 2v/(1+v²)·Λ_Z)`.
pub fn predict_expectations(factors: &ChannelFactors, v_exact: f64) -> (f64, f64, f64) {
    let (x, z) = forward_map(v_exact);
    (x * factors.lambda_x - factors.omega_x, 0.0, z * factors.lambda_z)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalEntry {
    pub error: PauliString,
    pub lambda: f64,
    pub ancilla_part: Pauli,
    pub gamma: Complex64,
    pub delta_z: bool,
    pub p0_given: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalPostselection {
    pub entries: Vec<ConditionalEntry>,
    /// Noiseless `<V>`.
    pub v_exact: f64,
}

impl ConditionalPostselection {
    /// `Σ_i λ_i p_{0|i}`.
    pub fn p0(&self) -> f64 {
        self.entries.iter().map(|e| e.lambda * e.p0_given).sum()
    }
}

fn check_sizes(channel: &PauliChannel, u: &Circuit, v: &PauliString) -> Result<()> {
    if v.n_qubits() != u.n_qubits() {
        return Err(Error::DimensionMismatch {
            expected: u.n_qubits(),
            got: v.n_qubits(),
        });
    }
    if channel.n_qubits() != u.n_qubits() + 1 {
        return Err(Error::DimensionMismatch {
            expected: u.n_qubits() + 1,
            got: channel.n_qubits(),
        });
    }
    Ok(())
}

/// `Γ_i`, `δ_i` and `p_{0|i}` for every listed error. The ancilla is the last qubit.
pub fn conditional_p0(
    channel: &PauliChannel,
    u: &Circuit,
    v: &PauliString,
) -> Result<ConditionalPostselection> {
    check_sizes(channel, u, v)?;
    let n = u.n_qubits();
    let mut psi = Statevector::zero(n);
    psi.apply_circuit(u)?;
    let v_exact = psi.expectation(v)?;
    let mut vpsi = psi.clone();
    vpsi.apply_pauli(v)?;
    let mut cache: std::collections::HashMap<u64, Complex64> = std::collections::HashMap::new();
    let mut entries = Vec::with_capacity(channel.errors().len());
    for (p, lambda) in channel.errors() {
        let split = p.split(n)?;
        let sys = split.system_part;
        let (c, x) = sys.apply_to_basis(0);
        let overlap = match cache.get(&x) {
            Some(&o) => o,
            None => {
                let mut phi = Statevector::basis_state(n, x as usize)?;
                phi.apply_circuit(u)?;
                let o = vpsi.inner(&phi)?;
                cache.insert(x, o);
                o
            }
        };
        let gamma = c * overlap;
        let delta_z = sys.is_z_type();
        let p0_given = 0.5 * (if delta_z { 1.0 } else { 0.0 } + gamma.norm_sqr());
        entries.push(ConditionalEntry {
            error: p.clone(),
            lambda: *lambda,
            ancilla_part: split.ancilla_part,
            gamma,
            delta_z,
            p0_given,
        });
    }
    Ok(ConditionalPostselection { entries, v_exact })
}

type Mat2 = [[Complex64; 2]; 2];

fn sigma(e: &ConditionalEntry, v: f64) -> Mat2 {
    // In the computational basis: |+><+| = ½[[1,1],[1,1]], |−><−| = ½[[1,−1],[−1,1]],
    // |+><−| + |−><+| = Z.
    let d = if e.delta_z { 1.0 } else { 0.0 };
    let g = e.gamma.norm_sqr();
    let a = 0.25 * (d + g) + 0.5 * d * v;
    let b = 0.25 * (d - g);
    let dd = 0.25 * (d + g) - 0.5 * d * v;
    let c = |r| Complex64::new(r, 0.0);
    [[c(a), c(b)], [c(b), c(dd)]]
}

fn conjugate(q: Pauli, m: &Mat2) -> Mat2 {
    let p = q.matrix();
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, o) in row.iter_mut().enumerate() {
            for k in 0..2 {
                for l in 0..2 {
                    // Pauli matrices are Hermitian, so Q m Q† = Q m Q.
                    *o += p[r][k] * m[k][l] * p[l][c];
                }
            }
        }
    }
    out
}

fn to_density(m: Mat2) -> Result<DensityMatrix> {
    DensityMatrix::from_entries(1, vec![m[0][0], m[0][1], m[1][0], m[1][1]])
}

/// Normalised postselected ancilla state `Σ_i λ_i Q σ_i Q / p0`.
pub fn predicted_ancilla_state(
    channel: &PauliChannel,
    u: &Circuit,
    v: &PauliString,
) -> Result<DensityMatrix> {
    let cond = conditional_p0(channel, u, v)?;
    let mut acc = [[Complex64::new(0.0, 0.0); 2]; 2];
    for e in &cond.entries {
        let m = conjugate(e.ancilla_part, &sigma(e, cond.v_exact));
        for r in 0..2 {
            for c in 0..2 {
                acc[r][c] += e.lambda * m[r][c];
            }
        }
    }
    let p0 = cond.p0();
    if p0 <= 1e-300 {
        return Err(Error::PostselectionAnnihilated);
    }
    for row in acc.iter_mut() {
        for e in row.iter_mut() {
            *e /= p0;
        }
    }
    to_density(acc)
}

/// The per-error-normalised mixture `Σ_i λ_i Q (σ_i / p_{0|i}) Q`, i.e. each conditional
/// state weighted by its error rate alone. It coincides with
/// [`predicted_ancilla_state`] only when every `p_{0|i}` equals the overall `p0`; it is
/// kept to quantify that gap. Errors with `p_{0|i} = 0` are skipped and the remaining
/// weights renormalised.
pub fn unweighted_ancilla_state(
    channel: &PauliChannel,
    u: &Circuit,
    v: &PauliString,
) -> Result<DensityMatrix> {
    let cond = conditional_p0(channel, u, v)?;
    let mut acc = [[Complex64::new(0.0, 0.0); 2]; 2];
    let mut mass = 0.0;
    for e in cond.entries.iter().filter(|e| e.p0_given > 1e-15) {
        let m = conjugate(e.ancilla_part, &sigma(e, cond.v_exact));
        mass += e.lambda;
        for r in 0..2 {
            for c in 0..2 {
                acc[r][c] += e.lambda * m[r][c] / e.p0_given;
            }
        }
    }
    if mass <= 1e-300 {
        return Err(Error::PostselectionAnnihilated);
    }
    for row in acc.iter_mut() {
        for e in row.iter_mut() {
            *e /= mass;
        }
    }
    to_density(acc)
}

/// `(Tr(Xρ), Tr(Yρ), Tr(Zρ))` of a single-qubit density matrix.
pub fn bloch(rho: &DensityMatrix) -> (f64, f64, f64) {
    let r01 = rho.get(0, 1);
    (2.0 * r01.re, -2.0 * r01.im, (rho.get(0, 0) - rho.get(1, 1)).re)
}

/// Ancilla expectations and `p0` from the dense pipeline: EV circuit, channel at the end,
/// zero-state projector, partial trace.
pub fn exact_expectations(
    channel: &PauliChannel,
    u: &Circuit,
    v: &PauliString,
) -> Result<((f64, f64, f64), f64)> {
    check_sizes(channel, u, v)?;
    let ev = build_ev_circuit(u, v)?;
    let noise = NoiseModel::noiseless().with_final(channel.clone());
    let (rho, p0) = exact_ancilla_state(&ev, &noise, &PostselectionRule::exact())?;
    let e = (2.0 * rho[0][1].re, -2.0 * rho[0][1].im, (rho[0][0] - rho[1][1]).re);
    Ok((e, p0))
}

/// Random sparse channel: `n_errors` distinct non-identity Paulis with rates summing to
/// at most `max_total`, identity taking the remainder.
pub fn random_pauli_channel<R: Rng>(
    n_qubits: usize,
    n_errors: usize,
    max_total: f64,
    rng: &mut R,
) -> Result<PauliChannel> {
    let mut errors: Vec<(PauliString, f64)> = Vec::with_capacity(n_errors);
    let limit = (1usize << (2 * n_qubits)) - 1;
    let mut attempts = 0;
    while errors.len() < n_errors.min(limit) && attempts < 100 * (n_errors + 1) {
        attempts += 1;
        let paulis: Vec<Pauli> = (0..n_qubits)
            .map(|_| [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z][rng.gen_range(0..4)])
            .collect();
        let p = PauliString::from_paulis(&paulis);
        if p.is_identity() || errors.iter().any(|(e, _)| e.same_operator(&p)) {
            continue;
        }
        errors.push((p, rng.gen::<f64>()));
    }
    let total: f64 = rng.gen::<f64>() * max_total;
    let s: f64 = errors.iter().map(|(_, w)| w).sum();
    for (_, w) in errors.iter_mut() {
        *w *= total / s.max(1e-300);
    }
    PauliChannel::sparse(n_qubits, errors)
}
