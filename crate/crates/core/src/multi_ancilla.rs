//! Multi-ancilla echo verification for several Pauli observables at once.
//!
//! Tensor-control variant: ancilla `m` (qubit `n + m`) controls `P_m`. After
//! postselecting the system on `|0…0>` and undoing the final Hadamards, the ancilla
//! register holds `Σ_b <P_b>|b> / N` with `P_b = Π_{b_m=1} P_m` and `N² = Σ_b |<P_b>|²`.
//! Measured in the final frame, `<X_a>` (physical `X` on the ancillas in `a`) equals
//! `Σ_b (-1)^{a·b} |<P_b>|² / N²`, which gives
//! `(1 - <P_m>²)/N² = 2^{-(M-1)} Σ_{a: a_m=1} <X_a>` and
//! `<P_m> = N²/2^M · Σ_{a' ⊆ others} <Z_m X_{a'}>`, with `N² = 2^M / Σ_a <X_a>`.
//!
//! Multicontrol variant: `q = ⌈log2(M+1)⌉` ancillas; label `m` (in binary) selects `P_m`,
//! label 0 and unused labels apply nothing. Undoing the final Hadamards leaves
//! `|0> + Σ_m <P_m>|m> + Σ_unused |ℓ>` up to normalisation, so `<P_m> = ρ[m][0] / ρ[0][0]`.

use std::collections::HashMap;

use num_complex::Complex64;

use crate::circuit::{Circuit, Gate};
use crate::error::{Error, Result};
use crate::pauli::PauliString;
use crate::statevector::Statevector;

/// Largest number of observables handled.
pub const MAX_OBSERVABLES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MultiAncillaVariant {
    TensorControl,
    Multicontrol,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiAncillaPlan {
    pub observables: Vec<PauliString>,
    pub variant: MultiAncillaVariant,
}

impl MultiAncillaPlan {
    pub fn m(&self) -> usize {
        self.observables.len()
    }

    pub fn n_ancillas(&self) -> usize {
        match self.variant {
            MultiAncillaVariant::TensorControl => self.m(),
            MultiAncillaVariant::Multicontrol => multicontrol_width(self.m()),
        }
    }

    fn validate(&self, n_system: usize) -> Result<()> {
        if self.observables.is_empty() || self.m() > MAX_OBSERVABLES {
            return Err(Error::InvalidArgument(format!(
                "multi-ancilla EV supports 1..={MAX_OBSERVABLES} observables, got {}",
                self.m()
            )));
        }
        for p in &self.observables {
            if p.n_qubits() != n_system {
                return Err(Error::DimensionMismatch {
                    expected: n_system,
                    got: p.n_qubits(),
                });
            }
            if !p.is_hermitian() {
                return Err(Error::InvalidArgument(format!("observable {p} is not Hermitian")));
            }
        }
        Ok(())
    }
}

/// `⌈log2(M+1)⌉`.
pub fn multicontrol_width(m: usize) -> usize {
    let mut q = 0;
    while (1usize << q) < m + 1 {
        q += 1;
    }
    q
}

/// Circuit on `n_system + n_ancillas` qubits, ancillas last.
pub fn build_circuit(u: &Circuit, plan: &MultiAncillaPlan) -> Result<Circuit> {
    let n = u.n_qubits();
    plan.validate(n)?;
    let q = plan.n_ancillas();
    let mut gates: Vec<Gate> = (n..n + q).map(Gate::H).collect();
    gates.extend_from_slice(u.gates());
    match plan.variant {
        MultiAncillaVariant::TensorControl => {
            for (m, p) in plan.observables.iter().enumerate() {
                push_controlled(&mut gates, p, n + m);
            }
        }
        MultiAncillaVariant::Multicontrol if plan.m() == 1 => {
            push_controlled(&mut gates, &plan.observables[0], n);
        }
        MultiAncillaVariant::Multicontrol => {
            let controls = ((1u64 << q) - 1) << n;
            for (i, p) in plan.observables.iter().enumerate() {
                let label = (i + 1) as u64;
                let pattern = label << n;
                for t in p.support() {
                    gates.push(Gate::MultiControlledPauli {
                        controls,
                        pattern,
                        target: t,
                        pauli: p.get(t),
                    });
                }
                if p.phase_exponent() == 2 {
                    // -1 on label m: Z on one set bit of m, controlled on the others.
                    let bit = label.trailing_zeros() as usize;
                    let target = n + bit;
                    gates.push(Gate::MultiControlledPauli {
                        controls: controls & !(1u64 << target),
                        pattern: pattern & !(1u64 << target),
                        target,
                        pauli: crate::pauli::Pauli::Z,
                    });
                }
            }
        }
    }
    gates.extend(u.gates().iter().rev().map(Gate::inverse));
    gates.extend((n..n + q).map(Gate::H));
    Circuit::from_gates(n + q, gates)
}

fn push_controlled(gates: &mut Vec<Gate>, p: &PauliString, control: usize) {
    for t in p.support() {
        gates.push(Gate::ControlledPauli {
            control,
            target: t,
            pauli: p.get(t),
        });
    }
    if p.phase_exponent() == 2 {
        gates.push(Gate::Z(control));
    }
}

/// Normalised ancilla amplitudes after zero-postselection of a noiseless run, plus the
/// acceptance probability.
pub fn postselected_ancilla_amplitudes(
    u: &Circuit,
    plan: &MultiAncillaPlan,
) -> Result<(Vec<Complex64>, f64)> {
    let c = build_circuit(u, plan)?;
    let n = u.n_qubits();
    let mut psi = Statevector::zero(c.n_qubits());
    psi.apply_circuit(&c)?;
    let q = plan.n_ancillas();
    let sys_mask = (1usize << n) - 1;
    let mut amps = vec![Complex64::new(0.0, 0.0); 1 << q];
    for (k, a) in psi.amplitudes().iter().enumerate() {
        if k & sys_mask == 0 {
            amps[k >> n] = *a;
        }
    }
    let p0: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    if p0 <= 1e-300 {
        return Err(Error::PostselectionAnnihilated);
    }
    let s = p0.sqrt();
    for a in amps.iter_mut() {
        *a /= s;
    }
    Ok((amps, p0))
}

/// Ancilla-register Pauli expectations keyed by `(x_mask, z_mask)` (phase-free labels,
/// `Y` where both bits are set).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AncillaStats {
    pub n_ancillas: usize,
    pub values: HashMap<(u64, u64), f64>,
}

impl AncillaStats {
    pub fn get(&self, x_mask: u64, z_mask: u64) -> Result<f64> {
        self.values.get(&(x_mask, z_mask)).copied().ok_or_else(|| {
            let p = PauliString::from_masks(self.n_ancillas, x_mask, z_mask);
            Error::InvalidArgument(format!("missing ancilla expectation for {p}"))
        })
    }

    /// Every Pauli the tensor-variant recovery reads: all `X_a`, and `Z_m X_{a'}` with
    /// `a'` avoiding `m`.
    pub fn tensor_requirements(m: usize) -> Vec<(u64, u64)> {
        let full = (1u64 << m) - 1;
        let mut out: Vec<(u64, u64)> = (0..=full).map(|a| (a, 0)).collect();
        for k in 0..m {
            let bit = 1u64 << k;
            for a in 0..=full {
                if a & bit == 0 {
                    out.push((a, bit));
                }
            }
        }
        out
    }

    /// Exact expectations of the listed Paulis on a pure ancilla state.
    pub fn from_amplitudes(amps: &[Complex64], keys: &[(u64, u64)]) -> Result<Self> {
        let q = amps.len().trailing_zeros() as usize;
        let psi = Statevector::from_amplitudes(amps.to_vec())?;
        let mut values = HashMap::with_capacity(keys.len());
        for &(x, z) in keys {
            let p = PauliString::from_masks(q, x, z);
            values.insert((x, z), psi.expectation(&p)?);
        }
        Ok(AncillaStats {
            n_ancillas: q,
            values,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecovery {
    /// `<P_m>` with magnitude from the X-string sum and sign from the Z analogs.
    pub values: Vec<f64>,
    /// `<P_m>` from the Z-analog sum alone.
    pub linear: Vec<f64>,
    /// X-string terms summed per observable.
    pub terms_per_observable: Vec<usize>,
    /// `N² = Σ_b |<P_b>|²`.
    pub norm_sqr: f64,
}

pub fn recover_tensor(stats: &AncillaStats, m: usize) -> Result<TensorRecovery> {
    if m == 0 || m > MAX_OBSERVABLES {
        return Err(Error::InvalidArgument(format!("M = {m} out of range")));
    }
    let full = (1u64 << m) - 1;
    let total: f64 = (0..=full)
        .map(|a| stats.get(a, 0))
        .sum::<Result<f64>>()?;
    if total <= 1e-300 {
        return Err(Error::Numerical("X-string sum vanishes".into()));
    }
    let norm_sqr = (1u64 << m) as f64 / total;
    let half = (1u64 << (m - 1)) as f64;
    let (mut values, mut linear, mut terms) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..m {
        let bit = 1u64 << k;
        let (mut s, mut count) = (0.0, 0usize);
        for a in (0..=full).filter(|a| a & bit != 0) {
            s += stats.get(a, 0)?;
            count += 1;
        }
        let mag = (1.0 - norm_sqr * s / half).max(0.0).sqrt();
        let lin: f64 = (0..=full)
            .filter(|a| a & bit == 0)
            .map(|a| stats.get(a, bit))
            .sum::<Result<f64>>()?
            * norm_sqr
            / (1u64 << m) as f64;
        values.push(if lin < 0.0 { -mag } else { mag });
        linear.push(lin);
        terms.push(count);
    }
    Ok(TensorRecovery {
        values,
        linear,
        terms_per_observable: terms,
        norm_sqr,
    })
}

/// Apply `H^{⊗q}` to an ancilla density matrix (row-major, `2^q x 2^q`).
fn undo_hadamards(rho: &[Complex64], q: usize) -> Vec<Complex64> {
    let dim = 1usize << q;
    let scale = 1.0 / dim as f64;
    let sign = |i: usize, j: usize| if (i & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
    let mut out = vec![Complex64::new(0.0, 0.0); dim * dim];
    for r in 0..dim {
        for c in 0..dim {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..dim {
                for j in 0..dim {
                    acc += rho[i * dim + j] * (sign(r, i) * sign(j, c));
                }
            }
            out[r * dim + c] = acc * scale;
        }
    }
    out
}

/// `<P_m> = ρ'[m][0] / ρ'[0][0]` with `ρ' = H^{⊗q} ρ H^{⊗q}`.
pub fn recover_multicontrol(rho: &[Complex64], m: usize) -> Result<Vec<f64>> {
    let q = multicontrol_width(m);
    let dim = 1usize << q;
    if rho.len() != dim * dim {
        return Err(Error::DimensionMismatch {
            expected: dim * dim,
            got: rho.len(),
        });
    }
    let frame = undo_hadamards(rho, q);
    let r00 = frame[0].re;
    if r00.abs() < 1e-15 {
        return Err(Error::Numerical("vanishing |0> component".into()));
    }
    Ok((1..=m).map(|k| frame[k * dim].re / r00).collect())
}

/// `|ψ><ψ|` for ancilla amplitudes.
pub fn density_from_amplitudes(amps: &[Complex64]) -> Vec<Complex64> {
    let dim = amps.len();
    let mut out = vec![Complex64::new(0.0, 0.0); dim * dim];
    for r in 0..dim {
        for c in 0..dim {
            out[r * dim + c] = amps[r] * amps[c].conj();
        }
    }
    out
}

/// Noiseless end-to-end recovery for either variant. The tensor variant returns the
/// Z-analog values: the square-root magnitude loses about half the mantissa near
/// `<P_m> = 0` (error ~1e-8 in double precision).
pub fn recover_noiseless(u: &Circuit, plan: &MultiAncillaPlan) -> Result<Vec<f64>> {
    let (amps, _) = postselected_ancilla_amplitudes(u, plan)?;
    match plan.variant {
        MultiAncillaVariant::TensorControl => {
            let keys = AncillaStats::tensor_requirements(plan.m());
            let stats = AncillaStats::from_amplitudes(&amps, &keys)?;
            Ok(recover_tensor(&stats, plan.m())?.linear)
        }
        MultiAncillaVariant::Multicontrol => {
            recover_multicontrol(&density_from_amplitudes(&amps), plan.m())
        }
    }
}
