//! Dense simulation: statevectors, density matrices, Pauli channels and trajectory sampling.
//!
//! Amplitude index bit `q` is qubit `q` (little-endian). Density matrices are stored
//! row-major with the row index in the high `n` bits of the flattened index, so a gate `U`
//! acts on the rows by applying it to qubits `q + n` of the flattened vector.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::circuit::{Circuit, Gate};
use crate::error::{Error, Result};
use crate::pauli::{Pauli, PauliString};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Generator for trajectory `stream` under `seed`. Every sampling routine derives its
/// randomness from here so results are reproducible across runs and thread counts.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// ---------------------------------------------------------------------------------------
// Kernels

fn apply_1q(amps: &mut [Complex64], q: usize, m: &[[Complex64; 2]; 2]) {
    let stride = 1usize << q;
    let dim = amps.len();
    let mut base = 0;
    while base < dim {
        for i0 in base..base + stride {
            let i1 = i0 + stride;
            let (a, b) = (amps[i0], amps[i1]);
            amps[i0] = m[0][0] * a + m[0][1] * b;
            amps[i1] = m[1][0] * a + m[1][1] * b;
        }
        base += 2 * stride;
    }
}

fn apply_diag_1q(amps: &mut [Complex64], q: usize, d0: Complex64, d1: Complex64) {
    let bit = 1usize << q;
    for (i, a) in amps.iter_mut().enumerate() {
        *a *= if i & bit == 0 { d0 } else { d1 };
    }
}

fn apply_h(amps: &mut [Complex64], q: usize) {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let stride = 1usize << q;
    let dim = amps.len();
    let mut base = 0;
    while base < dim {
        for i0 in base..base + stride {
            let i1 = i0 + stride;
            let (a, b) = (amps[i0], amps[i1]);
            amps[i0] = (a + b) * r;
            amps[i1] = (a - b) * r;
        }
        base += 2 * stride;
    }
}

/// Pauli `p` on `target` for basis states whose bits under `cmask` equal `cval`.
fn apply_controlled_pauli(amps: &mut [Complex64], cmask: usize, cval: usize, target: usize, p: Pauli) {
    let t = 1usize << target;
    let i = Complex64::new(0.0, 1.0);
    for k in 0..amps.len() {
        if k & cmask != cval {
            continue;
        }
        match p {
            Pauli::I => {}
            Pauli::Z => {
                if k & t != 0 {
                    amps[k] = -amps[k];
                }
            }
            Pauli::X | Pauli::Y => {
                if k & t == 0 {
                    let k1 = k | t;
                    let (a, b) = (amps[k], amps[k1]);
                    if p == Pauli::X {
                        amps[k] = b;
                        amps[k1] = a;
                    } else {
                        // Y|0> = i|1>, Y|1> = -i|0>
                        amps[k] = -i * b;
                        amps[k1] = i * a;
                    }
                }
            }
        }
    }
}

/// Apply `gate` to a flat amplitude vector whose length is a power of two.
pub fn apply_gate_to_amplitudes(amps: &mut [Complex64], gate: &Gate) {
    match *gate {
        Gate::H(q) => apply_h(amps, q),
        Gate::S(q) => apply_diag_1q(amps, q, ONE, Complex64::new(0.0, 1.0)),
        Gate::Sdg(q) => apply_diag_1q(amps, q, ONE, Complex64::new(0.0, -1.0)),
        Gate::Z(q) => apply_diag_1q(amps, q, ONE, -ONE),
        Gate::X(q) => apply_controlled_pauli(amps, 0, 0, q, Pauli::X),
        Gate::Y(q) => apply_controlled_pauli(amps, 0, 0, q, Pauli::Y),
        Gate::Rz(q, t) => {
            let (s, c) = (t / 2.0).sin_cos();
            apply_diag_1q(amps, q, Complex64::new(c, -s), Complex64::new(c, s))
        }
        Gate::Rx(..) => apply_1q(amps, gate.targets().as_slice()[0], &gate.matrix_1q().unwrap()),
        Gate::Cnot { control, target } => {
            apply_controlled_pauli(amps, 1 << control, 1 << control, target, Pauli::X)
        }
        Gate::Cz(a, b) => {
            let m = (1usize << a) | (1usize << b);
            for (k, v) in amps.iter_mut().enumerate() {
                if k & m == m {
                    *v = -*v;
                }
            }
        }
        Gate::Rzz(a, b, t) => {
            let (s, c) = (t / 2.0).sin_cos();
            let even = Complex64::new(c, -s);
            let odd = Complex64::new(c, s);
            for (k, v) in amps.iter_mut().enumerate() {
                let parity = ((k >> a) ^ (k >> b)) & 1;
                *v *= if parity == 0 { even } else { odd };
            }
        }
        Gate::ControlledPauli {
            control,
            target,
            pauli,
        } => apply_controlled_pauli(amps, 1 << control, 1 << control, target, pauli),
        Gate::MultiControlledPauli {
            controls,
            pattern,
            target,
            pauli,
        } => apply_controlled_pauli(amps, controls as usize, pattern as usize, target, pauli),
    }
}

/// `P|ψ>` for a Pauli string including its phase.
fn apply_pauli_to_amplitudes(amps: &mut [Complex64], p: &PauliString) {
    let x = p.x_mask() as usize;
    if x == 0 {
        for (k, a) in amps.iter_mut().enumerate() {
            let (c, _) = p.apply_to_basis(k as u64);
            *a *= c;
        }
        return;
    }
    let hi = 1usize << (63 - (x as u64).leading_zeros());
    for k in 0..amps.len() {
        if k & hi != 0 {
            continue;
        }
        let k1 = k ^ x;
        let (c0, _) = p.apply_to_basis(k as u64);
        let (c1, _) = p.apply_to_basis(k1 as u64);
        let (a, b) = (amps[k], amps[k1]);
        amps[k1] = c0 * a;
        amps[k] = c1 * b;
    }
}

// ---------------------------------------------------------------------------------------
// Statevector

#[derive(Clone, Debug, PartialEq)]
pub struct Statevector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl Statevector {
    /// |0...0> on `n` qubits.
    pub fn zero(n_qubits: usize) -> Self {
        let mut amps = vec![ZERO; 1 << n_qubits];
        amps[0] = ONE;
        Statevector { n_qubits, amps }
    }

    pub fn basis_state(n_qubits: usize, index: usize) -> Result<Self> {
        if index >= 1 << n_qubits {
            return Err(Error::InvalidArgument(format!("basis index {index}")));
        }
        let mut amps = vec![ZERO; 1 << n_qubits];
        amps[index] = ONE;
        Ok(Statevector { n_qubits, amps })
    }

    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let n = amps.len().trailing_zeros() as usize;
        if amps.is_empty() || 1 << n != amps.len() {
            return Err(Error::InvalidArgument("length must be a power of two".into()));
        }
        Ok(Statevector { n_qubits: n, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn apply_gate(&mut self, gate: &Gate) -> Result<()> {
        let top = gate.max_qubit();
        if top >= self.n_qubits {
            return Err(Error::IndexOutOfRange {
                index: top,
                n_qubits: self.n_qubits,
            });
        }
        apply_gate_to_amplitudes(&mut self.amps, gate);
        Ok(())
    }

    pub fn apply_circuit(&mut self, circuit: &Circuit) -> Result<()> {
        self.check_dim(circuit.n_qubits())?;
        for g in circuit.gates() {
            apply_gate_to_amplitudes(&mut self.amps, g);
        }
        Ok(())
    }

    pub fn apply_pauli(&mut self, p: &PauliString) -> Result<()> {
        self.check_dim(p.n_qubits())?;
        apply_pauli_to_amplitudes(&mut self.amps, p);
        Ok(())
    }

    /// `<ψ|P|ψ>`, real part (the imaginary part vanishes for Hermitian `P`).
    pub fn expectation(&self, p: &PauliString) -> Result<f64> {
        Ok(self.expectation_complex(p)?.re)
    }

    pub fn expectation_complex(&self, p: &PauliString) -> Result<Complex64> {
        self.check_dim(p.n_qubits())?;
        let mut acc = ZERO;
        for (k, a) in self.amps.iter().enumerate() {
            if a.norm_sqr() == 0.0 {
                continue;
            }
            let (c, k2) = p.apply_to_basis(k as u64);
            acc += self.amps[k2 as usize].conj() * c * a;
        }
        Ok(acc)
    }

    /// `<φ|ψ>` with `φ = other`.
    pub fn inner(&self, other: &Statevector) -> Result<Complex64> {
        self.check_dim(other.n_qubits)?;
        Ok(other.amps.iter().zip(&self.amps).map(|(a, b)| a.conj() * b).sum())
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Unnormalised 2x2 block `Σ_{s accepted} |ψ_{s,a}><ψ_{s,b}|` of the ancilla after
    /// projecting the other qubits onto accepted bit strings. Returns `(p_accept, block)`.
    pub fn postselected_ancilla(
        &self,
        ancilla: usize,
        accept: &dyn Fn(u64) -> bool,
    ) -> Result<(f64, [[Complex64; 2]; 2])> {
        self.check_index(ancilla)?;
        let mut m = [[ZERO; 2]; 2];
        let bit = 1usize << ancilla;
        for k in 0..self.amps.len() {
            if k & bit != 0 || !accept(remove_bit(k as u64, ancilla)) {
                continue;
            }
            let a = [self.amps[k], self.amps[k | bit]];
            for r in 0..2 {
                for c in 0..2 {
                    m[r][c] += a[r] * a[c].conj();
                }
            }
        }
        Ok(((m[0][0] + m[1][1]).re, m))
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.n_qubits {
            return Err(Error::DimensionMismatch {
                expected: self.n_qubits,
                got: n,
            });
        }
        Ok(())
    }

    fn check_index(&self, q: usize) -> Result<()> {
        if q >= self.n_qubits {
            return Err(Error::IndexOutOfRange {
                index: q,
                n_qubits: self.n_qubits,
            });
        }
        Ok(())
    }
}

/// Drop bit `q` from `k`, shifting higher bits down.
#[inline]
pub fn remove_bit(k: u64, q: usize) -> u64 {
    let low = k & ((1u64 << q) - 1);
    let high = (k >> (q + 1)) << q;
    low | high
}

// ---------------------------------------------------------------------------------------
// Density matrix

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    n_qubits: usize,
    data: Vec<Complex64>,
}

impl DensityMatrix {
    pub fn from_statevector(psi: &Statevector) -> Self {
        let dim = psi.amps.len();
        let mut data = vec![ZERO; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                data[r * dim + c] = psi.amps[r] * psi.amps[c].conj();
            }
        }
        DensityMatrix {
            n_qubits: psi.n_qubits,
            data,
        }
    }

    pub fn zero(n_qubits: usize) -> Self {
        Self::from_statevector(&Statevector::zero(n_qubits))
    }

    pub fn from_entries(n_qubits: usize, data: Vec<Complex64>) -> Result<Self> {
        let dim = 1usize << n_qubits;
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: data.len(),
            });
        }
        Ok(DensityMatrix { n_qubits, data })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.dim() + c]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.get(i, i).re).sum()
    }

    pub fn purity(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    /// `ρ → UρU†`.
    pub fn apply_gate(&mut self, gate: &Gate) -> Result<()> {
        let top = gate.max_qubit();
        if top >= self.n_qubits {
            return Err(Error::IndexOutOfRange {
                index: top,
                n_qubits: self.n_qubits,
            });
        }
        let n = self.n_qubits;
        let rows = gate.remap(&|q| q + n);
        apply_gate_to_amplitudes(&mut self.data, &rows);
        // (Uρ)U† = conj(U · conj(Uρ)) acting on the column index.
        for v in self.data.iter_mut() {
            *v = v.conj();
        }
        apply_gate_to_amplitudes(&mut self.data, gate);
        for v in self.data.iter_mut() {
            *v = v.conj();
        }
        Ok(())
    }

    pub fn apply_circuit(&mut self, circuit: &Circuit) -> Result<()> {
        for g in circuit.gates() {
            self.apply_gate(g)?;
        }
        Ok(())
    }

    /// Evolve through `circuit` with the per-gate channels of `noise`, then its final
    /// channel if any.
    pub fn evolve_noisy(&mut self, circuit: &Circuit, noise: &NoiseModel) -> Result<()> {
        for g in circuit.gates() {
            self.apply_gate(g)?;
            if let Some(ch) = noise.channel_for(g) {
                self.apply_local_channel(ch, g.targets().as_slice())?;
            }
        }
        if let Some(ch) = &noise.final_channel {
            self.apply_channel(ch)?;
        }
        Ok(())
    }

    /// `ρ → PρP†` for a Pauli string on all qubits, scaled by `weight` and accumulated
    /// into `out`.
    fn accumulate_conjugated(&self, p: &PauliString, weight: f64, out: &mut [Complex64]) {
        let dim = self.dim();
        let coeff: Vec<(Complex64, usize)> = (0..dim)
            .map(|k| {
                let (c, k2) = p.apply_to_basis(k as u64);
                (c, k2 as usize)
            })
            .collect();
        for r in 0..dim {
            let (cr, r2) = coeff[r];
            let cr = cr * weight;
            let row = &self.data[r * dim..(r + 1) * dim];
            let orow = &mut out[r2 * dim..(r2 + 1) * dim];
            for (c, v) in row.iter().enumerate() {
                let (cc, c2) = coeff[c];
                orow[c2] += cr * cc.conj() * v;
            }
        }
    }

    /// Apply a channel defined on all qubits.
    pub fn apply_channel(&mut self, channel: &PauliChannel) -> Result<()> {
        if channel.n_qubits() != self.n_qubits {
            return Err(Error::DimensionMismatch {
                expected: self.n_qubits,
                got: channel.n_qubits(),
            });
        }
        let mut out = vec![ZERO; self.data.len()];
        for (p, lam) in channel.errors() {
            if *lam == 0.0 {
                continue;
            }
            self.accumulate_conjugated(p, *lam, &mut out);
        }
        self.data = out;
        Ok(())
    }

    /// Apply a `k`-qubit channel whose qubit `j` sits on `qubits[j]`.
    pub fn apply_local_channel(&mut self, channel: &PauliChannel, qubits: &[usize]) -> Result<()> {
        let mut out = vec![ZERO; self.data.len()];
        for (p, lam) in channel.errors() {
            if *lam == 0.0 {
                continue;
            }
            let full = p.embed(self.n_qubits, qubits)?;
            self.accumulate_conjugated(&full, *lam, &mut out);
        }
        self.data = out;
        Ok(())
    }

    /// `(1-δ)ρ + δ I/d` on the whole register.
    pub fn depolarize(&mut self, delta: f64) {
        let dim = self.dim();
        for v in self.data.iter_mut() {
            *v *= 1.0 - delta;
        }
        for i in 0..dim {
            self.data[i * dim + i] += delta / dim as f64;
        }
    }

    /// `Tr(Pρ)`.
    pub fn expectation(&self, p: &PauliString) -> Result<Complex64> {
        if p.n_qubits() != self.n_qubits {
            return Err(Error::DimensionMismatch {
                expected: self.n_qubits,
                got: p.n_qubits(),
            });
        }
        let dim = self.dim();
        let mut acc = ZERO;
        // P|b> = c_b |a>, so Tr(Pρ) = Σ_b c_b ρ_{b,a}.
        for col in 0..dim {
            let (c, row) = p.apply_to_basis(col as u64);
            acc += c * self.data[col * dim + row as usize];
        }
        Ok(acc)
    }

    /// Project the non-ancilla qubits onto accepted bit strings and trace them out.
    /// Returns `(p_accept, unnormalised 2x2 ancilla block)`.
    pub fn postselected_ancilla(
        &self,
        ancilla: usize,
        accept: &dyn Fn(u64) -> bool,
    ) -> Result<(f64, [[Complex64; 2]; 2])> {
        if ancilla >= self.n_qubits {
            return Err(Error::IndexOutOfRange {
                index: ancilla,
                n_qubits: self.n_qubits,
            });
        }
        let dim = self.dim();
        let bit = 1usize << ancilla;
        let mut m = [[ZERO; 2]; 2];
        for k in 0..dim {
            if k & bit != 0 || !accept(remove_bit(k as u64, ancilla)) {
                continue;
            }
            let idx = [k, k | bit];
            for r in 0..2 {
                for c in 0..2 {
                    m[r][c] += self.data[idx[r] * dim + idx[c]];
                }
            }
        }
        Ok(((m[0][0] + m[1][1]).re, m))
    }

    /// Eigenvalues of the Hermitian part, ascending (Jacobi iteration; intended for
    /// invariant checks on small matrices).
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.data, self.dim())
    }
}

/// Eigenvalues of a Hermitian matrix via the real-symmetric embedding
/// `[[A, -B], [B, A]]` and cyclic Jacobi rotations. Each eigenvalue appears twice in the
/// embedding; one copy of each is returned.
pub fn hermitian_eigenvalues(m: &[Complex64], dim: usize) -> Vec<f64> {
    let n = 2 * dim;
    let mut a = vec![0.0; n * n];
    for r in 0..dim {
        for c in 0..dim {
            let v = (m[r * dim + c] + m[c * dim + r].conj()) * 0.5;
            a[r * n + c] = v.re;
            a[(r + dim) * n + (c + dim)] = v.re;
            a[(r + dim) * n + c] = v.im;
            a[r * n + (c + dim)] = -v.im;
        }
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev.into_iter().step_by(2).collect()
}

// ---------------------------------------------------------------------------------------
// Channels and noise

/// `ρ → Σ λ_i P_i ρ P_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct PauliChannel {
    n_qubits: usize,
    errors: Vec<(PauliString, f64)>,
    cumulative: Vec<f64>,
}

impl PauliChannel {
    pub fn new(n_qubits: usize, errors: Vec<(PauliString, f64)>) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::InvalidChannel("no errors listed".into()));
        }
        let mut total = 0.0;
        let mut cumulative = Vec::with_capacity(errors.len());
        for (p, lam) in &errors {
            if p.n_qubits() != n_qubits {
                return Err(Error::InvalidChannel(format!(
                    "error {p} has {} qubits, channel has {n_qubits}",
                    p.n_qubits()
                )));
            }
            if !(0.0..=1.0).contains(lam) || !lam.is_finite() {
                return Err(Error::InvalidChannel(format!("probability {lam} for {p}")));
            }
            total += lam;
            cumulative.push(total);
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidChannel(format!("probabilities sum to {total}")));
        }
        // Phases are irrelevant under conjugation; store unsigned strings.
        let errors = errors.into_iter().map(|(p, l)| (p.with_phase(0), l)).collect();
        Ok(PauliChannel {
            n_qubits,
            errors,
            cumulative,
        })
    }

    /// Listed non-identity errors plus the identity with the remaining probability, placed
    /// first.
    pub fn sparse(n_qubits: usize, errors: Vec<(PauliString, f64)>) -> Result<Self> {
        let listed: f64 = errors.iter().map(|(_, l)| l).sum();
        if listed > 1.0 + 1e-12 {
            return Err(Error::InvalidChannel(format!("listed rates sum to {listed}")));
        }
        let mut all = vec![(PauliString::identity(n_qubits), (1.0 - listed).max(0.0))];
        all.extend(errors);
        Self::new(n_qubits, all)
    }

    pub fn identity(n_qubits: usize) -> Self {
        Self::new(n_qubits, vec![(PauliString::identity(n_qubits), 1.0)]).unwrap()
    }

    /// `(1-δ)ρ + δ I/d`: every Pauli with rate `δ/d²`, identity `1 - δ + δ/d²`.
    pub fn depolarizing(n_qubits: usize, delta: f64) -> Result<Self> {
        if n_qubits > 8 {
            return Err(Error::InvalidChannel(format!(
                "dense depolarizing channel on {n_qubits} qubits"
            )));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::InvalidChannel(format!("depolarizing rate {delta}")));
        }
        let count = 1usize << (2 * n_qubits);
        let each = delta / count as f64;
        let mut errors = Vec::with_capacity(count);
        for code in 0..count as u64 {
            let x = code & ((1 << n_qubits) - 1);
            let z = code >> n_qubits;
            let lam = if code == 0 { 1.0 - delta + each } else { each };
            errors.push((PauliString::from_masks(n_qubits, x, z), lam));
        }
        Self::new(n_qubits, errors)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn errors(&self) -> &[(PauliString, f64)] {
        &self.errors
    }

    /// Probability that no non-identity error fires.
    pub fn identity_weight(&self) -> f64 {
        self.errors
            .iter()
            .filter(|(p, _)| p.is_identity())
            .map(|(_, l)| l)
            .sum()
    }

    /// Draw an error index.
    pub fn sample_index<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let i = self.cumulative.partition_point(|&c| c <= u);
        i.min(self.errors.len() - 1)
    }

    /// Same errors with every non-identity rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let errs: Vec<(PauliString, f64)> = self
            .errors
            .iter()
            .filter(|(p, _)| !p.is_identity())
            .map(|(p, l)| (p.clone(), l * factor))
            .collect();
        Self::sparse(self.n_qubits, errs)
    }
}

/// Per-gate noise: single-qubit gates get `one_qubit`, two-qubit gates `two_qubit`,
/// applied right after the gate on its targets. Idle qubits are never touched.
/// `final_channel` (all qubits) is applied once at the end of the circuit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NoiseModel {
    pub one_qubit: Option<PauliChannel>,
    pub two_qubit: Option<PauliChannel>,
    pub final_channel: Option<PauliChannel>,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self::default()
    }

    /// Local depolarizing channels with rates `p1`, `p2`.
    pub fn depolarizing(p1: f64, p2: f64) -> Result<Self> {
        Ok(NoiseModel {
            one_qubit: (p1 > 0.0).then(|| PauliChannel::depolarizing(1, p1)).transpose()?,
            two_qubit: (p2 > 0.0).then(|| PauliChannel::depolarizing(2, p2)).transpose()?,
            final_channel: None,
        })
    }

    pub fn with_final(mut self, ch: PauliChannel) -> Self {
        self.final_channel = Some(ch);
        self
    }

    pub fn is_noiseless(&self) -> bool {
        self.one_qubit.is_none() && self.two_qubit.is_none() && self.final_channel.is_none()
    }

    /// Channel attached to `gate`. Multi-controlled gates are treated as noiseless.
    pub fn channel_for(&self, gate: &Gate) -> Option<&PauliChannel> {
        if matches!(gate, Gate::MultiControlledPauli { .. }) {
            return None;
        }
        match gate.targets().as_slice().len() {
            1 => self.one_qubit.as_ref(),
            _ => self.two_qubit.as_ref(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Ok(NoiseModel {
            one_qubit: self.one_qubit.as_ref().map(|c| c.scaled(factor)).transpose()?,
            two_qubit: self.two_qubit.as_ref().map(|c| c.scaled(factor)).transpose()?,
            final_channel: self.final_channel.clone(),
        })
    }
}

// ---------------------------------------------------------------------------------------
// Measurement

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Basis {
    X,
    Y,
    Z,
}

impl Basis {
    pub const ALL: [Basis; 3] = [Basis::X, Basis::Y, Basis::Z];

    pub fn pauli(self) -> Pauli {
        match self {
            Basis::X => Pauli::X,
            Basis::Y => Pauli::Y,
            Basis::Z => Pauli::Z,
        }
    }
}

/// One measured shot: system bits (ancilla removed, system qubit `j` at bit `j`), the
/// ancilla eigenvalue in `basis` and the noise trajectory that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShotRecord {
    pub system_bits: u64,
    pub ancilla_outcome: i8,
    pub basis: Basis,
    pub trajectory: u32,
}

fn rotate_to_basis(amps: &mut [Complex64], ancilla: usize, basis: Basis) {
    match basis {
        Basis::Z => {}
        Basis::X => apply_h(amps, ancilla),
        Basis::Y => {
            apply_diag_1q(amps, ancilla, ONE, Complex64::new(0.0, -1.0));
            apply_h(amps, ancilla);
        }
    }
}

fn draw_shots<R: Rng>(
    amps: &[Complex64],
    ancilla: usize,
    basis: Basis,
    n_shots: usize,
    trajectory: u32,
    rng: &mut R,
    out: &mut Vec<ShotRecord>,
) {
    let mut cum = Vec::with_capacity(amps.len());
    let mut acc = 0.0;
    for a in amps {
        acc += a.norm_sqr();
        cum.push(acc);
    }
    let total = acc;
    for _ in 0..n_shots {
        let u: f64 = rng.gen::<f64>() * total;
        let k = cum.partition_point(|&c| c <= u).min(amps.len() - 1) as u64;
        let anc = (k >> ancilla) & 1;
        out.push(ShotRecord {
            system_bits: remove_bit(k, ancilla),
            ancilla_outcome: if anc == 0 { 1 } else { -1 },
            basis,
            trajectory,
        });
    }
}

/// Born-rule shots with the ancilla measured in `basis`.
pub fn measure_shots(
    state: &Statevector,
    ancilla: usize,
    basis: Basis,
    n_shots: usize,
    seed: u64,
) -> Result<Vec<ShotRecord>> {
    state.check_index(ancilla)?;
    if n_shots == 0 {
        return Err(Error::InvalidArgument("n_shots must be at least 1".into()));
    }
    let mut amps = state.amps.clone();
    rotate_to_basis(&mut amps, ancilla, basis);
    let mut rng = stream_rng(seed, 0);
    let mut out = Vec::with_capacity(n_shots);
    draw_shots(&amps, ancilla, basis, n_shots, 0, &mut rng, &mut out);
    Ok(out)
}

/// Run one noisy trajectory: each gate is followed by one error drawn from its channel.
pub fn trajectory_state<R: Rng>(
    circuit: &Circuit,
    noise: &NoiseModel,
    rng: &mut R,
) -> Statevector {
    let mut psi = Statevector::zero(circuit.n_qubits());
    let n = circuit.n_qubits();
    for g in circuit.gates() {
        apply_gate_to_amplitudes(&mut psi.amps, g);
        if let Some(ch) = noise.channel_for(g) {
            let i = ch.sample_index(rng);
            let (p, _) = &ch.errors[i];
            if !p.is_identity() {
                let full = p.embed(n, g.targets().as_slice()).expect("gate targets in range");
                apply_pauli_to_amplitudes(&mut psi.amps, &full);
            }
        }
    }
    if let Some(ch) = &noise.final_channel {
        let i = ch.sample_index(rng);
        let (p, _) = &ch.errors[i];
        if !p.is_identity() {
            apply_pauli_to_amplitudes(&mut psi.amps, p);
        }
    }
    psi
}

/// A single trajectory followed by a single shot in `basis`.
pub fn sample_trajectory(
    circuit: &Circuit,
    noise: &NoiseModel,
    ancilla: usize,
    basis: Basis,
    seed: u64,
) -> Result<ShotRecord> {
    let mut shots = sample_trajectories(circuit, noise, ancilla, &[basis], 1, 1, seed)?;
    Ok(shots.remove(0))
}

/// `n_trajectories` independent trajectories; from each final state draw
/// `shots_per_trajectory` shots in every listed basis. Trajectory `t` uses generator
/// stream `t`, and results are concatenated in trajectory order, so the output does not
/// depend on the thread count.
pub fn sample_trajectories(
    circuit: &Circuit,
    noise: &NoiseModel,
    ancilla: usize,
    bases: &[Basis],
    n_trajectories: usize,
    shots_per_trajectory: usize,
    seed: u64,
) -> Result<Vec<ShotRecord>> {
    if ancilla >= circuit.n_qubits() {
        return Err(Error::IndexOutOfRange {
            index: ancilla,
            n_qubits: circuit.n_qubits(),
        });
    }
    if circuit.n_qubits() > 30 {
        return Err(Error::InvalidArgument(format!(
            "{} qubits is beyond the dense simulator",
            circuit.n_qubits()
        )));
    }
    let per: Vec<Vec<ShotRecord>> = (0..n_trajectories as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, t);
            let psi = trajectory_state(circuit, noise, &mut rng);
            let mut out = Vec::with_capacity(bases.len() * shots_per_trajectory);
            for &b in bases {
                let mut amps = psi.amps.clone();
                rotate_to_basis(&mut amps, ancilla, b);
                draw_shots(&amps, ancilla, b, shots_per_trajectory, t as u32, &mut rng, &mut out);
            }
            out
        })
        .collect();
    Ok(per.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn p(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    /// Random state built from a random circuit.
    fn random_state(n: usize, seed: u64) -> Statevector {
        let mut rng = stream_rng(seed, 99);
        let mut psi = Statevector::zero(n);
        for _ in 0..6 * n {
            let q = rng.gen_range(0..n);
            let g = match rng.gen_range(0..4) {
                0 => Gate::Rx(q, rng.gen_range(-PI..PI)),
                1 => Gate::Rz(q, rng.gen_range(-PI..PI)),
                2 if n > 1 => Gate::Cnot {
                    control: q,
                    target: (q + 1) % n,
                },
                _ => Gate::H(q),
            };
            psi.apply_gate(&g).unwrap();
        }
        psi
    }

    fn kron(a: &[Complex64], da: usize, b: &[Complex64], db: usize) -> Vec<Complex64> {
        // a acts on the high factor, b on the low factor.
        let d = da * db;
        let mut out = vec![ZERO; d * d];
        for i in 0..da {
            for j in 0..da {
                for k in 0..db {
                    for l in 0..db {
                        out[(i * db + k) * d + (j * db + l)] = a[i * da + j] * b[k * db + l];
                    }
                }
            }
        }
        out
    }

    /// Dense matrix of a gate on n qubits built from Kronecker products.
    fn dense_gate(g: &Gate, n: usize) -> Vec<Complex64> {
        let dim = 1 << n;
        let mut m = vec![ZERO; dim * dim];
        for col in 0..dim {
            let mut v = vec![ZERO; dim];
            v[col] = ONE;
            apply_gate_to_amplitudes(&mut v, g);
            for row in 0..dim {
                m[row * dim + col] = v[row];
            }
        }
        m
    }

    #[test]
    fn h_on_zero() {
        let mut s = Statevector::zero(1);
        s.apply_gate(&Gate::H(0)).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s.amplitudes()[0] - c(r, 0.0)).norm() < 1e-15);
        assert!((s.amplitudes()[1] - c(r, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn rx_pi_convention() {
        let mut s = Statevector::zero(1);
        s.apply_gate(&Gate::Rx(0, PI)).unwrap();
        assert!(s.amplitudes()[0].norm() < 1e-15);
        assert!((s.amplitudes()[1] - c(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn rzz_phase_on_01() {
        let theta = 0.37;
        // |01> in the q1 q0 reading with qubit 0 set: index 1.
        let mut s = Statevector::basis_state(2, 1).unwrap();
        s.apply_gate(&Gate::Rzz(0, 1, theta)).unwrap();
        let want = Complex64::from_polar(1.0, theta / 2.0);
        assert!((s.amplitudes()[1] - want).norm() < 1e-15);
    }

    #[test]
    fn gate_matrices_match_kronecker_oracle() {
        // Single-qubit gates on qubit 1 of 3: I ⊗ U ⊗ I with qubit 2 as the high factor.
        let id2 = vec![ONE, ZERO, ZERO, ONE];
        for g in [Gate::H(1), Gate::S(1), Gate::Sdg(1), Gate::X(1), Gate::Y(1), Gate::Z(1), Gate::Rx(1, 0.3), Gate::Rz(1, -1.1)] {
            let u: Vec<Complex64> = g.matrix_1q().unwrap().concat();
            let want = kron(&id2, 2, &kron(&u, 2, &id2, 2), 4);
            let got = dense_gate(&g, 3);
            assert!(got.iter().zip(&want).all(|(a, b)| (a - b).norm() < 1e-14), "{g}");
        }
        // Rzz against exp(-iθ ZZ/2) diagonal.
        let theta = 0.81;
        let got = dense_gate(&Gate::Rzz(0, 1, theta), 2);
        for k in 0..4 {
            let parity = (k & 1) ^ (k >> 1);
            let z = if parity == 0 { 1.0 } else { -1.0 };
            assert!((got[k * 4 + k] - Complex64::from_polar(1.0, -theta * z / 2.0)).norm() < 1e-14);
        }
        // Controlled-Y with control 0, target 1.
        let got = dense_gate(&Gate::ControlledPauli { control: 0, target: 1, pauli: Pauli::Y }, 2);
        assert!((got[3 * 4 + 1] - c(0.0, 1.0)).norm() < 1e-15);
        assert!((got[1 * 4 + 3] - c(0.0, -1.0)).norm() < 1e-15);
        assert!((got[0] - ONE).norm() < 1e-15 && (got[2 * 4 + 2] - ONE).norm() < 1e-15);
    }

    #[test]
    fn expectation_examples() {
        let zero = Statevector::zero(1);
        assert_eq!(zero.expectation(&p("Z")).unwrap(), 1.0);
        let mut plus = Statevector::zero(1);
        plus.apply_gate(&Gate::H(0)).unwrap();
        assert!(plus.expectation(&p("Z")).unwrap().abs() < 1e-15);
        assert!(zero.expectation(&p("ZZ")).is_err());
    }

    #[test]
    fn expectation_matches_dense_sandwich() {
        for seed in 0..20 {
            let psi = random_state(3, seed);
            for label in ["XYZ", "ZZI", "YIY", "IXI", "-XXZ"] {
                let pm = p(label).to_dense();
                let a = psi.amplitudes();
                let mut want = ZERO;
                for r in 0..8 {
                    for cc in 0..8 {
                        want += a[r].conj() * pm[r * 8 + cc] * a[cc];
                    }
                }
                let got = psi.expectation_complex(&p(label)).unwrap();
                assert!((got - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn unitarity_preserved() {
        for seed in 0..10 {
            let psi = random_state(5, seed);
            assert!((psi.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn density_matrix_tracks_statevector() {
        let gates = vec![
            Gate::H(0),
            Gate::Rx(1, 0.4),
            Gate::Cnot { control: 0, target: 2 },
            Gate::S(2),
            Gate::Rzz(1, 2, 0.9),
            Gate::ControlledPauli { control: 2, target: 0, pauli: Pauli::Y },
            Gate::Rz(0, -0.3),
            Gate::Cz(0, 1),
            Gate::Y(1),
        ];
        let circ = Circuit::from_gates(3, gates).unwrap();
        let mut psi = Statevector::zero(3);
        psi.apply_circuit(&circ).unwrap();
        let mut rho = DensityMatrix::zero(3);
        rho.apply_circuit(&circ).unwrap();
        let want = DensityMatrix::from_statevector(&psi);
        assert!(rho.entries().iter().zip(want.entries()).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn identity_channel_is_noop() {
        let psi = random_state(2, 3);
        let mut rho = DensityMatrix::from_statevector(&psi);
        let before = rho.clone();
        rho.apply_channel(&PauliChannel::identity(2)).unwrap();
        assert!(rho.entries().iter().zip(before.entries()).all(|(a, b)| (a - b).norm() < 1e-15));
    }

    #[test]
    fn depolarizing_channel_matches_closed_form() {
        let psi = random_state(3, 5);
        let delta = 0.37;
        let mut a = DensityMatrix::from_statevector(&psi);
        a.apply_channel(&PauliChannel::depolarizing(3, delta).unwrap()).unwrap();
        let mut b = DensityMatrix::from_statevector(&psi);
        b.depolarize(delta);
        assert!(a.entries().iter().zip(b.entries()).all(|(x, y)| (x - y).norm() < 1e-12));
        assert!((a.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bit_flip_channel_on_zero() {
        let pr = 0.2;
        let ch = PauliChannel::sparse(1, vec![(p("X"), pr)]).unwrap();
        let mut rho = DensityMatrix::zero(1);
        rho.apply_channel(&ch).unwrap();
        assert!((rho.get(0, 0).re - (1.0 - pr)).abs() < 1e-15);
        assert!((rho.get(1, 1).re - pr).abs() < 1e-15);
        assert!(rho.get(0, 1).norm() < 1e-15);
    }

    #[test]
    fn channel_validation() {
        assert!(PauliChannel::new(1, vec![(p("X"), 0.5)]).is_err());
        assert!(PauliChannel::new(1, vec![(p("X"), 1.5), (p("I"), -0.5)]).is_err());
        assert!(PauliChannel::sparse(1, vec![(p("X"), 0.7), (p("Z"), 0.7)]).is_err());
        assert!(PauliChannel::sparse(2, vec![(p("X"), 0.1)]).is_err());
    }

    #[test]
    fn composed_channels_stay_physical() {
        let psi = random_state(3, 11);
        let mut rho = DensityMatrix::from_statevector(&psi);
        let noise = NoiseModel::depolarizing(0.05, 0.1).unwrap();
        let circ = Circuit::from_gates(
            3,
            vec![Gate::Cnot { control: 0, target: 1 }, Gate::Rx(2, 0.3), Gate::Rzz(1, 2, 1.0)],
        )
        .unwrap();
        rho.evolve_noisy(&circ, &noise).unwrap();
        let ch = PauliChannel::sparse(3, vec![(p("XYI"), 0.1), (p("ZZZ"), 0.2)]).unwrap();
        rho.apply_channel(&ch).unwrap();
        assert!((rho.trace() - 1.0).abs() < 1e-12);
        let ev = rho.eigenvalues();
        assert!(ev.iter().all(|&e| e > -1e-10), "{ev:?}");
        for r in 0..8 {
            for cc in 0..8 {
                assert!((rho.get(r, cc) - rho.get(cc, r).conj()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn measure_shots_examples() {
        let zero = Statevector::zero(2);
        let shots = measure_shots(&zero, 1, Basis::Z, 100, 1).unwrap();
        assert!(shots.iter().all(|s| s.ancilla_outcome == 1 && s.system_bits == 0));
        let mut plus = Statevector::zero(2);
        plus.apply_gate(&Gate::H(1)).unwrap();
        let shots = measure_shots(&plus, 1, Basis::X, 100, 1).unwrap();
        assert!(shots.iter().all(|s| s.ancilla_outcome == 1));
        let n = 100_000;
        let shots = measure_shots(&plus, 1, Basis::Z, n, 7).unwrap();
        let mean = shots.iter().map(|s| s.ancilla_outcome as f64).sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt());
        // S|+> is |+i>: Y outcomes all +1.
        plus.apply_gate(&Gate::S(1)).unwrap();
        let shots = measure_shots(&plus, 1, Basis::Y, 50, 2).unwrap();
        assert!(shots.iter().all(|s| s.ancilla_outcome == 1));
    }

    #[test]
    fn system_bits_drop_the_ancilla() {
        // qubits: 0 -> 1, 1 (ancilla) -> 0, 2 -> 1 ; system bits should be 0b11.
        let s = Statevector::basis_state(3, 0b101).unwrap();
        let shots = measure_shots(&s, 1, Basis::Z, 3, 0).unwrap();
        assert!(shots.iter().all(|r| r.system_bits == 0b11 && r.ancilla_outcome == 1));
    }

    #[test]
    fn noiseless_trajectories_match_born_sampling() {
        let circ = Circuit::from_gates(2, vec![Gate::H(0), Gate::Cnot { control: 0, target: 1 }]).unwrap();
        let a = sample_trajectories(&circ, &NoiseModel::noiseless(), 1, &[Basis::Z], 1, 1000, 4).unwrap();
        let mut psi = Statevector::zero(2);
        psi.apply_circuit(&circ).unwrap();
        let b = measure_shots(&psi, 1, Basis::Z, 1000, 4).unwrap();
        // Same generator stream and no noise draws: identical records.
        assert_eq!(a, b);
    }

    #[test]
    fn trajectories_are_deterministic() {
        let circ = Circuit::from_gates(3, vec![Gate::H(0), Gate::Cnot { control: 0, target: 1 }, Gate::Rx(2, 0.3)]).unwrap();
        let noise = NoiseModel::depolarizing(0.1, 0.2).unwrap();
        let a = sample_trajectories(&circ, &noise, 2, &Basis::ALL, 50, 3, 9).unwrap();
        let b = sample_trajectories(&circ, &noise, 2, &Basis::ALL, 50, 3, 9).unwrap();
        assert_eq!(a, b);
        let single = sample_trajectory(&circ, &noise, 2, Basis::Z, 9).unwrap();
        assert_eq!(single, sample_trajectory(&circ, &noise, 2, Basis::Z, 9).unwrap());
    }

    #[test]
    fn trajectory_mean_matches_density_matrix() {
        let circ = Circuit::from_gates(
            3,
            vec![
                Gate::H(0),
                Gate::Cnot { control: 0, target: 1 },
                Gate::Rx(2, 0.7),
                Gate::Rzz(1, 2, 0.4),
                Gate::H(2),
            ],
        )
        .unwrap();
        let noise = NoiseModel::depolarizing(0.05, 0.15)
            .unwrap()
            .with_final(PauliChannel::sparse(3, vec![(p("XII"), 0.05)]).unwrap());
        let mut rho = DensityMatrix::zero(3);
        rho.evolve_noisy(&circ, &noise).unwrap();
        let exact = rho.expectation(&p("IIZ")).unwrap().re;
        let n = 100_000;
        let shots = sample_trajectories(&circ, &noise, 2, &[Basis::Z], n, 1, 21).unwrap();
        let mean = shots.iter().map(|s| s.ancilla_outcome as f64).sum::<f64>() / n as f64;
        let sigma = ((1.0 - exact * exact) / n as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * sigma, "{mean} vs {exact}");
    }

    #[test]
    fn postselected_block_from_state_and_density_agree() {
        let psi = random_state(4, 8);
        let rho = DensityMatrix::from_statevector(&psi);
        let accept = |s: u64| s.count_ones() <= 1;
        let (pa, ma) = psi.postselected_ancilla(2, &accept).unwrap();
        let (pb, mb) = rho.postselected_ancilla(2, &accept).unwrap();
        assert!((pa - pb).abs() < 1e-12);
        for r in 0..2 {
            for cc in 0..2 {
                assert!((ma[r][cc] - mb[r][cc]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn pauli_application_matches_dense() {
        let psi = random_state(3, 2);
        for label in ["XYZ", "-iYYI", "IZX"] {
            let mut a = psi.clone();
            a.apply_pauli(&p(label)).unwrap();
            let m = p(label).to_dense();
            for r in 0..8 {
                let want: Complex64 = (0..8).map(|k| m[r * 8 + k] * psi.amplitudes()[k]).sum();
                assert!((a.amplitudes()[r] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn eigenvalues_of_known_matrix() {
        let mut rho = DensityMatrix::zero(1);
        rho.depolarize(0.5);
        let ev = rho.eigenvalues();
        assert!((ev[0] - 0.25).abs() < 1e-12 && (ev[1] - 0.75).abs() < 1e-12);
    }
}
