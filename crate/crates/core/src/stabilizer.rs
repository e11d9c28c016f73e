//! Stabilizer tableaus and near-Clifford branch expansion.
//!
//! A [`StabilizerTableau`] holds `n` destabilizer rows followed by `n` stabilizer rows,
//! each a signed [`PauliString`]. Gates act by conjugation, `P → G P G†`.
//!
//! A near-Clifford circuit with `L` free rotations `R_P(θ) = cos(θ/2) I - i sin(θ/2) P` is
//! expanded into at most `2^L` branches. Every free Pauli is pushed forward through the
//! Clifford gates that follow it, so each branch is `amplitude · F |φ>` with one shared
//! stabilizer state `|φ> = C|0>` (`C` the Clifford skeleton) and a Pauli frame `F`. Branch
//! tableaus are recovered on demand by conjugating the shared tableau with the frame.
//!
//! Overlaps use the destabilizer decomposition: any Pauli `Q` factors as `ω · r · g` where
//! `g` is a product of stabilizers and `r` a product of destabilizers, so
//! `Q|φ> = ω r|φ>`, and the states `r|φ>` for distinct destabilizer sets are orthonormal.

use std::collections::HashMap;

use num_complex::Complex64;

use crate::circuit::{clifford_quarter_turns, Circuit, Gate};
use crate::error::{Error, Result};
use crate::pauli::{phase_value, Pauli, PauliString};

/// Default maximum number of free rotations.
pub const DEFAULT_BRANCH_BUDGET: usize = 15;

const PRUNE: f64 = 1e-14;

// ---------------------------------------------------------------------------------------
// Conjugation rules

fn h_rule(p: &mut PauliString, a: usize) {
    let (x, z) = p.bits(a);
    if x && z {
        p.negate();
    }
    p.set_bits(a, z, x);
}

fn s_rule(p: &mut PauliString, a: usize) {
    let (x, z) = p.bits(a);
    if x && z {
        p.negate();
    }
    p.set_bits(a, x, z ^ x);
}

fn sdg_rule(p: &mut PauliString, a: usize) {
    let (x, z) = p.bits(a);
    if x && !z {
        p.negate();
    }
    p.set_bits(a, x, z ^ x);
}

fn pauli_rule(p: &mut PauliString, a: usize, g: Pauli) {
    let (x, z) = p.bits(a);
    let anti = match g {
        Pauli::I => false,
        Pauli::X => z,
        Pauli::Y => x ^ z,
        Pauli::Z => x,
    };
    if anti {
        p.negate();
    }
}

fn cnot_rule(p: &mut PauliString, c: usize, t: usize) {
    let (xc, zc) = p.bits(c);
    let (xt, zt) = p.bits(t);
    if xc && zt && (xt == zc) {
        p.negate();
    }
    p.set_bits(t, xt ^ xc, zt);
    p.set_bits(c, xc, zc ^ zt);
}

fn cz_rule(p: &mut PauliString, a: usize, b: usize) {
    let (xa, za) = p.bits(a);
    let (xb, zb) = p.bits(b);
    if xa && xb && (za ^ zb) {
        p.negate();
    }
    p.set_bits(a, xa, za ^ xb);
    p.set_bits(b, xb, zb ^ xa);
}

fn controlled_rule(p: &mut PauliString, c: usize, t: usize, pauli: Pauli) {
    match pauli {
        Pauli::I => {}
        Pauli::X => cnot_rule(p, c, t),
        Pauli::Z => cz_rule(p, c, t),
        Pauli::Y => {
            // CY = S_t · CX · S_t†, applied right to left.
            sdg_rule(p, t);
            cnot_rule(p, c, t);
            s_rule(p, t);
        }
    }
}

/// `p ← G p G†` for a Clifford gate. Rotations by multiples of π/2 are treated as their
/// Clifford equivalents up to global phase.
pub fn conjugate_by_gate(p: &mut PauliString, gate: &Gate) -> Result<()> {
    let top = gate.max_qubit();
    if top >= p.n_qubits() {
        return Err(Error::IndexOutOfRange {
            index: top,
            n_qubits: p.n_qubits(),
        });
    }
    match *gate {
        Gate::H(a) => h_rule(p, a),
        Gate::S(a) => s_rule(p, a),
        Gate::Sdg(a) => sdg_rule(p, a),
        Gate::X(a) => pauli_rule(p, a, Pauli::X),
        Gate::Y(a) => pauli_rule(p, a, Pauli::Y),
        Gate::Z(a) => pauli_rule(p, a, Pauli::Z),
        Gate::Cnot { control, target } => cnot_rule(p, control, target),
        Gate::Cz(a, b) => cz_rule(p, a, b),
        Gate::Rz(a, t) => {
            let k = quarter_turns(gate, t)?;
            for _ in 0..k {
                s_rule(p, a);
            }
        }
        Gate::Rx(a, t) => {
            let k = quarter_turns(gate, t)?;
            if k > 0 {
                h_rule(p, a);
                for _ in 0..k {
                    s_rule(p, a);
                }
                h_rule(p, a);
            }
        }
        Gate::Rzz(a, b, t) => {
            let k = quarter_turns(gate, t)?;
            if k > 0 {
                cnot_rule(p, a, b);
                for _ in 0..k {
                    s_rule(p, b);
                }
                cnot_rule(p, a, b);
            }
        }
        Gate::ControlledPauli {
            control,
            target,
            pauli,
        } => controlled_rule(p, control, target, pauli),
        Gate::MultiControlledPauli {
            controls,
            pattern,
            target,
            pauli,
        } => match controls.count_ones() {
            0 => pauli_rule(p, target, pauli),
            1 => {
                let c = controls.trailing_zeros() as usize;
                let open = pattern & controls == 0;
                if open {
                    pauli_rule(p, c, Pauli::X);
                }
                controlled_rule(p, c, target, pauli);
                if open {
                    pauli_rule(p, c, Pauli::X);
                }
            }
            _ => return Err(Error::NonClifford(gate.to_string())),
        },
    }
    Ok(())
}

fn quarter_turns(gate: &Gate, theta: f64) -> Result<u8> {
    clifford_quarter_turns(theta).ok_or_else(|| Error::NonClifford(gate.to_string()))
}

// ---------------------------------------------------------------------------------------
// Tableau

#[derive(Clone, Debug, PartialEq)]
pub struct StabilizerTableau {
    n: usize,
    rows: Vec<PauliString>,
}

/// Result of factoring a Pauli against a tableau: `Q|φ> = ω · r|φ>` where `r` is the
/// product of the destabilizers flagged in `key`.
#[derive(Clone, Debug)]
struct Decomposition {
    key: Vec<u64>,
    omega: u8,
    r: PauliString,
}

impl StabilizerTableau {
    /// Tableau of |0...0>.
    pub fn zero(n: usize) -> Self {
        let mut rows = Vec::with_capacity(2 * n);
        for q in 0..n {
            rows.push(PauliString::single(n, q, Pauli::X).unwrap());
        }
        for q in 0..n {
            rows.push(PauliString::single(n, q, Pauli::Z).unwrap());
        }
        StabilizerTableau { n, rows }
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn destabilizers(&self) -> &[PauliString] {
        &self.rows[..self.n]
    }

    pub fn stabilizers(&self) -> &[PauliString] {
        &self.rows[self.n..]
    }

    pub fn apply_clifford(&mut self, gate: &Gate) -> Result<()> {
        if !gate.is_clifford() {
            return Err(Error::NonClifford(gate.to_string()));
        }
        for row in &mut self.rows {
            conjugate_by_gate(row, gate)?;
        }
        Ok(())
    }

    pub fn apply_circuit(&mut self, circuit: &Circuit) -> Result<()> {
        if circuit.n_qubits() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: circuit.n_qubits(),
            });
        }
        for g in circuit.gates() {
            self.apply_clifford(g)?;
        }
        Ok(())
    }

    /// Conjugate the state by a Pauli frame: the tableau of `F|φ>`.
    pub fn with_frame(&self, frame: &PauliString) -> StabilizerTableau {
        let mut out = self.clone();
        for row in &mut out.rows {
            if !row.commutes_unchecked(frame) {
                row.negate();
            }
        }
        out
    }

    /// True iff rows pair symplectically and stabilizers commute.
    pub fn is_valid(&self) -> bool {
        let n = self.n;
        for i in 0..2 * n {
            for j in 0..2 * n {
                let anti = !self.rows[i].commutes_unchecked(&self.rows[j]);
                let partner = (i + n == j) || (j + n == i);
                if anti != partner {
                    return false;
                }
            }
        }
        self.rows.iter().all(PauliString::is_hermitian)
    }

    fn decompose(&self, q: &PauliString) -> Decomposition {
        let n = self.n;
        let words = n.div_ceil(64).max(1);
        let mut key = vec![0u64; words];
        let mut r = PauliString::identity(n);
        let mut g = PauliString::identity(n);
        for i in 0..n {
            if !q.commutes_unchecked(&self.rows[n + i]) {
                key[i / 64] |= 1 << (i % 64);
                r.mul_assign_right(&self.rows[i].clone().with_phase(0));
            }
        }
        for i in 0..n {
            if !q.commutes_unchecked(&self.rows[i]) {
                g.mul_assign_right(&self.rows[n + i]);
            }
        }
        let mut rg = r.clone();
        rg.mul_assign_right(&g);
        debug_assert!(rg.same_operator(q), "decomposition failed");
        let omega = (q.phase_exponent() + 4 - rg.phase_exponent()) & 3;
        Decomposition { key, omega, r }
    }

    /// `<φ|P|φ>` ∈ {-1, 0, +1} for Hermitian `P`.
    pub fn expectation(&self, p: &PauliString) -> Result<f64> {
        if p.n_qubits() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: p.n_qubits(),
            });
        }
        if self.stabilizers().iter().any(|s| !s.commutes_unchecked(p)) {
            return Ok(0.0);
        }
        let d = self.decompose(p);
        Ok(phase_value(d.omega).re)
    }
}

/// `<φ|P|φ>` for the stabilizer state of `t`.
pub fn stabilizer_expectation(t: &StabilizerTableau, p: &PauliString) -> Result<f64> {
    t.expectation(p)
}

// ---------------------------------------------------------------------------------------
// Near-Clifford states

#[derive(Clone, Debug)]
pub struct NearCliffordState {
    base: StabilizerTableau,
    branches: Vec<(Complex64, PauliString)>,
    source_angles: Vec<f64>,
}

impl NearCliffordState {
    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    /// `(amplitude, frame)` pairs; each branch is `amplitude · frame |φ>`.
    pub fn branches(&self) -> &[(Complex64, PauliString)] {
        &self.branches
    }

    pub fn base_tableau(&self) -> &StabilizerTableau {
        &self.base
    }

    /// Tableau of branch `i` (without its amplitude).
    pub fn branch_tableau(&self, i: usize) -> StabilizerTableau {
        self.base.with_frame(&self.branches[i].1)
    }

    /// Unrounded angles of the free rotations, in circuit order.
    pub fn source_angles(&self) -> &[f64] {
        &self.source_angles
    }

    /// Coefficients of the state in the orthonormal family `r|φ>`.
    fn coefficients(&self) -> (HashMap<Vec<u64>, usize>, Vec<(Complex64, PauliString)>) {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut coeffs: Vec<(Complex64, PauliString)> = Vec::new();
        for (amp, frame) in &self.branches {
            let d = self.base.decompose(frame);
            let c = amp * phase_value(d.omega);
            match index.get(&d.key) {
                Some(&i) => coeffs[i].0 += c,
                None => {
                    index.insert(d.key, coeffs.len());
                    coeffs.push((c, d.r));
                }
            }
        }
        (index, coeffs)
    }

    /// `<ψ|ψ>`; equals 1 for states produced by [`expand_non_clifford`].
    pub fn norm_sqr(&self) -> f64 {
        let (_, coeffs) = self.coefficients();
        coeffs.iter().map(|(c, _)| c.norm_sqr()).sum()
    }

    /// `<ψ|P|ψ> / <ψ|ψ>` without clamping.
    pub fn expectation_complex(&self, p: &PauliString) -> Result<Complex64> {
        if p.n_qubits() != self.base.n {
            return Err(Error::DimensionMismatch {
                expected: self.base.n,
                got: p.n_qubits(),
            });
        }
        let (index, coeffs) = self.coefficients();
        let norm: f64 = coeffs.iter().map(|(c, _)| c.norm_sqr()).sum();
        if norm == 0.0 {
            return Err(Error::Numerical("near-Clifford state has zero norm".into()));
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for (c, r) in &coeffs {
            if c.norm_sqr() == 0.0 {
                continue;
            }
            let mut q = p.clone();
            q.mul_assign_right(r);
            let d = self.base.decompose(&q);
            if let Some(&j) = index.get(&d.key) {
                acc += coeffs[j].0.conj() * c * phase_value(d.omega);
            }
        }
        Ok(acc / norm)
    }
}

/// Expand `circuit` with the rotations at parameter indices `free_indices` kept exact and
/// every other rotation required to be a multiple of π/2.
pub fn expand_non_clifford(
    circuit: &Circuit,
    free_indices: &[usize],
    budget: usize,
) -> Result<NearCliffordState> {
    if free_indices.len() > budget {
        return Err(Error::BranchBudget {
            requested: free_indices.len(),
            budget,
        });
    }
    let positions = circuit.rotation_positions();
    let mut is_free = vec![false; circuit.len()];
    for &i in free_indices {
        let pos = *positions.get(i).ok_or(Error::NotARotation(i))?;
        is_free[pos] = true;
    }
    let n = circuit.n_qubits();
    let mut base = StabilizerTableau::zero(n);
    let mut frames: Vec<PauliString> = Vec::new();
    let mut angles: Vec<f64> = Vec::new();
    for (pos, g) in circuit.gates().iter().enumerate() {
        if is_free[pos] {
            frames.push(g.rotation_axis(n).expect("free gate is a rotation"));
            angles.push(g.angle().unwrap());
            continue;
        }
        base.apply_clifford(g)?;
        for f in &mut frames {
            conjugate_by_gate(f, g)?;
        }
    }

    let mut branches: Vec<(Complex64, PauliString)> =
        vec![(Complex64::new(1.0, 0.0), PauliString::identity(n))];
    for (axis, &theta) in frames.iter().zip(&angles) {
        let (s, c) = (theta / 2.0).sin_cos();
        let stay = Complex64::new(c, 0.0);
        let flip = Complex64::new(0.0, -s);
        let mut index: HashMap<(Vec<u64>, Vec<u64>), usize> = HashMap::new();
        let mut next: Vec<(Complex64, PauliString)> = Vec::with_capacity(2 * branches.len());
        let mut push = |amp: Complex64, mut frame: PauliString| {
            amp_fold(&mut frame, amp, &mut index, &mut next);
        };
        for (amp, frame) in &branches {
            push(amp * stay, frame.clone());
            let mut moved = axis.clone();
            moved.mul_assign_right(frame);
            push(amp * flip, moved);
        }
        next.retain(|(a, _)| a.norm() >= PRUNE);
        branches = next;
    }
    Ok(NearCliffordState {
        base,
        branches,
        source_angles: angles,
    })
}

/// Fold the frame phase into the amplitude and merge with an existing identical frame.
fn amp_fold(
    frame: &mut PauliString,
    amp: Complex64,
    index: &mut HashMap<(Vec<u64>, Vec<u64>), usize>,
    out: &mut Vec<(Complex64, PauliString)>,
) {
    let amp = amp * phase_value(frame.phase_exponent());
    let frame = std::mem::replace(frame, PauliString::identity(0)).with_phase(0);
    let key = (frame.x_words().to_vec(), frame.z_words().to_vec());
    match index.get(&key) {
        Some(&i) => out[i].0 += amp,
        None => {
            index.insert(key, out.len());
            out.push((amp, frame));
        }
    }
}

/// Real part of `<ψ|P|ψ>`, clamped to [-1, 1].
pub fn near_clifford_expectation(s: &NearCliffordState, p: &PauliString) -> Result<f64> {
    Ok(s.expectation_complex(p)?.re.clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statevector::{stream_rng, Statevector};
    use rand::Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn p(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    fn random_clifford_gate<R: Rng>(rng: &mut R, n: usize) -> Gate {
        let a = rng.gen_range(0..n);
        let mut b = rng.gen_range(0..n);
        if n > 1 {
            while b == a {
                b = rng.gen_range(0..n);
            }
        }
        let k = rng.gen_range(0..4) as f64 * FRAC_PI_2;
        let choice = if n > 1 { rng.gen_range(0..13) } else { rng.gen_range(0..9) };
        match choice {
            0 => Gate::H(a),
            1 => Gate::S(a),
            2 => Gate::Sdg(a),
            3 => Gate::X(a),
            4 => Gate::Y(a),
            5 => Gate::Z(a),
            6 => Gate::Rx(a, k),
            7 => Gate::Rz(a, k),
            8 => Gate::H(a),
            9 => Gate::Cnot { control: a, target: b },
            10 => Gate::Cz(a, b),
            11 => Gate::Rzz(a, b, k),
            _ => Gate::ControlledPauli {
                control: a,
                target: b,
                pauli: [Pauli::X, Pauli::Y, Pauli::Z][rng.gen_range(0..3)],
            },
        }
    }

    fn random_pauli<R: Rng>(rng: &mut R, n: usize) -> PauliString {
        let paulis: Vec<Pauli> = (0..n)
            .map(|_| [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z][rng.gen_range(0..4)])
            .collect();
        PauliString::from_paulis(&paulis)
    }

    #[test]
    fn h_maps_z_to_x() {
        let mut t = StabilizerTableau::zero(1);
        t.apply_clifford(&Gate::H(0)).unwrap();
        assert_eq!(t.stabilizers()[0], p("X"));
        assert_eq!(stabilizer_expectation(&t, &p("X")).unwrap(), 1.0);
    }

    #[test]
    fn rz_quarter_turn_acts_as_s() {
        let mut a = p("X");
        conjugate_by_gate(&mut a, &Gate::Rz(0, FRAC_PI_2)).unwrap();
        assert_eq!(a, p("Y"));
    }

    #[test]
    fn zero_state_expectations() {
        let t = StabilizerTableau::zero(1);
        assert_eq!(t.expectation(&p("Z")).unwrap(), 1.0);
        assert_eq!(t.expectation(&p("X")).unwrap(), 0.0);
        assert!(t.expectation(&p("ZZ")).is_err());
    }

    #[test]
    fn non_clifford_rejected() {
        let mut t = StabilizerTableau::zero(1);
        assert!(matches!(t.apply_clifford(&Gate::Rx(0, 0.3)), Err(Error::NonClifford(_))));
    }

    #[test]
    fn conjugation_matches_dense() {
        // G P G† versus the dense product for every Pauli on 2 qubits and each gate kind.
        let mut rng = stream_rng(1, 0);
        for _ in 0..200 {
            let g = random_clifford_gate(&mut rng, 2);
            let circ = Circuit::from_gates(2, vec![g]).unwrap();
            for code in 0..16u64 {
                let pauli = PauliString::from_masks(2, code & 3, code >> 2);
                let mut conj = pauli.clone();
                conjugate_by_gate(&mut conj, &g).unwrap();
                for col in 0..4 {
                    // G P G† |col>, compared column by column up to the gate's global phase.
                    let mut v = Statevector::basis_state(2, col).unwrap();
                    v.apply_circuit(&circ.inverse()).unwrap();
                    v.apply_pauli(&pauli).unwrap();
                    v.apply_circuit(&circ).unwrap();
                    let mut w = Statevector::basis_state(2, col).unwrap();
                    w.apply_pauli(&conj).unwrap();
                    for (a, b) in v.amplitudes().iter().zip(w.amplitudes()) {
                        assert!((a - b).norm() < 1e-12, "{g} on {pauli}: got {conj}");
                    }
                }
            }
        }
    }

    #[test]
    fn random_clifford_circuits_match_statevector() {
        let mut rng = stream_rng(2, 0);
        for _ in 0..50 {
            let n = 8;
            let gates: Vec<Gate> = (0..60).map(|_| random_clifford_gate(&mut rng, n)).collect();
            let circ = Circuit::from_gates(n, gates).unwrap();
            let mut t = StabilizerTableau::zero(n);
            t.apply_circuit(&circ).unwrap();
            assert!(t.is_valid());
            let mut psi = Statevector::zero(n);
            psi.apply_circuit(&circ).unwrap();
            for _ in 0..20 {
                let q = random_pauli(&mut rng, n);
                let want = psi.expectation(&q).unwrap();
                let got = t.expectation(&q).unwrap();
                assert!((want - got).abs() < 1e-12, "{q}: {want} vs {got}");
                assert!(got == 0.0 || got == 1.0 || got == -1.0);
            }
        }
    }

    #[test]
    fn zero_free_rotations_single_branch() {
        let circ = Circuit::from_gates(2, vec![Gate::H(0), Gate::Cnot { control: 0, target: 1 }]).unwrap();
        let s = expand_non_clifford(&circ, &[], DEFAULT_BRANCH_BUDGET).unwrap();
        assert_eq!(s.branch_count(), 1);
        assert_eq!(s.branches()[0].0, Complex64::new(1.0, 0.0));
        let t = s.branch_tableau(0);
        assert_eq!(
            near_clifford_expectation(&s, &p("XX")).unwrap(),
            stabilizer_expectation(&t, &p("XX")).unwrap()
        );
    }

    #[test]
    fn single_rz_on_plus() {
        for theta in [0.3, 1.1, -2.0, PI / 3.0] {
            let circ = Circuit::from_gates(1, vec![Gate::H(0), Gate::Rz(0, theta)]).unwrap();
            let s = expand_non_clifford(&circ, &[0], DEFAULT_BRANCH_BUDGET).unwrap();
            let got = near_clifford_expectation(&s, &p("X")).unwrap();
            assert!((got - theta.cos()).abs() < 1e-12);
            assert_eq!(s.source_angles(), &[theta]);
        }
    }

    #[test]
    fn budget_and_index_errors() {
        let circ = Circuit::from_gates(1, vec![Gate::Rz(0, 0.1), Gate::Rz(0, 0.2)]).unwrap();
        assert!(matches!(expand_non_clifford(&circ, &[0, 1], 1), Err(Error::BranchBudget { .. })));
        assert!(matches!(expand_non_clifford(&circ, &[5], 4), Err(Error::NotARotation(5))));
        assert!(matches!(expand_non_clifford(&circ, &[0], 4), Err(Error::NonClifford(_))));
    }

    /// Random near-Clifford circuit: Clifford gates plus `l` generic rotations.
    fn random_near_clifford<R: Rng>(rng: &mut R, n: usize, depth: usize, l: usize) -> (Circuit, Vec<usize>) {
        let mut gates: Vec<Gate> = (0..depth).map(|_| random_clifford_gate(rng, n)).collect();
        for _ in 0..l {
            let a = rng.gen_range(0..n);
            let b = (a + 1 + rng.gen_range(0..n.max(2) - 1)) % n;
            let theta = rng.gen_range(-PI..PI);
            let g = match rng.gen_range(0..3) {
                0 => Gate::Rx(a, theta),
                1 => Gate::Rz(a, theta),
                _ if n > 1 => Gate::Rzz(a, b, theta),
                _ => Gate::Rz(a, theta),
            };
            let pos = rng.gen_range(0..=gates.len());
            gates.insert(pos, g);
        }
        let circ = Circuit::from_gates(n, gates).unwrap();
        let free: Vec<usize> = circ
            .gates()
            .iter()
            .filter(|g| g.is_rotation())
            .enumerate()
            .filter(|(_, g)| !g.is_clifford())
            .map(|(i, _)| i)
            .collect();
        (circ, free)
    }

    #[test]
    fn near_clifford_matches_statevector() {
        let mut rng = stream_rng(3, 0);
        for trial in 0..60 {
            let n = 1 + trial % 10;
            let l = trial % 7;
            let (circ, free) = random_near_clifford(&mut rng, n, 40, l);
            let s = expand_non_clifford(&circ, &free, DEFAULT_BRANCH_BUDGET).unwrap();
            assert!(s.branch_count() <= 1 << free.len());
            assert!((s.norm_sqr() - 1.0).abs() < 1e-10);
            let mut psi = Statevector::zero(n);
            psi.apply_circuit(&circ).unwrap();
            for _ in 0..10 {
                let q = random_pauli(&mut rng, n);
                let want = psi.expectation(&q).unwrap();
                let got = s.expectation_complex(&q).unwrap();
                assert!((got.re - want).abs() < 1e-9, "trial {trial} {q}: {} vs {want}", got.re);
                assert!(got.im.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn branch_tableaus_are_valid_and_reproduce_branches() {
        let mut rng = stream_rng(4, 0);
        let (circ, free) = random_near_clifford(&mut rng, 4, 20, 3);
        let s = expand_non_clifford(&circ, &free, DEFAULT_BRANCH_BUDGET).unwrap();
        for i in 0..s.branch_count() {
            let t = s.branch_tableau(i);
            assert!(t.is_valid());
            for st in t.stabilizers() {
                // F|φ> is stabilized by the conjugated rows.
                let (_, frame) = &s.branches()[i];
                let mut v = Statevector::zero(4);
                let mut clifford = Circuit::new(4);
                for (pos, g) in circ.gates().iter().enumerate() {
                    let _ = pos;
                    if g.is_clifford() {
                        clifford.push(*g).unwrap();
                    }
                }
                v.apply_circuit(&clifford).unwrap();
                v.apply_pauli(frame).unwrap();
                assert!((v.expectation(st).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clifford_angle_in_free_set_is_pruned() {
        let circ = Circuit::from_gates(1, vec![Gate::H(0), Gate::Rz(0, 0.0)]).unwrap();
        let s = expand_non_clifford(&circ, &[0], DEFAULT_BRANCH_BUDGET).unwrap();
        assert_eq!(s.branch_count(), 1);
    }
}
