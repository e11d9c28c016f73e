//! Gate set and circuits.
//!
//! Rotation conventions: `Rx(θ) = exp(-iθX/2)`, `Rz(θ) = exp(-iθZ/2)`,
//! `Rzz(θ) = exp(-iθ Z⊗Z/2)`. The parameter index of a rotation is its position among the
//! rotation gates of a circuit, counted from zero.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::pauli::{Pauli, PauliString};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gate {
    H(usize),
    S(usize),
    Sdg(usize),
    X(usize),
    Y(usize),
    Z(usize),
    Cnot { control: usize, target: usize },
    Cz(usize, usize),
    Rx(usize, f64),
    Rz(usize, f64),
    Rzz(usize, usize, f64),
    /// Pauli `pauli` on `target` when `control` is |1>.
    ControlledPauli {
        control: usize,
        target: usize,
        pauli: Pauli,
    },
    /// Pauli on `target` when the qubits in `controls` (bitmask) read `pattern`.
    MultiControlledPauli {
        controls: u64,
        pattern: u64,
        target: usize,
        pauli: Pauli,
    },
}

/// Qubits touched by a gate, in gate-argument order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Targets {
    buf: [usize; 2],
    len: usize,
}

impl Targets {
    fn one(a: usize) -> Self {
        Targets {
            buf: [a, 0],
            len: 1,
        }
    }
    fn two(a: usize, b: usize) -> Self {
        Targets {
            buf: [a, b],
            len: 2,
        }
    }
    pub fn as_slice(&self) -> &[usize] {
        &self.buf[..self.len]
    }
}

/// Nearest multiple of π/2 as an integer `k` in `0..4`, if `theta` is one within `1e-12`.
pub fn clifford_quarter_turns(theta: f64) -> Option<u8> {
    let k = (theta / FRAC_PI_2).round();
    if (theta - k * FRAC_PI_2).abs() < 1e-12 {
        Some(k.rem_euclid(4.0) as u8)
    } else {
        None
    }
}

impl Gate {
    pub fn name(&self) -> &'static str {
        match self {
            Gate::H(_) => "h",
            Gate::S(_) => "s",
            Gate::Sdg(_) => "sdg",
            Gate::X(_) => "x",
            Gate::Y(_) => "y",
            Gate::Z(_) => "z",
            Gate::Cnot { .. } => "cx",
            Gate::Cz(..) => "cz",
            Gate::Rx(..) => "rx",
            Gate::Rz(..) => "rz",
            Gate::Rzz(..) => "rzz",
            Gate::ControlledPauli { .. } => "cpauli",
            Gate::MultiControlledPauli { .. } => "mcpauli",
        }
    }

    /// Qubits acted on. For multi-controlled gates only the target is listed; use
    /// [`Gate::all_qubits`] for the full set.
    pub fn targets(&self) -> Targets {
        match *self {
            Gate::H(q)
            | Gate::S(q)
            | Gate::Sdg(q)
            | Gate::X(q)
            | Gate::Y(q)
            | Gate::Z(q)
            | Gate::Rx(q, _)
            | Gate::Rz(q, _) => Targets::one(q),
            Gate::Cnot { control, target } => Targets::two(control, target),
            Gate::Cz(a, b) | Gate::Rzz(a, b, _) => Targets::two(a, b),
            Gate::ControlledPauli {
                control, target, ..
            } => Targets::two(control, target),
            Gate::MultiControlledPauli { target, .. } => Targets::one(target),
        }
    }

    pub fn all_qubits(&self) -> Vec<usize> {
        match *self {
            Gate::MultiControlledPauli {
                controls, target, ..
            } => {
                let mut qs: Vec<usize> = (0..64).filter(|b| (controls >> b) & 1 == 1).collect();
                qs.push(target);
                qs
            }
            _ => self.targets().as_slice().to_vec(),
        }
    }

    pub fn max_qubit(&self) -> usize {
        self.all_qubits().into_iter().max().unwrap_or(0)
    }

    pub fn is_rotation(&self) -> bool {
        matches!(self, Gate::Rx(..) | Gate::Rz(..) | Gate::Rzz(..))
    }

    pub fn angle(&self) -> Option<f64> {
        match *self {
            Gate::Rx(_, t) | Gate::Rz(_, t) | Gate::Rzz(_, _, t) => Some(t),
            _ => None,
        }
    }

    pub fn with_angle(&self, theta: f64) -> Gate {
        match *self {
            Gate::Rx(q, _) => Gate::Rx(q, theta),
            Gate::Rz(q, _) => Gate::Rz(q, theta),
            Gate::Rzz(a, b, _) => Gate::Rzz(a, b, theta),
            g => g,
        }
    }

    /// Generator `P` of a rotation `exp(-iθP/2)` on `n` qubits.
    pub fn rotation_axis(&self, n: usize) -> Option<PauliString> {
        let mut p = PauliString::identity(n);
        match *self {
            Gate::Rx(q, _) => p.set(q, Pauli::X).ok()?,
            Gate::Rz(q, _) => p.set(q, Pauli::Z).ok()?,
            Gate::Rzz(a, b, _) => {
                p.set(a, Pauli::Z).ok()?;
                p.set(b, Pauli::Z).ok()?;
            }
            _ => return None,
        }
        Some(p)
    }

    pub fn is_clifford(&self) -> bool {
        match self {
            Gate::MultiControlledPauli { controls, .. } => controls.count_ones() <= 1,
            g => match g.angle() {
                Some(t) => clifford_quarter_turns(t).is_some(),
                None => true,
            },
        }
    }

    pub fn inverse(&self) -> Gate {
        match *self {
            Gate::S(q) => Gate::Sdg(q),
            Gate::Sdg(q) => Gate::S(q),
            Gate::Rx(q, t) => Gate::Rx(q, -t),
            Gate::Rz(q, t) => Gate::Rz(q, -t),
            Gate::Rzz(a, b, t) => Gate::Rzz(a, b, -t),
            g => g,
        }
    }

    /// Relabel qubits through `map` (old index → new index).
    pub fn remap(&self, map: &dyn Fn(usize) -> usize) -> Gate {
        match *self {
            Gate::H(q) => Gate::H(map(q)),
            Gate::S(q) => Gate::S(map(q)),
            Gate::Sdg(q) => Gate::Sdg(map(q)),
            Gate::X(q) => Gate::X(map(q)),
            Gate::Y(q) => Gate::Y(map(q)),
            Gate::Z(q) => Gate::Z(map(q)),
            Gate::Cnot { control, target } => Gate::Cnot {
                control: map(control),
                target: map(target),
            },
            Gate::Cz(a, b) => Gate::Cz(map(a), map(b)),
            Gate::Rx(q, t) => Gate::Rx(map(q), t),
            Gate::Rz(q, t) => Gate::Rz(map(q), t),
            Gate::Rzz(a, b, t) => Gate::Rzz(map(a), map(b), t),
            Gate::ControlledPauli {
                control,
                target,
                pauli,
            } => Gate::ControlledPauli {
                control: map(control),
                target: map(target),
                pauli,
            },
            Gate::MultiControlledPauli {
                controls,
                pattern,
                target,
                pauli,
            } => {
                let (mut c, mut p) = (0u64, 0u64);
                for b in 0..64 {
                    if (controls >> b) & 1 == 1 {
                        let nb = map(b);
                        c |= 1 << nb;
                        p |= ((pattern >> b) & 1) << nb;
                    }
                }
                Gate::MultiControlledPauli {
                    controls: c,
                    pattern: p,
                    target: map(target),
                    pauli,
                }
            }
        }
    }

    /// 2x2 matrix of a single-qubit gate (row-major), `None` otherwise.
    pub fn matrix_1q(&self) -> Option<[[Complex64; 2]; 2]> {
        let c = |re: f64, im: f64| Complex64::new(re, im);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        Some(match *self {
            Gate::H(_) => [[c(r, 0.0), c(r, 0.0)], [c(r, 0.0), c(-r, 0.0)]],
            Gate::S(_) => [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 1.0)]],
            Gate::Sdg(_) => [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, -1.0)]],
            Gate::X(_) => Pauli::X.matrix(),
            Gate::Y(_) => Pauli::Y.matrix(),
            Gate::Z(_) => Pauli::Z.matrix(),
            Gate::Rx(_, t) => {
                let (s, co) = (t / 2.0).sin_cos();
                [[c(co, 0.0), c(0.0, -s)], [c(0.0, -s), c(co, 0.0)]]
            }
            Gate::Rz(_, t) => {
                let (s, co) = (t / 2.0).sin_cos();
                [[c(co, -s), c(0.0, 0.0)], [c(0.0, 0.0), c(co, s)]]
            }
            _ => return None,
        })
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let qs = self.all_qubits();
        write!(f, "{}", self.name())?;
        if let Gate::ControlledPauli { pauli, .. } | Gate::MultiControlledPauli { pauli, .. } =
            self
        {
            write!(f, "[{}]", pauli.symbol())?;
        }
        if let Some(t) = self.angle() {
            write!(f, "({t})")?;
        }
        write!(f, " {qs:?}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    n_qubits: usize,
    gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Self {
        Circuit {
            n_qubits,
            gates: Vec::new(),
        }
    }

    pub fn from_gates(n_qubits: usize, gates: Vec<Gate>) -> Result<Self> {
        let mut c = Circuit::new(n_qubits);
        for g in gates {
            c.push(g)?;
        }
        Ok(c)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn push(&mut self, g: Gate) -> Result<&mut Self> {
        let qs = g.all_qubits();
        for &q in &qs {
            if q >= self.n_qubits {
                return Err(Error::IndexOutOfRange {
                    index: q,
                    n_qubits: self.n_qubits,
                });
            }
        }
        for (i, a) in qs.iter().enumerate() {
            if qs[i + 1..].contains(a) {
                return Err(Error::InvalidArgument(format!(
                    "gate {g} repeats qubit {a}"
                )));
            }
        }
        self.gates.push(g);
        Ok(self)
    }

    pub fn extend(&mut self, other: &Circuit) -> Result<()> {
        if other.n_qubits > self.n_qubits {
            return Err(Error::DimensionMismatch {
                expected: self.n_qubits,
                got: other.n_qubits,
            });
        }
        self.gates.extend_from_slice(&other.gates);
        Ok(())
    }

    /// The adjoint circuit: reversed order, each gate inverted.
    pub fn inverse(&self) -> Circuit {
        Circuit {
            n_qubits: self.n_qubits,
            gates: self.gates.iter().rev().map(Gate::inverse).collect(),
        }
    }

    /// Gate positions of the rotations, indexed by parameter index.
    pub fn rotation_positions(&self) -> Vec<usize> {
        self.gates
            .iter()
            .enumerate()
            .filter(|(_, g)| g.is_rotation())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.gates.iter().filter_map(Gate::angle).collect()
    }

    /// Replace rotation angles in parameter order.
    pub fn with_parameters(&self, theta: &[f64]) -> Result<Circuit> {
        let pos = self.rotation_positions();
        if pos.len() != theta.len() {
            return Err(Error::DimensionMismatch {
                expected: pos.len(),
                got: theta.len(),
            });
        }
        let mut out = self.clone();
        for (&p, &t) in pos.iter().zip(theta) {
            out.gates[p] = out.gates[p].with_angle(t);
        }
        Ok(out)
    }

    /// Same gates placed on a larger register.
    pub fn widened(&self, n_qubits: usize) -> Result<Circuit> {
        if n_qubits < self.n_qubits {
            return Err(Error::DimensionMismatch {
                expected: self.n_qubits,
                got: n_qubits,
            });
        }
        Ok(Circuit {
            n_qubits,
            gates: self.gates.clone(),
        })
    }

    /// Relabel through `map` (old → new) onto `n_qubits` qubits.
    pub fn remapped(&self, n_qubits: usize, map: &dyn Fn(usize) -> usize) -> Result<Circuit> {
        Circuit::from_gates(n_qubits, self.gates.iter().map(|g| g.remap(map)).collect())
    }

    pub fn is_clifford(&self) -> bool {
        self.gates.iter().all(Gate::is_clifford)
    }
}

/// Random circuit over the full gate set (no multi-controlled gates), for tests and
/// benchmarks. Rotation angles are uniform in (-π, π).
pub fn random_circuit<R: Rng>(n_qubits: usize, depth: usize, rng: &mut R) -> Circuit {
    use std::f64::consts::PI;
    let mut c = Circuit::new(n_qubits);
    for _ in 0..depth {
        let a = rng.gen_range(0..n_qubits);
        let b = if n_qubits > 1 {
            (a + rng.gen_range(1..n_qubits)) % n_qubits
        } else {
            a
        };
        let theta = rng.gen_range(-PI..PI);
        let two = n_qubits > 1 && rng.gen_bool(0.4);
        let g = if two {
            match rng.gen_range(0..4) {
                0 => Gate::Cnot { control: a, target: b },
                1 => Gate::Cz(a, b),
                2 => Gate::Rzz(a, b, theta),
                _ => Gate::ControlledPauli {
                    control: a,
                    target: b,
                    pauli: [Pauli::X, Pauli::Y, Pauli::Z][rng.gen_range(0..3)],
                },
            }
        } else {
            match rng.gen_range(0..8) {
                0 => Gate::H(a),
                1 => Gate::S(a),
                2 => Gate::Sdg(a),
                3 => Gate::X(a),
                4 => Gate::Y(a),
                5 => Gate::Z(a),
                6 => Gate::Rx(a, theta),
                _ => Gate::Rz(a, theta),
            }
        };
        c.gates.push(g);
    }
    c
}

/// Random Hermitian Pauli string with at least one non-identity factor.
pub fn random_observable<R: Rng>(n_qubits: usize, rng: &mut R) -> PauliString {
    loop {
        let paulis: Vec<Pauli> = (0..n_qubits)
            .map(|_| [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z][rng.gen_range(0..4)])
            .collect();
        let p = PauliString::from_paulis(&paulis);
        if !p.is_identity() {
            return if rng.gen_bool(0.5) { p } else { p.with_phase(2) };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn push_validates_indices() {
        let mut c = Circuit::new(2);
        assert!(c.push(Gate::H(2)).is_err());
        assert!(c.push(Gate::Cz(1, 1)).is_err());
        assert!(c.push(Gate::Cnot { control: 0, target: 1 }).is_ok());
    }

    #[test]
    fn inverse_reverses_and_negates() {
        let c = Circuit::from_gates(2, vec![Gate::S(0), Gate::Rx(1, 0.3), Gate::H(0)]).unwrap();
        let inv = c.inverse();
        assert_eq!(inv.gates(), &[Gate::H(0), Gate::Rx(1, -0.3), Gate::Sdg(0)]);
    }

    #[test]
    fn parameter_round_trip() {
        let c = Circuit::from_gates(
            2,
            vec![Gate::Rx(0, 0.1), Gate::H(1), Gate::Rzz(0, 1, 0.2), Gate::Rz(1, 0.3)],
        )
        .unwrap();
        assert_eq!(c.parameters(), vec![0.1, 0.2, 0.3]);
        assert_eq!(c.rotation_positions(), vec![0, 2, 3]);
        let d = c.with_parameters(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(d.parameters(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn clifford_detection() {
        assert_eq!(clifford_quarter_turns(PI), Some(2));
        assert_eq!(clifford_quarter_turns(-PI / 2.0), Some(3));
        assert_eq!(clifford_quarter_turns(0.3), None);
        assert!(Gate::Rzz(0, 1, PI / 2.0).is_clifford());
        assert!(!Gate::Rx(0, 0.2).is_clifford());
    }

    #[test]
    fn remap_multicontrol() {
        let g = Gate::MultiControlledPauli {
            controls: 0b011,
            pattern: 0b010,
            target: 2,
            pauli: Pauli::Z,
        };
        let m = g.remap(&|q| q + 1);
        assert_eq!(
            m,
            Gate::MultiControlledPauli {
                controls: 0b110,
                pattern: 0b100,
                target: 3,
                pauli: Pauli::Z
            }
        );
    }
}
