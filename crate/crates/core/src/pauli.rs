//! Symplectic Pauli strings.
//!
//! A string on `n` qubits is stored as x/z bitmasks packed 64 qubits per word plus a phase
//! exponent `k`, representing `i^k * P_0 ⊗ ... ⊗ P_{n-1}` where each single-qubit factor is
//! `X^x Z^z` up to the convention `Y = iXZ`. Concretely the factor with both bits set is `Y`
//! itself, so `XZ = -iY`.
//!
//! Text literals read left to right as qubit 0, 1, ...: `"XIZY"` is `X` on qubit 0 and `Y`
//! on qubit 3. An optional prefix `+`, `-`, `i`, `+i` or `-i` sets the phase.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn from_bits(x: bool, z: bool) -> Self {
        match (x, z) {
            (false, false) => Pauli::I,
            (true, false) => Pauli::X,
            (true, true) => Pauli::Y,
            (false, true) => Pauli::Z,
        }
    }

    pub fn bits(self) -> (bool, bool) {
        match self {
            Pauli::I => (false, false),
            Pauli::X => (true, false),
            Pauli::Y => (true, true),
            Pauli::Z => (false, true),
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        match c {
            'I' | 'i' => Some(Pauli::I),
            'X' | 'x' => Some(Pauli::X),
            'Y' | 'y' => Some(Pauli::Y),
            'Z' | 'z' => Some(Pauli::Z),
            _ => None,
        }
    }

    /// 2x2 matrix, row-major.
    pub fn matrix(self) -> [[Complex64; 2]; 2] {
        let o = Complex64::new(0.0, 0.0);
        let l = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        match self {
            Pauli::I => [[l, o], [o, l]],
            Pauli::X => [[o, l], [l, o]],
            Pauli::Y => [[o, -i], [i, o]],
            Pauli::Z => [[l, o], [o, -l]],
        }
    }
}

/// `i^k` for `k` taken mod 4.
pub fn phase_value(k: u8) -> Complex64 {
    match k & 3 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PauliString {
    n: usize,
    x: Vec<u64>,
    z: Vec<u64>,
    phase: u8,
}

/// A Pauli string on `n + 1` qubits split into its system part and the factor on the
/// ancilla qubit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SystemAncillaSplit {
    pub system_part: PauliString,
    pub ancilla_part: Pauli,
}

fn words(n: usize) -> usize {
    n.div_ceil(64).max(1)
}

impl PauliString {
    pub fn identity(n: usize) -> Self {
        PauliString {
            n,
            x: vec![0; words(n)],
            z: vec![0; words(n)],
            phase: 0,
        }
    }

    /// Build from low-order bitmasks; only valid for `n <= 64`.
    pub fn from_masks(n: usize, x: u64, z: u64) -> Self {
        assert!(n <= 64, "from_masks supports at most 64 qubits");
        let mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        PauliString {
            n,
            x: vec![x & mask],
            z: vec![z & mask],
            phase: 0,
        }
    }

    pub fn single(n: usize, qubit: usize, p: Pauli) -> Result<Self> {
        let mut s = Self::identity(n);
        s.set(qubit, p)?;
        Ok(s)
    }

    pub fn from_paulis(paulis: &[Pauli]) -> Self {
        let mut s = Self::identity(paulis.len());
        for (q, &p) in paulis.iter().enumerate() {
            s.set_unchecked(q, p);
        }
        s
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    /// Phase exponent `k` in `i^k`.
    pub fn phase_exponent(&self) -> u8 {
        self.phase
    }

    pub fn phase(&self) -> Complex64 {
        phase_value(self.phase)
    }

    pub fn with_phase(mut self, k: u8) -> Self {
        self.phase = k & 3;
        self
    }

    pub fn x_words(&self) -> &[u64] {
        &self.x
    }

    pub fn z_words(&self) -> &[u64] {
        &self.z
    }

    /// X bitmask of the first 64 qubits.
    pub fn x_mask(&self) -> u64 {
        self.x[0]
    }

    /// Z bitmask of the first 64 qubits.
    pub fn z_mask(&self) -> u64 {
        self.z[0]
    }

    pub fn get(&self, q: usize) -> Pauli {
        let (w, b) = (q / 64, q % 64);
        Pauli::from_bits((self.x[w] >> b) & 1 == 1, (self.z[w] >> b) & 1 == 1)
    }

    pub fn set(&mut self, q: usize, p: Pauli) -> Result<()> {
        if q >= self.n {
            return Err(Error::IndexOutOfRange {
                index: q,
                n_qubits: self.n,
            });
        }
        self.set_unchecked(q, p);
        Ok(())
    }

    fn set_unchecked(&mut self, q: usize, p: Pauli) {
        let (w, b) = (q / 64, q % 64);
        let (xb, zb) = p.bits();
        self.x[w] = (self.x[w] & !(1 << b)) | ((xb as u64) << b);
        self.z[w] = (self.z[w] & !(1 << b)) | ((zb as u64) << b);
    }

    /// `(x, z)` bits of qubit `q`.
    #[inline]
    pub fn bits(&self, q: usize) -> (bool, bool) {
        let (w, b) = (q / 64, q % 64);
        ((self.x[w] >> b) & 1 == 1, (self.z[w] >> b) & 1 == 1)
    }

    #[inline]
    pub(crate) fn set_bits(&mut self, q: usize, x: bool, z: bool) {
        let (w, b) = (q / 64, q % 64);
        self.x[w] = (self.x[w] & !(1 << b)) | ((x as u64) << b);
        self.z[w] = (self.z[w] & !(1 << b)) | ((z as u64) << b);
    }

    /// Multiply by -1.
    #[inline]
    pub fn negate(&mut self) {
        self.phase ^= 2;
    }

    /// Same operator bits, ignoring phase.
    pub fn same_operator(&self, other: &PauliString) -> bool {
        self.n == other.n && self.x == other.x && self.z == other.z
    }

    pub fn is_identity(&self) -> bool {
        self.x.iter().chain(&self.z).all(|&w| w == 0)
    }

    /// True when the operator is Hermitian (phase ±1).
    pub fn is_hermitian(&self) -> bool {
        self.phase % 2 == 0
    }

    pub fn weight(&self) -> usize {
        self.x
            .iter()
            .zip(&self.z)
            .map(|(x, z)| (x | z).count_ones() as usize)
            .sum()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.n).filter(|&q| self.get(q) != Pauli::I).collect()
    }

    /// Group product `self · other` with exact phase.
    pub fn multiply(&self, other: &PauliString) -> Result<PauliString> {
        self.check_dim(other)?;
        let mut out = self.clone();
        out.mul_assign_right(other);
        Ok(out)
    }

    /// In-place `self ← self · other`. Panics on dimension mismatch.
    pub fn mul_assign_right(&mut self, other: &PauliString) {
        assert_eq!(self.n, other.n, "Pauli dimension mismatch");
        let mut plus = 0i64;
        let mut minus = 0i64;
        for w in 0..self.x.len() {
            let (x1, z1, x2, z2) = (self.x[w], self.z[w], other.x[w], other.z[w]);
            let y1 = x1 & z1;
            let xo1 = x1 & !z1;
            let zo1 = z1 & !x1;
            let y2 = x2 & z2;
            let xo2 = x2 & !z2;
            let zo2 = z2 & !x2;
            // Single-qubit products XY = iZ, YZ = iX, ZX = iY and their reverses.
            let p = (xo1 & y2) | (y1 & zo2) | (zo1 & xo2);
            let m = (y1 & xo2) | (zo1 & y2) | (xo1 & zo2);
            plus += p.count_ones() as i64;
            minus += m.count_ones() as i64;
            self.x[w] = x1 ^ x2;
            self.z[w] = z1 ^ z2;
        }
        let k = self.phase as i64 + other.phase as i64 + plus - minus;
        self.phase = k.rem_euclid(4) as u8;
    }

    pub fn commutes(&self, other: &PauliString) -> Result<bool> {
        self.check_dim(other)?;
        Ok(self.commutes_unchecked(other))
    }

    pub(crate) fn commutes_unchecked(&self, other: &PauliString) -> bool {
        let mut parity = 0u32;
        for w in 0..self.x.len() {
            parity ^= ((self.x[w] & other.z[w]) ^ (self.z[w] & other.x[w])).count_ones();
        }
        parity & 1 == 0
    }

    /// True iff every factor is `I` or `Z`.
    pub fn is_z_type(&self) -> bool {
        self.x.iter().all(|&w| w == 0)
    }

    pub fn split(&self, ancilla_index: usize) -> Result<SystemAncillaSplit> {
        if ancilla_index >= self.n {
            return Err(Error::IndexOutOfRange {
                index: ancilla_index,
                n_qubits: self.n,
            });
        }
        let paulis: Vec<Pauli> = (0..self.n)
            .filter(|&q| q != ancilla_index)
            .map(|q| self.get(q))
            .collect();
        let system_part = PauliString::from_paulis(&paulis).with_phase(self.phase);
        Ok(SystemAncillaSplit {
            system_part,
            ancilla_part: self.get(ancilla_index),
        })
    }

    /// Insert a qubit carrying `p` at position `index`, shifting later qubits up.
    pub fn insert(&self, index: usize, p: Pauli) -> Result<PauliString> {
        if index > self.n {
            return Err(Error::IndexOutOfRange {
                index,
                n_qubits: self.n + 1,
            });
        }
        let mut paulis: Vec<Pauli> = (0..self.n).map(|q| self.get(q)).collect();
        paulis.insert(index, p);
        Ok(PauliString::from_paulis(&paulis).with_phase(self.phase))
    }

    /// Re-embed into `n_total` qubits; factor `j` of `self` goes to qubit `map[j]`.
    pub fn embed(&self, n_total: usize, map: &[usize]) -> Result<PauliString> {
        if map.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: map.len(),
            });
        }
        let mut out = PauliString::identity(n_total);
        for (j, &q) in map.iter().enumerate() {
            out.set(q, self.get(j))?;
        }
        out.phase = self.phase;
        Ok(out)
    }

    /// Restrict to the listed qubits (in the given order). Factors outside are dropped.
    pub fn restrict(&self, qubits: &[usize]) -> PauliString {
        let paulis: Vec<Pauli> = qubits.iter().map(|&q| self.get(q)).collect();
        PauliString::from_paulis(&paulis).with_phase(self.phase)
    }

    /// Action on a computational basis state: `P|k> = c |k'>`, returns `(c, k')`.
    /// Only valid for `n <= 64`.
    #[inline]
    pub fn apply_to_basis(&self, k: u64) -> (Complex64, u64) {
        let (x, z) = (self.x[0], self.z[0]);
        // Y = iXZ, so each Y factor contributes an extra i on top of X^x Z^z.
        let e = self.phase as u32 + (x & z).count_ones() + 2 * (k & z).count_ones();
        (phase_value((e & 3) as u8), k ^ x)
    }

    /// Dense `2^n x 2^n` matrix (row-major), for small `n` only.
    pub fn to_dense(&self) -> Vec<Complex64> {
        let dim = 1usize << self.n;
        let mut m = vec![Complex64::new(0.0, 0.0); dim * dim];
        for col in 0..dim {
            let mut amp = self.phase();
            let mut row = 0usize;
            for q in 0..self.n {
                let bit = (col >> q) & 1;
                let mat = self.get(q).matrix();
                let out = if mat[0][bit].norm() > 0.0 { 0 } else { 1 };
                amp *= mat[out][bit];
                row |= out << q;
            }
            m[row * dim + col] = amp;
        }
        m
    }

    fn check_dim(&self, other: &PauliString) -> Result<()> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: other.n,
            });
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        (0..self.n).map(|q| self.get(q).symbol()).collect()
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.phase {
            0 => "",
            1 => "i",
            2 => "-",
            _ => "-i",
        };
        write!(f, "{prefix}{}", self.label())
    }
}

impl fmt::Debug for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PauliString({self})")
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let (phase, body) = if let Some(rest) = t.strip_prefix("-i") {
            (3, rest)
        } else if let Some(rest) = t.strip_prefix("+i") {
            (1, rest)
        } else if let Some(rest) = t.strip_prefix('-') {
            (2, rest)
        } else if let Some(rest) = t.strip_prefix('+') {
            (0, rest)
        } else if t.len() > 1 && t.starts_with('i') {
            (1, &t[1..])
        } else {
            (0, t)
        };
        if body.is_empty() {
            return Err(Error::ParsePauli(s.to_string()));
        }
        let mut paulis = Vec::with_capacity(body.len());
        for c in body.chars() {
            match c {
                'I' | 'X' | 'Y' | 'Z' => paulis.push(Pauli::from_symbol(c).unwrap()),
                _ => return Err(Error::ParsePauli(s.to_string())),
            }
        }
        Ok(PauliString::from_paulis(&paulis).with_phase(phase))
    }
}
