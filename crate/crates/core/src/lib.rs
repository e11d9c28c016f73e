//! Echo verification (EV) and echo-verified Clifford data regression (EVCDR).
//!
//! The crate is organised bottom-up:
//!
//! - [`pauli`]: symplectic Pauli strings.
//! - [`circuit`]: gate set and circuits.
//! - [`statevector`]: dense statevector / density-matrix simulation, Pauli channels and
//!   trajectory sampling.
//! - [`stabilizer`]: tableau simulation and near-Clifford branch expansion.
//! - [`ev`]: EV circuit construction, light-cone reduction, postselection, tomography and
//!   estimators.
//! - [`channel`]: closed-form ancilla predictions under Pauli channels.
//! - [`cdr`]: training sets, regression and the EVCDR estimator.
//! - [`ising`]: lattices, Trotter circuits and exact magnetization.
//! - [`multi_ancilla`]: EV with several ancilla qubits.
//! - [`harness`]: experiment configuration, orchestration and result files.
//!
//! Qubit ordering is little-endian everywhere: qubit `q` is bit `q` of a basis-state index.

pub mod cdr;
pub mod channel;
pub mod circuit;
pub mod error;
pub mod ev;
pub mod harness;
pub mod ising;
pub mod multi_ancilla;
pub mod pauli;
pub mod stabilizer;
pub mod statevector;

pub use error::{Error, Result};
pub use num_complex::Complex64;
