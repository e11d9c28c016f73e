use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use evcdr::harness::{self, ExperimentConfig, ResultRow};
use evcdr::ising::{self, IsingModel, LatticeKind, SpinLattice};
use evcdr::pauli::PauliString;
use evcdr::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::ParsePauli(_) | Error::InvalidArgument(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Numerical(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn lattice(kind: &str, size: usize) -> PyResult<SpinLattice> {
    let kind = match kind {
        "ring" => LatticeKind::Ring { n: size },
        "chain" => LatticeKind::Chain { n: size },
        "heavy_hex" => LatticeKind::HeavyHex { cells: size },
        other => return Err(PyValueError::new_err(format!("unknown lattice {other:?}"))),
    };
    SpinLattice::build(&kind).map_err(to_py)
}

fn rows_to_dicts<'py>(py: Python<'py>, rows: &[ResultRow]) -> PyResult<Vec<Bound<'py, PyDict>>> {
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("t", r.t)?;
            d.set_item("variant", &r.variant)?;
            d.set_item("estimate", r.estimate)?;
            d.set_item("variance", r.variance)?;
            d.set_item("error", r.error)?;
            d.set_item("p0", r.p0)?;
            d.set_item("purity", r.purity)?;
            d.set_item("realization", r.realization)?;
            Ok(d)
        })
        .collect()
}

/// Product of two Pauli labels, e.g. `pauli_product("XY", "ZZ") == "iYX"`.
#[pyfunction]
fn pauli_product(a: &str, b: &str) -> PyResult<String> {
    let a: PauliString = a.parse().map_err(to_py)?;
    let b: PauliString = b.parse().map_err(to_py)?;
    Ok(a.multiply(&b).map_err(to_py)?.to_string())
}

#[pyfunction]
fn round_to_clifford(theta: f64) -> f64 {
    evcdr::cdr::round_to_clifford(theta)
}

/// `e_z / (1 + e_x)`.
#[pyfunction]
fn standard_estimate(e_x: f64, e_z: f64) -> PyResult<f64> {
    evcdr::ev::standard_estimate(e_x, e_z).map_err(to_py)
}

#[pyfunction]
fn depolarization_rate(e_x: f64, e_y: f64, e_z: f64, p0: f64, d: f64) -> PyResult<f64> {
    evcdr::ev::depolarization_rate(e_x, e_y, e_z, p0, d).map_err(to_py)
}

/// Noiseless single-site magnetization after `steps` Trotter steps, or under exact
/// evolution for `t = steps * tau` when `exact` is set.
#[pyfunction]
#[pyo3(signature = (kind, size, j, h, tau, steps, site, exact = false))]
#[allow(clippy::too_many_arguments)]
fn magnetization(
    py: Python<'_>,
    kind: &str,
    size: usize,
    j: f64,
    h: f64,
    tau: f64,
    steps: usize,
    site: usize,
    exact: bool,
) -> PyResult<f64> {
    let model = IsingModel::new(lattice(kind, size)?, j, h).map_err(to_py)?;
    py.detach(|| {
        if exact {
            ising::exact_magnetization(&model, steps as f64 * tau, site)
        } else {
            ising::trotter_magnetization(&model, tau, steps, site)
        }
    })
    .map_err(to_py)
}

/// Light-cone site counts for `K = 1..=k_max`.
#[pyfunction]
fn lightcone_sizes(kind: &str, size: usize, tau: f64, k_max: usize, site: usize) -> PyResult<Vec<usize>> {
    let model = IsingModel::new(lattice(kind, size)?, 1.0, 1.0).map_err(to_py)?;
    ising::lightcone_sizes(&model, tau, k_max, site).map_err(to_py)
}

#[pyfunction]
fn validate_config(config: &str) -> PyResult<()> {
    ExperimentConfig::from_toml_str(config)
        .and_then(|c| c.validate())
        .map_err(to_py)
}

/// Run an experiment described by a TOML string; one dict per result row.
#[pyfunction]
#[pyo3(signature = (config, seed = None))]
fn run_experiment<'py>(py: Python<'py>, config: &str, seed: Option<u64>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut cfg = ExperimentConfig::from_toml_str(config).map_err(to_py)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out = py.detach(|| harness::run_experiment(&cfg)).map_err(to_py)?;
    rows_to_dicts(py, &out.rows)
}

#[pyfunction]
fn run_oracle<'py>(py: Python<'py>, config: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = ExperimentConfig::from_toml_str(config).map_err(to_py)?;
    let rows = py.detach(|| harness::run_oracle(&cfg)).map_err(to_py)?;
    rows_to_dicts(py, &rows)
}

#[pymodule]
pub fn evcdr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CSV_HEADER", harness::CSV_HEADER.to_vec())?;
    m.add_function(wrap_pyfunction!(pauli_product, m)?)?;
    m.add_function(wrap_pyfunction!(round_to_clifford, m)?)?;
    m.add_function(wrap_pyfunction!(standard_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(depolarization_rate, m)?)?;
    m.add_function(wrap_pyfunction!(magnetization, m)?)?;
    m.add_function(wrap_pyfunction!(lightcone_sizes, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_oracle, m)?)?;
    Ok(())
}
