//! Python bindings. Models are passed as the same strings the command line
//! accepts, e.g. `"gaussian"` or `"cauchy:nu=2,beta=1"`.

use critpoint::correlation::{corr_asymptote_total, corr_mc};
use critpoint::covariance::CovarianceModel;
use critpoint::field::{empirical_index_fractions, simulate as run_simulation, summarize};
use critpoint::goe::{gamma_const as gamma, OrderedEigDensity};
use critpoint::kac_rice::{index_fractions as fractions, mean_count_index_above, mean_counts_by_index};
use critpoint::Error;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn parse_model(spec: &str) -> PyResult<CovarianceModel> {
    spec.parse().map_err(to_py)
}

/// Density of the k-th smallest GOE eigenvalue at each point of `ells`.
#[pyfunction]
fn goe_density(n: usize, k: usize, ells: Vec<f64>) -> PyResult<Vec<f64>> {
    let d = OrderedEigDensity::new(n).map_err(to_py)?;
    ells.iter().map(|&l| d.eval(k, l).map_err(to_py)).collect()
}

#[pyfunction]
fn index_fractions(n: usize) -> PyResult<Vec<f64>> {
    fractions(n).map_err(to_py)
}

#[pyfunction]
fn gamma_const(n: usize) -> PyResult<f64> {
    gamma(n).map_err(to_py)
}

/// Expected counts per index in `volume`; with `u`, only critical values above `u`.
#[pyfunction]
#[pyo3(signature = (model, n, volume = 1.0, u = None))]
fn mean_counts(model: &str, n: usize, volume: f64, u: Option<f64>) -> PyResult<Vec<f64>> {
    let m = parse_model(model)?;
    match u {
        None => mean_counts_by_index(&m, n, volume).map_err(to_py),
        Some(u) => (0..=n).map(|k| mean_count_index_above(&m, n, k, u, volume).map_err(to_py)).collect(),
    }
}

#[pyfunction]
fn corr_asymptote(model: &str, n: usize, rho: f64) -> PyResult<f64> {
    corr_asymptote_total(&parse_model(model)?, n, rho).map_err(to_py)
}

/// Monte Carlo correlation estimate as `(value, std_error)`.
#[pyfunction]
#[pyo3(signature = (model, n, rho, samples = 1_000_000, seed = 0, index_pair = None))]
fn correlation(
    model: &str,
    n: usize,
    rho: f64,
    samples: usize,
    seed: u64,
    index_pair: Option<(usize, usize)>,
) -> PyResult<(f64, f64)> {
    let e = corr_mc(&parse_model(model)?, n, rho, index_pair, samples, seed).map_err(to_py)?;
    Ok((e.value, e.std_error))
}

/// Synthesises fields and returns density and index-fraction estimates.
#[pyfunction]
#[pyo3(signature = (model, n, side = 256, spacing = 0.1, realizations = 4, seed = 0))]
fn simulate<'py>(
    py: Python<'py>,
    model: &str,
    n: usize,
    side: usize,
    spacing: f64,
    realizations: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let m = parse_model(model)?;
    let runs = run_simulation(&m, n, side, spacing, realizations, seed).map_err(to_py)?;
    let s = summarize(&runs, n, side, spacing, seed);
    let all: Vec<_> = runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
    let out = PyDict::new(py);
    out.set_item("density", s.density)?;
    out.set_item("density_se", s.density_se)?;
    out.set_item("points", s.total_points)?;
    out.set_item("degenerate_fraction", s.degenerate_fraction)?;
    out.set_item("counts_by_index", empirical_index_fractions(&all, n).map(|f| f.counts).ok())?;
    Ok(out)
}

#[pymodule]
fn critpoint_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(goe_density, m)?)?;
    m.add_function(wrap_pyfunction!(index_fractions, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_const, m)?)?;
    m.add_function(wrap_pyfunction!(mean_counts, m)?)?;
    m.add_function(wrap_pyfunction!(corr_asymptote, m)?)?;
    m.add_function(wrap_pyfunction!(correlation, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
