use std::sync::Arc;

use gradeig::certify::certify as certify_pair;
use gradeig::eigen::solve_eigen;
use gradeig::oracle::reference_for;
use gradeig::penalty::SolverParams;
use gradeig::{builtin, validate as validate_spec, Grid, ProblemSpec, BUILTIN_NAMES};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: gradeig::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn spec(name: &str) -> PyResult<ProblemSpec> {
    builtin(name).map_err(value_err)
}

/// Eigenpair on the cube `[-half, half]^n`.
#[pyclass(frozen, get_all)]
struct Eigenpair {
    lambda_star: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    nodes: Vec<usize>,
    /// Nodal values of `u_star`, first axis fastest.
    values: Vec<f64>,
    contact_radius: f64,
    residual: f64,
    warnings: Vec<String>,
}

#[pymethods]
impl Eigenpair {
    fn __repr__(&self) -> String {
        format!("Eigenpair(lambda_star={}, nodes={:?})", self.lambda_star, self.nodes)
    }
}

fn solve_inner(name: &str, half: f64, h: Option<f64>) -> PyResult<(ProblemSpec, gradeig::eigen::EigenPair)> {
    let spec = spec(name)?;
    let h = h.unwrap_or(if spec.dim() == 1 { 2e-3 } else { 0.04 });
    let grid = Grid::cube(spec.dim(), half, h).map_err(value_err)?;
    let pair = solve_eigen(&spec, Arc::new(grid), &SolverParams::default())
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((spec, pair))
}

#[pyfunction]
fn builtin_names() -> Vec<&'static str> {
    BUILTIN_NAMES.to_vec()
}

/// Names of the failed assumption checks; empty when the problem is valid.
#[pyfunction]
fn validate(problem: &str) -> PyResult<Vec<String>> {
    let report = validate_spec(&spec(problem)?);
    Ok(report.failures().into_iter().map(|c| c.name.clone()).collect())
}

#[pyfunction]
#[pyo3(signature = (problem, half = 3.0, h = None))]
fn solve(py: Python<'_>, problem: &str, half: f64, h: Option<f64>) -> PyResult<Eigenpair> {
    let (_, pair) = py.allow_threads(|| solve_inner(problem, half, h))?;
    let grid = pair.u_star.grid();
    Ok(Eigenpair {
        lambda_star: pair.lambda_star,
        lo: grid.lo().to_vec(),
        hi: grid.hi().to_vec(),
        nodes: grid.nodes().to_vec(),
        values: pair.u_star.values().to_vec(),
        contact_radius: pair.contact_radius,
        residual: pair.residual.sup_filtered,
        warnings: pair.warnings.clone(),
    })
}

/// `(lambda_minus, lambda_star, lambda_plus)`.
#[pyfunction]
#[pyo3(signature = (problem, half = 3.0, h = None, tau = 1.01, width = None))]
fn certify(
    py: Python<'_>,
    problem: &str,
    half: f64,
    h: Option<f64>,
    tau: f64,
    width: Option<f64>,
) -> PyResult<(f64, f64, f64)> {
    py.allow_threads(|| {
        let (spec, pair) = solve_inner(problem, half, h)?;
        let width = width.unwrap_or(4.0 * pair.u_star.grid().h_max());
        let b = certify_pair(&spec, &pair, tau, width).map_err(value_err)?;
        Ok((b.lambda_minus, pair.lambda_star, b.lambda_plus))
    })
}

/// Reference eigenvalue from the radial or separable construction.
#[pyfunction]
fn oracle(problem: &str) -> PyResult<f64> {
    Ok(reference_for(&spec(problem)?).map_err(value_err)?.lambda())
}

#[pymodule]
#[pyo3(name = "gradeig")]
fn gradeig_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Eigenpair>()?;
    m.add_function(wrap_pyfunction!(builtin_names, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    Ok(())
}
