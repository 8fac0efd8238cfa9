//! Python bindings for `nccrb`.

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use nccrb::closed_form::{self as cf, TwoSourceParams};
use nccrb::config::parse_config_str;
use nccrb::crb::{det_crb, det_nc_crb, fim_assemble, fim_mu_block_inverse, BoundResult};
use nccrb::geometry::{self, Reference};
use nccrb::linalg::RMatrix;
use nccrb::resolvability::{self, PhaseDraw};
use nccrb::signal::{self, SourceScenario};
use nccrb::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::ConfigParse { .. } | Error::ConfigSemantic { .. } | Error::Io { .. } | Error::InvalidInput(_) | Error::Dimension { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => PyArithmeticError::new_err(other.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> PyResult<RMatrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err(format!("{what} must be a non-empty rectangular list of rows")));
    }
    Ok(RMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

type Rows = Vec<Vec<f64>>;

fn rows(m: &RMatrix) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn reference(name: &str) -> PyResult<Reference> {
    match name {
        "centroid" => Ok(Reference::Centroid),
        "first" => Ok(Reference::First),
        other => Err(PyValueError::new_err(format!("unknown phase reference `{other}`"))),
    }
}

/// Separable sampling grid, one coordinate list per mode.
#[pyclass(name = "SamplingGrid", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGrid(geometry::SamplingGrid);

#[pymethods]
impl PyGrid {
    #[new]
    fn new(modes: Vec<Vec<f64>>) -> PyResult<Self> {
        geometry::SamplingGrid::new(modes).map(Self).map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (m, reference = "centroid"))]
    fn ula(m: usize, reference: &str) -> PyResult<Self> {
        geometry::SamplingGrid::ula(m, self::reference(reference)?).map(Self).map_err(py_err)
    }

    #[getter]
    fn modes(&self) -> Vec<Vec<f64>> {
        self.0.modes().to_vec()
    }

    #[getter]
    fn size(&self) -> usize {
        self.0.size()
    }

    fn is_centro_symmetric(&self) -> bool {
        geometry::is_centro_symmetric(&self.0, geometry::CENTRO_TOL)
    }

    fn __repr__(&self) -> String {
        format!("SamplingGrid(sizes={:?})", self.0.mode_sizes())
    }
}

/// A bound evaluation: trace, per-source RMSE and the `Rd × Rd` matrix
/// (`None` when singular).
#[pyclass(name = "BoundResult", frozen)]
struct PyBound(BoundResult);

#[pymethods]
impl PyBound {
    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind.label()
    }

    #[getter]
    fn trace(&self) -> f64 {
        self.0.trace
    }

    #[getter]
    fn rmse(&self) -> f64 {
        self.0.rmse()
    }

    #[getter]
    fn singular(&self) -> bool {
        self.0.is_singular()
    }

    #[getter]
    fn condition(&self) -> f64 {
        self.0.diagnostics.condition
    }

    #[getter]
    fn matrix(&self) -> Option<Vec<Vec<f64>>> {
        self.0.matrix.as_ref().map(rows)
    }

    fn __repr__(&self) -> String {
        format!("BoundResult(kind={:?}, trace={:e})", self.0.kind.label(), self.0.trace)
    }
}

fn steering(grid: &PyGrid, mu: &[Vec<f64>]) -> PyResult<geometry::SteeringSet> {
    geometry::build_steering_set(&grid.0, &matrix(mu, "mu")?).map_err(py_err)
}

/// Arbitrary-signal deterministic CRB for sources at `mu` (`R × d`) with
/// rotation phases `phi` and real symbol covariance `rhat` (`d × d`).
#[pyfunction]
fn crb(grid: &PyGrid, mu: Vec<Vec<f64>>, phi: Vec<f64>, rhat: Vec<Vec<f64>>, sigma2: f64, snapshots: usize) -> PyResult<PyBound> {
    let st = steering(grid, &mu)?;
    let rs = signal::signal_covariance(&matrix(&rhat, "rhat")?, &phi).map_err(py_err)?;
    det_crb(&st, &rs, sigma2, snapshots).map(PyBound).map_err(py_err)
}

/// Deterministic CRB for strictly non-circular sources.
#[pyfunction]
fn nc_crb(grid: &PyGrid, mu: Vec<Vec<f64>>, phi: Vec<f64>, rhat: Vec<Vec<f64>>, sigma2: f64, snapshots: usize) -> PyResult<PyBound> {
    let st = steering(grid, &mu)?;
    det_nc_crb(&st, &phi, &matrix(&rhat, "rhat")?, sigma2, snapshots)
        .map(PyBound)
        .map_err(py_err)
}

/// μ-block of the inverse FIM built from the real symbols `s0` (`d × N`).
#[pyfunction]
fn fim_oracle(grid: &PyGrid, mu: Vec<Vec<f64>>, phi: Vec<f64>, s0: Vec<Vec<f64>>, sigma2: f64) -> PyResult<PyBound> {
    let st = steering(grid, &mu)?;
    let blocks = fim_assemble(&st, &phi, &matrix(&s0, "s0")?, sigma2).map_err(py_err)?;
    fim_mu_block_inverse(&blocks).map(PyBound).map_err(py_err)
}

/// Real symbols `d × N` whose sample covariance equals the target built
/// from `powers` and a common correlation `rho`. Returns `(s0, rhat)`.
#[pyfunction]
#[pyo3(signature = (powers, rho, snapshots, seed, exact = true))]
fn symbols(powers: Vec<f64>, rho: f64, snapshots: usize, seed: u64, exact: bool) -> PyResult<(Rows, Rows)> {
    let d = powers.len();
    let sc = SourceScenario::new(
        RMatrix::zeros(1, d),
        vec![0.0; d],
        powers,
        signal::uniform_correlation(d, rho),
        snapshots,
        1.0,
    )
    .map_err(py_err)?;
    let block = if exact {
        signal::exact_moment_symbols(&sc, seed, signal::SYMBOL_STREAM)
    } else {
        signal::generate_symbols(&sc, seed)
    }
    .map_err(py_err)?;
    Ok((rows(&block.s0), rows(&block.rhat)))
}

/// Per-mode single-source NC CRB on a centered grid.
#[pyfunction]
fn single_source_nc_crb(grid: &PyGrid, snr: f64) -> PyResult<Vec<f64>> {
    cf::single_source_nc_crb(&grid.0, snr).map_err(py_err)
}

fn two(m: usize, delta_mu: f64, delta_phi: f64, rho: f64, snr1: f64, snr2: f64) -> PyResult<TwoSourceParams> {
    TwoSourceParams::new(m, delta_mu, delta_phi, rho, snr1, snr2).map_err(py_err)
}

/// Closed-form two-source NC CRB trace.
#[pyfunction]
#[pyo3(signature = (m, delta_mu, delta_phi, rho, snr1, snr2 = None))]
fn two_source_nc_crb(m: usize, delta_mu: f64, delta_phi: f64, rho: f64, snr1: f64, snr2: Option<f64>) -> PyResult<f64> {
    Ok(cf::two_source_nc_crb(&two(m, delta_mu, delta_phi, rho, snr1, snr2.unwrap_or(snr1))?))
}

/// Closed-form two-source CRB trace.
#[pyfunction]
#[pyo3(signature = (m, delta_mu, delta_phi, rho, snr1, snr2 = None))]
fn two_source_crb(m: usize, delta_mu: f64, delta_phi: f64, rho: f64, snr1: f64, snr2: Option<f64>) -> PyResult<f64> {
    Ok(cf::two_source_crb(&two(m, delta_mu, delta_phi, rho, snr1, snr2.unwrap_or(snr1))?))
}

#[pyfunction]
#[pyo3(signature = (m, delta_phi, rho, snr1, snr2 = None))]
fn nc_crb_limit(m: usize, delta_phi: f64, rho: f64, snr1: f64, snr2: Option<f64>) -> PyResult<f64> {
    Ok(cf::nc_crb_limit_zero_sep(&two(m, 0.0, delta_phi, rho, snr1, snr2.unwrap_or(snr1))?))
}

#[pyfunction]
fn nc_gain(m: usize, delta_mu: f64, delta_phi: f64, rho: f64) -> PyResult<f64> {
    Ok(cf::nc_gain(&two(m, delta_mu, delta_phi, rho, 1.0, 1.0)?))
}

/// Resolvability scan; rows of `(d, crb_rmse, nc_crb_rmse)`.
#[pyfunction]
#[pyo3(signature = (m, snapshots, snr_db, d_max, seed = 0, equal_phase = None))]
fn scan_table(m: usize, snapshots: usize, snr_db: f64, d_max: usize, seed: u64, equal_phase: Option<f64>) -> PyResult<Vec<(usize, f64, f64)>> {
    let phases = equal_phase.map_or(PhaseDraw::Random, PhaseDraw::Equal);
    let rep = resolvability::scan_table(m, snapshots, snr_db, d_max, seed, phases).map_err(py_err)?;
    Ok(rep.rows.iter().map(|r| (r.d, r.crb_rmse, r.nc_crb_rmse)).collect())
}

/// Run a TOML experiment; returns `(columns, rows)` with the status as the
/// last cell of each row.
#[pyfunction]
#[pyo3(signature = (config, seed = None, threads = None))]
fn run_sweep(py: Python<'_>, config: &str, seed: Option<u64>, threads: Option<usize>) -> PyResult<(Vec<String>, Vec<Py<PyAny>>)> {
    let mut spec = parse_config_str(config).map_err(py_err)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let res = py.detach(|| nccrb::sweep::run_sweep(&spec, threads)).map_err(py_err)?;
    let out = res
        .rows
        .iter()
        .map(|r| {
            let mut cells: Vec<Py<PyAny>> = Vec::new();
            if let Some(v) = r.axis_value {
                cells.push(v.into_pyobject(py)?.into_any().unbind());
            }
            for v in &r.values {
                cells.push(v.into_pyobject(py)?.into_any().unbind());
            }
            cells.push(r.status.clone().into_pyobject(py)?.into_any().unbind());
            Ok(pyo3::types::PyTuple::new(py, cells)?.into_any().unbind())
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((res.columns, out))
}

/// Seeded consistency checks; `(name, worst, tolerance, passed)` per check.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn selftest(py: Python<'_>, seed: u64) -> Vec<(&'static str, f64, f64, bool)> {
    py.detach(|| nccrb::selftest::run_selftest(seed))
        .into_iter()
        .map(|c| (c.name, c.worst, c.tolerance, c.passed))
        .collect()
}

#[pymodule]
fn pynccrb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyBound>()?;
    m.add_function(wrap_pyfunction!(crb, m)?)?;
    m.add_function(wrap_pyfunction!(nc_crb, m)?)?;
    m.add_function(wrap_pyfunction!(fim_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(symbols, m)?)?;
    m.add_function(wrap_pyfunction!(single_source_nc_crb, m)?)?;
    m.add_function(wrap_pyfunction!(two_source_nc_crb, m)?)?;
    m.add_function(wrap_pyfunction!(two_source_crb, m)?)?;
    m.add_function(wrap_pyfunction!(nc_crb_limit, m)?)?;
    m.add_function(wrap_pyfunction!(nc_gain, m)?)?;
    m.add_function(wrap_pyfunction!(scan_table, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}
