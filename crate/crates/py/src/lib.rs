//! Python bindings: the discrete operator, coefficients, exterior data, forward solves,
//! DN matrices, amplitude scans and the experiment runner.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use nlwave::coeffs::{Coefficients as CoreCoefficients, Nonlinearity};
use nlwave::dnmap;
use nlwave::experiments::{self, ExperimentConfig, ExperimentKind};
use nlwave::forward::{
    self, ExteriorData as CoreExterior, ExteriorElement, SemilinearMode, SpatialBump, TimeGrid, TimeProfile, TimeQuadrature,
    Trajectory as CoreTrajectory,
};
use nlwave::invert;
use nlwave::operator::{FractionalOperator, SpatialGrid};

fn err(e: nlwave::Error) -> PyErr {
    match e.root() {
        nlwave::Error::Config(_) | nlwave::Error::Domain(_) | nlwave::Error::Shape { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn time_grid(t_final: f64, steps: usize) -> PyResult<TimeGrid> {
    TimeGrid::new(t_final, steps).map_err(err)
}

fn rule(name: &str) -> PyResult<TimeQuadrature> {
    match name {
        "step_average" => Ok(TimeQuadrature::StepAverage),
        "trapezoid" => Ok(TimeQuadrature::Trapezoid),
        other => Err(PyValueError::new_err(format!("unknown quadrature '{other}' (step_average, trapezoid)"))),
    }
}

/// Discrete restricted fractional Laplacian on the default 1D grid over [-2, 2].
#[pyclass(frozen)]
struct Operator {
    inner: FractionalOperator,
}

#[pymethods]
impl Operator {
    #[new]
    #[pyo3(signature = (n = 64, s = 0.5))]
    fn new(n: usize, s: f64) -> PyResult<Self> {
        let grid = SpatialGrid::default_1d(n).map_err(err)?;
        Ok(Self {
            inner: FractionalOperator::build(grid, s).map_err(err)?,
        })
    }

    #[getter]
    fn s(&self) -> f64 {
        self.inner.s()
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.grid().n_nodes()
    }

    /// Node coordinates.
    #[getter]
    fn x(&self) -> Vec<f64> {
        let g = self.inner.grid();
        (0..g.n_nodes()).map(|k| g.coord(k)[0]).collect()
    }

    /// Indices of the nodes inside (-1, 1).
    #[getter]
    fn omega(&self) -> Vec<usize> {
        self.inner.grid().omega_nodes().to_vec()
    }

    fn apply(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.apply(&DVector::from_vec(u)).map_err(err)?.iter().copied().collect())
    }

    /// Eigenvalues of the interior block, ascending.
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.interior_spectrum().values.iter().copied().collect()
    }

    fn meta(&self) -> PyResult<String> {
        serde_json::to_string(self.inner.meta()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("Operator(n={}, s={})", self.n_nodes(), self.s())
    }
}

/// Damping γ and potential q sampled on every node.
#[pyclass(frozen)]
struct Coefficients {
    inner: CoreCoefficients,
}

#[pymethods]
impl Coefficients {
    #[new]
    fn new(op: &Operator, gamma: Vec<f64>, q: Vec<f64>) -> PyResult<Self> {
        let g = op.inner.grid();
        let inner = CoreCoefficients::bounded(g, op.inner.s(), DVector::from_vec(gamma), DVector::from_vec(q)).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn constant(op: &Operator, gamma: f64, q: f64) -> PyResult<Self> {
        let n = op.inner.grid().n_nodes();
        Self::new(op, vec![gamma; n], vec![q; n])
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }
}

/// Sum of bumps supported in the exterior windows W1 = (-1.8, -1.2) and W2 = (1.2, 1.8).
#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
struct Exterior {
    inner: CoreExterior,
}

#[pymethods]
impl Exterior {
    /// One smooth bump `amplitude · b(x) · θ(t)` with θ a bump on [start, end].
    #[new]
    #[pyo3(signature = (window, center, radius, start, end, amplitude = 1.0))]
    fn new(window: &str, center: f64, radius: f64, start: f64, end: f64, amplitude: f64) -> PyResult<Self> {
        let e = ExteriorElement::new(window, SpatialBump::new(vec![center], vec![radius]), TimeProfile::bump(start, end));
        Ok(Self {
            inner: CoreExterior::new(vec![e], vec![amplitude]).map_err(err)?,
        })
    }

    #[staticmethod]
    fn zero() -> Self {
        Self { inner: CoreExterior::zero() }
    }

    fn __add__(&self, other: &Exterior) -> PyResult<Self> {
        let mut elements = self.inner.elements.clone();
        let mut coefficients = self.inner.coefficients.clone();
        elements.extend(other.inner.elements.iter().cloned());
        coefficients.extend(other.inner.coefficients.iter().copied());
        Ok(Self {
            inner: CoreExterior::new(elements, coefficients).map_err(err)?,
        })
    }

    fn scaled(&self, factor: f64) -> Self {
        Self { inner: self.inner.scaled(factor) }
    }
}

/// Nodal values `u` and `u'` at every time level.
#[pyclass(frozen)]
struct Trajectory {
    inner: CoreTrajectory,
    times: Vec<f64>,
}

#[pymethods]
impl Trajectory {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.times.clone()
    }

    /// `u[node][time]`.
    #[getter]
    fn u(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.u)
    }

    #[getter]
    fn v(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.v)
    }

    fn at(&self, n: usize) -> PyResult<Vec<f64>> {
        if n >= self.inner.u.ncols() {
            return Err(PyValueError::new_err(format!("time index {n} out of range")));
        }
        Ok(self.inner.u.column(n).iter().copied().collect())
    }

    fn max_abs_u(&self) -> f64 {
        self.inner.max_abs_u()
    }

    fn energy(&self, op: &Operator) -> Vec<f64> {
        forward::energy_series(&op.inner, &self.inner)
    }
}

/// Zero initial data and source; the exterior data drive the solution.
#[pyfunction]
#[pyo3(signature = (op, coeffs, exterior, t_final = 4.0, steps = 100))]
fn solve(op: &Operator, coeffs: &Coefficients, exterior: &Exterior, t_final: f64, steps: usize) -> PyResult<Trajectory> {
    let tg = time_grid(t_final, steps)?;
    let inner = forward::solve_exterior(&op.inner, &coeffs.inner, &exterior.inner, &tg).map_err(err)?;
    Ok(Trajectory { inner, times: tg.times() })
}

/// Homogeneous problem from interior initial data `u0`, `u1` (one value per node of Ω).
#[pyfunction]
#[pyo3(signature = (op, coeffs, u0, u1, t_final = 4.0, steps = 100))]
fn solve_initial(op: &Operator, coeffs: &Coefficients, u0: Vec<f64>, u1: Vec<f64>, t_final: f64, steps: usize) -> PyResult<Trajectory> {
    let tg = time_grid(t_final, steps)?;
    let g = op.inner.grid();
    if u0.len() != g.n_omega() || u1.len() != g.n_omega() {
        return Err(PyValueError::new_err(format!("initial data need {} interior values", g.n_omega())));
    }
    let full = |x: &[f64]| DVector::from_vec(g.extend_omega(x));
    let f = forward::zero_source(&op.inner, &tg);
    let inner = forward::solve_homogeneous(&op.inner, &coeffs.inner, &f, &full(&u0), &full(&u1), &tg).map_err(err)?;
    Ok(Trajectory { inner, times: tg.times() })
}

/// `[⟨Λφ_i, ψ_j⋆⟩]` with rows indexed by tests and columns by sources.
#[pyfunction]
#[pyo3(signature = (op, coeffs, sources, tests, t_final = 4.0, steps = 100, quadrature = "step_average"))]
fn dn_matrix(
    op: &Operator,
    coeffs: &Coefficients,
    sources: Vec<Exterior>,
    tests: Vec<Exterior>,
    t_final: f64,
    steps: usize,
    quadrature: &str,
) -> PyResult<Vec<Vec<f64>>> {
    let tg = time_grid(t_final, steps)?;
    let s: Vec<CoreExterior> = sources.into_iter().map(|e| e.inner).collect();
    let t: Vec<CoreExterior> = tests.into_iter().map(|e| e.inner).collect();
    let m = dnmap::dn_matrix(&op.inner, &coeffs.inner, &s, &t, &tg, rule(quadrature)?).map_err(err)?;
    Ok(rows(&m.entries))
}

/// Relative defect `max|M₁₂ - M₂₁ᵀ| / scale` between two bases.
#[pyfunction]
#[pyo3(signature = (op, coeffs, basis1, basis2, t_final = 4.0, steps = 100, quadrature = "step_average"))]
fn self_adjointness_defect(
    op: &Operator,
    coeffs: &Coefficients,
    basis1: Vec<Exterior>,
    basis2: Vec<Exterior>,
    t_final: f64,
    steps: usize,
    quadrature: &str,
) -> PyResult<f64> {
    let tg = time_grid(t_final, steps)?;
    let b1: Vec<CoreExterior> = basis1.into_iter().map(|e| e.inner).collect();
    let b2: Vec<CoreExterior> = basis2.into_iter().map(|e| e.inner).collect();
    let rep = dnmap::check_self_adjointness(&op.inner, &coeffs.inner, &b1, &b2, &tg, rule(quadrature)?, true).map_err(err)?;
    Ok(rep.relative())
}

/// Remainder norms of `u_ε - ε v` for the semilinear problem with `q_f |u|^r u`.
#[pyfunction]
#[pyo3(signature = (op, coeffs, q_f, r, exterior, epsilons, t_final = 4.0, steps = 100))]
#[allow(clippy::too_many_arguments)]
fn amplitude_scan<'py>(
    py: Python<'py>,
    op: &Operator,
    coeffs: &Coefficients,
    q_f: Vec<f64>,
    r: f64,
    exterior: &Exterior,
    epsilons: Vec<f64>,
    t_final: f64,
    steps: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let tg = time_grid(t_final, steps)?;
    let g = op.inner.grid();
    let f = Nonlinearity::new(DVector::from_vec(q_f), r, g.dim(), op.inner.s()).map_err(err)?;
    let scan = invert::amplitude_scan(&op.inner, &coeffs.inner, &f, &exterior.inner, &epsilons, &tg, SemilinearMode::Picard(Default::default()))
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("amplitudes", scan.amplitudes)?;
    d.set_item("norms", scan.norms)?;
    d.set_item("slope", scan.slope)?;
    d.set_item("intercept", scan.intercept)?;
    d.set_item("dropped", scan.dropped)?;
    d.set_item("max_gap_ratio", scan.max_gap_ratio)?;
    Ok(d)
}

fn to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(xs) => {
            let list = PyList::empty(py);
            for x in xs {
                list.append(to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let d = PyDict::new(py);
            for (k, x) in map {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

/// Run one experiment kind and return its manifest as a dict.
#[pyfunction]
#[pyo3(signature = (kind, out, config = None, seed = None, check = false))]
fn run_experiment<'py>(
    py: Python<'py>,
    kind: &str,
    out: PathBuf,
    config: Option<PathBuf>,
    seed: Option<u64>,
    check: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let kind: ExperimentKind = kind.parse().map_err(err)?;
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(&p).map_err(err)?,
        None => ExperimentConfig::defaults(kind),
    };
    if cfg.kind != kind {
        return Err(PyValueError::new_err(format!("config is for '{}', not '{kind}'", cfg.kind)));
    }
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    let res = py.detach(|| experiments::run_experiment(&cfg, &out, check)).map_err(err)?;
    let value = serde_json::to_value(&res.manifest).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &value)
}

/// Write `plot_<series>.csv` next to the manifest and return its path.
#[pyfunction]
fn emit_plot_data(manifest: PathBuf, series: &str) -> PyResult<PathBuf> {
    experiments::emit_plot_data(&manifest, series).map_err(err)
}

#[pymodule]
pub fn nlwave_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Operator>()?;
    m.add_class::<Coefficients>()?;
    m.add_class::<Exterior>()?;
    m.add_class::<Trajectory>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(solve_initial, m)?)?;
    m.add_function(wrap_pyfunction!(dn_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(self_adjointness_defect, m)?)?;
    m.add_function(wrap_pyfunction!(amplitude_scan, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(emit_plot_data, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
