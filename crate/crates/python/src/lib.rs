//! Python bindings. Densities cross the boundary as plain lists of floats on
//! the model's grid.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sirvax::config::Scenario;
use sirvax::ivp::bathtub_allocate_with_ratio;
use sirvax::ovp::mollified_plan;
use sirvax::{AgeDensity, AgeGrid, Budget, EpidemicModel, Error, Kernel, SimConfig, StaticAllocation, VaccinationPlan};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::LengthMismatch { .. }
        | Error::GridMismatch
        | Error::InvalidInput(_)
        | Error::Assumption(_)
        | Error::NotSeparable { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Age-structured SIR model on a uniform grid over `[0, a_max]`.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: EpidemicModel,
}

impl PyModel {
    fn density(&self, values: Vec<f64>) -> PyResult<AgeDensity> {
        AgeDensity::new(self.inner.grid().clone(), values).map_err(py_err)
    }

    fn allocation(&self, v: Option<Vec<f64>>) -> PyResult<StaticAllocation> {
        match v {
            None => Ok(StaticAllocation::zero(&self.inner)),
            Some(v) => StaticAllocation::new(&self.inner, self.density(v)?).map_err(py_err),
        }
    }

    fn sim_config(&self, dt: Option<f64>, t_max: Option<f64>) -> SimConfig {
        let mut cfg = SimConfig::for_model(&self.inner);
        if let Some(dt) = dt {
            cfg.dt = dt;
        }
        if let Some(t) = t_max {
            cfg.t_max = t;
        }
        cfg
    }
}

#[pymethods]
impl PyModel {
    /// `beta` is the row-major `n × n` kernel matrix; the grid has `n` nodes.
    #[new]
    #[pyo3(signature = (beta, mu, s0, i0, a_max = 1.0))]
    fn new(beta: Vec<Vec<f64>>, mu: Vec<f64>, s0: Vec<f64>, i0: Vec<f64>, a_max: f64) -> PyResult<Self> {
        let grid = AgeGrid::uniform(a_max, s0.len()).map_err(py_err)?;
        if beta.len() != grid.n() || beta.iter().any(|r| r.len() != grid.n()) {
            return Err(PyValueError::new_err(format!("beta must be {n}x{n}", n = grid.n())));
        }
        let k = Kernel::new(grid.clone(), beta.concat()).map_err(py_err)?;
        let d = |v: Vec<f64>| AgeDensity::new(grid.clone(), v).map_err(py_err);
        let inner = EpidemicModel::new_relaxed(k, d(mu)?, d(s0)?, d(i0)?).map_err(py_err)?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn homogeneous(a_max: f64, n: usize, beta: f64, mu: f64, s0: f64, i0: f64) -> PyResult<Self> {
        Ok(PyModel { inner: EpidemicModel::homogeneous(a_max, n, beta, mu, s0, i0).map_err(py_err)? })
    }

    /// Builds the model described by a scenario file.
    #[staticmethod]
    fn from_toml(path: PathBuf) -> PyResult<Self> {
        let sc = Scenario::load(&path).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyModel { inner: sc.model().map_err(|e| PyValueError::new_err(e.to_string()))? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.grid().n()
    }

    #[getter]
    fn nodes(&self) -> Vec<f64> {
        self.inner.grid().nodes().to_vec()
    }

    #[getter]
    fn s0(&self) -> Vec<f64> {
        self.inner.s0().values().to_vec()
    }

    #[getter]
    fn is_separable(&self) -> bool {
        self.inner.is_separable()
    }

    fn integrate(&self, values: Vec<f64>) -> PyResult<f64> {
        Ok(self.density(values)?.integral())
    }

    fn __repr__(&self) -> String {
        format!("Model(n={}, a_max={})", self.inner.grid().n(), self.inner.grid().a_max())
    }
}

/// `{"lambda1", "rho", "classification"}` for the linearisation at the
/// disease-free state.
#[pyfunction]
fn classify_threshold<'py>(py: Python<'py>, model: &PyModel) -> PyResult<Bound<'py, PyDict>> {
    let t = sirvax::classify_threshold(&model.inner).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("lambda1", t.lambda1())?;
    d.set_item("rho", t.eigen.rho)?;
    d.set_item("classification", format!("{:?}", t.classification))?;
    Ok(d)
}

/// Principal eigenvalue and eigenfunction of `L = I − β S/μ` around `s`
/// (default `S0`).
#[pyfunction]
#[pyo3(signature = (model, s = None))]
fn principal_eigenvalue(model: &PyModel, s: Option<Vec<f64>>) -> PyResult<(f64, Vec<f64>)> {
    let s = match s {
        Some(s) => model.density(s)?,
        None => model.inner.s0().clone(),
    };
    let k = sirvax::spectral::stability_kernel(&model.inner, &s).map_err(py_err)?;
    let e = sirvax::principal_eigenvalue(&k).map_err(py_err)?;
    Ok((e.lambda1, e.phi1.values().to_vec()))
}

#[pyfunction]
#[pyo3(signature = (model, v = None))]
fn solve_final_size(model: &PyModel, v: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
    let v = model.allocation(v)?;
    Ok(sirvax::solve_final_size(&model.inner, &v).map_err(py_err)?.s_inf.values().to_vec())
}

/// `N*(v) = ∫S∞ + ∫v`.
#[pyfunction]
#[pyo3(signature = (model, v = None))]
fn objective_ivp(model: &PyModel, v: Option<Vec<f64>>) -> PyResult<f64> {
    let v = model.allocation(v)?;
    sirvax::objective_ivp(&model.inner, &v).map_err(py_err)
}

/// Bathtub allocation for budget `k`. Non-separable kernels are filled along
/// the age-averaged ratio when `surrogate` is true.
#[pyfunction]
#[pyo3(signature = (model, k, surrogate = false))]
fn bathtub<'py>(py: Python<'py>, model: &PyModel, k: f64, surrogate: bool) -> PyResult<Bound<'py, PyDict>> {
    let budget = Budget::new(k).map_err(py_err)?;
    let ratio = match model.inner.separable_ratio() {
        Ok(r) => r,
        Err(_) if surrogate => model.inner.column_mean_ratio(),
        Err(e) => return Err(py_err(e)),
    };
    let b = bathtub_allocate_with_ratio(&model.inner, &ratio, budget).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("allocation", b.allocation.values().to_vec())?;
    d.set_item("s_threshold", b.s_threshold)?;
    d.set_item("budget_used", b.budget_used)?;
    d.set_item("cut_node", b.cut_node)?;
    d.set_item("full_nodes", b.full_nodes())?;
    d.set_item("warnings", b.warnings.clone())?;
    Ok(d)
}

/// Simulates with no vaccination, or with the mollified plan
/// `(1/ε)φ(t/ε)v(x)` when both `v` and `epsilon` are given.
#[pyfunction]
#[pyo3(signature = (model, v = None, epsilon = None, dt = None, t_max = None))]
fn simulate<'py>(
    py: Python<'py>,
    model: &PyModel,
    v: Option<Vec<f64>>,
    epsilon: Option<f64>,
    dt: Option<f64>,
    t_max: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let plan = match (v, epsilon) {
        (Some(v), Some(eps)) => mollified_plan(&model.density(v)?, eps).map_err(py_err)?,
        (None, None) => VaccinationPlan::none(model.inner.grid().clone()),
        _ => return Err(PyValueError::new_err("give both v and epsilon, or neither")),
    };
    let mut cfg = model.sim_config(dt, t_max);
    if let Some(eps) = epsilon {
        cfg.window_dt = Some(eps / 50.0);
    }
    let traj = sirvax::simulate(&model.inner, &plan, &cfg).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("t_end", traj.t_end)?;
    d.set_item("converged", traj.converged)?;
    d.set_item("s_inf", traj.s_inf().values().to_vec())?;
    d.set_item("delivered", traj.delivered().values().to_vec())?;
    d.set_item("n", traj.s_inf().integral() + traj.delivered().integral())?;
    d.set_item("max_conservation_defect", traj.diagnostics.max_conservation_defect)?;
    d.set_item("clipped_mass", traj.diagnostics.clipped_mass)?;
    Ok(d)
}

/// `N(ν_ε)` along an `ε` ladder against `N*(v)`; one dict per `ε`.
#[pyfunction]
#[pyo3(signature = (model, v, epsilons, dt = None, t_max = None))]
fn maximizing_sequence<'py>(
    py: Python<'py>,
    model: &PyModel,
    v: Vec<f64>,
    epsilons: Vec<f64>,
    dt: Option<f64>,
    t_max: Option<f64>,
) -> PyResult<(f64, Vec<Bound<'py, PyDict>>)> {
    let v = model.allocation(Some(v))?;
    let cfg = model.sim_config(dt, t_max);
    let rep = py.detach(|| sirvax::maximizing_sequence(&model.inner, &v, &epsilons, &cfg)).map_err(py_err)?;
    let runs = rep
        .runs
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epsilon", r.epsilon)?;
            d.set_item("admissible", r.admissible)?;
            d.set_item("cap", r.cap)?;
            d.set_item("n", r.n)?;
            d.set_item("gap", r.gap)?;
            d.set_item("rescaled_deviation", r.rescaled_deviation)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((rep.n_star, runs))
}

#[pymodule]
fn sirvax_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(classify_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(principal_eigenvalue, m)?)?;
    m.add_function(wrap_pyfunction!(solve_final_size, m)?)?;
    m.add_function(wrap_pyfunction!(objective_ivp, m)?)?;
    m.add_function(wrap_pyfunction!(bathtub, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(maximizing_sequence, m)?)?;
    Ok(())
}
