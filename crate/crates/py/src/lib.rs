//! Python bindings: exact risk profiles and oracle weights, feasible
//! selection and averaging, limiting curves, simulation studies and the
//! inequality battery. Import as `nestavg`.

use nalgebra::{DMatrix, DVector};
use nestavg::asymptotics::{self, DecayKind, DecayModel, Kappa};
use nestavg::averagers::{fit_jma, fit_mma};
use nestavg::covariance::CovarianceSpec;
use nestavg::selectors::{self, Criterion};
use nestavg::simlab::{self, DgpConfig, DiagnosticsConfig};
use nestavg::{verify, NestedDesign, WeightSet};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: nestavg::Error) -> PyErr {
    use nestavg::Error as E;
    match e {
        E::Config(_)
        | E::Domain(_)
        | E::DimensionMismatch(_)
        | E::IndexOutOfRange { .. }
        | E::InvalidN(_)
        | E::KindMismatch
        | E::NegativeBeta(_)
        | E::ZeroVariance(_)
        | E::TooShort(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(format!("invalid JSON: {e}"))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("matrix rows must have equal length"));
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

fn parse_set(set: &str, grid: Option<usize>) -> PyResult<WeightSet> {
    match (set, grid) {
        ("simplex", None) => Ok(WeightSet::Simplex),
        ("box", None) => Ok(WeightSet::Box),
        ("grid", Some(n)) => Ok(WeightSet::Grid(n)),
        _ => Err(PyValueError::new_err(
            "weight set must be 'simplex', 'box', or 'grid' with a resolution",
        )),
    }
}

fn parse_kappa(kappa: Option<f64>) -> Kappa {
    kappa.map_or(Kappa::Infinite, Kappa::Finite)
}

/// Nested design: model m uses the first `nu[m-1]` columns of `x`.
#[pyclass(name = "NestedDesign", module = "nestavg")]
#[derive(Clone)]
struct PyDesign {
    inner: NestedDesign,
}

#[pymethods]
impl PyDesign {
    #[new]
    fn new(x: Vec<Vec<f64>>, nu: Vec<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: NestedDesign::build(matrix(x)?, nu).map_err(py_err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn groups(&self) -> usize {
        self.inner.groups()
    }

    /// P_k v.
    fn project(&self, k: usize, v: Vec<f64>) -> PyResult<Vec<f64>> {
        let p = self.inner.project(k, &DVector::from_vec(v)).map_err(py_err)?;
        Ok(p.iter().copied().collect())
    }
}

/// Covariance from a JSON spec such as `{"kind": "ar1", "rho": 0.5}`.
fn covariance(spec: &str) -> PyResult<CovarianceSpec> {
    serde_json::from_str(spec).map_err(json_err)
}

/// Exact selection and averaging risks of a nested family.
#[pyclass(name = "RiskProfile", module = "nestavg")]
#[derive(Clone)]
struct PyRiskProfile {
    inner: nestavg::RiskProfile,
}

#[pymethods]
impl PyRiskProfile {
    /// Profile from bias and variance increments over all groups.
    #[staticmethod]
    #[pyo3(signature = (n, bias_inc, var_inc, residual, m))]
    fn from_increments(n: usize, bias_inc: Vec<f64>, var_inc: Vec<f64>, residual: f64, m: usize) -> PyResult<Self> {
        Ok(Self {
            inner: nestavg::RiskProfile::from_increments(n, bias_inc, var_inc, residual, m).map_err(py_err)?,
        })
    }

    /// Profile of a design, mean vector and covariance (JSON spec).
    #[staticmethod]
    #[pyo3(signature = (design, mu, cov = "{\"kind\": \"scalar\", \"sigma2\": 1.0}", m = None))]
    fn from_design(design: &PyDesign, mu: Vec<f64>, cov: &str, m: Option<usize>) -> PyResult<Self> {
        let cov = covariance(cov)?;
        let m = m.unwrap_or(design.inner.groups());
        Ok(Self {
            inner: nestavg::RiskProfile::new(&design.inner, &cov, &DVector::from_vec(mu), m).map_err(py_err)?,
        })
    }

    #[getter]
    fn candidates(&self) -> usize {
        self.inner.candidates()
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.theta().to_vec()
    }

    #[getter]
    fn gamma_star(&self) -> Vec<f64> {
        self.inner.gamma_star()
    }

    fn is_monotone(&self) -> bool {
        self.inner.is_monotone()
    }

    /// (risks for m = 1..M, m*, m**).
    fn risk_ms(&self) -> (Vec<f64>, usize, usize) {
        let r = self.inner.risk_ms();
        (r.risks, r.m_star, r.m_star_star)
    }

    /// Averaging risk of a weight vector in the given set.
    #[pyo3(signature = (w, set = "simplex", grid = None))]
    fn risk_ma(&self, w: Vec<f64>, set: &str, grid: Option<usize>) -> PyResult<f64> {
        let w = nestavg::WeightVector::new(w, parse_set(set, grid)?).map_err(py_err)?;
        self.inner.risk_ma(&w).map_err(py_err)
    }

    /// (weights, risk) over the simplex.
    fn oracle_simplex(&self) -> PyResult<(Vec<f64>, f64)> {
        let r = self.inner.oracle_simplex().map_err(py_err)?;
        Ok((r.weights.as_slice().to_vec(), r.risk))
    }

    /// (weights, risk) over the unit box.
    fn oracle_box(&self) -> PyResult<(Vec<f64>, f64)> {
        let r = self.inner.oracle_box().map_err(py_err)?;
        Ok((r.weights.as_slice().to_vec(), r.risk))
    }

    /// (weights, risk) over multiples of 1/N.
    fn oracle_grid(&self, n: usize) -> PyResult<(Vec<f64>, f64)> {
        let r = self.inner.oracle_grid(n).map_err(py_err)?;
        Ok((r.weights.as_slice().to_vec(), r.risk))
    }

    /// (Δ, Δ / R(m*)).
    fn delta_gap(&self) -> PyResult<(f64, f64)> {
        let g = self.inner.delta_gap().map_err(py_err)?;
        Ok((g.delta, g.ratio))
    }
}

fn criterion(name: &str) -> PyResult<Criterion> {
    Criterion::ALL
        .into_iter()
        .find(|c| c.name() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown criterion '{name}'")))
}

/// Selected model index (1-based) and the criterion scores.
#[pyfunction]
#[pyo3(signature = (y, design, criterion_name, m = None))]
fn select(y: Vec<f64>, design: &PyDesign, criterion_name: &str, m: Option<usize>) -> PyResult<(usize, Vec<f64>)> {
    let m = m.unwrap_or(design.inner.groups());
    let s = selectors::select(&DVector::from_vec(y), &design.inner, m, criterion(criterion_name)?).map_err(py_err)?;
    Ok((s.index, s.scores))
}

/// Mallows averaging weights and the criterion value.
#[pyfunction]
#[pyo3(signature = (y, design, m = None))]
fn mma(y: Vec<f64>, design: &PyDesign, m: Option<usize>) -> PyResult<(Vec<f64>, f64)> {
    let m = m.unwrap_or(design.inner.groups());
    let fit = fit_mma(&DVector::from_vec(y), &design.inner, m).map_err(py_err)?;
    Ok((fit.weights.as_slice().to_vec(), fit.value))
}

/// Jackknife averaging weights over the simplex (`box=False`) or box.
#[pyfunction]
#[pyo3(signature = (y, design, m = None, r#box = false))]
fn jma(y: Vec<f64>, design: &PyDesign, m: Option<usize>, r#box: bool) -> PyResult<(Vec<f64>, f64)> {
    let m = m.unwrap_or(design.inner.groups());
    let set = if r#box { WeightSet::Box } else { WeightSet::Simplex };
    let fit = fit_jma(&DVector::from_vec(y), &design.inner, m, set).map_err(py_err)?;
    Ok((fit.weights.as_slice().to_vec(), fit.value))
}

/// B(x; a, b) without regularization.
#[pyfunction]
fn inc_beta(x: f64, a: f64, b: f64) -> PyResult<f64> {
    asymptotics::inc_beta(x, a, b).map_err(py_err)
}

/// ψ*_N for algebraic decay; `kappa=None` means κ = ∞.
#[pyfunction]
#[pyo3(signature = (n_grid, alpha, kappa = None))]
fn psi_star(n_grid: usize, alpha: f64, kappa: Option<f64>) -> PyResult<f64> {
    asymptotics::psi_star(n_grid, alpha, parse_kappa(kappa)).map_err(py_err)
}

/// lim_N ψ*_N.
#[pyfunction]
#[pyo3(signature = (alpha, kappa = None))]
fn psi_limit(alpha: f64, kappa: Option<f64>) -> PyResult<f64> {
    asymptotics::psi_limit(alpha, parse_kappa(kappa)).map_err(py_err)
}

/// Limiting risk ratio of simplex to grid averaging.
#[pyfunction]
#[pyo3(signature = (alpha, n_grid, kappa = None))]
fn limit_ratio(alpha: f64, n_grid: usize, kappa: Option<f64>) -> PyResult<f64> {
    asymptotics::limit_ratio(&DecayModel {
        kind: DecayKind::Algebraic { alpha },
        sigma2: 1.0,
        kappa: parse_kappa(kappa),
        n_grid,
    })
    .map_err(py_err)
}

/// Runs one simulation setting given as JSON; returns the result as JSON.
#[pyfunction]
fn run_study(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg: DgpConfig = serde_json::from_str(config_json).map_err(json_err)?;
    let res = py.detach(|| simlab::run_study(&cfg)).map_err(py_err)?;
    serde_json::to_string(&res).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Oracle diagnostics for a JSON configuration; returns rows as JSON.
#[pyfunction]
fn oracle_diagnostics(config_json: &str) -> PyResult<String> {
    let cfg: DiagnosticsConfig = serde_json::from_str(config_json).map_err(json_err)?;
    let rows = simlab::oracle_diagnostics(&cfg).map_err(py_err)?;
    serde_json::to_string(&rows).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Inequality battery: list of (name, checked, violations, worst).
#[pyfunction]
#[pyo3(signature = (seed = 7, instances = 200))]
fn verify_battery(seed: u64, instances: usize) -> PyResult<Vec<(String, usize, usize, f64)>> {
    let r = verify::run_battery(seed, instances).map_err(py_err)?;
    Ok(r.checks
        .into_iter()
        .map(|c| (c.name.to_string(), c.checked, c.violations, c.worst))
        .collect())
}

#[pymodule]
#[pyo3(name = "nestavg")]
pub fn nestavg_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDesign>()?;
    m.add_class::<PyRiskProfile>()?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(mma, m)?)?;
    m.add_function(wrap_pyfunction!(jma, m)?)?;
    m.add_function(wrap_pyfunction!(inc_beta, m)?)?;
    m.add_function(wrap_pyfunction!(psi_star, m)?)?;
    m.add_function(wrap_pyfunction!(psi_limit, m)?)?;
    m.add_function(wrap_pyfunction!(limit_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_diagnostics, m)?)?;
    m.add_function(wrap_pyfunction!(verify_battery, m)?)?;
    Ok(())
}
