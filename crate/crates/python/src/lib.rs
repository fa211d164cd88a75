//! Python bindings. Results that are records on the Rust side (traces,
//! reports, manifests) come back as plain dicts and lists.

use std::path::PathBuf;

use crossed_gibbs as cg;
use crossed_gibbs::experiment::{Command, Overrides};
use crossed_gibbs::samplers::Init;
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

create_exception!(crossed_gibbs, CrossedGibbsError, PyException);

fn to_py_err(e: cg::Error) -> PyErr {
    match e {
        cg::Error::InvalidInput(_) | cg::Error::Config(_) | cg::Error::Parse { .. } => {
            PyValueError::new_err(e.to_string())
        }
        cg::Error::Io(_) => PyOSError::new_err(e.to_string()),
        other => CrossedGibbsError::new_err(other.to_string()),
    }
}

trait IntoPyResult<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPyResult<T> for cg::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py_err)
    }
}

fn json_to_py(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    Ok(match v {
        Value::Null => py.None(),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any().unbind(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any().unbind(),
            (None, Some(u)) => u.into_pyobject(py)?.into_any().unbind(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any().unbind(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any().unbind(),
        Value::Array(a) => {
            let items = a.iter().map(|x| json_to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any().unbind()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any().unbind()
        }
    })
}

fn serialize<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| CrossedGibbsError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

#[pyclass(name = "VarianceComponents", frozen, module = "crossed_gibbs")]
struct PyVarianceComponents {
    inner: cg::VarianceComponents,
}

#[pymethods]
impl PyVarianceComponents {
    #[new]
    fn new(sigma1_sq: f64, sigma2_sq: f64, sigma_e_sq: f64) -> PyResult<Self> {
        Ok(Self {
            inner: cg::VarianceComponents::new(sigma1_sq, sigma2_sq, sigma_e_sq).py()?,
        })
    }

    #[staticmethod]
    fn from_precisions(tau1: f64, tau2: f64, tau_e: f64) -> PyResult<Self> {
        Ok(Self {
            inner: cg::VarianceComponents::from_precisions(tau1, tau2, tau_e).py()?,
        })
    }

    #[getter]
    fn sigma1_sq(&self) -> f64 {
        self.inner.sigma1_sq
    }

    #[getter]
    fn sigma2_sq(&self) -> f64 {
        self.inner.sigma2_sq
    }

    #[getter]
    fn sigma_e_sq(&self) -> f64 {
        self.inner.sigma_e_sq
    }

    #[getter]
    fn lambda_a(&self) -> f64 {
        self.inner.lambda_a()
    }

    #[getter]
    fn lambda_b(&self) -> f64 {
        self.inner.lambda_b()
    }

    fn __repr__(&self) -> String {
        format!(
            "VarianceComponents(sigma1_sq={}, sigma2_sq={}, sigma_e_sq={})",
            self.inner.sigma1_sq, self.inner.sigma2_sq, self.inner.sigma_e_sq
        )
    }
}

#[pyclass(name = "RegimeSpec", frozen, module = "crossed_gibbs")]
struct PyRegimeSpec {
    inner: cg::RegimeSpec,
}

#[pymethods]
impl PyRegimeSpec {
    /// `kind` is "mcar", "bounded_inhom" (needs `upsilon`) or
    /// "almost_balanced" (needs `upsilon` and `eps_target`).
    #[new]
    #[pyo3(signature = (s, rho, kappa, kind = "mcar", upsilon = None, eps_target = None, seed = 0))]
    fn new(
        s: f64,
        rho: f64,
        kappa: f64,
        kind: &str,
        upsilon: Option<f64>,
        eps_target: Option<f64>,
        seed: u64,
    ) -> PyResult<Self> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| PyValueError::new_err(format!("regime {kind:?} needs {name}")))
        };
        let regime = match kind {
            "mcar" => cg::Regime::Mcar,
            "bounded_inhom" => cg::Regime::BoundedInhom {
                upsilon: need(upsilon, "upsilon")?,
            },
            "almost_balanced" => cg::Regime::AlmostBalanced {
                upsilon: need(upsilon, "upsilon")?,
                eps_target: need(eps_target, "eps_target")?,
            },
            other => return Err(PyValueError::new_err(format!("unknown regime kind {other:?}"))),
        };
        Ok(Self {
            inner: cg::RegimeSpec::new(s, rho, kappa, regime, seed).py()?,
        })
    }

    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows()
    }

    #[getter]
    fn cols(&self) -> usize {
        self.inner.cols()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.regime.name()
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        serialize(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "RegimeSpec(s={}, rho={}, kappa={}, kind={:?}, seed={})",
            self.inner.s,
            self.inner.rho,
            self.inner.kappa,
            self.inner.regime.name(),
            self.inner.seed
        )
    }
}

#[pyclass(name = "ObservationSet", frozen, module = "crossed_gibbs")]
struct PyObservationSet {
    inner: cg::ObservationSet,
}

#[pymethods]
impl PyObservationSet {
    /// `cells` is a sequence of (i, j, y) with 0-based levels.
    #[new]
    fn new(rows: usize, cols: usize, cells: Vec<(usize, usize, f64)>) -> PyResult<Self> {
        Ok(Self {
            inner: cg::ObservationSet::new(rows, cols, &cells).py()?,
        })
    }

    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows()
    }

    #[getter]
    fn cols(&self) -> usize {
        self.inner.cols()
    }

    #[getter]
    fn total(&self) -> usize {
        self.inner.total()
    }

    #[getter]
    fn row_counts(&self) -> Vec<u64> {
        self.inner.row_counts().to_vec()
    }

    #[getter]
    fn col_counts(&self) -> Vec<u64> {
        self.inner.col_counts().to_vec()
    }

    fn cells(&self) -> Vec<(usize, usize, f64)> {
        self.inner.cells().collect()
    }

    /// Per-level response means (ỹ⁽¹⁾, ỹ⁽²⁾); 0 for empty levels.
    fn level_means(&self) -> (Vec<f64>, Vec<f64>) {
        cg::model::level_means(&self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.total()
    }

    fn __repr__(&self) -> String {
        format!(
            "ObservationSet(rows={}, cols={}, total={})",
            self.inner.rows(),
            self.inner.cols(),
            self.inner.total()
        )
    }
}

/// Simulate a data set under `spec`; returns (observations, truth dict).
#[pyfunction]
#[pyo3(signature = (spec, a0 = 2.0, sigma1 = 1.0, sigma2 = 1.0, sigma_e = 1.0))]
fn simulate(
    py: Python<'_>,
    spec: &PyRegimeSpec,
    a0: f64,
    sigma1: f64,
    sigma2: f64,
    sigma_e: f64,
) -> PyResult<(PyObservationSet, Py<PyAny>)> {
    let scales = cg::missingness::EffectScales::new(sigma1, sigma2, sigma_e).py()?;
    let spec = spec.inner;
    let data = py.detach(|| cg::missingness::simulate(&spec, scales, a0)).py()?;
    let truth = serialize(py, &data.truth)?;
    Ok((PyObservationSet { inner: data.obs }, truth))
}

fn parse_kind(kind: &str) -> PyResult<cg::SamplerKind> {
    match kind {
        "collapsed" => Ok(cg::SamplerKind::Collapsed),
        "vanilla" => Ok(cg::SamplerKind::Vanilla),
        other => Err(PyValueError::new_err(format!("unknown sampler {other:?}"))),
    }
}

/// Run one chain; returns a dict of post-burn-in columns keyed by
/// iter, a0, mu1, mu2, tau1, tau2, tauE.
#[pyfunction]
#[pyo3(signature = (obs, vc, kind = "collapsed", iterations = 10_000, burn_in = 1_000, fix_precisions = false, seed = 0, init = "zeros"))]
#[allow(clippy::too_many_arguments)]
fn run_chain(
    py: Python<'_>,
    obs: &PyObservationSet,
    vc: &PyVarianceComponents,
    kind: &str,
    iterations: usize,
    burn_in: usize,
    fix_precisions: bool,
    seed: u64,
    init: &str,
) -> PyResult<Py<PyAny>> {
    let init = match init {
        "zeros" => Init::Zeros,
        "prior_draw" => Init::PriorDraw,
        other => return Err(PyValueError::new_err(format!("unknown init {other:?}"))),
    };
    let cfg = cg::SamplerConfig {
        kind: parse_kind(kind)?,
        iterations,
        burn_in,
        fix_precisions,
        seed,
        init,
    };
    let vc = vc.inner;
    let trace = py.detach(|| cg::samplers::run_chain(&obs.inner, &vc, &cfg)).py()?;
    let d = PyDict::new(py);
    d.set_item("iter", trace.records.iter().map(|r| r.iter).collect::<Vec<_>>())?;
    for name in cg::samplers::TRACE_PARAMETERS {
        d.set_item(name, trace.series(name).expect("known parameter"))?;
    }
    Ok(d.into_any().unbind())
}

/// M, its norm, spectral radius and relaxation time for the observed
/// pattern. Matrices come back as lists of rows.
#[pyfunction]
#[pyo3(signature = (obs, vc, with_factors = false))]
fn autoregression(
    py: Python<'_>,
    obs: &PyObservationSet,
    vc: &PyVarianceComponents,
    with_factors: bool,
) -> PyResult<Py<PyAny>> {
    let vc = vc.inner;
    let z = obs.inner.pattern();
    let b = py.detach(|| cg::autoregression::analyze(z, &vc, with_factors)).py()?;
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    };
    let d = PyDict::new(py);
    d.set_item("m", rows(&b.m))?;
    d.set_item("m0", rows(&b.m0))?;
    if let Some((b1, b2)) = &b.factors {
        d.set_item("b1", rows(b1))?;
        d.set_item("b2", rows(b2))?;
    }
    d.set_item("spec_norm", b.spec_norm)?;
    d.set_item("spec_radius", b.spec_radius.value)?;
    d.set_item("spec_radius_exact", b.spec_radius.exact)?;
    d.set_item("t_rel", b.t_rel)?;
    Ok(d.into_any().unbind())
}

#[pyfunction]
fn relaxation_time(spec_radius: f64) -> PyResult<f64> {
    cg::autoregression::relaxation_time(spec_radius).py()
}

#[pyfunction]
fn phi_upsilon(upsilon: f64) -> f64 {
    cg::autoregression::phi_upsilon(upsilon)
}

#[pyfunction]
fn regime_condition(rho: f64, kappa: f64) -> PyResult<bool> {
    cg::missingness::regime_condition(rho, kappa).py()
}

#[pyfunction]
fn autocorrelation(series: Vec<f64>, max_lag: usize) -> PyResult<Vec<f64>> {
    cg::diagnostics::autocorrelation(&series, max_lag).py()
}

/// Geyer initial-positive-sequence ESS; returns a dict with ess, n,
/// truncation_lag and the autocorrelations used.
#[pyfunction]
fn effective_sample_size(py: Python<'_>, series: Vec<f64>) -> PyResult<Py<PyAny>> {
    let r = cg::diagnostics::effective_sample_size(&series).py()?;
    serialize(py, &r)
}

/// Load a `user_id,item_id,rating` file; returns (observations, summary).
#[pyfunction]
#[pyo3(signature = (path, max_rows = None, seed = 0))]
fn load_ratings_csv(
    py: Python<'_>,
    path: PathBuf,
    max_rows: Option<usize>,
    seed: u64,
) -> PyResult<(PyObservationSet, Py<PyAny>)> {
    let d = py
        .detach(|| cg::io::load_ratings_csv(&path, cg::io::LoadOptions { max_rows, seed }))
        .py()?;
    let summary = serialize(py, &d.summary())?;
    Ok((PyObservationSet { inner: d.obs }, summary))
}

#[pyfunction]
fn verify_z_norm_bound(py: Python<'_>, spec: &PyRegimeSpec, instances: usize) -> PyResult<Py<PyAny>> {
    let spec = spec.inner;
    let r = py
        .detach(|| cg::theory_lab::verify_z_norm_bound_batch(&spec, instances))
        .py()?;
    serialize(py, &r)
}

#[pyfunction]
fn verify_row_col_concentration(
    py: Python<'_>,
    spec: &PyRegimeSpec,
    psi: f64,
    replicates: usize,
) -> PyResult<Py<PyAny>> {
    let spec = spec.inner;
    let r = py
        .detach(|| cg::theory_lab::verify_row_col_concentration(&spec, psi, replicates))
        .py()?;
    serialize(py, &r)
}

#[pyfunction]
#[pyo3(signature = (spec, replicates, cap = 3.0))]
fn latala_ratio(py: Python<'_>, spec: &PyRegimeSpec, replicates: usize, cap: f64) -> PyResult<Py<PyAny>> {
    let spec = spec.inner;
    let r = py
        .detach(|| cg::theory_lab::latala_ratio(&spec, replicates, cap))
        .py()?;
    serialize(py, &r)
}

/// Rows {S, replicate, norm, radius} of the norm-versus-S experiment.
#[pyfunction]
fn norm_vs_s(
    py: Python<'_>,
    spec: &PyRegimeSpec,
    s_grid: Vec<f64>,
    replicates: usize,
    vc: &PyVarianceComponents,
) -> PyResult<Py<PyAny>> {
    let (spec, vc) = (spec.inner, vc.inner);
    let rows = py
        .detach(|| cg::theory_lab::norm_vs_s_experiment(&spec, &s_grid, replicates, &vc))
        .py()?;
    serialize(py, &rows)
}

/// Run a CLI command from a config file; returns the run manifest.
#[pyfunction]
#[pyo3(signature = (command, config, seed = None, out = None))]
fn run_experiment(
    py: Python<'_>,
    command: &str,
    config: PathBuf,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> PyResult<Py<PyAny>> {
    let command: Command = command.parse().py()?;
    let cfg = cg::ExperimentConfig::from_path(&config)
        .py()?
        .with_overrides(&Overrides { seed, out });
    let outcome = py.detach(|| cg::run_experiment(command, &cfg)).py()?;
    let manifest = serialize(py, &outcome.manifest)?;
    manifest.bind(py).set_item("passed", outcome.passed)?;
    Ok(manifest)
}

#[pymodule]
#[pyo3(name = "crossed_gibbs")]
fn crossed_gibbs_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("CrossedGibbsError", m.py().get_type::<CrossedGibbsError>())?;
    m.add_class::<PyVarianceComponents>()?;
    m.add_class::<PyRegimeSpec>()?;
    m.add_class::<PyObservationSet>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_chain, m)?)?;
    m.add_function(wrap_pyfunction!(autoregression, m)?)?;
    m.add_function(wrap_pyfunction!(relaxation_time, m)?)?;
    m.add_function(wrap_pyfunction!(phi_upsilon, m)?)?;
    m.add_function(wrap_pyfunction!(regime_condition, m)?)?;
    m.add_function(wrap_pyfunction!(autocorrelation, m)?)?;
    m.add_function(wrap_pyfunction!(effective_sample_size, m)?)?;
    m.add_function(wrap_pyfunction!(load_ratings_csv, m)?)?;
    m.add_function(wrap_pyfunction!(verify_z_norm_bound, m)?)?;
    m.add_function(wrap_pyfunction!(verify_row_col_concentration, m)?)?;
    m.add_function(wrap_pyfunction!(latala_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(norm_vs_s, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
