//! Python bindings. Structured values cross the boundary as JSON strings.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use rs_oracle::calibration::CalibrationProfile;
use rs_oracle::network::{build_archetype, ArchetypeKind, NetworkSpec, QueueClass};
use rs_oracle::predict::{self, ParentObservation};
use rs_oracle::sim::{run_simulation, RunConfig};
use rs_oracle::simplify::{self, SimplificationOp};
use rs_oracle::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::TimingUnstable { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: serde::de::DeserializeOwned>(what: &str, json: &str) -> PyResult<T> {
    serde_json::from_str(json).map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

fn dump<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn class(s: &str) -> PyResult<QueueClass> {
    s.parse().map_err(to_py)
}

/// Machine-specific bundle of fitted models.
#[pyclass(name = "Profile", module = "rs_oracle_py")]
struct Profile {
    inner: CalibrationProfile,
}

#[pymethods]
impl Profile {
    #[staticmethod]
    fn from_json(json: &str) -> PyResult<Self> {
        Ok(Self { inner: CalibrationProfile::from_json(json).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: rs_oracle::calibration::load_profile(path.as_ref()).map_err(to_py)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    fn classes(&self) -> Vec<String> {
        self.inner.classes.keys().map(|c| c.to_string()).collect()
    }

    /// Evaluate one of theta_2s, theta_1s, theta_ss, theta_ms at `x`, or rs at Ibar / 1e4.
    fn evaluate(&self, class_name: &str, model: &str, x: f64) -> PyResult<f64> {
        let p = self.inner.class(class(class_name)?).map_err(to_py)?;
        p.models()
            .into_iter()
            .find(|(name, _)| *name == model)
            .map(|(_, m)| m.eval(x))
            .ok_or_else(|| PyValueError::new_err(format!("unknown model `{model}`")))
    }

    /// Prediction report for an observation and operation, both JSON.
    fn predict(&self, observation: &str, op: &str) -> PyResult<String> {
        let obs: ParentObservation = parse("observation", observation)?;
        let op: SimplificationOp = parse("op", op)?;
        dump(&predict::predict_rs(&self.inner, &obs, &op).map_err(to_py)?)
    }

    fn __repr__(&self) -> String {
        format!("Profile(classes={:?}, host={})", self.classes(), self.inner.fingerprint.hostname)
    }
}

/// Network JSON for a calibration archetype: kind is 2s, 1s, ss or ms.
#[pyfunction]
fn archetype(kind: &str, class_name: &str, rho: f64) -> PyResult<String> {
    let kind: ArchetypeKind = parse("kind", &format!("\"{kind}\""))?;
    dump(&build_archetype(kind, class(class_name)?, rho).map_err(to_py)?)
}

/// Untimed run of a network; returns the result JSON.
#[pyfunction]
#[pyo3(signature = (network, warmup, run_length, seed))]
fn simulate(network: &str, warmup: f64, run_length: f64, seed: u64) -> PyResult<String> {
    let spec: NetworkSpec = parse("network", network)?;
    dump(&run_simulation(&spec, &RunConfig::new(warmup, run_length, seed)).map_err(to_py)?)
}

/// Fitted LOS model JSON for a sample, with KDE fallback.
#[pyfunction]
#[pyo3(signature = (samples, bandwidth = simplify::DEFAULT_KDE_BANDWIDTH))]
fn fit_los(samples: Vec<f64>, bandwidth: f64) -> PyResult<String> {
    dump(&simplify::fit_los(&samples, bandwidth).map_err(to_py)?)
}

/// Simplified network JSON given the parent, the operation and fitted LOS models keyed by group.
#[pyfunction]
fn apply_simplification(network: &str, op: &str, los: &str) -> PyResult<String> {
    let spec: NetworkSpec = parse("network", network)?;
    let op: SimplificationOp = parse("op", op)?;
    let los = parse("los", los)?;
    dump(&simplify::apply_simplification(&spec, &op, &los).map_err(to_py)?)
}

#[pyfunction]
fn kl_divergence(p: Vec<f64>, q: Vec<f64>) -> f64 {
    simplify::kl_divergence(&p, &q)
}

/// MAPE, MPE, RMSE and R2 as a JSON object.
#[pyfunction]
fn metrics(observed: Vec<f64>, predicted: Vec<f64>) -> PyResult<String> {
    dump(&predict::metrics(&observed, &predicted).map_err(to_py)?)
}

#[pymodule]
fn rs_oracle_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Profile>()?;
    m.add_function(wrap_pyfunction!(archetype, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_los, m)?)?;
    m.add_function(wrap_pyfunction!(apply_simplification, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
