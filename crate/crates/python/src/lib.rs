//! Python bindings: networks, abstractions, allocation, range verification
//! and sensitivity. Reports come back as plain dicts and lists.

use std::time::Duration;

use kan_verify::bench::benchmarks;
use kan_verify::model_io::{load_model, save_model};
use kan_verify::pwa::{optimal_pwa, Grid};
use kan_verify::verify::{empirical_range, AllocationMode, Verifier, VerifyConfig, DEFAULT_SAMPLES, DEFAULT_SEED};
use kan_verify::{Error, InputBox, KanNetwork, UnitId};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::Serialize;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Serializable value -> Python object via the `json` module.
fn to_object(py: Python<'_>, value: &impl Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// A Kolmogorov-Arnold network loaded from the `.kan.json` format.
#[pyclass(name = "Network", frozen)]
struct PyNetwork {
    net: KanNetwork,
}

#[pymethods]
impl PyNetwork {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Self::from_json(std::str::from_utf8(&bytes).map_err(|e| PyValueError::new_err(e.to_string()))?)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyNetwork {
            net: load_model(text.as_bytes()).map_err(to_py)?,
        })
    }

    /// One of the bundled benchmark networks by name.
    #[staticmethod]
    fn benchmark(name: &str) -> PyResult<Self> {
        benchmarks()
            .map_err(to_py)?
            .into_iter()
            .find(|b| b.name == name)
            .map(|b| PyNetwork { net: b.net })
            .ok_or_else(|| PyValueError::new_err(format!("unknown benchmark `{name}`")))
    }

    fn to_json(&self) -> String {
        String::from_utf8(save_model(&self.net)).expect("model JSON is utf-8")
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    #[getter]
    fn layer_widths(&self) -> Vec<usize> {
        self.net.layer_widths().to_vec()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// Unit keys in `layer_output_input` form, `input` 0 for outer units.
    fn unit_keys(&self) -> Vec<String> {
        self.net.units().map(|(id, _)| id.key()).collect()
    }

    fn eval(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.net.eval(&x).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Network(layer_widths={:?})", self.net.layer_widths())
    }
}

fn input_box(lower: Vec<f64>, upper: Vec<f64>) -> PyResult<InputBox> {
    InputBox::new(lower, upper).map_err(to_py)
}

#[allow(clippy::too_many_arguments)]
fn config(
    net: &KanNetwork,
    intervals: Option<usize>,
    max_pieces: Option<usize>,
    mip_gap: Option<f64>,
    timeout: Option<f64>,
    node_limit: Option<usize>,
    pieces: Option<usize>,
) -> VerifyConfig {
    let mut c = VerifyConfig::for_network(net);
    if let Some(i) = intervals {
        c.intervals = i;
    }
    if let Some(p) = max_pieces {
        c.max_pieces = p;
    }
    if let Some(g) = mip_gap {
        c.solve.mip_gap = g;
    }
    if let Some(t) = timeout {
        c.solve.timeout = Duration::from_secs_f64(t);
    }
    c.solve.node_limit = node_limit.or(c.solve.node_limit);
    if let Some(p) = pieces {
        c.allocation = AllocationMode::Uniform(p);
    }
    c
}

/// Optimal abstraction of one unit with at most `pieces` pieces on a grid
/// of `intervals`; returns breakpoints, values and the grid error.
#[pyfunction]
#[pyo3(signature = (network, unit, pieces, intervals = 256))]
fn optimal_abstraction(
    py: Python<'_>,
    network: &PyNetwork,
    unit: &str,
    pieces: usize,
    intervals: usize,
) -> PyResult<Py<PyAny>> {
    let id = UnitId::parse_key(unit).ok_or_else(|| PyValueError::new_err(format!("bad unit key `{unit}`")))?;
    let u = network
        .net
        .unit(id)
        .ok_or_else(|| PyValueError::new_err(format!("no unit `{unit}`")))?;
    let grid = Grid::for_unit(u, intervals).map_err(to_py)?;
    let (pwa, error) = optimal_pwa(u, &grid, pieces).map_err(to_py)?;
    to_object(
        py,
        &serde_json::json!({
            "breakpoints": pwa.breakpoints(),
            "values": pwa.values(),
            "pieces": pwa.pieces(),
            "grid_error": error,
        }),
    )
}

/// Per-unit piece counts under the error budget `delta`.
#[pyfunction]
#[pyo3(signature = (network, delta = None, output = 0, pieces = None, intervals = None, max_pieces = None))]
fn allocate(
    py: Python<'_>,
    network: &PyNetwork,
    delta: Option<f64>,
    output: usize,
    pieces: Option<usize>,
    intervals: Option<usize>,
    max_pieces: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let c = config(&network.net, intervals, max_pieces, None, None, None, pieces);
    let alloc = py
        .detach(|| {
            let v = Verifier::new(&network.net, c)?;
            let delta = match delta {
                Some(d) => d,
                None => v.default_delta(output)?,
            };
            v.allocate(output, delta)
        })
        .map_err(to_py)?;
    to_object(py, &alloc)
}

/// Verified range of one output over the box `[lower, upper]`.
#[pyfunction]
#[pyo3(signature = (
    network, lower, upper, output = 0, delta = None, pieces = None, intervals = None, max_pieces = None,
    mip_gap = None, timeout = None, node_limit = None
))]
#[allow(clippy::too_many_arguments)]
fn verify_range(
    py: Python<'_>,
    network: &PyNetwork,
    lower: Vec<f64>,
    upper: Vec<f64>,
    output: usize,
    delta: Option<f64>,
    pieces: Option<usize>,
    intervals: Option<usize>,
    max_pieces: Option<usize>,
    mip_gap: Option<f64>,
    timeout: Option<f64>,
    node_limit: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let bx = input_box(lower, upper)?;
    let c = config(&network.net, intervals, max_pieces, mip_gap, timeout, node_limit, pieces);
    let res = py
        .detach(|| Verifier::new(&network.net, c)?.verify_range(&bx, output, delta))
        .map_err(to_py)?;
    to_object(py, &res)
}

/// Bound on the output change when one feature moves by at most `epsilon`;
/// every feature when `feature` is None.
#[pyfunction]
#[pyo3(signature = (
    network, lower, upper, epsilon = 0.01, feature = None, output = 0, delta = None, samples = DEFAULT_SAMPLES,
    mip_gap = None, timeout = None
))]
#[allow(clippy::too_many_arguments)]
fn sensitivity(
    py: Python<'_>,
    network: &PyNetwork,
    lower: Vec<f64>,
    upper: Vec<f64>,
    epsilon: f64,
    feature: Option<usize>,
    output: usize,
    delta: Option<f64>,
    samples: usize,
    mip_gap: Option<f64>,
    timeout: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let bx = input_box(lower, upper)?;
    let c = config(&network.net, None, None, mip_gap, timeout, None, None);
    let res = py
        .detach(|| {
            let v = Verifier::new(&network.net, c)?;
            match feature {
                Some(d) => Ok(vec![v.sensitivity(&bx, output, d, epsilon, delta, samples)?]),
                None => v.sensitivity_sweep(&bx, output, epsilon, delta, samples),
            }
        })
        .map_err(to_py)?;
    to_object(py, &res)
}

/// Per-output `(min, max)` over uniform samples of the box.
#[pyfunction]
#[pyo3(signature = (network, lower, upper, samples = DEFAULT_SAMPLES, seed = DEFAULT_SEED))]
fn sampled_range(
    network: &PyNetwork,
    lower: Vec<f64>,
    upper: Vec<f64>,
    samples: usize,
    seed: u64,
) -> PyResult<Vec<(f64, f64)>> {
    empirical_range(&network.net, &input_box(lower, upper)?, samples, seed).map_err(to_py)
}

#[pymodule]
fn kan_verify_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(optimal_abstraction, m)?)?;
    m.add_function(wrap_pyfunction!(allocate, m)?)?;
    m.add_function(wrap_pyfunction!(verify_range, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivity, m)?)?;
    m.add_function(wrap_pyfunction!(sampled_range, m)?)?;
    Ok(())
}
