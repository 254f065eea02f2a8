//! Python bindings. Structured results come back as plain dicts and lists.

use forest_core::dqn::checkpoint::{read_checkpoint, to_bytes};
use forest_core::dqn::{self, run_training, TrainerConfig};
use forest_core::gateway::{
    detection_summary, render_summary_text, simulate, CameraConfig, CameraModel, DecisionAgent,
    GatewayPolicy,
};
use forest_core::lpwan::{decode as wire_decode, encode as wire_encode, Payload, TelemetryMessage};
use forest_core::sensor::{self, FusionWeights, NodeId, SectorSignal, SensorReading};
use forest_core::sim::ScenarioScript;
use forest_core::vision::{self, Frame};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn weights_from(toml_text: Option<&str>) -> PyResult<FusionWeights> {
    match toml_text {
        Some(t) => FusionWeights::from_toml_str(t).map_err(value_error),
        None => Ok(FusionWeights::default()),
    }
}

/// Fused sector signal of one reading.
#[pyfunction]
#[pyo3(signature = (smoke_raw, temperature_c, humidity_pct, weights_toml=None))]
fn compute_signal(smoke_raw: u16, temperature_c: f64, humidity_pct: f64, weights_toml: Option<&str>) -> PyResult<f64> {
    let reading = SensorReading {
        node: NodeId(0),
        timestamp_ms: 0,
        temperature_c,
        humidity_pct,
        pressure_hpa: 650.0,
        smoke_raw,
        water_raw: 0,
    };
    let weights = weights_from(weights_toml)?;
    sensor::compute_signal(&reading, &weights).map(|s| s.signal).map_err(value_error)
}

/// Node id with the highest signal from `(node, signal)` pairs; ties go to the lowest id.
#[pyfunction]
fn rank_sectors(signals: Vec<(u16, f64)>) -> PyResult<u16> {
    let list: Vec<SectorSignal> = signals
        .into_iter()
        .map(|(node, signal)| SectorSignal {
            node: NodeId(node),
            smoke_pct: 0.0,
            temp_exceeded: false,
            hum_exceeded: false,
            signal,
        })
        .collect();
    sensor::rank_sectors(&list).map(|n| n.0).map_err(value_error)
}

/// Canonical wire bytes of a full sensor reading.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn encode_reading<'py>(
    py: Python<'py>,
    node: u16,
    seq: u64,
    ts: u64,
    temp_c: f64,
    humidity_pct: f64,
    pressure_hpa: f64,
    smoke_raw: u16,
    water_raw: u16,
) -> Bound<'py, PyBytes> {
    let msg = TelemetryMessage {
        seq,
        payload: Payload::Full(SensorReading {
            node: NodeId(node),
            timestamp_ms: ts,
            temperature_c: temp_c,
            humidity_pct,
            pressure_hpa,
            smoke_raw,
            water_raw,
        }),
    };
    PyBytes::new(py, &wire_encode(&msg))
}

/// Validate wire bytes; returns the canonical message as a dict.
#[pyfunction]
fn decode<'py>(py: Python<'py>, data: &[u8]) -> PyResult<Bound<'py, PyAny>> {
    let msg = wire_decode(data).map_err(value_error)?;
    json_to_py(py, std::str::from_utf8(&wire_encode(&msg)).expect("wire is UTF-8"))
}

#[pyclass(name = "QNetwork", module = "forest_py")]
struct PyQNetwork {
    inner: dqn::QNetwork,
}

#[pymethods]
impl PyQNetwork {
    /// Agent-shaped network `[state_dim, 24, 24, actions]` with seeded init.
    #[new]
    #[pyo3(signature = (state_dim, actions, seed=0))]
    fn new(state_dim: usize, actions: usize, seed: u64) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        dqn::QNetwork::agent(state_dim, actions, &mut rng)
            .map(|inner| Self { inner })
            .map_err(value_error)
    }

    fn forward(&self, state: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&state).map_err(value_error)
    }

    fn sizes(&self) -> Vec<usize> {
        self.inner.sizes()
    }

    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &to_bytes(&self.inner))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        read_checkpoint(data).map(|inner| Self { inner }).map_err(value_error)
    }
}

/// Train on the sector environment. Returns `(network, metrics)`.
#[pyfunction]
#[pyo3(signature = (config_toml=None))]
fn train<'py>(py: Python<'py>, config_toml: Option<&str>) -> PyResult<(PyQNetwork, Bound<'py, PyAny>)> {
    let cfg = match config_toml {
        Some(t) => TrainerConfig::from_toml_str(t).map_err(value_error)?,
        None => TrainerConfig::default(),
    };
    let mut env = cfg.environment(FusionWeights::default());
    let (net, m) = run_training(&mut env, &cfg).map_err(value_error)?;
    let metrics = serde_json::json!({
        "episode_rewards": m.episode_rewards,
        "moving_average": m.moving_average,
        "epsilons": m.epsilons,
        "final_per_step_average": m.final_per_step_average(),
    });
    Ok((PyQNetwork { inner: net }, json_to_py(py, &metrics.to_string())?))
}

#[pyfunction]
fn moving_average(values: Vec<f64>, window: usize) -> PyResult<Vec<f64>> {
    dqn::moving_average(&values, window).map_err(value_error)
}

/// Normalized average magnitude difference of a series at `lag`.
#[pyfunction]
fn amdf(series: Vec<f64>, lag: usize) -> PyResult<f64> {
    vision::amdf_score(&series, lag).map_err(value_error)
}

/// Model input for one frame: gray, center crop, 240x240. Returns the pixels.
#[pyfunction]
fn preprocess<'py>(py: Python<'py>, width: usize, height: usize, channels: usize, data: Vec<u8>) -> PyResult<Bound<'py, PyBytes>> {
    let frame = Frame::new(width, height, channels, data).map_err(value_error)?;
    let out = vision::preprocess(&frame).map_err(value_error)?;
    Ok(PyBytes::new(py, &out.data))
}

/// Camera turn time in milliseconds along the shorter direction.
#[pyfunction]
#[pyo3(signature = (from_deg, to_deg, speed_deg_per_s=60.0))]
fn rotation_ms(from_deg: f64, to_deg: f64, speed_deg_per_s: f64) -> PyResult<u64> {
    if !(speed_deg_per_s > 0.0) {
        return Err(PyValueError::new_err("speed must be positive"));
    }
    let cam = CameraModel::new(&CameraConfig {
        speed_deg_per_s,
        initial_azimuth_deg: from_deg,
        ..CameraConfig::default()
    });
    Ok(cam.rotation_ms(to_deg))
}

/// Simulate a scenario (TOML text) under a policy; fallback agent.
#[pyfunction]
#[pyo3(signature = (scenario_toml, policy_toml=None))]
fn run_scenario<'py>(py: Python<'py>, scenario_toml: &str, policy_toml: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let script = ScenarioScript::from_toml_str(scenario_toml).map_err(value_error)?;
    let policy = match policy_toml {
        Some(t) => GatewayPolicy::from_toml_str(t).map_err(value_error)?,
        None => GatewayPolicy::default(),
    };
    let out = simulate(&script, &policy, &DecisionAgent::Fallback).map_err(value_error)?;
    let rows = detection_summary(&out.alerts);
    let result = serde_json::json!({
        "alerts": out.alerts,
        "summary": rows.iter().map(|r| serde_json::json!({
            "node": r.node, "label": r.label, "times_s": r.times_s, "mean_s": r.mean_s(),
        })).collect::<Vec<_>>(),
        "summary_text": render_summary_text(&rows),
        "trace_records": out.trace.records().len(),
    });
    json_to_py(py, &result.to_string())
}

#[pymodule]
fn forest_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(compute_signal, m)?)?;
    m.add_function(wrap_pyfunction!(rank_sectors, m)?)?;
    m.add_function(wrap_pyfunction!(encode_reading, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(moving_average, m)?)?;
    m.add_function(wrap_pyfunction!(amdf, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(rotation_ms, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_class::<PyQNetwork>()?;
    Ok(())
}
