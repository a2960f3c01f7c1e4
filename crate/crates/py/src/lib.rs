//! Python bindings. Structured values cross the boundary as plain dicts and
//! lists with the same field names as the JSON wire format.

use std::time::Duration;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use humanoid_teleop as core;
use humanoid_teleop::bus::{wire, Envelope};
use humanoid_teleop::skeleton::Point3;

create_exception!(humanoid_teleop_py, TeleopError, PyException);

fn err(e: core::TeleopError) -> PyErr {
    TeleopError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| err(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| err(e.into()))
}

fn point((x, y, z): (f64, f64, f64)) -> Point3 {
    Point3::new(x, y, z)
}

/// Angle at `b` between segments a-b and b-c: 0 for a straight limb.
#[pyfunction]
fn joint_angle(a: (f64, f64, f64), b: (f64, f64, f64), c: (f64, f64, f64)) -> PyResult<f64> {
    core::joint_angle(point(a), point(b), point(c)).map_err(err)
}

/// Torso yaw from a `(w, x, y, z)` quaternion; positive to the left.
#[pyfunction]
fn quaternion_to_yaw(q: (f64, f64, f64, f64)) -> PyResult<f64> {
    core::quaternion_to_yaw(core::Quaternion::new(q.0, q.1, q.2, q.3)).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (phi_new, phi_prev, base_speed = 1.0))]
fn govern_speed(phi_new: f64, phi_prev: f64, base_speed: f64) -> PyResult<f64> {
    let cfg = core::SpeedGovernorConfig::new(base_speed).map_err(err)?;
    Ok(core::govern_speed(&cfg, phi_new, phi_prev))
}

#[pyfunction]
fn clamp_to_limits(joint: &str, angle: f64) -> PyResult<f64> {
    let joint: core::RobotJoint = joint.parse().map_err(err)?;
    Ok(core::clamp_to_limits(joint, angle))
}

/// The joint table as a list of dicts.
#[pyfunction]
fn joint_limits(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &core::robot::limits_table().descriptors())
}

#[pyfunction]
fn neutral_pose(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &core::robot::neutral_pose())
}

/// `(direction, steps)`; direction is `"left"`, `"right"` or `None`.
#[pyfunction]
fn plan_turn(torso_yaw: f64) -> (Option<String>, u32) {
    let plan = core::plan_turn(&core::GaitConfig::default(), torso_yaw);
    (plan.direction.map(|d| d.to_string()), plan.steps)
}

/// One step decision. `state` is a gait-state dict (see `initial_gait_state`).
#[pyfunction]
fn decide_step<'py>(
    py: Python<'py>,
    state: &Bound<'py, PyAny>,
    marked: &str,
    marked_depth: f64,
    unmarked_depth: f64,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let state: core::GaitState = from_py(state)?;
    let marked: core::Side = from_py(&marked.into_pyobject(py)?.into_any())?;
    let (decision, next) = core::decide_step(
        &state,
        &core::GaitConfig::default(),
        marked,
        marked_depth,
        unmarked_depth,
    )
    .map_err(err)?;
    Ok((to_py(py, &decision)?, to_py(py, &next)?))
}

#[pyfunction]
fn initial_gait_state(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &core::GaitState::initial())
}

/// Frames of a synthetic scenario (`arm_wave`, `forward_step`,
/// `backward_step`, `turn(ANGLE)`, `idle`).
#[pyfunction]
#[pyo3(signature = (scenario, duration_s = None, wave_arms = false, frame_rate_hz = 20.0))]
fn synth<'py>(
    py: Python<'py>,
    scenario: &str,
    duration_s: Option<f64>,
    wave_arms: bool,
    frame_rate_hz: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let params = core::SynthParams {
        frame_rate_hz,
        duration_s,
        wave_arms,
        ..Default::default()
    };
    to_py(py, &core::stream::synth_named(scenario, &params).map_err(err)?)
}

/// Writes a stream file; returns the frame count.
#[pyfunction]
#[pyo3(signature = (frames, path, frame_rate_hz = 20.0))]
fn record(frames: &Bound<'_, PyAny>, path: &str, frame_rate_hz: f64) -> PyResult<usize> {
    let frames: Vec<core::SkeletonFrame> = from_py(frames)?;
    let file = std::fs::File::create(path).map_err(|e| err(e.into()))?;
    core::record(&frames, frame_rate_hz, std::io::BufWriter::new(file)).map_err(err)
}

#[pyfunction]
fn read_stream<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyAny>> {
    let file = std::fs::File::open(path).map_err(|e| err(e.into()))?;
    let (_, frames) = core::stream::read_stream(std::io::BufReader::new(file)).map_err(err)?;
    to_py(py, &frames)
}

#[pyfunction]
fn encode_envelope(envelope: &Bound<'_, PyAny>) -> PyResult<String> {
    let env: Envelope = from_py(envelope)?;
    wire::encode_envelope(&env).map_err(err)
}

#[pyfunction]
fn decode_envelope<'py>(py: Python<'py>, line: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &wire::decode_envelope(line).map_err(err)?)
}

#[pyclass(name = "Retargeter")]
struct PyRetargeter(core::Retargeter);

#[pymethods]
impl PyRetargeter {
    #[new]
    fn new() -> Self {
        Self(core::Retargeter::default())
    }

    /// Upper-body angles for a frame dict, clamped to the joint table.
    fn retarget<'py>(&mut self, py: Python<'py>, frame: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let frame: core::SkeletonFrame = from_py(frame)?;
        frame.validate().map_err(err)?;
        to_py(py, &self.0.retarget_upper_body(&frame).map_err(err)?.to_angle_set())
    }
}

/// The frame arbiter. Each call returns the messages it would publish as
/// dicts with `topic`, `stamp_us`, `kind` and `payload`.
#[pyclass(name = "Arbiter")]
struct PyArbiter(core::Arbiter);

fn outgoing<'py>(py: Python<'py>, out: Vec<core::pipeline::Outgoing>) -> PyResult<Vec<Bound<'py, PyAny>>> {
    out.into_iter()
        .map(|o| {
            let env = Envelope {
                topic: o.topic.to_string(),
                seq: 0,
                stamp_us: o.stamp_us,
                payload: o.payload,
            };
            let d = to_py(py, &env)?;
            d.del_item("seq")?;
            Ok(d)
        })
        .collect()
}

#[pymethods]
impl PyArbiter {
    /// `config` is TOML text in the pipeline config schema.
    #[new]
    #[pyo3(signature = (config = None))]
    fn new(config: Option<&str>) -> PyResult<Self> {
        let cfg = match config {
            Some(text) => core::PipelineConfig::from_toml_str(text).map_err(err)?,
            None => core::PipelineConfig::default(),
        };
        Ok(Self(core::Arbiter::new(cfg).map_err(err)?))
    }

    fn process_frame<'py>(&mut self, py: Python<'py>, frame: &Bound<'py, PyAny>) -> PyResult<Vec<Bound<'py, PyAny>>> {
        let frame: core::SkeletonFrame = from_py(frame)?;
        frame.validate().map_err(err)?;
        outgoing(py, self.0.process_frame(&frame))
    }

    fn hold_position<'py>(&mut self, py: Python<'py>, stamp_us: u64) -> PyResult<Vec<Bound<'py, PyAny>>> {
        outgoing(py, self.0.hold_position(stamp_us))
    }

    /// `"imitating"` or `"locomoting"`.
    #[getter]
    fn mode(&self) -> &'static str {
        match self.0.mode() {
            core::pipeline::Mode::Imitating => "imitating",
            core::pipeline::Mode::Locomoting { .. } => "locomoting",
        }
    }

    #[getter]
    fn gait<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.0.gait())
    }

    #[getter]
    fn counters<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.counters())
    }
}

#[pyclass(name = "Simulator")]
struct PySimulator(core::Simulator);

#[pymethods]
impl PySimulator {
    #[new]
    fn new() -> Self {
        Self(core::Simulator::default())
    }

    /// Commands as a list of dicts (`joint`, `target_angle`, `speed`, `stamp_us`).
    fn apply_commands(&mut self, commands: &Bound<'_, PyAny>) -> PyResult<()> {
        let commands: Vec<core::JointCommand> = from_py(commands)?;
        self.0.apply_commands(&commands);
        Ok(())
    }

    fn complete_motion(&mut self, stamp_us: u64, heading_delta: f64, displacement: f64) {
        self.0.complete_motion(stamp_us, heading_delta, displacement);
    }

    fn step<'py>(&mut self, py: Python<'py>, dt: f64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.0.step(dt))
    }

    #[getter]
    fn state<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.0.state())
    }

    #[getter]
    fn heading(&self) -> f64 {
        self.0.heading()
    }
}

/// In-process publish/subscribe hub with the canonical topics.
#[pyclass(name = "Bus")]
struct PyBus(core::Bus);

#[pymethods]
impl PyBus {
    #[new]
    fn new() -> Self {
        Self(core::Bus::default())
    }

    /// `message` is a dict with `kind` and `payload`; returns the sequence number.
    fn publish(&self, topic: &str, stamp_us: u64, message: &Bound<'_, PyAny>) -> PyResult<u64> {
        let payload: core::Payload = from_py(message)?;
        self.0.publish(topic, stamp_us, payload).map_err(err)
    }

    #[pyo3(signature = (topics, capacity = 64))]
    fn subscribe(&self, topics: Vec<String>, capacity: usize) -> PyResult<PySubscription> {
        let topics: Vec<&str> = topics.iter().map(String::as_str).collect();
        Ok(PySubscription(self.0.subscribe_many(&topics, capacity).map_err(err)?))
    }

    fn close(&self) {
        self.0.close();
    }
}

#[pyclass(name = "Subscription")]
struct PySubscription(core::Subscription);

#[pymethods]
impl PySubscription {
    /// Next envelope dict, or `None` after `timeout` seconds.
    #[pyo3(signature = (timeout = 0.0))]
    fn recv<'py>(&self, py: Python<'py>, timeout: f64) -> PyResult<Option<Bound<'py, PyAny>>> {
        let wait = Duration::from_secs_f64(timeout.max(0.0));
        let sub = &self.0;
        let env = py.detach(|| sub.recv_timeout(wait)).map_err(err)?;
        env.map(|e| to_py(py, &e)).transpose()
    }

    fn drain<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyAny>>> {
        self.0.drain().iter().map(|e| to_py(py, e)).collect()
    }

    #[getter]
    fn dropped(&self) -> u64 {
        self.0.dropped()
    }
}

#[pymodule]
fn humanoid_teleop_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TeleopError", m.py().get_type::<TeleopError>())?;
    m.add("PROTOCOL_VERSION", wire::PROTOCOL_VERSION)?;
    m.add_function(wrap_pyfunction!(joint_angle, m)?)?;
    m.add_function(wrap_pyfunction!(quaternion_to_yaw, m)?)?;
    m.add_function(wrap_pyfunction!(govern_speed, m)?)?;
    m.add_function(wrap_pyfunction!(clamp_to_limits, m)?)?;
    m.add_function(wrap_pyfunction!(joint_limits, m)?)?;
    m.add_function(wrap_pyfunction!(neutral_pose, m)?)?;
    m.add_function(wrap_pyfunction!(plan_turn, m)?)?;
    m.add_function(wrap_pyfunction!(decide_step, m)?)?;
    m.add_function(wrap_pyfunction!(initial_gait_state, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(record, m)?)?;
    m.add_function(wrap_pyfunction!(read_stream, m)?)?;
    m.add_function(wrap_pyfunction!(encode_envelope, m)?)?;
    m.add_function(wrap_pyfunction!(decode_envelope, m)?)?;
    m.add_class::<PyRetargeter>()?;
    m.add_class::<PyArbiter>()?;
    m.add_class::<PySimulator>()?;
    m.add_class::<PyBus>()?;
    m.add_class::<PySubscription>()?;
    Ok(())
}
