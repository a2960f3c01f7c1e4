use thiserror::Error;

use crate::robot::RobotJoint;
use crate::skeleton::SkeletonJoint;

pub type Result<T, E = TeleopError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TeleopError {
    #[error("degenerate segment: skeleton points overlap (|v| = {norm:e} m)")]
    DegenerateSegment { norm: f64 },

    #[error("degenerate quaternion (norm = {norm:e})")]
    DegenerateQuaternion { norm: f64 },

    #[error("missing joint `{0}` and no held sample")]
    MissingJoint(SkeletonJoint),

    #[error("invalid skeleton frame: {0}")]
    InvalidFrame(String),

    #[error("inconsistent gait state: marked leg is Null outside the initial state")]
    InconsistentState,

    #[error("invalid motion set `{name}`: {reason}")]
    InvalidMotionSet { name: String, reason: String },

    #[error("joint {joint} angle {angle} outside [{min}, {max}]")]
    OutOfLimits {
        joint: RobotJoint,
        angle: f64,
        min: f64,
        max: f64,
    },

    #[error("unknown topic `{0}`")]
    UnknownTopic(String),

    #[error("topic `{topic}` carries `{expected}`, got `{got}`")]
    KindMismatch {
        topic: String,
        expected: String,
        got: String,
    },

    #[error("protocol version mismatch: local `{local}`, remote `{remote}`")]
    VersionMismatch { local: String, remote: String },

    #[error("topic registry mismatch: local {local}, remote {remote}")]
    RegistryMismatch { local: String, remote: String },

    #[error("bus closed")]
    Disconnected,

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("line {line}: {reason}")]
    Stream { line: usize, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error("wire: {0}")]
    Wire(#[from] serde_json::Error),

    #[error("websocket: {0}")]
    WebSocket(#[from] Box<tungstenite::Error>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<tungstenite::Error> for TeleopError {
    fn from(e: tungstenite::Error) -> Self {
        TeleopError::WebSocket(Box::new(e))
    }
}
