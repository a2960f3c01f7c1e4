//! Teleoperation of a simulated 20-DOF humanoid from a tracked human
//! skeleton.
//!
//! Skeleton frames come in on the `skeleton` topic. The [`pipeline`] arbiter
//! retargets the operator's arms onto the robot, watches the legs and torso
//! for step and turn gestures, and publishes joint commands. Walking and
//! turning pause arm imitation until the motion finishes.

pub mod actuation;
pub mod bench;
pub mod bus;
pub mod error;
pub mod locomotion;
pub mod pipeline;
pub mod retarget;
pub mod robot;
pub mod skeleton;
pub mod stream;

pub use actuation::{govern_speed, make_commands, sim_step, JointCommand, SimRobotState, Simulator, SpeedGovernorConfig};
pub use bus::{Bus, Envelope, Payload, Subscription, TopicRegistry};
pub use error::{Result, TeleopError};
pub use locomotion::{
    decide_step, plan_turn, GaitConfig, GaitEvent, GaitState, LegState, MotionLibrary, MotionSet, StepDecision,
    TurnDirection, TurnPlan,
};
pub use pipeline::{Arbiter, PipelineConfig};
pub use retarget::{Retargeter, UpperBodyAngles};
pub use robot::{clamp_to_limits, JointAngleSet, JointDescriptor, LimitsTable, RobotJoint};
pub use skeleton::{
    joint_angle, quaternion_to_yaw, JointSample, Point3, Quaternion, Side, SkeletonFrame, SkeletonJoint, Vec3,
};
pub use stream::{record, replay, synth, Scenario, SynthParams};
