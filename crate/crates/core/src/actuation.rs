//! Per-motor commands with displacement-proportional speed, and a
//! kinematic stand-in for the servos.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TeleopError};
use crate::robot::{JointAngleSet, LimitsTable, RobotJoint};
use crate::skeleton::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeedGovernorConfig {
    pub base_speed_rad_s: f64,
}

impl Default for SpeedGovernorConfig {
    fn default() -> Self {
        Self {
            base_speed_rad_s: 1.0,
        }
    }
}

impl SpeedGovernorConfig {
    pub fn new(base_speed_rad_s: f64) -> Result<Self> {
        let cfg = Self { base_speed_rad_s };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_speed_rad_s.is_finite() && self.base_speed_rad_s > 0.0 {
            Ok(())
        } else {
            Err(TeleopError::Config(format!(
                "base_speed_rad_s must be positive, got {}",
                self.base_speed_rad_s
            )))
        }
    }
}

/// Motor speed for moving from `phi_prev` to `phi_new`: the base speed plus
/// the base speed scaled by the displacement over a half turn. Displacement
/// is capped at a half turn, so the result stays in `[base, 2 * base]`.
pub fn govern_speed(cfg: &SpeedGovernorConfig, phi_new: f64, phi_prev: f64) -> f64 {
    let w0 = cfg.base_speed_rad_s;
    let displacement = (phi_new - phi_prev).abs().min(PI);
    w0 + w0 * (displacement / PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointCommand {
    pub joint: RobotJoint,
    pub target_angle: f64,
    pub speed: f64,
    pub stamp_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveCommand {
    pub target_angle: f64,
    pub speed: f64,
}

/// Where the robot stands on the floor. Heading is positive to the left.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BasePose {
    pub heading: f64,
    pub x: f64,
    pub z: f64,
}

impl BasePose {
    /// Turns by `heading_delta`, then moves `displacement` along the new heading.
    pub fn advanced(&self, heading_delta: f64, displacement: f64) -> BasePose {
        let heading = wrap_angle(self.heading + heading_delta);
        BasePose {
            heading,
            x: self.x + displacement * heading.sin(),
            z: self.z + displacement * heading.cos(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRobotState {
    pub stamp_us: u64,
    pub current_angles: BTreeMap<RobotJoint, f64>,
    pub active_commands: BTreeMap<RobotJoint, ActiveCommand>,
    pub pose: BasePose,
}

impl SimRobotState {
    /// All joints at the table's neutral pose, nothing in flight.
    pub fn neutral(limits: &LimitsTable) -> Self {
        Self {
            stamp_us: 0,
            current_angles: limits.neutral_pose().angles,
            active_commands: BTreeMap::new(),
            pose: BasePose::default(),
        }
    }

    pub fn angle(&self, joint: RobotJoint) -> Option<f64> {
        self.current_angles.get(&joint).copied()
    }

    /// Newer commands replace whatever is in flight for the same joint.
    pub fn apply(&mut self, commands: &[JointCommand]) {
        for c in commands {
            self.active_commands.insert(
                c.joint,
                ActiveCommand {
                    target_angle: c.target_angle,
                    speed: c.speed,
                },
            );
        }
    }

    pub fn is_settled(&self) -> bool {
        self.active_commands.is_empty()
    }
}

impl Default for SimRobotState {
    fn default() -> Self {
        Self::neutral(&LimitsTable::builtin())
    }
}

/// One command per target joint, each governed against that joint's current
/// simulated angle (its neutral value when the state has none).
pub fn make_commands(
    cfg: &SpeedGovernorConfig,
    targets: &JointAngleSet,
    state: &SimRobotState,
) -> Vec<JointCommand> {
    targets
        .angles
        .iter()
        .map(|(&joint, &target)| {
            let prev = state
                .angle(joint)
                .unwrap_or_else(|| crate::robot::limits_table().get(joint).neutral());
            JointCommand {
                joint,
                target_angle: target,
                speed: govern_speed(cfg, target, prev),
                stamp_us: targets.stamp_us,
            }
        })
        .collect()
}

/// Advances every active command by `dt` seconds at its speed, stopping
/// exactly on target. Arrived commands are cleared.
pub fn sim_step_with(state: &SimRobotState, dt: f64, limits: &LimitsTable) -> SimRobotState {
    let mut next = state.clone();
    next.stamp_us = state.stamp_us + (dt * 1e6).round() as u64;
    let mut arrived = Vec::new();
    for (&joint, cmd) in &state.active_commands {
        let current = state
            .angle(joint)
            .unwrap_or_else(|| limits.get(joint).neutral());
        let remaining = cmd.target_angle - current;
        let reach = cmd.speed * dt;
        let angle = if remaining.abs() <= reach {
            arrived.push(joint);
            cmd.target_angle
        } else {
            current + reach.copysign(remaining)
        };
        next.current_angles.insert(joint, limits.clamp(joint, angle));
    }
    for joint in arrived {
        next.active_commands.remove(&joint);
    }
    next
}

pub fn sim_step(state: &SimRobotState, dt: f64) -> SimRobotState {
    sim_step_with(state, dt, crate::robot::limits_table())
}

/// Owns a [`SimRobotState`] and the record of where the robot has stood.
#[derive(Debug, Clone)]
pub struct Simulator {
    limits: LimitsTable,
    state: SimRobotState,
    pose_history: Vec<(u64, BasePose)>,
}

impl Default for Simulator {
    fn default() -> Self {
        Self::new(LimitsTable::builtin())
    }
}

impl Simulator {
    pub fn new(limits: LimitsTable) -> Self {
        let state = SimRobotState::neutral(&limits);
        Self {
            limits,
            pose_history: vec![(0, state.pose)],
            state,
        }
    }

    pub fn state(&self) -> &SimRobotState {
        &self.state
    }

    pub fn pose_history(&self) -> &[(u64, BasePose)] {
        &self.pose_history
    }

    pub fn heading(&self) -> f64 {
        self.state.pose.heading
    }

    pub fn apply_commands(&mut self, commands: &[JointCommand]) {
        let clamped: Vec<JointCommand> = commands
            .iter()
            .map(|c| JointCommand {
                target_angle: self.limits.clamp(c.joint, c.target_angle),
                ..*c
            })
            .collect();
        self.state.apply(&clamped);
    }

    /// Records a completed step or turn.
    pub fn complete_motion(&mut self, stamp_us: u64, heading_delta: f64, displacement: f64) {
        self.state.pose = self.state.pose.advanced(heading_delta, displacement);
        self.pose_history.push((stamp_us, self.state.pose));
    }

    pub fn step(&mut self, dt: f64) -> &SimRobotState {
        self.state = sim_step_with(&self.state, dt, &self.limits);
        &self.state
    }
}
