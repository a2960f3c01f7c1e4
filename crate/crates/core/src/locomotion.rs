//! Walking and turning: leg-lift detection from knee angles, the step
//! decision state machine, torso-yaw turn planning and motion-set playback.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::actuation::{make_commands, JointCommand, Simulator, SpeedGovernorConfig};
use crate::error::{Result, TeleopError};
use crate::robot::{AngleValue, JointAngleSet, LimitsTable, RobotJoint};
use crate::skeleton::{joint_angle, Side, SkeletonFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LegState {
    Forward,
    Back,
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftPhase {
    Grounded,
    Lifted,
}

/// Gait machine memory. `initial_state` means both feet together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaitState {
    pub initial_state: bool,
    pub left_state: LegState,
    pub right_state: LegState,
    pub lifted_leg: Option<Side>,
}

impl Default for GaitState {
    fn default() -> Self {
        Self::initial()
    }
}

impl GaitState {
    pub const fn initial() -> Self {
        Self {
            initial_state: true,
            left_state: LegState::Null,
            right_state: LegState::Null,
            lifted_leg: None,
        }
    }

    pub fn leg_state(&self, side: Side) -> LegState {
        match side {
            Side::Left => self.left_state,
            Side::Right => self.right_state,
        }
    }

    fn set_leg_state(&mut self, side: Side, state: LegState) {
        match side {
            Side::Left => self.left_state = state,
            Side::Right => self.right_state = state,
        }
    }

    pub fn lift_phase(&self, side: Side) -> LiftPhase {
        if self.lifted_leg == Some(side) {
            LiftPhase::Lifted
        } else {
            LiftPhase::Grounded
        }
    }

    /// Initial iff both legs Null; otherwise one Forward and one Back.
    pub fn is_consistent(&self) -> bool {
        use LegState::*;
        if self.initial_state {
            self.left_state == Null && self.right_state == Null
        } else {
            matches!(
                (self.left_state, self.right_state),
                (Forward, Back) | (Back, Forward)
            )
        }
    }

    /// Back to feet-together, keeping any lift in progress.
    pub fn reset_steps(&mut self) {
        self.initial_state = true;
        self.left_state = LegState::Null;
        self.right_state = LegState::Null;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaitConfig {
    pub knee_lift_threshold: f64,
    pub knee_place_threshold: f64,
    pub depth_threshold: f64,
    pub yaw_threshold: f64,
    pub turn_step_quantum: f64,
    pub max_turn_steps: u32,
    /// Frames over which the torso yaw must stay steady before a turn is planned.
    pub turn_settle_frames: usize,
    /// Largest yaw spread (radians) across the settle window that still counts as steady.
    pub turn_settle_tolerance: f64,
}

impl Default for GaitConfig {
    fn default() -> Self {
        Self {
            knee_lift_threshold: 0.7,
            knee_place_threshold: 0.5,
            depth_threshold: 0.08,
            yaw_threshold: 0.35,
            turn_step_quantum: 0.26,
            max_turn_steps: 12,
            turn_settle_frames: 4,
            turn_settle_tolerance: 0.03,
        }
    }
}

impl GaitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("knee_lift_threshold", self.knee_lift_threshold),
            ("knee_place_threshold", self.knee_place_threshold),
            ("depth_threshold", self.depth_threshold),
            ("yaw_threshold", self.yaw_threshold),
            ("turn_step_quantum", self.turn_step_quantum),
            ("turn_settle_tolerance", self.turn_settle_tolerance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(TeleopError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.knee_place_threshold >= self.knee_lift_threshold {
            return Err(TeleopError::Config(format!(
                "knee_place_threshold {} must be below knee_lift_threshold {}",
                self.knee_place_threshold, self.knee_lift_threshold
            )));
        }
        if self.max_turn_steps == 0 || self.turn_settle_frames == 0 {
            return Err(TeleopError::Config(
                "max_turn_steps and turn_settle_frames must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "leg", rename_all = "snake_case")]
pub enum StepDecision {
    ForwardStep(Side),
    BackStep(Side),
    NoStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", content = "leg", rename_all = "snake_case")]
pub enum LiftEvent {
    None,
    Lifted(Side),
    Placed(Side),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnDirection {
    Left,
    Right,
}

impl fmt::Display for TurnDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TurnDirection::Left => "left",
            TurnDirection::Right => "right",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnPlan {
    pub direction: Option<TurnDirection>,
    pub steps: u32,
}

impl TurnPlan {
    pub const NONE: TurnPlan = TurnPlan {
        direction: None,
        steps: 0,
    };
}

/// Published on the gait events topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum GaitEvent {
    Lifted {
        leg: Side,
        stamp_us: u64,
    },
    Placed {
        leg: Side,
        depth_diff: f64,
        stamp_us: u64,
    },
    Step {
        decision: StepDecision,
        state: GaitState,
        stamp_us: u64,
    },
    Turn {
        direction: TurnDirection,
        steps: u32,
        torso_yaw: f64,
        stamp_us: u64,
    },
    LocomotionStarted {
        stamp_us: u64,
    },
    MotionStarted {
        name: String,
        stamp_us: u64,
    },
    MotionCompleted {
        name: String,
        heading_delta: f64,
        displacement: f64,
        stamp_us: u64,
    },
    LocomotionFinished {
        stamp_us: u64,
    },
    /// Gait forced back to feet-together (watchdog or corrupted state).
    Reset {
        stamp_us: u64,
    },
}

impl GaitEvent {
    pub fn stamp_us(&self) -> u64 {
        match self {
            GaitEvent::Lifted { stamp_us, .. }
            | GaitEvent::Placed { stamp_us, .. }
            | GaitEvent::Step { stamp_us, .. }
            | GaitEvent::Turn { stamp_us, .. }
            | GaitEvent::LocomotionStarted { stamp_us }
            | GaitEvent::MotionStarted { stamp_us, .. }
            | GaitEvent::MotionCompleted { stamp_us, .. }
            | GaitEvent::LocomotionFinished { stamp_us }
            | GaitEvent::Reset { stamp_us } => *stamp_us,
        }
    }
}

/// Knee flexion for one leg: 0 with the leg straight, growing as it bends.
pub fn knee_angle(frame: &SkeletonFrame, side: Side) -> Result<f64> {
    joint_angle(
        frame.position(side.hip())?,
        frame.position(side.knee())?,
        frame.position(side.foot())?,
    )
}

/// Distance of the knee from the sensor.
pub fn knee_depth(frame: &SkeletonFrame, side: Side) -> Result<f64> {
    frame.position(side.knee()).map(|p| p.z)
}

/// Tracks one lifted leg at a time with a lift/place hysteresis band.
pub fn update_lift(
    state: &GaitState,
    cfg: &GaitConfig,
    left_knee: f64,
    right_knee: f64,
) -> (GaitState, LiftEvent) {
    let mut next = *state;
    let knee = |side: Side| match side {
        Side::Left => left_knee,
        Side::Right => right_knee,
    };
    match state.lifted_leg {
        Some(side) => {
            if knee(side) < cfg.knee_place_threshold {
                next.lifted_leg = None;
                return (next, LiftEvent::Placed(side));
            }
        }
        None => {
            let left_up = left_knee > cfg.knee_lift_threshold;
            let right_up = right_knee > cfg.knee_lift_threshold;
            let lifted = match (left_up, right_up) {
                (true, true) if right_knee > left_knee => Some(Side::Right),
                (true, _) => Some(Side::Left),
                (false, true) => Some(Side::Right),
                (false, false) => None,
            };
            if let Some(side) = lifted {
                next.lifted_leg = Some(side);
                return (next, LiftEvent::Lifted(side));
            }
        }
    }
    (next, LiftEvent::None)
}

/// Step decision for a placed leg, from the depth difference between the
/// two knees (positive = placed leg is deeper, i.e. behind).
pub fn decide_step(
    state: &GaitState,
    cfg: &GaitConfig,
    marked: Side,
    marked_depth: f64,
    unmarked_depth: f64,
) -> Result<(StepDecision, GaitState)> {
    let depth_diff = marked_depth - unmarked_depth;
    let unmarked = marked.other();
    let mut next = *state;
    if state.initial_state {
        if depth_diff > cfg.depth_threshold {
            next.initial_state = false;
            next.set_leg_state(marked, LegState::Back);
            next.set_leg_state(unmarked, LegState::Forward);
            Ok((StepDecision::BackStep(marked), next))
        } else if depth_diff < -cfg.depth_threshold {
            next.initial_state = false;
            next.set_leg_state(marked, LegState::Forward);
            next.set_leg_state(unmarked, LegState::Back);
            Ok((StepDecision::ForwardStep(marked), next))
        } else {
            Ok((StepDecision::NoStep, next))
        }
    } else {
        let decision = match state.leg_state(marked) {
            LegState::Forward => StepDecision::BackStep(marked),
            LegState::Back => StepDecision::ForwardStep(marked),
            LegState::Null => return Err(TeleopError::InconsistentState),
        };
        next.reset_steps();
        Ok((decision, next))
    }
}

/// Number of quantized turn steps for a torso twist; positive yaw turns left.
pub fn plan_turn(cfg: &GaitConfig, torso_yaw: f64) -> TurnPlan {
    let magnitude = torso_yaw.abs();
    if !(magnitude > cfg.yaw_threshold) {
        return TurnPlan::NONE;
    }
    let direction = if torso_yaw > 0.0 {
        TurnDirection::Left
    } else {
        TurnDirection::Right
    };
    let steps = (magnitude / cfg.turn_step_quantum).round() as u32;
    TurnPlan {
        direction: Some(direction),
        steps: steps.clamp(1, cfg.max_turn_steps),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub angles: JointAngleSet,
    pub hold_ms: u64,
}

/// A canned keyframe sequence realizing one step or one turn step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSet {
    pub name: String,
    pub keyframes: Vec<Keyframe>,
    pub heading_delta: f64,
    pub displacement: f64,
    pub end_pose: JointAngleSet,
}

impl MotionSet {
    pub fn duration_ms(&self) -> u64 {
        self.keyframes.iter().map(|k| k.hold_ms).sum()
    }

    pub fn validate(&self, limits: &LimitsTable) -> Result<()> {
        let invalid = |reason: String| TeleopError::InvalidMotionSet {
            name: self.name.clone(),
            reason,
        };
        for (i, kf) in self.keyframes.iter().enumerate() {
            limits
                .validate(&kf.angles)
                .map_err(|e| invalid(format!("keyframe {i}: {e}")))?;
        }
        limits
            .validate(&self.end_pose)
            .map_err(|e| invalid(format!("end pose: {e}")))?;
        if let Some(last) = self.keyframes.last() {
            for (joint, want) in &self.end_pose.angles {
                if last.angles.get(*joint) != Some(*want) {
                    return Err(invalid(format!(
                        "final keyframe leaves `{joint}` away from the end pose"
                    )));
                }
            }
        }
        if !self.heading_delta.is_finite() || !self.displacement.is_finite() {
            return Err(invalid("non-finite heading_delta or displacement".into()));
        }
        Ok(())
    }
}

/// Named motion sets: `forward_step_{left,right}`, `back_step_{left,right}`,
/// `turn_left`, `turn_right`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionLibrary {
    sets: BTreeMap<String, MotionSet>,
}

pub const DEFAULT_MOTION_SETS: &str = include_str!("../data/motion_sets.toml");

const REQUIRED_SETS: [&str; 6] = [
    "forward_step_left",
    "forward_step_right",
    "back_step_left",
    "back_step_right",
    "turn_left",
    "turn_right",
];

impl MotionLibrary {
    pub fn builtin() -> Self {
        Self::from_toml_str(DEFAULT_MOTION_SETS, &LimitsTable::builtin())
            .expect("bundled motion sets are valid")
    }

    pub fn from_toml_str(text: &str, limits: &LimitsTable) -> Result<Self> {
        #[derive(Deserialize)]
        struct File {
            motion_set: Vec<SetRow>,
        }
        #[derive(Deserialize)]
        struct SetRow {
            name: String,
            #[serde(default)]
            heading_delta: f64,
            #[serde(default)]
            displacement: f64,
            #[serde(default)]
            end: BTreeMap<RobotJoint, AngleValue>,
            #[serde(default)]
            keyframe: Vec<KeyframeRow>,
        }
        #[derive(Deserialize)]
        struct KeyframeRow {
            hold_ms: u64,
            angles: BTreeMap<RobotJoint, AngleValue>,
        }
        fn to_set(angles: &BTreeMap<RobotJoint, AngleValue>) -> Result<JointAngleSet> {
            let mut set = JointAngleSet::new(0);
            for (j, v) in angles {
                set.angles.insert(*j, v.radians()?);
            }
            Ok(set)
        }

        let file: File = toml::from_str(text).map_err(|e| TeleopError::Config(e.to_string()))?;
        let mut sets = BTreeMap::new();
        for row in file.motion_set {
            let keyframes = row
                .keyframe
                .iter()
                .map(|k| {
                    Ok(Keyframe {
                        angles: to_set(&k.angles)?,
                        hold_ms: k.hold_ms,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let set = MotionSet {
                name: row.name.clone(),
                keyframes,
                heading_delta: row.heading_delta,
                displacement: row.displacement,
                end_pose: to_set(&row.end)?,
            };
            set.validate(limits)?;
            if sets.insert(row.name.clone(), set).is_some() {
                return Err(TeleopError::Config(format!("motion set `{}` defined twice", row.name)));
            }
        }
        for name in REQUIRED_SETS {
            if !sets.contains_key(name) {
                return Err(TeleopError::Config(format!("motion set `{name}` missing")));
            }
        }
        Ok(Self { sets })
    }

    pub fn get(&self, name: &str) -> Option<&MotionSet> {
        self.sets.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sets.keys().map(String::as_str)
    }

    /// The set realizing a step decision; `None` for `NoStep`.
    pub fn for_step(&self, decision: StepDecision) -> Option<&MotionSet> {
        let name = match decision {
            StepDecision::ForwardStep(Side::Left) => "forward_step_left",
            StepDecision::ForwardStep(Side::Right) => "forward_step_right",
            StepDecision::BackStep(Side::Left) => "back_step_left",
            StepDecision::BackStep(Side::Right) => "back_step_right",
            StepDecision::NoStep => return None,
        };
        self.get(name)
    }

    pub fn for_turn(&self, direction: TurnDirection) -> &MotionSet {
        match direction {
            TurnDirection::Left => &self.sets["turn_left"],
            TurnDirection::Right => &self.sets["turn_right"],
        }
    }
}

impl Default for MotionLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Time-driven release of a motion set's keyframes. Keyframe `i` goes out
/// once the holds of keyframes `0..i` have elapsed since `start_us`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionPlayback {
    set: MotionSet,
    start_us: u64,
    next: usize,
}

impl MotionPlayback {
    pub fn new(set: MotionSet, start_us: u64) -> Self {
        Self {
            set,
            start_us,
            next: 0,
        }
    }

    pub fn set(&self) -> &MotionSet {
        &self.set
    }

    pub fn start_us(&self) -> u64 {
        self.start_us
    }

    pub fn end_us(&self) -> u64 {
        self.start_us + self.set.duration_ms() * 1000
    }

    /// Keyframes that became due at or before `now_us`, not yet released.
    pub fn release_due(&mut self, now_us: u64) -> Vec<&Keyframe> {
        let mut offset_us: u64 = self.set.keyframes[..self.next]
            .iter()
            .map(|k| k.hold_ms * 1000)
            .sum();
        let first = self.next;
        while self.next < self.set.keyframes.len() && self.start_us + offset_us <= now_us {
            offset_us += self.set.keyframes[self.next].hold_ms * 1000;
            self.next += 1;
        }
        self.set.keyframes[first..self.next].iter().collect()
    }

    pub fn is_finished(&self, now_us: u64) -> bool {
        self.next == self.set.keyframes.len() && now_us >= self.end_us()
    }
}

/// Plays a whole motion set against a simulator: each keyframe becomes a
/// command batch (governed against the simulated pose), handed to `emit`
/// with its offset in ms, then held. The set's heading and displacement are
/// applied to the simulator at the end. Returns the total duration in ms.
pub fn play_motion_set(
    set: &MotionSet,
    limits: &LimitsTable,
    governor: &SpeedGovernorConfig,
    sim: &mut Simulator,
    mut emit: impl FnMut(u64, &[JointCommand]),
) -> Result<u64> {
    set.validate(limits)?;
    const SUBSTEP_MS: u64 = 10;
    let mut offset_ms = 0;
    for kf in &set.keyframes {
        let mut targets = kf.angles.clone();
        targets.stamp_us = sim.state().stamp_us;
        let commands = make_commands(governor, &targets, sim.state());
        emit(offset_ms, &commands);
        sim.apply_commands(&commands);
        let mut held = 0;
        while held < kf.hold_ms {
            let dt = SUBSTEP_MS.min(kf.hold_ms - held);
            sim.step(dt as f64 / 1000.0);
            held += dt;
        }
        offset_ms += kf.hold_ms;
    }
    if !set.keyframes.is_empty() || set.heading_delta != 0.0 || set.displacement != 0.0 {
        let stamp = sim.state().stamp_us;
        sim.complete_motion(stamp, set.heading_delta, set.displacement);
    }
    Ok(offset_ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{JointSample, Point3, SkeletonJoint};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn legs_frame(right: (Point3, Point3, Point3)) -> SkeletonFrame {
        let mut joints = BTreeMap::new();
        for j in SkeletonJoint::ALL {
            joints.insert(j, JointSample::at(Point3::new(0.0, 1.2, 2.0)));
        }
        joints.insert(SkeletonJoint::RightHip, JointSample::at(right.0));
        joints.insert(SkeletonJoint::RightKnee, JointSample::at(right.1));
        joints.insert(SkeletonJoint::RightFoot, JointSample::at(right.2));
        SkeletonFrame { stamp_us: 0, joints }
    }

    #[test]
    fn knee_angle_examples() {
        let p = Point3::new;
        let straight = legs_frame((p(0.1, 1.0, 2.0), p(0.1, 0.6, 2.0), p(0.1, 0.2, 2.0)));
        assert!(knee_angle(&straight, Side::Right).unwrap().abs() < 1e-12);

        let bent = legs_frame((p(0.0, 1.0, 2.0), p(0.0, 1.0, 1.7), p(0.0, 0.7, 1.7)));
        assert!((knee_angle(&bent, Side::Right).unwrap() - FRAC_PI_2).abs() < 1e-12);

        let tucked = legs_frame((p(0.0, 1.0, 2.0), p(0.0, 0.6, 2.0), p(0.0, 0.99, 2.01)));
        let a = knee_angle(&tucked, Side::Right).unwrap();
        assert!(a > PI - 0.05 && a <= PI);

        assert_eq!(knee_depth(&bent, Side::Right).unwrap(), 1.7);
    }

    #[test]
    fn lift_and_place_with_hysteresis() {
        let cfg = GaitConfig::default();
        let g = GaitState::initial();
        let (g, ev) = update_lift(&g, &cfg, 0.8, 0.0);
        assert_eq!(ev, LiftEvent::Lifted(Side::Left));
        assert_eq!(g.lift_phase(Side::Left), LiftPhase::Lifted);

        let (g, ev) = update_lift(&g, &cfg, 0.6, 0.0);
        assert_eq!(ev, LiftEvent::None);

        // The other leg lifting while one is up is ignored.
        let (g, ev) = update_lift(&g, &cfg, 0.6, 1.2);
        assert_eq!(ev, LiftEvent::None);
        assert_eq!(g.lifted_leg, Some(Side::Left));

        let (g, ev) = update_lift(&g, &cfg, 0.4, 0.0);
        assert_eq!(ev, LiftEvent::Placed(Side::Left));
        assert_eq!(g.lifted_leg, None);
    }

    #[test]
    fn simultaneous_lift_marks_higher_knee() {
        let cfg = GaitConfig::default();
        let (_, ev) = update_lift(&GaitState::initial(), &cfg, 0.9, 1.1);
        assert_eq!(ev, LiftEvent::Lifted(Side::Right));
        let (_, ev) = update_lift(&GaitState::initial(), &cfg, 1.1, 0.9);
        assert_eq!(ev, LiftEvent::Lifted(Side::Left));
    }

    #[test]
    fn decide_step_examples() {
        let cfg = GaitConfig::default();
        let g = GaitState::initial();
        let (d, g1) = decide_step(&g, &cfg, Side::Right, 2.12, 2.0).unwrap();
        assert_eq!(d, StepDecision::BackStep(Side::Right));
        assert!(!g1.initial_state);
        assert_eq!((g1.right_state, g1.left_state), (LegState::Back, LegState::Forward));

        let (d, g2) = decide_step(&g, &cfg, Side::Right, 2.03, 2.0).unwrap();
        assert_eq!(d, StepDecision::NoStep);
        assert_eq!(g2, g);

        let mid = GaitState {
            initial_state: false,
            left_state: LegState::Back,
            right_state: LegState::Forward,
            lifted_leg: None,
        };
        let (d, g3) = decide_step(&mid, &cfg, Side::Right, 0.0, 0.0).unwrap();
        assert_eq!(d, StepDecision::BackStep(Side::Right));
        assert_eq!(g3, GaitState::initial());
    }

    #[test]
    fn decide_step_flags_corrupted_state() {
        let bad = GaitState {
            initial_state: false,
            left_state: LegState::Null,
            right_state: LegState::Null,
            lifted_leg: None,
        };
        assert!(matches!(
            decide_step(&bad, &GaitConfig::default(), Side::Left, 0.0, 0.0),
            Err(TeleopError::InconsistentState)
        ));
    }

    #[test]
    fn plan_turn_examples() {
        let cfg = GaitConfig::default();
        assert_eq!(plan_turn(&cfg, 0.1), TurnPlan::NONE);
        assert_eq!(plan_turn(&cfg, 0.35), TurnPlan::NONE);
        assert_eq!(
            plan_turn(&cfg, 0.6),
            TurnPlan {
                direction: Some(TurnDirection::Left),
                steps: 2
            }
        );
        assert_eq!(
            plan_turn(&cfg, -FRAC_PI_2),
            TurnPlan {
                direction: Some(TurnDirection::Right),
                steps: 6
            }
        );
        // Just past the deadband still turns at least once.
        assert_eq!(plan_turn(&cfg, 0.36).steps, 1);
        assert_eq!(plan_turn(&cfg, PI).steps, 12);
        let tight = GaitConfig {
            max_turn_steps: 3,
            ..cfg
        };
        assert_eq!(plan_turn(&tight, -PI).steps, 3);
    }

    #[test]
    fn config_validation() {
        assert!(GaitConfig::default().validate().is_ok());
        let inverted = GaitConfig {
            knee_place_threshold: 0.8,
            ..Default::default()
        };
        assert!(inverted.validate().is_err());
        let zero = GaitConfig {
            depth_threshold: 0.0,
            ..Default::default()
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn builtin_library_is_complete() {
        let lib = MotionLibrary::builtin();
        let limits = LimitsTable::builtin();
        for name in REQUIRED_SETS {
            let set = lib.get(name).unwrap();
            set.validate(&limits).unwrap();
            assert!(set.duration_ms() > 0);
        }
        assert_eq!(lib.for_turn(TurnDirection::Left).heading_delta, 0.26);
        assert_eq!(lib.for_turn(TurnDirection::Right).heading_delta, -0.26);
        assert!(lib.for_step(StepDecision::NoStep).is_none());
        assert!(lib.for_step(StepDecision::BackStep(Side::Left)).unwrap().displacement < 0.0);
    }

    #[test]
    fn library_rejects_out_of_limit_keyframes() {
        let text = DEFAULT_MOTION_SETS.replacen("right_knee = 1.0", "right_knee = -1.0", 1);
        let err = MotionLibrary::from_toml_str(&text, &LimitsTable::builtin()).unwrap_err();
        assert!(matches!(err, TeleopError::InvalidMotionSet { .. }), "{err}");
    }

    #[test]
    fn library_rejects_missing_sets() {
        let text = "[[motion_set]]\nname = \"turn_left\"\n";
        assert!(MotionLibrary::from_toml_str(text, &LimitsTable::builtin()).is_err());
    }

    fn two_keyframe_set() -> MotionSet {
        MotionSet {
            name: "test".into(),
            keyframes: vec![
                Keyframe {
                    angles: JointAngleSet::new(0).with(RobotJoint::RightKnee, 0.5),
                    hold_ms: 300,
                },
                Keyframe {
                    angles: JointAngleSet::new(0).with(RobotJoint::RightKnee, 0.0),
                    hold_ms: 300,
                },
            ],
            heading_delta: 0.0,
            displacement: 0.0,
            end_pose: JointAngleSet::new(0).with(RobotJoint::RightKnee, 0.0),
        }
    }

    #[test]
    fn play_motion_set_examples() {
        let limits = LimitsTable::builtin();
        let gov = SpeedGovernorConfig::default();

        let mut sim = Simulator::default();
        let empty = MotionSet {
            name: "empty".into(),
            keyframes: vec![],
            heading_delta: 0.0,
            displacement: 0.0,
            end_pose: JointAngleSet::new(0),
        };
        let mut batches = 0;
        let ms = play_motion_set(&empty, &limits, &gov, &mut sim, |_, _| batches += 1).unwrap();
        assert_eq!((ms, batches), (0, 0));

        let mut offsets = vec![];
        let ms = play_motion_set(&two_keyframe_set(), &limits, &gov, &mut sim, |t, c| {
            offsets.push(t);
            assert_eq!(c.len(), 1);
        })
        .unwrap();
        assert_eq!(ms, 600);
        assert_eq!(offsets, vec![0, 300]);

        let lib = MotionLibrary::builtin();
        let before = sim.heading();
        play_motion_set(lib.for_turn(TurnDirection::Left), &limits, &gov, &mut sim, |_, _| {}).unwrap();
        assert!((sim.heading() - before - 0.26).abs() < 1e-12);
    }

    #[test]
    fn play_motion_set_rejects_invalid() {
        let mut set = two_keyframe_set();
        set.keyframes[0].angles.angles.insert(RobotJoint::RightKnee, -0.5);
        let mut sim = Simulator::default();
        let r = play_motion_set(
            &set,
            &LimitsTable::builtin(),
            &SpeedGovernorConfig::default(),
            &mut sim,
            |_, _| panic!("nothing should be emitted"),
        );
        assert!(matches!(r, Err(TeleopError::InvalidMotionSet { .. })));
    }

    #[test]
    fn playback_releases_on_schedule() {
        let mut p = MotionPlayback::new(two_keyframe_set(), 1_000_000);
        assert!(p.release_due(999_999).is_empty());
        assert_eq!(p.release_due(1_000_000).len(), 1);
        assert!(p.release_due(1_299_999).is_empty());
        assert_eq!(p.release_due(1_300_000).len(), 1);
        assert!(!p.is_finished(1_599_999));
        assert!(p.is_finished(1_600_000));
        assert_eq!(p.end_us(), 1_600_000);

        let mut late = MotionPlayback::new(two_keyframe_set(), 0);
        assert_eq!(late.release_due(10_000_000).len(), 2);
    }
}
