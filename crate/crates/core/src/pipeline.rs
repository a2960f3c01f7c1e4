//! The arbiter node: turns skeleton frames into upper-body commands and
//! gait motion, with walking and turning taking precedence over arm
//! imitation.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::actuation::{make_commands, JointCommand, SimRobotState, SpeedGovernorConfig};
use crate::bus::{
    Bus, Payload, Subscription, DEFAULT_QUEUE_CAPACITY, TOPIC_COMMANDS, TOPIC_GAIT_EVENTS, TOPIC_ROBOT_STATE, TOPIC_SKELETON,
    TOPIC_SKEL_ANGLES,
};
use crate::error::{Result, TeleopError};
use crate::locomotion::{
    decide_step, knee_angle, knee_depth, plan_turn, update_lift, GaitConfig, GaitEvent, GaitState,
    LiftEvent, MotionLibrary, MotionPlayback, MotionSet, StepDecision,
};
use crate::retarget::{Retargeter, UpperBodyAngles};
use crate::robot::{JointAngleSet, LimitsTable, RobotJoint};
use crate::skeleton::{quaternion_to_yaw, Side, SkeletonFrame, SkeletonJoint, StaleJointHold};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub frame_rate_hz: f64,
    /// Upper-body imitation runs on every n-th frame.
    pub imitation_interval_frames: u32,
    /// Input silence after which the robot is told to hold position.
    pub starvation_timeout_ms: u64,
    pub governor: SpeedGovernorConfig,
    pub gait: GaitConfig,
    /// Optional path to a motion-set file replacing the bundled sets.
    pub motion_sets: Option<String>,
    /// Optional path to a joint-limits file replacing the built-in table.
    pub limits: Option<String>,
    /// Remote bus hub (`host:port`); a private in-process bus when unset.
    pub bus: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frame_rate_hz: 20.0,
            imitation_interval_frames: 1,
            starvation_timeout_ms: 1000,
            governor: SpeedGovernorConfig::default(),
            gait: GaitConfig::default(),
            motion_sets: None,
            limits: None,
            bus: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return Err(TeleopError::Config(format!(
                "frame_rate_hz must be positive, got {}",
                self.frame_rate_hz
            )));
        }
        if self.imitation_interval_frames == 0 {
            return Err(TeleopError::Config("imitation_interval_frames must be at least 1".into()));
        }
        if self.starvation_timeout_ms == 0 {
            return Err(TeleopError::Config("starvation_timeout_ms must be positive".into()));
        }
        self.governor.validate()?;
        self.gait.validate()
    }

    /// Reads a TOML config. Unset keys keep their defaults:
    ///
    /// ```toml
    /// frame_rate_hz = 20.0
    /// imitation_interval_frames = 1
    ///
    /// [governor]
    /// base_speed_rad_s = 1.0
    ///
    /// [gait]
    /// knee_lift_threshold = 0.7
    /// depth_threshold = 0.08
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| TeleopError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative data-file paths are taken from the config's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.motion_sets, &mut cfg.limits].into_iter().flatten() {
            if Path::new(p.as_str()).is_relative() {
                *p = base.join(&*p).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    pub fn frame_period(&self) -> Duration {
        Duration::from_secs_f64(1.0 / self.frame_rate_hz)
    }

    pub fn load_limits(&self) -> Result<LimitsTable> {
        match &self.limits {
            Some(p) => LimitsTable::from_toml_str(&std::fs::read_to_string(p)?),
            None => Ok(LimitsTable::builtin()),
        }
    }

    pub fn load_motion_library(&self, limits: &LimitsTable) -> Result<MotionLibrary> {
        match &self.motion_sets {
            Some(p) => MotionLibrary::from_toml_str(&std::fs::read_to_string(p)?, limits),
            None => MotionLibrary::from_toml_str(crate::locomotion::DEFAULT_MOTION_SETS, limits),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Mode {
    Imitating,
    Locomoting { active: String, deadline_us: u64 },
}

/// One message the arbiter wants published.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub topic: &'static str,
    pub stamp_us: u64,
    pub payload: Payload,
}

impl Outgoing {
    fn new(topic: &'static str, stamp_us: u64, payload: Payload) -> Self {
        Self {
            topic,
            stamp_us,
            payload,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ArbiterCounters {
    pub frames_processed: u64,
    pub frames_out_of_order: u64,
    pub retarget_holds: u64,
    pub starvation_holds: u64,
}

/// Frame-driven arbiter state. Owned by a single loop.
#[derive(Debug, Clone)]
pub struct Arbiter {
    cfg: PipelineConfig,
    limits: LimitsTable,
    library: MotionLibrary,
    retargeter: Retargeter,
    hold: StaleJointHold,
    gait: GaitState,
    mode: Mode,
    playback: Option<MotionPlayback>,
    queued: VecDeque<MotionSet>,
    last_upper: Option<UpperBodyAngles>,
    /// Best knowledge of where each joint is: observed state, else last target.
    robot_view: BTreeMap<RobotJoint, f64>,
    yaw_window: VecDeque<f64>,
    turn_armed: bool,
    imitation_countdown: u32,
    last_stamp: Option<u64>,
    counters: ArbiterCounters,
}

impl Arbiter {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let limits = cfg.load_limits()?;
        let library = cfg.load_motion_library(&limits)?;
        Ok(Self::with_parts(cfg, limits, library))
    }

    pub fn with_parts(cfg: PipelineConfig, limits: LimitsTable, library: MotionLibrary) -> Self {
        let robot_view = limits.neutral_pose().angles;
        Self {
            retargeter: Retargeter::new(limits.clone()),
            cfg,
            limits,
            library,
            hold: StaleJointHold::new(),
            gait: GaitState::initial(),
            mode: Mode::Imitating,
            playback: None,
            queued: VecDeque::new(),
            last_upper: None,
            robot_view,
            yaw_window: VecDeque::new(),
            turn_armed: true,
            imitation_countdown: 0,
            last_stamp: None,
            counters: ArbiterCounters::default(),
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn mode(&self) -> &Mode {
        &self.mode
    }

    pub fn gait(&self) -> &GaitState {
        &self.gait
    }

    pub fn last_upper(&self) -> Option<&UpperBodyAngles> {
        self.last_upper.as_ref()
    }

    pub fn counters(&self) -> ArbiterCounters {
        self.counters
    }

    /// Folds measured joint angles into the view used for speed governing.
    pub fn observe_robot_state(&mut self, state: &SimRobotState) {
        for (&j, &a) in &state.current_angles {
            self.robot_view.insert(j, a);
        }
    }

    fn view_state(&self) -> SimRobotState {
        SimRobotState {
            stamp_us: 0,
            current_angles: self.robot_view.clone(),
            active_commands: BTreeMap::new(),
            pose: Default::default(),
        }
    }

    fn command(&mut self, targets: &JointAngleSet) -> Vec<JointCommand> {
        let commands = make_commands(&self.cfg.governor, targets, &self.view_state());
        for c in &commands {
            self.robot_view.insert(c.joint, c.target_angle);
        }
        commands
    }

    pub fn process_frame(&mut self, frame: &SkeletonFrame) -> Vec<Outgoing> {
        if self.last_stamp.is_some_and(|last| frame.stamp_us <= last) {
            self.counters.frames_out_of_order += 1;
            return Vec::new();
        }
        self.last_stamp = Some(frame.stamp_us);
        self.counters.frames_processed += 1;

        let now = frame.stamp_us;
        let frame = self.hold.filter(frame);
        let mut out = Vec::new();
        let gait_event = |ev: GaitEvent| {
            Outgoing::new(TOPIC_GAIT_EVENTS, ev.stamp_us(), Payload::GaitEvent(ev))
        };

        // Legs.
        let mut stepped = false;
        if let (Ok(left), Ok(right)) = (knee_angle(&frame, Side::Left), knee_angle(&frame, Side::Right)) {
            let (gait, event) = update_lift(&self.gait, &self.cfg.gait, left, right);
            self.gait = gait;
            match event {
                LiftEvent::None => {}
                LiftEvent::Lifted(leg) => out.push(gait_event(GaitEvent::Lifted { leg, stamp_us: now })),
                LiftEvent::Placed(leg) => {
                    if let (Ok(marked), Ok(unmarked)) =
                        (knee_depth(&frame, leg), knee_depth(&frame, leg.other()))
                    {
                        out.push(gait_event(GaitEvent::Placed {
                            leg,
                            depth_diff: marked - unmarked,
                            stamp_us: now,
                        }));
                        stepped = self.on_placed(leg, marked, unmarked, now, &mut out);
                    }
                }
            }
        }

        // Torso twist.
        if let Ok(torso) = frame.sample(SkeletonJoint::Torso) {
            if let Ok(yaw) = quaternion_to_yaw(torso.orientation) {
                self.on_yaw(yaw, now, stepped, &mut out);
            }
        }

        // Locomotion playback.
        if matches!(self.mode, Mode::Imitating) && !self.queued.is_empty() {
            out.push(gait_event(GaitEvent::LocomotionStarted { stamp_us: now }));
            self.start_next_set(now, &mut out);
        }
        let mut resumed = false;
        if matches!(self.mode, Mode::Locomoting { .. }) {
            resumed = self.advance_playback(now, &mut out);
        }

        // Upper body.
        if matches!(self.mode, Mode::Imitating) {
            if resumed {
                self.imitation_countdown = 0;
            }
            if self.imitation_countdown == 0 {
                self.imitation_countdown = self.cfg.imitation_interval_frames - 1;
                self.imitate(&frame, now, &mut out);
            } else {
                self.imitation_countdown -= 1;
            }
        }
        out
    }

    /// Returns whether a step was scheduled.
    fn on_placed(
        &mut self,
        leg: Side,
        marked: f64,
        unmarked: f64,
        now: u64,
        out: &mut Vec<Outgoing>,
    ) -> bool {
        match decide_step(&self.gait, &self.cfg.gait, leg, marked, unmarked) {
            Ok((decision, gait)) => {
                self.gait = gait;
                if decision == StepDecision::NoStep {
                    return false;
                }
                out.push(Outgoing::new(
                    TOPIC_GAIT_EVENTS,
                    now,
                    Payload::GaitEvent(GaitEvent::Step {
                        decision,
                        state: gait,
                        stamp_us: now,
                    }),
                ));
                if let Some(set) = self.library.for_step(decision) {
                    self.queued.push_back(set.clone());
                }
                true
            }
            Err(_) => {
                let lifted = self.gait.lifted_leg;
                self.gait = GaitState::initial();
                self.gait.lifted_leg = lifted;
                out.push(Outgoing::new(
                    TOPIC_GAIT_EVENTS,
                    now,
                    Payload::GaitEvent(GaitEvent::Reset { stamp_us: now }),
                ));
                false
            }
        }
    }

    fn on_yaw(&mut self, yaw: f64, now: u64, stepped: bool, out: &mut Vec<Outgoing>) {
        let g = &self.cfg.gait;
        self.yaw_window.push_back(yaw);
        while self.yaw_window.len() > g.turn_settle_frames {
            self.yaw_window.pop_front();
        }
        if yaw.abs() <= g.yaw_threshold {
            self.turn_armed = true;
            return;
        }
        let settled = self.yaw_window.len() == g.turn_settle_frames && {
            let lo = self.yaw_window.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = self.yaw_window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            hi - lo <= g.turn_settle_tolerance
        };
        let ready = self.turn_armed
            && settled
            && !stepped
            && matches!(self.mode, Mode::Imitating)
            && self.queued.is_empty()
            && self.gait.initial_state
            && self.gait.lifted_leg.is_none();
        if !ready {
            return;
        }
        let plan = plan_turn(g, yaw);
        let Some(direction) = plan.direction else {
            return;
        };
        self.turn_armed = false;
        out.push(Outgoing::new(
            TOPIC_GAIT_EVENTS,
            now,
            Payload::GaitEvent(GaitEvent::Turn {
                direction,
                steps: plan.steps,
                torso_yaw: yaw,
                stamp_us: now,
            }),
        ));
        let set = self.library.for_turn(direction).clone();
        for _ in 0..plan.steps {
            self.queued.push_back(set.clone());
        }
    }

    fn start_next_set(&mut self, start_us: u64, out: &mut Vec<Outgoing>) {
        let Some(set) = self.queued.pop_front() else {
            return;
        };
        out.push(Outgoing::new(
            TOPIC_GAIT_EVENTS,
            start_us,
            Payload::GaitEvent(GaitEvent::MotionStarted {
                name: set.name.clone(),
                stamp_us: start_us,
            }),
        ));
        let playback = MotionPlayback::new(set, start_us);
        self.mode = Mode::Locomoting {
            active: playback.set().name.clone(),
            deadline_us: playback.end_us(),
        };
        self.playback = Some(playback);
    }

    /// Emits due keyframes; returns true when the last set finished and the
    /// arbiter went back to imitating.
    fn advance_playback(&mut self, now: u64, out: &mut Vec<Outgoing>) -> bool {
        loop {
            let Some(mut playback) = self.playback.take() else {
                self.mode = Mode::Imitating;
                return true;
            };
            let due: Vec<JointAngleSet> = playback
                .release_due(now)
                .into_iter()
                .map(|k| k.angles.clone())
                .collect();
            for mut targets in due {
                targets.stamp_us = now;
                let commands = self.command(&targets);
                out.push(Outgoing::new(TOPIC_COMMANDS, now, Payload::JointCommands(commands)));
            }
            if !playback.is_finished(now) {
                self.playback = Some(playback);
                return false;
            }
            let set = playback.set();
            out.push(Outgoing::new(
                TOPIC_GAIT_EVENTS,
                playback.end_us(),
                Payload::GaitEvent(GaitEvent::MotionCompleted {
                    name: set.name.clone(),
                    heading_delta: set.heading_delta,
                    displacement: set.displacement,
                    stamp_us: playback.end_us(),
                }),
            ));
            if self.queued.is_empty() {
                self.mode = Mode::Imitating;
                out.push(Outgoing::new(
                    TOPIC_GAIT_EVENTS,
                    now,
                    Payload::GaitEvent(GaitEvent::LocomotionFinished { stamp_us: now }),
                ));
                return true;
            }
            self.start_next_set(playback.end_us(), out);
        }
    }

    fn imitate(&mut self, frame: &SkeletonFrame, now: u64, out: &mut Vec<Outgoing>) {
        let upper = match self.retargeter.retarget_upper_body(frame) {
            Ok(u) => u,
            Err(_) => {
                self.counters.retarget_holds += 1;
                match self.last_upper {
                    Some(prev) => UpperBodyAngles {
                        stamp_us: now,
                        ..prev
                    },
                    None => return,
                }
            }
        };
        self.last_upper = Some(upper);
        let targets = self.limits.clamp_set(&upper.to_angle_set());
        let commands = self.command(&targets);
        out.push(Outgoing::new(TOPIC_SKEL_ANGLES, now, Payload::JointAngles(targets)));
        out.push(Outgoing::new(TOPIC_COMMANDS, now, Payload::JointCommands(commands)));
    }

    /// Input went quiet: abort locomotion, hold every joint where it was
    /// last sent, and reset the gait to feet-together.
    pub fn hold_position(&mut self, stamp_us: u64) -> Vec<Outgoing> {
        self.counters.starvation_holds += 1;
        self.playback = None;
        self.queued.clear();
        self.mode = Mode::Imitating;
        self.gait = GaitState::initial();
        self.yaw_window.clear();
        self.turn_armed = true;
        let hold = JointAngleSet {
            stamp_us,
            angles: self.robot_view.clone(),
        };
        let commands = make_commands(&self.cfg.governor, &hold, &self.view_state());
        vec![
            Outgoing::new(TOPIC_COMMANDS, stamp_us, Payload::JointCommands(commands)),
            Outgoing::new(
                TOPIC_GAIT_EVENTS,
                stamp_us,
                Payload::GaitEvent(GaitEvent::Reset { stamp_us }),
            ),
        ]
    }
}

/// Result of a [`run`] loop.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub counters: ArbiterCounters,
    /// Messages lost by the input subscription's overflow policy.
    pub input_drops: u64,
    pub final_hold: Vec<JointCommand>,
}

pub fn publish_all(bus: &Bus, out: Vec<Outgoing>) -> Result<()> {
    for o in out {
        bus.publish(o.topic, o.stamp_us, o.payload)?;
    }
    Ok(())
}

/// Service loop: consumes skeleton frames (and robot state) from `bus`,
/// publishes arbiter output. Holds position when input starves for the
/// configured timeout; returns after `stop` is raised or the bus closes,
/// sending a final hold.
pub fn run(cfg: PipelineConfig, bus: &Bus, stop: Arc<AtomicBool>) -> Result<RunReport> {
    let input = subscribe_input(bus)?;
    run_with_input(cfg, bus, input, stop)
}

/// The subscription [`run`] reads from. Taking it before starting the loop
/// guarantees nothing published afterwards is missed.
pub fn subscribe_input(bus: &Bus) -> Result<Subscription> {
    bus.subscribe_many(&[TOPIC_SKELETON, TOPIC_ROBOT_STATE], DEFAULT_QUEUE_CAPACITY)
}

pub fn run_with_input(
    cfg: PipelineConfig,
    bus: &Bus,
    input: Subscription,
    stop: Arc<AtomicBool>,
) -> Result<RunReport> {
    let mut arbiter = Arbiter::new(cfg)?;
    let starvation = Duration::from_millis(arbiter.config().starvation_timeout_ms);
    let poll = starvation.min(Duration::from_millis(100));
    let mut silent = Duration::ZERO;
    let mut held = false;
    let mut last_stamp = 0;

    let final_hold = loop {
        if stop.load(Ordering::SeqCst) {
            break arbiter.hold_position(last_stamp);
        }
        match input.recv_timeout(poll) {
            Ok(Some(env)) => match env.payload {
                Payload::SkeletonFrame(frame) => {
                    silent = Duration::ZERO;
                    held = false;
                    last_stamp = last_stamp.max(frame.stamp_us);
                    publish_all(bus, arbiter.process_frame(&frame))?;
                }
                Payload::RobotState(state) => arbiter.observe_robot_state(&state),
                _ => {}
            },
            Ok(None) => {
                silent += poll;
                if silent >= starvation && !held {
                    held = true;
                    last_stamp += starvation.as_micros() as u64;
                    publish_all(bus, arbiter.hold_position(last_stamp))?;
                }
            }
            Err(TeleopError::Disconnected) => break arbiter.hold_position(last_stamp),
            Err(e) => return Err(e),
        }
    };

    let commands = final_hold
        .iter()
        .find_map(|o| match &o.payload {
            Payload::JointCommands(c) => Some(c.clone()),
            _ => None,
        })
        .unwrap_or_default();
    // Best effort: the bus may already be closed.
    let _ = publish_all(bus, final_hold);
    Ok(RunReport {
        counters: arbiter.counters(),
        input_drops: input.dropped(),
        final_hold: commands,
    })
}
