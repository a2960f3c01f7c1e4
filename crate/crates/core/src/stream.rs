//! Stream files: a header line followed by one skeleton envelope per line.
//! Also replay onto a bus and synthetic operator scenarios.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bus::wire::{decode_envelope, encode_envelope};
use crate::bus::{Bus, Envelope, Payload, Subscription, TOPIC_SKELETON};
use crate::error::{Result, TeleopError};
use crate::skeleton::{JointSample, Point3, Quaternion, SkeletonFrame, SkeletonJoint, Vec3};

pub const STREAM_FORMAT: &str = "teleop-stream/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub format: String,
    pub joints: Vec<SkeletonJoint>,
    pub frame_rate_hz: f64,
}

impl StreamHeader {
    pub fn new(frame_rate_hz: f64) -> Self {
        Self {
            format: STREAM_FORMAT.to_string(),
            joints: SkeletonJoint::ALL.to_vec(),
            frame_rate_hz,
        }
    }

    fn check(&self) -> Result<()> {
        if self.format != STREAM_FORMAT {
            return Err(stream_err(1, format!("unsupported format `{}`", self.format)));
        }
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return Err(stream_err(1, format!("bad frame rate {}", self.frame_rate_hz)));
        }
        Ok(())
    }
}

fn stream_err(line: usize, reason: impl Into<String>) -> TeleopError {
    TeleopError::Stream {
        line,
        reason: reason.into(),
    }
}

/// Incremental stream-file writer. Frame `k` (1-based) lands on line `k + 1`.
pub struct StreamWriter<W: Write> {
    out: W,
    count: usize,
    last_stamp: Option<u64>,
}

impl<W: Write> StreamWriter<W> {
    pub fn new(mut out: W, header: &StreamHeader) -> Result<Self> {
        header.check()?;
        let mut line = serde_json::to_vec(header)?;
        line.push(b'\n');
        out.write_all(&line)?;
        Ok(Self {
            out,
            count: 0,
            last_stamp: None,
        })
    }

    pub fn write_frame(&mut self, frame: &SkeletonFrame) -> Result<()> {
        let line = self.count + 2;
        frame
            .validate()
            .map_err(|e| stream_err(line, e.to_string()))?;
        if self.last_stamp.is_some_and(|last| frame.stamp_us <= last) {
            return Err(stream_err(
                line,
                format!("stamp {} does not increase", frame.stamp_us),
            ));
        }
        let env = Envelope {
            topic: TOPIC_SKELETON.to_string(),
            seq: self.count as u64,
            stamp_us: frame.stamp_us,
            payload: Payload::SkeletonFrame(frame.clone()),
        };
        let mut text = encode_envelope(&env)?;
        text.push('\n');
        self.out.write_all(text.as_bytes())?;
        self.last_stamp = Some(frame.stamp_us);
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(mut self) -> Result<usize> {
        self.out.flush()?;
        Ok(self.count)
    }
}

/// Writes header and frames; returns the number of frames written.
pub fn record<'a, W: Write>(
    frames: impl IntoIterator<Item = &'a SkeletonFrame>,
    frame_rate_hz: f64,
    out: W,
) -> Result<usize> {
    let mut w = StreamWriter::new(out, &StreamHeader::new(frame_rate_hz))?;
    for f in frames {
        w.write_frame(f)?;
    }
    w.finish()
}

/// Records skeleton frames arriving on `sub` until the bus closes.
pub fn record_subscription<W: Write>(sub: &Subscription, frame_rate_hz: f64, out: W) -> Result<usize> {
    let mut w = StreamWriter::new(out, &StreamHeader::new(frame_rate_hz))?;
    loop {
        match sub.recv() {
            Ok(Envelope {
                payload: Payload::SkeletonFrame(frame),
                ..
            }) => {
                w.write_frame(&frame)?;
                w.out.flush()?;
            }
            Ok(_) => {}
            Err(TeleopError::Disconnected) => break,
            Err(e) => return Err(e),
        }
    }
    w.finish()
}

/// Pull parser over a stream file. Yields frames until end of input, or an
/// error naming the offending line.
pub struct StreamReader<R: BufRead> {
    input: R,
    header: StreamHeader,
    line_no: usize,
    last_stamp: Option<u64>,
    buf: String,
}

impl<R: BufRead> StreamReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let mut buf = String::new();
        if input.read_line(&mut buf)? == 0 {
            return Err(stream_err(1, "missing header"));
        }
        let header: StreamHeader =
            serde_json::from_str(buf.trim_end()).map_err(|e| stream_err(1, e.to_string()))?;
        header.check()?;
        Ok(Self {
            input,
            header,
            line_no: 1,
            last_stamp: None,
            buf,
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    fn next_frame(&mut self) -> Result<Option<SkeletonFrame>> {
        loop {
            self.buf.clear();
            if self.input.read_line(&mut self.buf)? == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            if !self.buf.trim().is_empty() {
                break;
            }
        }
        let line = self.line_no;
        if !self.buf.ends_with('\n') {
            return Err(stream_err(line, "truncated line"));
        }
        let env = decode_envelope(&self.buf).map_err(|e| stream_err(line, e.to_string()))?;
        let Payload::SkeletonFrame(frame) = env.payload else {
            return Err(stream_err(line, format!("expected a skeleton frame, got {}", env.payload.kind())));
        };
        if env.stamp_us != frame.stamp_us {
            return Err(stream_err(line, "envelope and frame stamps differ"));
        }
        frame.validate().map_err(|e| stream_err(line, e.to_string()))?;
        if self.last_stamp.is_some_and(|last| frame.stamp_us <= last) {
            return Err(stream_err(line, format!("stamp {} does not increase", frame.stamp_us)));
        }
        self.last_stamp = Some(frame.stamp_us);
        Ok(Some(frame))
    }
}

impl<R: BufRead> Iterator for StreamReader<R> {
    type Item = Result<SkeletonFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame().transpose()
    }
}

/// Reads a whole stream file.
pub fn read_stream<R: BufRead>(input: R) -> Result<(StreamHeader, Vec<SkeletonFrame>)> {
    let mut reader = StreamReader::new(input)?;
    let frames = reader.by_ref().collect::<Result<Vec<_>>>()?;
    Ok((reader.header, frames))
}

/// Publishes frames on the skeleton topic. Inter-frame gaps follow the
/// stamps divided by `speed`; `speed == 0` publishes back to back.
/// `on_publish` sees each frame right before it goes out.
pub fn replay_frames<I>(
    frames: I,
    speed: f64,
    mut publish: impl FnMut(SkeletonFrame) -> Result<()>,
) -> Result<usize>
where
    I: IntoIterator<Item = Result<SkeletonFrame>>,
{
    if !(speed.is_finite() && speed >= 0.0) {
        return Err(TeleopError::Config(format!("replay speed must be >= 0, got {speed}")));
    }
    let mut origin: Option<(Instant, u64)> = None;
    let mut count = 0;
    for frame in frames {
        let frame = frame?;
        if speed > 0.0 {
            let (start, first_stamp) = *origin.get_or_insert((Instant::now(), frame.stamp_us));
            let offset = (frame.stamp_us - first_stamp) as f64 / 1e6 / speed;
            let due = start + Duration::from_secs_f64(offset);
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        publish(frame)?;
        count += 1;
    }
    Ok(count)
}

/// Replays a stream file onto `bus`. Frames before a bad line are
/// published; the bad line is reported as an error.
pub fn replay<R: BufRead>(input: R, speed: f64, bus: &Bus) -> Result<usize> {
    let reader = StreamReader::new(input)?;
    replay_frames(reader, speed, |f| {
        bus.publish(TOPIC_SKELETON, f.stamp_us, Payload::SkeletonFrame(f))
            .map(|_| ())
    })
}

/// Low-dimensional operator controls; [`Puppet::frame`] expands them into a
/// full 15-joint skeleton.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Puppet {
    pub right_arm: ArmControls,
    pub left_arm: ArmControls,
    pub right_leg: LegControls,
    pub left_leg: LegControls,
    pub torso_yaw: f64,
}

/// Arm angles as the retargeter would read them back: pitch forward from
/// hanging straight down, roll outward, elbow flexion.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArmControls {
    pub pitch: f64,
    pub roll: f64,
    pub elbow: f64,
}

/// `swing` tilts the whole leg in the sagittal plane (positive = knee toward
/// the sensor); `bend` is the knee flexion.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LegControls {
    pub swing: f64,
    pub bend: f64,
}

pub const UPPER_ARM: f64 = 0.3;
pub const FOREARM: f64 = 0.25;
pub const THIGH: f64 = 0.4;
pub const SHIN: f64 = 0.4;
const BODY_DEPTH: f64 = 2.0;

impl Puppet {
    pub fn frame(&self, stamp_us: u64) -> SkeletonFrame {
        let p = Point3::new;
        let mut joints = std::collections::BTreeMap::new();
        let mut put = |j: SkeletonJoint, pos: Point3| {
            joints.insert(j, JointSample::at(pos));
        };
        put(SkeletonJoint::Head, p(0.0, 1.7, BODY_DEPTH));
        put(SkeletonJoint::Neck, p(0.0, 1.5, BODY_DEPTH));
        for (side_x, arm, [s, e, h]) in [
            (1.0, self.right_arm, [SkeletonJoint::RightShoulder, SkeletonJoint::RightElbow, SkeletonJoint::RightHand]),
            (-1.0, self.left_arm, [SkeletonJoint::LeftShoulder, SkeletonJoint::LeftElbow, SkeletonJoint::LeftHand]),
        ] {
            let shoulder = p(0.2 * side_x, 1.45, BODY_DEPTH);
            let up = Vec3::new(
                side_x * arm.roll.sin(),
                -arm.roll.cos() * arm.pitch.cos(),
                -arm.roll.cos() * arm.pitch.sin(),
            );
            // Forearm leaves the upper-arm line by `elbow`, bending toward the
            // sensor side of the arm.
            let toward = Vec3::new(0.0, 0.0, -1.0);
            let mut n = toward + up.scale(-up.dot(&toward));
            if n.norm() < 1e-6 {
                n = Vec3::new(0.0, 1.0, 0.0);
            }
            let n = n.scale(1.0 / n.norm());
            let fore = up.scale(arm.elbow.cos()) + n.scale(arm.elbow.sin());
            let elbow = shoulder + up.scale(UPPER_ARM);
            put(s, shoulder);
            put(e, elbow);
            put(h, elbow + fore.scale(FOREARM));
        }
        for (side_x, leg, [hj, kj, fj]) in [
            (1.0, self.right_leg, [SkeletonJoint::RightHip, SkeletonJoint::RightKnee, SkeletonJoint::RightFoot]),
            (-1.0, self.left_leg, [SkeletonJoint::LeftHip, SkeletonJoint::LeftKnee, SkeletonJoint::LeftFoot]),
        ] {
            let hip = p(0.1 * side_x, 0.9, BODY_DEPTH);
            let thigh = Vec3::new(0.0, -leg.swing.cos(), -leg.swing.sin());
            let shin_angle = leg.swing - leg.bend;
            let shin = Vec3::new(0.0, -shin_angle.cos(), -shin_angle.sin());
            let knee = hip + thigh.scale(THIGH);
            put(hj, hip);
            put(kj, knee);
            put(fj, knee + shin.scale(SHIN));
        }
        let mut torso = JointSample::at(p(0.0, 1.2, BODY_DEPTH));
        torso.orientation = Quaternion::from_yaw(self.torso_yaw);
        joints.insert(SkeletonJoint::Torso, torso);
        SkeletonFrame { stamp_us, joints }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scenario {
    ArmWave,
    ForwardStep,
    BackwardStep,
    /// Torso twist to the given yaw in radians, positive to the left.
    Turn(f64),
    Idle,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::ArmWave => f.write_str("arm_wave"),
            Scenario::ForwardStep => f.write_str("forward_step"),
            Scenario::BackwardStep => f.write_str("backward_step"),
            Scenario::Turn(a) => write!(f, "turn({a})"),
            Scenario::Idle => f.write_str("idle"),
        }
    }
}

impl FromStr for Scenario {
    type Err = TeleopError;

    /// Accepts `turn(0.6)`, `turn:0.6` and `turn=0.6`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "arm_wave" => return Ok(Scenario::ArmWave),
            "forward_step" => return Ok(Scenario::ForwardStep),
            "backward_step" => return Ok(Scenario::BackwardStep),
            "idle" => return Ok(Scenario::Idle),
            _ => {}
        }
        let unknown = || TeleopError::UnknownScenario(s.to_string());
        let arg = s
            .strip_prefix("turn(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("turn:"))
            .or_else(|| s.strip_prefix("turn="))
            .ok_or_else(unknown)?;
        let angle = arg
            .trim()
            .parse::<f64>()
            .ok()
            .or_else(|| crate::robot::parse_pi_expr(arg.trim()).ok())
            .filter(|a| a.is_finite())
            .ok_or_else(unknown)?;
        Ok(Scenario::Turn(angle))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub frame_rate_hz: f64,
    /// Overrides the scenario's natural length.
    pub duration_s: Option<f64>,
    /// Waves the arms on top of the scenario's own motion.
    pub wave_arms: bool,
    /// Knee travel toward (forward) or away from (backward) the sensor at
    /// placement, metres.
    pub step_depth: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            frame_rate_hz: 20.0,
            duration_s: None,
            wave_arms: false,
            step_depth: 0.15,
        }
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn wave(t: f64) -> (ArmControls, ArmControls) {
    let w = 2.0 * PI * 0.5 * t;
    let right = ArmControls {
        pitch: 0.7 + 0.6 * w.sin(),
        roll: 0.35 + 0.25 * (0.5 * w).sin(),
        elbow: 0.9 + 0.5 * w.cos(),
    };
    let left = ArmControls {
        pitch: 0.7 - 0.6 * w.sin(),
        roll: 0.35 + 0.25 * (0.5 * w).cos(),
        elbow: 0.9 - 0.5 * w.cos(),
    };
    (right, left)
}

/// One leg lift lasting `LIFT_S`: the leg swings to its new stance over the
/// first 60 % while the knee bends up to 1.2 rad and straightens again.
const LIFT_S: f64 = 1.0;
const LIFT_START_S: f64 = 0.5;

fn lift(t: f64, swing_to: f64) -> LegControls {
    let u = ((t - LIFT_START_S) / LIFT_S).clamp(0.0, 1.0);
    LegControls {
        swing: swing_to * smoothstep(u / 0.6),
        bend: 1.2 * (PI * u).sin(),
    }
}

fn turn_steps_estimate(angle: f64) -> f64 {
    (angle.abs() / 0.26).ceil().clamp(1.0, 12.0)
}

impl Scenario {
    /// Natural length in seconds, long enough for the triggered motion to
    /// play out and imitation to resume.
    pub fn duration_s(&self) -> f64 {
        match self {
            Scenario::ArmWave => 4.0,
            Scenario::ForwardStep | Scenario::BackwardStep => 4.0,
            Scenario::Turn(a) => 2.5 + 0.8 * turn_steps_estimate(*a) + 1.0,
            Scenario::Idle => 2.0,
        }
    }

    fn puppet_at(&self, t: f64, params: &SynthParams) -> Puppet {
        let mut p = Puppet::default();
        let swing = (params.step_depth / THIGH).clamp(-1.0, 1.0).asin();
        match *self {
            Scenario::Idle => {}
            Scenario::ArmWave => (p.right_arm, p.left_arm) = wave(t),
            Scenario::ForwardStep => p.right_leg = lift(t, swing),
            Scenario::BackwardStep => p.right_leg = lift(t, -swing),
            Scenario::Turn(angle) => {
                // Twist in, hold while the turn plays, untwist.
                let hold = 0.8 * turn_steps_estimate(angle) + 0.5;
                let twist = smoothstep((t - 0.5) / 0.5) * (1.0 - smoothstep((t - 1.0 - hold) / 0.5));
                p.torso_yaw = angle * twist;
            }
        }
        if params.wave_arms {
            (p.right_arm, p.left_arm) = wave(t);
        }
        p
    }
}

/// Generates the frames of a scenario, stamped from 0 at the frame rate.
pub fn synth(scenario: Scenario, params: &SynthParams) -> Result<Vec<SkeletonFrame>> {
    if !(params.frame_rate_hz.is_finite() && params.frame_rate_hz > 0.0) {
        return Err(TeleopError::Config(format!("bad frame rate {}", params.frame_rate_hz)));
    }
    let duration = params.duration_s.unwrap_or_else(|| scenario.duration_s());
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(TeleopError::Config(format!("bad duration {duration}")));
    }
    let n = (duration * params.frame_rate_hz).round() as u64;
    let period_us = 1e6 / params.frame_rate_hz;
    Ok((0..n)
        .map(|i| {
            let stamp_us = (i as f64 * period_us).round() as u64;
            scenario
                .puppet_at(stamp_us as f64 / 1e6, params)
                .frame(stamp_us)
        })
        .collect())
}

/// Parses a scenario name and synthesizes it.
pub fn synth_named(name: &str, params: &SynthParams) -> Result<Vec<SkeletonFrame>> {
    synth(name.parse()?, params)
}
