//! Human-side data model: tracked skeleton points, orientations and frames,
//! plus the three-point joint angle and torso yaw extraction.
//!
//! Frame convention: +x is the operator's right (operator facing the
//! sensor), +y is up, +z points away from the sensor. Larger z is deeper.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TeleopError};

/// Segments shorter than this are treated as overlapping skeleton points.
pub const SEGMENT_EPSILON: f64 = 1e-6;

/// Joints reported below this confidence are stale.
pub const STALE_CONFIDENCE: f64 = 0.5;

const QUATERNION_MIN_NORM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add<Vec3> for Point3 {
    type Output = Point3;

    fn add(self, v: Vec3) -> Point3 {
        Point3::new(self.x + v.dx, self.y + v.dy, self.z + v.dz)
    }
}

impl Sub for Point3 {
    type Output = Vec3;

    fn sub(self, other: Point3) -> Vec3 {
        vector_between(self, other)
    }
}

/// A displacement between two skeleton points, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl Vec3 {
    pub const fn new(dx: f64, dy: f64, dz: f64) -> Self {
        Self { dx, dy, dz }
    }

    pub fn dot(&self, other: &Vec3) -> f64 {
        self.dx * other.dx + self.dy * other.dy + self.dz * other.dz
    }

    pub fn cross(&self, other: &Vec3) -> Vec3 {
        Vec3::new(
            self.dy * other.dz - self.dz * other.dy,
            self.dz * other.dx - self.dx * other.dz,
            self.dx * other.dy - self.dy * other.dx,
        )
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, k: f64) -> Vec3 {
        Vec3::new(self.dx * k, self.dy * k, self.dz * k)
    }
}

impl Add for Vec3 {
    type Output = Vec3;

    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.dx + o.dx, self.dy + o.dy, self.dz + o.dz)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;

    fn neg(self) -> Vec3 {
        Vec3::new(-self.dx, -self.dy, -self.dz)
    }
}

/// Rotation quaternion, scalar first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation by `angle` radians about the vertical (+y) axis.
    pub fn from_yaw(angle: f64) -> Self {
        let (s, c) = (angle / 2.0).sin_cos();
        Self::new(c, 0.0, s, 0.0)
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if n <= QUATERNION_MIN_NORM {
            return Err(TeleopError::DegenerateQuaternion { norm: n });
        }
        let (s, c) = (angle / 2.0).sin_cos();
        let a = axis.scale(s / n);
        Ok(Self::new(c, a.dx, a.dy, a.dz))
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !n.is_finite() || n <= QUATERNION_MIN_NORM {
            return Err(TeleopError::DegenerateQuaternion { norm: n });
        }
        Ok(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Rotates `v` by this (unit) quaternion: q v q*.
    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let u = Vec3::new(self.x, self.y, self.z);
        let t = u.cross(&v).scale(2.0);
        v + t.scale(self.w) + u.cross(&t)
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, o: Quaternion) -> Quaternion {
        Quaternion::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointSample {
    pub position: Point3,
    pub orientation: Quaternion,
    pub confidence: f64,
}

impl JointSample {
    pub fn new(position: Point3, orientation: Quaternion, confidence: f64) -> Self {
        Self {
            position,
            orientation,
            confidence,
        }
    }

    /// A fully confident sample with identity orientation.
    pub fn at(position: Point3) -> Self {
        Self::new(position, Quaternion::IDENTITY, 1.0)
    }

    pub fn is_stale(&self) -> bool {
        self.confidence < STALE_CONFIDENCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkeletonJoint {
    Head,
    Neck,
    Torso,
    LeftShoulder,
    LeftElbow,
    LeftHand,
    RightShoulder,
    RightElbow,
    RightHand,
    LeftHip,
    LeftKnee,
    LeftFoot,
    RightHip,
    RightKnee,
    RightFoot,
}

impl SkeletonJoint {
    pub const ALL: [SkeletonJoint; 15] = [
        SkeletonJoint::Head,
        SkeletonJoint::Neck,
        SkeletonJoint::Torso,
        SkeletonJoint::LeftShoulder,
        SkeletonJoint::LeftElbow,
        SkeletonJoint::LeftHand,
        SkeletonJoint::RightShoulder,
        SkeletonJoint::RightElbow,
        SkeletonJoint::RightHand,
        SkeletonJoint::LeftHip,
        SkeletonJoint::LeftKnee,
        SkeletonJoint::LeftFoot,
        SkeletonJoint::RightHip,
        SkeletonJoint::RightKnee,
        SkeletonJoint::RightFoot,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SkeletonJoint::Head => "head",
            SkeletonJoint::Neck => "neck",
            SkeletonJoint::Torso => "torso",
            SkeletonJoint::LeftShoulder => "left_shoulder",
            SkeletonJoint::LeftElbow => "left_elbow",
            SkeletonJoint::LeftHand => "left_hand",
            SkeletonJoint::RightShoulder => "right_shoulder",
            SkeletonJoint::RightElbow => "right_elbow",
            SkeletonJoint::RightHand => "right_hand",
            SkeletonJoint::LeftHip => "left_hip",
            SkeletonJoint::LeftKnee => "left_knee",
            SkeletonJoint::LeftFoot => "left_foot",
            SkeletonJoint::RightHip => "right_hip",
            SkeletonJoint::RightKnee => "right_knee",
            SkeletonJoint::RightFoot => "right_foot",
        }
    }

    /// The same joint on the other side of the body; axial joints map to themselves.
    pub fn mirrored(&self) -> SkeletonJoint {
        use SkeletonJoint::*;
        match self {
            Head | Neck | Torso => *self,
            LeftShoulder => RightShoulder,
            LeftElbow => RightElbow,
            LeftHand => RightHand,
            RightShoulder => LeftShoulder,
            RightElbow => LeftElbow,
            RightHand => LeftHand,
            LeftHip => RightHip,
            LeftKnee => RightKnee,
            LeftFoot => RightFoot,
            RightHip => LeftHip,
            RightKnee => LeftKnee,
            RightFoot => LeftFoot,
        }
    }
}

impl fmt::Display for SkeletonJoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SkeletonJoint {
    type Err = TeleopError;

    fn from_str(s: &str) -> Result<Self> {
        SkeletonJoint::ALL
            .iter()
            .copied()
            .find(|j| j.as_str() == s)
            .ok_or_else(|| TeleopError::InvalidFrame(format!("unknown skeleton joint `{s}`")))
    }
}

/// Left or right side of the body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    pub fn shoulder(self) -> SkeletonJoint {
        match self {
            Side::Left => SkeletonJoint::LeftShoulder,
            Side::Right => SkeletonJoint::RightShoulder,
        }
    }

    pub fn elbow(self) -> SkeletonJoint {
        match self {
            Side::Left => SkeletonJoint::LeftElbow,
            Side::Right => SkeletonJoint::RightElbow,
        }
    }

    pub fn hand(self) -> SkeletonJoint {
        match self {
            Side::Left => SkeletonJoint::LeftHand,
            Side::Right => SkeletonJoint::RightHand,
        }
    }

    pub fn hip(self) -> SkeletonJoint {
        match self {
            Side::Left => SkeletonJoint::LeftHip,
            Side::Right => SkeletonJoint::RightHip,
        }
    }

    pub fn knee(self) -> SkeletonJoint {
        match self {
            Side::Left => SkeletonJoint::LeftKnee,
            Side::Right => SkeletonJoint::RightKnee,
        }
    }

    pub fn foot(self) -> SkeletonJoint {
        match self {
            Side::Left => SkeletonJoint::LeftFoot,
            Side::Right => SkeletonJoint::RightFoot,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

/// One timestamped human pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonFrame {
    pub stamp_us: u64,
    pub joints: BTreeMap<SkeletonJoint, JointSample>,
}

impl SkeletonFrame {
    /// Builds a frame and checks it against [`SkeletonFrame::validate`].
    pub fn new(stamp_us: u64, joints: BTreeMap<SkeletonJoint, JointSample>) -> Result<Self> {
        let frame = Self { stamp_us, joints };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        for joint in SkeletonJoint::ALL {
            let Some(sample) = self.joints.get(&joint) else {
                return Err(TeleopError::InvalidFrame(format!("joint `{joint}` absent")));
            };
            if !sample.position.is_finite() {
                return Err(TeleopError::InvalidFrame(format!(
                    "joint `{joint}` has a non-finite position"
                )));
            }
            if !(0.0..=1.0).contains(&sample.confidence) {
                return Err(TeleopError::InvalidFrame(format!(
                    "joint `{joint}` confidence {} outside [0, 1]",
                    sample.confidence
                )));
            }
            if !sample.orientation.is_finite() || sample.orientation.norm() <= QUATERNION_MIN_NORM {
                return Err(TeleopError::InvalidFrame(format!(
                    "joint `{joint}` has a degenerate orientation"
                )));
            }
        }
        // The map key type makes extra names impossible, so 15 present means exactly 15.
        Ok(())
    }

    pub fn sample(&self, joint: SkeletonJoint) -> Result<&JointSample> {
        self.joints.get(&joint).ok_or(TeleopError::MissingJoint(joint))
    }

    pub fn position(&self, joint: SkeletonJoint) -> Result<Point3> {
        self.sample(joint).map(|s| s.position)
    }
}

/// Replaces low-confidence joints with the last confident sample seen for
/// that joint. Joints that have never been confident are dropped from the
/// filtered frame, so downstream lookups report `MissingJoint`.
#[derive(Debug, Clone, Default)]
pub struct StaleJointHold {
    last_confident: BTreeMap<SkeletonJoint, JointSample>,
}

impl StaleJointHold {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn filter(&mut self, frame: &SkeletonFrame) -> SkeletonFrame {
        let mut joints = BTreeMap::new();
        for (&joint, sample) in &frame.joints {
            if sample.is_stale() {
                if let Some(held) = self.last_confident.get(&joint) {
                    joints.insert(joint, *held);
                }
            } else {
                self.last_confident.insert(joint, *sample);
                joints.insert(joint, *sample);
            }
        }
        SkeletonFrame {
            stamp_us: frame.stamp_us,
            joints,
        }
    }

    pub fn clear(&mut self) {
        self.last_confident.clear();
    }
}

/// Displacement `a - b`.
pub fn vector_between(a: Point3, b: Point3) -> Vec3 {
    Vec3::new(a.x - b.x, a.y - b.y, a.z - b.z)
}

/// Angle at `b` formed by the skeleton points `a`, `b`, `c`, using
/// `AB = a - b` and `BC = b - c`. A straight limb (b between a and c on one
/// line) gives 0; a limb folded back on itself gives π.
pub fn joint_angle(a: Point3, b: Point3, c: Point3) -> Result<f64> {
    let ab = vector_between(a, b);
    let bc = vector_between(b, c);
    let (nab, nbc) = (ab.norm(), bc.norm());
    if nab <= SEGMENT_EPSILON {
        return Err(TeleopError::DegenerateSegment { norm: nab });
    }
    if nbc <= SEGMENT_EPSILON {
        return Err(TeleopError::DegenerateSegment { norm: nbc });
    }
    let cos = (ab.dot(&bc) / (nab * nbc)).clamp(-1.0, 1.0);
    Ok(cos.acos())
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Rotation about the vertical axis, extracted first from a yaw-pitch-roll
/// (y, x, z intrinsic) decomposition. Positive yaw turns the operator's
/// facing direction toward their left.
pub fn quaternion_to_yaw(q: Quaternion) -> Result<f64> {
    let q = q.normalized()?;
    let sin_term = 2.0 * (q.x * q.z + q.w * q.y);
    let cos_term = 1.0 - 2.0 * (q.x * q.x + q.y * q.y);
    let yaw = sin_term.atan2(cos_term);
    Ok(if yaw <= -PI { PI } else { yaw })
}
