//! The robot's 20-joint inventory, joint axes and motion limits.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TeleopError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotJoint {
    RightShoulderPitch,
    LeftShoulderPitch,
    RightShoulderRoll,
    LeftShoulderRoll,
    RightElbow,
    LeftElbow,
    RightHipYaw,
    LeftHipYaw,
    RightHipPitch,
    LeftHipPitch,
    RightHipRoll,
    LeftHipRoll,
    RightKnee,
    LeftKnee,
    RightAnkleRoll,
    LeftAnkleRoll,
    RightAnklePitch,
    LeftAnklePitch,
    HeadYaw,
    HeadPitch,
}

impl RobotJoint {
    /// All joints, ordered by joint number.
    pub const ALL: [RobotJoint; 20] = [
        RobotJoint::RightShoulderPitch,
        RobotJoint::LeftShoulderPitch,
        RobotJoint::RightShoulderRoll,
        RobotJoint::LeftShoulderRoll,
        RobotJoint::RightElbow,
        RobotJoint::LeftElbow,
        RobotJoint::RightHipYaw,
        RobotJoint::LeftHipYaw,
        RobotJoint::RightHipPitch,
        RobotJoint::LeftHipPitch,
        RobotJoint::RightHipRoll,
        RobotJoint::LeftHipRoll,
        RobotJoint::RightKnee,
        RobotJoint::LeftKnee,
        RobotJoint::RightAnkleRoll,
        RobotJoint::LeftAnkleRoll,
        RobotJoint::RightAnklePitch,
        RobotJoint::LeftAnklePitch,
        RobotJoint::HeadYaw,
        RobotJoint::HeadPitch,
    ];

    pub const UPPER_BODY: [RobotJoint; 8] = [
        RobotJoint::RightShoulderPitch,
        RobotJoint::LeftShoulderPitch,
        RobotJoint::RightShoulderRoll,
        RobotJoint::LeftShoulderRoll,
        RobotJoint::RightElbow,
        RobotJoint::LeftElbow,
        RobotJoint::HeadYaw,
        RobotJoint::HeadPitch,
    ];

    pub const LEGS: [RobotJoint; 12] = [
        RobotJoint::RightHipYaw,
        RobotJoint::LeftHipYaw,
        RobotJoint::RightHipPitch,
        RobotJoint::LeftHipPitch,
        RobotJoint::RightHipRoll,
        RobotJoint::LeftHipRoll,
        RobotJoint::RightKnee,
        RobotJoint::LeftKnee,
        RobotJoint::RightAnkleRoll,
        RobotJoint::LeftAnkleRoll,
        RobotJoint::RightAnklePitch,
        RobotJoint::LeftAnklePitch,
    ];

    /// Joint number as printed on the robot's joint diagram (1-20).
    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_number(n: u8) -> Option<RobotJoint> {
        RobotJoint::ALL.get(usize::from(n).checked_sub(1)?).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RobotJoint::RightShoulderPitch => "right_shoulder_pitch",
            RobotJoint::LeftShoulderPitch => "left_shoulder_pitch",
            RobotJoint::RightShoulderRoll => "right_shoulder_roll",
            RobotJoint::LeftShoulderRoll => "left_shoulder_roll",
            RobotJoint::RightElbow => "right_elbow",
            RobotJoint::LeftElbow => "left_elbow",
            RobotJoint::RightHipYaw => "right_hip_yaw",
            RobotJoint::LeftHipYaw => "left_hip_yaw",
            RobotJoint::RightHipPitch => "right_hip_pitch",
            RobotJoint::LeftHipPitch => "left_hip_pitch",
            RobotJoint::RightHipRoll => "right_hip_roll",
            RobotJoint::LeftHipRoll => "left_hip_roll",
            RobotJoint::RightKnee => "right_knee",
            RobotJoint::LeftKnee => "left_knee",
            RobotJoint::RightAnkleRoll => "right_ankle_roll",
            RobotJoint::LeftAnkleRoll => "left_ankle_roll",
            RobotJoint::RightAnklePitch => "right_ankle_pitch",
            RobotJoint::LeftAnklePitch => "left_ankle_pitch",
            RobotJoint::HeadYaw => "head_yaw",
            RobotJoint::HeadPitch => "head_pitch",
        }
    }

    /// Left/right counterpart; head joints map to themselves.
    pub fn mirrored(self) -> RobotJoint {
        use RobotJoint::*;
        match self {
            RightShoulderPitch => LeftShoulderPitch,
            LeftShoulderPitch => RightShoulderPitch,
            RightShoulderRoll => LeftShoulderRoll,
            LeftShoulderRoll => RightShoulderRoll,
            RightElbow => LeftElbow,
            LeftElbow => RightElbow,
            RightHipYaw => LeftHipYaw,
            LeftHipYaw => RightHipYaw,
            RightHipPitch => LeftHipPitch,
            LeftHipPitch => RightHipPitch,
            RightHipRoll => LeftHipRoll,
            LeftHipRoll => RightHipRoll,
            RightKnee => LeftKnee,
            LeftKnee => RightKnee,
            RightAnkleRoll => LeftAnkleRoll,
            LeftAnkleRoll => RightAnkleRoll,
            RightAnklePitch => LeftAnklePitch,
            LeftAnklePitch => RightAnklePitch,
            HeadYaw | HeadPitch => self,
        }
    }

    /// Elbows and knees: straight at one end of their range.
    pub fn is_flexion(self) -> bool {
        matches!(
            self,
            RobotJoint::RightElbow | RobotJoint::LeftElbow | RobotJoint::RightKnee | RobotJoint::LeftKnee
        )
    }
}

impl fmt::Display for RobotJoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RobotJoint {
    type Err = TeleopError;

    fn from_str(s: &str) -> Result<Self> {
        RobotJoint::ALL
            .iter()
            .copied()
            .find(|j| j.as_str() == s)
            .ok_or_else(|| TeleopError::Config(format!("unknown robot joint `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDescriptor {
    pub name: RobotJoint,
    pub number: u8,
    pub axis_label: String,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl JointDescriptor {
    fn new(name: RobotJoint, axis: &str, theta_min: f64, theta_max: f64) -> Self {
        Self {
            name,
            number: name.number(),
            axis_label: axis.to_string(),
            theta_min,
            theta_max,
        }
    }

    pub fn contains(&self, angle: f64) -> bool {
        (self.theta_min..=self.theta_max).contains(&angle)
    }

    pub fn clamp(&self, angle: f64) -> f64 {
        angle.max(self.theta_min).min(self.theta_max)
    }

    /// Standing value: 0 inside the range, 0 for a straight elbow/knee at its
    /// stop, otherwise the middle of the range.
    pub fn neutral(&self) -> f64 {
        let zero_inside = self.theta_min < 0.0 && 0.0 < self.theta_max;
        let zero_at_stop = self.name.is_flexion() && self.contains(0.0);
        if zero_inside || zero_at_stop {
            0.0
        } else {
            0.5 * (self.theta_min + self.theta_max)
        }
    }
}

/// Target angles keyed by robot joint, radians.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JointAngleSet {
    pub stamp_us: u64,
    pub angles: BTreeMap<RobotJoint, f64>,
}

impl JointAngleSet {
    pub fn new(stamp_us: u64) -> Self {
        Self {
            stamp_us,
            angles: BTreeMap::new(),
        }
    }

    pub fn with(mut self, joint: RobotJoint, angle: f64) -> Self {
        self.angles.insert(joint, angle);
        self
    }

    pub fn get(&self, joint: RobotJoint) -> Option<f64> {
        self.angles.get(&joint).copied()
    }
}

/// Per-joint motion limits for one robot.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitsTable {
    joints: Vec<JointDescriptor>,
}

impl Default for LimitsTable {
    fn default() -> Self {
        Self::builtin()
    }
}

impl LimitsTable {
    /// Limits of the 20-DOF humanoid this crate ships for.
    pub fn builtin() -> Self {
        use RobotJoint::*;
        let d = JointDescriptor::new;
        let mut joints = vec![
            // right arm
            d(RightShoulderPitch, "Z_1", -4.0 * PI / 3.0, 4.0 * PI / 3.0),
            d(RightShoulderRoll, "Z_2", -PI / 2.0, PI / 2.0),
            d(RightElbow, "Z_3", 0.0, 5.0 * PI / 6.0),
            // left arm
            d(LeftShoulderPitch, "Z_1", -4.0 * PI / 3.0, 4.0 * PI / 3.0),
            d(LeftShoulderRoll, "Z_2", -PI / 2.0, PI / 2.0),
            d(LeftElbow, "Z_3", -5.0 * PI / 6.0, 0.0),
            // right leg
            d(RightHipYaw, "Z_1", -5.0 * PI / 6.0, PI / 4.0),
            d(RightHipRoll, "Z_2", 0.0, PI / 3.0),
            d(RightHipPitch, "Z_3", -PI / 2.0, PI / 6.0),
            d(RightKnee, "Z_4", 0.0, 3.0 * PI / 4.0),
            d(RightAnklePitch, "Z_5", -PI / 3.0, PI / 3.0),
            d(RightAnkleRoll, "Z_6", -PI / 6.0, PI / 3.0),
            // left leg
            d(LeftHipYaw, "Z_1", -PI / 4.0, 5.0 * PI / 6.0),
            d(LeftHipRoll, "Z_2", -PI / 3.0, 0.0),
            d(LeftHipPitch, "Z_3", -PI / 6.0, PI / 2.0),
            d(LeftKnee, "Z_4", -3.0 * PI / 4.0, 0.0),
            d(LeftAnklePitch, "Z_5", -PI / 3.0, PI / 3.0),
            d(LeftAnkleRoll, "Z_6", -PI / 6.0, PI / 3.0),
            // head
            d(HeadYaw, "Z_1", -5.0 * PI / 6.0, 5.0 * PI / 6.0),
            d(HeadPitch, "Z_2", -PI / 3.0, PI / 6.0),
        ];
        joints.sort_by_key(|j| j.number);
        Self { joints }
    }

    /// Builds a table from descriptors; every joint must appear exactly once
    /// with `theta_min < theta_max`.
    pub fn from_descriptors(mut joints: Vec<JointDescriptor>) -> Result<Self> {
        joints.sort_by_key(|j| j.name);
        for (i, joint) in RobotJoint::ALL.iter().enumerate() {
            let Some(desc) = joints.get(i) else {
                return Err(TeleopError::Config(format!("limits for `{joint}` missing")));
            };
            if desc.name != *joint {
                return Err(TeleopError::Config(format!(
                    "limits for `{joint}` missing or `{}` listed twice",
                    desc.name
                )));
            }
            if !(desc.theta_min < desc.theta_max) {
                return Err(TeleopError::Config(format!(
                    "`{joint}`: theta_min {} must be below theta_max {}",
                    desc.theta_min, desc.theta_max
                )));
            }
        }
        if joints.len() != RobotJoint::ALL.len() {
            return Err(TeleopError::Config(format!(
                "expected {} joints, found {}",
                RobotJoint::ALL.len(),
                joints.len()
            )));
        }
        for d in &mut joints {
            d.number = d.name.number();
        }
        Ok(Self { joints })
    }

    /// Parses a limits file. Angles may be plain radians or multiples of pi
    /// written as text (`"-5pi/6"`, `"pi/3"`):
    ///
    /// ```toml
    /// [[joint]]
    /// name = "right_elbow"
    /// axis = "Z_3"
    /// min = 0.0
    /// max = "5pi/6"
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct File {
            joint: Vec<Row>,
        }
        #[derive(Deserialize)]
        struct Row {
            name: RobotJoint,
            #[serde(default)]
            axis: String,
            min: AngleValue,
            max: AngleValue,
        }
        let file: File = toml::from_str(text).map_err(|e| TeleopError::Config(e.to_string()))?;
        let rows = file
            .joint
            .into_iter()
            .map(|r| {
                Ok(JointDescriptor::new(r.name, &r.axis, r.min.radians()?, r.max.radians()?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_descriptors(rows)
    }

    pub fn descriptors(&self) -> &[JointDescriptor] {
        &self.joints
    }

    pub fn get(&self, joint: RobotJoint) -> &JointDescriptor {
        // Both builtin and loaded tables hold all 20 joints in number order.
        &self.joints[usize::from(joint.number()) - 1]
    }

    pub fn clamp(&self, joint: RobotJoint, angle: f64) -> f64 {
        self.get(joint).clamp(angle)
    }

    pub fn clamp_set(&self, set: &JointAngleSet) -> JointAngleSet {
        JointAngleSet {
            stamp_us: set.stamp_us,
            angles: set
                .angles
                .iter()
                .map(|(&j, &a)| (j, self.clamp(j, a)))
                .collect(),
        }
    }

    pub fn check(&self, joint: RobotJoint, angle: f64) -> Result<()> {
        let d = self.get(joint);
        if d.contains(angle) {
            Ok(())
        } else {
            Err(TeleopError::OutOfLimits {
                joint,
                angle,
                min: d.theta_min,
                max: d.theta_max,
            })
        }
    }

    pub fn validate(&self, set: &JointAngleSet) -> Result<()> {
        set.angles.iter().try_for_each(|(&j, &a)| self.check(j, a))
    }

    pub fn neutral_pose(&self) -> JointAngleSet {
        JointAngleSet {
            stamp_us: 0,
            angles: self.joints.iter().map(|d| (d.name, d.neutral())).collect(),
        }
    }
}

/// An angle in a config file: radians, or a text multiple of pi.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub(crate) enum AngleValue {
    Radians(f64),
    Text(String),
}

impl AngleValue {
    pub(crate) fn radians(&self) -> Result<f64> {
        match self {
            AngleValue::Radians(v) => Ok(*v),
            AngleValue::Text(s) => parse_pi_expr(s),
        }
    }
}

/// Parses `[-][k]pi[/d]` or a plain decimal.
pub fn parse_pi_expr(text: &str) -> Result<f64> {
    let bad = || TeleopError::Config(format!("cannot parse angle `{text}`"));
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let s = s.replace('π', "pi");
    if let Ok(v) = s.parse::<f64>() {
        return Ok(v);
    }
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, s.trim_start_matches('+')),
    };
    let (num, den) = match body.split_once('/') {
        Some((n, d)) => (n, d.parse::<f64>().map_err(|_| bad())?),
        None => (body, 1.0),
    };
    let coeff = num.strip_suffix("pi").ok_or_else(bad)?;
    let coeff = coeff.trim_end_matches('*');
    let k = if coeff.is_empty() {
        1.0
    } else {
        coeff.parse::<f64>().map_err(|_| bad())?
    };
    if den == 0.0 {
        return Err(bad());
    }
    Ok(sign * k * PI / den)
}

/// The built-in limits table.
pub fn limits_table() -> &'static LimitsTable {
    static TABLE: OnceLock<LimitsTable> = OnceLock::new();
    TABLE.get_or_init(LimitsTable::builtin)
}

/// Clamps against the built-in limits.
pub fn clamp_to_limits(joint: RobotJoint, angle: f64) -> f64 {
    limits_table().clamp(joint, angle)
}

pub fn neutral_pose() -> JointAngleSet {
    limits_table().neutral_pose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn twenty_joints_numbered_once() {
        let mut numbers: Vec<u8> = RobotJoint::ALL.iter().map(|j| j.number()).collect();
        numbers.sort();
        assert_eq!(numbers, (1..=20).collect::<Vec<u8>>());
        for j in RobotJoint::ALL {
            assert_eq!(RobotJoint::from_number(j.number()), Some(j));
            assert_eq!(limits_table().get(j).name, j);
        }
        assert_eq!(RobotJoint::from_number(0), None);
        assert_eq!(RobotJoint::from_number(21), None);
    }

    #[test]
    fn table_lookups() {
        let t = limits_table();
        let e = t.get(RobotJoint::RightElbow);
        assert_eq!((e.number, e.theta_min, e.theta_max), (5, 0.0, 5.0 * PI / 6.0));
        let h = t.get(RobotJoint::LeftHipRoll);
        assert_eq!((h.number, h.theta_min, h.theta_max), (12, -PI / 3.0, 0.0));
        let p = t.get(RobotJoint::HeadPitch);
        assert_eq!((p.number, p.theta_min, p.theta_max), (20, -PI / 3.0, PI / 6.0));
        assert_eq!(t.get(RobotJoint::RightAnkleRoll).axis_label, "Z_6");
        for d in t.descriptors() {
            assert!(d.theta_min < d.theta_max, "{}", d.name);
        }
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_to_limits(RobotJoint::RightElbow, -0.1), 0.0);
        assert_eq!(clamp_to_limits(RobotJoint::HeadYaw, 1.0), 1.0);
        assert_eq!(clamp_to_limits(RobotJoint::RightShoulderRoll, 2.0), PI / 2.0);
    }

    #[test]
    fn neutral_pose_examples() {
        let n = neutral_pose();
        assert_eq!(n.get(RobotJoint::RightElbow), Some(0.0));
        assert_eq!(n.get(RobotJoint::RightHipRoll), Some(PI / 6.0));
        assert_eq!(n.get(RobotJoint::LeftHipRoll), Some(-PI / 6.0));
        assert_eq!(n.get(RobotJoint::HeadYaw), Some(0.0));
        assert_eq!(n.angles.len(), 20);
        limits_table().validate(&n).unwrap();
    }

    #[test]
    fn mirrored_ranges_are_negated() {
        let t = limits_table();
        for j in RobotJoint::ALL {
            let m = j.mirrored();
            // Ankle rolls are printed with identical ranges for both legs.
            if m == j || matches!(j, RobotJoint::RightAnkleRoll | RobotJoint::LeftAnkleRoll) {
                continue;
            }
            let (a, b) = (t.get(j), t.get(m));
            let symmetric = a.theta_min == -a.theta_max;
            if symmetric {
                assert_eq!((a.theta_min, a.theta_max), (b.theta_min, b.theta_max), "{j}");
            } else {
                assert_eq!((a.theta_min, a.theta_max), (-b.theta_max, -b.theta_min), "{j}");
            }
        }
    }

    #[test]
    fn pi_expressions() {
        assert_eq!(parse_pi_expr("pi").unwrap(), PI);
        assert_eq!(parse_pi_expr("-5pi/6").unwrap(), -5.0 * PI / 6.0);
        assert_eq!(parse_pi_expr("pi/3").unwrap(), PI / 3.0);
        assert_eq!(parse_pi_expr("4*pi/3").unwrap(), 4.0 * PI / 3.0);
        assert_eq!(parse_pi_expr("0.25").unwrap(), 0.25);
        assert!(parse_pi_expr("pie").is_err());
        assert!(parse_pi_expr("pi/0").is_err());
    }

    #[test]
    fn toml_limits_round_trip_builtin() {
        let mut text = String::new();
        for d in limits_table().descriptors() {
            text.push_str(&format!(
                "[[joint]]\nname = \"{}\"\naxis = \"{}\"\nmin = {:?}\nmax = {:?}\n\n",
                d.name, d.axis_label, d.theta_min, d.theta_max
            ));
        }
        let loaded = LimitsTable::from_toml_str(&text).unwrap();
        assert_eq!(&loaded, limits_table());
    }

    #[test]
    fn toml_limits_reject_incomplete_or_inverted() {
        let one = "[[joint]]\nname = \"head_yaw\"\nmin = \"-5pi/6\"\nmax = \"5pi/6\"\n";
        assert!(LimitsTable::from_toml_str(one).is_err());

        let mut text = String::new();
        for d in limits_table().descriptors() {
            let (lo, hi) = if d.name == RobotJoint::HeadPitch {
                (1.0, -1.0)
            } else {
                (d.theta_min, d.theta_max)
            };
            text.push_str(&format!("[[joint]]\nname = \"{}\"\nmin = {lo:?}\nmax = {hi:?}\n", d.name));
        }
        assert!(LimitsTable::from_toml_str(&text).is_err());
    }

    proptest! {
        #[test]
        fn clamp_lands_in_range_and_is_idempotent(idx in 0usize..20, angle in -20.0f64..20.0) {
            let joint = RobotJoint::ALL[idx];
            let d = limits_table().get(joint);
            let once = clamp_to_limits(joint, angle);
            prop_assert!(d.theta_min <= once && once <= d.theta_max);
            prop_assert_eq!(clamp_to_limits(joint, once), once);
        }
    }
}
