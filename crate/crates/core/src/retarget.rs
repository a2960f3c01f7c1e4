//! Upper-body retargeting: skeleton arm triples to shoulder pitch, shoulder
//! roll and elbow angles.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::robot::{JointAngleSet, LimitsTable, RobotJoint};
use crate::skeleton::{joint_angle, vector_between, Side, SkeletonFrame};

/// Below this, the arm's sagittal projection has no usable direction.
const PROJECTION_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpperBodyAngles {
    pub stamp_us: u64,
    pub shoulder_pitch_l: f64,
    pub shoulder_pitch_r: f64,
    pub shoulder_roll_l: f64,
    pub shoulder_roll_r: f64,
    pub elbow_l: f64,
    pub elbow_r: f64,
}

impl UpperBodyAngles {
    /// The six arm angles plus neutral head, as a joint-keyed set.
    pub fn to_angle_set(&self) -> JointAngleSet {
        let (head_yaw, head_pitch) = head_angles(&SkeletonFrame {
            stamp_us: self.stamp_us,
            joints: Default::default(),
        });
        JointAngleSet::new(self.stamp_us)
            .with(RobotJoint::RightShoulderPitch, self.shoulder_pitch_r)
            .with(RobotJoint::LeftShoulderPitch, self.shoulder_pitch_l)
            .with(RobotJoint::RightShoulderRoll, self.shoulder_roll_r)
            .with(RobotJoint::LeftShoulderRoll, self.shoulder_roll_l)
            .with(RobotJoint::RightElbow, self.elbow_r)
            .with(RobotJoint::LeftElbow, self.elbow_l)
            .with(RobotJoint::HeadYaw, head_yaw)
            .with(RobotJoint::HeadPitch, head_pitch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ArmAngles {
    pitch: f64,
    roll: f64,
    elbow: f64,
}

/// Stateful retargeter. Holds the last shoulder pitch per arm for the
/// singular pose where the upper arm points straight sideways.
#[derive(Debug, Clone)]
pub struct Retargeter {
    limits: LimitsTable,
    prev_pitch_l: f64,
    prev_pitch_r: f64,
}

impl Default for Retargeter {
    fn default() -> Self {
        Self::new(LimitsTable::builtin())
    }
}

impl Retargeter {
    pub fn new(limits: LimitsTable) -> Self {
        Self {
            limits,
            prev_pitch_l: 0.0,
            prev_pitch_r: 0.0,
        }
    }

    pub fn limits(&self) -> &LimitsTable {
        &self.limits
    }

    pub fn retarget_upper_body(&mut self, frame: &SkeletonFrame) -> Result<UpperBodyAngles> {
        let right = arm_angles(frame, Side::Right, self.prev_pitch_r)?;
        let left = arm_angles(frame, Side::Left, self.prev_pitch_l)?;
        let l = &self.limits;
        let out = UpperBodyAngles {
            stamp_us: frame.stamp_us,
            shoulder_pitch_r: l.clamp(RobotJoint::RightShoulderPitch, right.pitch),
            shoulder_pitch_l: l.clamp(RobotJoint::LeftShoulderPitch, left.pitch),
            shoulder_roll_r: l.clamp(RobotJoint::RightShoulderRoll, right.roll),
            shoulder_roll_l: l.clamp(RobotJoint::LeftShoulderRoll, left.roll),
            elbow_r: l.clamp(RobotJoint::RightElbow, right.elbow),
            elbow_l: l.clamp(RobotJoint::LeftElbow, -left.elbow),
        };
        self.prev_pitch_r = right.pitch;
        self.prev_pitch_l = left.pitch;
        Ok(out)
    }

    pub fn reset(&mut self) {
        self.prev_pitch_l = 0.0;
        self.prev_pitch_r = 0.0;
    }
}

fn arm_angles(frame: &SkeletonFrame, side: Side, prev_pitch: f64) -> Result<ArmAngles> {
    let shoulder = frame.position(side.shoulder())?;
    let elbow = frame.position(side.elbow())?;
    let hand = frame.position(side.hand())?;

    // Checks both segment lengths, so `upper` below is never near zero.
    let elbow_angle = joint_angle(shoulder, elbow, hand)?;

    let upper = vector_between(elbow, shoulder);
    let sagittal = (upper.dy * upper.dy + upper.dz * upper.dz).sqrt();
    // Measured from straight down; forward (toward the sensor, -z) is positive.
    let pitch = if sagittal < PROJECTION_EPSILON {
        prev_pitch
    } else {
        (-upper.dz).atan2(-upper.dy)
    };
    let roll = (upper.dx / upper.norm()).clamp(-1.0, 1.0).asin();

    Ok(ArmAngles {
        pitch,
        roll,
        elbow: elbow_angle,
    })
}

/// Head yaw and pitch. The head is held at its neutral pose.
pub fn head_angles(_frame: &SkeletonFrame) -> (f64, f64) {
    (0.0, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{JointSample, Point3, SkeletonJoint};
    use std::collections::BTreeMap;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn frame_with_right_arm(shoulder: Point3, elbow: Point3, hand: Point3) -> SkeletonFrame {
        let mut joints = BTreeMap::new();
        for j in SkeletonJoint::ALL {
            joints.insert(j, JointSample::at(Point3::new(0.0, 1.0, 2.0)));
        }
        joints.insert(SkeletonJoint::RightShoulder, JointSample::at(shoulder));
        joints.insert(SkeletonJoint::RightElbow, JointSample::at(elbow));
        joints.insert(SkeletonJoint::RightHand, JointSample::at(hand));
        joints.insert(SkeletonJoint::LeftShoulder, JointSample::at(Point3::new(-0.2, 1.4, 2.0)));
        joints.insert(SkeletonJoint::LeftElbow, JointSample::at(Point3::new(-0.2, 1.1, 2.0)));
        joints.insert(SkeletonJoint::LeftHand, JointSample::at(Point3::new(-0.2, 0.8, 2.0)));
        SkeletonFrame { stamp_us: 7, joints }
    }

    #[test]
    fn arm_hanging_down_is_all_zero() {
        let f = frame_with_right_arm(
            Point3::new(0.2, 1.4, 2.0),
            Point3::new(0.2, 1.1, 2.0),
            Point3::new(0.2, 0.8, 2.0),
        );
        let out = Retargeter::default().retarget_upper_body(&f).unwrap();
        assert_eq!(out.stamp_us, 7);
        assert!(out.elbow_r.abs() < 1e-12);
        assert!(out.shoulder_pitch_r.abs() < 1e-12);
        assert!(out.shoulder_roll_r.abs() < 1e-12);
        assert!(out.elbow_l.abs() < 1e-12);
    }

    #[test]
    fn arm_raised_sideways() {
        let f = frame_with_right_arm(
            Point3::new(0.2, 1.4, 2.0),
            Point3::new(0.5, 1.4, 2.0),
            Point3::new(0.8, 1.4, 2.0),
        );
        let out = Retargeter::default().retarget_upper_body(&f).unwrap();
        assert!((out.shoulder_roll_r - FRAC_PI_2).abs() < 1e-12);
        assert!(out.elbow_r.abs() < 1e-12);
        // Singular for pitch: the previous value (initially 0) is held.
        assert_eq!(out.shoulder_pitch_r, 0.0);
    }

    #[test]
    fn arm_forward_forearm_up() {
        let (shoulder, elbow, hand) = (
            Point3::new(0.2, 1.4, 2.0),
            Point3::new(0.2, 1.4, 1.7),
            Point3::new(0.2, 1.7, 1.7),
        );
        // Independent evaluation: upper arm (0, 0, -0.3) is straight forward,
        // a quarter turn up from hanging; the forearm (0, 0.3, 0) is
        // perpendicular to it.
        let upper = (elbow.x - shoulder.x, elbow.y - shoulder.y, elbow.z - shoulder.z);
        let fore = (hand.x - elbow.x, hand.y - elbow.y, hand.z - elbow.z);
        let dot = upper.0 * fore.0 + upper.1 * fore.1 + upper.2 * fore.2;
        assert_eq!(dot, 0.0);
        assert_eq!(upper.1, 0.0);
        assert!(upper.2 < 0.0);

        let out = Retargeter::default()
            .retarget_upper_body(&frame_with_right_arm(shoulder, elbow, hand))
            .unwrap();
        assert!((out.shoulder_pitch_r - FRAC_PI_2).abs() < 1e-12);
        assert!((out.elbow_r - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn arm_backward_swing_is_negative_pitch() {
        let f = frame_with_right_arm(
            Point3::new(0.2, 1.4, 2.0),
            Point3::new(0.2, 1.2, 2.2),
            Point3::new(0.2, 1.0, 2.4),
        );
        let out = Retargeter::default().retarget_upper_body(&f).unwrap();
        assert!((out.shoulder_pitch_r + PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn singular_pitch_holds_previous() {
        let mut r = Retargeter::default();
        let fwd = frame_with_right_arm(
            Point3::new(0.2, 1.4, 2.0),
            Point3::new(0.2, 1.4, 1.7),
            Point3::new(0.2, 1.4, 1.4),
        );
        let first = r.retarget_upper_body(&fwd).unwrap();
        assert!((first.shoulder_pitch_r - FRAC_PI_2).abs() < 1e-12);
        let side = frame_with_right_arm(
            Point3::new(0.2, 1.4, 2.0),
            Point3::new(0.5, 1.4, 2.0),
            Point3::new(0.8, 1.4, 2.0),
        );
        let held = r.retarget_upper_body(&side).unwrap();
        assert_eq!(held.shoulder_pitch_r, first.shoulder_pitch_r);
    }

    #[test]
    fn elbow_overfold_is_clamped() {
        // Forearm folded almost completely back onto the upper arm.
        let f = frame_with_right_arm(
            Point3::new(0.2, 1.4, 2.0),
            Point3::new(0.2, 1.1, 2.0),
            Point3::new(0.2, 1.39, 2.01),
        );
        let out = Retargeter::default().retarget_upper_body(&f).unwrap();
        assert_eq!(out.elbow_r, 5.0 * PI / 6.0);
    }

    #[test]
    fn missing_arm_joint() {
        let mut f = frame_with_right_arm(
            Point3::new(0.2, 1.4, 2.0),
            Point3::new(0.2, 1.1, 2.0),
            Point3::new(0.2, 0.8, 2.0),
        );
        f.joints.remove(&SkeletonJoint::RightHand);
        assert!(matches!(
            Retargeter::default().retarget_upper_body(&f),
            Err(crate::error::TeleopError::MissingJoint(SkeletonJoint::RightHand))
        ));
    }

    #[test]
    fn head_is_neutral_and_in_range() {
        let f = frame_with_right_arm(
            Point3::new(0.2, 1.4, 2.0),
            Point3::new(0.2, 1.1, 2.0),
            Point3::new(0.2, 0.8, 2.0),
        );
        assert_eq!(head_angles(&f), (0.0, 0.0));
        assert_eq!(head_angles(&f), head_angles(&f));
        let t = LimitsTable::builtin();
        t.check(RobotJoint::HeadYaw, 0.0).unwrap();
        t.check(RobotJoint::HeadPitch, 0.0).unwrap();
        let set = UpperBodyAngles::default().to_angle_set();
        assert_eq!(set.angles.len(), 8);
    }
}
