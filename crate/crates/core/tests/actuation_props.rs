use proptest::prelude::*;

use humanoid_teleop::actuation::{sim_step, JointCommand, SimRobotState, Simulator};
use humanoid_teleop::robot::{LimitsTable, RobotJoint};

fn joint() -> impl Strategy<Value = RobotJoint> {
    (0..RobotJoint::ALL.len()).prop_map(|i| RobotJoint::ALL[i])
}

fn commanded(joint: RobotJoint, target: f64, speed: f64) -> SimRobotState {
    let mut s = SimRobotState::default();
    s.apply(&[JointCommand {
        joint,
        target_angle: target,
        speed,
        stamp_us: 0,
    }]);
    s
}

proptest! {
    #[test]
    fn one_step_equals_two_half_steps(joint in joint(), t in 0.0..1.0f64, speed in 0.1..5.0f64, dt in 0.001..0.5f64) {
        let d = LimitsTable::builtin().get(joint).clone();
        let target = d.theta_min + t * (d.theta_max - d.theta_min);
        let s = commanded(joint, target, speed);
        let whole = sim_step(&s, dt);
        let halves = sim_step(&sim_step(&s, dt / 2.0), dt / 2.0);
        let a = whole.angle(joint).unwrap();
        let b = halves.angle(joint).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn arrives_after_distance_over_speed(joint in joint(), t in 0.0..1.0f64, speed in 0.1..5.0f64) {
        let d = LimitsTable::builtin().get(joint).clone();
        let target = d.theta_min + t * (d.theta_max - d.theta_min);
        let s = commanded(joint, target, speed);
        let distance = (target - s.angle(joint).unwrap_or(d.neutral())).abs();
        let needed = distance / speed;
        if needed > 1e-3 {
            let early = sim_step(&s, needed * 0.99);
            prop_assert!(!early.is_settled());
        }
        let done = sim_step(&s, needed + 1e-9);
        prop_assert!(done.is_settled());
        prop_assert_eq!(done.angle(joint), Some(target));
    }

    #[test]
    fn simulator_stays_inside_limits(joint in joint(), target in -10.0..10.0f64, speed in 0.1..20.0f64, steps in 1usize..50) {
        let mut sim = Simulator::default();
        sim.apply_commands(&[JointCommand { joint, target_angle: target, speed, stamp_us: 0 }]);
        let d = LimitsTable::builtin().get(joint).clone();
        for _ in 0..steps {
            let a = sim.step(0.05).angle(joint).unwrap();
            prop_assert!(d.contains(a));
        }
    }
}

#[test]
fn motions_accumulate_heading() {
    let mut sim = Simulator::default();
    sim.complete_motion(1, 0.26, 0.0);
    sim.complete_motion(2, 0.26, 0.0);
    assert!((sim.heading() - 0.52).abs() < 1e-12);
    assert_eq!(sim.pose_history().len(), 3);
}
