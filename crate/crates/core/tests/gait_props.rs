use proptest::prelude::*;

use humanoid_teleop::locomotion::{plan_turn, update_lift, GaitConfig, GaitState, LiftEvent, TurnDirection};
use humanoid_teleop::skeleton::Side;

proptest! {
    #[test]
    fn knee_inside_band_never_changes_lift(
        start_lifted in proptest::option::of(prop_oneof![Just(Side::Left), Just(Side::Right)]),
        knees in proptest::collection::vec((0.5..0.7f64, 0.5..0.7f64), 1..50),
    ) {
        let cfg = GaitConfig::default();
        let mut state = GaitState { lifted_leg: start_lifted, ..GaitState::initial() };
        for (l, r) in knees {
            // Both knees sit between the place and lift thresholds.
            prop_assume!(l < cfg.knee_lift_threshold && r < cfg.knee_lift_threshold);
            let (next, event) = update_lift(&state, &cfg, l, r);
            prop_assert_eq!(event, LiftEvent::None);
            state = next;
        }
        prop_assert_eq!(state.lifted_leg, start_lifted);
    }

    #[test]
    fn lift_and_place_alternate(knees in proptest::collection::vec((0.0..1.6f64, 0.0..1.6f64), 1..200)) {
        let cfg = GaitConfig::default();
        let mut state = GaitState::initial();
        let mut lifted: Option<Side> = None;
        for (l, r) in knees {
            let (next, event) = update_lift(&state, &cfg, l, r);
            match event {
                LiftEvent::Lifted(side) => {
                    prop_assert!(lifted.is_none());
                    lifted = Some(side);
                }
                LiftEvent::Placed(side) => {
                    prop_assert_eq!(lifted, Some(side));
                    lifted = None;
                }
                LiftEvent::None => {}
            }
            prop_assert_eq!(next.lifted_leg, lifted);
            state = next;
        }
    }

    #[test]
    fn turn_plan_is_quantized(yaw in -4.0..4.0f64) {
        let cfg = GaitConfig::default();
        let plan = plan_turn(&cfg, yaw);
        if yaw.abs() <= cfg.yaw_threshold {
            prop_assert_eq!(plan.direction, None);
            prop_assert_eq!(plan.steps, 0);
        } else {
            let want = if yaw > 0.0 { TurnDirection::Left } else { TurnDirection::Right };
            prop_assert_eq!(plan.direction, Some(want));
            prop_assert!(plan.steps >= 1 && plan.steps <= cfg.max_turn_steps);
            let covered = plan.steps as f64 * cfg.turn_step_quantum;
            if plan.steps < cfg.max_turn_steps && plan.steps > 1 {
                prop_assert!((covered - yaw.abs()).abs() <= cfg.turn_step_quantum / 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn turn_plan_is_odd_in_yaw(yaw in 0.0..4.0f64) {
        let cfg = GaitConfig::default();
        let left = plan_turn(&cfg, yaw);
        let right = plan_turn(&cfg, -yaw);
        prop_assert_eq!(left.steps, right.steps);
    }
}

#[test]
fn stronger_knee_wins_a_double_lift() {
    let cfg = GaitConfig::default();
    let (state, event) = update_lift(&GaitState::initial(), &cfg, 0.9, 1.1);
    assert_eq!(event, LiftEvent::Lifted(Side::Right));
    assert_eq!(state.lifted_leg, Some(Side::Right));
}
