use proptest::prelude::*;

use humanoid_teleop::bus::{Bus, Payload, TOPIC_COMMANDS, TOPIC_GAIT_EVENTS};
use humanoid_teleop::locomotion::GaitEvent;

fn reset(stamp_us: u64) -> Payload {
    Payload::GaitEvent(GaitEvent::Reset { stamp_us })
}

proptest! {
    #[test]
    fn subscribers_see_only_their_topics(topics in proptest::collection::vec(any::<bool>(), 1..100)) {
        let bus = Bus::default();
        let cmds = bus.subscribe_many(&[TOPIC_COMMANDS], 1000).unwrap();
        let gait = bus.subscribe_many(&[TOPIC_GAIT_EVENTS], 1000).unwrap();
        for (i, is_cmd) in topics.iter().enumerate() {
            if *is_cmd {
                bus.publish(TOPIC_COMMANDS, i as u64, Payload::JointCommands(vec![])).unwrap();
            } else {
                bus.publish(TOPIC_GAIT_EVENTS, i as u64, reset(i as u64)).unwrap();
            }
        }
        let c = cmds.drain();
        let g = gait.drain();
        prop_assert_eq!(c.len(), topics.iter().filter(|t| **t).count());
        prop_assert_eq!(g.len(), topics.len() - c.len());
        prop_assert!(c.iter().all(|e| e.topic == TOPIC_COMMANDS));
        prop_assert!(g.iter().all(|e| e.topic == TOPIC_GAIT_EVENTS));
        for (i, e) in c.iter().enumerate() {
            prop_assert_eq!(e.seq, i as u64);
        }
    }

    #[test]
    fn overflow_keeps_newest_window(n in 1u64..300, cap in 1usize..64) {
        let bus = Bus::default();
        let sub = bus.subscribe_many(&[TOPIC_GAIT_EVENTS], cap).unwrap();
        for i in 0..n {
            bus.publish(TOPIC_GAIT_EVENTS, i, reset(i)).unwrap();
        }
        let got: Vec<u64> = sub.drain().iter().map(|e| e.seq).collect();
        let kept = (n as usize).min(cap);
        let want: Vec<u64> = (n - kept as u64..n).collect();
        prop_assert_eq!(got, want);
        prop_assert_eq!(sub.dropped(), n - kept as u64);
    }
}

#[test]
fn wrong_payload_kind_is_rejected() {
    let bus = Bus::default();
    assert!(bus.publish(TOPIC_COMMANDS, 0, reset(0)).is_err());
    assert!(bus.publish("nope", 0, reset(0)).is_err());
}

#[test]
fn closing_wakes_receivers() {
    let bus = Bus::default();
    let sub = bus.subscribe(TOPIC_COMMANDS).unwrap();
    let t = std::thread::spawn(move || sub.recv());
    std::thread::sleep(std::time::Duration::from_millis(20));
    bus.close();
    assert!(t.join().unwrap().is_err());
    assert!(bus.publish(TOPIC_GAIT_EVENTS, 0, reset(0)).is_err());
}
