"""Smoke test for the Python bindings. Run after `maturin develop`."""

import math

import humanoid_teleop_py as ht


def main():
    assert abs(ht.joint_angle((0, 1, 0), (0, 0, 0), (0, -1, 0))) < 1e-12
    assert abs(ht.joint_angle((0, 1, 0), (0, 0, 0), (1, 0, 0)) - math.pi / 2) < 1e-12
    assert ht.govern_speed(0.3, 0.3) == 1.0
    assert ht.govern_speed(math.pi, 0.0) == 2.0
    assert ht.plan_turn(0.6) == ("left", 2)
    assert ht.plan_turn(-math.pi / 2) == ("right", 6)
    assert ht.plan_turn(0.1) == (None, 0)
    assert len(ht.joint_limits()) == 20

    decision, state = ht.decide_step(ht.initial_gait_state(), "right", 2.1, 2.0)
    assert decision == {"decision": "back_step", "leg": "right"}, decision
    assert state["right_state"] == "back"

    try:
        ht.synth("cartwheel")
    except ht.TeleopError:
        pass
    else:
        raise AssertionError("unknown scenario accepted")

    frames = ht.synth("forward_step")
    arbiter = ht.Arbiter()
    sim = ht.Simulator()
    steps = []
    for frame in frames:
        for msg in arbiter.process_frame(frame):
            if msg["topic"] == "commands":
                sim.apply_commands(msg["payload"])
            elif msg["kind"] == "gait_event" and msg["payload"]["event"] == "step":
                steps.append(msg["payload"]["decision"])
        sim.step(0.05)
    assert steps == [{"decision": "forward_step", "leg": "right"}], steps
    assert arbiter.mode == "imitating"

    bus = ht.Bus()
    sub = bus.subscribe(["skeleton"])
    assert bus.publish("skeleton", frames[0]["stamp_us"], {"kind": "skeleton_frame", "payload": frames[0]}) == 0
    env = sub.recv(timeout=1.0)
    assert env["seq"] == 0 and env["payload"] == frames[0]
    line = ht.encode_envelope(env)
    assert ht.decode_envelope(line) == env
    print("python smoke test passed")


if __name__ == "__main__":
    main()
