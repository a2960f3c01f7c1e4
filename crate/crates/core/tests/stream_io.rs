use std::io::{BufReader, Cursor};
use std::process::Command;
use std::time::{Duration, Instant};

use humanoid_teleop::bus::{Bus, TOPIC_SKELETON};
use humanoid_teleop::stream::{read_stream, record, replay, synth, synth_named, Scenario, SynthParams, STREAM_FORMAT};
use humanoid_teleop::TeleopError;

fn recorded(scenario: Scenario) -> (Vec<humanoid_teleop::SkeletonFrame>, Vec<u8>) {
    let frames = synth(scenario, &SynthParams::default()).unwrap();
    let mut buf = Vec::new();
    record(&frames, 20.0, &mut buf).unwrap();
    (frames, buf)
}

#[test]
fn record_then_read_is_lossless() {
    for sc in [Scenario::ArmWave, Scenario::ForwardStep, Scenario::BackwardStep, Scenario::Turn(0.6), Scenario::Idle] {
        let (frames, buf) = recorded(sc);
        let (header, back) = read_stream(Cursor::new(&buf)).unwrap();
        assert_eq!(header.format, STREAM_FORMAT);
        assert_eq!(header.frame_rate_hz, 20.0);
        assert_eq!(back, frames, "{sc}");
        for f in &back {
            f.validate().unwrap();
        }
    }
}

#[test]
fn replay_publishes_every_frame_in_order() {
    let (frames, buf) = recorded(Scenario::ArmWave);
    let bus = Bus::default();
    let sub = bus.subscribe_many(&[TOPIC_SKELETON], frames.len()).unwrap();
    assert_eq!(replay(Cursor::new(&buf), 0.0, &bus).unwrap(), frames.len());
    let got = sub.drain();
    assert_eq!(got.len(), frames.len());
    for (e, f) in got.iter().zip(&frames) {
        assert_eq!(e.stamp_us, f.stamp_us);
    }
}

#[test]
fn replay_keeps_the_clock() {
    let frames = synth(
        Scenario::Idle,
        &SynthParams {
            duration_s: Some(0.5),
            ..Default::default()
        },
    )
    .unwrap();
    let mut buf = Vec::new();
    record(&frames, 20.0, &mut buf).unwrap();
    let bus = Bus::default();
    let start = Instant::now();
    replay(Cursor::new(&buf), 2.0, &bus).unwrap();
    let took = start.elapsed();
    // 0.45 s of stamps at double speed.
    assert!(took >= Duration::from_millis(200), "{took:?}");
    assert!(took < Duration::from_millis(600), "{took:?}");
}

#[test]
fn bad_lines_are_reported_by_number() {
    let (_, buf) = recorded(Scenario::Idle);
    let text = String::from_utf8(buf).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "{\"topic\":\"skeleton\"";
    let broken = lines.join("\n") + "\n";
    let err = read_stream(BufReader::new(broken.as_bytes())).unwrap_err();
    assert!(matches!(err, TeleopError::Stream { line: 4, .. }), "{err}");

    let cut = &text[..text.len() - 10];
    let err = read_stream(BufReader::new(cut.as_bytes())).unwrap_err();
    assert!(matches!(err, TeleopError::Stream { .. }), "{err}");

    assert!(read_stream(BufReader::new(&b""[..])).is_err());
}

#[test]
fn scenario_names_parse() {
    let p = SynthParams::default();
    for name in ["arm_wave", "forward_step", "backward_step", "idle", "turn(0.6)", "turn:-1.2"] {
        assert!(!synth_named(name, &p).unwrap().is_empty(), "{name}");
    }
    assert!(synth_named("moonwalk", &p).is_err());
    assert!(synth_named("turn(x)", &p).is_err());
}

#[test]
fn cli_synth_writes_a_readable_stream() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wave.ndjson");
    let status = Command::new(env!("CARGO_BIN_EXE_teleop"))
        .args(["synth", "arm_wave", "--duration", "2", "--out"])
        .arg(&path)
        .status()
        .unwrap();
    assert!(status.success());
    let (_, frames) = read_stream(BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(frames.len(), 40);
}

#[test]
fn cli_rejects_unknown_scenario() {
    let out = Command::new(env!("CARGO_BIN_EXE_teleop"))
        .args(["synth", "moonwalk"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("teleop:"));
}

#[test]
fn cli_bench_latency_reports_percentiles() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wave.ndjson");
    let frames = synth(
        Scenario::ArmWave,
        &SynthParams {
            duration_s: Some(1.0),
            ..Default::default()
        },
    )
    .unwrap();
    record(&frames, 20.0, std::fs::File::create(&path).unwrap()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_teleop"))
        .args(["bench-latency", "--speed", "4"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("frames=20") && text.contains("p95=") && text.contains("drops=0"), "{text}");
}
