use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};

use humanoid_teleop::actuation::Simulator;
use humanoid_teleop::bench::bench_latency;
use humanoid_teleop::bus::bridge::{BridgeClient, BridgeServer, RemoteLink, DEFAULT_TCP_PORT, DEFAULT_WS_PORT};
use humanoid_teleop::bus::{
    Payload, TopicRegistry, TOPIC_COMMANDS, TOPIC_GAIT_EVENTS, TOPIC_ROBOT_STATE, TOPIC_SKELETON,
    TOPIC_SKEL_ANGLES,
};
use humanoid_teleop::locomotion::GaitEvent;
use humanoid_teleop::pipeline::{self, PipelineConfig};
use humanoid_teleop::stream::{self, read_stream, StreamReader, SynthParams};
use humanoid_teleop::Result;

#[derive(Parser)]
#[command(name = "teleop", version, about = "Skeleton-driven humanoid teleoperation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Publish a recorded stream on the skeleton topic of a bus hub.
    Replay {
        file: PathBuf,
        /// Playback speed multiplier; 0 sends everything at once.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, default_value_t = default_hub())]
        bus: String,
    },
    /// Record skeleton frames from a bus hub until it disconnects.
    Record {
        file: PathBuf,
        #[arg(long, default_value_t = default_hub())]
        bus: String,
        #[arg(long, default_value_t = 20.0)]
        frame_rate: f64,
    },
    /// Generate a synthetic stream: arm_wave, forward_step, backward_step,
    /// turn(ANGLE) or idle.
    Synth {
        scenario: String,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seconds of stream; the scenario's natural length when omitted.
        #[arg(long)]
        duration: Option<f64>,
        /// Wave the arms on top of the scenario.
        #[arg(long)]
        wave_arms: bool,
        #[arg(long, default_value_t = 20.0)]
        frame_rate: f64,
    },
    /// Run the arbiter against a bus hub.
    Pipeline {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Hub address; overrides the config file.
        #[arg(long)]
        bus: Option<String>,
    },
    /// Simulate the robot: follow commands, publish robot_state.
    Sim {
        #[arg(long, default_value_t = 100.0)]
        rate: f64,
        #[arg(long, default_value_t = default_hub())]
        bus: String,
    },
    /// Run the bus hub with its TCP and WebSocket endpoints.
    Bridge {
        #[arg(long, default_value_t = DEFAULT_TCP_PORT)]
        tcp: u16,
        #[arg(long, default_value_t = DEFAULT_WS_PORT)]
        ws: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Per-frame ingress to command egress latency over a stream file.
    BenchLatency {
        file: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn default_hub() -> String {
    format!("127.0.0.1:{DEFAULT_TCP_PORT}")
}

fn load_config(path: Option<&PathBuf>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("teleop: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Replay { file, speed, bus } => {
            let reader = StreamReader::new(BufReader::new(File::open(&file)?))?;
            let client = BridgeClient::connect(&bus, TopicRegistry::canonical(), &[])?;
            let n = stream::replay_frames(reader, speed, |f| {
                client.publish(TOPIC_SKELETON, f.stamp_us, Payload::SkeletonFrame(f))
            })?;
            client.close();
            eprintln!("replayed {n} frames");
        }
        Command::Record { file, bus, frame_rate } => {
            let link = RemoteLink::connect(&bus, &[TOPIC_SKELETON], &[])?;
            let sub = link.bus.subscribe(TOPIC_SKELETON)?;
            let out = BufWriter::new(File::create(&file)?);
            let n = stream::record_subscription(&sub, frame_rate, out)?;
            eprintln!("recorded {n} frames");
        }
        Command::Synth {
            scenario,
            out,
            duration,
            wave_arms,
            frame_rate,
        } => {
            let params = SynthParams {
                frame_rate_hz: frame_rate,
                duration_s: duration,
                wave_arms,
                ..Default::default()
            };
            let frames = stream::synth_named(&scenario, &params)?;
            match out {
                Some(p) => {
                    stream::record(&frames, frame_rate, BufWriter::new(File::create(p)?))?;
                }
                None => {
                    let stdout = io::stdout();
                    let mut lock = stdout.lock();
                    stream::record(&frames, frame_rate, &mut lock)?;
                    lock.flush()?;
                }
            }
        }
        Command::Pipeline { config, bus } => {
            let cfg = load_config(config.as_ref())?;
            let addr = bus.or_else(|| cfg.bus.clone()).unwrap_or_else(default_hub);
            let link = RemoteLink::connect(
                &addr,
                &[TOPIC_SKELETON, TOPIC_ROBOT_STATE],
                &[TOPIC_SKEL_ANGLES, TOPIC_COMMANDS, TOPIC_GAIT_EVENTS],
            )?;
            let input = pipeline::subscribe_input(&link.bus)?;
            let report = pipeline::run_with_input(cfg, &link.bus, input, Arc::new(AtomicBool::new(false)))?;
            // Give the final hold a moment to leave before tearing down.
            std::thread::sleep(Duration::from_millis(100));
            link.close();
            eprintln!(
                "processed {} frames, {} out of order, {} input drops",
                report.counters.frames_processed, report.counters.frames_out_of_order, report.input_drops
            );
        }
        Command::Sim { rate, bus } => {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(humanoid_teleop::TeleopError::Config(format!("bad rate {rate}")));
            }
            let link = RemoteLink::connect(&bus, &[TOPIC_COMMANDS, TOPIC_GAIT_EVENTS], &[TOPIC_ROBOT_STATE])?;
            let input = link.bus.subscribe_many(&[TOPIC_COMMANDS, TOPIC_GAIT_EVENTS], 256)?;
            let mut sim = Simulator::default();
            let period = Duration::from_secs_f64(1.0 / rate);
            let start = Instant::now();
            let mut next = start;
            loop {
                while let Some(env) = input.try_recv() {
                    match env.payload {
                        Payload::JointCommands(c) => sim.apply_commands(&c),
                        Payload::GaitEvent(GaitEvent::MotionCompleted {
                            heading_delta,
                            displacement,
                            stamp_us,
                            ..
                        }) => sim.complete_motion(stamp_us, heading_delta, displacement),
                        _ => {}
                    }
                }
                if input.is_closed() {
                    break;
                }
                let state = sim.step(period.as_secs_f64()).clone();
                let stamp = start.elapsed().as_micros() as u64;
                if link
                    .bus
                    .publish(TOPIC_ROBOT_STATE, stamp, Payload::RobotState(state))
                    .is_err()
                {
                    break;
                }
                next += period;
                if let Some(d) = next.checked_duration_since(Instant::now()) {
                    std::thread::sleep(d);
                }
            }
            link.wait()?;
        }
        Command::Bridge { tcp, ws, host } => {
            let bus = humanoid_teleop::Bus::default();
            let server = BridgeServer::serve(bus, (host.as_str(), tcp), Some((host.as_str(), ws)))?;
            eprintln!(
                "bridge: tcp {} ws {}",
                server.tcp_addr(),
                server.ws_addr().map(|a| a.to_string()).unwrap_or_default()
            );
            server.wait();
        }
        Command::BenchLatency { file, speed, config } => {
            let cfg = load_config(config.as_ref())?;
            let (_, frames) = read_stream(BufReader::new(File::open(&file)?))?;
            let report = bench_latency(cfg, frames, speed)?;
            println!("{}", report.summary());
        }
    }
    Ok(())
}
