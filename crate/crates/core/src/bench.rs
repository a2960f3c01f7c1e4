//! Frame-ingress to command-egress latency, measured through the real bus
//! and pipeline loop.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::bus::wire::encode_envelope;
use crate::bus::{
    Bus, Envelope, Payload, DEFAULT_QUEUE_CAPACITY, TOPIC_COMMANDS, TOPIC_GAIT_EVENTS,
    TOPIC_SKELETON, TOPIC_SKEL_ANGLES,
};
use crate::error::{Result, TeleopError};
use crate::pipeline::{publish_all, run_with_input, subscribe_input, Arbiter, PipelineConfig, RunReport};
use crate::skeleton::SkeletonFrame;
use crate::stream::replay_frames;

pub const OUTPUT_TOPICS: [&str; 3] = [TOPIC_SKEL_ANGLES, TOPIC_COMMANDS, TOPIC_GAIT_EVENTS];

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub frames: usize,
    /// One sample per frame that produced a command batch.
    pub samples: Vec<Duration>,
    pub input_drops: u64,
    pub output_drops: u64,
    pub run: RunReport,
    /// Everything the pipeline published, in arrival order.
    pub log: Vec<Envelope>,
}

impl LatencyReport {
    /// Nearest-rank percentile, `p` in `[0, 100]`.
    pub fn percentile(&self, p: f64) -> Option<Duration> {
        if self.samples.is_empty() {
            return None;
        }
        let mut sorted = self.samples.clone();
        sorted.sort();
        let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
        Some(sorted[rank.clamp(1, sorted.len()) - 1])
    }

    pub fn drops(&self) -> u64 {
        self.input_drops + self.output_drops
    }

    pub fn summary(&self) -> String {
        let ms = |p: f64| {
            self.percentile(p)
                .map(|d| format!("{:.3}", d.as_secs_f64() * 1e3))
                .unwrap_or_else(|| "-".into())
        };
        format!(
            "frames={} samples={} p50={}ms p95={}ms p99={}ms max={}ms drops={}",
            self.frames,
            self.samples.len(),
            ms(50.0),
            ms(95.0),
            ms(99.0),
            ms(100.0),
            self.drops()
        )
    }
}

/// Replays `frames` at `speed` into a pipeline loop on a private bus and
/// times each frame's first command batch.
pub fn bench_latency(cfg: PipelineConfig, frames: Vec<SkeletonFrame>, speed: f64) -> Result<LatencyReport> {
    cfg.validate()?;
    let bus = Bus::default();
    let probe = bus.subscribe_many(&OUTPUT_TOPICS, DEFAULT_QUEUE_CAPACITY)?;
    let input = subscribe_input(&bus)?;
    let stop = Arc::new(AtomicBool::new(false));
    let probe_stop = Arc::new(AtomicBool::new(false));
    let ingress: Arc<Mutex<HashMap<u64, Instant>>> = Arc::default();

    let pipeline = {
        let (bus, stop) = (bus.clone(), stop.clone());
        thread::spawn(move || run_with_input(cfg, &bus, input, stop))
    };
    let prober = {
        let (ingress, probe_stop) = (ingress.clone(), probe_stop.clone());
        thread::spawn(move || {
            let mut log = Vec::new();
            let mut samples = Vec::new();
            let mut seen = BTreeSet::new();
            loop {
                match probe.recv_timeout(Duration::from_millis(20)) {
                    Ok(Some(env)) => {
                        let arrived = Instant::now();
                        if env.topic == TOPIC_COMMANDS && seen.insert(env.stamp_us) {
                            if let Some(t0) = ingress.lock().unwrap().get(&env.stamp_us) {
                                samples.push(arrived - *t0);
                            }
                        }
                        log.push(env);
                    }
                    Ok(None) if probe_stop.load(Ordering::SeqCst) => break,
                    Ok(None) => {}
                    Err(_) => break,
                }
            }
            (log, samples, probe.dropped())
        })
    };

    let count = replay_frames(frames.into_iter().map(Ok), speed, |f| {
        ingress.lock().unwrap().insert(f.stamp_us, Instant::now());
        bus.publish(TOPIC_SKELETON, f.stamp_us, Payload::SkeletonFrame(f))
            .map(|_| ())
    });
    // Let the loop drain without tripping the starvation watchdog.
    thread::sleep(Duration::from_millis(300));
    stop.store(true, Ordering::SeqCst);
    let run = pipeline
        .join()
        .map_err(|_| TeleopError::Config("pipeline thread panicked".into()))?;
    probe_stop.store(true, Ordering::SeqCst);
    let (log, samples, output_drops) = prober
        .join()
        .map_err(|_| TeleopError::Config("probe thread panicked".into()))?;
    let count = count?;
    let run = run?;
    Ok(LatencyReport {
        frames: count,
        samples,
        input_drops: run.input_drops,
        output_drops,
        run,
        log,
    })
}

/// Runs the arbiter over `frames` in lockstep (no threads, no timing) and
/// returns the messages it publishes, ending with the final hold the
/// service loop sends on shutdown.
pub fn run_offline(cfg: PipelineConfig, frames: &[SkeletonFrame]) -> Result<Vec<Envelope>> {
    let mut arbiter = Arbiter::new(cfg)?;
    let bus = Bus::default();
    let capacity = frames.len().saturating_mul(64).max(DEFAULT_QUEUE_CAPACITY);
    let sub = bus.subscribe_many(&OUTPUT_TOPICS, capacity)?;
    let mut last = 0;
    for f in frames {
        last = last.max(f.stamp_us);
        publish_all(&bus, arbiter.process_frame(f))?;
    }
    publish_all(&bus, arbiter.hold_position(last))?;
    Ok(sub.drain())
}

/// One JSON line per message, for byte-level comparison of runs.
pub fn encode_log(log: &[Envelope]) -> Result<Vec<String>> {
    log.iter().map(encode_envelope).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{synth, Scenario, SynthParams};

    #[test]
    fn percentiles_use_nearest_rank() {
        let report = LatencyReport {
            frames: 4,
            samples: [4, 1, 3, 2].map(Duration::from_millis).to_vec(),
            input_drops: 0,
            output_drops: 0,
            run: RunReport::default(),
            log: vec![],
        };
        assert_eq!(report.percentile(50.0), Some(Duration::from_millis(2)));
        assert_eq!(report.percentile(95.0), Some(Duration::from_millis(4)));
        assert_eq!(report.percentile(0.0), Some(Duration::from_millis(1)));
    }

    #[test]
    fn short_bench_matches_offline_log() {
        let frames = synth(
            Scenario::ArmWave,
            &SynthParams {
                duration_s: Some(1.0),
                ..Default::default()
            },
        )
        .unwrap();
        let report = bench_latency(PipelineConfig::default(), frames.clone(), 4.0).unwrap();
        assert_eq!(report.frames, 20);
        assert_eq!(report.samples.len(), 20);
        assert_eq!(report.drops(), 0);
        let offline = run_offline(PipelineConfig::default(), &frames).unwrap();
        assert_eq!(encode_log(&report.log).unwrap(), encode_log(&offline).unwrap());
    }
}
