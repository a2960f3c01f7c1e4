//! Topic-based publish/subscribe.
//!
//! A [`Bus`] owns a fixed [`TopicRegistry`], assigns per-topic sequence
//! numbers and fans each message out to every subscriber of that topic.
//! Each subscriber has its own bounded queue; when it is full the oldest
//! message is dropped, so a slow reader never stalls a publisher.
//! [`bridge`] carries the same envelopes over TCP and WebSocket.

pub mod bridge;
pub mod wire;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::{Arc, Condvar, Mutex, MutexGuard, Weak};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::actuation::{JointCommand, SimRobotState};
use crate::error::{Result, TeleopError};
use crate::locomotion::GaitEvent;
use crate::robot::JointAngleSet;
use crate::skeleton::SkeletonFrame;

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;

pub const TOPIC_SKELETON: &str = "skeleton";
pub const TOPIC_SKEL_ANGLES: &str = "skel_angles";
pub const TOPIC_COMMANDS: &str = "commands";
pub const TOPIC_ROBOT_STATE: &str = "robot_state";
pub const TOPIC_GAIT_EVENTS: &str = "gait_events";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    SkeletonFrame,
    JointAngles,
    JointCommands,
    RobotState,
    GaitEvent,
}

impl PayloadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PayloadKind::SkeletonFrame => "skeleton_frame",
            PayloadKind::JointAngles => "joint_angles",
            PayloadKind::JointCommands => "joint_commands",
            PayloadKind::RobotState => "robot_state",
            PayloadKind::GaitEvent => "gait_event",
        }
    }
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Payload {
    SkeletonFrame(SkeletonFrame),
    JointAngles(JointAngleSet),
    JointCommands(Vec<JointCommand>),
    RobotState(SimRobotState),
    GaitEvent(GaitEvent),
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::SkeletonFrame(_) => PayloadKind::SkeletonFrame,
            Payload::JointAngles(_) => PayloadKind::JointAngles,
            Payload::JointCommands(_) => PayloadKind::JointCommands,
            Payload::RobotState(_) => PayloadKind::RobotState,
            Payload::GaitEvent(_) => PayloadKind::GaitEvent,
        }
    }
}

/// One message as it travels: topic, per-topic sequence number, sender
/// stamp and a kind-tagged payload. Serialized field order is
/// `topic, seq, stamp_us, kind, payload`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub topic: String,
    pub seq: u64,
    pub stamp_us: u64,
    #[serde(flatten)]
    pub payload: Payload,
}

impl Envelope {
    pub fn kind(&self) -> PayloadKind {
        self.payload.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicRegistry {
    topics: BTreeMap<String, PayloadKind>,
}

impl Default for TopicRegistry {
    fn default() -> Self {
        Self::canonical()
    }
}

impl TopicRegistry {
    pub fn empty() -> Self {
        Self {
            topics: BTreeMap::new(),
        }
    }

    /// The five pipeline topics.
    pub fn canonical() -> Self {
        let mut r = Self::empty();
        for (topic, kind) in [
            (TOPIC_SKELETON, PayloadKind::SkeletonFrame),
            (TOPIC_SKEL_ANGLES, PayloadKind::JointAngles),
            (TOPIC_COMMANDS, PayloadKind::JointCommands),
            (TOPIC_ROBOT_STATE, PayloadKind::RobotState),
            (TOPIC_GAIT_EVENTS, PayloadKind::GaitEvent),
        ] {
            r.register(topic, kind).expect("canonical topics are unique");
        }
        r
    }

    pub fn register(&mut self, topic: &str, kind: PayloadKind) -> Result<()> {
        if self.topics.contains_key(topic) {
            return Err(TeleopError::Config(format!("topic `{topic}` already registered")));
        }
        self.topics.insert(topic.to_string(), kind);
        Ok(())
    }

    pub fn kind_of(&self, topic: &str) -> Result<PayloadKind> {
        self.topics
            .get(topic)
            .copied()
            .ok_or_else(|| TeleopError::UnknownTopic(topic.to_string()))
    }

    pub fn check(&self, topic: &str, kind: PayloadKind) -> Result<()> {
        let expected = self.kind_of(topic)?;
        if expected == kind {
            Ok(())
        } else {
            Err(TeleopError::KindMismatch {
                topic: topic.to_string(),
                expected: expected.to_string(),
                got: kind.to_string(),
            })
        }
    }

    pub fn topics(&self) -> impl Iterator<Item = (&str, PayloadKind)> {
        self.topics.iter().map(|(t, k)| (t.as_str(), *k))
    }

    /// Hex digest of the sorted `topic=kind` lines; both ends of a bridge
    /// must agree on it.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (topic, kind) in &self.topics {
            h.update(topic.as_bytes());
            h.update(b"=");
            h.update(kind.as_str().as_bytes());
            h.update(b"\n");
        }
        h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Default)]
struct QueueState {
    buf: VecDeque<Envelope>,
    dropped: u64,
    closed: bool,
}

#[derive(Debug)]
struct SubscriberQueue {
    capacity: usize,
    state: Mutex<QueueState>,
    ready: Condvar,
}

impl SubscriberQueue {
    fn lock(&self) -> MutexGuard<'_, QueueState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn push(&self, env: Envelope) {
        let mut st = self.lock();
        if st.closed {
            return;
        }
        if st.buf.len() == self.capacity {
            st.buf.pop_front();
            st.dropped += 1;
        }
        st.buf.push_back(env);
        drop(st);
        self.ready.notify_one();
    }

    fn close(&self) {
        self.lock().closed = true;
        self.ready.notify_all();
    }
}

#[derive(Debug, Default)]
struct TopicState {
    next_seq: u64,
    subscribers: Vec<Weak<SubscriberQueue>>,
}

#[derive(Debug)]
struct BusInner {
    registry: TopicRegistry,
    topics: BTreeMap<String, Mutex<TopicState>>,
    closed: Mutex<bool>,
}

/// In-process hub. Cheap to clone; all clones share the same topics.
#[derive(Debug, Clone)]
pub struct Bus {
    inner: Arc<BusInner>,
}

impl Default for Bus {
    fn default() -> Self {
        Self::new(TopicRegistry::canonical())
    }
}

impl Bus {
    pub fn new(registry: TopicRegistry) -> Self {
        let topics = registry
            .topics()
            .map(|(t, _)| (t.to_string(), Mutex::new(TopicState::default())))
            .collect();
        Self {
            inner: Arc::new(BusInner {
                registry,
                topics,
                closed: Mutex::new(false),
            }),
        }
    }

    pub fn registry(&self) -> &TopicRegistry {
        &self.inner.registry
    }

    fn topic(&self, topic: &str) -> Result<MutexGuard<'_, TopicState>> {
        let slot = self
            .inner
            .topics
            .get(topic)
            .ok_or_else(|| TeleopError::UnknownTopic(topic.to_string()))?;
        Ok(slot.lock().unwrap_or_else(|e| e.into_inner()))
    }

    fn is_closed(&self) -> bool {
        *self.inner.closed.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Publishes `payload` on `topic` and returns the sequence number it got.
    pub fn publish(&self, topic: &str, stamp_us: u64, payload: Payload) -> Result<u64> {
        self.inner.registry.check(topic, payload.kind())?;
        if self.is_closed() {
            return Err(TeleopError::Disconnected);
        }
        let mut st = self.topic(topic)?;
        let seq = st.next_seq;
        st.next_seq += 1;
        let env = Envelope {
            topic: topic.to_string(),
            seq,
            stamp_us,
            payload,
        };
        deliver(&mut st, env);
        Ok(seq)
    }

    /// Delivers an already-sequenced envelope unchanged, e.g. one mirrored
    /// from a remote hub.
    pub fn relay(&self, env: Envelope) -> Result<()> {
        self.inner.registry.check(&env.topic, env.kind())?;
        if self.is_closed() {
            return Err(TeleopError::Disconnected);
        }
        let mut st = self.topic(&env.topic)?;
        st.next_seq = st.next_seq.max(env.seq + 1);
        deliver(&mut st, env);
        Ok(())
    }

    pub fn subscribe(&self, topic: &str) -> Result<Subscription> {
        self.subscribe_many(&[topic], DEFAULT_QUEUE_CAPACITY)
    }

    /// One queue fed by several topics. Ordering is per topic only.
    pub fn subscribe_many(&self, topics: &[&str], capacity: usize) -> Result<Subscription> {
        for t in topics {
            self.inner.registry.kind_of(t)?;
        }
        let queue = Arc::new(SubscriberQueue {
            capacity: capacity.max(1),
            state: Mutex::new(QueueState::default()),
            ready: Condvar::new(),
        });
        if self.is_closed() {
            queue.close();
        }
        for t in topics {
            self.topic(t)?.subscribers.push(Arc::downgrade(&queue));
        }
        Ok(Subscription {
            topics: topics.iter().map(|t| t.to_string()).collect(),
            queue,
        })
    }

    /// Wakes every subscriber with `Disconnected` once its queue drains.
    pub fn close(&self) {
        *self.inner.closed.lock().unwrap_or_else(|e| e.into_inner()) = true;
        for slot in self.inner.topics.values() {
            let st = slot.lock().unwrap_or_else(|e| e.into_inner());
            for q in st.subscribers.iter().filter_map(Weak::upgrade) {
                q.close();
            }
        }
    }
}

fn deliver(st: &mut TopicState, env: Envelope) {
    st.subscribers.retain(|w| w.strong_count() > 0);
    let live: Vec<_> = st.subscribers.iter().filter_map(Weak::upgrade).collect();
    if let Some((last, rest)) = live.split_last() {
        for q in rest {
            q.push(env.clone());
        }
        last.push(env);
    }
}

/// Receiving end of one subscriber. Dropping it unsubscribes.
#[derive(Debug)]
pub struct Subscription {
    topics: Vec<String>,
    queue: Arc<SubscriberQueue>,
}

impl Subscription {
    pub fn topics(&self) -> &[String] {
        &self.topics
    }

    /// Blocks until a message arrives; `Disconnected` once the bus closed
    /// and the queue is empty.
    pub fn recv(&self) -> Result<Envelope> {
        let mut st = self.queue.lock();
        loop {
            if let Some(env) = st.buf.pop_front() {
                return Ok(env);
            }
            if st.closed {
                return Err(TeleopError::Disconnected);
            }
            st = self.queue.ready.wait(st).unwrap_or_else(|e| e.into_inner());
        }
    }

    /// `Ok(None)` on timeout.
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Envelope>> {
        let deadline = Instant::now() + timeout;
        let mut st = self.queue.lock();
        loop {
            if let Some(env) = st.buf.pop_front() {
                return Ok(Some(env));
            }
            if st.closed {
                return Err(TeleopError::Disconnected);
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            st = self
                .queue
                .ready
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    pub fn try_recv(&self) -> Option<Envelope> {
        self.queue.lock().buf.pop_front()
    }

    pub fn drain(&self) -> Vec<Envelope> {
        self.queue.lock().buf.drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.queue.lock().buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Messages discarded by the drop-oldest overflow policy.
    pub fn dropped(&self) -> u64 {
        self.queue.lock().dropped
    }

    pub fn is_closed(&self) -> bool {
        self.queue.lock().closed
    }
}
