//! Exposes a [`Bus`] to other processes. TCP clients speak one JSON object
//! per line; WebSocket clients send and receive the same objects as text
//! messages. Endpoints are configured statically; there is no discovery.

use std::io::{BufRead, BufReader, ErrorKind};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use tungstenite::{Message, WebSocket};

use super::wire::{self, ClientRequest, Hello, ServerHello};
use super::{Bus, Envelope, Payload, Subscription, TopicRegistry, DEFAULT_QUEUE_CAPACITY};
use crate::error::{Result, TeleopError};

pub const DEFAULT_TCP_PORT: u16 = 7401;
pub const DEFAULT_WS_PORT: u16 = 7402;

const ACCEPT_POLL: Duration = Duration::from_millis(5);
const FORWARD_POLL: Duration = Duration::from_millis(50);
const WS_READ_POLL: Duration = Duration::from_millis(2);
const HELLO_TIMEOUT: Duration = Duration::from_secs(5);

/// Running TCP (and optionally WebSocket) listeners for one bus.
pub struct BridgeServer {
    tcp_addr: SocketAddr,
    ws_addr: Option<SocketAddr>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl BridgeServer {
    pub fn serve<A: ToSocketAddrs>(bus: Bus, tcp: A, ws: Option<A>) -> Result<Self> {
        let stop = Arc::new(AtomicBool::new(false));
        let tcp_listener = TcpListener::bind(tcp)?;
        let tcp_addr = tcp_listener.local_addr()?;
        let mut threads = vec![spawn_acceptor(tcp_listener, bus.clone(), stop.clone(), handle_tcp)?];
        let mut ws_addr = None;
        if let Some(ws) = ws {
            let listener = TcpListener::bind(ws)?;
            ws_addr = Some(listener.local_addr()?);
            threads.push(spawn_acceptor(listener, bus, stop.clone(), handle_ws)?);
        }
        Ok(Self {
            tcp_addr,
            ws_addr,
            stop,
            threads,
        })
    }

    pub fn tcp_addr(&self) -> SocketAddr {
        self.tcp_addr
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws_addr
    }

    /// Stops accepting. Live connections end when their peer hangs up or
    /// the bus closes.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Blocks until the acceptors exit.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for BridgeServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

/// TCP-only bridge.
pub fn serve_bridge<A: ToSocketAddrs>(bus: Bus, addr: A) -> Result<BridgeServer> {
    BridgeServer::serve(bus, addr, None)
}

fn spawn_acceptor(
    listener: TcpListener,
    bus: Bus,
    stop: Arc<AtomicBool>,
    handler: fn(TcpStream, Bus),
) -> Result<JoinHandle<()>> {
    listener.set_nonblocking(true)?;
    Ok(thread::spawn(move || {
        while !stop.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let bus = bus.clone();
                    thread::spawn(move || {
                        if stream.set_nonblocking(false).is_ok() {
                            handler(stream, bus);
                        }
                    });
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
                Err(_) => thread::sleep(ACCEPT_POLL),
            }
        }
    }))
}

fn topic_refs(topics: &[String]) -> Vec<&str> {
    topics.iter().map(String::as_str).collect()
}

fn handle_tcp(stream: TcpStream, bus: Bus) {
    let _ = serve_tcp_connection(stream, bus);
}

fn serve_tcp_connection(stream: TcpStream, bus: Bus) -> Result<()> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(HELLO_TIMEOUT))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let writer = Arc::new(Mutex::new(stream));

    let mut line = String::new();
    if wire::read_line(&mut reader, &mut line)?.is_none() {
        return Ok(());
    }
    let hello: Hello = serde_json::from_str(line.trim())?;
    if let Err(e) = hello.verify(bus.registry()) {
        let mut w = writer.lock().unwrap_or_else(|p| p.into_inner());
        wire::write_line(&mut *w, &ServerHello::refusal(&e))?;
        return Err(e);
    }
    // Subscribe before welcoming so nothing published after the client's
    // connect returns is missed.
    let initial = if hello.subscribe.is_empty() {
        None
    } else {
        Some(bus.subscribe_many(&topic_refs(&hello.subscribe), DEFAULT_QUEUE_CAPACITY)?)
    };
    {
        let mut w = writer.lock().unwrap_or_else(|p| p.into_inner());
        wire::write_line(&mut *w, &ServerHello::welcome(bus.registry()))?;
        w.set_read_timeout(None)?;
    }

    let alive = Arc::new(AtomicBool::new(true));
    let mut forwarders = Vec::new();
    if let Some(sub) = initial {
        forwarders.push(spawn_forwarder(sub, writer.clone(), alive.clone()));
    }

    let result = (|| -> Result<()> {
        while wire::read_line(&mut reader, &mut line)?.is_some() {
            match serde_json::from_str::<ClientRequest>(line.trim())? {
                ClientRequest::Publish {
                    topic,
                    stamp_us,
                    payload,
                } => {
                    bus.publish(&topic, stamp_us, payload)?;
                }
                ClientRequest::Subscribe { topics } => {
                    let sub = bus.subscribe_many(&topic_refs(&topics), DEFAULT_QUEUE_CAPACITY)?;
                    forwarders.push(spawn_forwarder(sub, writer.clone(), alive.clone()));
                }
            }
        }
        Ok(())
    })();

    alive.store(false, Ordering::SeqCst);
    if let Ok(w) = writer.lock() {
        let _ = w.shutdown(std::net::Shutdown::Both);
    }
    for f in forwarders {
        let _ = f.join();
    }
    result
}

fn spawn_forwarder(
    sub: Subscription,
    writer: Arc<Mutex<TcpStream>>,
    alive: Arc<AtomicBool>,
) -> JoinHandle<()> {
    thread::spawn(move || {
        while alive.load(Ordering::SeqCst) {
            match sub.recv_timeout(FORWARD_POLL) {
                Ok(Some(env)) => {
                    let mut w = writer.lock().unwrap_or_else(|p| p.into_inner());
                    if wire::write_line(&mut *w, &env).is_err() {
                        break;
                    }
                }
                Ok(None) => {}
                Err(_) => break,
            }
        }
    })
}

fn handle_ws(stream: TcpStream, bus: Bus) {
    let _ = serve_ws_connection(stream, bus);
}

fn ws_read_text(ws: &mut WebSocket<TcpStream>) -> Result<Option<String>> {
    match ws.read() {
        Ok(Message::Text(t)) => Ok(Some(t)),
        Ok(Message::Close(_)) => Err(TeleopError::Disconnected),
        Ok(_) => Ok(None),
        Err(tungstenite::Error::Io(e))
            if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) =>
        {
            Ok(None)
        }
        Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => {
            Err(TeleopError::Disconnected)
        }
        Err(e) => Err(e.into()),
    }
}

fn serve_ws_connection(stream: TcpStream, bus: Bus) -> Result<()> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(HELLO_TIMEOUT))?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => TeleopError::from(e),
        tungstenite::HandshakeError::Interrupted(_) => TeleopError::Disconnected,
    })?;

    let deadline = std::time::Instant::now() + HELLO_TIMEOUT;
    let hello_text = loop {
        match ws_read_text(&mut ws)? {
            Some(t) => break t,
            None if std::time::Instant::now() >= deadline => return Err(TeleopError::Disconnected),
            None => continue,
        }
    };
    let hello: Hello = serde_json::from_str(hello_text.trim())?;
    if let Err(e) = hello.verify(bus.registry()) {
        ws.send(Message::Text(serde_json::to_string(&ServerHello::refusal(&e))?))?;
        let _ = ws.close(None);
        let _ = ws.flush();
        return Err(e);
    }
    let mut subs = Vec::new();
    if !hello.subscribe.is_empty() {
        subs.push(bus.subscribe_many(&topic_refs(&hello.subscribe), DEFAULT_QUEUE_CAPACITY)?);
    }
    ws.send(Message::Text(serde_json::to_string(&ServerHello::welcome(bus.registry()))?))?;
    ws.get_ref().set_read_timeout(Some(WS_READ_POLL))?;
    loop {
        while let Some(text) = ws_read_text(&mut ws)? {
            match serde_json::from_str::<ClientRequest>(text.trim())? {
                ClientRequest::Publish {
                    topic,
                    stamp_us,
                    payload,
                } => {
                    bus.publish(&topic, stamp_us, payload)?;
                }
                ClientRequest::Subscribe { topics } => {
                    subs.push(bus.subscribe_many(&topic_refs(&topics), DEFAULT_QUEUE_CAPACITY)?);
                }
            }
        }
        let mut wrote = false;
        for sub in &subs {
            if sub.is_closed() && sub.is_empty() {
                let _ = ws.close(None);
                let _ = ws.flush();
                return Ok(());
            }
            while let Some(env) = sub.try_recv() {
                ws.write(Message::Text(wire::encode_envelope(&env)?))?;
                wrote = true;
            }
        }
        if wrote {
            match ws.flush() {
                Ok(()) => {}
                Err(tungstenite::Error::Io(e)) if e.kind() == ErrorKind::WouldBlock => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}

/// TCP client end of a bridge link.
pub struct BridgeClient {
    registry: TopicRegistry,
    writer: Mutex<TcpStream>,
    reader: Mutex<LineReader>,
}

struct LineReader {
    inner: BufReader<TcpStream>,
    pending: Vec<u8>,
}

impl LineReader {
    /// A complete line, `Ok(None)` when the read timed out mid-way.
    fn next_line(&mut self) -> Result<Option<String>> {
        loop {
            match self.inner.read_until(b'\n', &mut self.pending) {
                Ok(0) => return Err(TeleopError::Disconnected),
                Ok(_) => {
                    if self.pending.last() != Some(&b'\n') {
                        return Err(TeleopError::Disconnected);
                    }
                    let line = String::from_utf8(std::mem::take(&mut self.pending))
                        .map_err(|e| TeleopError::Io(std::io::Error::new(ErrorKind::InvalidData, e)))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    return Ok(Some(line));
                }
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Ok(None)
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl BridgeClient {
    /// Connects and performs the hello exchange, subscribing to `subscribe`.
    pub fn connect<A: ToSocketAddrs>(addr: A, registry: TopicRegistry, subscribe: &[&str]) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut writer = stream.try_clone()?;
        wire::write_line(&mut writer, &Hello::new(&registry, subscribe))?;
        let mut reader = LineReader {
            inner: BufReader::new(stream),
            pending: Vec::new(),
        };
        reader.inner.get_ref().set_read_timeout(Some(HELLO_TIMEOUT))?;
        let line = reader
            .next_line()?
            .ok_or_else(|| TeleopError::Io(std::io::Error::new(ErrorKind::TimedOut, "no welcome")))?;
        let answer: ServerHello = serde_json::from_str(line.trim())?;
        answer.into_result(&registry)?;
        reader.inner.get_ref().set_read_timeout(None)?;
        Ok(Self {
            registry,
            writer: Mutex::new(writer),
            reader: Mutex::new(reader),
        })
    }

    pub fn registry(&self) -> &TopicRegistry {
        &self.registry
    }

    /// Publishes through the remote hub, which assigns the sequence number.
    pub fn publish(&self, topic: &str, stamp_us: u64, payload: Payload) -> Result<()> {
        self.registry.check(topic, payload.kind())?;
        let req = ClientRequest::Publish {
            topic: topic.to_string(),
            stamp_us,
            payload,
        };
        let mut w = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        wire::write_line(&mut *w, &req)
    }

    pub fn subscribe(&self, topics: &[&str]) -> Result<()> {
        for t in topics {
            self.registry.kind_of(t)?;
        }
        let req = ClientRequest::Subscribe {
            topics: topics.iter().map(|t| t.to_string()).collect(),
        };
        let mut w = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        wire::write_line(&mut *w, &req)
    }

    pub fn recv(&self) -> Result<Envelope> {
        let mut r = self.reader.lock().unwrap_or_else(|p| p.into_inner());
        r.inner.get_ref().set_read_timeout(None)?;
        loop {
            if let Some(line) = r.next_line()? {
                return wire::decode_envelope(&line);
            }
        }
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Envelope>> {
        let mut r = self.reader.lock().unwrap_or_else(|p| p.into_inner());
        r.inner
            .get_ref()
            .set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        match r.next_line()? {
            Some(line) => wire::decode_envelope(&line).map(Some),
            None => Ok(None),
        }
    }

    /// Re-delivers every envelope from the remote hub into `bus`, fields
    /// unchanged, until the link drops or the local bus closes.
    pub fn mirror_into(self: Arc<Self>, bus: Bus) -> JoinHandle<Result<()>> {
        thread::spawn(move || loop {
            let env = self.recv()?;
            bus.relay(env)?;
        })
    }

    pub fn close(&self) {
        if let Ok(w) = self.writer.lock() {
            let _ = w.shutdown(std::net::Shutdown::Both);
        }
    }
}

pub fn connect_bridge<A: ToSocketAddrs>(
    addr: A,
    registry: TopicRegistry,
    subscribe: &[&str],
) -> Result<BridgeClient> {
    BridgeClient::connect(addr, registry, subscribe)
}

/// A local bus joined to a remote hub: `inbound` topics flow from the hub
/// into the local bus, `outbound` topics from the local bus to the hub.
pub struct RemoteLink {
    pub bus: Bus,
    client: Arc<BridgeClient>,
    threads: Vec<JoinHandle<Result<()>>>,
}

impl RemoteLink {
    /// The local bus is closed when the link drops.
    pub fn connect<A: ToSocketAddrs>(addr: A, inbound: &[&str], outbound: &[&str]) -> Result<Self> {
        if let Some(t) = inbound.iter().find(|t| outbound.contains(t)) {
            return Err(TeleopError::Config(format!("topic `{t}` would loop through the link")));
        }
        let bus = Bus::default();
        let client = Arc::new(BridgeClient::connect(addr, bus.registry().clone(), inbound)?);
        let mut threads = Vec::new();
        {
            let (client, bus) = (client.clone(), bus.clone());
            threads.push(thread::spawn(move || {
                let res = loop {
                    match client.recv() {
                        Ok(env) => {
                            if let Err(e) = bus.relay(env) {
                                break Err(e);
                            }
                        }
                        Err(e) => break Err(e),
                    }
                };
                bus.close();
                match res {
                    Err(TeleopError::Disconnected) => Ok(()),
                    other => other,
                }
            }));
        }
        if !outbound.is_empty() {
            let sub = bus.subscribe_many(outbound, DEFAULT_QUEUE_CAPACITY)?;
            let client = client.clone();
            threads.push(thread::spawn(move || loop {
                match sub.recv() {
                    Ok(env) => client.publish(&env.topic, env.stamp_us, env.payload)?,
                    Err(TeleopError::Disconnected) => return Ok(()),
                    Err(e) => return Err(e),
                }
            }));
        }
        Ok(Self { bus, client, threads })
    }

    /// Waits until the remote end goes away.
    pub fn wait(self) -> Result<()> {
        let mut first_err = None;
        for t in self.threads {
            if let Ok(Err(e)) = t.join() {
                first_err.get_or_insert(e);
            }
        }
        first_err.map_or(Ok(()), Err)
    }

    pub fn close(&self) {
        self.client.close();
        self.bus.close();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::{PayloadKind, TOPIC_COMMANDS, TOPIC_GAIT_EVENTS};

    fn server() -> (Bus, BridgeServer) {
        let bus = Bus::default();
        let srv = BridgeServer::serve(bus.clone(), "127.0.0.1:0", Some("127.0.0.1:0")).unwrap();
        (bus, srv)
    }

    #[test]
    fn handshake_and_round_trip() {
        let (bus, srv) = server();
        let local = bus.subscribe(TOPIC_COMMANDS).unwrap();
        let sub = BridgeClient::connect(srv.tcp_addr(), TopicRegistry::canonical(), &[TOPIC_COMMANDS]).unwrap();
        let publ = BridgeClient::connect(srv.tcp_addr(), TopicRegistry::canonical(), &[]).unwrap();
        // Let the server register the subscriber before publishing.
        thread::sleep(Duration::from_millis(50));
        publ.publish(TOPIC_COMMANDS, 77, Payload::JointCommands(vec![])).unwrap();
        let remote = sub.recv_timeout(Duration::from_secs(2)).unwrap().unwrap();
        let here = local.recv_timeout(Duration::from_secs(2)).unwrap().unwrap();
        assert_eq!(remote, here);
        assert_eq!(
            wire::encode_envelope(&remote).unwrap(),
            wire::encode_envelope(&here).unwrap()
        );
        srv.shutdown();
    }

    #[test]
    fn registry_mismatch_is_refused() {
        let (_bus, srv) = server();
        let mut other = TopicRegistry::canonical();
        other.register("extra", PayloadKind::GaitEvent).unwrap();
        let r = BridgeClient::connect(srv.tcp_addr(), other, &[]);
        assert!(matches!(r, Err(TeleopError::RegistryMismatch { .. })));
        srv.shutdown();
    }

    #[test]
    fn version_mismatch_is_refused() {
        let (_bus, srv) = server();
        let mut s = TcpStream::connect(srv.tcp_addr()).unwrap();
        let mut hello = Hello::new(&TopicRegistry::canonical(), &[]);
        hello.hello = "teleop/0".into();
        wire::write_line(&mut s, &hello).unwrap();
        let mut r = BufReader::new(s);
        let mut line = String::new();
        r.read_line(&mut line).unwrap();
        let answer: ServerHello = serde_json::from_str(&line).unwrap();
        assert!(matches!(
            answer.into_result(&TopicRegistry::canonical()),
            Err(TeleopError::VersionMismatch { .. })
        ));
        srv.shutdown();
    }

    #[test]
    fn websocket_speaks_same_envelopes() {
        let (bus, srv) = server();
        let url = format!("ws://{}", srv.ws_addr().unwrap());
        let (mut ws, _) = tungstenite::connect(url).unwrap();
        let hello = Hello::new(&TopicRegistry::canonical(), &[TOPIC_GAIT_EVENTS]);
        ws.send(Message::Text(serde_json::to_string(&hello).unwrap())).unwrap();
        let Message::Text(welcome) = ws.read().unwrap() else {
            panic!("expected text")
        };
        serde_json::from_str::<ServerHello>(&welcome)
            .unwrap()
            .into_result(&TopicRegistry::canonical())
            .unwrap();

        let local = bus.subscribe(TOPIC_COMMANDS).unwrap();
        let req = ClientRequest::Publish {
            topic: TOPIC_COMMANDS.into(),
            stamp_us: 5,
            payload: Payload::JointCommands(vec![]),
        };
        ws.send(Message::Text(serde_json::to_string(&req).unwrap())).unwrap();
        let got = local.recv_timeout(Duration::from_secs(2)).unwrap().unwrap();
        assert_eq!(got.stamp_us, 5);

        let ev = crate::locomotion::GaitEvent::Reset { stamp_us: 9 };
        bus.publish(TOPIC_GAIT_EVENTS, 9, Payload::GaitEvent(ev.clone())).unwrap();
        let Message::Text(text) = ws.read().unwrap() else {
            panic!("expected text")
        };
        let env = wire::decode_envelope(&text).unwrap();
        assert_eq!(env.payload, Payload::GaitEvent(ev));
        srv.shutdown();
    }
}
