//! JSON-lines over TCP: one request envelope per line, one reply per line.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::api::{handle, Envelope, Message, Reply, StoreApi, PROTOCOL_VERSION};
use crate::clock::Millis;
use crate::records::{AgentRecord, AgentRequest, Capabilities, OneShotResult, PollReply, Problem, Publication, SolutionPoolEntry};
use crate::store::{Store, StoreError};

/// A running TCP front for a store.
pub struct TcpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl TcpServer {
    /// Accept connections on `addr` (use port 0 for an ephemeral port).
    pub fn spawn(store: Arc<Store>, addr: impl ToSocketAddrs) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = std::thread::spawn(move || {
            while !flag.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let store = store.clone();
                        let flag = flag.clone();
                        std::thread::spawn(move || serve_connection(store.as_ref(), stream, &flag));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(10));
                    }
                    Err(e) => tracing::warn!("accept failed: {e}"),
                }
            }
        });
        Ok(Self {
            addr,
            stop,
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stop accepting; open connections close on their next read.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for TcpServer {
    fn drop(&mut self) {
        self.stop_now();
    }
}

fn serve_connection(store: &Store, stream: TcpStream, stop: &AtomicBool) {
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_read_timeout(Some(Duration::from_millis(200)));
    let Ok(mut writer) = stream.try_clone() else {
        return;
    };
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        if stop.load(Ordering::Relaxed) {
            return;
        }
        match reader.read_line(&mut line) {
            Ok(0) => return,
            Ok(_) if !line.ends_with('\n') => continue,
            Ok(_) => {}
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => continue,
            Err(_) => return,
        }
        if stop.load(Ordering::Relaxed) {
            return;
        }
        let reply = match serde_json::from_str::<Envelope<Message>>(line.trim_end()) {
            Ok(env) => handle(store, env),
            Err(e) => Envelope {
                protocol_version: PROTOCOL_VERSION,
                mission_id: String::new(),
                model_version: 0,
                body: Reply::Error(crate::api::WireError {
                    code: "protocol".into(),
                    message: e.to_string(),
                    current_version: None,
                }),
            },
        };
        line.clear();
        let mut text = serde_json::to_string(&reply).expect("reply serializes");
        text.push('\n');
        if writer.write_all(text.as_bytes()).and_then(|_| writer.flush()).is_err() {
            return;
        }
    }
}

/// Client side of [`TcpServer`]. Reconnects lazily; any transport failure
/// surfaces as [`StoreError::Unreachable`].
pub struct TcpStoreClient {
    addr: SocketAddr,
    conn: Mutex<Option<(BufReader<TcpStream>, TcpStream)>>,
    timeout: Duration,
    last_model_version: AtomicU64,
}

impl TcpStoreClient {
    pub fn new(addr: impl ToSocketAddrs) -> Result<Self, StoreError> {
        let addr = addr
            .to_socket_addrs()
            .map_err(|e| StoreError::Unreachable(e.to_string()))?
            .next()
            .ok_or_else(|| StoreError::Unreachable("no address".into()))?;
        Ok(Self {
            addr,
            conn: Mutex::new(None),
            timeout: Duration::from_secs(30),
            last_model_version: AtomicU64::new(0),
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Model version stamped on the last reply about a mission.
    pub fn last_model_version(&self) -> u64 {
        self.last_model_version.load(Ordering::Relaxed)
    }

    fn call(&self, mission_id: &str, body: Message) -> Result<Reply, StoreError> {
        let unreachable = |e: std::io::Error| StoreError::Unreachable(e.to_string());
        let mut guard = self.conn.lock().unwrap_or_else(|e| e.into_inner());
        if guard.is_none() {
            let stream = TcpStream::connect_timeout(&self.addr, self.timeout).map_err(unreachable)?;
            stream.set_read_timeout(Some(self.timeout)).map_err(unreachable)?;
            let _ = stream.set_nodelay(true);
            let reader = BufReader::new(stream.try_clone().map_err(unreachable)?);
            *guard = Some((reader, stream));
        }
        let env = Envelope {
            protocol_version: PROTOCOL_VERSION,
            mission_id: mission_id.into(),
            model_version: 0,
            body,
        };
        let mut text = serde_json::to_string(&env).expect("message serializes");
        text.push('\n');
        let (reader, writer) = guard.as_mut().expect("connected");
        let mut line = String::new();
        let result = writer
            .write_all(text.as_bytes())
            .and_then(|_| writer.flush())
            .and_then(|_| reader.read_line(&mut line));
        match result {
            Ok(n) if n > 0 => {}
            Ok(_) => {
                *guard = None;
                return Err(StoreError::Unreachable("connection closed".into()));
            }
            Err(e) => {
                *guard = None;
                return Err(unreachable(e));
            }
        }
        let reply: Envelope<Reply> = serde_json::from_str(line.trim_end()).map_err(|e| StoreError::Protocol(e.to_string()))?;
        if !reply.mission_id.is_empty() {
            self.last_model_version.store(reply.model_version, Ordering::Relaxed);
        }
        match reply.body {
            Reply::Error(w) => Err(w.into()),
            r => Ok(r),
        }
    }
}

fn unexpected(r: Reply) -> StoreError {
    StoreError::Protocol(format!("unexpected reply {r:?}"))
}

fn mission_of(problem_id: &str) -> &str {
    problem_id.split('@').next().unwrap_or("")
}

impl StoreApi for TcpStoreClient {
    fn register(&self, agent_id: &str, capabilities: Capabilities) -> Result<AgentRecord, StoreError> {
        match self.call(
            "",
            Message::Register {
                agent_id: agent_id.into(),
                capabilities,
            },
        )? {
            Reply::Registered { record } => Ok(record),
            r => Err(unexpected(r)),
        }
    }

    fn heartbeat(&self, agent_id: &str, assignment: Option<u64>) -> Result<Millis, StoreError> {
        match self.call(
            "",
            Message::Heartbeat {
                agent_id: agent_id.into(),
                assignment,
            },
        )? {
            Reply::Time { now } => Ok(now),
            r => Err(unexpected(r)),
        }
    }

    fn poll(&self, agent_id: &str) -> Result<PollReply, StoreError> {
        match self.call("", Message::Poll { agent_id: agent_id.into() })? {
            Reply::Polled { poll } => Ok(poll),
            r => Err(unexpected(r)),
        }
    }

    fn claim(&self, agent_id: &str) -> Result<Option<AgentRequest>, StoreError> {
        match self.call("", Message::Claim { agent_id: agent_id.into() })? {
            Reply::Claimed { request } => Ok(request),
            r => Err(unexpected(r)),
        }
    }

    fn complete(&self, agent_id: &str, request_id: u64, outcome: Result<OneShotResult, String>) -> Result<bool, StoreError> {
        match self.call(
            "",
            Message::Complete {
                agent_id: agent_id.into(),
                request_id,
                outcome: outcome.into(),
            },
        )? {
            Reply::Accepted { accepted } => Ok(accepted),
            r => Err(unexpected(r)),
        }
    }

    fn publish(&self, agent_id: &str, problem_id: &str, publication: Publication) -> Result<bool, StoreError> {
        match self.call(
            mission_of(problem_id),
            Message::Publish {
                agent_id: agent_id.into(),
                problem_id: problem_id.into(),
                publication,
            },
        )? {
            Reply::Accepted { accepted } => Ok(accepted),
            r => Err(unexpected(r)),
        }
    }

    fn fetch_model(&self, problem_id: &str) -> Result<Problem, StoreError> {
        match self.call(
            mission_of(problem_id),
            Message::FetchModel {
                problem_id: problem_id.into(),
            },
        )? {
            Reply::Model { problem } => Ok(*problem),
            r => Err(unexpected(r)),
        }
    }

    fn fetch_pool(&self, problem_id: &str) -> Result<Vec<SolutionPoolEntry>, StoreError> {
        match self.call(
            mission_of(problem_id),
            Message::FetchPool {
                problem_id: problem_id.into(),
            },
        )? {
            Reply::Pool { entries } => Ok(entries),
            r => Err(unexpected(r)),
        }
    }
}
