//! Coordinator and worker side of multi-process recovery.
//!
//! Workers hold one connection to the coordinator. A crashed worker
//! announces its crash; the first announcer of a signature fixes it with its
//! local command source, and the resulting procedure is sent to every other
//! worker waiting on the same signature, which replays it.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::rc::Rc;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::console::WorkerSummary;
use crate::lang::natives::fixed_args as fixed;
use crate::lang::value::{Flow, Module, Value};
use crate::lang::Interp;
use crate::runtime::{CrashSite, Decision, RecoveryHandler};
use crate::source::StatementPath;
use crate::update::{apply_procedure, CommandSource, CrashEvent, FixProcedure, RecoverySession};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const ENV_COORDINATOR: &str = "INSITU_COORDINATOR";
pub const ENV_RANK: &str = "INSITU_RANK";
pub const ENV_WORLD: &str = "INSITU_WORLD";
pub const ENV_TIMEOUT: &str = "INSITU_DIST_TIMEOUT";
const MAX_MESSAGE: u32 = 64 << 20;

/// What peers compare to decide whether one fix applies to another crash.
/// Messages are left out: they often embed values that differ per worker.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PeerSignature {
    pub exception_kind: String,
    pub location: StatementPath,
}

impl PeerSignature {
    pub fn of(event: &CrashEvent) -> PeerSignature {
        PeerSignature {
            exception_kind: event.exception_kind.clone(),
            location: event.function_path.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkerStatus {
    Running,
    Crashed,
    Recovering,
    Resumed,
}

impl WorkerStatus {
    /// The one status each status may move to.
    pub fn next(self) -> WorkerStatus {
        match self {
            WorkerStatus::Running => WorkerStatus::Crashed,
            WorkerStatus::Crashed => WorkerStatus::Recovering,
            WorkerStatus::Recovering => WorkerStatus::Resumed,
            WorkerStatus::Resumed => WorkerStatus::Running,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerRecord {
    pub worker_id: u32,
    pub address: String,
    pub status: WorkerStatus,
    pub crash_signature: Option<PeerSignature>,
    pub fix_host: bool,
}

impl WorkerRecord {
    /// Advances along the status cycle until `to`; a no-op when already there.
    fn advance(&mut self, to: WorkerStatus) {
        while self.status != to {
            self.status = self.status.next();
        }
    }

    pub fn summary(&self) -> WorkerSummary {
        WorkerSummary {
            rank: self.worker_id,
            status: serde_json::to_value(self.status)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            fix_host: self.fix_host,
            crash: self
                .crash_signature
                .as_ref()
                .map(|s| format!("{} at {}", s.exception_kind, s.location)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    /// Fix the crash locally, then send the procedure.
    FixHost,
    /// Another worker is fixing it; wait for its procedure.
    Wait,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub worker_id: u32,
    /// `resumed`, `failed`, `unreachable`, `timeout` or `skipped`.
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "UPPERCASE")]
pub enum Message {
    Hello {
        worker_id: u32,
        world: u32,
        address: String,
    },
    Crash {
        worker_id: u32,
        signature: PeerSignature,
        summary: String,
    },
    /// From the fix host: the procedure that fixed it, or none if it gave up.
    /// From the coordinator: the procedure to replay.
    Fix {
        signature: PeerSignature,
        procedure: Option<FixProcedure>,
    },
    Ack {
        ok: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        role: Option<Role>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        procedure: Option<FixProcedure>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        report: Vec<Delivery>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Resume {
        worker_id: u32,
        ok: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    /// Per-iteration barrier; the reply carries the sum of all workers' values.
    Sync { worker_id: u32, round: u64, value: f64 },
}

impl Message {
    fn ack() -> Message {
        Message::Ack {
            ok: true,
            role: None,
            procedure: None,
            report: Vec::new(),
            error: None,
        }
    }

    fn nack(error: impl Into<String>) -> Message {
        Message::Ack {
            ok: false,
            role: None,
            procedure: None,
            report: Vec::new(),
            error: Some(error.into()),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    v: u32,
    #[serde(flatten)]
    msg: Message,
}

#[derive(Debug, thiserror::Error)]
pub enum DistError {
    #[error("connection: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad message: {0}")]
    Decode(String),
    #[error("unsupported protocol version {0}")]
    Version(u32),
    #[error("unexpected message: {0:?}")]
    Unexpected(Box<Message>),
    #[error("coordinator refused: {0}")]
    Refused(String),
}

/// Writes one message: a 4-byte big-endian length, then JSON.
pub fn write_message(w: &mut impl Write, msg: &Message) -> Result<(), DistError> {
    let body = serde_json::to_vec(&Envelope {
        v: PROTOCOL_VERSION,
        msg: msg.clone(),
    })
    .map_err(|e| DistError::Decode(e.to_string()))?;
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

pub fn read_message(r: &mut impl Read) -> Result<Message, DistError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len);
    if len > MAX_MESSAGE {
        return Err(DistError::Decode(format!("message of {len} bytes")));
    }
    let mut body = vec![0; len as usize];
    r.read_exact(&mut body)?;
    let env: Envelope = serde_json::from_slice(&body).map_err(|e| DistError::Decode(e.to_string()))?;
    if env.v != PROTOCOL_VERSION {
        return Err(DistError::Version(env.v));
    }
    Ok(env.msg)
}

pub fn timeout_from_env() -> Duration {
    std::env::var(ENV_TIMEOUT)
        .ok()
        .and_then(|s| s.parse::<f64>().ok())
        .map(Duration::from_secs_f64)
        .unwrap_or(DEFAULT_TIMEOUT)
}

// ----- coordinator -------------------------------------------------------

struct Peer {
    record: WorkerRecord,
    writer: Arc<Mutex<TcpStream>>,
}

#[derive(Default)]
struct Round {
    values: BTreeMap<u32, f64>,
    total: Option<f64>,
    taken: usize,
}

#[derive(Default)]
struct State {
    peers: BTreeMap<u32, Peer>,
    world: usize,
    fix_hosts: HashMap<PeerSignature, u32>,
    /// Procedures that already fixed a signature, for late announcers.
    fixed: HashMap<PeerSignature, FixProcedure>,
    rounds: HashMap<u64, Round>,
    replies: HashMap<u32, (bool, Option<String>)>,
}

impl State {
    fn expected(&self) -> usize {
        self.world.max(self.peers.len()).max(1)
    }

    fn try_complete(&mut self, round: u64) {
        let expected = self.expected();
        if let Some(r) = self.rounds.get_mut(&round) {
            if r.total.is_none() && r.values.len() >= expected {
                // summed in worker order so every run adds the same way
                r.total = Some(r.values.values().sum());
            }
        }
    }
}

#[derive(Clone)]
pub struct Coordinator {
    state: Arc<(Mutex<State>, Condvar)>,
    pub timeout: Duration,
    addr: SocketAddr,
}

impl Coordinator {
    /// Binds and starts accepting workers on background threads.
    pub fn start(addr: impl ToSocketAddrs, timeout: Duration) -> std::io::Result<Coordinator> {
        let listener = TcpListener::bind(addr)?;
        let c = Coordinator {
            state: Arc::default(),
            timeout,
            addr: listener.local_addr()?,
        };
        let server = c.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let c = server.clone();
                std::thread::spawn(move || {
                    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
                    if let Err(e) = c.serve(stream) {
                        log::debug!("worker connection {peer} closed: {e}");
                    }
                });
            }
        });
        Ok(c)
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn records(&self) -> Vec<WorkerRecord> {
        let st = self.state.0.lock().unwrap();
        st.peers.values().map(|p| p.record.clone()).collect()
    }

    pub fn summaries(&self) -> Vec<WorkerSummary> {
        self.records().iter().map(WorkerRecord::summary).collect()
    }

    fn serve(&self, stream: TcpStream) -> Result<(), DistError> {
        stream.set_nodelay(true)?;
        let writer = Arc::new(Mutex::new(stream.try_clone()?));
        let address = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
        let mut reader = BufReader::new(stream);
        let mut me: Option<u32> = None;
        loop {
            let msg = read_message(&mut reader)?;
            let reply = self.handle(msg, &mut me, &writer, &address);
            if let Some(reply) = reply {
                write_message(&mut *writer.lock().unwrap(), &reply)?;
            }
        }
    }

    fn register(&self, st: &mut State, id: u32, writer: &Arc<Mutex<TcpStream>>, address: &str) {
        let peer = st.peers.entry(id).or_insert_with(|| Peer {
            record: WorkerRecord {
                worker_id: id,
                address: address.to_string(),
                status: WorkerStatus::Running,
                crash_signature: None,
                fix_host: false,
            },
            writer: writer.clone(),
        });
        peer.writer = writer.clone();
    }

    fn handle(
        &self,
        msg: Message,
        me: &mut Option<u32>,
        writer: &Arc<Mutex<TcpStream>>,
        address: &str,
    ) -> Option<Message> {
        let (lock, cv) = &*self.state;
        match msg {
            Message::Hello {
                worker_id,
                world,
                address: a,
            } => {
                let mut st = lock.lock().unwrap();
                st.world = st.world.max(world as usize);
                self.register(&mut st, worker_id, writer, if a.is_empty() { address } else { &a });
                *me = Some(worker_id);
                cv.notify_all();
                Some(Message::ack())
            }
            Message::Crash {
                worker_id,
                signature,
                summary,
            } => {
                log::info!("worker {worker_id} crashed: {summary}");
                let mut st = lock.lock().unwrap();
                // unknown workers join on the fly
                self.register(&mut st, worker_id, writer, address);
                *me = Some(worker_id);
                let known = st.fixed.get(&signature).cloned();
                let host = *st.fix_hosts.entry(signature.clone()).or_insert(worker_id);
                let rec = &mut st.peers.get_mut(&worker_id).expect("registered").record;
                if rec.status == WorkerStatus::Running || rec.status == WorkerStatus::Resumed {
                    rec.advance(WorkerStatus::Crashed);
                }
                rec.crash_signature = Some(signature.clone());
                if let Some(p) = known {
                    rec.advance(WorkerStatus::Recovering);
                    st.fix_hosts.remove(&signature);
                    return Some(Message::Ack {
                        ok: true,
                        role: Some(Role::Wait),
                        procedure: Some(p),
                        report: Vec::new(),
                        error: None,
                    });
                }
                let role = if host == worker_id {
                    rec.fix_host = true;
                    rec.advance(WorkerStatus::Recovering);
                    Role::FixHost
                } else {
                    Role::Wait
                };
                Some(Message::Ack {
                    ok: true,
                    role: Some(role),
                    procedure: None,
                    report: Vec::new(),
                    error: None,
                })
            }
            Message::Fix { signature, procedure } => {
                let Some(host) = *me else {
                    return Some(Message::nack("FIX before HELLO"));
                };
                let report = self.broadcast(host, &signature, procedure);
                Some(Message::Ack {
                    ok: true,
                    role: None,
                    procedure: None,
                    report,
                    error: None,
                })
            }
            Message::Resume { worker_id, ok, error } => {
                let mut st = lock.lock().unwrap();
                if ok {
                    if let Some(p) = st.peers.get_mut(&worker_id) {
                        p.record.advance(WorkerStatus::Resumed);
                    }
                }
                st.replies.insert(worker_id, (ok, error));
                cv.notify_all();
                None
            }
            Message::Sync {
                worker_id,
                round,
                value,
            } => {
                let mut st = lock.lock().unwrap();
                self.register(&mut st, worker_id, writer, address);
                if let Some(p) = st.peers.get_mut(&worker_id) {
                    if p.record.status == WorkerStatus::Resumed {
                        p.record.advance(WorkerStatus::Running);
                        p.record.fix_host = false;
                    }
                }
                st.rounds.entry(round).or_default().values.insert(worker_id, value);
                st.try_complete(round);
                cv.notify_all();
                let deadline = Instant::now() + self.timeout;
                loop {
                    if let Some(total) = st.rounds[&round].total {
                        let expected = st.expected();
                        let r = st.rounds.get_mut(&round).expect("round");
                        r.taken += 1;
                        if r.taken >= expected {
                            st.rounds.remove(&round);
                        }
                        return Some(Message::Sync {
                            worker_id,
                            round,
                            value: total,
                        });
                    }
                    let now = Instant::now();
                    if now >= deadline {
                        return Some(Message::nack(format!("sync round {round} timed out")));
                    }
                    st = cv.wait_timeout(st, deadline - now).unwrap().0;
                    st.try_complete(round);
                }
            }
            Message::Ack { .. } => None,
        }
    }

    /// Sends the host's procedure to every other worker waiting on the
    /// signature and collects their outcomes.
    fn broadcast(&self, host: u32, signature: &PeerSignature, procedure: Option<FixProcedure>) -> Vec<Delivery> {
        let (lock, cv) = &*self.state;
        let mut st = lock.lock().unwrap();
        st.fix_hosts.remove(signature);
        if let Some(h) = st.peers.get_mut(&host) {
            if procedure.is_some() {
                h.record.advance(WorkerStatus::Resumed);
            }
        }
        if let Some(p) = &procedure {
            st.fixed.insert(signature.clone(), p.clone());
        }
        let mut report = Vec::new();
        let mut targets = Vec::new();
        for (id, peer) in st.peers.iter_mut() {
            let down = matches!(peer.record.status, WorkerStatus::Crashed | WorkerStatus::Recovering);
            if *id == host || !down {
                continue;
            }
            if peer.record.crash_signature.as_ref() != Some(signature) {
                report.push(Delivery {
                    worker_id: *id,
                    outcome: "skipped".into(),
                    detail: Some("different crash signature".into()),
                });
                continue;
            }
            if peer.record.status != WorkerStatus::Crashed {
                continue;
            }
            let msg = Message::Fix {
                signature: signature.clone(),
                procedure: procedure.clone(),
            };
            match write_message(&mut *peer.writer.lock().unwrap(), &msg) {
                Ok(()) => {
                    peer.record.advance(WorkerStatus::Recovering);
                    targets.push(*id);
                }
                Err(e) => report.push(Delivery {
                    worker_id: *id,
                    outcome: "unreachable".into(),
                    detail: Some(e.to_string()),
                }),
            }
        }
        if procedure.is_none() {
            report.extend(targets.iter().map(|id| Delivery {
                worker_id: *id,
                outcome: "failed".into(),
                detail: Some("the fix host gave up".into()),
            }));
            return report;
        }
        let deadline = Instant::now() + self.timeout;
        for id in targets {
            loop {
                if let Some((ok, err)) = st.replies.remove(&id) {
                    report.push(Delivery {
                        worker_id: id,
                        outcome: if ok { "resumed" } else { "failed" }.into(),
                        detail: err,
                    });
                    break;
                }
                let now = Instant::now();
                if now >= deadline {
                    report.push(Delivery {
                        worker_id: id,
                        outcome: "timeout".into(),
                        detail: None,
                    });
                    break;
                }
                st = cv.wait_timeout(st, deadline - now).unwrap().0;
            }
        }
        report.sort_by_key(|d| d.worker_id);
        report
    }
}

// ----- worker ------------------------------------------------------------

pub struct WorkerClient {
    pub worker_id: u32,
    pub world: u32,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    pub timeout: Duration,
}

impl WorkerClient {
    pub fn connect(
        addr: impl ToSocketAddrs,
        worker_id: u32,
        world: u32,
        timeout: Duration,
    ) -> Result<WorkerClient, DistError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let address = stream.local_addr().map(|a| a.to_string()).unwrap_or_default();
        let mut c = WorkerClient {
            worker_id,
            world,
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            timeout,
        };
        c.request(&Message::Hello {
            worker_id,
            world,
            address,
        })?;
        Ok(c)
    }

    /// Connects using the coordinator address, rank and world size from the
    /// environment; `None` when no coordinator is configured.
    pub fn from_env() -> Option<Result<WorkerClient, DistError>> {
        let addr = std::env::var(ENV_COORDINATOR).ok().filter(|s| !s.is_empty())?;
        let rank = std::env::var(ENV_RANK).ok().and_then(|s| s.parse().ok()).unwrap_or(0);
        let world = std::env::var(ENV_WORLD).ok().and_then(|s| s.parse().ok()).unwrap_or(1);
        Some(WorkerClient::connect(addr, rank, world, timeout_from_env()))
    }

    fn send(&mut self, msg: &Message) -> Result<(), DistError> {
        write_message(&mut self.writer, msg)
    }

    fn receive(&mut self, timeout: Option<Duration>) -> Result<Message, DistError> {
        self.reader.get_ref().set_read_timeout(timeout)?;
        read_message(&mut self.reader)
    }

    fn request(&mut self, msg: &Message) -> Result<Message, DistError> {
        self.send(msg)?;
        match self.receive(None)? {
            Message::Ack { ok: false, error, .. } => Err(DistError::Refused(error.unwrap_or_default())),
            m => Ok(m),
        }
    }

    pub fn announce(&mut self, event: &CrashEvent) -> Result<(Role, Option<FixProcedure>), DistError> {
        let msg = Message::Crash {
            worker_id: self.worker_id,
            signature: PeerSignature::of(event),
            summary: format!("{}: {}", event.exception_kind, event.message),
        };
        match self.request(&msg)? {
            Message::Ack {
                role: Some(r),
                procedure,
                ..
            } => Ok((r, procedure)),
            m => Err(DistError::Unexpected(Box::new(m))),
        }
    }

    /// Blocks until the coordinator relays a procedure.
    pub fn await_fix(&mut self) -> Result<Option<FixProcedure>, DistError> {
        match self.receive(Some(self.timeout))? {
            Message::Fix { procedure, .. } => Ok(procedure),
            m => Err(DistError::Unexpected(Box::new(m))),
        }
    }

    pub fn publish_fix(
        &mut self,
        signature: PeerSignature,
        procedure: Option<FixProcedure>,
    ) -> Result<Vec<Delivery>, DistError> {
        match self.request(&Message::Fix { signature, procedure })? {
            Message::Ack { report, .. } => Ok(report),
            m => Err(DistError::Unexpected(Box::new(m))),
        }
    }

    pub fn resumed(&mut self, ok: bool, error: Option<String>) -> Result<(), DistError> {
        self.send(&Message::Resume {
            worker_id: self.worker_id,
            ok,
            error,
        })
    }

    /// Waits for every worker to reach `round`; returns the sum of their values.
    pub fn sync(&mut self, round: u64, value: f64) -> Result<f64, DistError> {
        match self.request(&Message::Sync {
            worker_id: self.worker_id,
            round,
            value,
        })? {
            Message::Sync { value, .. } => Ok(value),
            m => Err(DistError::Unexpected(Box::new(m))),
        }
    }
}

/// Recovery handler for a worker: coordinates with peers and falls back to
/// the local session when it is the fix host or the coordinator is gone.
pub struct DistributedHandler<S: CommandSource> {
    pub client: Rc<RefCell<WorkerClient>>,
    pub local: RecoverySession<S>,
    pub reports: Vec<Vec<Delivery>>,
}

impl<S: CommandSource> DistributedHandler<S> {
    pub fn new(client: Rc<RefCell<WorkerClient>>, local: RecoverySession<S>) -> Self {
        DistributedHandler {
            client,
            local,
            reports: Vec::new(),
        }
    }

    fn replay(&mut self, interp: &mut Interp, site: &CrashSite, proc: Option<FixProcedure>) -> Decision {
        let Some(proc) = proc else {
            let _ = self.client.borrow_mut().resumed(false, Some("no procedure".into()));
            return Decision::Abort;
        };
        let mut proc = proc;
        // peers match on kind and location; adopt our own function name
        proc.crash_signature = CrashEvent::from_site(site).signature();
        let d = apply_procedure(interp, site, &proc);
        let (ok, err) = match &d {
            Ok(Decision::Retry { .. }) => (true, None),
            Ok(Decision::Abort) => (false, Some("procedure did not resume".to_string())),
            Err(e) => (false, Some(e.to_string())),
        };
        log::info!("worker {} replayed fix: ok={ok}", self.client.borrow().worker_id);
        let _ = self.client.borrow_mut().resumed(ok, err);
        d.unwrap_or(Decision::Abort)
    }
}

impl<S: CommandSource> RecoveryHandler for DistributedHandler<S> {
    fn on_crash(&mut self, interp: &mut Interp, site: &CrashSite) -> Decision {
        let event = CrashEvent::from_site(site);
        let announced = self.client.borrow_mut().announce(&event);
        match announced {
            Ok((Role::FixHost, _)) => {
                let before = self.local.procedures.len();
                let d = self.local.on_crash(interp, site);
                let proc = if matches!(d, Decision::Retry { .. }) && self.local.procedures.len() > before {
                    self.local.procedures.last().cloned()
                } else {
                    None
                };
                match self.client.borrow_mut().publish_fix(PeerSignature::of(&event), proc) {
                    Ok(report) => self.reports.push(report),
                    Err(e) => log::warn!("broadcast failed: {e}"),
                }
                d
            }
            Ok((Role::Wait, Some(proc))) => self.replay(interp, site, Some(proc)),
            Ok((Role::Wait, None)) => {
                let fix = self.client.borrow_mut().await_fix();
                match fix {
                    Ok(p) => self.replay(interp, site, p),
                    Err(e) => {
                        log::warn!("no fix arrived: {e}");
                        Decision::Abort
                    }
                }
            }
            Err(e) => {
                log::warn!("coordinator unavailable ({e}); recovering locally");
                self.local.on_crash(interp, site)
            }
        }
    }
}

/// The `dist` module scripts use to synchronize with peers.
pub fn dist_module(client: Option<Rc<RefCell<WorkerClient>>>) -> Value {
    let m = Module::new("dist");
    let (rank, world) = client
        .as_ref()
        .map(|c| (c.borrow().worker_id, c.borrow().world))
        .unwrap_or((0, 1));
    m.func("rank", move |_, _, _| Ok(Value::Int(rank as i64)));
    m.func("world", move |_, _, _| Ok(Value::Int(world as i64)));
    let round = Rc::new(std::cell::Cell::new(0u64));
    m.func("allreduce", move |_, a, _| {
        let [v] = fixed::<1>("allreduce", a)?;
        let x = v
            .as_f64()
            .ok_or_else(|| crate::lang::value::type_error("allreduce expects a number"))?;
        let Some(c) = &client else {
            return Ok(Value::Float(x));
        };
        round.set(round.get() + 1);
        let total = c
            .borrow_mut()
            .sync(round.get(), x)
            .map_err(|e| Flow::error("ConnectionError", e.to_string()))?;
        Ok(Value::Float(total))
    });
    Value::Module(Rc::new(m))
}
