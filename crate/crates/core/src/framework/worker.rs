//! Worker node: registers with the master, then runs one thread per slot.
//!
//! Each slot checks the master queue before waiting on the direct inbox,
//! so queued backlog drains even while direct traffic keeps arriving. The
//! heartbeat thread advertises free slots; losing the master degrades a
//! worker to direct-delivery only instead of stopping it.

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};

use crate::protocol::{read_frame, write_frame, Frame, FrameKind, ReadError};
use crate::telemetry::http::{serve_status, StatusServer};
use crate::telemetry::{EventLog, MetricsSource, NodeMetrics};
use crate::workload::burn_cpu;

use super::{
    control_frame, parse_control, rpc, ControlMsg, FrameworkError,
    DEFAULT_HEARTBEAT_INTERVAL_MS, DEFAULT_QUEUE_POLL_INTERVAL_MS,
};

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub master: String,
    pub listen: SocketAddr,
    pub status_listen: Option<SocketAddr>,
    pub slots: usize,
    pub heartbeat_interval_ms: u64,
    pub queue_poll_interval_ms: u64,
    /// Niceness applied to slot threads. Raising it (lower priority) keeps
    /// control traffic responsive when burns saturate every core.
    pub slot_thread_nice: i32,
    pub event_log: Option<Arc<EventLog>>,
}

impl Default for WorkerConfig {
    fn default() -> WorkerConfig {
        WorkerConfig {
            master: String::new(),
            listen: "127.0.0.1:0".parse().unwrap(),
            status_listen: Some("127.0.0.1:0".parse().unwrap()),
            slots: 1,
            heartbeat_interval_ms: DEFAULT_HEARTBEAT_INTERVAL_MS,
            queue_poll_interval_ms: DEFAULT_QUEUE_POLL_INTERVAL_MS,
            slot_thread_nice: 0,
            event_log: None,
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    processed_total: u64,
    in_flight: u64,
    executing: u64,
    busy_us_total: u64,
    bytes_total: u64,
    malformed_total: u64,
}

struct WorkerShared {
    counters: Mutex<Counters>,
    slots: u64,
    start: Instant,
}

impl WorkerShared {
    fn available_slots(&self) -> u64 {
        let c = self.counters.lock().unwrap();
        self.slots.saturating_sub(c.executing)
    }
}

impl MetricsSource for WorkerShared {
    fn metrics(&self) -> NodeMetrics {
        let c = self.counters.lock().unwrap();
        let mut m = NodeMetrics::new("worker");
        m.uptime_s = self.start.elapsed().as_secs_f64();
        m.total_processed = c.processed_total;
        m.total_bytes = c.bytes_total;
        m.in_flight = c.in_flight;
        m.busy_us_total = c.busy_us_total;
        m.slot_count = self.slots;
        m.available_slots = self.slots.saturating_sub(c.executing);
        m.malformed_total = c.malformed_total;
        m
    }
}

pub struct WorkerHandle {
    pub worker_id: u64,
    pub p2p_addr: SocketAddr,
    pub status_addr: Option<SocketAddr>,
    shared: Arc<WorkerShared>,
    stop: Arc<AtomicBool>,
    joins: Vec<JoinHandle<()>>,
    _status_server: Option<StatusServer>,
}

impl WorkerHandle {
    pub fn metrics(&self) -> NodeMetrics {
        self.shared.metrics()
    }

    pub fn processed_total(&self) -> u64 {
        self.shared.counters.lock().unwrap().processed_total
    }
}

impl Drop for WorkerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock the p2p accept loop.
        let _ = TcpStream::connect(self.p2p_addr);
        for j in self.joins.drain(..) {
            let _ = j.join();
        }
    }
}

fn register(cfg: &WorkerConfig, p2p_addr: SocketAddr, status_addr: Option<SocketAddr>)
    -> Result<(TcpStream, u64), FrameworkError>
{
    let mut last_err = String::new();
    for _ in 0..25 {
        match TcpStream::connect(&cfg.master) {
            Ok(mut stream) => {
                stream.set_nodelay(true).ok();
                stream.set_read_timeout(Some(Duration::from_secs(5))).ok();
                let msg = ControlMsg::Register {
                    p2p_addr: p2p_addr.to_string(),
                    status_addr: status_addr.map(|a| a.to_string()).unwrap_or_default(),
                    slot_count: cfg.slots as u64,
                };
                let reply = rpc(&mut stream, &control_frame(FrameKind::Status, &msg))?;
                match parse_control(&reply)? {
                    ControlMsg::Registered { worker_id } => return Ok((stream, worker_id)),
                    other => {
                        return Err(FrameworkError::RegistrationFailed(format!(
                            "unexpected reply {other:?}"
                        )))
                    }
                }
            }
            Err(e) => last_err = e.to_string(),
        }
        std::thread::sleep(Duration::from_millis(200));
    }
    Err(FrameworkError::MasterUnreachable(format!("{}: {last_err}", cfg.master)))
}

pub fn start_worker(cfg: WorkerConfig) -> Result<WorkerHandle, FrameworkError> {
    assert!(cfg.slots >= 1, "worker needs at least one slot");
    let listener = TcpListener::bind(cfg.listen)?;
    let p2p_addr = listener.local_addr()?;

    let shared = Arc::new(WorkerShared {
        counters: Mutex::new(Counters::default()),
        slots: cfg.slots as u64,
        start: Instant::now(),
    });

    let status_server = match cfg.status_listen {
        Some(listen) => Some(serve_status(listen, Arc::clone(&shared) as Arc<dyn MetricsSource>)?),
        None => None,
    };
    let status_addr = status_server.as_ref().map(|s| s.addr);

    let (heartbeat_conn, worker_id) = register(&cfg, p2p_addr, status_addr)?;
    if let Some(log) = &cfg.event_log {
        log.log("worker", "registered", serde_json::json!({ "worker_id": worker_id, "p2p_addr": p2p_addr.to_string() }));
    }

    let stop = Arc::new(AtomicBool::new(false));
    let (inbox_tx, inbox_rx) = crossbeam_channel::unbounded::<Frame>();
    let mut joins = Vec::new();

    // P2P accept loop: one reader thread per source connection.
    {
        let shared = Arc::clone(&shared);
        let stop = Arc::clone(&stop);
        let inbox_tx = inbox_tx.clone();
        joins.push(
            std::thread::Builder::new()
                .name("worker-accept".into())
                .spawn(move || {
                    for conn in listener.incoming() {
                        if stop.load(Ordering::SeqCst) {
                            break;
                        }
                        let Ok(stream) = conn else { continue };
                        let shared = Arc::clone(&shared);
                        let tx = inbox_tx.clone();
                        let stop = Arc::clone(&stop);
                        let _ = std::thread::Builder::new()
                            .name("worker-ingest".into())
                            .spawn(move || ingest_connection(stream, shared, tx, stop));
                    }
                })
                .map_err(FrameworkError::Io)?,
        );
    }

    // Slot threads.
    for slot in 0..cfg.slots {
        let shared = Arc::clone(&shared);
        let stop = Arc::clone(&stop);
        let inbox_rx = inbox_rx.clone();
        let master = cfg.master.clone();
        let poll = Duration::from_millis(cfg.queue_poll_interval_ms.max(1));
        let nice = cfg.slot_thread_nice;
        joins.push(
            std::thread::Builder::new()
                .name(format!("worker-slot-{slot}"))
                .spawn(move || slot_loop(shared, stop, inbox_rx, master, poll, nice))
                .map_err(FrameworkError::Io)?,
        );
    }

    // Heartbeats.
    {
        let shared = Arc::clone(&shared);
        let stop = Arc::clone(&stop);
        let master = cfg.master.clone();
        let interval = Duration::from_millis(cfg.heartbeat_interval_ms.max(10));
        joins.push(
            std::thread::Builder::new()
                .name("worker-heartbeat".into())
                .spawn(move || heartbeat_loop(heartbeat_conn, shared, stop, master, worker_id, interval))
                .map_err(FrameworkError::Io)?,
        );
    }

    Ok(WorkerHandle {
        worker_id,
        p2p_addr,
        status_addr,
        shared,
        stop,
        joins,
        _status_server: status_server,
    })
}

fn ingest_connection(
    mut stream: TcpStream,
    shared: Arc<WorkerShared>,
    inbox: Sender<Frame>,
    stop: Arc<AtomicBool>,
) {
    let _ = stream.set_nodelay(true);
    loop {
        if stop.load(Ordering::SeqCst) {
            return;
        }
        match read_frame(&mut stream) {
            Ok(frame) if frame.kind == FrameKind::Data => {
                shared.counters.lock().unwrap().in_flight += 1;
                if inbox.send(frame).is_err() {
                    return;
                }
            }
            Ok(_) => {
                shared.counters.lock().unwrap().malformed_total += 1;
            }
            Err(ReadError::Closed) => return,
            Err(ReadError::Decode(_)) => {
                shared.counters.lock().unwrap().malformed_total += 1;
                return;
            }
            Err(ReadError::Io(_)) => return,
        }
    }
}

fn slot_loop(
    shared: Arc<WorkerShared>,
    stop: Arc<AtomicBool>,
    inbox: Receiver<Frame>,
    master: String,
    poll: Duration,
    nice: i32,
) {
    if nice != 0 {
        // Affects only this thread on Linux.
        unsafe {
            libc::nice(nice);
        }
    }
    let mut pop_conn: Option<TcpStream> = None;
    let mut master_retry_at = Instant::now();
    loop {
        if stop.load(Ordering::SeqCst) {
            return;
        }

        // Queue first: backlog parked at the master has been waiting the
        // longest.
        if Instant::now() >= master_retry_at {
            match try_pop(&mut pop_conn, &master) {
                Ok(Some(frame)) => {
                    shared.counters.lock().unwrap().in_flight += 1;
                    process(&shared, frame);
                    continue;
                }
                Ok(None) => {}
                Err(_) => {
                    pop_conn = None;
                    master_retry_at = Instant::now() + Duration::from_secs(1);
                }
            }
        }

        match inbox.recv_timeout(poll) {
            Ok(frame) => process(&shared, frame),
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return,
        }
    }
}

/// One QUEUE_POP round trip. `Ok(None)` means the queue was empty.
fn try_pop(conn: &mut Option<TcpStream>, master: &str) -> Result<Option<Frame>, FrameworkError> {
    if conn.is_none() {
        let stream = TcpStream::connect(master)?;
        stream.set_nodelay(true).ok();
        stream.set_read_timeout(Some(Duration::from_secs(5))).ok();
        *conn = Some(stream);
    }
    let stream = conn.as_mut().unwrap();
    let reply = rpc(stream, &Frame::control(FrameKind::QueuePop, 0, Vec::new()))?;
    match reply.kind {
        FrameKind::QueueMsg => Ok(Some(reply)),
        FrameKind::QueuePop => Ok(None),
        other => Err(FrameworkError::BadControlPayload(format!(
            "unexpected pop reply kind {other:?}"
        ))),
    }
}

fn process(shared: &WorkerShared, frame: Frame) {
    {
        let mut c = shared.counters.lock().unwrap();
        c.executing += 1;
    }
    let busy_us = burn_cpu(frame.cpu_cost_us);
    let mut c = shared.counters.lock().unwrap();
    c.executing -= 1;
    c.in_flight = c.in_flight.saturating_sub(1);
    c.processed_total += 1;
    c.busy_us_total += busy_us;
    c.bytes_total += frame.payload.len() as u64;
}

fn heartbeat_loop(
    conn: TcpStream,
    shared: Arc<WorkerShared>,
    stop: Arc<AtomicBool>,
    master: String,
    worker_id: u64,
    interval: Duration,
) {
    let mut conn = Some(conn);
    while !stop.load(Ordering::SeqCst) {
        let available_slots = shared.available_slots();
        let msg = {
            let c = shared.counters.lock().unwrap();
            ControlMsg::Heartbeat {
                worker_id,
                available_slots,
                processed_total: c.processed_total,
                in_flight: c.in_flight,
                busy_us_total: c.busy_us_total,
                malformed_total: c.malformed_total,
            }
        };
        let frame = control_frame(FrameKind::Status, &msg);
        let sent = match conn.as_mut() {
            Some(stream) => write_frame(stream, &frame).is_ok(),
            None => false,
        };
        if !sent {
            // Master gone: keep serving direct traffic, keep probing.
            conn = TcpStream::connect(&master).ok().inspect(|s| {
                s.set_nodelay(true).ok();
            });
        }
        std::thread::sleep(interval);
    }
}
