//! Master node: worker registry, routing decisions, and the fallback queue.
//!
//! Every client connection gets its own thread; all state lives behind one
//! mutex. Routing picks the non-stale worker advertising the most free
//! slots (lowest id on ties) and decrements the advertised count right
//! away, so back-to-back requests between heartbeats cannot all pile onto
//! the same slot.

use std::collections::VecDeque;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::protocol::{read_frame, write_frame, Frame, FrameKind, ReadError};
use crate::telemetry::http::{serve_status, StatusServer};
use crate::telemetry::{EventLog, MetricsSource, NodeMetrics, WorkerSummary};

use super::{
    control_frame, parse_control, ControlMsg, RouteDecision, RouteReply,
    DEFAULT_HEARTBEAT_INTERVAL_MS, DEFAULT_STALE_AFTER_INTERVALS,
};

#[derive(Debug, Clone)]
pub struct MasterConfig {
    pub listen: SocketAddr,
    pub status_listen: Option<SocketAddr>,
    /// None = unbounded queue (high watermark still tracked).
    pub queue_capacity: Option<usize>,
    pub heartbeat_interval_ms: u64,
    pub stale_after_intervals: u32,
    pub event_log: Option<Arc<EventLog>>,
}

impl Default for MasterConfig {
    fn default() -> MasterConfig {
        MasterConfig {
            listen: "127.0.0.1:0".parse().unwrap(),
            status_listen: Some("127.0.0.1:0".parse().unwrap()),
            queue_capacity: None,
            heartbeat_interval_ms: DEFAULT_HEARTBEAT_INTERVAL_MS,
            stale_after_intervals: DEFAULT_STALE_AFTER_INTERVALS,
            event_log: None,
        }
    }
}

#[derive(Debug)]
struct QueuedMsg {
    msg_id: u64,
    cpu_cost_us: u64,
    payload: Vec<u8>,
}

#[derive(Debug)]
struct WorkerEntry {
    worker_id: u64,
    p2p_addr: String,
    status_addr: String,
    slot_count: u64,
    available_slots: u64,
    last_heartbeat: Instant,
    processed_total: u64,
    in_flight: u64,
    busy_us_total: u64,
    malformed_total: u64,
}

#[derive(Debug, Default)]
struct MasterInner {
    workers: Vec<WorkerEntry>,
    next_worker_id: u64,
    queue: VecDeque<QueuedMsg>,
    queue_bytes: u64,
    enqueued_total: u64,
    dequeued_total: u64,
    queue_high_watermark: u64,
    route_p2p_total: u64,
    route_queue_total: u64,
    total_lost: u64,
    malformed_total: u64,
    drain_sent: Option<u64>,
}

pub struct MasterState {
    inner: Mutex<MasterInner>,
    space: Condvar,
    queue_capacity: Option<usize>,
    stale_after: Duration,
    start: Instant,
    log: Option<Arc<EventLog>>,
}

impl MasterState {
    fn stale(&self, entry: &WorkerEntry, now: Instant) -> bool {
        now.duration_since(entry.last_heartbeat) > self.stale_after
    }

    /// Routing decision for one message. Callers must send the message
    /// wherever this says; the slot reservation is already taken.
    pub fn route(&self) -> Result<RouteDecision, super::FrameworkError> {
        let mut inner = self.inner.lock().unwrap();
        if inner.workers.is_empty() {
            return Err(super::FrameworkError::NoWorkersRegistered);
        }
        let now = Instant::now();
        let stale_after = self.stale_after;
        let best = inner
            .workers
            .iter_mut()
            .filter(|w| w.available_slots > 0 && now.duration_since(w.last_heartbeat) <= stale_after)
            .max_by(|a, b| {
                a.available_slots
                    .cmp(&b.available_slots)
                    .then(b.worker_id.cmp(&a.worker_id))
            });
        match best {
            Some(w) => {
                w.available_slots -= 1;
                let addr = w.p2p_addr.clone();
                inner.route_p2p_total += 1;
                Ok(RouteDecision::P2p(addr))
            }
            None => {
                inner.route_queue_total += 1;
                Ok(RouteDecision::Queue)
            }
        }
    }

    fn register(&self, p2p_addr: String, status_addr: String, slot_count: u64) -> u64 {
        let mut inner = self.inner.lock().unwrap();
        inner.next_worker_id += 1;
        let worker_id = inner.next_worker_id;
        inner.workers.push(WorkerEntry {
            worker_id,
            p2p_addr,
            status_addr,
            slot_count,
            available_slots: slot_count,
            last_heartbeat: Instant::now(),
            processed_total: 0,
            in_flight: 0,
            busy_us_total: 0,
            malformed_total: 0,
        });
        worker_id
    }

    fn heartbeat(&self, msg: &ControlMsg) {
        let ControlMsg::Heartbeat {
            worker_id,
            available_slots,
            processed_total,
            in_flight,
            busy_us_total,
            malformed_total,
        } = *msg
        else {
            return;
        };
        let mut inner = self.inner.lock().unwrap();
        if let Some(w) = inner.workers.iter_mut().find(|w| w.worker_id == worker_id) {
            w.available_slots = available_slots;
            w.processed_total = processed_total;
            w.in_flight = in_flight;
            w.busy_us_total = busy_us_total;
            w.malformed_total = malformed_total;
            w.last_heartbeat = Instant::now();
        } else if let Some(log) = &self.log {
            log.log("master", "heartbeat_unknown_worker", serde_json::json!({ "worker_id": worker_id }));
        }
    }

    /// Blocks while the queue is at capacity, honoring the bound by
    /// stalling the pushing connection.
    fn enqueue(&self, msg: QueuedMsg) {
        let mut inner = self.inner.lock().unwrap();
        if let Some(cap) = self.queue_capacity {
            while inner.queue.len() >= cap {
                inner = self.space.wait(inner).unwrap();
            }
        }
        inner.queue_bytes += msg.payload.len() as u64;
        inner.queue.push_back(msg);
        inner.enqueued_total += 1;
        let depth = inner.queue.len() as u64;
        if depth > inner.queue_high_watermark {
            inner.queue_high_watermark = depth;
        }
    }

    fn dequeue(&self) -> Option<QueuedMsg> {
        let mut inner = self.inner.lock().unwrap();
        let msg = inner.queue.pop_front();
        if let Some(m) = &msg {
            inner.queue_bytes -= m.payload.len() as u64;
            inner.dequeued_total += 1;
            self.space.notify_one();
        }
        msg
    }

    fn reconcile_status(&self) -> ControlMsg {
        let inner = self.inner.lock().unwrap();
        let now = Instant::now();
        let mut processed = 0;
        let mut in_flight = 0;
        for w in &inner.workers {
            processed += w.processed_total;
            if !self.stale(w, now) {
                in_flight += w.in_flight;
            }
        }
        ControlMsg::ReconcileStatus {
            sent: inner.drain_sent,
            processed,
            queue_depth: inner.queue.len() as u64,
            in_flight,
        }
    }
}

impl MetricsSource for MasterState {
    fn metrics(&self) -> NodeMetrics {
        let inner = self.inner.lock().unwrap();
        let now = Instant::now();
        let mut m = NodeMetrics::new("master");
        m.uptime_s = self.start.elapsed().as_secs_f64();
        m.queue_depth = inner.queue.len() as u64;
        m.queue_high_watermark = inner.queue_high_watermark;
        m.enqueued_total = inner.enqueued_total;
        m.dequeued_total = inner.dequeued_total;
        m.route_p2p_total = inner.route_p2p_total;
        m.route_queue_total = inner.route_queue_total;
        m.total_lost = inner.total_lost;
        m.malformed_total = inner.malformed_total;
        for w in &inner.workers {
            let stale = self.stale(w, now);
            m.total_processed += w.processed_total;
            m.busy_us_total += w.busy_us_total;
            if !stale {
                m.in_flight += w.in_flight;
                m.slot_count += w.slot_count;
                m.available_slots += w.available_slots;
            }
            m.workers.push(WorkerSummary {
                worker_id: w.worker_id,
                p2p_addr: w.p2p_addr.clone(),
                status_addr: w.status_addr.clone(),
                slot_count: w.slot_count,
                available_slots: w.available_slots,
                processed_total: w.processed_total,
                in_flight: w.in_flight,
                busy_us_total: w.busy_us_total,
                malformed_total: w.malformed_total,
                heartbeat_age_s: now.duration_since(w.last_heartbeat).as_secs_f64(),
                stale,
            });
        }
        m
    }
}

pub struct MasterHandle {
    pub addr: SocketAddr,
    pub status_addr: Option<SocketAddr>,
    state: Arc<MasterState>,
    stop: Arc<AtomicBool>,
    accept_join: Option<JoinHandle<()>>,
    _status_server: Option<StatusServer>,
}

impl MasterHandle {
    pub fn state(&self) -> Arc<MasterState> {
        Arc::clone(&self.state)
    }

    pub fn metrics(&self) -> NodeMetrics {
        self.state.metrics()
    }
}

impl Drop for MasterHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock accept() so the thread can observe the flag.
        let _ = TcpStream::connect(self.addr);
        if let Some(j) = self.accept_join.take() {
            let _ = j.join();
        }
    }
}

pub fn start_master(cfg: MasterConfig) -> std::io::Result<MasterHandle> {
    let listener = TcpListener::bind(cfg.listen)?;
    let addr = listener.local_addr()?;
    let state = Arc::new(MasterState {
        inner: Mutex::new(MasterInner::default()),
        space: Condvar::new(),
        queue_capacity: cfg.queue_capacity,
        stale_after: Duration::from_millis(
            cfg.heartbeat_interval_ms * cfg.stale_after_intervals as u64,
        ),
        start: Instant::now(),
        log: cfg.event_log.clone(),
    });

    let status_server = match cfg.status_listen {
        Some(status_listen) => Some(serve_status(
            status_listen,
            Arc::clone(&state) as Arc<dyn MetricsSource>,
        )?),
        None => None,
    };
    let status_addr = status_server.as_ref().map(|s| s.addr);

    let stop = Arc::new(AtomicBool::new(false));
    let accept_state = Arc::clone(&state);
    let accept_stop = Arc::clone(&stop);
    let accept_join = std::thread::Builder::new()
        .name("master-accept".into())
        .spawn(move || {
            for conn in listener.incoming() {
                if accept_stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let state = Arc::clone(&accept_state);
                let stop = Arc::clone(&accept_stop);
                let _ = std::thread::Builder::new()
                    .name("master-conn".into())
                    .spawn(move || serve_connection(stream, state, stop));
            }
        })?;

    if let Some(log) = &cfg.event_log {
        log.log("master", "started", serde_json::json!({ "addr": addr.to_string() }));
    }

    Ok(MasterHandle {
        addr,
        status_addr,
        state,
        stop,
        accept_join: Some(accept_join),
        _status_server: status_server,
    })
}

fn serve_connection(mut stream: TcpStream, state: Arc<MasterState>, stop: Arc<AtomicBool>) {
    let _ = stream.set_nodelay(true);
    loop {
        if stop.load(Ordering::SeqCst) {
            return;
        }
        let frame = match read_frame(&mut stream) {
            Ok(f) => f,
            Err(ReadError::Closed) => return,
            Err(ReadError::Decode(_)) => {
                // The byte stream is unsynchronized after a bad header;
                // count it and drop the connection.
                state.inner.lock().unwrap().malformed_total += 1;
                return;
            }
            Err(ReadError::Io(_)) => return,
        };
        if handle_frame(&mut stream, &state, frame).is_err() {
            return;
        }
    }
}

fn handle_frame(
    stream: &mut TcpStream,
    state: &MasterState,
    frame: Frame,
) -> std::io::Result<()> {
    match frame.kind {
        FrameKind::Status => match parse_control(&frame) {
            Ok(ControlMsg::Register { p2p_addr, status_addr, slot_count }) => {
                let worker_id = state.register(p2p_addr.clone(), status_addr, slot_count);
                if let Some(log) = &state.log {
                    log.log(
                        "master",
                        "worker_registered",
                        serde_json::json!({ "worker_id": worker_id, "p2p_addr": p2p_addr, "slots": slot_count }),
                    );
                }
                write_frame(
                    stream,
                    &control_frame(FrameKind::Status, &ControlMsg::Registered { worker_id }),
                )
            }
            Ok(msg @ ControlMsg::Heartbeat { .. }) => {
                state.heartbeat(&msg);
                Ok(())
            }
            Ok(ControlMsg::Reconcile) => write_frame(
                stream,
                &control_frame(FrameKind::Status, &state.reconcile_status()),
            ),
            Ok(ControlMsg::DrainOutcome { lost }) => {
                let mut inner = state.inner.lock().unwrap();
                inner.total_lost += lost;
                inner.drain_sent = None;
                Ok(())
            }
            Ok(_) | Err(_) => {
                state.inner.lock().unwrap().malformed_total += 1;
                Ok(())
            }
        },
        FrameKind::RouteReq => {
            let reply = match state.route() {
                Ok(RouteDecision::P2p(addr)) => RouteReply::P2p { addr },
                Ok(RouteDecision::Queue) => RouteReply::Queue,
                Err(_) => RouteReply::Error { error: "no_workers_registered".into() },
            };
            let payload = serde_json::to_vec(&reply).unwrap();
            write_frame(stream, &Frame::control(FrameKind::RouteResp, frame.msg_id, payload))
        }
        FrameKind::QueuePush => {
            state.enqueue(QueuedMsg {
                msg_id: frame.msg_id,
                cpu_cost_us: frame.cpu_cost_us,
                payload: frame.payload,
            });
            Ok(())
        }
        FrameKind::QueuePop => match state.dequeue() {
            Some(msg) => write_frame(
                stream,
                &Frame::new(FrameKind::QueueMsg, msg.msg_id, msg.cpu_cost_us, msg.payload),
            ),
            None => write_frame(stream, &Frame::control(FrameKind::QueuePop, 0, Vec::new())),
        },
        FrameKind::DrainMark => {
            let sent = serde_json::from_slice::<serde_json::Value>(&frame.payload)
                .ok()
                .and_then(|v| v.get("sent").and_then(|s| s.as_u64()))
                .unwrap_or(frame.msg_id);
            {
                let mut inner = state.inner.lock().unwrap();
                inner.drain_sent = Some(sent);
            }
            if let Some(log) = &state.log {
                log.log("master", "drain_mark", serde_json::json!({ "sent": sent }));
            }
            write_frame(stream, &control_frame(FrameKind::Status, &ControlMsg::DrainAck))
        }
        FrameKind::Data | FrameKind::QueueMsg | FrameKind::RouteResp => {
            // Not part of any master-bound exchange.
            state.inner.lock().unwrap().malformed_total += 1;
            Ok(())
        }
    }
}
