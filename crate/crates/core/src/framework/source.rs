//! Streaming source: emits messages on an absolute schedule and routes
//! each one through the master's decision.
//!
//! Pacing uses per-message deadlines `epoch + k / rate` rather than
//! sleep-per-gap, so transient stalls are made up instead of compounding.
//! The schedule resets whenever the rate or the workload point changes.
//! `schedule_lag_us` exposes how far the latest completed send sat behind
//! its deadline; the gauge only grows while the pipeline cannot keep up,
//! which is what downstream blocked-fraction math keys on.

use std::collections::HashMap;
use std::net::{SocketAddr, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::protocol::{write_frame, Frame, FrameKind, Shaper, ShaperConfig, HEADER_LEN};
use crate::telemetry::http::{serve_status, StatusServer};
use crate::telemetry::{EventLog, MetricsSource, NodeMetrics, StatusProbe};
use crate::workload::{make_message, WorkloadPoint};

use super::{drain_and_reconcile, rpc, FrameworkError, ReconcileReport, RouteReply};

pub const UNLIMITED: u64 = u64::MAX;

#[derive(Debug, Clone)]
pub struct SourceConfig {
    pub master: String,
    pub point: WorkloadPoint,
    /// Initial offered rate; 0 parks the sender until `set_rate`.
    pub rate_hz: f64,
    /// Bandwidth shaping for data-bearing frames. Control traffic is never
    /// shaped.
    pub shape: Option<ShaperConfig>,
    pub status_listen: Option<SocketAddr>,
    pub event_log: Option<Arc<EventLog>>,
}

impl Default for SourceConfig {
    fn default() -> SourceConfig {
        SourceConfig {
            master: String::new(),
            point: WorkloadPoint::new(100, 0),
            rate_hz: 0.0,
            shape: None,
            status_listen: None,
            event_log: None,
        }
    }
}

struct SourceShared {
    total_sent: AtomicU64,
    total_bytes: AtomicU64,
    schedule_lag_us: AtomicU64,
    rate_millihz: AtomicU64,
    /// Stop emitting once total_sent reaches this; UNLIMITED disables it.
    send_limit: AtomicU64,
    /// Bumped on any rate or point change; the send loop starts a fresh
    /// schedule segment when it sees a new value.
    generation: AtomicU64,
    point: Mutex<WorkloadPoint>,
    start: Instant,
}

impl SourceShared {
    fn rate_hz(&self) -> f64 {
        self.rate_millihz.load(Ordering::SeqCst) as f64 / 1000.0
    }
}

impl MetricsSource for SourceShared {
    fn metrics(&self) -> NodeMetrics {
        let mut m = NodeMetrics::new("source");
        m.uptime_s = self.start.elapsed().as_secs_f64();
        m.total_sent = self.total_sent.load(Ordering::SeqCst);
        m.total_bytes = self.total_bytes.load(Ordering::SeqCst);
        m.offered_hz = self.rate_hz();
        m.schedule_lag_us = self.schedule_lag_us.load(Ordering::SeqCst);
        m
    }
}

/// How long to keep a stream running.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StreamMode {
    /// Emit exactly this many messages, then park.
    Count(u64),
    /// Emit at the configured rate for this many seconds, then park.
    Duration(f64),
}

/// What one timed stream achieved.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SendReport {
    pub offered_hz: f64,
    pub sent: u64,
    pub elapsed_s: f64,
    pub achieved_hz: f64,
    /// Fraction of the run spent behind schedule (lag growth / elapsed).
    pub blocked_fraction: f64,
    /// Set when the achieved rate fell under 95% of the offered rate.
    pub fell_behind: bool,
}

pub struct SourceHandle {
    shared: Arc<SourceShared>,
    master: String,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
    pub status_addr: Option<SocketAddr>,
    _status_server: Option<StatusServer>,
}

impl SourceHandle {
    pub fn set_rate(&self, hz: f64) {
        assert!(hz >= 0.0 && hz.is_finite(), "rate must be finite and non-negative");
        self.shared
            .rate_millihz
            .store((hz * 1000.0).round() as u64, Ordering::SeqCst);
        self.shared.generation.fetch_add(1, Ordering::SeqCst);
    }

    pub fn set_point(&self, point: WorkloadPoint) {
        *self.shared.point.lock().unwrap() = point;
        self.shared.generation.fetch_add(1, Ordering::SeqCst);
    }

    pub fn set_send_limit(&self, limit: u64) {
        self.shared.send_limit.store(limit, Ordering::SeqCst);
    }

    pub fn sent(&self) -> u64 {
        self.shared.total_sent.load(Ordering::SeqCst)
    }

    pub fn metrics(&self) -> NodeMetrics {
        self.shared.metrics()
    }

    /// In-process probe for collectors running in the same process.
    pub fn probe(&self) -> StatusProbe {
        StatusProbe::Local(Arc::clone(&self.shared) as Arc<dyn MetricsSource>)
    }

    /// Runs one stream at `rate_hz`, parks the sender, and reports what was
    /// achieved. Blocks for the duration (or until the count is reached).
    pub fn run_stream(&self, rate_hz: f64, mode: StreamMode) -> SendReport {
        let sent0 = self.sent();
        let lag0 = self.shared.schedule_lag_us.load(Ordering::SeqCst);
        let started = Instant::now();
        match mode {
            StreamMode::Count(n) => {
                self.set_send_limit(sent0 + n);
                self.set_rate(rate_hz);
                while self.sent() < sent0 + n && !self.stop.load(Ordering::SeqCst) {
                    std::thread::sleep(Duration::from_millis(2));
                }
            }
            StreamMode::Duration(secs) => {
                self.set_rate(rate_hz);
                let deadline = started + Duration::from_secs_f64(secs);
                while Instant::now() < deadline && !self.stop.load(Ordering::SeqCst) {
                    std::thread::sleep(Duration::from_millis(5).min(deadline - Instant::now()));
                }
            }
        }
        self.set_rate(0.0);
        self.set_send_limit(UNLIMITED);
        let elapsed_s = started.elapsed().as_secs_f64();
        let sent = self.sent() - sent0;
        let lag1 = self.shared.schedule_lag_us.load(Ordering::SeqCst);
        let blocked =
            ((lag1.saturating_sub(lag0)) as f64 / (elapsed_s * 1e6)).clamp(0.0, 1.0);
        let achieved_hz = sent as f64 / elapsed_s;
        SendReport {
            offered_hz: rate_hz,
            sent,
            elapsed_s,
            achieved_hz,
            blocked_fraction: blocked,
            fell_behind: rate_hz > 0.0 && achieved_hz < 0.95 * rate_hz,
        }
    }

    /// Announces the final sent count and waits for the cluster to account
    /// for every message.
    pub fn drain(&self, timeout: Duration) -> Result<ReconcileReport, FrameworkError> {
        drain_and_reconcile(&self.master, self.sent(), timeout)
    }

    /// Stops the sender and returns the total number of messages emitted.
    pub fn stop(mut self) -> u64 {
        self.shutdown();
        self.sent()
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}

impl Drop for SourceHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

pub fn start_source(cfg: SourceConfig) -> Result<SourceHandle, FrameworkError> {
    let shared = Arc::new(SourceShared {
        total_sent: AtomicU64::new(0),
        total_bytes: AtomicU64::new(0),
        schedule_lag_us: AtomicU64::new(0),
        rate_millihz: AtomicU64::new((cfg.rate_hz * 1000.0).round() as u64),
        send_limit: AtomicU64::new(UNLIMITED),
        generation: AtomicU64::new(0),
        point: Mutex::new(cfg.point),
        start: Instant::now(),
    });

    let status_server = match cfg.status_listen {
        Some(listen) => Some(serve_status(listen, Arc::clone(&shared) as Arc<dyn MetricsSource>)?),
        None => None,
    };
    let status_addr = status_server.as_ref().map(|s| s.addr);

    let stop = Arc::new(AtomicBool::new(false));
    let loop_shared = Arc::clone(&shared);
    let loop_stop = Arc::clone(&stop);
    let master = cfg.master.clone();
    let shaper = cfg.shape.map(Shaper::new);
    let log = cfg.event_log.clone();
    let join = std::thread::Builder::new()
        .name("source-send".into())
        .spawn(move || send_loop(loop_shared, loop_stop, master, shaper, log))?;

    Ok(SourceHandle {
        shared,
        master: cfg.master,
        stop,
        join: Some(join),
        status_addr,
        _status_server: status_server,
    })
}

struct Segment {
    generation: u64,
    epoch: Instant,
    k: u64,
    rate_hz: f64,
}

fn send_loop(
    shared: Arc<SourceShared>,
    stop: Arc<AtomicBool>,
    master: String,
    mut shaper: Option<Shaper>,
    log: Option<Arc<EventLog>>,
) {
    let mut master_conn: Option<TcpStream> = None;
    let mut p2p_conns: HashMap<String, TcpStream> = HashMap::new();
    let mut segment: Option<Segment> = None;
    let mut next_msg_id: u64 = 0;
    let mut warned_no_workers = false;

    'outer: while !stop.load(Ordering::SeqCst) {
        let generation = shared.generation.load(Ordering::SeqCst);
        let rate_hz = shared.rate_hz();
        let limit = shared.send_limit.load(Ordering::SeqCst);
        if rate_hz <= 0.0 || shared.total_sent.load(Ordering::SeqCst) >= limit {
            segment = None;
            std::thread::sleep(Duration::from_millis(1));
            continue;
        }

        let seg = match segment.as_mut() {
            Some(s) if s.generation == generation => s,
            _ => {
                // Fresh schedule: no deadline has been missed yet.
                shared.schedule_lag_us.store(0, Ordering::SeqCst);
                segment = Some(Segment {
                    generation,
                    epoch: Instant::now(),
                    k: 0,
                    rate_hz,
                });
                segment.as_mut().unwrap()
            }
        };

        let deadline = seg.epoch + Duration::from_secs_f64(seg.k as f64 / seg.rate_hz);
        // Wait out the gap in short slices so stop and rate changes stay
        // responsive even at very low rates.
        loop {
            if stop.load(Ordering::SeqCst) {
                break 'outer;
            }
            if shared.generation.load(Ordering::SeqCst) != generation {
                continue 'outer;
            }
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            let remaining = deadline - now;
            if remaining > Duration::from_millis(2) {
                std::thread::sleep(Duration::from_millis(1));
            } else if remaining > Duration::from_micros(100) {
                std::thread::sleep(remaining - Duration::from_micros(50));
            } else {
                std::hint::spin_loop();
            }
        }

        let point = *shared.point.lock().unwrap();
        let msg_id = next_msg_id;
        let mut frame = Frame::new(
            FrameKind::Data,
            msg_id,
            point.cpu_cost_us,
            make_message(msg_id, point),
        );

        // Route, then deliver; a dead peer invalidates its cached
        // connection and the message is re-routed.
        loop {
            if stop.load(Ordering::SeqCst) {
                break 'outer;
            }
            let reply = match route(&mut master_conn, &master, msg_id) {
                Ok(r) => r,
                Err(_) => {
                    master_conn = None;
                    std::thread::sleep(Duration::from_millis(100));
                    continue;
                }
            };
            match reply {
                RouteReply::P2p { addr } => {
                    frame.kind = FrameKind::Data;
                    if send_data(&mut p2p_conns, &addr, &frame, &mut shaper).is_ok() {
                        break;
                    }
                    p2p_conns.remove(&addr);
                }
                RouteReply::Queue => {
                    frame.kind = FrameKind::QueuePush;
                    if let Some(s) = shaper.as_mut() {
                        s.acquire(HEADER_LEN + frame.payload.len());
                    }
                    let ok = master_conn
                        .as_mut()
                        .map(|c| write_frame(c, &frame).is_ok())
                        .unwrap_or(false);
                    if ok {
                        break;
                    }
                    master_conn = None;
                }
                RouteReply::Error { error } => {
                    if !warned_no_workers {
                        warned_no_workers = true;
                        if let Some(log) = &log {
                            log.log("source", "route_error", serde_json::json!({ "error": error }));
                        }
                    }
                    std::thread::sleep(Duration::from_millis(50));
                }
            }
        }
        warned_no_workers = false;

        let lag = Instant::now().saturating_duration_since(deadline);
        shared
            .schedule_lag_us
            .store(lag.as_micros() as u64, Ordering::SeqCst);
        shared.total_sent.fetch_add(1, Ordering::SeqCst);
        shared
            .total_bytes
            .fetch_add(frame.payload.len() as u64, Ordering::SeqCst);
        seg.k += 1;
        next_msg_id += 1;
    }
}

fn route(
    conn: &mut Option<TcpStream>,
    master: &str,
    msg_id: u64,
) -> Result<RouteReply, FrameworkError> {
    if conn.is_none() {
        let stream = TcpStream::connect(master)?;
        stream.set_nodelay(true).ok();
        stream.set_read_timeout(Some(Duration::from_secs(5))).ok();
        *conn = Some(stream);
    }
    let stream = conn.as_mut().unwrap();
    let reply = rpc(stream, &Frame::control(FrameKind::RouteReq, msg_id, Vec::new()))?;
    if reply.kind != FrameKind::RouteResp {
        return Err(FrameworkError::BadControlPayload(format!(
            "unexpected route reply kind {:?}",
            reply.kind
        )));
    }
    serde_json::from_slice(&reply.payload)
        .map_err(|e| FrameworkError::BadControlPayload(e.to_string()))
}

fn send_data(
    conns: &mut HashMap<String, TcpStream>,
    addr: &str,
    frame: &Frame,
    shaper: &mut Option<Shaper>,
) -> Result<(), FrameworkError> {
    if !conns.contains_key(addr) {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true).ok();
        conns.insert(addr.to_string(), stream);
    }
    if let Some(s) = shaper.as_mut() {
        s.acquire(HEADER_LEN + frame.payload.len());
    }
    let stream = conns.get_mut(addr).unwrap();
    write_frame(stream, frame)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bare_shared() -> SourceShared {
        SourceShared {
            total_sent: AtomicU64::new(0),
            total_bytes: AtomicU64::new(0),
            schedule_lag_us: AtomicU64::new(0),
            rate_millihz: AtomicU64::new(0),
            send_limit: AtomicU64::new(UNLIMITED),
            generation: AtomicU64::new(0),
            point: Mutex::new(WorkloadPoint::new(100, 0)),
            start: Instant::now(),
        }
    }

    #[test]
    fn source_metrics_report_rate_and_counters() {
        let shared = bare_shared();
        shared.rate_millihz.store(12_500, Ordering::SeqCst);
        shared.total_sent.store(42, Ordering::SeqCst);
        shared.total_bytes.store(4200, Ordering::SeqCst);
        shared.schedule_lag_us.store(7, Ordering::SeqCst);
        let m = shared.metrics();
        assert_eq!(m.role, "source");
        assert_eq!(m.offered_hz, 12.5);
        assert_eq!(m.total_sent, 42);
        assert_eq!(m.total_bytes, 4200);
        assert_eq!(m.schedule_lag_us, 7);
    }

    #[test]
    fn sub_hz_rates_survive_the_millihz_encoding() {
        let shared = bare_shared();
        shared.rate_millihz.store(250, Ordering::SeqCst);
        assert_eq!(shared.rate_hz(), 0.25);
    }
}
