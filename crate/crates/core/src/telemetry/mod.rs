//! Metrics plumbing: per-node counters exposed over HTTP, a collector that
//! turns two scrapes into a windowed snapshot, and a newline-delimited
//! JSON event log.
//!
//! Nodes only ever publish cumulative counters and instantaneous gauges;
//! all rate math happens in the collector so every number in a snapshot is
//! derived from the same pair of observations.

pub mod http;

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_WINDOW_S: f64 = 10.0;
pub const DEFAULT_SAMPLE_INTERVAL_S: f64 = 1.0;
pub const DEFAULT_PROBE_TIMEOUT: Duration = Duration::from_secs(2);

/// Monotonic totals, aggregated cluster-wide by the collector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CumulativeCounters {
    pub total_sent: u64,
    pub total_processed: u64,
    pub total_lost: u64,
    pub total_bytes: u64,
}

/// One registered worker as the master sees it (heartbeat-fed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSummary {
    pub worker_id: u64,
    pub p2p_addr: String,
    pub status_addr: String,
    pub slot_count: u64,
    pub available_slots: u64,
    pub processed_total: u64,
    pub in_flight: u64,
    pub busy_us_total: u64,
    pub malformed_total: u64,
    pub heartbeat_age_s: f64,
    pub stale: bool,
}

/// The `/metrics` document. Every key is always present; fields that do
/// not apply to a node's role report zero (or an empty list), so scrapers
/// never need role-specific schemas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub role: String,
    pub uptime_s: f64,
    pub total_sent: u64,
    pub total_processed: u64,
    pub total_lost: u64,
    pub total_bytes: u64,
    pub offered_hz: f64,
    /// How far the source's last send completion sits behind its pacing
    /// deadline. Grows persistently only when the link cannot carry the
    /// offered rate.
    pub schedule_lag_us: u64,
    pub queue_depth: u64,
    pub queue_high_watermark: u64,
    pub enqueued_total: u64,
    pub dequeued_total: u64,
    pub route_p2p_total: u64,
    pub route_queue_total: u64,
    pub in_flight: u64,
    pub busy_us_total: u64,
    pub slot_count: u64,
    pub available_slots: u64,
    pub malformed_total: u64,
    pub workers: Vec<WorkerSummary>,
}

impl NodeMetrics {
    pub fn new(role: &str) -> NodeMetrics {
        NodeMetrics {
            role: role.to_string(),
            uptime_s: 0.0,
            total_sent: 0,
            total_processed: 0,
            total_lost: 0,
            total_bytes: 0,
            offered_hz: 0.0,
            schedule_lag_us: 0,
            queue_depth: 0,
            queue_high_watermark: 0,
            enqueued_total: 0,
            dequeued_total: 0,
            route_p2p_total: 0,
            route_queue_total: 0,
            in_flight: 0,
            busy_us_total: 0,
            slot_count: 0,
            available_slots: 0,
            malformed_total: 0,
            workers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub role: String,
    pub uptime_s: f64,
}

/// Anything that can answer a metrics scrape. Nodes implement this; the
/// HTTP server and the in-process probe both consume it.
pub trait MetricsSource: Send + Sync {
    fn metrics(&self) -> NodeMetrics;
}

/// One observation window assembled from scrapes at the window edges plus
/// periodic queue-depth samples in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub window_start_s: f64,
    pub window_end_s: f64,
    pub offered_hz: f64,
    pub sent: u64,
    pub achieved_send_hz: f64,
    pub source_blocked_fraction: f64,
    pub processed: u64,
    pub processed_hz: f64,
    pub queue_depth_series: Vec<u64>,
    pub worker_busy_fraction: f64,
    pub in_flight: u64,
    /// Set when any node could not be scraped; consumers must not judge a
    /// partial window.
    pub partial: bool,
    pub cumulative: CumulativeCounters,
}

impl MetricsSnapshot {
    pub fn idle(window_s: f64) -> MetricsSnapshot {
        MetricsSnapshot {
            window_start_s: 0.0,
            window_end_s: window_s,
            offered_hz: 0.0,
            sent: 0,
            achieved_send_hz: 0.0,
            source_blocked_fraction: 0.0,
            processed: 0,
            processed_hz: 0.0,
            queue_depth_series: Vec::new(),
            worker_busy_fraction: 0.0,
            in_flight: 0,
            partial: false,
            cumulative: CumulativeCounters::default(),
        }
    }

    /// True when every consecutive pair of depth samples grows. Needs at
    /// least two samples.
    pub fn queue_strictly_increasing(&self) -> bool {
        self.queue_depth_series.len() >= 2
            && self.queue_depth_series.windows(2).all(|w| w[1] > w[0])
    }

    /// Window-level trend: the depth at the end is no higher than at the
    /// start. Vacuously true with fewer than two samples.
    pub fn queue_trend_non_increasing(&self) -> bool {
        match (self.queue_depth_series.first(), self.queue_depth_series.last()) {
            (Some(first), Some(last)) => last <= first,
            _ => true,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("node unreachable: {0}")]
    Unreachable(String),
    #[error("bad status payload: {0}")]
    BadPayload(String),
}

/// Where to scrape a node: over HTTP, or directly in-process.
#[derive(Clone)]
pub enum StatusProbe {
    Http(String),
    Local(Arc<dyn MetricsSource>),
}

impl fmt::Debug for StatusProbe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatusProbe::Http(addr) => write!(f, "Http({addr})"),
            StatusProbe::Local(_) => write!(f, "Local"),
        }
    }
}

impl StatusProbe {
    pub fn scrape(&self, timeout: Duration) -> Result<NodeMetrics, ProbeError> {
        match self {
            StatusProbe::Local(src) => Ok(src.metrics()),
            StatusProbe::Http(addr) => {
                let body = http::http_get(addr, "/metrics", timeout)
                    .map_err(|e| ProbeError::Unreachable(format!("{addr}: {e}")))?;
                serde_json::from_slice(&body)
                    .map_err(|e| ProbeError::BadPayload(format!("{addr}: {e}")))
            }
        }
    }
}

/// Scrapes the source, the master, and every worker the master advertises,
/// and reduces the deltas over a window into one [`MetricsSnapshot`].
pub struct Collector {
    pub master: StatusProbe,
    pub source: Option<StatusProbe>,
    /// Scrape each worker's own endpoint (fresher than the master's
    /// heartbeat view). Worker scrape failures fall back to the master's
    /// numbers and mark the snapshot partial.
    pub scrape_workers: bool,
    pub sample_interval_s: f64,
    pub probe_timeout: Duration,
    epoch: Instant,
}

struct ClusterScrape {
    master: Option<NodeMetrics>,
    source: Option<NodeMetrics>,
    /// (worker_id, metrics or heartbeat fallback)
    workers: Vec<(u64, NodeMetrics)>,
    partial: bool,
}

impl Collector {
    pub fn new(master: StatusProbe) -> Collector {
        Collector {
            master,
            source: None,
            scrape_workers: true,
            sample_interval_s: DEFAULT_SAMPLE_INTERVAL_S,
            probe_timeout: DEFAULT_PROBE_TIMEOUT,
            epoch: Instant::now(),
        }
    }

    pub fn with_source(mut self, source: StatusProbe) -> Collector {
        self.source = Some(source);
        self
    }

    fn scrape_cluster(&self) -> ClusterScrape {
        let mut partial = false;
        let master = match self.master.scrape(self.probe_timeout) {
            Ok(m) => Some(m),
            Err(_) => {
                partial = true;
                None
            }
        };
        let source = match &self.source {
            None => None,
            Some(probe) => match probe.scrape(self.probe_timeout) {
                Ok(m) => Some(m),
                Err(_) => {
                    partial = true;
                    None
                }
            },
        };
        let mut workers = Vec::new();
        if let Some(master) = &master {
            for summary in &master.workers {
                if summary.stale {
                    partial = true;
                    continue;
                }
                if self.scrape_workers {
                    match StatusProbe::Http(summary.status_addr.clone())
                        .scrape(self.probe_timeout)
                    {
                        Ok(m) => {
                            workers.push((summary.worker_id, m));
                            continue;
                        }
                        Err(_) => partial = true,
                    }
                }
                // heartbeat-fed fallback view
                let mut m = NodeMetrics::new("worker");
                m.total_processed = summary.processed_total;
                m.in_flight = summary.in_flight;
                m.busy_us_total = summary.busy_us_total;
                m.slot_count = summary.slot_count;
                m.available_slots = summary.available_slots;
                m.malformed_total = summary.malformed_total;
                workers.push((summary.worker_id, m));
            }
        }
        ClusterScrape { master, source, workers, partial }
    }

    fn queue_depth(&self) -> Option<u64> {
        self.master.scrape(self.probe_timeout).ok().map(|m| m.queue_depth)
    }

    /// Observes the cluster for `window_s` seconds and reduces the edge
    /// scrapes plus the in-window depth samples into a snapshot.
    pub fn collect_snapshot(&self, window_s: f64) -> MetricsSnapshot {
        assert!(window_s > 0.0, "window must be positive");
        let window_start_s = self.epoch.elapsed().as_secs_f64();
        let begin = self.scrape_cluster();
        let started = Instant::now();

        let mut series = Vec::new();
        if let Some(m) = &begin.master {
            series.push(m.queue_depth);
        }
        let interval = Duration::from_secs_f64(self.sample_interval_s.max(0.01));
        loop {
            let elapsed = started.elapsed();
            let remaining = Duration::from_secs_f64(window_s).saturating_sub(elapsed);
            if remaining.is_zero() {
                break;
            }
            std::thread::sleep(remaining.min(interval));
            if started.elapsed().as_secs_f64() < window_s {
                if let Some(d) = self.queue_depth() {
                    series.push(d);
                }
            }
        }

        let end = self.scrape_cluster();
        let window_end_s = self.epoch.elapsed().as_secs_f64();
        if let Some(m) = &end.master {
            series.push(m.queue_depth);
        }
        let dt = window_end_s - window_start_s;
        let partial = begin.partial || end.partial;

        let (offered_hz, sent, achieved_send_hz, blocked) = match (&begin.source, &end.source) {
            (Some(b), Some(e)) => {
                let sent = e.total_sent.saturating_sub(b.total_sent);
                let lag_growth_us = e.schedule_lag_us.saturating_sub(b.schedule_lag_us);
                let blocked = (lag_growth_us as f64 / (dt * 1e6)).clamp(0.0, 1.0);
                (e.offered_hz, sent, sent as f64 / dt, blocked)
            }
            _ => (0.0, 0, 0.0, 0.0),
        };

        let sum_begin = sum_worker_view(&begin, |m| m.total_processed);
        let sum_end = sum_worker_view(&end, |m| m.total_processed);
        let processed = sum_end.saturating_sub(sum_begin);
        let busy_begin = sum_worker_view(&begin, |m| m.busy_us_total);
        let busy_end = sum_worker_view(&end, |m| m.busy_us_total);
        let slot_count: u64 = if !end.workers.is_empty() {
            end.workers.iter().map(|(_, m)| m.slot_count).sum()
        } else {
            end.master.as_ref().map(|m| m.slot_count).unwrap_or(0)
        };
        let busy_fraction = if slot_count > 0 {
            ((busy_end.saturating_sub(busy_begin)) as f64 / (dt * 1e6 * slot_count as f64))
                .clamp(0.0, 1.0)
        } else {
            0.0
        };

        let in_flight = if !end.workers.is_empty() {
            end.workers.iter().map(|(_, m)| m.in_flight).sum()
        } else {
            end.master.as_ref().map(|m| m.in_flight).unwrap_or(0)
        };

        let cumulative = CumulativeCounters {
            total_sent: end.source.as_ref().map(|m| m.total_sent).unwrap_or(0),
            total_processed: sum_end,
            total_lost: end.master.as_ref().map(|m| m.total_lost).unwrap_or(0),
            total_bytes: end.source.as_ref().map(|m| m.total_bytes).unwrap_or(0),
        };

        MetricsSnapshot {
            window_start_s,
            window_end_s,
            offered_hz,
            sent,
            achieved_send_hz,
            source_blocked_fraction: blocked,
            processed,
            processed_hz: processed as f64 / dt,
            queue_depth_series: series,
            worker_busy_fraction: busy_fraction,
            in_flight,
            partial,
            cumulative,
        }
    }
}

/// The master mirrors worker aggregates into the same field names, so the
/// same accessor works for both the per-worker path and the fallback.
fn sum_worker_view(scrape: &ClusterScrape, field: impl Fn(&NodeMetrics) -> u64) -> u64 {
    if !scrape.workers.is_empty() {
        scrape.workers.iter().map(|(_, m)| field(m)).sum()
    } else {
        scrape.master.as_ref().map(field).unwrap_or(0)
    }
}

/// Append-only structured log: one JSON object per line.
#[derive(Debug)]
pub struct EventLog {
    writer: Mutex<BufWriter<File>>,
}

impl EventLog {
    pub fn open(path: &Path) -> std::io::Result<EventLog> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(EventLog { writer: Mutex::new(BufWriter::new(file)) })
    }

    /// Best effort by design: a full disk must not take the node down.
    pub fn log(&self, role: &str, event: &str, fields: serde_json::Value) {
        let ts_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let line = serde_json::json!({
            "ts_ms": ts_ms,
            "role": role,
            "event": event,
            "fields": fields,
        });
        if let Ok(mut w) = self.writer.lock() {
            let _ = writeln!(w, "{line}");
            let _ = w.flush();
        }
    }
}
