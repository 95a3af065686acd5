//! The stream-processing framework: a master holding the availability
//! registry and the fallback queue, workers running slot threads, and a
//! paced streaming source.
//!
//! Delivery favors direct source-to-worker transfer. The source asks the
//! master where to send each message; with a free slot somewhere it gets a
//! worker address, otherwise the message goes to the master queue and a
//! worker pulls it later. Workers always check the queue before waiting on
//! their direct inbox.

pub mod adapter;
pub mod master;
pub mod source;
pub mod worker;

use std::io::{Read, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{read_frame, write_frame, Frame, FrameKind, ReadError};

pub use adapter::BuiltinAdapter;
pub use master::{start_master, MasterConfig, MasterHandle};
pub use source::{start_source, SendReport, SourceConfig, SourceHandle, StreamMode};
pub use worker::{start_worker, WorkerConfig, WorkerHandle};

pub const DEFAULT_HEARTBEAT_INTERVAL_MS: u64 = 500;
pub const DEFAULT_STALE_AFTER_INTERVALS: u32 = 3;
pub const DEFAULT_QUEUE_POLL_INTERVAL_MS: u64 = 100;

/// Status-frame bodies exchanged between nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControlMsg {
    Register {
        p2p_addr: String,
        status_addr: String,
        slot_count: u64,
    },
    Registered {
        worker_id: u64,
    },
    Heartbeat {
        worker_id: u64,
        available_slots: u64,
        processed_total: u64,
        in_flight: u64,
        busy_us_total: u64,
        malformed_total: u64,
    },
    /// Ask the master for drain progress.
    Reconcile,
    ReconcileStatus {
        /// The sent count announced by the source's end-of-stream marker.
        sent: Option<u64>,
        processed: u64,
        queue_depth: u64,
        in_flight: u64,
    },
    DrainAck,
    /// Final verdict of a drain, posted back so the master can account
    /// lost messages cluster-wide.
    DrainOutcome {
        lost: u64,
    },
}

/// RouteResp bodies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum RouteReply {
    P2p { addr: String },
    Queue,
    Error { error: String },
}

/// Where the master decided one message should go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RouteDecision {
    P2p(String),
    Queue,
}

#[derive(Debug, Error)]
pub enum FrameworkError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("wire error: {0}")]
    Wire(#[from] ReadError),
    #[error("no workers registered")]
    NoWorkersRegistered,
    #[error("master unreachable: {0}")]
    MasterUnreachable(String),
    #[error("registration failed: {0}")]
    RegistrationFailed(String),
    #[error("bad control payload: {0}")]
    BadControlPayload(String),
    #[error("drain timed out: sent {} processed {} ({} queued, {} in flight)",
        .0.sent, .0.processed, .0.queue_depth, .0.in_flight)]
    DrainTimeout(ReconcileReport),
}

/// Sent-versus-processed accounting after a drain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReconcileReport {
    pub sent: u64,
    pub processed: u64,
    pub lost: u64,
    pub queue_depth: u64,
    pub in_flight: u64,
}

pub(crate) fn control_frame(kind: FrameKind, msg: &ControlMsg) -> Frame {
    Frame::control(kind, 0, serde_json::to_vec(msg).expect("control serializes"))
}

pub(crate) fn parse_control(frame: &Frame) -> Result<ControlMsg, FrameworkError> {
    serde_json::from_slice(&frame.payload)
        .map_err(|e| FrameworkError::BadControlPayload(e.to_string()))
}

/// One request/reply round trip on a persistent connection.
pub(crate) fn rpc<S: Read + Write>(stream: &mut S, frame: &Frame) -> Result<Frame, FrameworkError> {
    write_frame(stream, frame)?;
    Ok(read_frame(stream)?)
}

/// Drives the full drain: announces the source's final sent count, then
/// polls the master until the pipeline has quiesced and every message is
/// accounted for (or the deadline passes).
///
/// Quiescence with `processed < sent` that holds stable for over a second
/// is concluded as loss (e.g. a worker died mid-run) rather than waited
/// out; the outcome is posted back to the master either way.
pub fn drain_and_reconcile(
    master_addr: &str,
    sent: u64,
    timeout: Duration,
) -> Result<ReconcileReport, FrameworkError> {
    let mut stream = std::net::TcpStream::connect(master_addr)
        .map_err(|e| FrameworkError::MasterUnreachable(format!("{master_addr}: {e}")))?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    stream.set_nodelay(true)?;

    let mark = Frame::control(
        FrameKind::DrainMark,
        sent,
        serde_json::to_vec(&serde_json::json!({ "sent": sent })).unwrap(),
    );
    let reply = rpc(&mut stream, &mark)?;
    if !matches!(parse_control(&reply), Ok(ControlMsg::DrainAck)) {
        return Err(FrameworkError::BadControlPayload("expected drain ack".into()));
    }

    let started = std::time::Instant::now();
    let poll = Duration::from_millis(100);
    let mut stable_polls = 0u32;
    let mut last_processed = u64::MAX;
    loop {
        let reply = rpc(&mut stream, &control_frame(FrameKind::Status, &ControlMsg::Reconcile))?;
        let status = parse_control(&reply)?;
        let ControlMsg::ReconcileStatus { processed, queue_depth, in_flight, .. } = status else {
            return Err(FrameworkError::BadControlPayload("expected reconcile status".into()));
        };
        let report = ReconcileReport {
            sent,
            processed,
            lost: sent.saturating_sub(processed),
            queue_depth,
            in_flight,
        };

        if processed >= sent && queue_depth == 0 && in_flight == 0 {
            let _ = write_frame(
                &mut stream,
                &control_frame(FrameKind::Status, &ControlMsg::DrainOutcome { lost: 0 }),
            );
            return Ok(ReconcileReport { lost: 0, ..report });
        }

        let quiet = queue_depth == 0 && in_flight == 0 && processed == last_processed;
        stable_polls = if quiet { stable_polls + 1 } else { 0 };
        last_processed = processed;
        if stable_polls >= 12 {
            let _ = write_frame(
                &mut stream,
                &control_frame(FrameKind::Status, &ControlMsg::DrainOutcome { lost: report.lost }),
            );
            return Ok(report);
        }

        if started.elapsed() >= timeout {
            return Err(FrameworkError::DrainTimeout(report));
        }
        std::thread::sleep(poll);
    }
}
