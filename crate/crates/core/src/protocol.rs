//! Wire protocol: length-prefixed binary framing plus a token-bucket
//! bandwidth shaper for emulating constrained links.
//!
//! Every frame starts with a fixed 32-byte header, big-endian throughout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "HIO1"
//! 4       1     version (currently 1)
//! 5       1     frame kind
//! 6       2     reserved, must be zero
//! 8       8     msg_id
//! 16      8     cpu_cost_us
//! 24      8     payload_len
//! 32      ...   payload (payload_len bytes)
//! ```
//!
//! The header layout is a compatibility contract; changing it breaks every
//! peer on the wire. Control frames carry JSON payloads, data frames carry
//! opaque bytes.

use std::io::{self, Read, Write};
use std::time::Instant;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"HIO1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 32;

/// Upper bound on payload_len accepted by the decoder. Guards against
/// allocating from a corrupt or hostile length field.
pub const MAX_PAYLOAD_LEN: u64 = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameKind {
    /// Payload-bearing message routed source -> worker.
    Data = 0,
    /// Control traffic: registration, heartbeats, acks.
    Status = 1,
    /// Source asks master where to send the next message.
    RouteReq = 2,
    /// Master's answer: a worker address, queue fallback, or an error.
    RouteResp = 3,
    /// Source hands a message to the master queue.
    QueuePush = 4,
    /// Worker asks the master queue for a message.
    QueuePop = 5,
    /// Queued message delivered to a worker.
    QueueMsg = 6,
    /// End-of-stream marker carrying the source's sent count.
    DrainMark = 7,
}

impl FrameKind {
    pub fn from_u8(b: u8) -> Option<FrameKind> {
        match b {
            0 => Some(FrameKind::Data),
            1 => Some(FrameKind::Status),
            2 => Some(FrameKind::RouteReq),
            3 => Some(FrameKind::RouteResp),
            4 => Some(FrameKind::QueuePush),
            5 => Some(FrameKind::QueuePop),
            6 => Some(FrameKind::QueueMsg),
            7 => Some(FrameKind::DrainMark),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown frame kind {0}")]
    UnknownKind(u8),
    #[error("reserved header bytes must be zero")]
    ReservedNonZero,
    #[error("payload length {0} exceeds limit {MAX_PAYLOAD_LEN}")]
    PayloadTooLarge(u64),
    #[error("input ends mid-frame")]
    Truncated,
}

#[derive(Debug, Error)]
pub enum ReadError {
    /// Peer closed the connection cleanly between frames.
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameKind,
    pub msg_id: u64,
    pub cpu_cost_us: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameKind, msg_id: u64, cpu_cost_us: u64, payload: Vec<u8>) -> Frame {
        Frame { kind, msg_id, cpu_cost_us, payload }
    }

    /// Control frame with a JSON payload and no cost metadata.
    pub fn control(kind: FrameKind, msg_id: u64, payload: Vec<u8>) -> Frame {
        Frame::new(kind, msg_id, 0, payload)
    }

    pub fn header_bytes(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..4].copy_from_slice(&MAGIC);
        h[4] = VERSION;
        h[5] = self.kind.as_u8();
        // h[6..8] reserved, already zero
        h[8..16].copy_from_slice(&self.msg_id.to_be_bytes());
        h[16..24].copy_from_slice(&self.cpu_cost_us.to_be_bytes());
        h[24..32].copy_from_slice(&(self.payload.len() as u64).to_be_bytes());
        h
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.header_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes one frame from the start of `buf`. Returns the frame and the
    /// number of bytes consumed so callers can parse concatenated frames.
    /// Any malformed or incomplete input is an error, never a panic.
    pub fn decode(buf: &[u8]) -> Result<(Frame, usize), DecodeError> {
        if buf.len() < HEADER_LEN {
            return Err(DecodeError::Truncated);
        }
        let (kind, payload_len) = decode_header(buf[..HEADER_LEN].try_into().unwrap())?;
        let total = HEADER_LEN + payload_len as usize;
        if buf.len() < total {
            return Err(DecodeError::Truncated);
        }
        let msg_id = u64::from_be_bytes(buf[8..16].try_into().unwrap());
        let cpu_cost_us = u64::from_be_bytes(buf[16..24].try_into().unwrap());
        let payload = buf[HEADER_LEN..total].to_vec();
        Ok((Frame { kind, msg_id, cpu_cost_us, payload }, total))
    }
}

fn decode_header(h: &[u8; HEADER_LEN]) -> Result<(FrameKind, u64), DecodeError> {
    if h[0..4] != MAGIC {
        return Err(DecodeError::BadMagic([h[0], h[1], h[2], h[3]]));
    }
    if h[4] != VERSION {
        return Err(DecodeError::BadVersion(h[4]));
    }
    let kind = FrameKind::from_u8(h[5]).ok_or(DecodeError::UnknownKind(h[5]))?;
    if h[6] != 0 || h[7] != 0 {
        return Err(DecodeError::ReservedNonZero);
    }
    let payload_len = u64::from_be_bytes(h[24..32].try_into().unwrap());
    if payload_len > MAX_PAYLOAD_LEN {
        return Err(DecodeError::PayloadTooLarge(payload_len));
    }
    Ok((kind, payload_len))
}

/// Reads exactly one frame from a stream. Distinguishes a clean close at a
/// frame boundary (`Closed`) from a stream cut mid-frame (`Truncated`).
pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame, ReadError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0usize;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Err(ReadError::Closed),
            Ok(0) => return Err(DecodeError::Truncated.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    let (kind, payload_len) = decode_header(&header)?;
    let msg_id = u64::from_be_bytes(header[8..16].try_into().unwrap());
    let cpu_cost_us = u64::from_be_bytes(header[16..24].try_into().unwrap());
    let mut payload = vec![0u8; payload_len as usize];
    if let Err(e) = r.read_exact(&mut payload) {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            return Err(DecodeError::Truncated.into());
        }
        return Err(e.into());
    }
    Ok(Frame { kind, msg_id, cpu_cost_us, payload })
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.header_bytes())?;
    w.write_all(&frame.payload)?;
    w.flush()
}

/// Token-bucket rate limiter denominated in bits.
///
/// The bucket starts empty: the first byte through a fresh shaper already
/// waits for tokens, so a transfer of N bits at rate R takes at least N/R
/// seconds of wall time. `fill` exists for callers that want an initial
/// burst allowance instead.
#[derive(Debug, Clone, Copy)]
pub struct ShaperConfig {
    pub rate_bits_per_s: f64,
    pub burst_bytes: u64,
}

impl ShaperConfig {
    pub fn new(rate_bits_per_s: f64) -> ShaperConfig {
        ShaperConfig { rate_bits_per_s, burst_bytes: DEFAULT_BURST_BYTES }
    }
}

pub const DEFAULT_BURST_BYTES: u64 = 64 * 1024;

#[derive(Debug)]
pub struct Shaper {
    cfg: ShaperConfig,
    tokens_bits: f64,
    last_refill: Instant,
}

impl Shaper {
    pub fn new(cfg: ShaperConfig) -> Shaper {
        assert!(cfg.rate_bits_per_s > 0.0, "shaper rate must be positive");
        assert!(cfg.burst_bytes > 0, "shaper burst must be positive");
        Shaper { cfg, tokens_bits: 0.0, last_refill: Instant::now() }
    }

    pub fn config(&self) -> ShaperConfig {
        self.cfg
    }

    fn burst_bits(&self) -> f64 {
        self.cfg.burst_bytes as f64 * 8.0
    }

    /// Fills the bucket to the burst capacity, granting an immediate
    /// burst-sized allowance.
    pub fn fill(&mut self) {
        self.tokens_bits = self.burst_bits();
        self.last_refill = Instant::now();
    }

    fn refill(&mut self) {
        let now = Instant::now();
        let dt = now.duration_since(self.last_refill).as_secs_f64();
        self.last_refill = now;
        self.tokens_bits =
            (self.tokens_bits + dt * self.cfg.rate_bits_per_s).min(self.burst_bits());
    }

    /// Blocks until `bytes` worth of tokens have been consumed. Requests
    /// larger than the burst size drain the bucket repeatedly.
    pub fn acquire(&mut self, bytes: usize) {
        let mut need_bits = bytes as f64 * 8.0;
        loop {
            self.refill();
            let take = need_bits.min(self.tokens_bits);
            self.tokens_bits -= take;
            need_bits -= take;
            if need_bits <= 0.0 {
                return;
            }
            let wait_bits = need_bits.min(self.burst_bits());
            let wait_s = wait_bits / self.cfg.rate_bits_per_s;
            std::thread::sleep(std::time::Duration::from_secs_f64(wait_s));
        }
    }
}

/// Writer that pushes bytes through an optional shaper. Writes are split
/// into chunks no larger than the burst size so pacing stays smooth instead
/// of stalling once per huge message. With no shaper it is a plain
/// pass-through.
pub struct ShapedWriter<W: Write> {
    inner: W,
    shaper: Option<Shaper>,
}

impl<W: Write> ShapedWriter<W> {
    pub fn new(inner: W, shaper: Option<Shaper>) -> ShapedWriter<W> {
        ShapedWriter { inner, shaper }
    }

    pub fn get_mut(&mut self) -> &mut W {
        &mut self.inner
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

impl<W: Write> Write for ShapedWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match &mut self.shaper {
            None => self.inner.write(buf),
            Some(shaper) => {
                let chunk = (shaper.cfg.burst_bytes as usize).min(buf.len()).max(1);
                let chunk = &buf[..chunk.min(buf.len())];
                shaper.acquire(chunk.len());
                self.inner.write(chunk)
            }
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}
