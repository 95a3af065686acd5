//! Benchmark suite for distributed stream processing.
//!
//! The crate bundles everything needed to measure the maximum sustainable
//! message frequency of a small stream-processing cluster:
//!
//! - [`protocol`]: binary framing and a token-bucket link shaper
//! - [`workload`]: synthetic messages with tunable size and CPU cost
//! - [`framework`]: master / worker / source nodes speaking the protocol,
//!   preferring direct peer-to-peer hand-off with a master-side queue as
//!   fallback
//! - [`telemetry`]: per-node counters, HTTP status endpoints, and a
//!   collector that assembles windowed cluster snapshots
//! - [`governor`]: ramp-then-bisect search for the highest offered rate a
//!   deployment sustains
//! - [`bounds`]: closed-form network and CPU throughput ceilings and regime
//!   classification
//! - [`sweep`]: grid runs over (message size, CPU cost) with resumable CSV
//!   output
//! - [`report`]: SVG regime maps and measured-versus-bound comparisons
//!
//! The `bench` binary exposes each piece as a subcommand.

pub mod bounds;
pub mod framework;
pub mod governor;
pub mod protocol;
pub mod report;
pub mod sweep;
pub mod telemetry;
pub mod workload;

#[cfg(test)]
pub(crate) mod test_support {
    use std::sync::{Mutex, MutexGuard, OnceLock};

    /// Serializes wall-clock sensitive tests so CPU-heavy neighbours cannot
    /// skew their measurements.
    pub fn timing_lock() -> MutexGuard<'static, ()> {
        static LOCK: OnceLock<Mutex<()>> = OnceLock::new();
        match LOCK.get_or_init(|| Mutex::new(())).lock() {
            Ok(g) => g,
            Err(poisoned) => poisoned.into_inner(),
        }
    }
}
