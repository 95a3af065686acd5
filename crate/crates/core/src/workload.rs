//! Synthetic workload generation: messages of a chosen size paired with a
//! per-message CPU cost that workers burn on receipt.
//!
//! Payloads are generated from a counter-seeded stream cipher, so any
//! message can be regenerated byte-identically from its id alone. That
//! keeps sources stateless across restarts and lets tests verify delivered
//! bytes without shipping expected payloads around.

use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One cell of the workload grid: how big each message is and how much CPU
/// time a worker spends on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorkloadPoint {
    pub message_size_bytes: u64,
    pub cpu_cost_us: u64,
}

impl WorkloadPoint {
    pub fn new(message_size_bytes: u64, cpu_cost_us: u64) -> WorkloadPoint {
        WorkloadPoint { message_size_bytes, cpu_cost_us }
    }
}

/// Named workload shape, optionally with the rate the scenario is expected
/// to run at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub name: String,
    pub point: WorkloadPoint,
    pub target_hz_hint: Option<f64>,
}

/// Built-in profiles. "hci" models an instrument streaming large frames at
/// a fixed camera rate, "tiny-enterprise" models small-event traffic with
/// no compute, "heavy-sim" models tiny tasks that each cost a full second
/// of CPU.
pub fn preset(name: &str) -> Option<WorkloadProfile> {
    let (point, hint) = match name {
        "hci" => (WorkloadPoint::new(10_000_000, 100_000), Some(38.0)),
        "tiny-enterprise" => (WorkloadPoint::new(100, 0), None),
        "heavy-sim" => (WorkloadPoint::new(100, 1_000_000), None),
        _ => return None,
    };
    Some(WorkloadProfile { name: name.to_string(), point, target_hz_hint: hint })
}

pub fn preset_names() -> &'static [&'static str] {
    &["hci", "tiny-enterprise", "heavy-sim"]
}

/// Default sweep axes: sizes from 100 B to 10 MB, costs from zero to one
/// second per message.
pub fn default_grid() -> (Vec<u64>, Vec<u64>) {
    let sizes = vec![100, 1_000, 10_000, 100_000, 1_000_000, 10_000_000];
    let cpu_costs = vec![0, 10_000, 50_000, 100_000, 200_000, 500_000, 1_000_000];
    (sizes, cpu_costs)
}

/// Generates the payload for message `msg_id`. Deterministic: the same
/// (msg_id, size) pair always yields the same bytes, and distinct ids yield
/// distinct payloads.
pub fn make_message(msg_id: u64, point: WorkloadPoint) -> Vec<u8> {
    let mut payload = vec![0u8; point.message_size_bytes as usize];
    let mut rng = ChaCha8Rng::seed_from_u64(msg_id);
    rng.fill_bytes(&mut payload);
    payload
}

/// Busy-spins for at least `duration_us` of wall time on a monotonic clock
/// and returns the measured elapsed time in microseconds. A zero cost
/// returns immediately without touching the clock. The spin never yields,
/// so the burn occupies its core for the full duration.
pub fn burn_cpu(duration_us: u64) -> u64 {
    if duration_us == 0 {
        return 0;
    }
    let target = Duration::from_micros(duration_us);
    let start = Instant::now();
    loop {
        let elapsed = start.elapsed();
        if elapsed >= target {
            return elapsed.as_micros() as u64;
        }
        std::hint::spin_loop();
    }
}

/// Result of checking the burner against the host clock.
#[derive(Debug, Clone, Serialize)]
pub struct BurnCalibration {
    /// (requested_us, measured_us) per sample.
    pub samples: Vec<(u64, u64)>,
    pub median_overshoot_frac: f64,
    /// True when the median overshoot is at most 2%.
    pub ok: bool,
}

pub const CALIBRATION_MAX_MEDIAN_OVERSHOOT: f64 = 0.02;

/// Runs `sample_count` burns with durations log-spaced from 100 µs to
/// 100 ms and reports how far each overshot its request. On an otherwise
/// idle host the median overshoot must come in under 2%; a failing result
/// means measured frequencies cannot be trusted on this machine.
pub fn calibrate_burner(sample_count: usize) -> BurnCalibration {
    let n = sample_count.max(2);
    let lo: f64 = 100.0;
    let hi: f64 = 100_000.0;
    let mut samples = Vec::with_capacity(n);
    let mut overshoots = Vec::with_capacity(n);
    // one throwaway burn so lazy clock setup does not pollute the first sample
    burn_cpu(100);
    for i in 0..n {
        let frac = i as f64 / (n - 1) as f64;
        let requested = (lo * (hi / lo).powf(frac)).round() as u64;
        let measured = burn_cpu(requested);
        overshoots.push((measured as f64 - requested as f64) / requested as f64);
        samples.push((requested, measured));
    }
    overshoots.sort_by(|a, b| a.total_cmp(b));
    let median = if n % 2 == 1 {
        overshoots[n / 2]
    } else {
        (overshoots[n / 2 - 1] + overshoots[n / 2]) / 2.0
    };
    BurnCalibration {
        samples,
        median_overshoot_frac: median,
        ok: median <= CALIBRATION_MAX_MEDIAN_OVERSHOOT,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::timing_lock;
    use proptest::prelude::*;

    #[test]
    fn presets_are_pinned() {
        let hci = preset("hci").unwrap();
        assert_eq!(hci.point, WorkloadPoint::new(10_000_000, 100_000));
        assert_eq!(hci.target_hz_hint, Some(38.0));
        let tiny = preset("tiny-enterprise").unwrap();
        assert_eq!(tiny.point, WorkloadPoint::new(100, 0));
        assert_eq!(tiny.target_hz_hint, None);
        let sim = preset("heavy-sim").unwrap();
        assert_eq!(sim.point, WorkloadPoint::new(100, 1_000_000));
        assert!(preset("nope").is_none());
        for name in preset_names() {
            assert!(preset(name).is_some());
        }
    }

    #[test]
    fn default_grid_is_pinned() {
        let (sizes, cpus) = default_grid();
        assert_eq!(sizes, vec![100, 1_000, 10_000, 100_000, 1_000_000, 10_000_000]);
        assert_eq!(cpus, vec![0, 10_000, 50_000, 100_000, 200_000, 500_000, 1_000_000]);
    }

    #[test]
    fn payload_regeneration_is_byte_identical() {
        let p = WorkloadPoint::new(4096, 0);
        for id in [0u64, 1, 2, u64::MAX] {
            assert_eq!(make_message(id, p), make_message(id, p));
        }
    }

    #[test]
    fn payload_length_matches_request() {
        for size in [0u64, 1, 100, 1_000, 65_537] {
            let p = WorkloadPoint::new(size, 0);
            assert_eq!(make_message(9, p).len(), size as usize);
        }
    }

    #[test]
    fn distinct_ids_give_distinct_payloads() {
        let p = WorkloadPoint::new(64, 0);
        let a = make_message(1, p);
        let b = make_message(2, p);
        assert_ne!(a, b);
    }

    proptest! {
        #[test]
        fn payload_deterministic_and_id_sensitive(id in any::<u64>(), size in 1u64..2048) {
            let p = WorkloadPoint::new(size, 0);
            let first = make_message(id, p);
            prop_assert_eq!(first.len(), size as usize);
            prop_assert_eq!(&first, &make_message(id, p));
            prop_assert_ne!(first, make_message(id.wrapping_add(1), p));
        }
    }

    #[test]
    fn zero_cost_skips_the_burn() {
        let start = Instant::now();
        for _ in 0..10_000 {
            assert_eq!(burn_cpu(0), 0);
        }
        assert!(start.elapsed().as_millis() < 100);
    }

    #[test]
    fn burn_never_undershoots() {
        let _g = timing_lock();
        for requested in [100u64, 1_000, 10_000, 50_000] {
            let measured = burn_cpu(requested);
            assert!(measured >= requested, "burn({requested}) measured {measured}");
        }
    }

    #[test]
    fn one_second_burn_lands_in_window() {
        let _g = timing_lock();
        let measured = burn_cpu(1_000_000);
        assert!(measured >= 1_000_000, "measured {measured}");
        assert!(measured <= 1_020_000, "measured {measured}, expected at most 2% overshoot");
    }

    #[test]
    fn burn_is_cpu_bound_not_sleeping() {
        let _g = timing_lock();
        burn_cpu(10_000); // warm up scheduling before measuring
        let cpu0 = thread_cpu_time();
        let start = Instant::now();
        let _ = burn_cpu(500_000);
        let wall = start.elapsed();
        let spent = thread_cpu_time() - cpu0;
        let busy_frac = spent.as_secs_f64() / wall.as_secs_f64();
        assert!(
            busy_frac >= 0.95,
            "burn used {busy_frac:.3} of its core ({spent:?} cpu over {wall:?} wall)"
        );
    }

    fn thread_cpu_time() -> Duration {
        let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
        let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
        assert_eq!(rc, 0);
        Duration::new(ts.tv_sec as u64, ts.tv_nsec as u32)
    }

    #[test]
    fn calibration_passes_on_idle_host() {
        let _g = timing_lock();
        let cal = calibrate_burner(9);
        assert_eq!(cal.samples.len(), 9);
        assert_eq!(cal.samples.first().unwrap().0, 100);
        assert_eq!(cal.samples.last().unwrap().0, 100_000);
        for (requested, measured) in &cal.samples {
            assert!(measured >= requested);
        }
        assert!(
            cal.ok,
            "median overshoot {:.4} above the 2% gate",
            cal.median_overshoot_frac
        );
    }
}
