//! Saturation search: ramp the offered rate piecewise until the pipeline
//! shows overload, then binary-search the largest integer frequency it
//! sustains.
//!
//! The search drives any [`Adapter`] (the built-in framework, or a mock for
//! tests) through set_rate / metrics cycles. After every rate change one
//! settling window is discarded, then windows are judged until a decisive
//! verdict moves the search.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::bounds::{ideal_bound_hz, ClusterSpec};
use crate::telemetry::MetricsSnapshot;
use crate::workload::{WorkloadPoint, CALIBRATION_MAX_MEDIAN_OVERSHOOT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    SustainedLoadOk,
    TooMuchLoad,
    WaitAndSee,
}

/// Bracket and bookkeeping for one search.
#[derive(Debug, Clone)]
pub struct SearchState {
    pub point: WorkloadPoint,
    pub f: u64,
    pub max_known_ok_f: u64,
    pub min_known_not_ok_f: Option<u64>,
    pub history: Vec<(u64, Verdict)>,
    /// Windows observed since the last rate change; 0 means unsettled.
    pub windows_at_current_f: u64,
    /// Set when a verdict contradicted the bracket (a rate at or below a
    /// previously sustained one failed, or vice versa).
    pub non_monotone: bool,
}

impl SearchState {
    pub fn new(point: WorkloadPoint, start_f: u64) -> SearchState {
        SearchState {
            point,
            f: start_f.max(1),
            max_known_ok_f: 0,
            min_known_not_ok_f: None,
            history: Vec::new(),
            windows_at_current_f: 0,
            non_monotone: false,
        }
    }

    /// Bracket sanity: whenever both edges are known the ok side sits
    /// strictly below the not-ok side.
    pub fn bracket_valid(&self) -> bool {
        match self.min_known_not_ok_f {
            Some(mn) => self.max_known_ok_f < mn,
            None => true,
        }
    }
}

/// Outcome of one throttle step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Continue(u64),
    Done(u64),
}

/// Search result for one workload point.
#[derive(Debug, Clone, Serialize)]
pub struct MaxThroughputResult {
    pub point: WorkloadPoint,
    pub max_hz: u64,
    /// Judged (decisive) windows consumed.
    pub iterations: u64,
    pub windows_total: u64,
    pub wall_time_s: f64,
    pub verdict_trace: Vec<(u64, Verdict)>,
    /// True when even 1 Hz overloaded the pipeline.
    pub unsustainable: bool,
    pub non_monotone: bool,
    /// True when a window or time cap ended the search; max_hz is then the
    /// best bracket edge found so far.
    pub timed_out: bool,
}

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("adapter down: {0}")]
    Down(String),
    #[error("{0}")]
    Failed(String),
}

#[derive(Debug, Error)]
pub enum GovernorError {
    #[error("adapter down: {0}")]
    AdapterDown(String),
    #[error("burn calibration failed: median overshoot {0:.4} exceeds {max}", max = CALIBRATION_MAX_MEDIAN_OVERSHOOT)]
    CalibrationFailed(f64),
}

/// A system under test. `metrics` blocks for one observation window and
/// returns it; a mock may return instantly (window_s of zero).
pub trait Adapter: Send {
    fn name(&self) -> &str;
    fn window_s(&self) -> f64;
    fn set_point(&mut self, point: WorkloadPoint) -> Result<(), AdapterError>;
    fn set_rate(&mut self, f_hz: u64) -> Result<(), AdapterError>;
    fn metrics(&mut self) -> Result<MetricsSnapshot, AdapterError>;
    fn reset(&mut self) -> Result<(), AdapterError>;
}

#[derive(Debug, Clone)]
pub struct GovernorConfig {
    /// A window sustains f when processed_hz reaches this fraction of f.
    pub ok_processed_frac: f64,
    /// Below this fraction of f the window is decisively overloaded.
    pub fail_processed_frac: f64,
    /// Below this fraction the source itself cannot offer f.
    pub fail_send_frac: f64,
    /// Source schedule-lag growth fraction above which the window is not ok.
    pub max_blocked_frac: f64,
    /// Warm start: the previous grid cell's result.
    pub f_last_run: Option<u64>,
    /// Explicit start frequency; overrides both warm start and the default.
    pub start_f: Option<u64>,
    pub max_judged_windows: u64,
    pub max_total_windows: u64,
    /// Wall-clock cap per search; 0 disables.
    pub time_cap_s: f64,
    /// Median burner overshoot from a calibration run, when one gates this
    /// search. Values above the calibration limit abort.
    pub calibration_median_overshoot: Option<f64>,
}

impl Default for GovernorConfig {
    fn default() -> GovernorConfig {
        GovernorConfig {
            ok_processed_frac: 0.98,
            fail_processed_frac: 0.95,
            fail_send_frac: 0.95,
            max_blocked_frac: 0.05,
            f_last_run: None,
            start_f: None,
            max_judged_windows: 200,
            max_total_windows: 1600,
            time_cap_s: 900.0,
            calibration_median_overshoot: None,
        }
    }
}

/// Judges one window at the current rate. Partial snapshots and the first
/// window after a rate change are never judged.
pub fn heuristics(
    snapshot: &MetricsSnapshot,
    state: &SearchState,
    cfg: &GovernorConfig,
) -> Verdict {
    if snapshot.partial || state.windows_at_current_f == 0 {
        return Verdict::WaitAndSee;
    }
    let f = state.f as f64;
    if snapshot.queue_strictly_increasing()
        || snapshot.processed_hz < cfg.fail_processed_frac * f
        || snapshot.achieved_send_hz < cfg.fail_send_frac * f
    {
        return Verdict::TooMuchLoad;
    }
    if snapshot.processed_hz >= cfg.ok_processed_frac * f
        && snapshot.queue_trend_non_increasing()
        && snapshot.source_blocked_fraction < cfg.max_blocked_frac
    {
        return Verdict::SustainedLoadOk;
    }
    Verdict::WaitAndSee
}

/// How close the offered rate sits to the tightest known limit: the max of
/// link utilization, compute utilization, and the shortfall between target
/// and achieved send rate, clamped to [0, 1].
pub fn estimate_fraction_max_load(
    snapshot: &MetricsSnapshot,
    point: WorkloadPoint,
    cluster: &ClusterSpec,
) -> f64 {
    let f = snapshot.offered_hz;
    let net = f * point.message_size_bytes as f64 * 8.0 * cluster.topology_factor
        / cluster.bandwidth_bits_per_s;
    let cpu = f * point.cpu_cost_us as f64 / (1e6 * cluster.total_worker_slots as f64);
    let shortfall = if f > 0.0 {
        (1.0 - snapshot.achieved_send_hz / f).max(0.0)
    } else {
        0.0
    };
    net.max(cpu).max(shortfall).clamp(0.0, 1.0)
}

/// Records the sustained rate and proposes the next one. While the ceiling
/// is unbracketed this ramps (aggressively when load is low); once an upper
/// edge is known it bisects.
pub fn throttle_up(load: f64, state: &mut SearchState) -> Step {
    let f = state.f;
    if let Some(mn) = state.min_known_not_ok_f {
        if f >= mn {
            state.non_monotone = true;
        }
    }
    state.max_known_ok_f = f;
    if state.min_known_not_ok_f.is_none() {
        // the two highest-load branches are intentionally both 1.05: the
        // piecewise law flattens out near the top
        #[allow(clippy::if_same_then_else)]
        let new_f = if load < 0.01 {
            f * 10
        } else if load < 0.1 {
            f * 5
        } else if load < 0.5 {
            (f as f64 * 1.10) as u64
        } else if load < 0.8 {
            (f as f64 * 1.05) as u64
        } else {
            (f as f64 * 1.05) as u64
        };
        let new_f = if new_f == f { f + 1 } else { new_f };
        Step::Continue(new_f)
    } else {
        find_midpoint_or_done(state)
    }
}

/// Records the overloaded rate and bisects (or finishes).
pub fn throttle_down(state: &mut SearchState) -> Step {
    if state.f <= state.max_known_ok_f {
        // a rate at or below a sustained one failed: shrink the ok edge
        // conservatively and remember that the pipeline misbehaved
        state.non_monotone = true;
        state.max_known_ok_f = state.f.saturating_sub(1);
    }
    state.min_known_not_ok_f = Some(state.f);
    find_midpoint_or_done(state)
}

/// Once both bracket edges are known: finish when they touch, otherwise
/// propose the integer midpoint.
pub fn find_midpoint_or_done(state: &SearchState) -> Step {
    let min_not = state
        .min_known_not_ok_f
        .expect("midpoint requires an upper bracket edge");
    if state.max_known_ok_f + 1 >= min_not {
        Step::Done(state.max_known_ok_f)
    } else {
        Step::Continue((state.max_known_ok_f + min_not) / 2)
    }
}

/// Default start frequency: a tenth of the analytic ceiling, at least 1 Hz.
pub fn default_start_f(point: WorkloadPoint, cluster: &ClusterSpec) -> u64 {
    let ideal = ideal_bound_hz(point, cluster).as_f64();
    if ideal.is_finite() {
        ((0.1 * ideal) as u64).max(1)
    } else {
        1
    }
}

/// Runs the full search for one workload point and returns the largest
/// sustained integer frequency.
pub fn find_max_f(
    point: WorkloadPoint,
    adapter: &mut dyn Adapter,
    cluster: &ClusterSpec,
    cfg: &GovernorConfig,
) -> Result<MaxThroughputResult, GovernorError> {
    if let Some(overshoot) = cfg.calibration_median_overshoot {
        if overshoot > CALIBRATION_MAX_MEDIAN_OVERSHOOT {
            return Err(GovernorError::CalibrationFailed(overshoot));
        }
    }
    let down = |e: AdapterError| GovernorError::AdapterDown(e.to_string());
    adapter.reset().map_err(down)?;
    adapter.set_point(point).map_err(down)?;

    let start_f = cfg
        .start_f
        .or(cfg.f_last_run)
        .filter(|&f| f >= 1)
        .unwrap_or_else(|| default_start_f(point, cluster));
    let mut state = SearchState::new(point, start_f);
    adapter.set_rate(state.f).map_err(down)?;

    let started = Instant::now();
    let mut judged: u64 = 0;
    let mut windows_total: u64 = 0;
    let mut timed_out = false;
    let max_hz;

    loop {
        let capped = judged >= cfg.max_judged_windows
            || windows_total >= cfg.max_total_windows
            || (cfg.time_cap_s > 0.0 && started.elapsed().as_secs_f64() > cfg.time_cap_s);
        if capped {
            timed_out = true;
            max_hz = state.max_known_ok_f;
            break;
        }

        let snapshot = adapter.metrics().map_err(down)?;
        windows_total += 1;
        let verdict = heuristics(&snapshot, &state, cfg);
        state.history.push((state.f, verdict));

        let step = match verdict {
            Verdict::WaitAndSee => {
                state.windows_at_current_f += 1;
                continue;
            }
            Verdict::SustainedLoadOk => {
                judged += 1;
                let load = estimate_fraction_max_load(&snapshot, point, cluster);
                throttle_up(load, &mut state)
            }
            Verdict::TooMuchLoad => {
                judged += 1;
                throttle_down(&mut state)
            }
        };
        debug_assert!(state.bracket_valid());

        match step {
            Step::Done(m) => {
                max_hz = m;
                break;
            }
            Step::Continue(new_f) => {
                adapter.set_rate(new_f).map_err(down)?;
                state.f = new_f;
                state.windows_at_current_f = 0;
            }
        }
    }

    Ok(MaxThroughputResult {
        point,
        max_hz,
        iterations: judged,
        windows_total,
        wall_time_s: windows_total as f64 * adapter.window_s(),
        verdict_trace: state.history,
        unsustainable: max_hz == 0,
        non_monotone: state.non_monotone,
        timed_out,
    })
}

/// Deterministic stand-in for a real deployment: sustains any rate up to a
/// hidden per-point threshold and shows textbook overload above it.
pub struct MockAdapter {
    name: String,
    threshold: Box<dyn FnMut(WorkloadPoint) -> u64 + Send>,
    point: WorkloadPoint,
    f: u64,
    windows_served: u64,
}

impl MockAdapter {
    pub fn new(
        name: &str,
        threshold: impl FnMut(WorkloadPoint) -> u64 + Send + 'static,
    ) -> MockAdapter {
        MockAdapter {
            name: name.to_string(),
            threshold: Box::new(threshold),
            point: WorkloadPoint::new(1, 0),
            f: 0,
            windows_served: 0,
        }
    }

    pub fn with_threshold(threshold: u64) -> MockAdapter {
        MockAdapter::new("mock", move |_| threshold)
    }

    /// Threshold pinned to a fraction of the analytic ceiling; lets the
    /// sweep and reports run end-to-end without a live cluster.
    pub fn from_bounds(cluster: ClusterSpec, fraction: f64) -> MockAdapter {
        MockAdapter::new("mock", move |point| {
            let ideal = ideal_bound_hz(point, &cluster).as_f64();
            if ideal.is_finite() {
                ((fraction * ideal) as u64).max(1)
            } else {
                1
            }
        })
    }
}

impl Adapter for MockAdapter {
    fn name(&self) -> &str {
        &self.name
    }

    fn window_s(&self) -> f64 {
        0.0
    }

    fn set_point(&mut self, point: WorkloadPoint) -> Result<(), AdapterError> {
        self.point = point;
        Ok(())
    }

    fn set_rate(&mut self, f_hz: u64) -> Result<(), AdapterError> {
        self.f = f_hz;
        Ok(())
    }

    fn metrics(&mut self) -> Result<MetricsSnapshot, AdapterError> {
        let t = (self.threshold)(self.point);
        let f = self.f;
        self.windows_served += 1;
        let mut snap = MetricsSnapshot::idle(1.0);
        snap.window_start_s = self.windows_served as f64;
        snap.window_end_s = snap.window_start_s + 1.0;
        snap.offered_hz = f as f64;
        snap.sent = f;
        snap.achieved_send_hz = f as f64;
        if f <= t {
            snap.processed = f;
            snap.processed_hz = f as f64;
            snap.queue_depth_series = vec![0, 0, 0];
            snap.worker_busy_fraction = if t > 0 { (f as f64 / t as f64).min(1.0) } else { 0.0 };
        } else {
            let backlog_per_sample = f - t;
            snap.processed = t;
            snap.processed_hz = t as f64;
            snap.queue_depth_series =
                vec![0, backlog_per_sample, 2 * backlog_per_sample, 3 * backlog_per_sample];
            snap.worker_busy_fraction = 1.0;
        }
        Ok(snap)
    }

    fn reset(&mut self) -> Result<(), AdapterError> {
        self.f = 0;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state_at(f: u64, max_ok: u64, min_not: Option<u64>) -> SearchState {
        let mut s = SearchState::new(WorkloadPoint::new(1000, 0), f);
        s.max_known_ok_f = max_ok;
        s.min_known_not_ok_f = min_not;
        s
    }

    #[test]
    fn throttle_conformance_table() {
        let mut s = state_at(10, 0, None);
        assert_eq!(throttle_up(0.005, &mut s), Step::Continue(100));
        assert_eq!(s.max_known_ok_f, 10);

        let mut s = state_at(10, 0, None);
        assert_eq!(throttle_up(0.05, &mut s), Step::Continue(50));

        let mut s = state_at(100, 0, None);
        assert_eq!(throttle_up(0.3, &mut s), Step::Continue(110));

        let mut s = state_at(5, 0, None);
        assert_eq!(throttle_up(0.6, &mut s), Step::Continue(6));

        let mut s = state_at(200, 100, None);
        assert_eq!(throttle_down(&mut s), Step::Continue(150));
        assert_eq!(s.min_known_not_ok_f, Some(200));

        let mut s = state_at(100, 99, None);
        assert_eq!(throttle_down(&mut s), Step::Done(99));
    }

    #[test]
    fn throttle_up_high_load_branches_match() {
        let mut s = state_at(100, 0, None);
        assert_eq!(throttle_up(0.79, &mut s), Step::Continue(105));
        let mut s = state_at(100, 0, None);
        assert_eq!(throttle_up(0.99, &mut s), Step::Continue(105));
    }

    #[test]
    fn throttle_up_bisects_once_bracketed() {
        let mut s = state_at(120, 100, Some(200));
        assert_eq!(throttle_up(0.2, &mut s), Step::Continue(160));
        assert_eq!(s.max_known_ok_f, 120);
    }

    #[test]
    fn failing_at_one_means_unsustainable() {
        let mut s = state_at(1, 0, None);
        assert_eq!(throttle_down(&mut s), Step::Done(0));
    }

    #[test]
    fn non_monotone_failure_shrinks_ok_edge() {
        let mut s = state_at(50, 80, None);
        let step = throttle_down(&mut s);
        assert!(s.non_monotone);
        assert_eq!(s.max_known_ok_f, 49);
        assert_eq!(s.min_known_not_ok_f, Some(50));
        assert_eq!(step, Step::Done(49));
        assert!(s.bracket_valid());
    }

    #[test]
    fn non_monotone_success_is_flagged() {
        let mut s = state_at(90, 0, Some(80));
        let _ = throttle_up(0.5, &mut s);
        assert!(s.non_monotone);
    }

    fn judged_snapshot(f: u64, processed_hz: f64, series: Vec<u64>) -> (MetricsSnapshot, SearchState) {
        let mut snap = MetricsSnapshot::idle(1.0);
        snap.offered_hz = f as f64;
        snap.achieved_send_hz = f as f64;
        snap.processed_hz = processed_hz;
        snap.queue_depth_series = series;
        let mut state = SearchState::new(WorkloadPoint::new(1000, 0), f);
        state.windows_at_current_f = 1;
        (snap, state)
    }

    #[test]
    fn heuristics_examples_pinned() {
        let cfg = GovernorConfig::default();

        let (snap, state) = judged_snapshot(100, 99.5, vec![0, 0, 0]);
        assert_eq!(heuristics(&snap, &state, &cfg), Verdict::SustainedLoadOk);

        let (mut snap, state) = judged_snapshot(100, 100.0, vec![0, 40, 90, 160, 250]);
        snap.processed_hz = 100.0;
        assert_eq!(heuristics(&snap, &state, &cfg), Verdict::TooMuchLoad);

        // first window after a rate change
        let (snap, mut state) = judged_snapshot(100, 100.0, vec![0, 0, 0]);
        state.windows_at_current_f = 0;
        assert_eq!(heuristics(&snap, &state, &cfg), Verdict::WaitAndSee);

        // partial snapshots are never judged
        let (mut snap, state) = judged_snapshot(100, 100.0, vec![0, 0, 0]);
        snap.partial = true;
        assert_eq!(heuristics(&snap, &state, &cfg), Verdict::WaitAndSee);

        // processed in the undecided band
        let (snap, state) = judged_snapshot(100, 96.5, vec![0, 0, 0]);
        assert_eq!(heuristics(&snap, &state, &cfg), Verdict::WaitAndSee);

        // decisive shortfalls
        let (snap, state) = judged_snapshot(100, 94.0, vec![0, 0, 0]);
        assert_eq!(heuristics(&snap, &state, &cfg), Verdict::TooMuchLoad);
        let (mut snap, state) = judged_snapshot(100, 100.0, vec![0, 0, 0]);
        snap.achieved_send_hz = 94.0;
        assert_eq!(heuristics(&snap, &state, &cfg), Verdict::TooMuchLoad);

        // blocked source keeps an otherwise ok window undecided
        let (mut snap, state) = judged_snapshot(100, 99.0, vec![0, 0, 0]);
        snap.source_blocked_fraction = 0.10;
        assert_eq!(heuristics(&snap, &state, &cfg), Verdict::WaitAndSee);
    }

    #[test]
    fn load_estimate_pinned_values() {
        let cluster = ClusterSpec {
            bandwidth_bits_per_s: 1.4e9,
            total_worker_slots: 40,
            topology_factor: 1.0,
        };
        let mut snap = MetricsSnapshot::idle(1.0);
        snap.offered_hz = 10.0;
        snap.achieved_send_hz = 10.0;

        let net_only = WorkloadPoint::new(1_000_000, 0);
        let load = estimate_fraction_max_load(&snap, net_only, &cluster);
        assert!((load - 8e7 / 1.4e9).abs() < 1e-12, "{load}");

        let cpu_only = WorkloadPoint::new(1, 100_000);
        let load = estimate_fraction_max_load(&snap, cpu_only, &cluster);
        assert!((load - 0.025).abs() < 1e-12, "{load}");

        let both = WorkloadPoint::new(1_000_000, 100_000);
        let load = estimate_fraction_max_load(&snap, both, &cluster);
        assert!((load - 8e7 / 1.4e9).abs() < 1e-12, "max rule: {load}");

        snap.achieved_send_hz = 9.0;
        let load = estimate_fraction_max_load(&snap, cpu_only, &cluster);
        assert!((load - 0.1).abs() < 1e-12, "shortfall dominates: {load}");
    }

    #[test]
    fn default_start_is_tenth_of_ideal() {
        let cluster = ClusterSpec::default();
        assert_eq!(default_start_f(WorkloadPoint::new(1_000_000, 0), &cluster), 17);
        assert_eq!(default_start_f(WorkloadPoint::new(10_000_000, 1_000_000), &cluster), 1);
        assert_eq!(default_start_f(WorkloadPoint::new(100, 0), &cluster), 175_000);
    }

    fn search_cluster() -> ClusterSpec {
        ClusterSpec {
            bandwidth_bits_per_s: 1.4e9,
            total_worker_slots: 40,
            topology_factor: 1.0,
        }
    }

    fn run_mock_search(threshold: u64) -> MaxThroughputResult {
        let mut adapter = MockAdapter::with_threshold(threshold);
        let point = WorkloadPoint::new(100, 0);
        find_max_f(point, &mut adapter, &search_cluster(), &GovernorConfig::default()).unwrap()
    }

    #[test]
    fn finds_exact_thresholds() {
        for t in [1u64, 2, 5, 237, 1_000, 174_999, 175_000, 500_000, 999_983, 1_000_000] {
            let result = run_mock_search(t);
            assert_eq!(result.max_hz, t, "threshold {t}");
            assert!(result.iterations <= 80, "threshold {t}: {} judged", result.iterations);
            assert!(!result.timed_out);
            assert!(!result.non_monotone);
            assert!(!result.unsustainable);
        }
    }

    #[test]
    fn threshold_237_converges_quickly() {
        let result = run_mock_search(237);
        assert_eq!(result.max_hz, 237);
        assert!(result.windows_total <= 60, "{} windows", result.windows_total);
    }

    #[test]
    fn unsustainable_point_reports_zero() {
        let mut adapter = MockAdapter::with_threshold(0);
        let point = WorkloadPoint::new(100, 0);
        let result =
            find_max_f(point, &mut adapter, &search_cluster(), &GovernorConfig::default())
                .unwrap();
        assert_eq!(result.max_hz, 0);
        assert!(result.unsustainable);
    }

    #[test]
    fn warm_start_is_used() {
        struct Recorder {
            inner: MockAdapter,
            rates: Vec<u64>,
        }
        impl Adapter for Recorder {
            fn name(&self) -> &str {
                "recorder"
            }
            fn window_s(&self) -> f64 {
                0.0
            }
            fn set_point(&mut self, p: WorkloadPoint) -> Result<(), AdapterError> {
                self.inner.set_point(p)
            }
            fn set_rate(&mut self, f: u64) -> Result<(), AdapterError> {
                self.rates.push(f);
                self.inner.set_rate(f)
            }
            fn metrics(&mut self) -> Result<MetricsSnapshot, AdapterError> {
                self.inner.metrics()
            }
            fn reset(&mut self) -> Result<(), AdapterError> {
                self.inner.reset()
            }
        }

        let mut adapter = Recorder { inner: MockAdapter::with_threshold(500), rates: Vec::new() };
        let cfg = GovernorConfig { f_last_run: Some(450), ..GovernorConfig::default() };
        let result =
            find_max_f(WorkloadPoint::new(100, 0), &mut adapter, &search_cluster(), &cfg).unwrap();
        assert_eq!(adapter.rates[0], 450);
        assert_eq!(result.max_hz, 500);

        // rate changes only follow decisive verdicts: one initial set_rate,
        // then one per judged window except the final one (which finishes)
        assert_eq!(adapter.rates.len() as u64, result.iterations);
    }

    #[test]
    fn trace_replay_respects_bracket() {
        let result = run_mock_search(12_345);
        let mut max_ok: u64 = 0;
        let mut min_not: Option<u64> = None;
        for &(f, verdict) in &result.verdict_trace {
            if verdict == Verdict::WaitAndSee {
                continue;
            }
            // once bracketed, every judged rate lies strictly inside
            if let Some(mn) = min_not {
                assert!(f < mn, "judged {f} at or above known not-ok {mn}");
                assert!(f > max_ok, "judged {f} at or below known ok {max_ok}");
            }
            match verdict {
                Verdict::SustainedLoadOk => max_ok = max_ok.max(f),
                Verdict::TooMuchLoad => min_not = Some(min_not.map_or(f, |mn| mn.min(f))),
                Verdict::WaitAndSee => unreachable!(),
            }
            if let Some(mn) = min_not {
                assert!(max_ok < mn, "bracket violated: ok {max_ok} not-ok {mn}");
            }
        }
        assert_eq!(result.max_hz, max_ok);
    }

    #[test]
    fn stuck_adapter_times_out_with_best_bracket() {
        struct Undecided;
        impl Adapter for Undecided {
            fn name(&self) -> &str {
                "undecided"
            }
            fn window_s(&self) -> f64 {
                0.0
            }
            fn set_point(&mut self, _: WorkloadPoint) -> Result<(), AdapterError> {
                Ok(())
            }
            fn set_rate(&mut self, _: u64) -> Result<(), AdapterError> {
                Ok(())
            }
            fn metrics(&mut self) -> Result<MetricsSnapshot, AdapterError> {
                let mut snap = MetricsSnapshot::idle(1.0);
                snap.offered_hz = 100.0;
                snap.achieved_send_hz = 100.0;
                snap.processed_hz = 96.5; // forever in the undecided band
                Ok(snap)
            }
            fn reset(&mut self) -> Result<(), AdapterError> {
                Ok(())
            }
        }
        let cfg = GovernorConfig { max_total_windows: 20, ..GovernorConfig::default() };
        let result =
            find_max_f(WorkloadPoint::new(100, 0), &mut Undecided, &search_cluster(), &cfg)
                .unwrap();
        assert!(result.timed_out);
        assert_eq!(result.max_hz, 0);
        assert_eq!(result.windows_total, 20);
    }

    #[test]
    fn failed_calibration_aborts() {
        let cfg = GovernorConfig {
            calibration_median_overshoot: Some(0.03),
            ..GovernorConfig::default()
        };
        let mut adapter = MockAdapter::with_threshold(10);
        let err = find_max_f(WorkloadPoint::new(100, 0), &mut adapter, &search_cluster(), &cfg)
            .unwrap_err();
        assert!(matches!(err, GovernorError::CalibrationFailed(_)));
    }

    #[test]
    fn adapter_failure_surfaces_as_down() {
        struct Dead;
        impl Adapter for Dead {
            fn name(&self) -> &str {
                "dead"
            }
            fn window_s(&self) -> f64 {
                0.0
            }
            fn set_point(&mut self, _: WorkloadPoint) -> Result<(), AdapterError> {
                Ok(())
            }
            fn set_rate(&mut self, _: u64) -> Result<(), AdapterError> {
                Ok(())
            }
            fn metrics(&mut self) -> Result<MetricsSnapshot, AdapterError> {
                Err(AdapterError::Down("connection refused".into()))
            }
            fn reset(&mut self) -> Result<(), AdapterError> {
                Ok(())
            }
        }
        let err = find_max_f(
            WorkloadPoint::new(100, 0),
            &mut Dead,
            &search_cluster(),
            &GovernorConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, GovernorError::AdapterDown(_)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn search_is_exact_for_random_thresholds(t in 1u64..=1_000_000) {
            let result = run_mock_search(t);
            prop_assert_eq!(result.max_hz, t);
            prop_assert!(result.iterations <= 80);
        }
    }
}
