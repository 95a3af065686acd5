//! Closed-form throughput ceilings for a cluster: what the link allows,
//! what the worker pool allows, and which of the two (or a measured
//! framework ceiling) binds at a given workload point.
//!
//! All functions here are pure; the sweep and reports recompute them freely.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::WorkloadPoint;

/// Hardware and topology description used by the bound model.
///
/// Defaults describe the reference cluster this suite was sized against:
/// a 1.4 Gbit/s source link and 5 worker hosts of 8 slots each. The
/// master runs no per-message work, so its cores are not counted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub bandwidth_bits_per_s: f64,
    pub total_worker_slots: u64,
    /// Multiplier on per-message traffic: 1 for direct P2P delivery, 2 when
    /// every message transits a relay that must receive and re-send it.
    pub topology_factor: f64,
}

impl Default for ClusterSpec {
    fn default() -> ClusterSpec {
        ClusterSpec {
            bandwidth_bits_per_s: 1.4e9,
            total_worker_slots: 40,
            topology_factor: 1.0,
        }
    }
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<(), BoundsError> {
        if !(self.bandwidth_bits_per_s > 0.0) || !self.bandwidth_bits_per_s.is_finite() {
            return Err(BoundsError::InvalidSpec("bandwidth_bits_per_s must be positive"));
        }
        if self.total_worker_slots == 0 {
            return Err(BoundsError::InvalidSpec("total_worker_slots must be positive"));
        }
        if !(self.topology_factor >= 1.0) || !self.topology_factor.is_finite() {
            return Err(BoundsError::InvalidSpec("topology_factor must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BoundsError {
    #[error("invalid cluster spec: {0}")]
    InvalidSpec(&'static str),
    #[error("ideal bound is unbounded; utilization undefined")]
    BoundUnbounded,
}

/// A throughput ceiling in Hz, or no ceiling at all (zero-cost resource).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Finite(f64),
    Unbounded,
}

impl Bound {
    /// Unbounded maps to +inf so bounds compare and combine naturally.
    pub fn as_f64(self) -> f64 {
        match self {
            Bound::Finite(v) => v,
            Bound::Unbounded => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Bound::Finite(_))
    }

    pub fn min(self, other: Bound) -> Bound {
        match (self, other) {
            (Bound::Unbounded, b) => b,
            (a, Bound::Unbounded) => a,
            (Bound::Finite(a), Bound::Finite(b)) => Bound::Finite(a.min(b)),
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Finite(v) => write!(f, "{v}"),
            Bound::Unbounded => write!(f, "inf"),
        }
    }
}

impl FromStr for Bound {
    type Err = std::num::ParseFloatError;

    fn from_str(s: &str) -> Result<Bound, Self::Err> {
        let v: f64 = s.parse()?;
        if v.is_infinite() {
            Ok(Bound::Unbounded)
        } else {
            Ok(Bound::Finite(v))
        }
    }
}

/// Which resource caps throughput at a point.
///
/// A: the worker pool is the strict minimum (CPU-bound).
/// B: the link is the minimum, ties included (network-bound).
/// C: a measured framework ceiling sits below both resource bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RegimeLabel {
    A,
    B,
    C,
}

impl fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegimeLabel::A => write!(f, "A"),
            RegimeLabel::B => write!(f, "B"),
            RegimeLabel::C => write!(f, "C"),
        }
    }
}

impl FromStr for RegimeLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<RegimeLabel, String> {
        match s {
            "A" => Ok(RegimeLabel::A),
            "B" => Ok(RegimeLabel::B),
            "C" => Ok(RegimeLabel::C),
            other => Err(format!("unknown regime label {other:?}")),
        }
    }
}

/// Rate ceiling imposed by the link: bandwidth / (message bits × topology
/// factor). Only a zero-size message escapes the link entirely.
pub fn network_bound_hz(point: WorkloadPoint, spec: &ClusterSpec) -> Bound {
    if point.message_size_bytes == 0 {
        return Bound::Unbounded;
    }
    let bits_per_msg = point.message_size_bytes as f64 * 8.0 * spec.topology_factor;
    Bound::Finite(spec.bandwidth_bits_per_s / bits_per_msg)
}

/// Rate ceiling imposed by compute: slots / per-message CPU seconds. A
/// zero-cost message has no compute ceiling.
pub fn cpu_bound_hz(point: WorkloadPoint, spec: &ClusterSpec) -> Bound {
    if point.cpu_cost_us == 0 {
        return Bound::Unbounded;
    }
    Bound::Finite(spec.total_worker_slots as f64 * 1e6 / point.cpu_cost_us as f64)
}

/// The tighter of the two resource ceilings.
pub fn ideal_bound_hz(point: WorkloadPoint, spec: &ClusterSpec) -> Bound {
    network_bound_hz(point, spec).min(cpu_bound_hz(point, spec))
}

/// Labels the point. A measured framework ceiling below the ideal bound
/// wins over both resource labels; without one, A when the CPU bound is
/// strictly smaller than the network bound, B otherwise (ties are B).
pub fn classify_regime(
    point: WorkloadPoint,
    spec: &ClusterSpec,
    framework_ceiling_hz: Option<f64>,
) -> RegimeLabel {
    let net = network_bound_hz(point, spec).as_f64();
    let cpu = cpu_bound_hz(point, spec).as_f64();
    let ideal = net.min(cpu);
    if let Some(ceiling) = framework_ceiling_hz {
        if ceiling < ideal {
            return RegimeLabel::C;
        }
    }
    if cpu < net {
        RegimeLabel::A
    } else {
        RegimeLabel::B
    }
}

/// Threshold above which a utilization reading is treated as a
/// misconfigured spec rather than measurement noise.
pub const UTILIZATION_SANITY_LIMIT: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Utilization {
    pub fraction: f64,
    /// Set when the measured rate exceeds the ideal bound by more than the
    /// sanity limit: the declared cluster (bandwidth, slots) does not
    /// describe the hardware that produced the measurement.
    pub flagged: bool,
}

/// Measured rate as a fraction of the ideal bound.
pub fn utilization(
    measured_hz: f64,
    point: WorkloadPoint,
    spec: &ClusterSpec,
) -> Result<Utilization, BoundsError> {
    match ideal_bound_hz(point, spec) {
        Bound::Unbounded => Err(BoundsError::BoundUnbounded),
        Bound::Finite(ideal) => {
            let fraction = measured_hz / ideal;
            Ok(Utilization { fraction, flagged: fraction > UTILIZATION_SANITY_LIMIT })
        }
    }
}

/// Scales each adapter's measured rate by the best one, so the winner reads
/// 1.0 and the rest read as fractions of it.
pub fn normalize_across(results: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let best = results.values().fold(0.0f64, |a, &b| a.max(b));
    results
        .iter()
        .map(|(k, &v)| (k.clone(), if best > 0.0 { v / best } else { 0.0 }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::default_grid;
    use proptest::prelude::*;

    const TOL: f64 = 1e-9;

    fn spec(bw: f64, slots: u64, factor: f64) -> ClusterSpec {
        ClusterSpec { bandwidth_bits_per_s: bw, total_worker_slots: slots, topology_factor: factor }
    }

    fn assert_close(actual: f64, expected: f64) {
        assert!(
            (actual - expected).abs() <= TOL,
            "got {actual}, expected {expected} within {TOL}"
        );
    }

    #[test]
    fn network_bound_pinned_values() {
        let s = spec(1.4e9, 40, 1.0);
        assert_close(network_bound_hz(WorkloadPoint::new(10_000_000, 0), &s).as_f64(), 17.5);
        assert_close(network_bound_hz(WorkloadPoint::new(1_000_000, 0), &s).as_f64(), 175.0);
        assert_close(network_bound_hz(WorkloadPoint::new(100, 0), &s).as_f64(), 1.75e6);
        let relay = spec(1.4e9, 40, 2.0);
        assert_close(network_bound_hz(WorkloadPoint::new(10_000_000, 0), &relay).as_f64(), 8.75);
    }

    #[test]
    fn cpu_bound_pinned_values() {
        let s = spec(1.4e9, 40, 1.0);
        assert_close(cpu_bound_hz(WorkloadPoint::new(100, 1_000_000), &s).as_f64(), 40.0);
        assert_close(cpu_bound_hz(WorkloadPoint::new(100, 100_000), &s).as_f64(), 400.0);
        assert_eq!(cpu_bound_hz(WorkloadPoint::new(100, 0), &s), Bound::Unbounded);
        let four = spec(1e9, 4, 1.0);
        assert_close(cpu_bound_hz(WorkloadPoint::new(1_000, 50_000), &four).as_f64(), 80.0);
    }

    #[test]
    fn ideal_bound_takes_the_minimum() {
        let s = spec(1.4e9, 40, 1.0);
        assert_close(ideal_bound_hz(WorkloadPoint::new(10_000_000, 1_000_000), &s).as_f64(), 17.5);
        assert_close(ideal_bound_hz(WorkloadPoint::new(100, 1_000_000), &s).as_f64(), 40.0);
        assert_close(ideal_bound_hz(WorkloadPoint::new(100, 0), &s).as_f64(), 1.75e6);
    }

    #[test]
    fn regime_classification_pinned() {
        let s = spec(1.4e9, 40, 1.0);
        assert_eq!(classify_regime(WorkloadPoint::new(100, 1_000_000), &s, None), RegimeLabel::A);
        assert_eq!(classify_regime(WorkloadPoint::new(10_000_000, 0), &s, None), RegimeLabel::B);
        assert_eq!(
            classify_regime(WorkloadPoint::new(100, 0), &s, Some(625.0)),
            RegimeLabel::C
        );
    }

    #[test]
    fn regime_ties_classify_as_b() {
        // net = 8e6/(100×8) = 1e4; cpu = 10×1e6/1000 = 1e4
        let s = spec(8e6, 10, 1.0);
        let p = WorkloadPoint::new(100, 1_000);
        assert_close(network_bound_hz(p, &s).as_f64(), 1e4);
        assert_close(cpu_bound_hz(p, &s).as_f64(), 1e4);
        assert_eq!(classify_regime(p, &s, None), RegimeLabel::B);
    }

    #[test]
    fn measured_ceiling_only_binds_below_ideal() {
        let s = spec(1.4e9, 40, 1.0);
        let p = WorkloadPoint::new(100, 0); // ideal 1.75 MHz
        assert_eq!(classify_regime(p, &s, Some(2e6)), RegimeLabel::B);
        assert_eq!(classify_regime(p, &s, Some(1.0e6)), RegimeLabel::C);
    }

    #[test]
    fn utilization_pinned_values() {
        let s = spec(1.4e9, 40, 1.0);
        let p = WorkloadPoint::new(10_000_000, 0); // bound 17.5
        let u = utilization(15.0, p, &s).unwrap();
        assert_close(u.fraction, 15.0 / 17.5);
        assert!(!u.flagged);
        let u = utilization(17.5, p, &s).unwrap();
        assert_close(u.fraction, 1.0);
        assert!(!u.flagged);
        let u = utilization(20.0, p, &s).unwrap();
        assert!(u.fraction > 1.14 && u.fraction < 1.15);
        assert!(u.flagged);
    }

    #[test]
    fn utilization_needs_a_finite_bound() {
        let s = spec(1.4e9, 40, 1.0);
        let err = utilization(10.0, WorkloadPoint::new(0, 0), &s).unwrap_err();
        assert_eq!(err, BoundsError::BoundUnbounded);
    }

    #[test]
    fn normalize_pinned_values() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), 625.0);
        m.insert("b".to_string(), 625.0);
        let n = normalize_across(&m);
        assert_close(n["a"], 1.0);
        assert_close(n["b"], 1.0);

        let mut m = BTreeMap::new();
        m.insert("a".to_string(), 100.0);
        m.insert("b".to_string(), 50.0);
        let n = normalize_across(&m);
        assert_close(n["a"], 1.0);
        assert_close(n["b"], 0.5);

        let mut m = BTreeMap::new();
        m.insert("only".to_string(), 3.0);
        assert_close(normalize_across(&m)["only"], 1.0);
    }

    #[test]
    fn spec_validation() {
        assert!(ClusterSpec::default().validate().is_ok());
        assert!(spec(0.0, 40, 1.0).validate().is_err());
        assert!(spec(1e9, 0, 1.0).validate().is_err());
        assert!(spec(1e9, 40, 0.5).validate().is_err());
        assert!(spec(1e9, 40, f64::NAN).validate().is_err());
    }

    #[test]
    fn regime_argmin_consistency_over_default_grid() {
        let s = ClusterSpec::default();
        let (sizes, cpus) = default_grid();
        for &size in &sizes {
            for &cpu in &cpus {
                let p = WorkloadPoint::new(size, cpu);
                let net = network_bound_hz(p, &s).as_f64();
                let cpu_b = cpu_bound_hz(p, &s).as_f64();
                let label = classify_regime(p, &s, None);
                assert_eq!(label == RegimeLabel::A, cpu_b < net, "point {p:?}");
            }
        }
    }

    #[test]
    fn ideal_bound_monotone_over_default_grid() {
        let s = ClusterSpec::default();
        let (sizes, cpus) = default_grid();
        for w in sizes.windows(2) {
            for &cpu in &cpus {
                let lo = ideal_bound_hz(WorkloadPoint::new(w[0], cpu), &s).as_f64();
                let hi = ideal_bound_hz(WorkloadPoint::new(w[1], cpu), &s).as_f64();
                assert!(hi <= lo);
            }
        }
        for &size in &sizes {
            for w in cpus.windows(2) {
                let lo = ideal_bound_hz(WorkloadPoint::new(size, w[0]), &s).as_f64();
                let hi = ideal_bound_hz(WorkloadPoint::new(size, w[1]), &s).as_f64();
                assert!(hi <= lo);
            }
        }
    }

    #[test]
    fn bound_display_and_parse() {
        assert_eq!(Bound::Finite(17.5).to_string(), "17.5");
        assert_eq!(Bound::Unbounded.to_string(), "inf");
        assert_eq!("17.5".parse::<Bound>().unwrap(), Bound::Finite(17.5));
        assert_eq!("inf".parse::<Bound>().unwrap(), Bound::Unbounded);
    }

    proptest! {
        #[test]
        fn scale_laws(
            size in 1u64..100_000_000,
            cpu in 1u64..10_000_000,
            bw in 1e3f64..1e12,
            slots in 1u64..10_000,
        ) {
            let s = spec(bw, slots, 1.0);
            let p = WorkloadPoint::new(size, cpu);
            let double_size = WorkloadPoint::new(size * 2, cpu);
            let double_cpu = WorkloadPoint::new(size, cpu * 2);

            let net = network_bound_hz(p, &s).as_f64();
            prop_assert!((network_bound_hz(double_size, &s).as_f64() - net / 2.0).abs() <= net * 1e-12);

            let cpu_b = cpu_bound_hz(p, &s).as_f64();
            prop_assert!((cpu_bound_hz(double_cpu, &s).as_f64() - cpu_b / 2.0).abs() <= cpu_b * 1e-12);

            let twice_bw = spec(bw * 2.0, slots, 1.0);
            prop_assert!((network_bound_hz(p, &twice_bw).as_f64() - net * 2.0).abs() <= net * 1e-9);

            let twice_slots = spec(bw, slots * 2, 1.0);
            prop_assert!((cpu_bound_hz(p, &twice_slots).as_f64() - cpu_b * 2.0).abs() <= cpu_b * 1e-9);
        }

        #[test]
        fn factor_two_halves_network_bound(size in 1u64..100_000_000, bw in 1e3f64..1e12) {
            let p = WorkloadPoint::new(size, 0);
            let direct = network_bound_hz(p, &spec(bw, 1, 1.0)).as_f64();
            let relay = network_bound_hz(p, &spec(bw, 1, 2.0)).as_f64();
            prop_assert!((relay - direct / 2.0).abs() <= direct * 1e-12);
        }
    }
}
