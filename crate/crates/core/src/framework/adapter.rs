//! Bridges a live cluster (source + collector) to the saturation search.

use std::time::{Duration, Instant};

use crate::governor::{Adapter, AdapterError};
use crate::telemetry::{Collector, MetricsSnapshot};
use crate::workload::WorkloadPoint;

use super::source::SourceHandle;

/// Drives the in-process framework as a system under test. Owns the source
/// handle; master and workers stay with the caller.
pub struct BuiltinAdapter {
    name: String,
    source: SourceHandle,
    collector: Collector,
    window_s: f64,
    /// Upper bound on waiting for the pipeline to empty during reset.
    pub quiesce_timeout: Duration,
    /// Grace period after quiescence so heartbeat-fed counters catch up.
    pub settle: Duration,
}

impl BuiltinAdapter {
    pub fn new(source: SourceHandle, collector: Collector, window_s: f64) -> BuiltinAdapter {
        assert!(window_s > 0.0, "live windows need positive length");
        BuiltinAdapter {
            name: "builtin".to_string(),
            source,
            collector,
            window_s,
            quiesce_timeout: Duration::from_secs(120),
            settle: Duration::from_millis(700),
        }
    }

    pub fn source(&self) -> &SourceHandle {
        &self.source
    }

    pub fn into_source(self) -> SourceHandle {
        self.source
    }
}

impl Adapter for BuiltinAdapter {
    fn name(&self) -> &str {
        &self.name
    }

    fn window_s(&self) -> f64 {
        self.window_s
    }

    fn set_point(&mut self, point: WorkloadPoint) -> Result<(), AdapterError> {
        self.source.set_point(point);
        Ok(())
    }

    fn set_rate(&mut self, f_hz: u64) -> Result<(), AdapterError> {
        self.source.set_rate(f_hz as f64);
        Ok(())
    }

    fn metrics(&mut self) -> Result<MetricsSnapshot, AdapterError> {
        Ok(self.collector.collect_snapshot(self.window_s))
    }

    /// Parks the source and waits until nothing is queued or in flight, so
    /// the next search starts from an empty pipeline.
    fn reset(&mut self) -> Result<(), AdapterError> {
        self.source.set_rate(0.0);
        let deadline = Instant::now() + self.quiesce_timeout;
        loop {
            match self.collector.master.scrape(self.collector.probe_timeout) {
                Ok(m) if m.queue_depth == 0 && m.in_flight == 0 => break,
                Ok(_) => {}
                Err(e) => return Err(AdapterError::Down(e.to_string())),
            }
            if Instant::now() >= deadline {
                return Err(AdapterError::Failed("pipeline did not quiesce".to_string()));
            }
            std::thread::sleep(Duration::from_millis(50));
        }
        std::thread::sleep(self.settle);
        Ok(())
    }
}
