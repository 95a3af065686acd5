//! Sweep orchestration: run the saturation search over a (size, cpu) grid,
//! persist every cell to CSV as soon as it finishes, and resume cleanly.
//!
//! Cells run one at a time in size-major ascending order, and each search
//! starts from the previous cell's result; neighbouring cells have nearby
//! maxima, so the warm start saves most of the ramp.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{
    classify_regime, cpu_bound_hz, ideal_bound_hz, network_bound_hz, utilization, Bound,
    ClusterSpec, RegimeLabel,
};
use crate::governor::{find_max_f, Adapter, GovernorConfig, GovernorError};
use crate::workload::{default_grid, WorkloadPoint};

/// Column order is part of the file format; loaders reject anything else.
pub const CSV_HEADER: [&str; 11] = [
    "adapter",
    "message_size_bytes",
    "cpu_cost_us",
    "max_hz",
    "bound_network_hz",
    "bound_cpu_hz",
    "regime",
    "utilization",
    "iterations",
    "wall_time_s",
    "timestamp",
];

/// A measurement at or above this fraction of the ideal bound counts as
/// having reached the resource bound; anything lower is treated as a
/// framework ceiling and the cell classifies as regime C.
pub const FRAMEWORK_CEILING_FRACTION: f64 = 0.85;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepGrid {
    pub adapter: String,
    pub sizes_bytes: Vec<u64>,
    pub cpu_costs_us: Vec<u64>,
    #[serde(default)]
    pub cluster: ClusterSpec,
}

impl SweepGrid {
    /// The built-in grid over the default cluster description.
    pub fn default_for(adapter: &str) -> SweepGrid {
        let (sizes_bytes, cpu_costs_us) = default_grid();
        SweepGrid {
            adapter: adapter.to_string(),
            sizes_bytes,
            cpu_costs_us,
            cluster: ClusterSpec::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<SweepGrid, SweepError> {
        let grid: SweepGrid =
            toml::from_str(text).map_err(|e| SweepError::InvalidGrid(e.to_string()))?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn from_toml_file(path: &Path) -> Result<SweepGrid, SweepError> {
        SweepGrid::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if self.sizes_bytes.is_empty() || self.cpu_costs_us.is_empty() {
            return Err(SweepError::InvalidGrid("axes must be non-empty".into()));
        }
        if self.sizes_bytes[0] == 0 {
            return Err(SweepError::InvalidGrid("message sizes must be positive".into()));
        }
        if !self.sizes_bytes.windows(2).all(|w| w[0] < w[1]) {
            return Err(SweepError::InvalidGrid("sizes must be strictly increasing".into()));
        }
        if !self.cpu_costs_us.windows(2).all(|w| w[0] < w[1]) {
            return Err(SweepError::InvalidGrid("cpu costs must be strictly increasing".into()));
        }
        self.cluster
            .validate()
            .map_err(|e| SweepError::InvalidGrid(e.to_string()))
    }

    /// Cell order: size-major, both axes ascending.
    pub fn cells(&self) -> Vec<WorkloadPoint> {
        let mut out = Vec::with_capacity(self.sizes_bytes.len() * self.cpu_costs_us.len());
        for &size in &self.sizes_bytes {
            for &cpu in &self.cpu_costs_us {
                out.push(WorkloadPoint::new(size, cpu));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub adapter: String,
    pub point: WorkloadPoint,
    pub max_hz: u64,
    pub bound_network_hz: Bound,
    pub bound_cpu_hz: Bound,
    pub regime: RegimeLabel,
    pub utilization: f64,
    pub iterations: u64,
    pub wall_time_s: f64,
    pub timestamp: String,
}

impl CellResult {
    fn record(&self) -> [String; 11] {
        [
            self.adapter.clone(),
            self.point.message_size_bytes.to_string(),
            self.point.cpu_cost_us.to_string(),
            self.max_hz.to_string(),
            self.bound_network_hz.to_string(),
            self.bound_cpu_hz.to_string(),
            self.regime.to_string(),
            self.utilization.to_string(),
            self.iterations.to_string(),
            self.wall_time_s.to_string(),
            self.timestamp.clone(),
        ]
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("unrecognized results schema: {0}")]
    SchemaMismatch(String),
    #[error("adapter lost: {0}")]
    AdapterLost(String),
    #[error("sweep cancelled after {completed} new cells")]
    Cancelled { completed: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Extra measurements per cell; every run is stored as its own row.
    pub repeats: u32,
    pub governor: GovernorConfig,
    /// Checked between cells; setting it stops the sweep at the next cell
    /// boundary with everything so far already flushed.
    pub cancel: Option<Arc<AtomicBool>>,
}

impl Default for SweepOptions {
    fn default() -> SweepOptions {
        SweepOptions { repeats: 1, governor: GovernorConfig::default(), cancel: None }
    }
}

/// Builds the persisted row for one finished cell.
fn cell_result(
    adapter_name: &str,
    point: WorkloadPoint,
    max_hz: u64,
    iterations: u64,
    wall_time_s: f64,
    cluster: &ClusterSpec,
) -> CellResult {
    let ideal = ideal_bound_hz(point, cluster).as_f64();
    let ceiling = if (max_hz as f64) < FRAMEWORK_CEILING_FRACTION * ideal {
        Some(max_hz as f64)
    } else {
        None
    };
    let util = utilization(max_hz as f64, point, cluster)
        .map(|u| u.fraction)
        .unwrap_or(0.0);
    CellResult {
        adapter: adapter_name.to_string(),
        point,
        max_hz,
        bound_network_hz: network_bound_hz(point, cluster),
        bound_cpu_hz: cpu_bound_hz(point, cluster),
        regime: classify_regime(point, cluster, ceiling),
        utilization: util,
        iterations,
        wall_time_s,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
    }
}

/// Runs (or finishes) the sweep, appending each new cell to `out_csv` as it
/// completes. Rows already present for this adapter are trusted and
/// skipped, and the warm-start chain threads through them as if they had
/// just run, so a resumed sweep retraces the uninterrupted one.
pub fn run_sweep(
    grid: &SweepGrid,
    adapter: &mut dyn Adapter,
    out_csv: &Path,
    opts: &SweepOptions,
) -> Result<Vec<CellResult>, SweepError> {
    grid.validate()?;
    let repeats = opts.repeats.max(1);

    let existing = if out_csv.exists() && std::fs::metadata(out_csv)?.len() > 0 {
        load_csv(out_csv)?
    } else {
        Vec::new()
    };
    let mut prior: HashMap<(u64, u64), Vec<CellResult>> = HashMap::new();
    for row in existing.iter().filter(|r| r.adapter == adapter.name()) {
        prior
            .entry((row.point.message_size_bytes, row.point.cpu_cost_us))
            .or_default()
            .push(row.clone());
    }

    let file = OpenOptions::new().create(true).append(true).open(out_csv)?;
    let need_header = file.metadata()?.len() == 0;
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if need_header {
        writer.write_record(CSV_HEADER)?;
        writer.flush()?;
    }

    let mut out = Vec::new();
    let mut f_last: Option<u64> = None;
    let mut new_cells = 0usize;

    for point in grid.cells() {
        let key = (point.message_size_bytes, point.cpu_cost_us);
        let done = prior.remove(&key).unwrap_or_default();
        let mut have = done.len() as u32;
        for row in done {
            f_last = Some(row.max_hz);
            out.push(row);
        }
        while have < repeats {
            if let Some(cancel) = &opts.cancel {
                if cancel.load(Ordering::SeqCst) {
                    writer.flush()?;
                    return Err(SweepError::Cancelled { completed: new_cells });
                }
            }
            let mut cfg = opts.governor.clone();
            cfg.f_last_run = f_last;
            let res = match find_max_f(point, adapter, &grid.cluster, &cfg) {
                Ok(res) => res,
                Err(GovernorError::AdapterDown(e)) => {
                    writer.flush()?;
                    return Err(SweepError::AdapterLost(e));
                }
                Err(GovernorError::CalibrationFailed(o)) => {
                    writer.flush()?;
                    return Err(SweepError::AdapterLost(format!(
                        "burner calibration overshoot {o}"
                    )));
                }
            };
            let row = cell_result(
                adapter.name(),
                point,
                res.max_hz,
                res.iterations,
                res.wall_time_s,
                &grid.cluster,
            );
            writer.write_record(row.record())?;
            writer.flush()?;
            f_last = Some(row.max_hz);
            out.push(row);
            have += 1;
            new_cells += 1;
        }
    }
    writer.flush()?;
    Ok(out)
}

/// Writes the full result list to `path`, replacing whatever was there.
pub fn persist_csv(results: &[CellResult], path: &Path) -> Result<(), SweepError> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    writer.write_record(CSV_HEADER)?;
    for row in results {
        writer.write_record(row.record())?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<Vec<CellResult>, SweepError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(SweepError::SchemaMismatch(format!(
            "expected columns {:?}, found {:?}",
            CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |i: usize| -> &str { record.get(i).unwrap_or("") };
        let row_err = |field: &str, value: &str| {
            SweepError::SchemaMismatch(format!("row {}: bad {field} value {value:?}", idx + 2))
        };
        out.push(CellResult {
            adapter: parse(0).to_string(),
            point: WorkloadPoint::new(
                parse(1).parse().map_err(|_| row_err("message_size_bytes", parse(1)))?,
                parse(2).parse().map_err(|_| row_err("cpu_cost_us", parse(2)))?,
            ),
            max_hz: parse(3).parse().map_err(|_| row_err("max_hz", parse(3)))?,
            bound_network_hz: parse(4)
                .parse()
                .map_err(|_| row_err("bound_network_hz", parse(4)))?,
            bound_cpu_hz: parse(5).parse().map_err(|_| row_err("bound_cpu_hz", parse(5)))?,
            regime: parse(6).parse().map_err(|_| row_err("regime", parse(6)))?,
            utilization: parse(7).parse().map_err(|_| row_err("utilization", parse(7)))?,
            iterations: parse(8).parse().map_err(|_| row_err("iterations", parse(8)))?,
            wall_time_s: parse(9).parse().map_err(|_| row_err("wall_time_s", parse(9)))?,
            timestamp: parse(10).to_string(),
        });
    }
    Ok(out)
}

/// CSV text with the timestamp column blanked, for byte comparisons that
/// must ignore wall-clock values.
pub fn strip_timestamps(csv_text: &str) -> String {
    let mut out = String::with_capacity(csv_text.len());
    for line in csv_text.lines() {
        match line.rfind(',') {
            Some(pos) => {
                out.push_str(&line[..pos + 1]);
            }
            None => out.push_str(line),
        }
        out.push('\n');
    }
    out
}
