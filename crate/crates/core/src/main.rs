//! `bench`: one binary for every role in the benchmark suite.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use streambench::bounds::{
    classify_regime, cpu_bound_hz, ideal_bound_hz, network_bound_hz, ClusterSpec,
};
use streambench::framework::{
    start_master, start_source, start_worker, BuiltinAdapter, MasterConfig, SourceConfig,
    StreamMode, WorkerConfig,
};
use streambench::governor::{find_max_f, Adapter, GovernorConfig, MockAdapter};
use streambench::protocol::ShaperConfig;
use streambench::report::{emit_bound_comparison, emit_regime_map, format_bytes, format_cpu_cost};
use streambench::sweep::{load_csv, run_sweep, SweepGrid, SweepOptions};
use streambench::telemetry::{Collector, EventLog, StatusProbe};
use streambench::workload::{calibrate_burner, preset, preset_names, WorkloadPoint};

#[derive(Parser)]
#[command(
    name = "bench",
    version,
    about = "Stream-processing benchmark: framework roles, saturation search, sweeps, reports"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the master: worker registry, routing, and the fallback queue.
    Master(MasterArgs),
    /// Run a worker that processes messages in slot threads.
    Worker(WorkerArgs),
    /// Stream a workload against a running master and report what was
    /// achieved.
    Source(SourceArgs),
    /// Search for the maximum sustainable rate at one workload point.
    Govern(GovernArgs),
    /// Run the saturation search over a whole (size, cpu) grid.
    Sweep(SweepArgs),
    /// Render maps and bound comparisons from results CSV files.
    Report(ReportArgs),
    /// Print the analytic rate bounds for a grid.
    Bounds(BoundsArgs),
    /// Check the CPU burner against the host clock.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct MasterArgs {
    #[arg(long, default_value = "127.0.0.1:7300")]
    listen: SocketAddr,
    #[arg(long, default_value = "127.0.0.1:7301")]
    status_listen: SocketAddr,
    /// Bound the fallback queue; pushes block at the limit. Unbounded when
    /// omitted.
    #[arg(long)]
    queue_capacity: Option<usize>,
    #[arg(long)]
    event_log: Option<PathBuf>,
}

#[derive(Args)]
struct WorkerArgs {
    /// Master control address, e.g. 127.0.0.1:7300.
    #[arg(long)]
    master: String,
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: SocketAddr,
    #[arg(long, default_value = "127.0.0.1:0")]
    status_listen: SocketAddr,
    #[arg(long, default_value_t = 1)]
    slots: usize,
    /// Niceness for slot threads; raise it so burns cannot starve control
    /// traffic on small hosts.
    #[arg(long, default_value_t = 0)]
    nice: i32,
    #[arg(long)]
    event_log: Option<PathBuf>,
}

#[derive(Args)]
struct WorkloadArgs {
    /// Message payload size in bytes.
    #[arg(long, default_value_t = 100)]
    size: u64,
    /// Per-message CPU cost in microseconds.
    #[arg(long, default_value_t = 0)]
    cpu_us: u64,
    /// Named workload instead of explicit size/cpu.
    #[arg(long)]
    preset: Option<String>,
}

impl WorkloadArgs {
    fn point(&self) -> Result<WorkloadPoint> {
        match &self.preset {
            None => Ok(WorkloadPoint::new(self.size, self.cpu_us)),
            Some(name) => preset(name)
                .map(|p| p.point)
                .ok_or_else(|| anyhow!("unknown preset {name:?}; known: {}", preset_names().join(", "))),
        }
    }
}

#[derive(Args)]
struct SourceArgs {
    #[arg(long)]
    master: String,
    #[command(flatten)]
    workload: WorkloadArgs,
    /// Offered rate in messages per second.
    #[arg(long)]
    rate: f64,
    /// Emit exactly this many messages.
    #[arg(long, conflicts_with = "duration")]
    count: Option<u64>,
    /// Stream for this many seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Shape outgoing data to this many bits per second.
    #[arg(long)]
    shape_bits_per_s: Option<f64>,
    #[arg(long)]
    status_listen: Option<SocketAddr>,
    /// How long to wait for the pipeline to account for every message.
    #[arg(long, default_value_t = 120.0)]
    drain_timeout_s: f64,
    /// Stop after the stream without draining.
    #[arg(long)]
    no_drain: bool,
    #[arg(long)]
    event_log: Option<PathBuf>,
}

#[derive(Args)]
struct GovernArgs {
    /// Pretend adapter with this hidden threshold instead of a live
    /// cluster; useful for demos and CI.
    #[arg(long)]
    mock_threshold: Option<u64>,
    /// Master control address (live mode).
    #[arg(long)]
    master: Option<String>,
    /// Master status address (live mode), e.g. 127.0.0.1:7301.
    #[arg(long)]
    master_status: Option<String>,
    #[command(flatten)]
    workload: WorkloadArgs,
    #[arg(long, default_value_t = 10.0)]
    window_s: f64,
    #[arg(long)]
    shape_bits_per_s: Option<f64>,
    /// TOML file with a [cluster] table (bandwidth, slots, topology).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Start frequency override.
    #[arg(long)]
    start_f: Option<u64>,
    #[arg(long, default_value_t = 900.0)]
    time_cap_s: f64,
    /// Run the burner calibration gate before searching.
    #[arg(long)]
    calibrate: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Grid TOML (adapter, sizes_bytes, cpu_costs_us, [cluster]); the
    /// built-in grid when omitted.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// "mock" or "builtin"; defaults to the grid's adapter field.
    #[arg(long)]
    adapter: Option<String>,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    repeats: u32,
    /// Hidden threshold as a fraction of the ideal bound (mock adapter).
    #[arg(long, default_value_t = 0.9)]
    mock_fraction: f64,
    #[arg(long)]
    master: Option<String>,
    #[arg(long)]
    master_status: Option<String>,
    #[arg(long, default_value_t = 10.0)]
    window_s: f64,
    #[arg(long)]
    shape_bits_per_s: Option<f64>,
    #[arg(long, default_value_t = 900.0)]
    time_cap_s: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// Results CSVs (one per adapter) for the best-per-cell map.
    #[arg(long, num_args = 1.., conflicts_with = "compare")]
    map: Vec<PathBuf>,
    /// Results CSV for a measured-versus-bounds comparison.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Cluster spec TOML for --compare validation.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output SVG path; companion artifacts take derived names.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BoundsArgs {
    /// Grid TOML; the built-in grid when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, default_value_t = 9)]
    samples: usize,
}

fn open_event_log(path: &Option<PathBuf>) -> Result<Option<Arc<EventLog>>> {
    match path {
        None => Ok(None),
        Some(p) => Ok(Some(Arc::new(
            EventLog::open(p).with_context(|| format!("opening event log {}", p.display()))?,
        ))),
    }
}

fn load_grid(path: &Option<PathBuf>) -> Result<SweepGrid> {
    match path {
        None => Ok(SweepGrid::default_for("builtin")),
        Some(p) => {
            SweepGrid::from_toml_file(p).with_context(|| format!("loading grid {}", p.display()))
        }
    }
}

fn load_cluster(path: &Option<PathBuf>) -> Result<ClusterSpec> {
    let Some(p) = path else {
        return Ok(ClusterSpec::default());
    };
    let text = std::fs::read_to_string(p)?;
    let value: toml::Value = toml::from_str(&text)?;
    let cluster = match value.get("cluster") {
        Some(t) => t.clone().try_into()?,
        None => value.try_into()?,
    };
    Ok(cluster)
}

fn run_master(args: MasterArgs) -> Result<()> {
    let handle = start_master(MasterConfig {
        listen: args.listen,
        status_listen: Some(args.status_listen),
        queue_capacity: args.queue_capacity,
        event_log: open_event_log(&args.event_log)?,
        ..MasterConfig::default()
    })?;
    println!("master listening on {}", handle.addr);
    if let Some(status) = handle.status_addr {
        println!("status endpoint on http://{status}/metrics");
    }
    loop {
        std::thread::sleep(Duration::from_secs(3600));
    }
}

fn run_worker(args: WorkerArgs) -> Result<()> {
    let handle = start_worker(WorkerConfig {
        master: args.master,
        listen: args.listen,
        status_listen: Some(args.status_listen),
        slots: args.slots,
        slot_thread_nice: args.nice,
        event_log: open_event_log(&args.event_log)?,
        ..WorkerConfig::default()
    })?;
    println!(
        "worker {} serving {} slots on {}",
        handle.worker_id, args.slots, handle.p2p_addr
    );
    if let Some(status) = handle.status_addr {
        println!("status endpoint on http://{status}/metrics");
    }
    loop {
        std::thread::sleep(Duration::from_secs(3600));
    }
}

fn run_source(args: SourceArgs) -> Result<()> {
    let mode = match (args.count, args.duration) {
        (Some(n), None) => StreamMode::Count(n),
        (None, Some(s)) => StreamMode::Duration(s),
        (None, None) => bail!("one of --count or --duration is required"),
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    };
    let source = start_source(SourceConfig {
        master: args.master,
        point: args.workload.point()?,
        rate_hz: 0.0,
        shape: args.shape_bits_per_s.map(ShaperConfig::new),
        status_listen: args.status_listen,
        event_log: open_event_log(&args.event_log)?,
    })?;
    let report = source.run_stream(args.rate, mode);
    println!("{}", serde_json::to_string_pretty(&report)?);
    if !args.no_drain {
        let reconcile = source.drain(Duration::from_secs_f64(args.drain_timeout_s))?;
        println!("{}", serde_json::to_string_pretty(&reconcile)?);
    }
    source.stop();
    Ok(())
}

fn live_adapter(
    master: &Option<String>,
    master_status: &Option<String>,
    shape_bits_per_s: Option<f64>,
    window_s: f64,
    point: WorkloadPoint,
) -> Result<BuiltinAdapter> {
    let (Some(master), Some(status)) = (master, master_status) else {
        bail!("live mode needs --master and --master-status");
    };
    let source = start_source(SourceConfig {
        master: master.clone(),
        point,
        rate_hz: 0.0,
        shape: shape_bits_per_s.map(ShaperConfig::new),
        status_listen: None,
        event_log: None,
    })?;
    let collector =
        Collector::new(StatusProbe::Http(status.clone())).with_source(source.probe());
    Ok(BuiltinAdapter::new(source, collector, window_s))
}

fn run_govern(args: GovernArgs) -> Result<()> {
    let point = args.workload.point()?;
    let cluster = load_cluster(&args.spec)?;
    let mut cfg = GovernorConfig {
        start_f: args.start_f,
        time_cap_s: args.time_cap_s,
        ..GovernorConfig::default()
    };
    if args.calibrate {
        let calibration = calibrate_burner(9);
        cfg.calibration_median_overshoot = Some(calibration.median_overshoot_frac);
    }

    let result = match args.mock_threshold {
        Some(t) => {
            let mut adapter = MockAdapter::with_threshold(t);
            find_max_f(point, &mut adapter, &cluster, &cfg)?
        }
        None => {
            let mut adapter = live_adapter(
                &args.master,
                &args.master_status,
                args.shape_bits_per_s,
                args.window_s,
                point,
            )?;
            let result = find_max_f(point, &mut adapter, &cluster, &cfg)?;
            let _ = adapter.into_source().drain(Duration::from_secs(120));
            result
        }
    };
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn run_sweep_cmd(args: SweepArgs) -> Result<()> {
    let grid = load_grid(&args.grid)?;
    let adapter_name = args.adapter.clone().unwrap_or_else(|| grid.adapter.clone());
    let opts = SweepOptions {
        repeats: args.repeats,
        governor: GovernorConfig { time_cap_s: args.time_cap_s, ..GovernorConfig::default() },
        cancel: None,
    };
    let mut adapter: Box<dyn Adapter> = match adapter_name.as_str() {
        "mock" => Box::new(MockAdapter::from_bounds(grid.cluster, args.mock_fraction)),
        "builtin" => Box::new(live_adapter(
            &args.master,
            &args.master_status,
            args.shape_bits_per_s,
            args.window_s,
            WorkloadPoint::new(grid.sizes_bytes[0], grid.cpu_costs_us[0]),
        )?),
        other => bail!("unknown adapter {other:?} (expected mock or builtin)"),
    };
    let rows = run_sweep(&grid, adapter.as_mut(), &args.out, &opts)?;
    println!(
        "sweep complete: {} rows over {} cells -> {}",
        rows.len(),
        grid.cells().len(),
        args.out.display()
    );
    Ok(())
}

fn with_extension_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    path.with_file_name(format!("{stem}{suffix}"))
}

fn run_report(args: ReportArgs) -> Result<()> {
    if let Some(compare) = &args.compare {
        let rows = load_csv(compare)?;
        let cluster = load_cluster(&args.spec)?;
        let out = emit_bound_comparison(&rows, &cluster)?;
        std::fs::write(&args.out, &out.svg)?;
        let csv_path = with_extension_suffix(&args.out, ".normalized.csv");
        std::fs::write(&csv_path, &out.csv)?;
        println!("wrote {} and {}", args.out.display(), csv_path.display());
        return Ok(());
    }
    if args.map.is_empty() {
        bail!("pass --map <csv>... or --compare <csv>");
    }
    let mut sets = Vec::new();
    for path in &args.map {
        sets.push(load_csv(path)?);
    }
    let map = emit_regime_map(&sets)?;
    std::fs::write(&args.out, &map.svg)?;
    let table_path = with_extension_suffix(&args.out, ".txt");
    std::fs::write(&table_path, &map.table)?;
    print!("{}", map.table);
    println!("wrote {} and {}", args.out.display(), table_path.display());
    Ok(())
}

fn run_bounds(args: BoundsArgs) -> Result<()> {
    let grid = load_grid(&args.spec)?;
    let cluster = grid.cluster;
    println!(
        "cluster: {} bits/s, {} slots, topology factor {}",
        cluster.bandwidth_bits_per_s, cluster.total_worker_slots, cluster.topology_factor
    );
    println!(
        "{:>10} {:>8} {:>16} {:>16} {:>16} {:>7}",
        "size", "cpu", "network_hz", "cpu_hz", "ideal_hz", "regime"
    );
    for point in grid.cells() {
        println!(
            "{:>10} {:>8} {:>16} {:>16} {:>16} {:>7}",
            format_bytes(point.message_size_bytes),
            format_cpu_cost(point.cpu_cost_us),
            network_bound_hz(point, &cluster).to_string(),
            cpu_bound_hz(point, &cluster).to_string(),
            ideal_bound_hz(point, &cluster).to_string(),
            classify_regime(point, &cluster, None).to_string(),
        );
    }
    Ok(())
}

fn run_calibrate(args: CalibrateArgs) -> Result<()> {
    let calibration = calibrate_burner(args.samples);
    println!("{}", serde_json::to_string_pretty(&calibration)?);
    if !calibration.ok {
        std::process::exit(1);
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Master(args) => run_master(args),
        Cmd::Worker(args) => run_worker(args),
        Cmd::Source(args) => run_source(args),
        Cmd::Govern(args) => run_govern(args),
        Cmd::Sweep(args) => run_sweep_cmd(args),
        Cmd::Report(args) => run_report(args),
        Cmd::Bounds(args) => run_bounds(args),
        Cmd::Calibrate(args) => run_calibrate(args),
    }
}
