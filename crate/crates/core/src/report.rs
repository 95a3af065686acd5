//! Report rendering: regime/best-rate maps and bound-comparison charts.
//!
//! Everything here is a pure function from loaded CSV rows to static SVG
//! and text artifacts, so any figure can be regenerated from the results
//! file alone. The SVG is written directly; charts this simple do not need
//! a plotting dependency.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::bounds::{cpu_bound_hz, network_bound_hz, ClusterSpec, RegimeLabel};
use crate::sweep::CellResult;

pub const ADAPTER_PALETTE: [&str; 6] =
    ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#b07aa1", "#76b7b2"];

const MEASURED_COLOR: &str = "#4e79a7";
const NETWORK_BOUND_COLOR: &str = "#e15759";
const CPU_BOUND_COLOR: &str = "#59a14f";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("result sets cover different grids: {0}")]
    GridMismatch(String),
    #[error("nothing to report: {0}")]
    Empty(String),
}

#[derive(Debug, Clone)]
pub struct RegimeMap {
    pub svg: String,
    pub table: String,
}

#[derive(Debug, Clone)]
pub struct BoundComparison {
    pub svg: String,
    pub csv: String,
}

type CellKey = (u64, u64);

/// Best row (highest max_hz) per cell for one adapter's result set.
fn best_per_cell(rows: &[CellResult]) -> BTreeMap<CellKey, &CellResult> {
    let mut best: BTreeMap<CellKey, &CellResult> = BTreeMap::new();
    for row in rows {
        let key = (row.point.message_size_bytes, row.point.cpu_cost_us);
        match best.get(&key) {
            Some(cur) if cur.max_hz >= row.max_hz => {}
            _ => {
                best.insert(key, row);
            }
        }
    }
    best
}

fn grid_axes(cells: &BTreeSet<CellKey>) -> (Vec<u64>, Vec<u64>) {
    let sizes: BTreeSet<u64> = cells.iter().map(|c| c.0).collect();
    let cpus: BTreeSet<u64> = cells.iter().map(|c| c.1).collect();
    (sizes.into_iter().collect(), cpus.into_iter().collect())
}

pub fn format_bytes(bytes: u64) -> String {
    let (value, unit) = if bytes >= 1_000_000_000 {
        (bytes as f64 / 1e9, "GB")
    } else if bytes >= 1_000_000 {
        (bytes as f64 / 1e6, "MB")
    } else if bytes >= 1_000 {
        (bytes as f64 / 1e3, "kB")
    } else {
        (bytes as f64, "B")
    };
    if value.fract() == 0.0 {
        format!("{} {unit}", value as u64)
    } else {
        format!("{value} {unit}")
    }
}

pub fn format_cpu_cost(us: u64) -> String {
    if us == 0 {
        return "0".to_string();
    }
    let (value, unit) = if us >= 1_000_000 {
        (us as f64 / 1e6, "s")
    } else if us >= 1_000 {
        (us as f64 / 1e3, "ms")
    } else {
        (us as f64, "us")
    };
    if value.fract() == 0.0 {
        format!("{} {unit}", value as u64)
    } else {
        format!("{value} {unit}")
    }
}

/// Renders the per-cell winner map. With several adapters each cell takes
/// the color of the adapter that sustained the highest rate there; with a
/// single adapter the cell shading shows utilization of the ideal bound
/// instead, annotated with the regime label.
pub fn emit_regime_map(sets: &[Vec<CellResult>]) -> Result<RegimeMap, ReportError> {
    if sets.is_empty() || sets.iter().all(|s| s.is_empty()) {
        return Err(ReportError::Empty("no result sets".into()));
    }
    let reduced: Vec<(String, BTreeMap<CellKey, &CellResult>)> = sets
        .iter()
        .map(|rows| {
            let name = rows.first().map(|r| r.adapter.clone()).unwrap_or_default();
            (name, best_per_cell(rows))
        })
        .collect();

    let keys: BTreeSet<CellKey> = reduced[0].1.keys().copied().collect();
    for (name, cells) in &reduced[1..] {
        let other: BTreeSet<CellKey> = cells.keys().copied().collect();
        if other != keys {
            return Err(ReportError::GridMismatch(format!(
                "adapter {name} covers {} cells, expected {}",
                other.len(),
                keys.len()
            )));
        }
    }
    let (sizes, cpus) = grid_axes(&keys);
    if sizes.len() * cpus.len() != keys.len() {
        return Err(ReportError::GridMismatch("cells do not form a full grid".into()));
    }
    let single = reduced.len() == 1;

    // Per cell: the winning row and the palette index of its adapter.
    let mut winners: BTreeMap<CellKey, (usize, &CellResult)> = BTreeMap::new();
    for &key in &keys {
        let (idx, row) = reduced
            .iter()
            .enumerate()
            .map(|(i, (_, cells))| (i, cells[&key]))
            .max_by(|a, b| a.1.max_hz.cmp(&b.1.max_hz).then(b.0.cmp(&a.0)))
            .unwrap();
        winners.insert(key, (idx, row));
    }

    let table = render_map_table(&sizes, &cpus, &winners, &reduced, single);
    let svg = render_map_svg(&sizes, &cpus, &winners, &reduced, single);
    Ok(RegimeMap { svg, table })
}

fn render_map_table(
    sizes: &[u64],
    cpus: &[u64],
    winners: &BTreeMap<CellKey, (usize, &CellResult)>,
    reduced: &[(String, BTreeMap<CellKey, &CellResult>)],
    single: bool,
) -> String {
    let width = 16;
    let mut out = String::new();
    if single {
        let _ = writeln!(
            out,
            "best sustained rate (Hz) for adapter {}; cell = rate, regime, utilization",
            reduced[0].0
        );
    } else {
        let names: Vec<&str> = reduced.iter().map(|(n, _)| n.as_str()).collect();
        let _ = writeln!(
            out,
            "best sustained rate (Hz) per cell; winner among: {}",
            names.join(", ")
        );
    }
    let _ = write!(out, "{:>width$}", "cpu \\ size");
    for &s in sizes {
        let _ = write!(out, "{:>width$}", format_bytes(s));
    }
    out.push('\n');
    for &c in cpus {
        let _ = write!(out, "{:>width$}", format_cpu_cost(c));
        for &s in sizes {
            let (idx, row) = winners[&(s, c)];
            let cell = if single {
                format!("{} {} {:.0}%", row.max_hz, row.regime, row.utilization * 100.0)
            } else {
                format!("{} {}", row.max_hz, reduced[idx].0)
            };
            let _ = write!(out, "{cell:>width$}");
        }
        out.push('\n');
    }
    out
}

fn render_map_svg(
    sizes: &[u64],
    cpus: &[u64],
    winners: &BTreeMap<CellKey, (usize, &CellResult)>,
    reduced: &[(String, BTreeMap<CellKey, &CellResult>)],
    single: bool,
) -> String {
    let cell_w = 120.0;
    let cell_h = 48.0;
    let left = 110.0;
    let top = 64.0;
    let legend_h = 28.0;
    let width = left + cell_w * sizes.len() as f64 + 24.0;
    let height = top + cell_h * cpus.len() as f64 + legend_h + 24.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         font-family=\"monospace\" font-size=\"12\">"
    );
    let title = if single {
        format!("Best sustained rate (Hz), adapter {} (shade = utilization)", reduced[0].0)
    } else {
        "Best sustained rate (Hz), color = winning adapter".to_string()
    };
    let _ = writeln!(s, "<text x=\"{left}\" y=\"24\" font-size=\"14\">{title}</text>");

    for (i, &size) in sizes.iter().enumerate() {
        let x = left + cell_w * (i as f64 + 0.5);
        let _ = writeln!(
            s,
            "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            top - 10.0,
            format_bytes(size)
        );
    }
    for (j, &cpu) in cpus.iter().enumerate() {
        let y = top + cell_h * (j as f64 + 0.5) + 4.0;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{y}\" text-anchor=\"end\">{}</text>",
            left - 8.0,
            format_cpu_cost(cpu)
        );
    }

    for (j, &cpu) in cpus.iter().enumerate() {
        for (i, &size) in sizes.iter().enumerate() {
            let (idx, row) = winners[&(size, cpu)];
            let x = left + cell_w * i as f64;
            let y = top + cell_h * j as f64;
            let color = ADAPTER_PALETTE[idx % ADAPTER_PALETTE.len()];
            let opacity = if single {
                0.12 + 0.78 * row.utilization.clamp(0.0, 1.0)
            } else {
                0.85
            };
            let _ = writeln!(
                s,
                "<rect class=\"cell\" x=\"{x}\" y=\"{y}\" width=\"{cell_w}\" height=\"{cell_h}\" \
                 fill=\"{color}\" fill-opacity=\"{opacity:.3}\" stroke=\"#333\"/>"
            );
            let cx = x + cell_w / 2.0;
            let _ = writeln!(
                s,
                "<text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\" font-weight=\"bold\">{}</text>",
                y + 20.0,
                row.max_hz
            );
            let detail = if single {
                format!("{} {:.0}%", row.regime, row.utilization * 100.0)
            } else {
                reduced[idx].0.clone()
            };
            let _ = writeln!(
                s,
                "<text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{detail}</text>",
                y + 38.0
            );
        }
    }

    let mut lx = left;
    let ly = top + cell_h * cpus.len() as f64 + 18.0;
    for (idx, (name, _)) in reduced.iter().enumerate() {
        let color = ADAPTER_PALETTE[idx % ADAPTER_PALETTE.len()];
        let _ = writeln!(
            s,
            "<rect x=\"{lx}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{color}\"/>",
            ly - 10.0
        );
        let _ = writeln!(s, "<text x=\"{}\" y=\"{ly}\">{name}</text>", lx + 16.0);
        lx += 20.0 + 8.0 * (name.len().max(4) as f64);
    }
    s.push_str("</svg>\n");
    s
}

/// Measured maxima against the analytic bound curves, one panel per CPU
/// cost, plus the normalized fractions as CSV. Rows must have been
/// produced under `spec`; recomputed bounds that disagree with the stored
/// columns mean the wrong spec was supplied.
pub fn emit_bound_comparison(
    results: &[CellResult],
    spec: &ClusterSpec,
) -> Result<BoundComparison, ReportError> {
    if results.is_empty() {
        return Err(ReportError::Empty("no results".into()));
    }
    for row in results {
        let net = network_bound_hz(row.point, spec);
        let cpu = cpu_bound_hz(row.point, spec);
        let close = |a: f64, b: f64| {
            (a.is_infinite() && b.is_infinite()) || (a - b).abs() <= 1e-6 * a.abs().max(1.0)
        };
        if !close(net.as_f64(), row.bound_network_hz.as_f64())
            || !close(cpu.as_f64(), row.bound_cpu_hz.as_f64())
        {
            return Err(ReportError::GridMismatch(format!(
                "cell ({}, {}): stored bounds do not match the supplied spec",
                row.point.message_size_bytes, row.point.cpu_cost_us
            )));
        }
    }

    let best = best_per_cell(results);
    let keys: BTreeSet<CellKey> = best.keys().copied().collect();
    let (sizes, cpus) = grid_axes(&keys);

    let mut csv = String::from(
        "adapter,message_size_bytes,cpu_cost_us,max_hz,ideal_bound_hz,normalized\n",
    );
    for (&(size, cpu), row) in &best {
        let ideal = row.bound_network_hz.min(row.bound_cpu_hz).as_f64();
        let normalized = if ideal.is_finite() && ideal > 0.0 {
            row.max_hz as f64 / ideal
        } else {
            0.0
        };
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            row.adapter,
            size,
            cpu,
            row.max_hz,
            row.bound_network_hz.min(row.bound_cpu_hz),
            normalized
        );
    }

    let svg = render_bound_svg(&sizes, &cpus, &best);
    Ok(BoundComparison { svg, csv })
}

fn render_bound_svg(
    sizes: &[u64],
    cpus: &[u64],
    best: &BTreeMap<CellKey, &CellResult>,
) -> String {
    let panel_w = 460.0;
    let panel_h = 190.0;
    let margin_l = 80.0;
    let margin_r = 24.0;
    let margin_t = 30.0;
    let margin_b = 36.0;
    let header = 56.0;
    let width = margin_l + panel_w + margin_r;
    let height = header + (panel_h + margin_t + margin_b) * cpus.len() as f64;

    // Shared log domains keep panels comparable.
    let lx_min = (sizes.first().copied().unwrap_or(1).max(1) as f64).log10();
    let lx_max = (sizes.last().copied().unwrap_or(1).max(1) as f64).log10();
    let mut hz_values: Vec<f64> = Vec::new();
    for row in best.values() {
        if row.max_hz > 0 {
            hz_values.push(row.max_hz as f64);
        }
        for b in [row.bound_network_hz, row.bound_cpu_hz] {
            let v = b.as_f64();
            if v.is_finite() && v > 0.0 {
                hz_values.push(v);
            }
        }
    }
    let ly_min = hz_values.iter().copied().fold(f64::INFINITY, f64::min).max(1e-3).log10() - 0.3;
    let ly_max = hz_values.iter().copied().fold(0.0f64, f64::max).max(1.0).log10() + 0.3;

    let map_x = move |size: f64| {
        if lx_max > lx_min {
            margin_l + (size.log10() - lx_min) / (lx_max - lx_min) * panel_w
        } else {
            margin_l + panel_w / 2.0
        }
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         font-family=\"monospace\" font-size=\"11\">"
    );
    let _ = writeln!(
        s,
        "<text x=\"{margin_l}\" y=\"20\" font-size=\"14\">Measured max rate vs resource bounds \
         (log-log)</text>"
    );
    let legend = [
        (MEASURED_COLOR, "measured"),
        (NETWORK_BOUND_COLOR, "network bound"),
        (CPU_BOUND_COLOR, "cpu bound"),
    ];
    let mut lx = margin_l;
    for (color, label) in legend {
        let _ = writeln!(s, "<rect x=\"{lx}\" y=\"30\" width=\"12\" height=\"12\" fill=\"{color}\"/>");
        let _ = writeln!(s, "<text x=\"{}\" y=\"40\">{label}</text>", lx + 16.0);
        lx += 30.0 + 7.0 * label.len() as f64;
    }

    for (panel, &cpu) in cpus.iter().enumerate() {
        let y0 = header + (panel_h + margin_t + margin_b) * panel as f64 + margin_t;
        let map_y = move |hz: f64| {
            let clamped = hz.max(10f64.powf(ly_min)).log10();
            y0 + panel_h - (clamped - ly_min) / (ly_max - ly_min) * panel_h
        };

        let _ = writeln!(
            s,
            "<text x=\"{margin_l}\" y=\"{}\">cpu cost = {}</text>",
            y0 - 8.0,
            format_cpu_cost(cpu)
        );
        let _ = writeln!(
            s,
            "<rect x=\"{margin_l}\" y=\"{y0}\" width=\"{panel_w}\" height=\"{panel_h}\" \
             fill=\"none\" stroke=\"#999\"/>"
        );
        let mut k = ly_min.ceil() as i64;
        while (k as f64) <= ly_max {
            let gy = map_y(10f64.powi(k as i32));
            let _ = writeln!(
                s,
                "<line x1=\"{margin_l}\" y1=\"{gy}\" x2=\"{}\" y2=\"{gy}\" stroke=\"#ddd\"/>",
                margin_l + panel_w
            );
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">1e{k}</text>",
                margin_l - 6.0,
                gy + 4.0
            );
            k += 1;
        }
        for &size in sizes {
            let gx = map_x(size as f64);
            let _ = writeln!(
                s,
                "<text x=\"{gx}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                y0 + panel_h + 16.0,
                format_bytes(size)
            );
        }

        let mut net_points = Vec::new();
        let mut measured_points = Vec::new();
        let mut cpu_bound_y = None;
        for &size in sizes {
            let row = best[&(size, cpu)];
            let x = map_x(size as f64);
            let net = row.bound_network_hz.as_f64();
            if net.is_finite() {
                net_points.push(format!("{x:.1},{:.1}", map_y(net)));
            }
            measured_points.push((x, map_y((row.max_hz as f64).max(1e-3))));
            let cb = row.bound_cpu_hz.as_f64();
            if cb.is_finite() {
                cpu_bound_y = Some(map_y(cb));
            }
        }
        if net_points.len() >= 2 {
            let _ = writeln!(
                s,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{NETWORK_BOUND_COLOR}\" \
                 stroke-width=\"1.5\"/>",
                net_points.join(" ")
            );
        }
        if let Some(cy) = cpu_bound_y {
            let _ = writeln!(
                s,
                "<line x1=\"{margin_l}\" y1=\"{cy:.1}\" x2=\"{}\" y2=\"{cy:.1}\" \
                 stroke=\"{CPU_BOUND_COLOR}\" stroke-width=\"1.5\" stroke-dasharray=\"6 3\"/>",
                margin_l + panel_w
            );
        }
        let line: Vec<String> =
            measured_points.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
        if line.len() >= 2 {
            let _ = writeln!(
                s,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{MEASURED_COLOR}\" \
                 stroke-dasharray=\"3 2\"/>",
                line.join(" ")
            );
        }
        for (x, y) in measured_points {
            let _ = writeln!(s, "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"3\" fill=\"{MEASURED_COLOR}\"/>");
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Regime counts across a result set, for quick textual summaries.
pub fn regime_histogram(results: &[CellResult]) -> BTreeMap<RegimeLabel, usize> {
    let mut out = BTreeMap::new();
    for row in best_per_cell(results).values() {
        *out.entry(row.regime).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::Bound;
    use crate::workload::WorkloadPoint;

    fn row(adapter: &str, size: u64, cpu: u64, max_hz: u64, spec: &ClusterSpec) -> CellResult {
        let point = WorkloadPoint::new(size, cpu);
        let ideal = crate::bounds::ideal_bound_hz(point, spec).as_f64();
        CellResult {
            adapter: adapter.to_string(),
            point,
            max_hz,
            bound_network_hz: network_bound_hz(point, spec),
            bound_cpu_hz: cpu_bound_hz(point, spec),
            regime: crate::bounds::classify_regime(point, spec, None),
            utilization: max_hz as f64 / ideal,
            iterations: 10,
            wall_time_s: 1.0,
            timestamp: "2026-01-01T00:00:00Z".to_string(),
        }
    }

    fn spec() -> ClusterSpec {
        ClusterSpec::default()
    }

    fn set_for(adapter: &str, frac: f64) -> Vec<CellResult> {
        let spec = spec();
        let mut rows = Vec::new();
        for &size in &[1_000u64, 1_000_000] {
            for &cpu in &[10_000u64, 100_000] {
                let ideal =
                    crate::bounds::ideal_bound_hz(WorkloadPoint::new(size, cpu), &spec).as_f64();
                rows.push(row(adapter, size, cpu, (frac * ideal) as u64, &spec));
            }
        }
        rows
    }

    #[test]
    fn single_adapter_map_colors_every_cell_the_same() {
        let map = emit_regime_map(&[set_for("mock", 0.5)]).unwrap();
        let cells: Vec<&str> =
            map.svg.lines().filter(|l| l.contains("class=\"cell\"")).collect();
        assert_eq!(cells.len(), 4);
        assert!(cells.iter().all(|l| l.contains(ADAPTER_PALETTE[0])));
        assert!(map.table.contains("cpu \\ size"));
        assert!(map.svg.starts_with("<svg"));
        assert!(map.svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn dominant_adapter_wins_every_cell() {
        let a = set_for("alpha", 0.9);
        let b = set_for("beta", 0.4);
        let map = emit_regime_map(&[a, b]).unwrap();
        let cells: Vec<&str> =
            map.svg.lines().filter(|l| l.contains("class=\"cell\"")).collect();
        assert_eq!(cells.len(), 4);
        assert!(cells.iter().all(|l| l.contains(ADAPTER_PALETTE[0])), "alpha everywhere");
        // Data rows name only the winner; beta stays confined to the title.
        for data_row in map.table.lines().skip(2) {
            assert!(!data_row.contains("beta"), "row {data_row:?}");
        }
    }

    #[test]
    fn split_grid_matches_per_cell_argmax() {
        let spec = spec();
        // alpha wins small cells, beta wins the big-message column.
        let alpha = vec![
            row("alpha", 1_000, 10_000, 3_000, &spec),
            row("alpha", 1_000_000, 10_000, 50, &spec),
        ];
        let beta = vec![
            row("beta", 1_000, 10_000, 1_000, &spec),
            row("beta", 1_000_000, 10_000, 150, &spec),
        ];
        let map = emit_regime_map(&[alpha, beta]).unwrap();
        let lines: Vec<&str> = map.table.lines().collect();
        let data = lines[2];
        assert!(data.contains("3000 alpha"));
        assert!(data.contains("150 beta"));
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = set_for("alpha", 0.5);
        let mut b = set_for("beta", 0.5);
        b.pop();
        match emit_regime_map(&[a, b]) {
            Err(ReportError::GridMismatch(_)) => {}
            other => panic!("expected grid mismatch, got {other:?}"),
        }
    }

    #[test]
    fn repeats_reduce_to_the_best_row() {
        let spec = spec();
        let rows = vec![
            row("mock", 1_000, 10_000, 100, &spec),
            row("mock", 1_000, 10_000, 300, &spec),
            row("mock", 1_000, 10_000, 200, &spec),
        ];
        let best = best_per_cell(&rows);
        assert_eq!(best[&(1_000, 10_000)].max_hz, 300);
    }

    #[test]
    fn results_at_the_bound_normalize_to_one() {
        let comparison = emit_bound_comparison(&set_for("mock", 1.0), &spec()).unwrap();
        for line in comparison.csv.lines().skip(1) {
            let normalized: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            // (frac * ideal) as u64 truncates, so allow the integer step.
            assert!(normalized > 0.99 && normalized <= 1.0, "line {line}");
        }
    }

    #[test]
    fn results_at_half_bound_normalize_to_half() {
        let comparison = emit_bound_comparison(&set_for("mock", 0.5), &spec()).unwrap();
        for line in comparison.csv.lines().skip(1) {
            let normalized: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert!((normalized - 0.5).abs() < 0.01, "line {line}");
        }
    }

    #[test]
    fn ideal_bound_column_is_monotone_non_increasing_with_size() {
        let comparison = emit_bound_comparison(&set_for("mock", 0.5), &spec()).unwrap();
        let mut per_cpu: BTreeMap<u64, Vec<(u64, f64)>> = BTreeMap::new();
        for line in comparison.csv.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            let size: u64 = fields[1].parse().unwrap();
            let cpu: u64 = fields[2].parse().unwrap();
            let ideal: f64 = fields[4].parse().unwrap();
            per_cpu.entry(cpu).or_default().push((size, ideal));
        }
        for (cpu, mut points) in per_cpu {
            points.sort_unstable_by_key(|p| p.0);
            assert!(
                points.windows(2).all(|w| w[1].1 <= w[0].1),
                "cpu {cpu}: {points:?}"
            );
        }
    }

    #[test]
    fn wrong_spec_is_detected() {
        let rows = set_for("mock", 0.5);
        let mut other = spec();
        other.bandwidth_bits_per_s = 1e6;
        match emit_bound_comparison(&rows, &other) {
            Err(ReportError::GridMismatch(_)) => {}
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn unbounded_cpu_bound_renders_without_a_cpu_line() {
        let spec = spec();
        let rows = vec![
            row("mock", 1_000, 0, 100_000, &spec),
            row("mock", 1_000_000, 0, 170, &spec),
        ];
        assert_eq!(rows[0].bound_cpu_hz, Bound::Unbounded);
        let comparison = emit_bound_comparison(&rows, &spec).unwrap();
        // The dashed horizontal marker is only drawn for finite cpu bounds.
        assert!(!comparison.svg.contains("stroke-dasharray=\"6 3\""));
        assert!(comparison.svg.contains("</svg>"));
        assert!(comparison.csv.contains("175000"));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(emit_regime_map(&[]), Err(ReportError::Empty(_))));
        assert!(matches!(
            emit_bound_comparison(&[], &spec()),
            Err(ReportError::Empty(_))
        ));
    }

    #[test]
    fn histogram_counts_regimes() {
        let rows = set_for("mock", 0.5);
        let hist = regime_histogram(&rows);
        let total: usize = hist.values().sum();
        assert_eq!(total, 4);
    }

    #[test]
    fn size_and_cost_labels_read_naturally() {
        assert_eq!(format_bytes(100), "100 B");
        assert_eq!(format_bytes(1_000), "1 kB");
        assert_eq!(format_bytes(10_000_000), "10 MB");
        assert_eq!(format_bytes(2_500), "2.5 kB");
        assert_eq!(format_cpu_cost(0), "0");
        assert_eq!(format_cpu_cost(500), "500 us");
        assert_eq!(format_cpu_cost(50_000), "50 ms");
        assert_eq!(format_cpu_cost(1_000_000), "1 s");
        assert_eq!(format_cpu_cost(1_500_000), "1.5 s");
    }
}
