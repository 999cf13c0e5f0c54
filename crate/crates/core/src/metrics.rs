//! Per-node statistics, empirical CDFs and the CSV report.
//!
//! Only packets generated after warm-up by a node inside the stats region
//! are measured. Dropped packets count as infinite access delay.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::MacProtocol;
use crate::time::Nanos;

/// Upper bound on MAC-to-MAC delay for a position message to be useful.
pub const MAC_TO_MAC_DEADLINE: Nanos = Nanos(100_000_000);

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("csv error in {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeStats {
    pub id: u32,
    pub generated: u64,
    pub transmitted: u64,
    pub dropped: u64,
    /// Nanoseconds from generation to transmission start.
    pub access_delays: Vec<u32>,
    pub current_consecutive_drops: u32,
    pub consecutive_drop_runs: Vec<u32>,
}

impl NodeStats {
    pub fn new(id: u32) -> Self {
        Self { id, ..Self::default() }
    }

    pub fn record_generated(&mut self) {
        self.generated += 1;
    }

    pub fn record_transmit(&mut self, access_delay: Nanos) {
        self.transmitted += 1;
        self.access_delays.push(u32::try_from(access_delay.0).expect("access delay above 4.29 s"));
        self.close_run();
    }

    pub fn record_drop(&mut self) {
        self.dropped += 1;
        self.current_consecutive_drops += 1;
    }

    /// Ends the node's record; a drop run still open counts as a run.
    pub fn finish(&mut self) {
        self.close_run();
    }

    fn close_run(&mut self) {
        if self.current_consecutive_drops > 0 {
            self.consecutive_drop_runs.push(self.current_consecutive_drops);
            self.current_consecutive_drops = 0;
        }
    }

    pub fn pending(&self) -> u64 {
        self.generated - self.transmitted - self.dropped
    }

    pub fn drop_rate(&self) -> f64 {
        if self.generated == 0 {
            0.0
        } else {
            self.dropped as f64 / self.generated as f64
        }
    }

    pub fn max_consecutive_drops(&self) -> u32 {
        self.consecutive_drop_runs.iter().copied().max().unwrap_or(0)
    }
}

/// Empirical distribution with part of its mass at infinity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cdf {
    /// Distinct sample values with the fraction of all samples at or below.
    points: Vec<(f64, f64)>,
    mass_at_infinity: f64,
}

impl Cdf {
    /// `finite` holds the finite samples; `infinite` counts the rest.
    pub fn from_samples(mut finite: Vec<f64>, infinite: usize) -> Self {
        let total = finite.len() + infinite;
        if total == 0 {
            return Self::default();
        }
        finite.sort_by(f64::total_cmp);
        let mut points: Vec<(f64, f64)> = Vec::new();
        for (i, x) in finite.iter().enumerate() {
            let frac = (i + 1) as f64 / total as f64;
            match points.last_mut() {
                Some(last) if last.0 == *x => last.1 = frac,
                _ => points.push((*x, frac)),
            }
        }
        Self {
            points,
            mass_at_infinity: infinite as f64 / total as f64,
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn mass_at_infinity(&self) -> f64 {
        self.mass_at_infinity
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty() && self.mass_at_infinity == 0.0
    }

    /// Largest cumulative value reached at a finite point.
    pub fn terminal(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.1)
    }

    /// `Pr{X <= x}`.
    pub fn at(&self, x: f64) -> f64 {
        let i = self.points.partition_point(|p| p.0 <= x);
        if i == 0 {
            0.0
        } else {
            self.points[i - 1].1
        }
    }

    /// `Pr{X < x}`.
    pub fn below(&self, x: f64) -> f64 {
        let i = self.points.partition_point(|p| p.0 < x);
        if i == 0 {
            0.0
        } else {
            self.points[i - 1].1
        }
    }

    pub fn max_finite(&self) -> Option<f64> {
        self.points.last().map(|p| p.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MacToMacSummary {
    pub messages: u64,
    pub within_deadline: u64,
    pub sum_ns: f64,
    pub max: Nanos,
}

impl MacToMacSummary {
    pub fn record(&mut self, delay: Nanos) {
        self.messages += 1;
        self.sum_ns += delay.0 as f64;
        self.max = self.max.max(delay);
        if delay <= MAC_TO_MAC_DEADLINE {
            self.within_deadline += 1;
        }
    }

    pub fn mean(&self) -> Option<Nanos> {
        (self.messages > 0).then(|| Nanos((self.sum_ns / self.messages as f64).round() as u64))
    }

    pub fn deadline_fraction(&self) -> f64 {
        if self.messages == 0 {
            1.0
        } else {
            self.within_deadline as f64 / self.messages as f64
        }
    }

    fn merge(&mut self, o: &Self) {
        self.messages += o.messages;
        self.within_deadline += o.within_deadline;
        self.sum_ns += o.sum_ns;
        self.max = self.max.max(o.max);
    }
}

/// `T_acc + T_prop + T_dec` with the deadline flag.
pub fn mac_to_mac_delay(access_delay: Nanos, propagation: Nanos, decode: Nanos) -> (Nanos, bool) {
    let d = access_delay + propagation + decode;
    (d, d <= MAC_TO_MAC_DEADLINE)
}

/// Checks of the STDMA guarantees, counted over every transmission.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StdmaChecks {
    pub transmissions: u64,
    pub delay_bound_exceeded: u64,
    pub reservation_count_mismatch: u64,
    pub nts_outside_si: u64,
    pub steals: u64,
    pub reallocations: u64,
    pub max_access_delay: Nanos,
}

impl StdmaChecks {
    pub fn violations(&self) -> u64 {
        self.delay_bound_exceeded + self.reservation_count_mismatch + self.nts_outside_si
    }

    fn merge(&mut self, o: &Self) {
        self.transmissions += o.transmissions;
        self.delay_bound_exceeded += o.delay_bound_exceeded;
        self.reservation_count_mismatch += o.reservation_count_mismatch;
        self.nts_outside_si += o.nts_outside_si;
        self.steals += o.steals;
        self.reallocations += o.reallocations;
        self.max_access_delay = self.max_access_delay.max(o.max_access_delay);
    }
}

/// Packet totals over every node and packet, measured or not.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Conservation {
    pub generated: u64,
    pub transmitted: u64,
    pub dropped: u64,
    pub pending: u64,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.generated == self.transmitted + self.dropped + self.pending
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotTraceRow {
    pub frame: u64,
    pub node: u32,
    pub slot: usize,
    pub action: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleTraceRow {
    pub time: Nanos,
    pub node: u32,
    pub lane: usize,
    pub position: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub protocol: MacProtocol,
    pub packet_length: u32,
    pub heartbeat_rate: f64,
    pub sensing_range: f64,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub wall_time_s: f64,
    pub min_node_packets: u64,
    /// Measured nodes only.
    pub nodes: Vec<NodeStats>,
    /// Per measured CSMA transmission: distance to the nearest other
    /// transmission overlapping it in time, `INFINITY` if none.
    pub concurrent_tx_min_distance: Vec<f64>,
    /// Per measured STDMA transmission: distance to the nearest in-range
    /// transmitter in the same slot, `INFINITY` if none.
    pub slot_share_min_distance: Vec<f64>,
    /// (stats-region node, post-warmup slot) pairs in which the node had two
    /// mutually in-range senders within its own range.
    pub reused_slots: u64,
    /// All (stats-region node, post-warmup slot) pairs.
    pub observed_slots: u64,
    pub mac_to_mac: MacToMacSummary,
    pub neighbor_sum: u64,
    pub neighbor_samples: u64,
    pub stdma: StdmaChecks,
    pub conservation: Conservation,
    pub slot_trace: Vec<SlotTraceRow>,
    pub vehicle_trace: Vec<VehicleTraceRow>,
}

impl MetricsReport {
    pub fn new(protocol: MacProtocol, packet_length: u32, heartbeat_rate: f64, sensing_range: f64) -> Self {
        Self {
            protocol,
            packet_length,
            heartbeat_rate,
            sensing_range,
            seeds: Vec::new(),
            config_hash: String::new(),
            wall_time_s: 0.0,
            min_node_packets: 0,
            nodes: Vec::new(),
            concurrent_tx_min_distance: Vec::new(),
            slot_share_min_distance: Vec::new(),
            reused_slots: 0,
            observed_slots: 0,
            mac_to_mac: MacToMacSummary::default(),
            neighbor_sum: 0,
            neighbor_samples: 0,
            stdma: StdmaChecks::default(),
            conservation: Conservation::default(),
            slot_trace: Vec::new(),
            vehicle_trace: Vec::new(),
        }
    }

    /// Combines runs of the same cell: per-node records are concatenated and
    /// counters summed.
    pub fn merge(reports: &[MetricsReport]) -> MetricsReport {
        let first = reports.first().expect("merge of no reports");
        let mut out = MetricsReport::new(first.protocol, first.packet_length, first.heartbeat_rate, first.sensing_range);
        out.config_hash = first.config_hash.clone();
        out.min_node_packets = first.min_node_packets;
        for r in reports {
            out.seeds.extend(&r.seeds);
            out.wall_time_s += r.wall_time_s;
            out.nodes.extend(r.nodes.iter().cloned());
            out.concurrent_tx_min_distance.extend(&r.concurrent_tx_min_distance);
            out.slot_share_min_distance.extend(&r.slot_share_min_distance);
            out.reused_slots += r.reused_slots;
            out.observed_slots += r.observed_slots;
            out.mac_to_mac.merge(&r.mac_to_mac);
            out.neighbor_sum += r.neighbor_sum;
            out.neighbor_samples += r.neighbor_samples;
            out.stdma.merge(&r.stdma);
            out.conservation.generated += r.conservation.generated;
            out.conservation.transmitted += r.conservation.transmitted;
            out.conservation.dropped += r.conservation.dropped;
            out.conservation.pending += r.conservation.pending;
        }
        out
    }

    pub fn total_generated(&self) -> u64 {
        self.nodes.iter().map(|n| n.generated).sum()
    }

    pub fn total_dropped(&self) -> u64 {
        self.nodes.iter().map(|n| n.dropped).sum()
    }

    /// Packet-weighted drop rate over all measured nodes.
    pub fn mean_drop_rate(&self) -> f64 {
        let g = self.total_generated();
        if g == 0 {
            0.0
        } else {
            self.total_dropped() as f64 / g as f64
        }
    }

    /// Nodes with enough packets for a stable drop rate; all nodes with
    /// traffic if none qualifies.
    fn ranked_nodes(&self) -> Vec<&NodeStats> {
        let mut v: Vec<&NodeStats> = self
            .nodes
            .iter()
            .filter(|n| n.generated >= self.min_node_packets.max(1))
            .collect();
        if v.is_empty() {
            v = self.nodes.iter().filter(|n| n.generated > 0).collect();
        }
        v
    }

    /// Lowest drop rate; ties go to the lowest id.
    pub fn best_node(&self) -> Option<&NodeStats> {
        self.ranked_nodes()
            .into_iter()
            .min_by(|a, b| a.drop_rate().total_cmp(&b.drop_rate()).then(a.id.cmp(&b.id)))
    }

    /// Highest drop rate; ties go to the lowest id.
    pub fn worst_node(&self) -> Option<&NodeStats> {
        self.ranked_nodes()
            .into_iter()
            .max_by(|a, b| a.drop_rate().total_cmp(&b.drop_rate()).then(b.id.cmp(&a.id)))
    }

    pub fn max_consecutive_drops(&self) -> u32 {
        self.nodes.iter().map(|n| n.max_consecutive_drops()).max().unwrap_or(0)
    }

    /// Pooled access-delay CDF over all measured nodes, in microseconds.
    pub fn pooled_access_delay_cdf(&self) -> Cdf {
        let mut finite = Vec::new();
        let mut dropped = 0;
        for n in &self.nodes {
            finite.extend(n.access_delays.iter().map(|&d| d as f64 / 1e3));
            dropped += n.dropped as usize;
        }
        Cdf::from_samples(finite, dropped)
    }

    pub fn mean_neighbors(&self) -> f64 {
        if self.neighbor_samples == 0 {
            0.0
        } else {
            self.neighbor_sum as f64 / self.neighbor_samples as f64
        }
    }

    pub fn slot_reuse_fraction(&self) -> f64 {
        if self.observed_slots == 0 {
            0.0
        } else {
            self.reused_slots as f64 / self.observed_slots as f64
        }
    }

    /// Mean distance to the nearest same-slot sharer, over shared transmissions.
    pub fn mean_sharer_distance(&self) -> Option<f64> {
        let shared: Vec<f64> = self.slot_share_min_distance.iter().copied().filter(|d| d.is_finite()).collect();
        (!shared.is_empty()).then(|| shared.iter().sum::<f64>() / shared.len() as f64)
    }

    pub fn slot_share_min_distance_cdf(&self) -> Cdf {
        distance_cdf(&self.slot_share_min_distance)
    }

    pub fn concurrent_tx_min_distance_cdf(&self) -> Cdf {
        distance_cdf(&self.concurrent_tx_min_distance)
    }

    /// Fraction of measured CSMA transmissions overlapping another one
    /// started within `d` metres.
    pub fn concurrent_within(&self, d: f64) -> f64 {
        self.concurrent_tx_min_distance_cdf().at(d)
    }
}

fn distance_cdf(samples: &[f64]) -> Cdf {
    let finite: Vec<f64> = samples.iter().copied().filter(|d| d.is_finite()).collect();
    let infinite = samples.len() - finite.len();
    Cdf::from_samples(finite, infinite)
}

/// Access-delay CDF of one node in microseconds; dropped packets go to infinity.
pub fn access_delay_cdf(stats: &NodeStats) -> Cdf {
    Cdf::from_samples(
        stats.access_delays.iter().map(|&d| d as f64 / 1e3).collect(),
        stats.dropped as usize,
    )
}

/// CDF over maximal consecutive-drop runs pooled across nodes; a point mass
/// at zero when nothing was dropped.
pub fn consecutive_drop_cdf(report: &MetricsReport) -> Cdf {
    let runs: Vec<f64> = report
        .nodes
        .iter()
        .flat_map(|n| n.consecutive_drop_runs.iter().map(|&r| r as f64))
        .collect();
    if runs.is_empty() {
        return Cdf::from_samples(vec![0.0], 0);
    }
    Cdf::from_samples(runs, 0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropRow {
    pub length: u32,
    pub rate_hz: f64,
    pub range_m: f64,
    pub mean_drop_pct: f64,
    pub best_pct: f64,
    pub worst_pct: f64,
}

pub fn drop_row(report: &MetricsReport) -> DropRow {
    DropRow {
        length: report.packet_length,
        rate_hz: report.heartbeat_rate,
        range_m: report.sensing_range,
        mean_drop_pct: 100.0 * report.mean_drop_rate(),
        best_pct: 100.0 * report.best_node().map_or(0.0, NodeStats::drop_rate),
        worst_pct: 100.0 * report.worst_node().map_or(0.0, NodeStats::drop_rate),
    }
}

/// One row per report, in the given order.
pub fn drop_rate_table(reports: &[MetricsReport]) -> Vec<DropRow> {
    reports.iter().map(drop_row).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReuseRow {
    pub length: u32,
    pub rate_hz: f64,
    pub range_m: f64,
    pub reuse_pct: f64,
    pub mean_sharer_distance_m: Option<f64>,
}

pub fn reuse_row(report: &MetricsReport) -> ReuseRow {
    ReuseRow {
        length: report.packet_length,
        rate_hz: report.heartbeat_rate,
        range_m: report.sensing_range,
        reuse_pct: 100.0 * report.slot_reuse_fraction(),
        mean_sharer_distance_m: report.mean_sharer_distance(),
    }
}

pub const DROPS_TABLE: &str = "drops_table.csv";
pub const ACCESS_DELAY_CDF: &str = "access_delay_cdf.csv";
pub const CONSEC_DROPS_CDF: &str = "consec_drops_cdf.csv";
pub const SLOT_REUSE: &str = "slot_reuse.csv";
pub const MIN_DISTANCE_CDF: &str = "min_distance_cdf.csv";
pub const RUN_META: &str = "run_meta.csv";
pub const SLOT_TRACE: &str = "slot_trace.csv";
pub const VEHICLE_TRACE: &str = "vehicle_trace.csv";

fn pct(x: f64) -> String {
    format!("{x:.4}")
}

fn frac(x: f64) -> String {
    format!("{x:.4}")
}

fn metres(x: f64) -> String {
    format!("{x:.1}")
}

fn rate(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

struct Sheet {
    path: PathBuf,
    w: csv::Writer<fs::File>,
}

impl Sheet {
    fn create(dir: &Path, name: &str, header: &[&str]) -> Result<Self, ExportError> {
        let path = dir.join(name);
        let file = fs::File::create(&path).map_err(|source| ExportError::Io {
            path: path.clone(),
            source,
        })?;
        let mut s = Self {
            w: csv::Writer::from_writer(file),
            path,
        };
        s.row(header.iter().map(|h| h.to_string()))?;
        Ok(s)
    }

    fn row(&mut self, fields: impl IntoIterator<Item = String>) -> Result<(), ExportError> {
        let fields: Vec<String> = fields.into_iter().collect();
        self.w.write_record(&fields).map_err(|source| ExportError::Csv {
            path: self.path.clone(),
            source,
        })
    }

    fn done(mut self) -> Result<(), ExportError> {
        self.w.flush().map_err(|source| ExportError::Io { path: self.path, source })
    }
}

/// Delay CDF rows at microsecond resolution.
fn delay_rows(sheet: &mut Sheet, who: &str, cdf: &Cdf) -> Result<(), ExportError> {
    let mut last: Option<(u64, f64)> = None;
    for &(x, f) in cdf.points() {
        let us = x.round() as u64;
        if let Some((lu, lf)) = last {
            if lu != us {
                sheet.row([who.to_string(), lu.to_string(), frac(lf)])?;
            }
        }
        last = Some((us, f));
    }
    if let Some((lu, lf)) = last {
        sheet.row([who.to_string(), lu.to_string(), frac(lf)])?;
    }
    Ok(())
}

/// Distance CDF rows at 0.1 m resolution.
fn distance_rows(sheet: &mut Sheet, kind: &str, cdf: &Cdf) -> Result<(), ExportError> {
    let mut last: Option<(String, f64)> = None;
    for &(x, f) in cdf.points() {
        let m = metres(x);
        if let Some((lm, lf)) = last.take() {
            if lm != m {
                sheet.row([kind.to_string(), lm, frac(lf)])?;
            }
        }
        last = Some((m, f));
    }
    if let Some((lm, lf)) = last {
        sheet.row([kind.to_string(), lm, frac(lf)])?;
    }
    Ok(())
}

pub fn write_drops_table(dir: &Path, rows: &[DropRow]) -> Result<(), ExportError> {
    let mut s = Sheet::create(
        dir,
        DROPS_TABLE,
        &["length", "rate_hz", "range_m", "mean_drop_pct", "best_pct", "worst_pct"],
    )?;
    for r in rows {
        s.row([
            r.length.to_string(),
            rate(r.rate_hz),
            metres(r.range_m),
            pct(r.mean_drop_pct),
            pct(r.best_pct),
            pct(r.worst_pct),
        ])?;
    }
    s.done()
}

pub fn write_slot_reuse(dir: &Path, rows: &[ReuseRow]) -> Result<(), ExportError> {
    let mut s = Sheet::create(
        dir,
        SLOT_REUSE,
        &["length", "rate_hz", "range_m", "reuse_pct", "mean_sharer_distance_m"],
    )?;
    for r in rows {
        s.row([
            r.length.to_string(),
            rate(r.rate_hz),
            metres(r.range_m),
            pct(r.reuse_pct),
            r.mean_sharer_distance_m.map(metres).unwrap_or_default(),
        ])?;
    }
    s.done()
}

pub fn write_run_meta(dir: &Path, seeds: &[u64], config_hash: &str, wall_time_s: f64) -> Result<(), ExportError> {
    let mut s = Sheet::create(dir, RUN_META, &["seed", "config_hash", "wall_time_s"])?;
    for seed in seeds {
        s.row([seed.to_string(), config_hash.to_string(), format!("{wall_time_s:.3}")])?;
    }
    s.done()
}

/// Writes the six report files into `dir`, plus trace files when traces were
/// collected.
pub fn export_csv(report: &MetricsReport, dir: &Path) -> Result<(), ExportError> {
    fs::create_dir_all(dir).map_err(|source| ExportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_drops_table(dir, &[drop_row(report)])?;

    let mut s = Sheet::create(dir, ACCESS_DELAY_CDF, &["who", "delay_us", "cum_frac"])?;
    if let Some(best) = report.best_node() {
        delay_rows(&mut s, "best", &access_delay_cdf(best))?;
    }
    delay_rows(&mut s, "avg", &report.pooled_access_delay_cdf())?;
    if let Some(worst) = report.worst_node() {
        delay_rows(&mut s, "worst", &access_delay_cdf(worst))?;
    }
    s.done()?;

    let mut s = Sheet::create(dir, CONSEC_DROPS_CDF, &["run_length", "cum_frac"])?;
    for &(x, f) in consecutive_drop_cdf(report).points() {
        s.row([(x as u64).to_string(), frac(f)])?;
    }
    s.done()?;

    write_slot_reuse(dir, &[reuse_row(report)])?;

    let mut s = Sheet::create(dir, MIN_DISTANCE_CDF, &["kind", "distance_m", "cum_frac"])?;
    distance_rows(&mut s, "slot_share", &report.slot_share_min_distance_cdf())?;
    distance_rows(&mut s, "concurrent_tx", &report.concurrent_tx_min_distance_cdf())?;
    s.done()?;

    write_run_meta(dir, &report.seeds, &report.config_hash, report.wall_time_s)?;

    if !report.slot_trace.is_empty() {
        let mut s = Sheet::create(dir, SLOT_TRACE, &["frame", "node", "slot", "action"])?;
        for r in &report.slot_trace {
            s.row([r.frame.to_string(), r.node.to_string(), r.slot.to_string(), r.action.to_string()])?;
        }
        s.done()?;
    }
    if !report.vehicle_trace.is_empty() {
        let mut s = Sheet::create(dir, VEHICLE_TRACE, &["time_s", "node", "lane", "position_m"])?;
        for r in &report.vehicle_trace {
            s.row([
                format!("{:.3}", r.time.as_secs_f64()),
                r.node.to_string(),
                r.lane.to_string(),
                metres(r.position),
            ])?;
        }
        s.done()?;
    }
    Ok(())
}
