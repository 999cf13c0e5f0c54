//! Scenario grids, seed averaging and parallel execution of many runs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use thiserror::Error;

use crate::config::{MacProtocol, ScenarioConfig};
use crate::engine::{run, EngineError};
use crate::metrics::{
    drop_row, export_csv, reuse_row, write_drops_table, write_run_meta, write_slot_reuse, DropRow, ExportError,
    MetricsReport, ReuseRow,
};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("cannot create {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// One (packet length, heartbeat rate, sensing range) combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub length: u32,
    pub rate_hz: f64,
    pub range_m: f64,
}

impl Cell {
    pub const fn new(length: u32, rate_hz: f64, range_m: f64) -> Self {
        Self { length, rate_hz, range_m }
    }

    pub fn label(&self) -> String {
        format!("{}B_{}Hz_{}m", self.length, self.rate_hz, self.range_m)
    }

    /// `base` with this cell's traffic and range; every vehicle sends
    /// packets of the cell's length.
    pub fn apply(&self, base: &ScenarioConfig, protocol: MacProtocol) -> ScenarioConfig {
        ScenarioConfig {
            packet_length_mix: vec![(self.length, 1.0)],
            heartbeat_rate: self.rate_hz,
            sensing_range: self.range_m,
            mac_protocol: protocol,
            ..base.clone()
        }
    }
}

/// The ten simulated traffic scenarios: every length, rate and range
/// except 100-byte packets at 5 Hz.
pub fn table_cells() -> Vec<Cell> {
    let mut cells = Vec::new();
    for length in [100, 300, 500] {
        for range in [500.0, 1000.0] {
            for rate in [5.0, 10.0] {
                if length == 100 && rate == 5.0 {
                    continue;
                }
                cells.push(Cell::new(length, rate, range));
            }
        }
    }
    cells
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Table4,
    Table5,
    Fig12,
    Fig13,
    Fig15,
    Fig16,
    Fig17,
    Fig18,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::Table4,
        Preset::Table5,
        Preset::Fig12,
        Preset::Fig13,
        Preset::Fig15,
        Preset::Fig16,
        Preset::Fig17,
        Preset::Fig18,
    ];

    pub fn protocol(self) -> MacProtocol {
        match self {
            Preset::Table4 | Preset::Fig12 | Preset::Fig13 | Preset::Fig15 | Preset::Fig18 => MacProtocol::Csma,
            Preset::Table5 | Preset::Fig16 | Preset::Fig17 => MacProtocol::Stdma,
        }
    }

    pub fn cells(self) -> Vec<Cell> {
        match self {
            Preset::Table4 | Preset::Table5 => table_cells(),
            Preset::Fig12 | Preset::Fig16 => vec![Cell::new(500, 10.0, 1000.0)],
            Preset::Fig13 => vec![Cell::new(500, 10.0, 500.0)],
            Preset::Fig15 => vec![Cell::new(500, 10.0, 500.0), Cell::new(500, 10.0, 1000.0)],
            Preset::Fig17 | Preset::Fig18 => [100, 300, 500].map(|l| Cell::new(l, 10.0, 1000.0)).to_vec(),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Preset::Table4 => "table4",
            Preset::Table5 => "table5",
            Preset::Fig12 => "fig12",
            Preset::Fig13 => "fig13",
            Preset::Fig15 => "fig15",
            Preset::Fig16 => "fig16",
            Preset::Fig17 => "fig17",
            Preset::Fig18 => "fig18",
        };
        f.write_str(s)
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown preset {s:?}"))
    }
}

/// All runs of one cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub protocol: MacProtocol,
    pub per_seed: Vec<MetricsReport>,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl CellResult {
    pub fn merged(&self) -> MetricsReport {
        MetricsReport::merge(&self.per_seed)
    }

    pub fn seed_rows(&self) -> Vec<DropRow> {
        self.per_seed.iter().map(drop_row).collect()
    }

    /// Drop percentages averaged over seeds (mean, best and worst alike).
    pub fn drop_row(&self) -> DropRow {
        let rows = self.seed_rows();
        let avg = |f: fn(&DropRow) -> f64| mean_sd(&rows.iter().map(f).collect::<Vec<_>>()).0;
        DropRow {
            length: self.cell.length,
            rate_hz: self.cell.rate_hz,
            range_m: self.cell.range_m,
            mean_drop_pct: avg(|r| r.mean_drop_pct),
            best_pct: avg(|r| r.best_pct),
            worst_pct: avg(|r| r.worst_pct),
        }
    }

    pub fn drop_spread(&self) -> (f64, f64) {
        mean_sd(&self.seed_rows().iter().map(|r| r.mean_drop_pct).collect::<Vec<_>>())
    }

    pub fn reuse_spread(&self) -> (f64, f64) {
        mean_sd(&self.per_seed.iter().map(|r| 100.0 * r.slot_reuse_fraction()).collect::<Vec<_>>())
    }

    pub fn reuse_row(&self) -> ReuseRow {
        let merged = reuse_row(&self.merged());
        ReuseRow {
            reuse_pct: self.reuse_spread().0,
            ..merged
        }
    }
}

/// `count` consecutive seeds starting at `first`.
pub fn seed_list(first: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| first + i).collect()
}

/// Runs every (cell, seed) pair on up to `threads` worker threads. Results
/// come back in cell order with seeds in the given order, independent of
/// scheduling.
pub fn run_cells(
    base: &ScenarioConfig,
    cells: &[Cell],
    protocol: MacProtocol,
    seeds: &[u64],
    threads: usize,
) -> Result<Vec<CellResult>, SweepError> {
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..seeds.len()).map(move |s| (c, s)))
        .collect();
    let configs: Vec<ScenarioConfig> = cells.iter().map(|c| c.apply(base, protocol)).collect();
    let slots: Vec<Mutex<Option<Result<MetricsReport, EngineError>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = threads.clamp(1, jobs.len().max(1));
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(c, s)) = jobs.get(j) else {
                    break;
                };
                let out = run(&configs[c], seeds[s]);
                *slots[j].lock().expect("result slot") = Some(out);
            });
        }
    });
    let mut results: Vec<CellResult> = cells
        .iter()
        .map(|&cell| CellResult {
            cell,
            protocol,
            per_seed: Vec::with_capacity(seeds.len()),
        })
        .collect();
    for (slot, &(c, _)) in slots.into_iter().zip(&jobs) {
        let report = slot.into_inner().expect("result slot").expect("every job ran")?;
        results[c].per_seed.push(report);
    }
    Ok(results)
}

pub fn available_threads() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

pub const SEED_SPREAD: &str = "seed_spread.csv";

/// Writes one sub-directory per cell with that cell's merged report, plus
/// seed-averaged tables at the top level.
pub fn write_sweep(dir: &Path, results: &[CellResult]) -> Result<(), SweepError> {
    fs::create_dir_all(dir).map_err(|source| SweepError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for r in results {
        export_csv(&r.merged(), &dir.join(r.cell.label()))?;
    }
    let drops: Vec<DropRow> = results.iter().map(CellResult::drop_row).collect();
    write_drops_table(dir, &drops)?;
    let reuse: Vec<ReuseRow> = results.iter().map(CellResult::reuse_row).collect();
    write_slot_reuse(dir, &reuse)?;

    let path = dir.join(SEED_SPREAD);
    let mut w = csv::Writer::from_path(&path).map_err(|source| ExportError::Csv {
        path: path.clone(),
        source,
    })?;
    let csv_err = |source| ExportError::Csv {
        path: path.clone(),
        source,
    };
    w.write_record([
        "length",
        "rate_hz",
        "range_m",
        "protocol",
        "seeds",
        "mean_drop_pct",
        "sd_drop_pct",
        "mean_reuse_pct",
        "sd_reuse_pct",
        "mean_neighbors",
    ])
    .map_err(csv_err)?;
    for r in results {
        let (dm, ds) = r.drop_spread();
        let (rm, rs) = r.reuse_spread();
        w.write_record([
            r.cell.length.to_string(),
            r.cell.rate_hz.to_string(),
            format!("{:.1}", r.cell.range_m),
            r.protocol.to_string(),
            r.per_seed.len().to_string(),
            format!("{dm:.4}"),
            format!("{ds:.4}"),
            format!("{rm:.4}"),
            format!("{rs:.4}"),
            format!("{:.1}", r.merged().mean_neighbors()),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| ExportError::Io { path: path.clone(), source })?;

    let seeds: Vec<u64> = results.first().map(|r| r.per_seed.iter().flat_map(|p| p.seeds.clone()).collect()).unwrap_or_default();
    let hash = results.first().map(|r| r.per_seed[0].config_hash.clone()).unwrap_or_default();
    let wall: f64 = results.iter().flat_map(|r| &r.per_seed).map(|p| p.wall_time_s).sum();
    write_run_meta(dir, &seeds, &hash, wall)?;
    Ok(())
}
