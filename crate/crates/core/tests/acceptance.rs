//! The ten acceptance criteria, reported one line each.
//!
//! Grids run at scale 0.25 with 5 seeds; `VANET_ACCEPTANCE_SCALE` and
//! `VANET_ACCEPTANCE_SEEDS` override both (smaller values give a quick,
//! statistically weaker pass).

mod common;

use std::io::Write;

use vanet_mac::config::{csma_tx_time, slots_per_frame, stdma_tx_time, MacProtocol, ScenarioConfig, TimingParams};
use vanet_mac::engine::run;
use vanet_mac::metrics::{export_csv, DropRow};
use vanet_mac::sweep::{available_threads, run_cells, seed_list, table_cells, Cell};
use vanet_mac::time::Nanos;

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

/// What the criteria need from one cell, kept instead of the full reports.
#[derive(Debug, Clone)]
struct CellSummary {
    cell: Cell,
    drops: DropRow,
    max_run: u32,
    concurrent_500: f64,
    reuse_pct: f64,
    sharer_m: Option<f64>,
    neighbours: f64,
    dropped: u64,
    violations: u64,
    stdma_tx: u64,
}

fn grid(protocol: MacProtocol, scale: f64, seeds: &[u64]) -> Vec<CellSummary> {
    let base = ScenarioConfig::default().scaled(scale);
    table_cells()
        .into_iter()
        .map(|cell| {
            let result = run_cells(&base, &[cell], protocol, seeds, available_threads())
                .expect("grid run")
                .remove(0);
            let merged = result.merged();
            let s = CellSummary {
                cell,
                drops: result.drop_row(),
                max_run: merged.max_consecutive_drops(),
                concurrent_500: merged.concurrent_within(500.0),
                reuse_pct: result.reuse_spread().0,
                sharer_m: merged.mean_sharer_distance(),
                neighbours: merged.mean_neighbors(),
                dropped: merged.conservation.dropped,
                violations: merged.stdma.violations(),
                stdma_tx: merged.stdma.transmissions,
            };
            report(&format!(
                "  {protocol} {:<16} drop {:6.2}% best {:6.2}% worst {:6.2}% run {:4} conc500 {:5.1}% reuse {:5.2}% sharer {} neigh {:6.1}",
                cell.label(),
                s.drops.mean_drop_pct,
                s.drops.best_pct,
                s.drops.worst_pct,
                s.max_run,
                100.0 * s.concurrent_500,
                s.reuse_pct,
                s.sharer_m.map_or("n/a".to_string(), |d| format!("{d:.0} m")),
                s.neighbours,
            ));
            s
        })
        .collect()
}

/// Bypasses the test harness's output capture so the lines always show.
fn report(line: &str) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn find(cells: &[CellSummary], length: u32, rate: f64, range: f64) -> &CellSummary {
    cells
        .iter()
        .find(|c| c.cell.length == length && c.cell.rate_hz == rate && c.cell.range_m == range)
        .expect("cell in grid")
}

fn near(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

struct Verdicts(Vec<(u32, bool, String)>);

impl Verdicts {
    fn record(&mut self, n: u32, pass: bool, detail: String) {
        report(&format!("criterion {n:2}: {} {detail}", if pass { "PASS" } else { "FAIL" }));
        self.0.push((n, pass, detail));
    }
}

fn table3() -> (bool, String) {
    let t = TimingParams::default();
    let mut wrong = Vec::new();
    for (len, csma, stdma, slots) in [(100, 321, 325, 3076), (300, 854, 858, 1165), (500, 1387, 1391, 718)] {
        let c = csma_tx_time(len, &t).display_micros();
        let s = stdma_tx_time(len, &t).display_micros();
        let cfg = ScenarioConfig {
            packet_length_mix: vec![(len, 1.0)],
            ..ScenarioConfig::default()
        };
        let n = slots_per_frame(Nanos::from_secs_f64(1.0), cfg.stdma_slot_duration());
        if (c, s, n) != (csma, stdma, slots) {
            wrong.push(format!("{len} B: {c}/{s}/{n}"));
        }
    }
    (wrong.is_empty(), if wrong.is_empty() { "all nine entries exact".into() } else { wrong.join(", ") })
}

fn table4(csma: &[CellSummary]) -> (bool, String) {
    let pct = |l, r, g| find(csma, l, r, g).drops.mean_drop_pct;
    let mut fails = Vec::new();
    for c in csma.iter().filter(|c| c.cell.length == 100) {
        if c.drops.mean_drop_pct > 2.0 {
            fails.push(format!("{} {:.2}%", c.cell.label(), c.drops.mean_drop_pct));
        }
    }
    for (l, r, g, target) in [(500, 10.0, 500.0, 23.0), (300, 10.0, 1000.0, 36.0), (500, 5.0, 1000.0, 34.0), (500, 10.0, 1000.0, 54.0)] {
        let v = pct(l, r, g);
        if !near(v, target, 10.0) {
            fails.push(format!("{l}B/{r}Hz/{g}m {v:.2}% vs {target}%"));
        }
    }
    for c in csma {
        let Cell { length, rate_hz, range_m } = c.cell;
        for longer in csma.iter().filter(|o| o.cell.rate_hz == rate_hz && o.cell.range_m == range_m && o.cell.length > length) {
            if c.drops.mean_drop_pct > longer.drops.mean_drop_pct {
                fails.push(format!("length order {} > {}", c.cell.label(), longer.cell.label()));
            }
        }
        if range_m == 500.0 {
            let wide = find(csma, length, rate_hz, 1000.0);
            if c.drops.mean_drop_pct > wide.drops.mean_drop_pct {
                fails.push(format!("range order {} > {}", c.cell.label(), wide.cell.label()));
            }
        }
    }
    let headline = format!("500B/10Hz/1000m mean drop {:.2}% (target 54 +/- 10)", pct(500, 10.0, 1000.0));
    if fails.is_empty() {
        (true, headline)
    } else {
        (false, format!("{headline}; {}", fails.join("; ")))
    }
}

#[test]
fn acceptance_criteria() {
    let scale: f64 = env_or("VANET_ACCEPTANCE_SCALE", 0.25);
    let seeds = seed_list(1, env_or("VANET_ACCEPTANCE_SEEDS", 5usize));
    report(&format!("acceptance: scale {scale}, {} seeds", seeds.len()));
    let mut v = Verdicts(Vec::new());

    let (ok, detail) = table3();
    v.record(1, ok, detail);

    let csma = grid(MacProtocol::Csma, scale, &seeds);
    let (ok, detail) = table4(&csma);
    v.record(2, ok, detail);

    let heavy = find(&csma, 500, 10.0, 1000.0);
    let medium = find(&csma, 500, 10.0, 500.0);
    v.record(
        3,
        heavy.drops.worst_pct >= 70.0 && medium.drops.worst_pct >= 45.0,
        format!(
            "worst node {:.2}% at 1000 m (need >= 70), {:.2}% at 500 m (need >= 45)",
            heavy.drops.worst_pct, medium.drops.worst_pct
        ),
    );
    v.record(4, heavy.max_run >= 50, format!("longest drop run {} (need >= 50)", heavy.max_run));

    let stdma = grid(MacProtocol::Stdma, scale, &seeds);
    let dropped: u64 = stdma.iter().map(|c| c.dropped).sum();
    let violations: u64 = stdma.iter().map(|c| c.violations).sum();
    let sent: u64 = stdma.iter().map(|c| c.stdma_tx).sum();
    v.record(
        5,
        dropped == 0 && violations == 0 && sent > 0,
        format!("{sent} transmissions, {dropped} drops, {violations} bound/reservation violations"),
    );

    let mut fails = Vec::new();
    for c in stdma.iter().filter(|c| c.cell.length == 100 || (c.cell.range_m == 500.0 && c.cell.rate_hz == 5.0)) {
        if c.reuse_pct > 2.0 {
            fails.push(format!("{} reuse {:.2}%", c.cell.label(), c.reuse_pct));
        }
    }
    let busy = find(&stdma, 500, 10.0, 1000.0);
    let sharer = busy.sharer_m.unwrap_or(f64::NAN);
    if !near(busy.reuse_pct, 30.0, 10.0) {
        fails.push(format!("500B_10Hz_1000m reuse {:.2}% vs 30%", busy.reuse_pct));
    }
    if !near(sharer, 800.0, 150.0) {
        fails.push(format!("sharer distance {sharer:.0} m vs 800 m"));
    }
    v.record(
        6,
        fails.is_empty(),
        format!("500B/10Hz/1000m reuse {:.2}%, sharer {sharer:.0} m; {}", busy.reuse_pct, fails.join("; ")),
    );

    v.record(
        7,
        near(100.0 * heavy.concurrent_500, 53.0, 10.0),
        format!("concurrent within 500 m {:.2}% (target 53 +/- 10)", 100.0 * heavy.concurrent_500),
    );

    let (instances, mismatches) = common::exhaustive_selection_check();
    v.record(8, mismatches.is_empty(), format!("{instances} scripted instances, {} mismatches", mismatches.len()));

    let mut differing = Vec::new();
    for p in [MacProtocol::Csma, MacProtocol::Stdma] {
        let cfg = Cell::new(500, 10.0, 1000.0).apply(&ScenarioConfig::default().scaled(scale.min(0.05)), p);
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            export_csv(&run(&cfg, 42).unwrap(), d.path()).unwrap();
        }
        let read = |d: &tempfile::TempDir| {
            let mut files: Vec<(String, String)> = std::fs::read_dir(d.path())
                .unwrap()
                .map(|e| {
                    let p = e.unwrap().path();
                    let name = p.file_name().unwrap().to_string_lossy().into_owned();
                    let text = std::fs::read_to_string(&p).unwrap();
                    // wall time is the one field that cannot repeat
                    let text = if name == "run_meta.csv" {
                        text.lines().map(|l| l.rsplit_once(',').map_or(l, |x| x.0)).collect::<Vec<_>>().join("\n")
                    } else {
                        text
                    };
                    (name, text)
                })
                .collect();
            files.sort();
            files
        };
        let (a, b) = (read(&dirs[0]), read(&dirs[1]));
        if a != b || a.len() < 6 {
            differing.push(p.to_string());
        }
    }
    v.record(
        9,
        differing.is_empty(),
        if differing.is_empty() {
            "repeated CSMA and STDMA runs give identical CSVs (wall time excluded)".into()
        } else {
            format!("differing output: {}", differing.join(", "))
        },
    );

    let mean_at = |range: f64| {
        let xs: Vec<f64> = csma.iter().filter(|c| c.cell.range_m == range).map(|c| c.neighbours).collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    let (n1000, n500) = (mean_at(1000.0), mean_at(500.0));
    v.record(
        10,
        near(n1000, 230.0, 0.25 * 230.0) && near(n500, 115.0, 0.25 * 115.0),
        format!("mean neighbours {n1000:.1} at 1000 m (230 +/- 25%), {n500:.1} at 500 m (115 +/- 25%)"),
    );

    let failed: Vec<u32> = v.0.iter().filter(|x| !x.1).map(|x| x.0).collect();
    report(&format!("acceptance: {} of 10 criteria pass", 10 - failed.len()));
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
