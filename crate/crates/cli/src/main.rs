//! Command-line driver: single runs, the ten-scenario sweep and paper presets.
//!
//! Failures print one line `error kind=<usage|config|runtime>: <message>`
//! and exit with 2, 3 or 4 respectively.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vanet_mac::config::{load_config_file, MacProtocol, ScenarioConfig};
use vanet_mac::engine::run;
use vanet_mac::metrics::{drop_row, export_csv, MetricsReport};
use vanet_mac::sweep::{available_threads, run_cells, seed_list, table_cells, write_sweep, Cell, CellResult, Preset};

#[derive(Parser, Debug)]
#[command(name = "vanet-mac", version, about = "802.11p CSMA/CA vs STDMA highway broadcast simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one scenario with one seed.
    Run {
        #[command(flatten)]
        common: Common,
        /// Master seed (defaults to the config's rng_seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Road length and duration multiplier.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Run the ten traffic scenarios, averaged over seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeds: Seeds,
        #[arg(long, default_value_t = 0.25)]
        scale: f64,
    },
    /// Run the scenario grid behind one table or figure.
    Reproduce {
        /// table4, table5, fig12, fig13, fig15, fig16, fig17 or fig18.
        preset: Preset,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeds: Seeds,
        #[arg(long, default_value_t = 0.25)]
        scale: f64,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file, or the name of one in configs/.
    #[arg(long)]
    config: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config's MAC protocol.
    #[arg(long)]
    protocol: Option<MacProtocol>,
    /// Mobility tick in milliseconds.
    #[arg(long)]
    mobility_tick: Option<f64>,
    /// Suppress the summary on stdout.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct Seeds {
    /// First seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of consecutive seeds per cell.
    #[arg(long, default_value_t = 5)]
    seeds: usize,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn report(&self) -> ExitCode {
        let (kind, msg, code) = match self {
            Failure::Config(m) => ("config", m, 3),
            Failure::Runtime(m) => ("runtime", m, 4),
        };
        eprintln!("error kind={kind}: {}", msg.replace('\n', " "));
        ExitCode::from(code)
    }
}

/// Finds a config given as a path or as a name under `configs/`.
fn resolve_config(name: &str) -> PathBuf {
    let given = PathBuf::from(name);
    let mut candidates = vec![given.clone(), given.with_extension("toml")];
    for root in [Path::new("configs").to_path_buf(), Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")] {
        candidates.push(root.join(name));
        candidates.push(root.join(format!("{name}.toml")));
    }
    candidates.into_iter().find(|p| p.is_file()).unwrap_or(given)
}

fn load(common: &Common, scale: f64) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &common.config {
        Some(name) => load_config_file(&resolve_config(name)).map_err(|e| Failure::Config(e.to_string()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(p) = common.protocol {
        cfg.mac_protocol = p;
    }
    if let Some(t) = common.mobility_tick {
        cfg.mobility_tick = t;
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Failure::Config(format!("invalid value for `scale`: must be positive, got {scale}")));
    }
    let cfg = cfg.scaled(scale);
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn summary(r: &MetricsReport) -> String {
    let row = drop_row(r);
    let mut s = format!(
        "{} {}B {}Hz {}m: drops mean {:.2}% best {:.2}% worst {:.2}%, max run {}, neighbours {:.1}",
        r.protocol,
        row.length,
        row.rate_hz,
        row.range_m,
        row.mean_drop_pct,
        row.best_pct,
        row.worst_pct,
        r.max_consecutive_drops(),
        r.mean_neighbors(),
    );
    match r.protocol {
        MacProtocol::Csma => s += &format!(", concurrent within 500 m {:.2}%", 100.0 * r.concurrent_within(500.0)),
        MacProtocol::Stdma => {
            s += &format!(
                ", slot reuse {:.2}%, sharer distance {}, guarantee violations {}",
                100.0 * r.slot_reuse_fraction(),
                r.mean_sharer_distance().map_or("n/a".into(), |d| format!("{d:.1} m")),
                r.stdma.violations()
            )
        }
    }
    if let Some(m) = r.mac_to_mac.mean() {
        s += &format!(
            ", mac-to-mac mean {} us ({:.2}% within 100 ms)",
            m.display_micros(),
            100.0 * r.mac_to_mac.deadline_fraction()
        );
    }
    s
}

fn run_grid(
    common: &Common,
    seeds: &Seeds,
    scale: f64,
    cells: &[Cell],
    protocol: MacProtocol,
) -> Result<Vec<CellResult>, Failure> {
    let base = load(common, scale)?;
    let seeds = seed_list(seeds.seed, seeds.seeds.max(1));
    let results =
        run_cells(&base, cells, protocol, &seeds, available_threads()).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_sweep(&common.out, &results).map_err(|e| Failure::Runtime(e.to_string()))?;
    if !common.quiet {
        for r in &results {
            println!("{}", summary(&r.merged()));
        }
    }
    Ok(results)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { common, seed, scale } => {
            let cfg = load(&common, scale)?;
            let report = run(&cfg, seed.unwrap_or(cfg.rng_seed)).map_err(|e| Failure::Runtime(e.to_string()))?;
            export_csv(&report, &common.out).map_err(|e| Failure::Runtime(e.to_string()))?;
            if !common.quiet {
                println!("{}", summary(&report));
            }
        }
        Command::Sweep { common, seeds, scale } => {
            let protocol = match common.protocol {
                Some(p) => p,
                None => load(&common, scale)?.mac_protocol,
            };
            run_grid(&common, &seeds, scale, &table_cells(), protocol)?;
        }
        Command::Reproduce {
            preset,
            common,
            seeds,
            scale,
        } => {
            let protocol = common.protocol.unwrap_or(preset.protocol());
            run_grid(&common, &seeds, scale, &preset.cells(), protocol)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            eprintln!("error kind=usage: {line}");
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
