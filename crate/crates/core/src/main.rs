use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use sidewinder::harness::{run_sweep, ExperimentKind};
use sidewinder::io::{self, RunConfig};

/// Quasi-static sidewinding simulator.
#[derive(Debug, Parser)]
#[command(name = "sidewinder", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,
    /// Write trajectory logs for every trial.
    #[arg(long, global = true)]
    trace: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the single trial described by the `single` section.
    Run,
    /// Run the configured experiment and write tables and charts.
    Sweep,
    /// Redraw charts from an existing `aggregates.csv`.
    Plot,
    /// Check the config and print the resolved echo.
    Validate,
    /// Measure the heading calibration for the configured gait and G grid.
    Calibrate,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Serialize)]
struct Calibration {
    amp_h_deg: f64,
    xi_h: f64,
    g: f64,
    heading_rad: f64,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn load(cli: &Cli, default: ExperimentKind) -> Result<RunConfig, ExitCode> {
    let mut cfg = match &cli.config {
        Some(p) => io::load_config(p).map_err(|e| fail(EXIT_CONFIG, e))?,
        None => RunConfig::new(default),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.trace |= cli.trace;
    Ok(cfg)
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: &Cli) -> Result<(), ExitCode> {
    let io_fail = |e: io::IoError| fail(1, e);
    match cli.command {
        Command::Validate => {
            let cfg = load(cli, ExperimentKind::Single)?;
            print!("{}", cfg.echo());
        }
        Command::Run => {
            let mut cfg = load(cli, ExperimentKind::Single)?;
            cfg.experiment = ExperimentKind::Single;
            let spec = cfg.single_spec().map_err(|e| fail(EXIT_CONFIG, e))?;
            let sweep = run_sweep(ExperimentKind::Single, &[spec], 1).map_err(|e| fail(EXIT_CONFIG, e))?;
            report(&io::write_results(&sweep, &cfg, &cfg.output_dir).map_err(io_fail)?);
            let r = &sweep.rows[0];
            println!(
                "{}: success={} failure_mode={} displacement_per_cycle_m={:?} cot={:?}",
                r.label,
                r.success,
                r.failure_mode.as_str(),
                r.displacement_per_cycle,
                r.cot
            );
            if r.failure_mode == sidewinder::metrics::FailureMode::Solver {
                return Err(fail(EXIT_SOLVER, "solver failed during the trial"));
            }
        }
        Command::Sweep => {
            let cfg = load(cli, ExperimentKind::FlatSweep)?;
            let specs = cfg.trial_specs().map_err(|e| fail(EXIT_CONFIG, e))?;
            let sweep = run_sweep(cfg.experiment, &specs, cli.parallel).map_err(|e| fail(EXIT_CONFIG, e))?;
            report(&io::write_results(&sweep, &cfg, &cfg.output_dir).map_err(io_fail)?);
            if cfg.experiment != ExperimentKind::Single {
                report(&io::emit_plots(&sweep, &cfg.output_dir).map_err(io_fail)?);
            }
        }
        Command::Plot => {
            let cfg = load(cli, ExperimentKind::FlatSweep)?;
            let dir: &Path = &cfg.output_dir;
            let aggs = io::read_aggregates(&dir.join("aggregates.csv")).map_err(io_fail)?;
            let charts = io::plots_for(cfg.experiment, &aggs).map_err(io_fail)?;
            for (name, svg) in charts {
                let path = dir.join(name);
                std::fs::write(&path, svg).map_err(|e| fail(1, format!("{}: {e}", path.display())))?;
                println!("wrote {}", path.display());
            }
        }
        Command::Calibrate => {
            let cfg = load(cli, ExperimentKind::FlatSweep)?;
            let setup = cfg.setup();
            let mut out = Vec::new();
            for &g in cfg.g_grid() {
                let h = setup.calibrate(&setup.gait, g).map_err(|e| fail(EXIT_SOLVER, e))?;
                println!("G = {g}: heading {:.6} rad ({:.3} deg)", h, h.to_degrees());
                out.push(Calibration {
                    amp_h_deg: setup.gait.amp_h.to_degrees(),
                    xi_h: setup.gait.xi_h,
                    g,
                    heading_rad: h,
                });
            }
            std::fs::create_dir_all(&cfg.output_dir).map_err(|e| fail(1, e))?;
            let path = cfg.output_dir.join("calibration.json");
            let text = serde_json::to_string_pretty(&out).expect("calibration serialises") + "\n";
            std::fs::write(&path, text).map_err(|e| fail(1, format!("{}: {e}", path.display())))?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
