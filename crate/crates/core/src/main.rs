use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use photon_filter::experiments::{grid_axis, wigner_diagnostic};
use photon_filter::harness::{
    run_ensemble, write_outputs, ConfigLayer, Experiment, RunConfig, SchemeChoice,
};
use photon_filter::output::write_json;
use photon_filter::{Error, Result};

#[derive(Parser)]
#[command(
    name = "photon-filter",
    version,
    about = "Filtering of quantum systems driven by a single photon"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with run parameters; flags override its keys.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: ConfigLayer,
}

#[derive(Subcommand)]
enum Command {
    /// Unconditional master equation (single-mode cavity or Kerr pair).
    Me(Common),
    /// One conditional trajectory with its measurement record.
    Traj(Common),
    /// Ensemble of trajectories with means, standard errors and counts.
    Ensemble(Common),
    /// Max conditional shift histogram of the Kerr readout.
    KerrHistogram(Common),
    /// Wigner function of the no-click state of the single-mode cavity.
    Wigner {
        #[command(flatten)]
        common: Common,
        /// Conditioning time.
        #[arg(long, default_value_t = 2.8)]
        at: f64,
        /// Half width of the square phase-space grid.
        #[arg(long, default_value_t = 5.0)]
        extent: f64,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
    },
}

/// Subcommand defaults, then the file, then flags.
fn resolve(common: Common, defaults: ConfigLayer) -> Result<RunConfig> {
    let file = match &common.config {
        Some(p) => ConfigLayer::from_path(p)?,
        None => ConfigLayer::default(),
    };
    RunConfig::resolve(defaults.overlay(file).overlay(common.flags))
}

fn run_and_write(cfg: &RunConfig) -> Result<()> {
    info!("config {}", cfg.content_hash());
    let result = run_ensemble(cfg)?;
    if !result.failures.is_empty() {
        log::warn!(
            "{} of {} trajectories failed",
            result.failures.len(),
            result.n_traj
        );
    }
    for p in write_outputs(&result, cfg)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Me(c) => {
            let mut cfg = resolve(c, ConfigLayer::default())?;
            if cfg.experiment != Experiment::Kerr {
                cfg.experiment = Experiment::MeOnly;
            }
            cfg.scheme = SchemeChoice::Unconditional;
            run_and_write(&cfg)
        }
        Command::Traj(c) => {
            let defaults = ConfigLayer {
                n_traj: Some(1),
                saved_trajectories: Some(1),
                ..Default::default()
            };
            let cfg = resolve(c, defaults)?;
            if cfg.scheme == SchemeChoice::Unconditional {
                return Err(Error::validation(
                    "scheme",
                    "traj needs a measurement scheme",
                ));
            }
            run_and_write(&cfg)
        }
        Command::Ensemble(c) => run_and_write(&resolve(c, ConfigLayer::default())?),
        Command::KerrHistogram(c) => {
            let defaults = ConfigLayer {
                experiment: Some(Experiment::Kerr),
                scheme: Some(SchemeChoice::Photodetect),
                stop_after_jump: Some(true),
                n_traj: Some(5000),
                ..Default::default()
            };
            let cfg = resolve(c, defaults)?;
            if cfg.experiment != Experiment::Kerr {
                return Err(Error::validation(
                    "experiment",
                    "kerr-histogram runs the kerr experiment",
                ));
            }
            run_and_write(&cfg)
        }
        Command::Wigner {
            common,
            at,
            extent,
            step,
        } => {
            let cfg = resolve(common, ConfigLayer::default())?;
            if cfg.experiment == Experiment::Kerr {
                return Err(Error::Unsupported(
                    "wigner is defined for the single-mode cavity".into(),
                ));
            }
            if !(step > 0.0 && extent > 0.0) {
                return Err(Error::validation(
                    "step",
                    "grid step and extent must be positive",
                ));
            }
            let axis = grid_axis(-extent, extent, step);
            let d = wigner_diagnostic(&cfg.single_mode(), at, cfg.dt, &axis, &axis)?;
            let dir = &cfg.output_dir;
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("wigner.csv");
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            d.grid
                .write_csv(std::io::BufWriter::new(file))
                .map_err(|e| Error::io(&path, e))?;
            println!("{}", path.display());
            let path = dir.join("wigner_summary.json");
            write_json(&path, &d)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
