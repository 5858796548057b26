use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use spde_ftle::analysis::RegimeCase;
use spde_ftle::{Error, ExperimentConfig, ModelPreset};

mod commands;

/// Amplitude-equation and finite-time Lyapunov exponent experiments for
/// spectral-Galerkin SPDEs.
#[derive(Debug, Parser)]
#[command(name = "spde-ftle", version, about)]
struct Cli {
    /// Experiment configuration (TOML); defaults are used without one.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the master seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Worker threads for ensembles (default: all cores).
    #[arg(long, global = true, value_name = "K")]
    workers: Option<usize>,

    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true, value_name = "DIR", env = "SPDE_FTLE_OUT")]
    out: Option<PathBuf>,

    /// Print only failures.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one path per ε and export the stored states as CSV.
    Simulate {
        /// Run a single ε instead of the configured grid.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        stream: Option<u64>,
    },
    /// FTLE ensembles per ε with bound checks.
    Ftle {
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Convergence sweep over the ε grid with slope fits.
    Sweep {
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Sign statistics of one (ν, σ) regime.
    Regime {
        #[arg(long)]
        case: Option<RegimeCase>,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Itô-reduction residual of one path per ε.
    ValidateIto {
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        stream: Option<u64>,
    },
    /// Print the reduced cubic coefficient of a model preset.
    DeriveFc {
        #[arg(long)]
        preset: Option<ModelPreset>,
        #[arg(long)]
        modes: Option<usize>,
    },
    /// Index the result files of a directory by config hash.
    ReportIndex {
        /// Directory to index (default: the output directory).
        #[arg(long = "in", value_name = "DIR")]
        input: Option<PathBuf>,
    },
}

impl Command {
    /// Fold subcommand overrides into the configuration so that they enter
    /// its hash.
    fn apply(&self, config: &mut ExperimentConfig) {
        match *self {
            Command::Simulate { eps, stream } | Command::ValidateIto { eps, stream } => {
                if let Some(e) = eps {
                    config.scaling.eps = vec![e];
                }
                if let Some(s) = stream {
                    config.run.first_stream = s;
                }
            }
            Command::Ftle { eps, paths } => {
                if let Some(e) = eps {
                    config.scaling.eps = vec![e];
                }
                if let Some(p) = paths {
                    config.run.paths = p;
                }
            }
            Command::Sweep { paths } => {
                if let Some(p) = paths {
                    config.run.paths = p;
                }
            }
            Command::Regime { case, paths } => {
                if let Some(c) = case {
                    config.regime.case = c;
                }
                if let Some(p) = paths {
                    config.regime.paths = p;
                }
            }
            Command::DeriveFc { preset, modes } => {
                if let Some(p) = preset {
                    config.model.preset = p;
                }
                if let Some(m) = modes {
                    config.model.modes = m;
                }
            }
            Command::ReportIndex { .. } => {}
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.display().to_string();
    }
    cli.command.apply(&mut config);
    let problems = config.problems();
    if problems.is_empty() {
        Ok(config)
    } else {
        Err(Error::Config(problems))
    }
}

fn error_report(err: &Error) -> serde_json::Value {
    let messages = match err {
        Error::Config(list) => list.clone(),
        other => vec![other.to_string()],
    };
    json!({ "status": "error", "errors": messages })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(k) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }

    let outcome = load_config(&cli).and_then(|config| commands::run(&cli.command, &config));
    match outcome {
        Ok(outcome) => {
            if !cli.quiet {
                for line in &outcome.summaries {
                    println!("{line}");
                }
            }
            let failures: Vec<_> = outcome.checks.iter().filter(|c| !c.passed).collect();
            if failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                println!("{}", json!({ "status": "fail", "failures": failures }));
                ExitCode::from(1)
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            println!("{}", error_report(&err));
            ExitCode::from(2)
        }
    }
}
