//! `lanebma`: ingest highway datasets, predict multi-modal target
//! trajectories, and evaluate or export the results.

mod archive;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use lanebma_core::config::{RunConfig, View};

use commands::{BatchFailure, Dataset};

#[derive(Parser, Debug)]
#[command(name = "lanebma", version, about)]
struct Cli {
    /// Run configuration (JSON); defaults apply to omitted fields.
    #[arg(long, global = true, env = "LANEBMA_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads for batch processing (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DatasetArg {
    Ngsim,
    Highd,
    Synthetic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ViewArg {
    Bird,
    Driver,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a dataset recording into a scene archive.
    Ingest {
        #[arg(long, value_enum)]
        dataset: DatasetArg,
        /// NGSIM CSV, highD tracks CSV, or scene JSON / JSON Lines.
        #[arg(long)]
        input: PathBuf,
        /// highD recordingMeta CSV (default: next to the tracks file).
        #[arg(long)]
        meta: Option<PathBuf>,
        /// Archive directory to create.
        #[arg(long)]
        output: PathBuf,
    },
    /// Predict every scene of an archive.
    Predict {
        /// Scene archive directory or scene file.
        #[arg(long)]
        scenes: PathBuf,
        /// Prediction archive (JSON Lines); failures go to `<output>.errors.jsonl`.
        #[arg(long)]
        output: PathBuf,
        /// Master seed; each scene derives its own stream from it.
        #[arg(long)]
        seed: Option<u64>,
        /// Bird's-eye (full tracks) or driver view (occluded sensing from an ego).
        #[arg(long, value_enum)]
        view: Option<ViewArg>,
        /// Ignore surrounding vehicles.
        #[arg(long)]
        no_interaction: bool,
        /// Samples drawn per component.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Score predictions against the ground truth of a scene archive.
    Evaluate {
        /// Prediction archive written by `predict`.
        #[arg(long)]
        predictions: PathBuf,
        /// Scene archive the predictions were made from.
        #[arg(long)]
        scenes: PathBuf,
        /// Metric CSV to write.
        #[arg(long)]
        output: PathBuf,
        /// Dataset label for the report (default: archive source).
        #[arg(long)]
        dataset: Option<String>,
        /// View label for the report (default: configured view).
        #[arg(long, value_enum)]
        view: Option<ViewArg>,
    },
    /// Export plot-ready tables from a metric CSV or a prediction archive.
    Plotdata {
        /// Metric CSV from `evaluate`, or a prediction archive for sample points.
        #[arg(long)]
        input: PathBuf,
        /// `.json` for JSON output, CSV otherwise.
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the effective configuration.
    Config,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading config {}", path.display())),
        None => Ok(RunConfig::default()),
    }
}

fn view(v: ViewArg) -> View {
    match v {
        ViewArg::Bird => View::Bird,
        ViewArg::Driver => View::Driver,
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build_global()
            .context("configuring worker pool")?;
    }
    let mut config = load_config(&cli)?;
    match cli.command {
        Command::Ingest { dataset, input, meta, output } => {
            let dataset = match dataset {
                DatasetArg::Ngsim => Dataset::Ngsim,
                DatasetArg::Highd => Dataset::Highd,
                DatasetArg::Synthetic => Dataset::Synthetic,
            };
            commands::ingest(&config, dataset, &input, meta.as_deref(), &output)
        }
        Command::Predict { scenes, output, seed, view: v, no_interaction, samples } => {
            if let Some(seed) = seed {
                config.seed = seed;
            }
            if let Some(v) = v {
                config.view = view(v);
            }
            if no_interaction {
                config.interaction = false;
            }
            if let Some(samples) = samples {
                config.samples_per_component = samples;
            }
            config.validate()?;
            commands::predict(&config, &scenes, &output)
        }
        Command::Evaluate { predictions, scenes, output, dataset, view: v } => {
            if let Some(v) = v {
                config.view = view(v);
            }
            commands::evaluate(&config, &predictions, &scenes, &output, dataset.as_deref())
        }
        Command::Plotdata { input, output } => commands::plotdata(&input, &output),
        Command::Config => {
            println!("{}", config.to_json());
            Ok(())
        }
    }
}

/// 2 for numerical failures, 1 for everything else.
fn exit_code(error: &anyhow::Error) -> u8 {
    let numerical = error.chain().any(|cause| {
        cause
            .downcast_ref::<lanebma_core::Error>()
            .is_some_and(lanebma_core::Error::is_numerical)
            || cause.downcast_ref::<BatchFailure>().is_some_and(|b| b.numerical)
    });
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
