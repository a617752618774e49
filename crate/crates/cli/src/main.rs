mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use legalprompt::corpus::SplitKind;
use legalprompt::prompting::Strategy;

use crate::config::{ChatProviderKind, RunConfig, WindowClassifierKind};
use crate::error::{CliError, CliResult, Failure, ResultExt};

/// Retrieval-augmented few-shot classification of legal answer candidates.
#[derive(Debug, Parser)]
#[command(name = "legalprompt", version, arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving every output file.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    train: Option<PathBuf>,
    #[arg(long, global = true)]
    validation: Option<PathBuf>,
    #[arg(long, global = true)]
    test: Option<PathBuf>,
    #[arg(long, global = true)]
    fixed_shots: Option<PathBuf>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check every configured dataset, the fixed shots and the template.
    ValidateData,
    /// Report introduction/question pairs shared between TRAIN and other splits.
    AuditLeakage,
    /// Embed the training split and write the exemplar index.
    BuildIndex,
    /// Classify one split with one strategy.
    Predict {
        #[arg(long)]
        strategy: Strategy,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Classify one split with every configured strategy.
    PredictAll {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Combine strategy predictions by threshold voting.
    EnsembleVote {
        #[arg(long, default_value = "validation")]
        split: SplitKind,
        /// Comma-separated member strategies.
        #[arg(long, value_delimiter = ',')]
        members: Option<Vec<Strategy>>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Score every member subset at every threshold.
    EnsembleSearch {
        #[arg(long, default_value = "validation")]
        split: SplitKind,
        /// Also score each configuration on this split.
        #[arg(long)]
        holdout_split: Option<SplitKind>,
        #[arg(long, default_value_t = 1)]
        min_size: usize,
        /// Comma-separated thresholds; 0.1 to 0.9 by default.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
    },
    /// Score prediction files against gold labels.
    Score {
        /// JSON-lines files with `id` and `label` fields.
        #[arg(long, required = true, num_args = 1..)]
        predictions: Vec<PathBuf>,
        /// JSON-lines gold labels; the split's dataset by default.
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long, default_value = "validation")]
        split: SplitKind,
    },
    /// Score every prediction file of a split and write the report.
    Report {
        #[arg(long, default_value = "validation")]
        split: SplitKind,
    },
    /// Windowed encoder baseline with per-window voting.
    BaselineWindows {
        #[arg(long, default_value = "validation")]
        split: SplitKind,
        #[arg(long)]
        classifier: Option<WindowClassifierKind>,
        #[arg(long)]
        endpoint: Option<String>,
    },
    /// Print the effective configuration as TOML.
    PrintConfig,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, default_value = "validation")]
    split: SplitKind,
    #[arg(long)]
    provider: Option<ChatProviderKind>,
}

fn effective_config(global: &GlobalArgs) -> CliResult<RunConfig> {
    let mut config = match &global.config {
        Some(path) => RunConfig::load(path).fail(Failure::Config, format!("reading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(dir) = &global.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(jobs) = global.jobs {
        config.jobs = jobs;
    }
    let paths = [
        (&global.train, &mut config.data.train),
        (&global.validation, &mut config.data.validation),
        (&global.test, &mut config.data.test),
        (&global.fixed_shots, &mut config.data.fixed_shots),
    ];
    for (flag, slot) in paths {
        if let Some(p) = flag {
            *slot = Some(p.clone());
        }
    }
    if let Some(dir) = &global.cache_dir {
        config.cache_dir = Some(dir.clone());
    }
    config.validate().map_err(CliError::config)?;
    Ok(config)
}

fn run(cli: Cli) -> CliResult<()> {
    let mut config = effective_config(&cli.global)?;
    match cli.command {
        Command::ValidateData => commands::validate_data(&config),
        Command::AuditLeakage => commands::audit_leakage(&config),
        Command::BuildIndex => commands::build_index(&config).map(|_| ()),
        Command::Predict { strategy, run } => {
            if let Some(p) = run.provider {
                config.chat.provider = p;
            }
            commands::predict(&config, &[strategy], run.split)
        }
        Command::PredictAll { run } => {
            if let Some(p) = run.provider {
                config.chat.provider = p;
            }
            let strategies = config.strategies.clone();
            commands::predict(&config, &strategies, run.split)
        }
        Command::EnsembleVote {
            split,
            members,
            threshold,
        } => {
            if let Some(m) = members {
                config.ensemble.members = m;
            }
            if let Some(t) = threshold {
                config.ensemble.threshold = t;
            }
            config.validate().map_err(CliError::config)?;
            commands::ensemble_vote(&config, split)
        }
        Command::EnsembleSearch {
            split,
            holdout_split,
            min_size,
            thresholds,
        } => commands::ensemble_search(&config, split, holdout_split, min_size, thresholds),
        Command::Score {
            predictions,
            gold,
            split,
        } => commands::score(&config, &predictions, gold.as_deref(), split),
        Command::Report { split } => commands::report(&config, split),
        Command::BaselineWindows {
            split,
            classifier,
            endpoint,
        } => {
            if let Some(c) = classifier {
                config.window.classifier = c;
            }
            if endpoint.is_some() {
                config.window.endpoint = endpoint;
            }
            commands::baseline_windows(&config, split)
        }
        Command::PrintConfig => {
            print!("{}", config.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
