//! `mas-budget`: build pools, train, evaluate and report budget frontiers.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mas_budget::catalog::PoolingOptions;
use mas_budget::metrics::{Extension, HullMode};
use mas_budget::synth::LadderOptions;
use mas_budget::trainer::EvalMode;

use crate::config::RunArgs;

#[derive(Parser)]
#[command(name = "mas-budget", version, about = "Budget-aware configuration of LLM multi-agent systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Argmax,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum HullArg {
    Convex,
    Staircase,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExtensionArg {
    AppendBase,
    Flat,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic benchmark (catalog, simulated backbones, roles, queries)
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        train: usize,
        #[arg(long, default_value_t = 100)]
        eval: usize,
    },
    /// Pareto filter, cluster and balance a catalog into pools
    Pools {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 3)]
        min_size: usize,
        #[arg(long, default_value_t = 3)]
        max_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the configurator and write a checkpoint
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained run directory
    Eval {
        /// Directory written by `train`
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "argmax")]
        mode: ModeArg,
        /// Label used in frontier reports
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Envelopes, performance at budget and AUC from eval summaries
    Frontier {
        /// `summary.json` files written by `eval`
        #[arg(required = true)]
        results: Vec<PathBuf>,
        /// Method whose most expensive run anchors the window
        #[arg(long)]
        base_method: Option<String>,
        #[arg(long)]
        window_tok: Option<f64>,
        #[arg(long)]
        window_lat: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        tok_budgets: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        lat_budgets: Vec<f64>,
        #[arg(long, value_enum, default_value = "convex")]
        hull: HullArg,
        #[arg(long, value_enum, default_value = "append-base")]
        extension: ExtensionArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate the synthetic budget ladder over several seeds
    Ladder {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { out, seed, train, eval } => commands::synth(&out, seed, train, eval),
        Command::Pools { catalog, out, k, min_size, max_size, seed } => {
            commands::pools(&catalog, &out, PoolingOptions { k, min_size, max_size, seed })
        }
        Command::Train { run, out } => commands::train_cmd(run.resolve()?, &out),
        Command::Eval { run, dataset, mode, method, workers, out } => {
            let mode = match mode {
                ModeArg::Argmax => EvalMode::Argmax,
                ModeArg::Random => EvalMode::Random,
            };
            commands::eval_cmd(&run, dataset.as_deref(), mode, method, workers, &out)
        }
        Command::Frontier {
            results,
            base_method,
            window_tok,
            window_lat,
            tok_budgets,
            lat_budgets,
            hull,
            extension,
            out,
        } => {
            let opts = commands::FrontierOptions {
                base_method,
                window_tok,
                window_lat,
                tok_budgets,
                lat_budgets,
                hull: match hull {
                    HullArg::Convex => HullMode::Convex,
                    HullArg::Staircase => HullMode::Staircase,
                },
                extension: match extension {
                    ExtensionArg::AppendBase => Extension::AppendBase,
                    ExtensionArg::Flat => Extension::Flat,
                },
            };
            commands::frontier_cmd(&results, &opts, &out)
        }
        Command::Ladder { seeds, episodes, workers, out } => {
            let opts = LadderOptions { episodes, workers, ..LadderOptions::default() };
            commands::ladder_cmd(seeds, opts, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
