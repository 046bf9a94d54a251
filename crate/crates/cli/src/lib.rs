//! Command-line driver: `ingest`, `index`, `query`, `eval` and `positions`.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{emit, FlagOverrides};
use crate::config::{AppConfig, CONFIG_ENV};

#[derive(Debug, Parser)]
#[command(name = "specqa", version, about = "Retrieval-augmented multiple-choice QA over specification corpora")]
pub struct Cli {
    /// JSON config file.
    #[arg(long, global = true, value_name = "PATH", env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    /// Seed for seeded generators (overrides the config).
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Chunk the corpus into semantic and fixed-size chunk dumps.
    Ingest,
    /// Build and persist the BM25 and vector indexes from the chunk dumps.
    Index,
    /// Answer one multiple-choice question and show the retrieved contexts.
    Query(QueryArgs),
    /// Score a question file, optionally over every ablation combination.
    Eval(EvalArgs),
    /// Print the remapped relative-position matrix and out-of-range cells.
    Positions(PositionsArgs),
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    pub question: String,
    /// Answer option; give at least two, in order.
    #[arg(short, long = "option", value_name = "TEXT", required = true)]
    pub options: Vec<String>,
    #[arg(long)]
    pub no_self_extend: bool,
    #[arg(long)]
    pub no_rerank: bool,
    /// Use fixed-size chunks as the primary index.
    #[arg(long)]
    pub no_semantic_chunks: bool,
    /// Put only the best chunk in the prompt.
    #[arg(long)]
    pub single_context: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Question file (keyed `option N` items or plain JSON).
    pub questions: PathBuf,
    /// Run all 16 SE/RR/SC/MC combinations instead of the configured flags.
    #[arg(long)]
    pub sweep: bool,
    /// Report directory (default: <workdir>/reports).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PositionsArgs {
    /// Sequence length T.
    pub len: usize,
    /// Trained context window L.
    pub trained_window: usize,
    /// Neighbor window w_n.
    pub neighbor_window: usize,
    /// Group size G_s.
    pub group_size: usize,
}

/// Runs a parsed command and returns what it prints.
pub fn run(cli: &Cli) -> anyhow::Result<String> {
    if let Command::Positions(p) = &cli.command {
        let out = commands::cmd_positions(p.len, p.trained_window, p.neighbor_window, p.group_size)?;
        return emit(&out, cli.json);
    }
    let cfg = AppConfig::resolve(cli.config.as_deref())?;
    match &cli.command {
        Command::Ingest => emit(&commands::cmd_ingest(&cfg)?, cli.json),
        Command::Index => emit(&commands::cmd_index(&cfg)?, cli.json),
        Command::Query(q) => {
            let overrides = FlagOverrides {
                no_self_extend: q.no_self_extend,
                no_rerank: q.no_rerank,
                no_semantic_chunks: q.no_semantic_chunks,
                single_context: q.single_context,
            };
            let out = commands::cmd_query(&cfg, &q.question, &q.options, overrides, cli.seed)?;
            emit(&out, cli.json)
        }
        Command::Eval(e) => {
            let out = commands::cmd_eval(&cfg, &e.questions, e.sweep, e.out.as_deref(), cli.seed)?;
            emit(&out, cli.json)
        }
        Command::Positions(_) => unreachable!("handled above"),
    }
}
