//! `cellrec`: recommends notebook code cells for a markdown description.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use cellrec::recommend::{Method, RankGroup};
use cellrec::vector::ProviderKind;
use cellrec::Error;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "cellrec",
    version,
    about = "Markdown-to-code cell recommendation over notebook corpora"
)]
pub struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML config file (default: $CELLREC_CONFIG)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Directory holding the index manifest and files
    #[arg(long, global = true, value_name = "DIR")]
    index_dir: Option<PathBuf>,
    /// Embedding provider
    #[arg(long, global = true)]
    provider: Option<ProviderKind>,
    /// Base URL of the embedding service
    #[arg(long, global = true, value_name = "URL")]
    endpoint: Option<String>,
    /// Embedding dimension
    #[arg(long, global = true, value_name = "N")]
    dim: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest notebooks and build every index
    Index(IndexArgs),
    /// Recommend code cells for a markdown text (reads stdin without TEXT)
    Query(QueryArgs),
    /// Self-retrieval check: each pair's markdown should return its own code
    Sanity(EvalArgs),
    /// Run the 30 plot-type queries and write a review file
    Ploteval(EvalArgs),
    /// Re-render reports from a (hand-edited) review file
    Report(ReportArgs),
    /// Show the index manifest
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Directory containing the notebooks
    #[arg(long, value_name = "DIR")]
    notebooks: PathBuf,
    /// CSV with `path,rank` columns (default: <notebooks>/manifest.csv)
    #[arg(long, value_name = "CSV")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Markdown text; words are joined with spaces
    text: Vec<String>,
    #[arg(long, default_value = "bm25")]
    method: Method,
    #[arg(long, default_value = "all")]
    group: RankGroup,
    /// Number of recommendations (default: config `default_k`)
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Methods to evaluate, comma separated (default: all indexed)
    #[arg(long, alias = "methods", value_delimiter = ',')]
    method: Vec<Method>,
    /// Rank groups to evaluate, comma separated (default: all indexed)
    #[arg(long, alias = "groups", value_delimiter = ',')]
    group: Vec<RankGroup>,
    /// Output directory for report files (default: config `out_dir`)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Print the JSON report instead of the text tables
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Review file written by `ploteval`
    #[arg(long, value_name = "JSONL")]
    review: Option<PathBuf>,
    /// Sanity JSON written by `sanity`
    #[arg(long, value_name = "JSON")]
    sanity: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    json: bool,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(rows) = err.downcast_ref::<commands::RowFailures>() {
        return rows.exit_code;
    }
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(
            Error::StoreNotFound(_)
            | Error::IndexMissing { .. }
            | Error::CorruptIndex { .. }
            | Error::IndexMismatch(_),
        ) => 2,
        Some(Error::ProviderUnavailable { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
