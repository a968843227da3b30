//! Query engine CLI: classify a workspace, fetch answers by index, or run
//! the scaling benchmark.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num::BigUint;

use starq_core::bench::BenchConfig;
use starq_core::cli::{self, EngineCache, Fetch, Workspace};

#[derive(Parser)]
#[command(name = "starq", version, about = "Direct access to ranked answers of conjunctive queries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct WorkspaceArgs {
    /// Workspace manifest (TOML).
    manifest: PathBuf,
    /// Treat these relations' last CSV column as the annotation column.
    #[arg(long = "annot-col", value_name = "RELATION")]
    annot_col: Vec<String>,
    /// Print the rewrite chain to stderr.
    #[arg(long)]
    explain: bool,
    /// Use arbitrary-precision answer counts.
    #[arg(long)]
    bigint: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Classify the workspace's query; prints a certificate as JSON.
    Classify {
        #[command(flatten)]
        ws: WorkspaceArgs,
        /// Render join trees for debugging (`dot`).
        #[arg(long = "emit-tree", value_name = "FORMAT")]
        emit_tree: Option<String>,
    },
    /// Retrieve answers by index, range, or quantile; prints CSV lines.
    Get {
        #[command(flatten)]
        ws: WorkspaceArgs,
        /// 1-based answer index.
        index: Option<BigUint>,
        /// Inclusive index range `a..b`.
        #[arg(long, value_name = "A..B", conflicts_with = "index")]
        range: Option<String>,
        /// Quantile in [0,1]; fetches answer max(1, ceil(q*count)).
        #[arg(long, conflicts_with_all = ["index", "range"])]
        quantile: Option<String>,
    },
    /// Benchmark preprocessing and access on generated instances.
    Bench {
        /// Instance generator (path3).
        #[arg(long, default_value = "path3")]
        generator: String,
        /// Comma-separated instance sizes (facts per relation).
        #[arg(long, value_delimiter = ',', default_value = "16384,32768,65536,131072")]
        sizes: Vec<usize>,
        /// Repetitions per size; medians are reported.
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Random access probes per repetition.
        #[arg(long, default_value_t = 64)]
        probes: usize,
        /// Generator seed.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Use arbitrary-precision answer counts.
        #[arg(long)]
        bigint: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    let result = match &cli.command {
        Command::Classify { ws, emit_tree } => Workspace::load(&ws.manifest, &ws.annot_col)
            .and_then(|w| cli::cmd_classify(&w, ws.explain, emit_tree.as_deref(), &mut out, &mut err)),
        Command::Get { ws, index, range, quantile } => {
            let fetch = match (index, range, quantile) {
                (Some(i), None, None) => Ok(Fetch::One(i.clone())),
                (None, Some(r), None) => cli::parse_range(r).map(|(a, b)| Fetch::Range(a, b)),
                (None, None, Some(q)) => cli::parse_quantile(q).map(Fetch::Quantile),
                _ => Err(cli::CliError::Usage(
                    "get needs exactly one of an index, --range, or --quantile".into(),
                )),
            };
            fetch.and_then(|fetch| {
                let w = Workspace::load(&ws.manifest, &ws.annot_col)?;
                let mut cache = EngineCache::new();
                cli::cmd_get(&w, &mut cache, &fetch, ws.bigint, ws.explain, &mut out, &mut err)
            })
        }
        Command::Bench { generator, sizes, reps, probes, seed, bigint } => {
            let cfg = BenchConfig {
                generator: generator.clone(),
                sizes: sizes.clone(),
                reps: *reps,
                probes: *probes,
                seed: *seed,
                bigint: *bigint,
            };
            cli::cmd_bench(&cfg, &mut out)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::EXIT_ERROR as u8)
        }
    }
}
