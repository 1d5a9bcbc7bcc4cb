//! `oqa`: one subcommand per pipeline stage.

mod commands;
mod config;
mod error;
mod stage;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands as c;
use crate::config::Config;
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "oqa", version, about = "Open-domain QA dataset and retrieval pipeline")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// Flat `key = value` file supplying defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Silence progress lines on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,

    /// whitespace | morph | enhanced
    #[arg(long, global = true)]
    pub tokenizer: Option<String>,

    /// none | suffix-stub | external:<path>
    #[arg(long, global = true)]
    pub stemmer: Option<String>,

    /// Map I→ı and İ→i before lowercasing.
    #[arg(long, global = true)]
    pub turkish_lowercase: bool,

    /// Words per passage.
    #[arg(long, global = true)]
    pub chunk_size: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Re-locate answer spans in translated contexts.
    RecoverSpans(c::RecoverSpansArgs),
    /// Split JSONL documents ({"title","text"} per line) into passages.
    Chunk(c::ChunkArgs),
    /// Append deduplicated QA contexts to a chunked knowledge source.
    MergeKs(c::MergeKsArgs),
    /// Build a BM25 inverted index over a passage TSV.
    IndexBm25(c::IndexBm25Args),
    /// Rank passages for every answerable question with BM25.
    RetrieveBm25(c::RetrieveBm25Args),
    /// Rank passage vectors for every query vector.
    RetrieveDense(c::RetrieveDenseArgs),
    /// Mine (question, positive, negative) training triples.
    MineTriples(c::MineTriplesArgs),
    /// Mine positive / hard-negative pairs.
    MinePairs(c::MinePairsArgs),
    /// Build a reader dataset from retrieved contexts.
    BuildReaderSet(c::BuildReaderSetArgs),
    /// Success@k and Count@k of a run.
    EvalRetrieval(c::EvalRetrievalArgs),
    /// MRR over questions whose top positive is shared by all runs.
    EvalMrr(c::EvalMrrArgs),
    /// Exact match and F1 of reader predictions.
    EvalReader(c::EvalReaderArgs),
    /// Metric spread over repeated random test subsets.
    SubsampleEval(c::SubsampleEvalArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.global.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let threads = match cli.global.threads {
        Some(n) => Some(n),
        None => config::Resolver::new(&cfg).optional::<usize>("threads", None)?,
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::validation("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::internal(e.to_string()))?;
    }
    let g = &cli.global;
    match cli.command {
        Command::RecoverSpans(a) => c::recover_spans(g, &cfg, a),
        Command::Chunk(a) => c::chunk(g, &cfg, a),
        Command::MergeKs(a) => c::merge_ks(g, &cfg, a),
        Command::IndexBm25(a) => c::index_bm25(g, &cfg, a),
        Command::RetrieveBm25(a) => c::retrieve_bm25(g, &cfg, a),
        Command::RetrieveDense(a) => c::retrieve_dense(g, &cfg, a),
        Command::MineTriples(a) => c::mine_triples(g, &cfg, a),
        Command::MinePairs(a) => c::mine_pairs(g, &cfg, a),
        Command::BuildReaderSet(a) => c::build_reader_set(g, &cfg, a),
        Command::EvalRetrieval(a) => c::eval_retrieval(g, &cfg, a),
        Command::EvalMrr(a) => c::eval_mrr(g, &cfg, a),
        Command::EvalReader(a) => c::eval_reader(g, &cfg, a),
        Command::SubsampleEval(a) => c::subsample_eval(g, &cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
