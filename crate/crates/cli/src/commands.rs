//! Subcommand arguments and implementations.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Cursor};
use std::path::{Path, PathBuf};

use clap::Args;
use oqa_core::bm25::{Bm25Params, InvertedIndex};
use oqa_core::corpus::{
    chunk_passages, merge_knowledge_source, parse_squad_json, Document, PassageCollection, QaDataset,
    DEFAULT_CHUNK_SIZE,
};
use oqa_core::dense::{ScoringMode, VectorStore};
use oqa_core::eval::{
    self, common_positive_mrr, em_f1, per_question_success, success_count_at_k, EvalReport,
    NormalizeOptions, Sampling, DEFAULT_KS,
};
use oqa_core::mining::{
    build_reader_dataset, judge_runs, mine_all, write_triples_tsv, JudgmentSet, MiningKind, MiningWindows,
};
use oqa_core::run::{read_trec, write_trec, RankedList};
use oqa_core::span::recover_dataset;
use oqa_core::tokenize::{stemmer_from_spec, SchemeKind, TokenizationScheme};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Config, CsvList, Resolver};
use crate::error::CliError;
use crate::stage::Stage;
use crate::GlobalArgs;

const DEFAULT_RETRIEVAL_DEPTH: usize = 100;
const DEFAULT_READER_TOP: usize = 5;
const DEFAULT_MRR_K: usize = 20;
const DEFAULT_REPETITIONS: usize = 20;
const DEFAULT_SIZES: [usize; 4] = [100, 200, 500, 1000];

#[derive(Args, Debug)]
pub struct RecoverSpansArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Excluded-pairs TSV (default: <output>.excluded.tsv).
    #[arg(long)]
    excluded: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ChunkArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MergeKsArgs {
    #[arg(long)]
    wiki: Option<PathBuf>,
    /// QA dataset; repeat for several.
    #[arg(long)]
    dataset: Vec<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct IndexBm25Args {
    #[arg(long)]
    passages: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RetrieveBm25Args {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    run_tag: Option<String>,
}

#[derive(Args, Debug)]
pub struct RetrieveDenseArgs {
    /// Passage vectors (OQAV1).
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Query vectors (OQAV1); ids are question ids.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// dpr | maxsim
    #[arg(long)]
    scoring: Option<String>,
    #[arg(long)]
    run_tag: Option<String>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct JudgeArgs {
    /// TREC run file.
    #[arg(long)]
    run: Option<PathBuf>,
    /// SQuAD2.0 JSON with the questions and gold answers.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Passage TSV the run refers to.
    #[arg(long)]
    passages: Option<PathBuf>,
    /// Precomputed judgments (`qid<TAB>pid<TAB>0|1`) instead of judging on the fly.
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Also write the judgments used.
    #[arg(long)]
    judgments_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MineTriplesArgs {
    #[command(flatten)]
    judge: JudgeArgs,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    k_pos: Option<usize>,
    #[arg(long)]
    pos_window: Option<usize>,
    #[arg(long)]
    neg_window: Option<usize>,
}

#[derive(Args, Debug)]
pub struct MinePairsArgs {
    #[command(flatten)]
    judge: JudgeArgs,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    k_pos: Option<usize>,
    #[arg(long)]
    pos_window: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BuildReaderSetArgs {
    #[command(flatten)]
    judge: JudgeArgs,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Knowledge-source snapshot label, e.g. 2021.
    #[arg(long)]
    snapshot: Option<String>,
    #[arg(long)]
    reader_top: Option<usize>,
    /// Tallies sidecar (default: <output>.tallies.json).
    #[arg(long)]
    tallies: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalRetrievalArgs {
    #[command(flatten)]
    judge: JudgeArgs,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    ks: Option<CsvList<usize>>,
    /// Per-question Success@k values as JSON, for subsample-eval.
    #[arg(long)]
    per_question: Option<PathBuf>,
    /// k for the per-question values (default: largest of --ks).
    #[arg(long)]
    per_question_k: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalMrrArgs {
    /// name=path; repeat for each retriever.
    #[arg(long = "run")]
    runs: Vec<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    passages: Option<PathBuf>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    mrr_k: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalReaderArgs {
    /// JSON map qid -> answer text.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Drop English articles during normalization.
    #[arg(long)]
    remove_articles: bool,
    /// Per-question scores (percent) as JSON, for subsample-eval.
    #[arg(long)]
    per_question: Option<PathBuf>,
    /// em | f1
    #[arg(long)]
    per_question_metric: Option<String>,
}

#[derive(Args, Debug)]
pub struct SubsampleEvalArgs {
    /// JSON map qid -> per-question value.
    #[arg(long)]
    values: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    sizes: Option<CsvList<usize>>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// without-replacement | with-replacement
    #[arg(long)]
    sampling: Option<String>,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn to_json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>, CliError> {
    let mut out = serde_json::to_vec_pretty(v).map_err(|e| CliError::internal(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

fn in_file<T>(r: oqa_core::Result<T>, path: &Path) -> Result<T, CliError> {
    r.map_err(|e| CliError::from(e).in_file(path))
}

fn write_with<F>(f: F) -> Result<Vec<u8>, CliError>
where
    F: FnOnce(&mut Vec<u8>) -> oqa_core::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn load_dataset(stage: &mut Stage, path: &Path) -> Result<QaDataset, CliError> {
    let bytes = stage.read_input("dataset", path)?;
    in_file(parse_squad_json(&bytes), path)
}

fn load_passages(stage: &mut Stage, path: &Path, chunk_size: usize) -> Result<PassageCollection, CliError> {
    let bytes = stage.read_input("passages", path)?;
    in_file(PassageCollection::read_tsv(Cursor::new(bytes), chunk_size), path)
}

fn load_run(stage: &mut Stage, role: &str, path: &Path) -> Result<Vec<RankedList>, CliError> {
    let bytes = stage.read_input(role, path)?;
    in_file(read_trec(Cursor::new(bytes)), path)
}

fn chunk_size(g: &GlobalArgs, r: &mut Resolver) -> Result<usize, CliError> {
    let n = r.value("chunk_size", g.chunk_size, DEFAULT_CHUNK_SIZE)?;
    if n == 0 {
        return Err(CliError::validation("--chunk-size must be at least 1"));
    }
    Ok(n)
}

fn scheme(g: &GlobalArgs, r: &mut Resolver) -> Result<TokenizationScheme, CliError> {
    let name: String = r.value("tokenizer", g.tokenizer.clone(), "enhanced".to_string())?;
    let kind: SchemeKind = name.parse()?;
    let spec: String = r.value("stemmer", g.stemmer.clone(), "none".to_string())?;
    let stemmer = if kind == SchemeKind::Morphological {
        stemmer_from_spec(&spec)?
    } else {
        None
    };
    let tr = r.switch("turkish_lowercase", g.turkish_lowercase)?;
    let scheme = TokenizationScheme::new(kind, stemmer, tr)?;
    r.record("scheme", &scheme.label());
    Ok(scheme)
}

/// Answerable questions, in dataset order.
fn questions(dataset: &QaDataset) -> Vec<(&str, &str)> {
    dataset
        .qas()
        .filter(|(_, _, qa)| !qa.is_impossible)
        .map(|(_, _, qa)| (qa.id.as_str(), qa.question.as_str()))
        .collect()
}

/// Judgments for `runs`, from a qrels file or computed against the dataset.
/// Returns the scheme label when judged on the fly.
fn judgments(
    g: &GlobalArgs,
    r: &mut Resolver,
    stage: &mut Stage,
    qrels: Option<PathBuf>,
    dataset: Option<(&QaDataset, &Path)>,
    passages: Option<PathBuf>,
    runs: &[RankedList],
) -> Result<(JudgmentSet, Option<String>), CliError> {
    if let Some(path) = r.optional_input("qrels", qrels)? {
        let bytes = stage.read_input("qrels", &path)?;
        let set = in_file(JudgmentSet::read_tsv(Cursor::new(bytes)), &path)?;
        return Ok((set, None));
    }
    let Some((dataset, _)) = dataset else {
        return Err(CliError::validation("judging needs --dataset and --passages, or --qrels"));
    };
    let ppath = r.input("passages", passages)?;
    let size = chunk_size(g, r)?;
    let coll = load_passages(stage, &ppath, size)?;
    let scheme = scheme(g, r)?;
    let set = judge_runs(runs, dataset, &coll, &scheme)?;
    stage.log(format!("judged {} run entries under {}", set.len(), scheme.label()));
    Ok((set, Some(scheme.label())))
}

fn maybe_write_judgments(
    r: &mut Resolver,
    stage: &mut Stage,
    path: Option<PathBuf>,
    set: &JudgmentSet,
) -> Result<(), CliError> {
    let path: Option<PathBuf> = r.optional("judgments_out", path)?;
    if let Some(p) = path {
        let bytes = write_with(|b| set.write_tsv(b))?;
        stage.add_output("judgments", &p, bytes);
    }
    Ok(())
}

pub fn recover_spans(g: &GlobalArgs, cfg: &Config, a: RecoverSpansArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(cfg);
    let mut stage = Stage::new("recover-spans", g.quiet);
    let input = r.input("input", a.input)?;
    let output: PathBuf = r.required("output", a.output)?;
    let excluded = r.value("excluded", a.excluded, with_suffix(&output, ".excluded.tsv"))?;

    let raw = load_dataset(&mut stage, &input)?;
    let (recovered, report) = recover_dataset(&raw);
    stage.log(format!(
        "{} answerable pairs: {} recovered ({} exact, {} approximate), {} excluded, {} paragraphs dropped",
        report.answerable_input,
        report.recovered_count,
        report.exact_count,
        report.fuzzy_count,
        report.excluded_count(),
        report.dropped_paragraphs
    ));
    stage.tally("answerable_input", &report.answerable_input);
    stage.tally("recovered_count", &report.recovered_count);
    stage.tally("exact_count", &report.exact_count);
    stage.tally("fuzzy_count", &report.fuzzy_count);
    stage.tally("excluded_count", &report.excluded_count());
    stage.tally("unanswerable_passthrough", &report.unanswerable_passthrough);
    stage.tally("dropped_paragraphs", &report.dropped_paragraphs);
    stage.tally("dropped_articles", &report.dropped_articles);

    stage.add_output("dataset", &output, recovered.to_json());
    stage.add_output("excluded", &excluded, write_with(|b| report.write_excluded_tsv(b))?);
    stage.commit(r.into_effective())?;
    Ok(())
}

pub fn chunk(g: &GlobalArgs, cfg: &Config, a: ChunkArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(cfg);
    let mut stage = Stage::new("chunk", g.quiet);
    let input = r.input("input", a.input)?;
    let output: PathBuf = r.required("output", a.output)?;
    let size = chunk_size(g, &mut r)?;

    let bytes = stage.read_input("documents", &input)?;
    let mut docs = Vec::new();
    for (i, line) in bytes.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| {
            CliError::validation(format!("line {}: {e}", i + 1)).in_file(&input)
        })?;
        docs.push(doc);
    }
    let coll = chunk_passages(&docs, size)?;
    stage.log(format!("{} documents -> {} passages", docs.len(), coll.len()));
    stage.tally("documents", &docs.len());
    stage.tally("passages", &coll.len());
    stage.add_output("passages", &output, write_with(|b| coll.write_tsv(b))?);
    stage.commit(r.into_effective())?;
    Ok(())
}

pub fn merge_ks(g: &GlobalArgs, cfg: &Config, a: MergeKsArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(cfg);
    let mut stage = Stage::new("merge-ks", g.quiet);
    let wiki_path = r.input("wiki", a.wiki)?;
    let output: PathBuf = r.required("output", a.output)?;
    let size = chunk_size(g, &mut r)?;
    let dataset_paths = if a.dataset.is_empty() {
        vec![r.input("dataset", None)?]
    } else {
        for p in &a.dataset {
            if !p.exists() {
                return Err(CliError::validation(format!("dataset: {} does not exist", p.display())));
            }
        }
        r.record("dataset", &a.dataset);
        a.dataset
    };

    let bytes = stage.read_input("wiki", &wiki_path)?;
    let wiki = in_file(PassageCollection::read_tsv(Cursor::new(bytes), size), &wiki_path)?;
    let mut datasets = Vec::new();
    for p in &dataset_paths {
        datasets.push(load_dataset(&mut stage, p)?);
    }
    let merged = merge_knowledge_source(&wiki, &datasets, size)?;
    let added = merged.len() - wiki.len();
    stage.log(format!("{} wiki passages + {} QA-context passages", wiki.len(), added));
    stage.tally("wiki_passages", &wiki.len());
    stage.tally("qa_context_passages", &added);
    stage.add_output("passages", &output, write_with(|b| merged.write_tsv(b))?);
    stage.commit(r.into_effective())?;
    Ok(())
}

pub fn index_bm25(g: &GlobalArgs, cfg: &Config, a: IndexBm25Args) -> Result<(), CliError> {
    let mut r = Resolver::new(cfg);
    let mut stage = Stage::new("index-bm25", g.quiet);
    let ppath = r.input("passages", a.passages)?;
    let output: PathBuf = r.required("output", a.output)?;
    let size = chunk_size(g, &mut r)?;
    let scheme = scheme(g, &mut r)?;

    let coll = load_passages(&mut stage, &ppath, size)?;
    let index = InvertedIndex::build(&coll, scheme)?;
    stage.log(format!(
        "indexed {} passages, {} terms, avgdl {:.2}",
        index.doc_count(),
        index.term_count(),
        index.avgdl()
    ));
    stage.tally("passages", &index.doc_count());
    stage.tally("terms", &index.term_count());
    stage.add_output("index", &output, write_with(|b| index.write(b))?);
    stage.commit(r.into_effective())?;
    Ok(())
}

pub fn retrieve_bm25(g: &GlobalArgs, cfg: &Config, a: RetrieveBm25Args) -> Result<(), CliError> {
    let mut r = Resolver::new(cfg);
    let mut stage = Stage::new("retrieve-bm25", g.quiet);
    let ipath = r.input("index", a.index)?;
    let dpath = r.input("dataset", a.dataset)?;
    let output: PathBuf = r.required("output", a.output)?;
    let k = r.value("k", a.k, DEFAULT_RETRIEVAL_DEPTH)?;
    let defaults = Bm25Params::default();
    let k1 = r.value("k1", a.k1, defaults.k1())?;
    let b = r.value("b", a.b, defaults.b())?;
    let tag = r.value("run_tag", a.run_tag, "bm25".to_string())?;
    let params = Bm25Params::new(k1, b)?;

    let bytes = stage.read_input("index", &ipath)?;
    let index = in_file(InvertedIndex::read(Cursor::new(bytes)), &ipath)?;
    r.record("scheme", &index.scheme().label());
    let dataset = load_dataset(&mut stage, &dpath)?;
    let qs = questions(&dataset);
    let progress = stage.progress("questions");
    let runs: Vec<RankedList> = qs
        .par_iter()
        .map(|(id, text)| {
            let run = index.retrieve(id, text, k, &params);
            progress.tick();
            run
        })
        .collect::<oqa_core::Result<_>>()?;
    stage.log(format!("retrieved for {} questions", runs.len()));
    stage.tally("questions", &runs.len());
    stage.tally("empty_runs", &runs.iter().filter(|r| r.is_empty()).count());
    stage.add_output("run", &output, write_with(|b| write_trec(b, &runs, &tag))?);
    stage.commit(r.into_effective())?;
    Ok(())
}

pub fn retrieve_dense(g: &GlobalArgs, cfg: &Config, a: RetrieveDenseArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(cfg);
    let mut stage = Stage::new("retrieve-dense", g.quiet);
    let vpath = r.input("vectors", a.vectors)?;
    let qpath = r.input("queries", a.queries)?;
    let output: PathBuf = r.required("output", a.output)?;
    let k = r.value("k", a.k, DEFAULT_RETRIEVAL_DEPTH)?;
    let scoring_name: String = r.value("scoring", a.scoring, "maxsim".to_string())?;
    let scoring: ScoringMode = scoring_name.parse()?;
    let default_tag = match scoring {
        ScoringMode::Dpr => "dpr",
        ScoringMode::MaxSim => "maxsim",
    };
    let tag = r.value("run_tag", a.run_tag, default_tag.to_string())?;

    let bytes = stage.read_input("vectors", &vpath)?;
    let store = in_file(VectorStore::read(Cursor::new(bytes)), &vpath)?;
    let bytes = stage.read_input("queries", &qpath)?;
    let queries = in_file(VectorStore::read(Cursor::new(bytes)), &qpath)?;
    if queries.dim() != store.dim() {
        return Err(CliError::validation(format!(
            "query dim {} does not match passage dim {}",
            queries.dim(),
            store.dim()
        )));
    }
    let progress = stage.progress("queries");
    let runs: Vec<RankedList> = queries
        .records()
        .iter()
        .map(|q| {
            let run = store.retrieve(q, k, scoring);
            progress.tick();
            run
        })
        .collect::<oqa_core::Result<_>>()?;
    stage.log(format!("ranked {} passages for {} queries", store.len(), runs.len()));
    stage.tally("queries", &runs.len());
    stage.tally("passages", &store.len());
    stage.add_output("run", &output, write_with(|b| write_trec(b, &runs, &tag))?);
    stage.commit(r.into_effective())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mining {
    Triples,
    Pairs,
}

struct MineInputs {
    judge: JudgeArgs,
    output: Option<PathBuf>,
    k_pos: Option<usize>,
    pos_window: Option<usize>,
    neg_window: Option<usize>,
}

pub fn mine_triples(g: &GlobalArgs, cfg: &Config, a: MineTriplesArgs) -> Result<(), CliError> {
    let inputs = MineInputs {
        judge: a.judge,
        output: a.output,
        k_pos: a.k_pos,
        pos_window: a.pos_window,
        neg_window: a.neg_window,
    };
    mine(g, cfg, inputs, Mining::Triples)
}

pub fn mine_pairs(g: &GlobalArgs, cfg: &Config, a: MinePairsArgs) -> Result<(), CliError> {
    let inputs = MineInputs {
        judge: a.judge,
        output: a.output,
        k_pos: a.k_pos,
        pos_window: a.pos_window,
        neg_window: None,
    };
    mine(g, cfg, inputs, Mining::Pairs)
}

fn mine(g: &GlobalArgs, cfg: &Config, a: MineInputs, kind: Mining) -> Result<(), CliError> {
    let name = match kind {
        Mining::Triples => "mine-triples",
        Mining::Pairs => "mine-pairs",
    };
    let mut r = Resolver::new(cfg);
    let mut stage = Stage::new(name, g.quiet);
    let run_path = r.input("run", a.judge.run)?;
    let output: PathBuf = r.required("output", a.output)?;
    let d = MiningWindows::default();
    let k_pos = r.value("k_pos", a.k_pos, d.k_pos)?;
    let pos_window = r.value("pos_window", a.pos_window, d.pos_window)?;
    let neg_window = match kind {
        Mining::Triples => r.value("neg_window", a.neg_window, d.neg_window)?,
        Mining::Pairs => pos_window,
    };
    let windows = MiningWindows {
        k_pos,
        pos_window,
        neg_window,
    };
    windows.validate()?;

    let runs = load_run(&mut stage, "run", &run_path)?;
    let dataset = match r.optional_input("dataset", a.judge.dataset)? {
        Some(p) => Some((load_dataset(&mut stage, &p)?, p)),
        None => None,
    };
    let (set, _) = judgments(
        g,
        &mut r,
        &mut stage,
        a.judge.qrels,
        dataset.as_ref().map(|(d, p)| (d, p.as_path())),
        a.judge.passages,
        &runs,
    )?;
    let mining_kind = match kind {
        Mining::Triples => MiningKind::Triples,
        Mining::Pairs => MiningKind::DprPairs,
    };
    let (rows, report) = mine_all(&runs, &set, &windows, mining_kind)?;
    stage.log(format!(
        "{} rows from {} questions ({} without positives, {} without negatives)",
        report.rows, report.questions, report.skipped_no_positive, report.skipped_no_negative
    ));
    stage.tally("report", &report);
    stage.add_output(
        if kind == Mining::Triples { "triples" } else { "pairs" },
        &output,
        write_with(|b| write_triples_tsv(b, &rows))?,
    );
    maybe_write_judgments(&mut r, &mut stage, a.judge.judgments_out, &set)?;
    stage.commit(r.into_effective())?;
    Ok(())
}

pub fn build_reader_set(g: &GlobalArgs, cfg: &Config, a: BuildReaderSetArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(cfg);
    let mut stage = Stage::new("build-reader-set", g.quiet);
    let run_path = r.input("run", a.judge.run)?;
    let dpath = r.input("dataset", a.judge.dataset)?;
    let ppath = r.input("passages", a.judge.passages)?;
    let output: PathBuf = r.required("output", a.output)?;
    let snapshot: String = r.required("snapshot", a.snapshot)?;
    if snapshot.trim().is_empty() {
        return Err(CliError::validation("--snapshot must not be empty"));
    }
    let reader_top = r.value("reader_top", a.reader_top, DEFAULT_READER_TOP)?;
    let tallies_path = r.value("tallies", a.tallies, with_suffix(&output, ".tallies.json"))?;
    let size = chunk_size(g, &mut r)?;

    let runs = load_run(&mut stage, "run", &run_path)?;
    let dataset = load_dataset(&mut stage, &dpath)?;
    let passages = load_passages(&mut stage, &ppath, size)?;
    let set = match r.optional_input("qrels", a.judge.qrels)? {
        Some(p) => {
            let bytes = stage.read_input("qrels", &p)?;
            in_file(JudgmentSet::read_tsv(Cursor::new(bytes)), &p)?
        }
        None => {
            let scheme = scheme(g, &mut r)?;
            judge_runs(&runs, &dataset, &passages, &scheme)?
        }
    };
    let (reader, tallies) = build_reader_dataset(&runs, &dataset, &passages, &set, reader_top)?;
    stage.log(format!(
        "{} questions: {} positive contexts, {} rank-1 fallbacks, {} without results",
        reader.question_count(),
        tallies.positive_context_count,
        tallies.fallback_rank1_count,
        tallies.skipped_no_results
    ));
    stage.tally("reader", &tallies);
    let sidecar = json!({
        "snapshot": snapshot,
        "questions": reader.question_count(),
        "skipped_no_results": tallies.skipped_no_results,
        "fallback_rank1_count": tallies.fallback_rank1_count,
        "positive_context_count": tallies.positive_context_count,
        "unanchored_count": tallies.unanchored_count,
    });
    stage.add_output("reader_dataset", &output, reader.to_json());
    stage.add_output("tallies", &tallies_path, to_json_bytes(&sidecar)?);
    maybe_write_judgments(&mut r, &mut stage, a.judge.judgments_out, &set)?;
    stage.commit(r.into_effective())?;
    Ok(())
}

#[derive(Serialize)]
struct ReportWithProvenance<'a, T: Serialize> {
    #[serde(flatten)]
    report: &'a T,
    provenance: Value,
}

pub fn eval_retrieval(g: &GlobalArgs, cfg: &Config, a: EvalRetrievalArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(cfg);
    let mut stage = Stage::new("eval-retrieval", g.quiet);
    let run_path = r.input("run", a.judge.run)?;
    let output: PathBuf = r.required("output", a.output)?;
    let ks = r.value("ks", a.ks, CsvList(DEFAULT_KS.to_vec()))?.0;
    let per_question: Option<PathBuf> = r.optional("per_question", a.per_question)?;
    let pq_k = r.value(
        "per_question_k",
        a.per_question_k,
        ks.iter().copied().max().unwrap_or(1),
    )?;

    let mut runs = load_run(&mut stage, "run", &run_path)?;
    let dataset = match r.optional_input("dataset", a.judge.dataset)? {
        Some(p) => Some((load_dataset(&mut stage, &p)?, p)),
        None => None,
    };
    let (set, label) = judgments(
        g,
        &mut r,
        &mut stage,
        a.judge.qrels,
        dataset.as_ref().map(|(d, p)| (d, p.as_path())),
        a.judge.passages,
        &runs,
    )?;
    if let Some((ds, _)) = &dataset {
        // questions the run never mentions count as misses
        let present: HashSet<String> = runs.iter().map(|r| r.question_id.clone()).collect();
        let missing: Vec<RankedList> = questions(ds)
            .into_iter()
            .filter(|(id, _)| !present.contains(*id))
            .map(|(id, _)| RankedList::empty(id))
            .collect();
        if !missing.is_empty() {
            stage.log(format!("{} questions have no results", missing.len()));
        }
        runs.extend(missing);
    }
    let metrics = success_count_at_k(&runs, &set, &ks)?;
    for at in &metrics.at_k {
        stage.log(format!("S@{} = {:.4}  C@{} = {:.4}", at.k, at.success, at.k, at.count));
    }
    let report = EvalReport::from_retrieval(&metrics, label);
    let provenance = stage.provenance(r.effective());
    stage.add_output(
        "report",
        &output,
        to_json_bytes(&ReportWithProvenance {
            report: &report,
            provenance,
        })?,
    );
    if let Some(p) = per_question {
        let values = per_question_success(&runs, &set, pq_k)?;
        stage.add_output("per_question", &p, to_json_bytes(&values)?);
    }
    maybe_write_judgments(&mut r, &mut stage, a.judge.judgments_out, &set)?;
    stage.commit(r.into_effective())?;
    Ok(())
}

pub fn eval_mrr(g: &GlobalArgs, cfg: &Config, a: EvalMrrArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(cfg);
    let mut stage = Stage::new("eval-mrr", g.quiet);
    let output: PathBuf = r.required("output", a.output)?;
    let k = r.value("mrr_k", a.mrr_k, DEFAULT_MRR_K)?;
    if a.runs.len() < 2 {
        return Err(CliError::validation("eval-mrr needs at least two --run name=path"));
    }
    let mut named: BTreeMap<String, Vec<RankedList>> = BTreeMap::new();
    for spec in &a.runs {
        let Some((name, path)) = spec.split_once('=') else {
            return Err(CliError::validation(format!("--run {spec:?}: expected name=path")));
        };
        let path = PathBuf::from(path);
        if !path.exists() {
            return Err(CliError::validation(format!("run: {} does not exist", path.display())));
        }
        let runs = load_run(&mut stage, &format!("run:{name}"), &path)?;
        if named.insert(name.to_string(), runs).is_some() {
            return Err(CliError::validation(format!("duplicate retriever name {name:?}")));
        }
    }
    r.record("runs", &a.runs);
    let dataset = match r.optional_input("dataset", a.dataset)? {
        Some(p) => Some((load_dataset(&mut stage, &p)?, p)),
        None => None,
    };
    let all: Vec<RankedList> = named.values().flatten().cloned().collect();
    let (set, label) = judgments(
        g,
        &mut r,
        &mut stage,
        a.qrels,
        dataset.as_ref().map(|(d, p)| (d, p.as_path())),
        a.passages,
        &all,
    )?;
    let report = common_positive_mrr(&named, &set, k)?;
    stage.log(format!("{} eligible questions", report.eligible_count));
    let provenance = stage.provenance(r.effective());
    let body = json!({
        "scheme": label,
        "k": report.k,
        "eligible_count": report.eligible_count,
        "mrr": report.mrr,
        "provenance": provenance,
    });
    stage.add_output("report", &output, to_json_bytes(&body)?);
    stage.commit(r.into_effective())?;
    Ok(())
}

fn gold_texts(dataset: &QaDataset) -> BTreeMap<String, Vec<String>> {
    dataset
        .qas()
        .filter(|(_, _, qa)| !qa.is_impossible && !qa.answers.is_empty())
        .map(|(_, _, qa)| {
            (
                qa.id.clone(),
                qa.answers.iter().map(|a| a.text.clone()).collect(),
            )
        })
        .collect()
}

pub fn eval_reader(g: &GlobalArgs, cfg: &Config, a: EvalReaderArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(cfg);
    let mut stage = Stage::new("eval-reader", g.quiet);
    let ppath = r.input("predictions", a.predictions)?;
    let dpath = r.input("dataset", a.dataset)?;
    let output: PathBuf = r.required("output", a.output)?;
    let remove_articles = r.switch("remove_articles", a.remove_articles)?;
    let per_question: Option<PathBuf> = r.optional("per_question", a.per_question)?;
    let metric: String = r.value("per_question_metric", a.per_question_metric, "f1".to_string())?;
    if !matches!(metric.as_str(), "em" | "f1") {
        return Err(CliError::validation(format!("--per-question-metric {metric:?}: expected em or f1")));
    }

    let bytes = stage.read_input("predictions", &ppath)?;
    let predictions: HashMap<String, String> = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::validation(format!("predictions: {e}")).in_file(&ppath))?;
    let dataset = load_dataset(&mut stage, &dpath)?;
    let golds = gold_texts(&dataset);
    let scores = em_f1(&predictions, &golds, NormalizeOptions { remove_articles });
    stage.log(format!(
        "EM {:.2}  F1 {:.2} over {} questions ({} without prediction)",
        scores.em, scores.f1, scores.n_questions, scores.missing_predictions
    ));
    stage.tally("missing_predictions", &scores.missing_predictions);
    let report = EvalReport::from_reader(&scores);
    let provenance = stage.provenance(r.effective());
    let mut body = serde_json::to_value(ReportWithProvenance {
        report: &report,
        provenance,
    })
    .map_err(|e| CliError::internal(e.to_string()))?;
    body["missing_predictions"] = json!(scores.missing_predictions);
    stage.add_output("report", &output, to_json_bytes(&body)?);
    if let Some(p) = per_question {
        let values: BTreeMap<&str, f64> = scores
            .per_question
            .iter()
            .map(|(q, &(em, f1))| (q.as_str(), 100.0 * if metric == "em" { em } else { f1 }))
            .collect();
        stage.add_output("per_question", &p, to_json_bytes(&values)?);
    }
    stage.commit(r.into_effective())?;
    Ok(())
}

pub fn subsample_eval(g: &GlobalArgs, cfg: &Config, a: SubsampleEvalArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(cfg);
    let mut stage = Stage::new("subsample-eval", g.quiet);
    let vpath = r.input("values", a.values)?;
    let output: PathBuf = r.required("output", a.output)?;
    let sizes = r.value("sizes", a.sizes, CsvList(DEFAULT_SIZES.to_vec()))?.0;
    let reps = r.value("repetitions", a.repetitions, DEFAULT_REPETITIONS)?;
    let seed = r.seed(a.seed, 0)?;
    let sampling_name: String = r.value("sampling", a.sampling, "without-replacement".to_string())?;
    let sampling = match sampling_name.as_str() {
        "without-replacement" | "without_replacement" => Sampling::WithoutReplacement,
        "with-replacement" | "with_replacement" | "bootstrap" => Sampling::WithReplacement,
        other => {
            return Err(CliError::validation(format!(
                "--sampling {other:?}: expected without-replacement or with-replacement"
            )))
        }
    };

    let bytes = stage.read_input("values", &vpath)?;
    let values: BTreeMap<String, f64> = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::validation(format!("values: {e}")).in_file(&vpath))?;
    let stats = eval::subsample_eval(&values, &sizes, reps, seed, sampling)?;
    for s in &stats {
        stage.log(format!("size {}: mean {:.4}, std {:.4}", s.size, s.mean, s.std_dev));
    }
    let provenance = stage.provenance(r.effective());
    let body = json!({
        "population": values.len(),
        "seed": seed,
        "sampling": sampling,
        "stats": stats,
        "provenance": provenance,
    });
    stage.add_output("report", &output, to_json_bytes(&body)?);
    stage.commit(r.into_effective())?;
    Ok(())
}
