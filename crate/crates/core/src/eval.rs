//! Retrieval metrics (Success@k, Count@k, MRR on commonly retrieved
//! positives), reader metrics (EM, F1), and repeated test-set subsampling.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mining::JudgmentSet;
use crate::run::RankedList;

pub const DEFAULT_KS: [usize; 3] = [1, 5, 20];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AtK {
    pub k: usize,
    /// Fraction of questions with at least one positive in the top k.
    pub success: f64,
    /// Mean number of positives in the top k.
    pub count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalMetrics {
    pub n_questions: usize,
    pub at_k: Vec<AtK>,
}

impl RetrievalMetrics {
    pub fn success(&self, k: usize) -> Option<f64> {
        self.at_k.iter().find(|a| a.k == k).map(|a| a.success)
    }

    pub fn count(&self, k: usize) -> Option<f64> {
        self.at_k.iter().find(|a| a.k == k).map(|a| a.count)
    }
}

/// Positive flags for the top `depth` entries of a run.
fn positive_flags(run: &RankedList, judgments: &JudgmentSet, depth: usize) -> Result<Vec<bool>> {
    run.top(depth)
        .iter()
        .map(|e| judgments.require(&run.question_id, &e.passage_id))
        .collect()
}

/// S@k and C@k for each `k`. Runs shorter than `k` count what they have.
pub fn success_count_at_k(
    runs: &[RankedList],
    judgments: &JudgmentSet,
    ks: &[usize],
) -> Result<RetrievalMetrics> {
    if ks.contains(&0) {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let depth = ks.iter().copied().max().unwrap_or(0);
    let mut hits = vec![0usize; ks.len()];
    let mut counts = vec![0usize; ks.len()];
    for run in runs {
        let flags = positive_flags(run, judgments, depth)?;
        for (i, &k) in ks.iter().enumerate() {
            let c = flags.iter().take(k).filter(|&&p| p).count();
            counts[i] += c;
            hits[i] += usize::from(c > 0);
        }
    }
    let n = runs.len();
    let denom = n.max(1) as f64;
    Ok(RetrievalMetrics {
        n_questions: n,
        at_k: ks
            .iter()
            .enumerate()
            .map(|(i, &k)| AtK {
                k,
                success: hits[i] as f64 / denom,
                count: counts[i] as f64 / denom,
            })
            .collect(),
    })
}

/// Per-question success indicator at `k` (1.0 or 0.0), for subsampling.
pub fn per_question_success(
    runs: &[RankedList],
    judgments: &JudgmentSet,
    k: usize,
) -> Result<BTreeMap<String, f64>> {
    runs.iter()
        .map(|run| {
            let hit = positive_flags(run, judgments, k)?.into_iter().any(|p| p);
            Ok((run.question_id.clone(), if hit { 1.0 } else { 0.0 }))
        })
        .collect()
}

/// Combined metric report. Retrieval fields are keyed by `k`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub n_questions: usize,
    /// Label of the tokenization scheme used for judging, if any.
    pub scheme: Option<String>,
    pub success: BTreeMap<usize, f64>,
    pub count: BTreeMap<usize, f64>,
    pub mrr: Option<f64>,
    /// Percent.
    pub em: Option<f64>,
    /// Percent.
    pub f1: Option<f64>,
}

impl EvalReport {
    pub fn from_retrieval(metrics: &RetrievalMetrics, scheme: Option<String>) -> Self {
        EvalReport {
            n_questions: metrics.n_questions,
            scheme,
            success: metrics.at_k.iter().map(|a| (a.k, a.success)).collect(),
            count: metrics.at_k.iter().map(|a| (a.k, a.count)).collect(),
            ..Default::default()
        }
    }

    pub fn from_reader(scores: &ReaderScores) -> Self {
        EvalReport {
            n_questions: scores.n_questions,
            em: Some(scores.em),
            f1: Some(scores.f1),
            ..Default::default()
        }
    }
}

/// qid → (passage id, rank) of a retriever's first positive.
type FirstPositives<'a> = HashMap<&'a str, (&'a str, usize)>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MrrReport {
    pub k: usize,
    pub eligible_count: usize,
    /// `None` when no question is eligible.
    pub mrr: BTreeMap<String, Option<f64>>,
}

/// MRR restricted to questions whose highest-ranked positive within the
/// top `k` is the same passage for every retriever.
pub fn common_positive_mrr(
    runs: &BTreeMap<String, Vec<RankedList>>,
    judgments: &JudgmentSet,
    k: usize,
) -> Result<MrrReport> {
    if runs.len() < 2 {
        return Err(Error::Argument(format!(
            "common-positive MRR needs at least 2 retrievers, got {}",
            runs.len()
        )));
    }
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    // retriever → qid → (passage id, rank) of the first positive in top k
    let mut firsts: Vec<(&str, FirstPositives)> = Vec::new();
    for (name, list) in runs {
        let mut m = HashMap::new();
        for run in list {
            for e in run.top(k) {
                if judgments.require(&run.question_id, &e.passage_id)? {
                    m.insert(run.question_id.as_str(), (e.passage_id.as_str(), e.rank));
                    break;
                }
            }
        }
        firsts.push((name.as_str(), m));
    }

    let (_, reference) = &firsts[0];
    let mut sums = vec![0.0f64; firsts.len()];
    let mut eligible = 0usize;
    let mut qids: Vec<&&str> = reference.keys().collect();
    qids.sort();
    for qid in qids {
        let (pid, _) = reference[*qid];
        let ranks: Option<Vec<usize>> = firsts
            .iter()
            .map(|(_, m)| m.get(*qid).filter(|(p, _)| *p == pid).map(|&(_, r)| r))
            .collect();
        if let Some(ranks) = ranks {
            eligible += 1;
            for (s, r) in sums.iter_mut().zip(ranks) {
                *s += 1.0 / r as f64;
            }
        }
    }
    let mrr = firsts
        .iter()
        .zip(sums)
        .map(|((name, _), s)| {
            let v = (eligible > 0).then(|| s / eligible as f64);
            (name.to_string(), v)
        })
        .collect();
    Ok(MrrReport {
        k,
        eligible_count: eligible,
        mrr,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NormalizeOptions {
    /// Drop the English articles a/an/the.
    pub remove_articles: bool,
}

/// Lowercase, delete punctuation and symbols, optionally drop English
/// articles, collapse whitespace.
pub fn normalize_answer(s: &str, opts: NormalizeOptions) -> String {
    let lowered = s.to_lowercase();
    let stripped: String = lowered
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    stripped
        .split_whitespace()
        .filter(|w| !(opts.remove_articles && matches!(*w, "a" | "an" | "the")))
        .collect::<Vec<_>>()
        .join(" ")
}

fn token_f1(pred: &str, gold: &str) -> f64 {
    let p: Vec<&str> = pred.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    if p.is_empty() || g.is_empty() {
        return if p == g { 1.0 } else { 0.0 };
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *gold_counts.entry(t).or_default() += 1;
    }
    let mut same = 0usize;
    for t in &p {
        if let Some(c) = gold_counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return 0.0;
    }
    let precision = same as f64 / p.len() as f64;
    let recall = same as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// EM and F1 of one prediction against its gold answers (fractions in [0, 1]).
pub fn score_prediction<S: AsRef<str>>(
    prediction: &str,
    golds: &[S],
    opts: NormalizeOptions,
) -> (f64, f64) {
    let pred = normalize_answer(prediction, opts);
    let mut em = 0.0f64;
    let mut f1 = 0.0f64;
    for g in golds {
        let gold = normalize_answer(g.as_ref(), opts);
        if pred == gold {
            em = 1.0;
        }
        f1 = f1.max(token_f1(&pred, &gold));
    }
    (em, f1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReaderScores {
    pub n_questions: usize,
    /// Percent.
    pub em: f64,
    /// Percent.
    pub f1: f64,
    pub missing_predictions: usize,
    #[serde(skip)]
    pub per_question: BTreeMap<String, (f64, f64)>,
}

/// Aggregate EM/F1 over every gold question. Missing predictions score 0.
pub fn em_f1(
    predictions: &HashMap<String, String>,
    golds: &BTreeMap<String, Vec<String>>,
    opts: NormalizeOptions,
) -> ReaderScores {
    let mut per_question = BTreeMap::new();
    let mut missing = 0;
    for (qid, answers) in golds {
        let scores = match predictions.get(qid) {
            Some(pred) => score_prediction(pred, answers, opts),
            None => {
                missing += 1;
                (0.0, 0.0)
            }
        };
        per_question.insert(qid.clone(), scores);
    }
    let n = per_question.len();
    let (em_sum, f1_sum) = per_question
        .values()
        .fold((0.0, 0.0), |(a, b), &(e, f)| (a + e, b + f));
    let denom = n.max(1) as f64;
    ReaderScores {
        n_questions: n,
        em: 100.0 * em_sum / denom,
        f1: 100.0 * f1_sum / denom,
        missing_predictions: missing,
        per_question,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    WithoutReplacement,
    /// Bootstrap resampling with replacement.
    WithReplacement,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsampleStats {
    pub size: usize,
    pub repetitions: usize,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Unbiased (n − 1) standard deviation; 0 for a single repetition.
    pub std_dev: f64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent generator seed for one (size, repetition) stream.
pub fn stream_seed(seed: u64, size: usize, repetition: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ size as u64) ^ repetition as u64)
}

/// Mean of `values` over repeated random samples of each size. Questions
/// are taken in id order, and each (size, repetition) draws from its own
/// generator, so results depend only on the inputs and `seed`.
pub fn subsample_eval(
    values: &BTreeMap<String, f64>,
    sizes: &[usize],
    repetitions: usize,
    seed: u64,
    sampling: Sampling,
) -> Result<Vec<SubsampleStats>> {
    if repetitions == 0 {
        return Err(Error::Argument("repetitions must be at least 1".into()));
    }
    let population: Vec<f64> = values.values().copied().collect();
    let n = population.len();
    sizes
        .iter()
        .map(|&size| {
            if size == 0 || size > n {
                return Err(Error::Argument(format!(
                    "sample size {size} outside 1..={n} (population)"
                )));
            }
            let reps: Vec<f64> = (0..repetitions)
                .map(|rep| {
                    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, size, rep));
                    let sum: f64 = match sampling {
                        Sampling::WithoutReplacement => {
                            // summing in index order makes a full-size sample exact
                            let mut picked = index::sample(&mut rng, n, size).into_vec();
                            picked.sort_unstable();
                            picked.into_iter().map(|i| population[i]).sum()
                        }
                        Sampling::WithReplacement => {
                            (0..size).map(|_| population[rng.random_range(0..n)]).sum()
                        }
                    };
                    sum / size as f64
                })
                .collect();
            // shifting by the first value keeps identical repetitions exact
            let shift = reps[0];
            let mean = shift + reps.iter().map(|v| v - shift).sum::<f64>() / repetitions as f64;
            let std_dev = if repetitions > 1 {
                let ss: f64 = reps.iter().map(|v| (v - mean) * (v - mean)).sum();
                (ss / (repetitions - 1) as f64).sqrt()
            } else {
                0.0
            };
            Ok(SubsampleStats {
                size,
                repetitions,
                values: reps,
                mean,
                std_dev,
            })
        })
        .collect()
}
