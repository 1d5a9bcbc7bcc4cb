//! Weak supervision from retrieval runs: positive/negative judgments by
//! answer containment, training triples, hard-negative pairs, and
//! retriever-specific reader datasets.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{
    AnswerSpan, Article, Paragraph, PassageCollection, QaDataset, QaPair, UNKNOWN_ANSWER_START,
};
use crate::error::{Error, Result};
use crate::run::RankedList;
use crate::span::recover_spans;
use crate::tokenize::TokenizationScheme;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Judgment {
    pub question_id: String,
    pub passage_id: String,
    pub positive: bool,
}

/// (question id, passage id) → positive.
#[derive(Debug, Clone, Default)]
pub struct JudgmentSet {
    map: HashMap<String, HashMap<String, bool>>,
    order: Vec<(String, String)>,
    len: usize,
}

impl JudgmentSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, j: Judgment) {
        let per_q = self.map.entry(j.question_id.clone()).or_default();
        if per_q.insert(j.passage_id.clone(), j.positive).is_none() {
            self.order.push((j.question_id, j.passage_id));
            self.len += 1;
        }
    }

    pub fn get(&self, question_id: &str, passage_id: &str) -> Option<bool> {
        self.map.get(question_id)?.get(passage_id).copied()
    }

    /// Like [`get`](Self::get) but a missing judgment is a data error.
    pub fn require(&self, question_id: &str, passage_id: &str) -> Result<bool> {
        self.get(question_id, passage_id).ok_or_else(|| {
            Error::Data(format!(
                "no judgment for question {question_id:?}, passage {passage_id:?}"
            ))
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Writes `qid<TAB>pid<TAB>0|1`, in insertion order.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for (q, p) in &self.order {
            writeln!(w, "{q}\t{p}\t{}", u8::from(self.map[q][p]))?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut set = JudgmentSet::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::format(Some(i), "expected qid, pid and 0|1"));
            }
            let positive = match f[2] {
                "0" => false,
                "1" => true,
                other => return Err(Error::format(Some(i), format!("bad label {other:?}"))),
            };
            set.insert(Judgment {
                question_id: f[0].into(),
                passage_id: f[1].into(),
                positive,
            });
        }
        Ok(set)
    }
}

impl FromIterator<Judgment> for JudgmentSet {
    fn from_iter<I: IntoIterator<Item = Judgment>>(iter: I) -> Self {
        let mut set = JudgmentSet::new();
        for j in iter {
            set.insert(j);
        }
        set
    }
}

fn judge_with(
    run: &RankedList,
    answers: &[&str],
    passages: &PassageCollection,
    scheme: &TokenizationScheme,
) -> Result<Vec<Judgment>> {
    run.entries
        .iter()
        .map(|e| {
            let passage = passages.get(&e.passage_id).ok_or_else(|| {
                Error::Data(format!("run references unknown passage {:?}", e.passage_id))
            })?;
            let positive = !answers.is_empty() && scheme.contains_answer(&passage.text, answers)?;
            Ok(Judgment {
                question_id: run.question_id.clone(),
                passage_id: e.passage_id.clone(),
                positive,
            })
        })
        .collect()
}

/// Judges every entry of `run` against all gold answer texts of its question.
pub fn judge_run(
    run: &RankedList,
    dataset: &QaDataset,
    passages: &PassageCollection,
    scheme: &TokenizationScheme,
) -> Result<Vec<Judgment>> {
    let golds = dataset.gold_answers();
    let answers = golds.get(run.question_id.as_str()).ok_or_else(|| {
        Error::Data(format!("run references unknown question {:?}", run.question_id))
    })?;
    judge_with(run, answers, passages, scheme)
}

/// [`judge_run`] over many runs, in parallel, preserving run order.
pub fn judge_runs(
    runs: &[RankedList],
    dataset: &QaDataset,
    passages: &PassageCollection,
    scheme: &TokenizationScheme,
) -> Result<JudgmentSet> {
    let golds = dataset.gold_answers();
    let per_run: Vec<Vec<Judgment>> = runs
        .par_iter()
        .map(|run| {
            let answers = golds.get(run.question_id.as_str()).ok_or_else(|| {
                Error::Data(format!("run references unknown question {:?}", run.question_id))
            })?;
            judge_with(run, answers, passages, scheme)
        })
        .collect::<Result<_>>()?;
    Ok(per_run.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Triple {
    pub question_id: String,
    pub positive_id: String,
    pub negative_id: String,
}

/// Windows for triple and pair mining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MiningWindows {
    /// Maximum number of positives kept per question.
    pub k_pos: usize,
    /// Positives (and DPR hard negatives) come from this many top results.
    pub pos_window: usize,
    /// Triple negatives come from this many top results.
    pub neg_window: usize,
}

impl Default for MiningWindows {
    fn default() -> Self {
        MiningWindows {
            k_pos: 3,
            pos_window: 20,
            neg_window: 100,
        }
    }
}

impl MiningWindows {
    pub fn validate(&self) -> Result<()> {
        if self.k_pos == 0 || self.pos_window == 0 || self.neg_window == 0 {
            return Err(Error::Argument("mining windows must be at least 1".into()));
        }
        if self.pos_window > self.neg_window {
            return Err(Error::Argument(format!(
                "positive window {} exceeds negative window {}",
                self.pos_window, self.neg_window
            )));
        }
        Ok(())
    }
}

/// The first `k_pos` positive passage ids within the top `pos_window`.
fn positives<'a>(
    run: &'a RankedList,
    judgments: &JudgmentSet,
    k_pos: usize,
    pos_window: usize,
) -> Result<Vec<&'a str>> {
    let mut out = Vec::new();
    for e in run.top(pos_window) {
        if out.len() == k_pos {
            break;
        }
        if judgments.require(&run.question_id, &e.passage_id)? {
            out.push(e.passage_id.as_str());
        }
    }
    Ok(out)
}

/// Cross product of the used positives with every negative in the top
/// `neg_window`, ordered by (positive rank, negative rank).
pub fn mine_triples(
    run: &RankedList,
    judgments: &JudgmentSet,
    windows: &MiningWindows,
) -> Result<Vec<Triple>> {
    let pos = positives(run, judgments, windows.k_pos, windows.pos_window)?;
    if pos.is_empty() {
        return Ok(Vec::new());
    }
    let mut neg = Vec::new();
    for e in run.top(windows.neg_window) {
        if !judgments.require(&run.question_id, &e.passage_id)? {
            neg.push(e.passage_id.as_str());
        }
    }
    Ok(pos
        .iter()
        .flat_map(|p| {
            neg.iter().map(|n| Triple {
                question_id: run.question_id.clone(),
                positive_id: p.to_string(),
                negative_id: n.to_string(),
            })
        })
        .collect())
}

/// Each used positive paired with the single highest-ranked negative in
/// the top `pos_window`.
pub fn mine_dpr_pairs(
    run: &RankedList,
    judgments: &JudgmentSet,
    windows: &MiningWindows,
) -> Result<Vec<Triple>> {
    let pos = positives(run, judgments, windows.k_pos, windows.pos_window)?;
    if pos.is_empty() {
        return Ok(Vec::new());
    }
    let mut hard = None;
    for e in run.top(windows.pos_window) {
        if !judgments.require(&run.question_id, &e.passage_id)? {
            hard = Some(e.passage_id.as_str());
            break;
        }
    }
    let Some(hard) = hard else {
        return Ok(Vec::new());
    };
    Ok(pos
        .into_iter()
        .map(|p| Triple {
            question_id: run.question_id.clone(),
            positive_id: p.to_string(),
            negative_id: hard.to_string(),
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MiningReport {
    pub questions: usize,
    pub rows: usize,
    /// Questions without any positive in the positive window.
    pub skipped_no_positive: usize,
    /// Questions with positives but no usable negative.
    pub skipped_no_negative: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiningKind {
    Triples,
    DprPairs,
}

/// Mines every run, in parallel, keeping run order.
pub fn mine_all(
    runs: &[RankedList],
    judgments: &JudgmentSet,
    windows: &MiningWindows,
    kind: MiningKind,
) -> Result<(Vec<Triple>, MiningReport)> {
    windows.validate()?;
    let per_run: Vec<(Vec<Triple>, bool)> = runs
        .par_iter()
        .map(|run| {
            let rows = match kind {
                MiningKind::Triples => mine_triples(run, judgments, windows)?,
                MiningKind::DprPairs => mine_dpr_pairs(run, judgments, windows)?,
            };
            let has_pos = !positives(run, judgments, windows.k_pos, windows.pos_window)?.is_empty();
            Ok((rows, has_pos))
        })
        .collect::<Result<_>>()?;
    let mut report = MiningReport {
        questions: runs.len(),
        ..Default::default()
    };
    let mut all = Vec::new();
    for (rows, has_pos) in per_run {
        if !has_pos {
            report.skipped_no_positive += 1;
        } else if rows.is_empty() {
            report.skipped_no_negative += 1;
        }
        all.extend(rows);
    }
    report.rows = all.len();
    Ok((all, report))
}

/// Writes `qid<TAB>pos_pid<TAB>neg_pid` rows.
pub fn write_triples_tsv<W: Write>(mut w: W, rows: &[Triple]) -> Result<()> {
    for t in rows {
        writeln!(w, "{}\t{}\t{}", t.question_id, t.positive_id, t.negative_id)?;
    }
    Ok(())
}

pub fn read_triples_tsv<R: BufRead>(r: R) -> Result<Vec<Triple>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if f.len() != 3 {
            return Err(Error::format(Some(i), "expected 3 tab-separated fields"));
        }
        out.push(Triple {
            question_id: f[0].into(),
            positive_id: f[1].into(),
            negative_id: f[2].into(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReaderTallies {
    pub skipped_no_results: usize,
    pub fallback_rank1_count: usize,
    pub positive_context_count: usize,
    /// Questions whose selected context yielded no span; their answers
    /// carry the unknown-offset sentinel.
    pub unanchored_count: usize,
}

/// Which passage a question's reader context comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContextChoice<'a> {
    Positive { passage_id: &'a str, rank: usize },
    Fallback { passage_id: &'a str },
}

/// The first positive within the top `reader_top`, else the rank-1 passage.
/// `None` for an empty run.
pub fn choose_context<'a>(
    run: &'a RankedList,
    judgments: &JudgmentSet,
    reader_top: usize,
) -> Result<Option<ContextChoice<'a>>> {
    let Some(first) = run.entries.first() else {
        return Ok(None);
    };
    for e in run.top(reader_top) {
        if judgments.require(&run.question_id, &e.passage_id)? {
            return Ok(Some(ContextChoice::Positive {
                passage_id: &e.passage_id,
                rank: e.rank,
            }));
        }
    }
    Ok(Some(ContextChoice::Fallback {
        passage_id: &first.passage_id,
    }))
}

/// Builds a reader dataset whose contexts are the passages chosen by
/// [`choose_context`]. Answerable questions without a run (or with an empty
/// one) are dropped and tallied. Questions sharing a selected passage share
/// one paragraph; paragraphs are grouped into articles by passage title.
pub fn build_reader_dataset(
    runs: &[RankedList],
    dataset: &QaDataset,
    passages: &PassageCollection,
    judgments: &JudgmentSet,
    reader_top: usize,
) -> Result<(QaDataset, ReaderTallies)> {
    if reader_top == 0 {
        return Err(Error::Argument("reader_top must be at least 1".into()));
    }
    let by_qid: HashMap<&str, &RankedList> =
        runs.iter().map(|r| (r.question_id.as_str(), r)).collect();
    let mut tallies = ReaderTallies::default();

    let mut articles: Vec<Article> = Vec::new();
    let mut article_slot: HashMap<String, usize> = HashMap::new();
    let mut para_slot: HashMap<String, (usize, usize)> = HashMap::new();

    for (_, _, qa) in dataset.qas() {
        if qa.is_impossible {
            continue;
        }
        let choice = match by_qid.get(qa.id.as_str()) {
            Some(run) => choose_context(run, judgments, reader_top)?,
            None => None,
        };
        let Some(choice) = choice else {
            tallies.skipped_no_results += 1;
            continue;
        };
        let passage_id = match choice {
            ContextChoice::Positive { passage_id, .. } => {
                tallies.positive_context_count += 1;
                passage_id
            }
            ContextChoice::Fallback { passage_id } => {
                tallies.fallback_rank1_count += 1;
                passage_id
            }
        };
        let passage = passages
            .get(passage_id)
            .ok_or_else(|| Error::Data(format!("run references unknown passage {passage_id:?}")))?;

        let mut golds: Vec<&str> = Vec::new();
        for a in &qa.answers {
            if !golds.contains(&a.text.as_str()) {
                golds.push(&a.text);
            }
        }
        let (mut answers, _) = recover_spans(&passage.text, &golds);
        if answers.is_empty() {
            tallies.unanchored_count += 1;
            answers = golds
                .iter()
                .map(|t| AnswerSpan {
                    text: t.to_string(),
                    answer_start: UNKNOWN_ANSWER_START,
                })
                .collect();
        }
        let out_qa = QaPair {
            id: qa.id.clone(),
            question: qa.question.clone(),
            answers,
            is_impossible: false,
        };

        let (ai, pi) = match para_slot.get(passage_id) {
            Some(&slot) => slot,
            None => {
                let ai = *article_slot.entry(passage.title.clone()).or_insert_with(|| {
                    articles.push(Article {
                        title: if passage.title.is_empty() {
                            passage.id.clone()
                        } else {
                            passage.title.clone()
                        },
                        paragraphs: Vec::new(),
                    });
                    articles.len() - 1
                });
                articles[ai].paragraphs.push(Paragraph {
                    context: passage.text.clone(),
                    qas: Vec::new(),
                });
                let slot = (ai, articles[ai].paragraphs.len() - 1);
                para_slot.insert(passage_id.to_string(), slot);
                slot
            }
        };
        articles[ai].paragraphs[pi].qas.push(out_qa);
    }

    Ok((
        QaDataset {
            version: dataset.version.clone(),
            articles,
        },
        tallies,
    ))
}
