//! Answer-span recovery for machine-translated QA data.
//!
//! Translated answers are re-located inside their translated contexts: exact
//! occurrences first, then approximate occurrences under character-level
//! Levenshtein distance with a length-dependent threshold.
//!
//! Approximate candidates must sit on token edges: a candidate can neither
//! begin nor end inside a run of letters/digits, and never begins or ends on
//! whitespace. Without that rule the longest span within distance `t` tends
//! to swallow neighbouring characters (`"12.4 milyon i"` instead of
//! `"12.4 milyon"`).

use std::collections::HashSet;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{AnswerSpan, QaDataset};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct SpanMatch {
    /// Offset in Unicode scalar values.
    pub start: usize,
    pub text: String,
    pub distance: usize,
}

/// Edit-distance budget for an answer: 1 below four characters, else 3.
pub fn threshold(answer: &str) -> usize {
    if answer.chars().count() < 4 {
        1
    } else {
        3
    }
}

/// Every verbatim occurrence of `answer` (overlaps included), by ascending start.
pub fn find_exact_spans(context: &str, answer: &str) -> Vec<SpanMatch> {
    let ctx: Vec<char> = context.chars().collect();
    let ans: Vec<char> = answer.chars().collect();
    if ans.is_empty() || ans.len() > ctx.len() {
        return Vec::new();
    }
    ctx.windows(ans.len())
        .enumerate()
        .filter(|(_, w)| *w == ans.as_slice())
        .map(|(start, _)| SpanMatch {
            start,
            text: answer.to_string(),
            distance: 0,
        })
        .collect()
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// A span may start at `s` when it does not cut a letter/digit run and does
/// not open on whitespace.
fn can_start(ctx: &[char], s: usize) -> bool {
    s < ctx.len()
        && !ctx[s].is_whitespace()
        && (s == 0 || !(is_word_char(ctx[s - 1]) && is_word_char(ctx[s])))
}

/// A span may end (exclusive) at `e` under the mirror-image rule.
fn can_end(ctx: &[char], e: usize) -> bool {
    e > 0
        && !ctx[e - 1].is_whitespace()
        && (e == ctx.len() || !(is_word_char(ctx[e - 1]) && is_word_char(ctx[e])))
}

/// Approximate occurrences of `answer` in `context`.
///
/// Candidates have length within `len(answer) ± t`, respect token edges and
/// lie within distance `t = threshold(answer)`. Only candidates of the
/// maximal surviving length are returned, ordered by start.
pub fn find_fuzzy_spans(context: &str, answer: &str) -> Vec<SpanMatch> {
    let ctx: Vec<char> = context.chars().collect();
    let ans: Vec<char> = answer.chars().collect();
    if ans.is_empty() || ctx.is_empty() {
        return Vec::new();
    }
    let t = threshold(answer);
    let min_len = ans.len().saturating_sub(t).max(1);
    let max_len = ans.len() + t;

    let mut best_len = 0;
    let mut found: Vec<(usize, usize)> = Vec::new();
    // column[i] = distance between ans[..i] and the current context window
    let mut column: Vec<usize> = vec![0; ans.len() + 1];

    for s in 0..ctx.len() {
        if !can_start(&ctx, s) {
            continue;
        }
        for (i, v) in column.iter_mut().enumerate() {
            *v = i;
        }
        let limit = (s + max_len).min(ctx.len());
        for e in s + 1..=limit {
            let c = ctx[e - 1];
            let mut diag = column[0];
            column[0] = e - s;
            let mut col_min = column[0];
            for i in 1..=ans.len() {
                let up = column[i];
                let cost = usize::from(ans[i - 1] != c);
                let v = (diag + cost).min(up + 1).min(column[i - 1] + 1);
                diag = up;
                column[i] = v;
                col_min = col_min.min(v);
            }
            let len = e - s;
            let dist = column[ans.len()];
            if len >= min_len && dist <= t && len >= best_len && can_end(&ctx, e) {
                if len > best_len {
                    best_len = len;
                    found.clear();
                }
                found.push((s, dist));
            }
            // column minima never decrease as the window grows
            if col_min > t {
                break;
            }
        }
    }

    found
        .into_iter()
        .map(|(start, distance)| SpanMatch {
            start,
            text: ctx[start..start + best_len].iter().collect(),
            distance,
        })
        .collect()
}

/// Exact occurrences when there are any, otherwise approximate ones.
pub fn locate_answer(context: &str, answer: &str) -> Vec<SpanMatch> {
    let exact = find_exact_spans(context, answer);
    if exact.is_empty() {
        find_fuzzy_spans(context, answer)
    } else {
        exact
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    EmptyAnswer,
    NoAnswers,
    NoMatch,
}

impl ExclusionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::EmptyAnswer => "empty answer",
            ExclusionReason::NoAnswers => "no answers",
            ExclusionReason::NoMatch => "no match within edit distance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExcludedPair {
    pub qa_id: String,
    pub answer_text: String,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RecoveryReport {
    pub answerable_input: usize,
    pub recovered_count: usize,
    /// Pairs whose answers were all found verbatim.
    pub exact_count: usize,
    /// Pairs that needed at least one approximate match.
    pub fuzzy_count: usize,
    pub unanswerable_passthrough: usize,
    /// One row per (excluded pair, answer text).
    pub excluded_pairs: Vec<ExcludedPair>,
    pub dropped_paragraphs: usize,
    pub dropped_articles: usize,
}

impl RecoveryReport {
    /// Number of distinct excluded QA pairs.
    pub fn excluded_count(&self) -> usize {
        self.excluded_pairs
            .iter()
            .map(|e| e.qa_id.as_str())
            .collect::<HashSet<_>>()
            .len()
    }

    /// Writes the `qa_id<TAB>answer_text<TAB>reason` ledger.
    pub fn write_excluded_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.excluded_pairs {
            writeln!(
                w,
                "{}\t{}\t{}",
                clean(&e.qa_id),
                clean(&e.answer_text),
                e.reason.as_str()
            )?;
        }
        Ok(())
    }
}

fn clean(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

enum PairOutcome {
    Recovered { spans: Vec<AnswerSpan>, fuzzy: bool },
    Excluded(Vec<ExcludedPair>),
}

/// Recovers spans for a set of answer texts against one context. Duplicate
/// (start, text) spans across answers are emitted once.
pub fn recover_spans(context: &str, answers: &[&str]) -> (Vec<AnswerSpan>, bool) {
    let mut seen = HashSet::new();
    let mut spans = Vec::new();
    let mut fuzzy = false;
    for answer in answers.iter().filter(|a| !a.is_empty()) {
        let exact = find_exact_spans(context, answer);
        let matches = if exact.is_empty() {
            let f = find_fuzzy_spans(context, answer);
            fuzzy |= !f.is_empty();
            f
        } else {
            exact
        };
        for m in matches {
            if seen.insert((m.start, m.text.clone())) {
                spans.push(AnswerSpan {
                    text: m.text,
                    answer_start: m.start as i64,
                });
            }
        }
    }
    (spans, fuzzy)
}

fn recover_pair(context: &str, qa: &crate::corpus::QaPair) -> PairOutcome {
    if qa.answers.is_empty() {
        return PairOutcome::Excluded(vec![ExcludedPair {
            qa_id: qa.id.clone(),
            answer_text: String::new(),
            reason: ExclusionReason::NoAnswers,
        }]);
    }
    let mut texts: Vec<&str> = Vec::new();
    for a in &qa.answers {
        if !texts.contains(&a.text.as_str()) {
            texts.push(&a.text);
        }
    }
    let (spans, fuzzy) = recover_spans(context, &texts);
    if spans.is_empty() {
        PairOutcome::Excluded(
            texts
                .iter()
                .map(|t| ExcludedPair {
                    qa_id: qa.id.clone(),
                    answer_text: t.to_string(),
                    reason: if t.is_empty() {
                        ExclusionReason::EmptyAnswer
                    } else {
                        ExclusionReason::NoMatch
                    },
                })
                .collect(),
        )
    } else {
        PairOutcome::Recovered { spans, fuzzy }
    }
}

/// Re-anchors every answerable pair of `raw`, dropping pairs without any
/// recoverable span and any paragraph or article left empty.
pub fn recover_dataset(raw: &QaDataset) -> (QaDataset, RecoveryReport) {
    let mut out = raw.clone();
    let mut report = RecoveryReport::default();

    let paragraphs: Vec<&mut crate::corpus::Paragraph> = out
        .articles
        .iter_mut()
        .flat_map(|a| a.paragraphs.iter_mut())
        .collect();

    let partials: Vec<RecoveryReport> = paragraphs
        .into_par_iter()
        .map(|para| {
            let mut partial = RecoveryReport::default();
            let context = para.context.as_str();
            let mut kept = Vec::with_capacity(para.qas.len());
            for mut qa in std::mem::take(&mut para.qas) {
                if qa.is_impossible {
                    partial.unanswerable_passthrough += 1;
                    kept.push(qa);
                    continue;
                }
                partial.answerable_input += 1;
                match recover_pair(context, &qa) {
                    PairOutcome::Recovered { spans, fuzzy } => {
                        partial.recovered_count += 1;
                        if fuzzy {
                            partial.fuzzy_count += 1;
                        } else {
                            partial.exact_count += 1;
                        }
                        qa.answers = spans;
                        kept.push(qa);
                    }
                    PairOutcome::Excluded(rows) => partial.excluded_pairs.extend(rows),
                }
            }
            para.qas = kept;
            partial
        })
        .collect();

    for p in partials {
        report.answerable_input += p.answerable_input;
        report.recovered_count += p.recovered_count;
        report.exact_count += p.exact_count;
        report.fuzzy_count += p.fuzzy_count;
        report.unanswerable_passthrough += p.unanswerable_passthrough;
        report.excluded_pairs.extend(p.excluded_pairs);
    }
    let articles_before = out.articles.len();
    report.dropped_paragraphs = out.prune_empty();
    report.dropped_articles = articles_before - out.articles.len();
    (out, report)
}
