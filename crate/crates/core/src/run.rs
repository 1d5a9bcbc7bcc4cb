//! Ranked retrieval output and the TREC run format.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedEntry {
    pub passage_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedList {
    pub question_id: String,
    pub entries: Vec<RankedEntry>,
}

/// Descending score, then ascending passage id.
pub fn rank_order(a: &(impl AsRef<str>, f64), b: &(impl AsRef<str>, f64)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then_with(|| a.0.as_ref().cmp(b.0.as_ref()))
}

impl RankedList {
    pub fn empty(question_id: impl Into<String>) -> Self {
        RankedList {
            question_id: question_id.into(),
            entries: Vec::new(),
        }
    }

    /// Keeps the best `k` of `scored` under [`rank_order`] and numbers them.
    pub fn from_scored<S: AsRef<str> + Into<String>>(
        question_id: impl Into<String>,
        mut scored: Vec<(S, f64)>,
        k: usize,
    ) -> Self {
        if k == 0 {
            scored.clear();
        } else if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, rank_order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(rank_order);
        RankedList {
            question_id: question_id.into(),
            entries: scored
                .into_iter()
                .enumerate()
                .map(|(i, (id, score))| RankedEntry {
                    passage_id: id.into(),
                    score,
                    rank: i + 1,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self, k: usize) -> &[RankedEntry] {
        &self.entries[..k.min(self.entries.len())]
    }
}

/// Writes `qid Q0 passage_id rank score run_tag` lines, scores to 6 decimals.
pub fn write_trec<'a, W, I>(mut w: W, runs: I, run_tag: &str) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a RankedList>,
{
    for run in runs {
        for e in &run.entries {
            writeln!(
                w,
                "{} Q0 {} {} {:.6} {}",
                run.question_id, e.passage_id, e.rank, e.score, run_tag
            )?;
        }
    }
    Ok(())
}

/// Reads a TREC run. Questions keep their first-appearance order; entries
/// are ordered by rank, which must run 1..=n per question.
pub fn read_trec<R: BufRead>(r: R) -> Result<Vec<RankedList>> {
    let mut order: Vec<RankedList> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(Error::format(
                Some(lineno),
                format!("expected 6 fields, found {}", f.len()),
            ));
        }
        let rank: usize = f[3]
            .parse()
            .map_err(|_| Error::format(Some(lineno), format!("bad rank {:?}", f[3])))?;
        let score: f64 = f[4]
            .parse()
            .map_err(|_| Error::format(Some(lineno), format!("bad score {:?}", f[4])))?;
        let i = *slot.entry(f[0].to_string()).or_insert_with(|| {
            order.push(RankedList::empty(f[0]));
            order.len() - 1
        });
        order[i].entries.push(RankedEntry {
            passage_id: f[2].to_string(),
            score,
            rank,
        });
    }
    for run in &mut order {
        run.entries.sort_by_key(|e| e.rank);
        for (i, e) in run.entries.iter().enumerate() {
            if e.rank != i + 1 {
                return Err(Error::format(
                    None,
                    format!("question {}: ranks are not 1..n", run.question_id),
                ));
            }
        }
    }
    Ok(order)
}
