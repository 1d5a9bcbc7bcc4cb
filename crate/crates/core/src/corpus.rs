//! QA datasets in the SQuAD2.0 interchange shape, knowledge-source passages,
//! chunking, and merging QA contexts into a knowledge source.
//!
//! Character offsets (`answer_start`) count Unicode scalar values, never bytes.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Default number of words per knowledge-source chunk.
pub const DEFAULT_CHUNK_SIZE: usize = 75;

/// Prefix that marks passages chunked from QA contexts.
pub const QA_CONTEXT_ID_PREFIX: &str = "qa-";

/// Offset value used for answers whose text is known but whose position in
/// the context is not.
pub const UNKNOWN_ANSWER_START: i64 = -1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaDataset {
    pub version: String,
    #[serde(rename = "data")]
    pub articles: Vec<Article>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub title: String,
    pub paragraphs: Vec<Paragraph>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub context: String,
    pub qas: Vec<QaPair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub id: String,
    pub question: String,
    pub answers: Vec<AnswerSpan>,
    #[serde(default)]
    pub is_impossible: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub text: String,
    pub answer_start: i64,
}

impl AnswerSpan {
    /// True when the span re-slices out of `context` exactly.
    /// Spans carrying the unknown-offset sentinel never validate.
    pub fn is_anchored_in(&self, context: &str) -> bool {
        if self.answer_start < 0 {
            return false;
        }
        let len = self.text.chars().count();
        char_slice(context, self.answer_start as usize, len).is_some_and(|s| s == self.text)
    }
}

/// Borrow `len` scalar values of `s` starting at scalar offset `start`.
pub fn char_slice(s: &str, start: usize, len: usize) -> Option<&str> {
    let mut indices = s.char_indices().map(|(i, _)| i).chain(std::iter::once(s.len()));
    let begin = indices.nth(start)?;
    let end = if len == 0 {
        begin
    } else {
        indices.nth(len - 1)?
    };
    Some(&s[begin..end])
}

impl QaDataset {
    pub fn empty(version: impl Into<String>) -> Self {
        QaDataset {
            version: version.into(),
            articles: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("QaDataset serializes")
    }

    /// All QA pairs in document order, with the context they belong to.
    pub fn qas(&self) -> impl Iterator<Item = (&Article, &Paragraph, &QaPair)> {
        self.articles.iter().flat_map(|a| {
            a.paragraphs
                .iter()
                .flat_map(move |p| p.qas.iter().map(move |q| (a, p, q)))
        })
    }

    pub fn question_count(&self) -> usize {
        self.qas().count()
    }

    /// Map from question id to the (deduplicated, order-preserving) gold answer texts.
    pub fn gold_answers(&self) -> HashMap<&str, Vec<&str>> {
        let mut out: HashMap<&str, Vec<&str>> = HashMap::new();
        for (_, _, qa) in self.qas() {
            let entry = out.entry(qa.id.as_str()).or_default();
            for ans in &qa.answers {
                if !entry.contains(&ans.text.as_str()) {
                    entry.push(ans.text.as_str());
                }
            }
        }
        out
    }

    /// Checks the structural invariants: non-empty titles and contexts,
    /// unique QA ids, and answerability consistent with the answer list.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (ai, article) in self.articles.iter().enumerate() {
            if article.title.is_empty() {
                return Err(Error::schema(format!("data[{ai}].title"), "empty title"));
            }
            for (pi, para) in article.paragraphs.iter().enumerate() {
                if para.context.is_empty() {
                    return Err(Error::schema(
                        format!("data[{ai}].paragraphs[{pi}].context"),
                        "empty context",
                    ));
                }
                for (qi, qa) in para.qas.iter().enumerate() {
                    let path = format!("data[{ai}].paragraphs[{pi}].qas[{qi}]");
                    if !seen.insert(qa.id.as_str()) {
                        return Err(Error::schema(
                            format!("{path}.id"),
                            format!("duplicate question id {:?}", qa.id),
                        ));
                    }
                    if qa.is_impossible && !qa.answers.is_empty() {
                        return Err(Error::schema(
                            format!("{path}.answers"),
                            "unanswerable question carries answers",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Rewrites `answer_start` values given as UTF-8 byte offsets into
    /// scalar-value offsets. Offsets that do not fall on a character
    /// boundary become [`UNKNOWN_ANSWER_START`].
    pub fn convert_byte_offsets(&mut self) {
        for article in &mut self.articles {
            for para in &mut article.paragraphs {
                let ctx = &para.context;
                for qa in &mut para.qas {
                    for ans in &mut qa.answers {
                        let b = ans.answer_start;
                        ans.answer_start = if b >= 0
                            && (b as usize) <= ctx.len()
                            && ctx.is_char_boundary(b as usize)
                        {
                            ctx[..b as usize].chars().count() as i64
                        } else {
                            UNKNOWN_ANSWER_START
                        };
                    }
                }
            }
        }
    }

    /// Drops paragraphs without QA pairs, then articles without paragraphs.
    /// Returns the number of paragraphs dropped.
    pub fn prune_empty(&mut self) -> usize {
        let mut dropped = 0;
        for article in &mut self.articles {
            let before = article.paragraphs.len();
            article.paragraphs.retain(|p| !p.qas.is_empty());
            dropped += before - article.paragraphs.len();
        }
        self.articles.retain(|a| !a.paragraphs.is_empty());
        dropped
    }
}

/// Parses a SQuAD2.0-shaped JSON document. Unknown fields are ignored.
pub fn parse_squad_json(bytes: &[u8]) -> Result<QaDataset> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let dataset: QaDataset = match serde_path_to_error::deserialize(&mut de) {
        Ok(d) => d,
        Err(err) => {
            let path = err.path().to_string();
            let inner = err.into_inner();
            return Err(json_error(bytes, path, inner));
        }
    };
    de.end().map_err(|e| json_error(bytes, String::new(), e))?;
    dataset.validate()?;
    Ok(dataset)
}

fn json_error(bytes: &[u8], path: String, err: serde_json::Error) -> Error {
    use serde_json::error::Category;
    match err.classify() {
        Category::Syntax | Category::Eof | Category::Io => Error::Json {
            offset: byte_offset(bytes, err.line(), err.column()),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        },
        Category::Data => {
            let path = if path.is_empty() || path == "." {
                "$".to_string()
            } else {
                format!("$.{path}")
            };
            Error::schema(path, strip_position(&err.to_string()))
        }
    }
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    let mut offset = 0;
    for _ in 1..line {
        match bytes[offset..].iter().position(|&b| b == b'\n') {
            Some(p) => offset += p + 1,
            None => return bytes.len(),
        }
    }
    (offset + column.saturating_sub(1)).min(bytes.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassageSource {
    Wiki,
    QaContext,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub title: String,
    pub text: String,
    pub source: PassageSource,
    pub word_count: usize,
}

impl Passage {
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        text: impl Into<String>,
        source: PassageSource,
    ) -> Self {
        let text = text.into();
        let word_count = text.split_whitespace().count();
        Passage {
            id: id.into(),
            title: title.into(),
            text,
            source,
            word_count,
        }
    }
}

/// An ordered, id-addressable set of passages.
#[derive(Debug, Clone)]
pub struct PassageCollection {
    passages: Vec<Passage>,
    chunk_size: usize,
    by_id: HashMap<String, usize>,
}

impl PassageCollection {
    pub fn new(passages: Vec<Passage>, chunk_size: usize) -> Result<Self> {
        if chunk_size == 0 {
            return Err(Error::Argument("chunk_size must be at least 1".into()));
        }
        let mut by_id = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if p.word_count != p.text.split_whitespace().count() {
                return Err(Error::Data(format!(
                    "passage {:?}: word_count does not match its text",
                    p.id
                )));
            }
            if p.word_count > chunk_size {
                return Err(Error::Data(format!(
                    "passage {:?} has {} words, above chunk size {}",
                    p.id, p.word_count, chunk_size
                )));
            }
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate passage id {:?}", p.id)));
            }
        }
        Ok(PassageCollection {
            passages,
            chunk_size,
            by_id,
        })
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.by_id.get(id).map(|&i| &self.passages[i])
    }

    pub fn ordinal(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Writes the `id<TAB>text<TAB>title` passage file.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "id\ttext\ttitle")?;
        for p in &self.passages {
            writeln!(
                w,
                "{}\t{}\t{}",
                tsv_field(&p.id),
                tsv_field(&p.text),
                tsv_field(&p.title)
            )?;
        }
        Ok(())
    }

    /// Reads a passage file written by [`write_tsv`](Self::write_tsv).
    /// Ids carrying [`QA_CONTEXT_ID_PREFIX`] are tagged as QA contexts.
    pub fn read_tsv<R: BufRead>(r: R, chunk_size: usize) -> Result<Self> {
        let mut lines = r.lines();
        match lines.next() {
            Some(header) => {
                let header = header?;
                if header.trim_end_matches('\r') != "id\ttext\ttitle" {
                    return Err(Error::format(Some(0), format!("unexpected header {header:?}")));
                }
            }
            None => return Err(Error::format(None, "missing header line")),
        }
        let mut passages = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let mut fields = line.splitn(3, '\t');
            let (Some(id), Some(text), Some(title)) = (fields.next(), fields.next(), fields.next())
            else {
                return Err(Error::format(Some(i + 1), "expected 3 tab-separated fields"));
            };
            let source = if id.starts_with(QA_CONTEXT_ID_PREFIX) {
                PassageSource::QaContext
            } else {
                PassageSource::Wiki
            };
            passages.push(Passage::new(id, title, text, source));
        }
        PassageCollection::new(passages, chunk_size)
    }
}

fn tsv_field(s: &str) -> std::borrow::Cow<'_, str> {
    if s.contains(['\t', '\n', '\r']) {
        let mut out = String::with_capacity(s.len());
        let mut last_sep = false;
        for c in s.chars() {
            if matches!(c, '\t' | '\n' | '\r') {
                if !last_sep {
                    out.push(' ');
                }
                last_sep = true;
            } else {
                out.push(c);
                last_sep = false;
            }
        }
        out.into()
    } else {
        s.into()
    }
}

/// A document to be chunked into passages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub title: String,
    pub text: String,
}

fn chunk_one(
    id_prefix: &str,
    doc_index: usize,
    title: &str,
    body: &str,
    chunk_size: usize,
    source: PassageSource,
) -> Vec<Passage> {
    let words: Vec<&str> = body.split_whitespace().collect();
    words
        .chunks(chunk_size)
        .enumerate()
        .map(|(ci, chunk)| Passage {
            id: format!("{id_prefix}{doc_index}:{ci}"),
            title: title.to_string(),
            text: chunk.join(" "),
            source,
            word_count: chunk.len(),
        })
        .collect()
}

fn chunk_all<'a, I>(docs: I, chunk_size: usize, id_prefix: &str, source: PassageSource) -> Vec<Passage>
where
    I: IndexedParallelIterator<Item = (&'a str, &'a str)>,
{
    docs.enumerate()
        .map(|(i, (title, body))| chunk_one(id_prefix, i, title, body, chunk_size, source))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Splits every document into consecutive, non-overlapping runs of
/// `chunk_size` whitespace words. Passage ids are `<doc_index>:<chunk_index>`.
pub fn chunk_passages(documents: &[Document], chunk_size: usize) -> Result<PassageCollection> {
    if chunk_size == 0 {
        return Err(Error::Argument("chunk_size must be at least 1".into()));
    }
    let passages = chunk_all(
        documents
            .par_iter()
            .map(|d| (d.title.as_str(), d.text.as_str())),
        chunk_size,
        "",
        PassageSource::Wiki,
    );
    PassageCollection::new(passages, chunk_size)
}

/// Appends the chunked, deduplicated contexts of `qa_datasets` to `wiki`.
///
/// Contexts are keyed by their NFC-normalized text; the first occurrence
/// (and its article title) wins. QA-context passage ids are
/// `qa-<context_index>:<chunk_index>`.
pub fn merge_knowledge_source(
    wiki: &PassageCollection,
    qa_datasets: &[QaDataset],
    chunk_size: usize,
) -> Result<PassageCollection> {
    if wiki.chunk_size() != chunk_size {
        return Err(Error::Argument(format!(
            "chunk size mismatch: knowledge source uses {}, requested {}",
            wiki.chunk_size(),
            chunk_size
        )));
    }
    let mut seen = HashSet::new();
    let mut contexts: Vec<(&str, &str)> = Vec::new();
    for ds in qa_datasets {
        for article in &ds.articles {
            for para in &article.paragraphs {
                let key: String = para.context.nfc().collect();
                if seen.insert(key) {
                    contexts.push((article.title.as_str(), para.context.as_str()));
                }
            }
        }
    }
    let mut passages = wiki.passages().to_vec();
    passages.extend(chunk_all(
        contexts.into_par_iter(),
        chunk_size,
        QA_CONTEXT_ID_PREFIX,
        PassageSource::QaContext,
    ));
    PassageCollection::new(passages, chunk_size)
}
