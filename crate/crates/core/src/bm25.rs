//! Okapi BM25 over an in-memory inverted index.
//!
//! The score of passage `d` for query terms `q_1..q_n` is
//!
//! ```text
//! Σ_i  ln(N / df(q_i)) · f(q_i, d) / (f(q_i, d) + k1 · (1 − b + b · |d| / avgdl))
//! ```
//!
//! Terms absent from the corpus (df = 0) contribute nothing. The indexed
//! text of a passage is its title, a space, then its body.
//!
//! ## `OQIX1` file layout
//!
//! All integers little-endian; `str` is a `u32` byte length then UTF-8 bytes.
//!
//! ```text
//! magic       5 bytes  "OQIX1"
//! version     u32      1
//! kind        u8       0 whitespace, 1 morphological, 2 enhanced whitespace
//! tr_case     u8       1 if Turkish dotted/dotless-i lowercasing is on
//! stemmer     str      stemmer spec ("" when none)
//! n_docs      u32
//! n_docs ×    str id, u32 length in tokens
//! n_terms     u32
//! n_terms ×   str term, u32 df, df × (varint ordinal delta, varint tf)
//! ```
//!
//! Terms are written in byte order; ordinal deltas are relative to the
//! previous posting of the same term (the first is relative to 0).

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use rayon::prelude::*;

use crate::corpus::PassageCollection;
use crate::error::{Error, Result};
use crate::run::RankedList;
use crate::tokenize::{stemmer_from_spec, SchemeKind, Stemmer, TokenList, TokenizationScheme};

const MAGIC: &[u8; 5] = b"OQIX1";
const VERSION: u32 = 1;
const SHARD_SIZE: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    k1: f64,
    b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self> {
        if !(k1 > 0.0 && k1.is_finite()) {
            return Err(Error::Argument(format!("k1 must be > 0, got {k1}")));
        }
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::Argument(format!("b must lie in [0, 1], got {b}")));
        }
        Ok(Bm25Params { k1, b })
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub ordinal: u32,
    pub tf: u32,
}

#[derive(Debug, Clone)]
pub struct InvertedIndex {
    postings: HashMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    ids: Vec<String>,
    avgdl: f64,
    scheme: TokenizationScheme,
}

type Shard = (HashMap<String, Vec<Posting>>, Vec<u32>);

fn index_shard(
    passages: &[crate::corpus::Passage],
    base: usize,
    scheme: &TokenizationScheme,
) -> Result<Shard> {
    let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
    let mut lengths = Vec::with_capacity(passages.len());
    for (i, p) in passages.iter().enumerate() {
        let ordinal = (base + i) as u32;
        let tokens = scheme.tokenize(&format!("{} {}", p.title, p.text))?;
        lengths.push(tokens.len() as u32);
        let mut tf: HashMap<&str, u32> = HashMap::new();
        for t in &tokens {
            *tf.entry(t.as_str()).or_default() += 1;
        }
        for (term, tf) in tf {
            postings
                .entry(term.to_string())
                .or_default()
                .push(Posting { ordinal, tf });
        }
    }
    Ok((postings, lengths))
}

impl InvertedIndex {
    /// Indexes every passage. Shards are tokenized in parallel and merged
    /// in ordinal order, so postings come out sorted by ordinal.
    pub fn build(passages: &PassageCollection, scheme: TokenizationScheme) -> Result<Self> {
        if passages.is_empty() {
            return Err(Error::Argument("cannot index an empty passage collection".into()));
        }
        let shards: Vec<Shard> = passages
            .passages()
            .par_chunks(SHARD_SIZE)
            .enumerate()
            .map(|(si, chunk)| index_shard(chunk, si * SHARD_SIZE, &scheme))
            .collect::<Result<_>>()?;

        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(passages.len());
        for (shard_postings, lengths) in shards {
            doc_lengths.extend(lengths);
            for (term, mut list) in shard_postings {
                list.sort_unstable_by_key(|p| p.ordinal);
                postings.entry(term).or_default().extend(list);
            }
        }
        let ids = passages.passages().iter().map(|p| p.id.clone()).collect();
        Ok(Self::from_parts(postings, doc_lengths, ids, scheme))
    }

    fn from_parts(
        postings: HashMap<String, Vec<Posting>>,
        doc_lengths: Vec<u32>,
        ids: Vec<String>,
        scheme: TokenizationScheme,
    ) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avgdl = if doc_lengths.is_empty() {
            0.0
        } else {
            total as f64 / doc_lengths.len() as f64
        };
        InvertedIndex {
            postings,
            doc_lengths,
            ids,
            avgdl,
            scheme,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_length(&self, ordinal: usize) -> Option<u32> {
        self.doc_lengths.get(ordinal).copied()
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn passage_id(&self, ordinal: usize) -> Option<&str> {
        self.ids.get(ordinal).map(String::as_str)
    }

    pub fn scheme(&self) -> &TokenizationScheme {
        &self.scheme
    }

    fn idf(&self, df: usize) -> f64 {
        (self.doc_count() as f64 / df as f64).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, ordinal: usize, params: &Bm25Params) -> f64 {
        let f = tf as f64;
        let norm = 1.0 - params.b + params.b * self.doc_lengths[ordinal] as f64 / self.avgdl;
        idf * f / (f + params.k1 * norm)
    }

    /// BM25 score of one passage. Repeated query terms count once per occurrence.
    pub fn bm25_score(&self, query: &TokenList, ordinal: usize, params: &Bm25Params) -> Result<f64> {
        if ordinal >= self.doc_count() {
            return Err(Error::Argument(format!(
                "passage ordinal {ordinal} out of range (N = {})",
                self.doc_count()
            )));
        }
        let mut score = 0.0;
        for term in query {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            if let Ok(pos) = list.binary_search_by_key(&(ordinal as u32), |p| p.ordinal) {
                score += self.term_weight(self.idf(list.len()), list[pos].tf, ordinal, params);
            }
        }
        Ok(score)
    }

    /// Top-`k` passages sharing at least one term with the question.
    /// Ties go to the smaller passage id.
    pub fn retrieve(
        &self,
        question_id: &str,
        question: &str,
        k: usize,
        params: &Bm25Params,
    ) -> Result<RankedList> {
        if k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        let query = self.scheme.tokenize(question)?;
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for term in &query {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let idf = self.idf(list.len());
            for p in list {
                *acc.entry(p.ordinal).or_insert(0.0) +=
                    self.term_weight(idf, p.tf, p.ordinal as usize, params);
            }
        }
        let scored: Vec<(&str, f64)> = acc
            .into_iter()
            .map(|(o, s)| (self.ids[o as usize].as_str(), s))
            .collect();
        Ok(RankedList::from_scored(question_id, scored, k))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let kind = match self.scheme.kind() {
            SchemeKind::Whitespace => 0u8,
            SchemeKind::Morphological => 1,
            SchemeKind::EnhancedWhitespace => 2,
        };
        w.write_all(&[kind, u8::from(self.scheme.turkish_lowercase())])?;
        let stemmer = self.scheme.stemmer().map(|s| s.label()).unwrap_or_default();
        write_str(&mut w, &stemmer)?;
        write_u32(&mut w, self.doc_count() as u32)?;
        for (id, len) in self.ids.iter().zip(&self.doc_lengths) {
            write_str(&mut w, id)?;
            write_u32(&mut w, *len)?;
        }
        let mut terms: Vec<&String> = self.postings.keys().collect();
        terms.sort_unstable();
        write_u32(&mut w, terms.len() as u32)?;
        let mut buf = Vec::new();
        for term in terms {
            let list = &self.postings[term];
            write_str(&mut w, term)?;
            write_u32(&mut w, list.len() as u32)?;
            buf.clear();
            let mut prev = 0u32;
            for p in list {
                write_varint(&mut buf, (p.ordinal - prev) as u64);
                write_varint(&mut buf, p.tf as u64);
                prev = p.ordinal;
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    /// Reads an index, resolving its stemmer with [`stemmer_from_spec`].
    pub fn read<R: Read>(r: R) -> Result<Self> {
        Self::read_with(r, stemmer_from_spec)
    }

    pub fn read_with<R, F>(r: R, resolve_stemmer: F) -> Result<Self>
    where
        R: Read,
        F: FnOnce(&str) -> Result<Option<Arc<dyn Stemmer>>>,
    {
        let mut r = Reader(std::io::BufReader::new(r));
        let mut magic = [0u8; 5];
        r.exact(&mut magic, None)?;
        if &magic != MAGIC {
            return Err(Error::format(None, "not an OQIX1 index (bad magic)"));
        }
        let version = r.u32(None)?;
        if version != VERSION {
            return Err(Error::format(None, format!("unsupported index version {version}")));
        }
        let mut flags = [0u8; 2];
        r.exact(&mut flags, None)?;
        let kind = match flags[0] {
            0 => SchemeKind::Whitespace,
            1 => SchemeKind::Morphological,
            2 => SchemeKind::EnhancedWhitespace,
            k => return Err(Error::format(None, format!("unknown tokenizer kind {k}"))),
        };
        let stemmer_spec = r.string(None)?;
        let stemmer = resolve_stemmer(&stemmer_spec)?;
        let scheme = TokenizationScheme::new(kind, stemmer, flags[1] == 1)?;

        let n = r.u32(None)? as usize;
        let mut ids = Vec::with_capacity(n);
        let mut doc_lengths = Vec::with_capacity(n);
        for i in 0..n {
            ids.push(r.string(Some(i))?);
            doc_lengths.push(r.u32(Some(i))?);
        }
        let n_terms = r.u32(None)? as usize;
        let mut postings = HashMap::with_capacity(n_terms);
        for ti in 0..n_terms {
            let term = r.string(Some(ti))?;
            let df = r.u32(Some(ti))? as usize;
            let mut list = Vec::with_capacity(df);
            let mut prev = 0u64;
            for _ in 0..df {
                let ordinal = prev + r.varint(ti)?;
                let tf = r.varint(ti)?;
                if ordinal >= n as u64 || tf == 0 || tf > u32::MAX as u64 {
                    return Err(Error::format(Some(ti), "posting out of range"));
                }
                list.push(Posting {
                    ordinal: ordinal as u32,
                    tf: tf as u32,
                });
                prev = ordinal;
            }
            postings.insert(term, list);
        }
        Ok(Self::from_parts(postings, doc_lengths, ids, scheme))
    }
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn write_varint(buf: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        buf.push((v as u8) | 0x80);
        v >>= 7;
    }
    buf.push(v as u8);
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn exact(&mut self, buf: &mut [u8], record: Option<usize>) -> Result<()> {
        self.0.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::format(record, "truncated index"),
            _ => Error::Io(e),
        })
    }

    fn u32(&mut self, record: Option<usize>) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, record)?;
        Ok(u32::from_le_bytes(b))
    }

    fn string(&mut self, record: Option<usize>) -> Result<String> {
        let len = self.u32(record)? as usize;
        let mut buf = vec![0u8; len];
        self.exact(&mut buf, record)?;
        String::from_utf8(buf).map_err(|_| Error::format(record, "invalid UTF-8"))
    }

    fn varint(&mut self, record: usize) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let mut b = [0u8; 1];
            self.exact(&mut b, Some(record))?;
            v |= ((b[0] & 0x7f) as u64) << shift;
            if b[0] & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(Error::format(Some(record), "varint too long"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Passage, PassageSource};

    fn collection(texts: &[&str]) -> PassageCollection {
        let passages = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Passage::new(format!("p{i}"), "", *t, PassageSource::Wiki))
            .collect();
        PassageCollection::new(passages, 75).unwrap()
    }

    fn tl(terms: &[&str]) -> TokenList {
        TokenizationScheme::whitespace().tokenize(&terms.join(" ")).unwrap()
    }

    #[test]
    fn single_passage_stats() {
        let idx = InvertedIndex::build(&collection(&["a b a"]), TokenizationScheme::whitespace()).unwrap();
        assert_eq!(idx.df("a"), 1);
        assert_eq!(idx.postings("a")[0].tf, 2);
        assert_eq!(idx.doc_count(), 1);
        assert_eq!(idx.avgdl(), 3.0);
        // title is empty, so indexed text is " a b a"
        let s = idx.bm25_score(&tl(&["a"]), 0, &Bm25Params::default()).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn duplicated_passages_double_df() {
        let idx =
            InvertedIndex::build(&collection(&["x y", "x y"]), TokenizationScheme::whitespace()).unwrap();
        assert_eq!(idx.df("x"), 2);
        assert_eq!(idx.df("y"), 2);
        assert_eq!(idx.df("zzz"), 0);
        assert!(idx.postings("zzz").is_empty());
    }

    #[test]
    fn hand_evaluated_score() {
        // d1 = "x x y" (|d1| = 3), d2 = "z" (|d2| = 1), avgdl = 2, N = 2, df(x) = 1
        // ln(2) * 2 / (2 + 1.2 * (0.25 + 0.75 * 1.5)) = ln(2) * 2 / 3.65
        let idx = InvertedIndex::build(&collection(&["x x y", "z"]), TokenizationScheme::whitespace())
            .unwrap();
        let params = Bm25Params::new(1.2, 0.75).unwrap();
        let expected = 0.379_806_674_279_422_1_f64;
        let got = idx.bm25_score(&tl(&["x"]), 0, &params).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got}");
        assert_eq!(idx.bm25_score(&tl(&["x"]), 1, &params).unwrap(), 0.0);
        // repeated query term counts twice
        let twice = idx.bm25_score(&tl(&["x", "x"]), 0, &params).unwrap();
        assert!((twice - 2.0 * expected).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_ordinal() {
        let idx = InvertedIndex::build(&collection(&["a"]), TokenizationScheme::whitespace()).unwrap();
        assert!(matches!(
            idx.bm25_score(&tl(&["a"]), 1, &Bm25Params::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn empty_collection_rejected() {
        assert!(matches!(
            InvertedIndex::build(&collection(&[]), TokenizationScheme::whitespace()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn params_validated() {
        assert!(Bm25Params::new(0.0, 0.5).is_err());
        assert!(Bm25Params::new(1.0, 1.5).is_err());
        assert!(Bm25Params::new(1.0, 0.0).is_ok());
    }

    #[test]
    fn retrieve_ties_and_saturation() {
        let idx = InvertedIndex::build(
            &collection(&["kedi", "köpek", "kedi", "kuş kuş"]),
            TokenizationScheme::whitespace(),
        )
        .unwrap();
        let run = idx.retrieve("q", "kedi balık", 10, &Bm25Params::default()).unwrap();
        let ids: Vec<_> = run.entries.iter().map(|e| e.passage_id.as_str()).collect();
        assert_eq!(ids, ["p0", "p2"]);
        assert_eq!(run.entries[0].score, run.entries[1].score);
        assert!(idx.retrieve("q", "...", 10, &Bm25Params::default()).unwrap().is_empty());
        assert!(idx.retrieve("q", "kedi", 0, &Bm25Params::default()).is_err());
    }

    #[test]
    fn exact_text_ranks_first() {
        let idx = InvertedIndex::build(
            &collection(&["alpha beta", "gamma delta epsilon", "beta gamma"]),
            TokenizationScheme::whitespace(),
        )
        .unwrap();
        let run = idx
            .retrieve("q", "gamma delta epsilon", 3, &Bm25Params::default())
            .unwrap();
        assert_eq!(run.entries[0].passage_id, "p1");
    }

    #[test]
    fn serialization_round_trip_and_determinism() {
        let c = collection(&["bir iki üç", "iki üç dört", "beş"]);
        let a = InvertedIndex::build(&c, TokenizationScheme::enhanced_whitespace()).unwrap();
        let b = InvertedIndex::build(&c, TokenizationScheme::enhanced_whitespace()).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write(&mut ba).unwrap();
        b.write(&mut bb).unwrap();
        assert_eq!(ba, bb);
        assert_eq!(&ba[..5], b"OQIX1");

        let back = InvertedIndex::read(&ba[..]).unwrap();
        assert_eq!(back.doc_count(), 3);
        assert_eq!(back.df("iki"), 2);
        assert_eq!(back.postings("üç"), a.postings("üç"));
        assert_eq!(back.scheme().kind(), SchemeKind::EnhancedWhitespace);
        let mut bc = Vec::new();
        back.write(&mut bc).unwrap();
        assert_eq!(ba, bc);

        let truncated = &ba[..ba.len() - 1];
        assert!(matches!(InvertedIndex::read(truncated), Err(Error::Format { .. })));
        assert!(matches!(InvertedIndex::read(&b"OQAV1...."[..]), Err(Error::Format { .. })));
    }
}
