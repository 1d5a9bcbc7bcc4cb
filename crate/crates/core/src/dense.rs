//! Exact dense retrieval over externally produced embeddings.
//!
//! Two scoring functions are supported: single-vector inner product
//! (`E(q) · E(d)`) and late-interaction MaxSim, where each query token
//! keeps its best inner product over the document tokens and the maxima
//! are summed. Scores accumulate in `f64` whatever the stored precision.
//!
//! ## `OQAV1` file layout
//!
//! ```text
//! magic   6 bytes  "OQAV1\0"
//! dim     u32 LE
//! flags   u32 LE   bit 0: single-vector store
//! records until EOF:
//!   u32 LE id byte length, id UTF-8 bytes,
//!   u32 LE n_tokens, n_tokens × dim f32 LE, row-major
//! ```

use std::collections::HashMap;
use std::io::{self, BufReader, Read, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::run::RankedList;

const MAGIC: &[u8; 6] = b"OQAV1\0";
const FLAG_SINGLE_VECTOR: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct VectorRecord {
    pub id: String,
    dim: usize,
    data: Vec<f32>,
}

impl VectorRecord {
    pub fn new(id: impl Into<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("dim must be at least 1".into()));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::Argument(format!(
                "{} values do not form a non-empty matrix with {dim} columns",
                data.len()
            )));
        }
        Ok(VectorRecord {
            id: id.into(),
            dim,
            data,
        })
    }

    pub fn from_rows(id: impl Into<String>, rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Argument("ragged rows".into()));
        }
        Self::new(id, dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_tokens(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn scaled(&self, factor: f32) -> Self {
        VectorRecord {
            id: self.id.clone(),
            dim: self.dim,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Single-vector inner product.
pub fn dpr_score(q: &VectorRecord, d: &VectorRecord) -> Result<f64> {
    if q.n_tokens() != 1 || d.n_tokens() != 1 {
        return Err(Error::Argument(format!(
            "single-vector scoring needs one row each, got {} and {}",
            q.n_tokens(),
            d.n_tokens()
        )));
    }
    if q.dim != d.dim {
        return Err(Error::Argument(format!("dim mismatch: {} vs {}", q.dim, d.dim)));
    }
    Ok(dot(&q.data, &d.data))
}

/// Σ over query rows of the max inner product with any document row.
pub fn maxsim_score(q: &VectorRecord, d: &VectorRecord) -> Result<f64> {
    if q.dim != d.dim {
        return Err(Error::Argument(format!("dim mismatch: {} vs {}", q.dim, d.dim)));
    }
    Ok(maxsim_unchecked(q, d))
}

fn maxsim_unchecked(q: &VectorRecord, d: &VectorRecord) -> f64 {
    q.rows()
        .map(|qi| {
            d.rows()
                .map(|dj| dot(qi, dj))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorMode {
    SingleVector,
    MultiVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    Dpr,
    MaxSim,
}

impl std::str::FromStr for ScoringMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dpr" => Ok(ScoringMode::Dpr),
            "maxsim" | "colbert" => Ok(ScoringMode::MaxSim),
            other => Err(Error::Config(format!("unknown scoring mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VectorStore {
    records: Vec<VectorRecord>,
    by_id: HashMap<String, usize>,
    dim: usize,
    mode: VectorMode,
}

impl VectorStore {
    pub fn new(dim: usize, mode: VectorMode) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("dim must be at least 1".into()));
        }
        Ok(VectorStore {
            records: Vec::new(),
            by_id: HashMap::new(),
            dim,
            mode,
        })
    }

    pub fn from_records(dim: usize, mode: VectorMode, records: Vec<VectorRecord>) -> Result<Self> {
        let mut store = Self::new(dim, mode)?;
        for r in records {
            store.push(r)?;
        }
        Ok(store)
    }

    pub fn push(&mut self, record: VectorRecord) -> Result<()> {
        if record.dim != self.dim {
            return Err(Error::Argument(format!(
                "record {:?} has dim {}, store has {}",
                record.id, record.dim, self.dim
            )));
        }
        if self.mode == VectorMode::SingleVector && record.n_tokens() != 1 {
            return Err(Error::Argument(format!(
                "record {:?} has {} rows in a single-vector store",
                record.id,
                record.n_tokens()
            )));
        }
        if self.by_id.contains_key(&record.id) {
            return Err(Error::Argument(format!("duplicate record id {:?}", record.id)));
        }
        self.by_id.insert(record.id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> VectorMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[VectorRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&VectorRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut writer = VectorWriter::new(w, self.dim, self.mode)?;
        for r in &self.records {
            writer.write_record(r)?;
        }
        writer.finish()?;
        Ok(())
    }

    /// Streams an `OQAV1` file into a store.
    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 6];
        read_exact(&mut r, &mut magic, None, "header")?;
        if &magic != MAGIC {
            return Err(Error::format(None, "not an OQAV1 file (bad magic)"));
        }
        let dim = read_u32(&mut r, None, "header")? as usize;
        let flags = read_u32(&mut r, None, "header")?;
        if dim == 0 {
            return Err(Error::format(None, "dim must be at least 1"));
        }
        let mode = if flags & FLAG_SINGLE_VECTOR != 0 {
            VectorMode::SingleVector
        } else {
            VectorMode::MultiVector
        };
        let mut store = VectorStore::new(dim, mode)?;
        let mut index = 0;
        loop {
            let mut len_buf = [0u8; 4];
            // a clean EOF is only allowed on a record boundary
            let got = read_fully(&mut r, &mut len_buf)?;
            if got == 0 {
                break;
            }
            if got < 4 {
                return Err(Error::format(Some(index), "truncated record (id length)"));
            }
            let id_len = u32::from_le_bytes(len_buf) as usize;
            let mut id = vec![0u8; id_len];
            read_exact(&mut r, &mut id, Some(index), "id")?;
            let id = String::from_utf8(id).map_err(|_| Error::format(Some(index), "id is not UTF-8"))?;
            let n_tokens = read_u32(&mut r, Some(index), "n_tokens")? as usize;
            if n_tokens == 0 {
                return Err(Error::format(Some(index), "record has no rows"));
            }
            if mode == VectorMode::SingleVector && n_tokens != 1 {
                return Err(Error::format(
                    Some(index),
                    format!("{n_tokens} rows in a single-vector file"),
                ));
            }
            let mut raw = vec![0u8; n_tokens * dim * 4];
            read_exact(&mut r, &mut raw, Some(index), "values")?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let record = VectorRecord { id, dim, data };
            store
                .push(record)
                .map_err(|e| Error::format(Some(index), e.to_string()))?;
            index += 1;
        }
        Ok(store)
    }

    /// Exact top-`k` over every record; ties go to the smaller id.
    pub fn retrieve(&self, q: &VectorRecord, k: usize, mode: ScoringMode) -> Result<RankedList> {
        if k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        if q.dim != self.dim {
            return Err(Error::Argument(format!(
                "query dim {} does not match store dim {}",
                q.dim, self.dim
            )));
        }
        if mode == ScoringMode::Dpr {
            if self.mode != VectorMode::SingleVector {
                return Err(Error::Argument(
                    "single-vector scoring needs a single-vector store".into(),
                ));
            }
            if q.n_tokens() != 1 {
                return Err(Error::Argument(format!(
                    "single-vector scoring needs a one-row query, got {}",
                    q.n_tokens()
                )));
            }
        }
        let scored: Vec<(&str, f64)> = self
            .records
            .par_iter()
            .map(|d| {
                let s = match mode {
                    ScoringMode::Dpr => dot(&q.data, &d.data),
                    ScoringMode::MaxSim => maxsim_unchecked(q, d),
                };
                (d.id.as_str(), s)
            })
            .collect();
        Ok(RankedList::from_scored(q.id.clone(), scored, k))
    }
}

/// Incremental `OQAV1` writer.
pub struct VectorWriter<W: Write> {
    w: W,
    dim: usize,
    mode: VectorMode,
}

impl<W: Write> VectorWriter<W> {
    pub fn new(mut w: W, dim: usize, mode: VectorMode) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("dim must be at least 1".into()));
        }
        w.write_all(MAGIC)?;
        w.write_all(&(dim as u32).to_le_bytes())?;
        let flags = if mode == VectorMode::SingleVector {
            FLAG_SINGLE_VECTOR
        } else {
            0
        };
        w.write_all(&flags.to_le_bytes())?;
        Ok(VectorWriter { w, dim, mode })
    }

    pub fn write_record(&mut self, r: &VectorRecord) -> Result<()> {
        if r.dim != self.dim {
            return Err(Error::Argument(format!(
                "record {:?} has dim {}, file has {}",
                r.id, r.dim, self.dim
            )));
        }
        if self.mode == VectorMode::SingleVector && r.n_tokens() != 1 {
            return Err(Error::Argument(format!(
                "record {:?} has {} rows in a single-vector file",
                r.id,
                r.n_tokens()
            )));
        }
        self.w.write_all(&(r.id.len() as u32).to_le_bytes())?;
        self.w.write_all(r.id.as_bytes())?;
        self.w.write_all(&(r.n_tokens() as u32).to_le_bytes())?;
        for v in &r.data {
            self.w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.w.flush()?;
        Ok(self.w)
    }
}

fn read_fully<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(got)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], record: Option<usize>, what: &str) -> Result<()> {
    if read_fully(r, buf)? < buf.len() {
        return Err(Error::format(record, format!("truncated {what}")));
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, record: Option<usize>, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, record, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Query-by-passage score matrix with the positive column of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct InBatchScores {
    pub scores: Vec<Vec<f64>>,
    pub positive_index: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NllReport {
    pub losses: Vec<f64>,
    pub mean: f64,
}

/// Softmax negative log-likelihood of each row's positive column.
pub fn in_batch_nll(batch: &InBatchScores) -> Result<NllReport> {
    if batch.scores.is_empty() || batch.scores[0].is_empty() {
        return Err(Error::Argument("empty score matrix".into()));
    }
    if batch.positive_index.len() != batch.scores.len() {
        return Err(Error::Argument(format!(
            "{} positive indices for {} rows",
            batch.positive_index.len(),
            batch.scores.len()
        )));
    }
    let cols = batch.scores[0].len();
    let mut losses = Vec::with_capacity(batch.scores.len());
    for (row_i, (row, &pos)) in batch.scores.iter().zip(&batch.positive_index).enumerate() {
        if row.len() != cols {
            return Err(Error::Argument(format!("row {row_i} has {} columns, expected {cols}", row.len())));
        }
        if pos >= cols {
            return Err(Error::Argument(format!("row {row_i}: positive column {pos} out of range")));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("row {row_i} has non-finite scores")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s_pos = row[pos];
        let loss = if s_pos == max {
            // ln(1 + rest) keeps precision when the positive dominates
            let rest: f64 = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != pos)
                .map(|(_, &s)| (s - max).exp())
                .sum();
            rest.ln_1p()
        } else {
            let total: f64 = row.iter().map(|&s| (s - max).exp()).sum();
            (max - s_pos) + total.ln()
        };
        losses.push(loss);
    }
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok(NllReport { losses, mean })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, rows: &[&[f32]]) -> VectorRecord {
        VectorRecord::from_rows(id, &rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn dpr_examples() {
        let e1 = rec("a", &[&[1.0, 0.0]]);
        let e2 = rec("b", &[&[0.0, 1.0]]);
        assert_eq!(dpr_score(&e1, &e1).unwrap(), 1.0);
        assert_eq!(dpr_score(&e1, &e2).unwrap(), 0.0);
        assert_eq!(dpr_score(&rec("q", &[&[1.0, 2.0]]), &rec("d", &[&[3.0, -1.0]])).unwrap(), 1.0);
        assert!(dpr_score(&rec("q", &[&[1.0, 2.0, 3.0]]), &e1).is_err());
        assert!(dpr_score(&rec("q", &[&[1.0, 0.0], &[0.0, 1.0]]), &e1).is_err());
    }

    #[test]
    fn maxsim_examples() {
        let q = rec("q", &[&[1.0, 0.0], &[0.0, 1.0]]);
        let d = rec("d", &[&[2.0, 0.0], &[0.0, 3.0], &[1.0, 1.0]]);
        assert_eq!(maxsim_score(&q, &d).unwrap(), 5.0);
        // self-match of orthonormal rows
        assert_eq!(maxsim_score(&q, &q).unwrap(), 2.0);
        let single = rec("s", &[&[0.0, 1.0]]);
        assert_eq!(maxsim_score(&single, &q).unwrap(), 1.0);
        assert!(maxsim_score(&rec("x", &[&[1.0]]), &q).is_err());
    }

    #[test]
    fn store_round_trip() {
        let store = VectorStore::from_records(
            2,
            VectorMode::MultiVector,
            vec![rec("a", &[&[1.0, -0.5]]), rec("b", &[&[0.25, 2.0], &[f32::MIN_POSITIVE, 3.0]])],
        )
        .unwrap();
        let mut buf = Vec::new();
        store.write(&mut buf).unwrap();
        let back = VectorStore::read(&buf[..]).unwrap();
        assert_eq!(back.records(), store.records());
        assert_eq!(back.mode(), VectorMode::MultiVector);
    }

    #[test]
    fn empty_and_minimal_files() {
        let empty = VectorStore::new(7, VectorMode::SingleVector).unwrap();
        let mut buf = Vec::new();
        empty.write(&mut buf).unwrap();
        let back = VectorStore::read(&buf[..]).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 7);

        let one = VectorStore::from_records(4, VectorMode::SingleVector, vec![rec("x", &[&[1.0, 2.0, 3.0, 4.0]])])
            .unwrap();
        let mut buf = Vec::new();
        one.write(&mut buf).unwrap();
        let back = VectorStore::read(&buf[..]).unwrap();
        assert_eq!(back.mode(), VectorMode::SingleVector);
        assert_eq!(back.get("x").unwrap().n_tokens(), 1);
    }

    #[test]
    fn format_errors_carry_record_index() {
        let store = VectorStore::from_records(
            2,
            VectorMode::MultiVector,
            vec![rec("a", &[&[1.0, 0.0]]), rec("b", &[&[0.0, 1.0]])],
        )
        .unwrap();
        let mut buf = Vec::new();
        store.write(&mut buf).unwrap();
        match VectorStore::read(&buf[..buf.len() - 2]) {
            Err(Error::Format { record, .. }) => assert_eq!(record, Some(1)),
            other => panic!("unexpected {other:?}"),
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(VectorStore::read(&bad[..]), Err(Error::Format { record: None, .. })));

        // a multi-row record in a file flagged single-vector
        let mut w = VectorWriter::new(Vec::new(), 2, VectorMode::MultiVector).unwrap();
        w.write_record(&rec("m", &[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        let mut multi = w.finish().unwrap();
        multi[10] = 1;
        assert!(matches!(VectorStore::read(&multi[..]), Err(Error::Format { record: Some(0), .. })));
    }

    #[test]
    fn retrieve_argmax_and_saturation() {
        let store = VectorStore::from_records(
            3,
            VectorMode::SingleVector,
            vec![
                rec("e1", &[&[1.0, 0.0, 0.0]]),
                rec("e2", &[&[0.0, 1.0, 0.0]]),
                rec("e3", &[&[0.0, 0.0, 1.0]]),
            ],
        )
        .unwrap();
        let q = rec("q", &[&[0.0, 1.0, 0.0]]);
        let run = store.retrieve(&q, 10, ScoringMode::Dpr).unwrap();
        assert_eq!(run.entries[0].passage_id, "e2");
        assert_eq!(run.entries[0].score, 1.0);
        assert_eq!(run.len(), 3);
        // tie between e1 and e3 at 0.0 resolved by id
        assert_eq!(run.entries[1].passage_id, "e1");
    }

    #[test]
    fn mode_mismatch_is_an_argument_error() {
        let store = VectorStore::from_records(2, VectorMode::MultiVector, vec![rec("a", &[&[1.0, 0.0]])]).unwrap();
        assert!(matches!(
            store.retrieve(&rec("q", &[&[1.0, 0.0]]), 1, ScoringMode::Dpr),
            Err(Error::Argument(_))
        ));
        assert!(store.retrieve(&rec("q", &[&[1.0, 0.0]]), 1, ScoringMode::MaxSim).is_ok());
    }

    #[test]
    fn nll_examples() {
        let uniform = in_batch_nll(&InBatchScores {
            scores: vec![vec![0.3; 4]],
            positive_index: vec![2],
        })
        .unwrap();
        assert!((uniform.losses[0] - 4f64.ln()).abs() < 1e-12);

        let dominated = in_batch_nll(&InBatchScores {
            scores: vec![vec![60.0, 10.0, 5.0]],
            positive_index: vec![0],
        })
        .unwrap();
        assert!(dominated.losses[0] < 1e-20);

        let hand = in_batch_nll(&InBatchScores {
            scores: vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            positive_index: vec![0, 1],
        })
        .unwrap();
        assert!((hand.losses[0] - 0.313_261_687_518_222_8).abs() < 1e-12);
        assert!((hand.losses[1] - 1.313_261_687_518_222_8).abs() < 1e-12);
        assert!((hand.mean - 0.813_261_687_518_222_8).abs() < 1e-12);

        assert!(in_batch_nll(&InBatchScores {
            scores: vec![vec![f64::NAN, 0.0]],
            positive_index: vec![0]
        })
        .is_err());
        assert!(in_batch_nll(&InBatchScores {
            scores: vec![],
            positive_index: vec![]
        })
        .is_err());
    }
}
