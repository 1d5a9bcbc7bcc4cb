//! Synthetic pipeline fixture and helpers for driving the `oqa` binary.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use oqa_core::corpus::{parse_squad_json, PassageCollection};
use oqa_core::dense::{VectorMode, VectorRecord, VectorWriter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub const WIKI_DOCS: usize = 80;
pub const QUESTIONS: usize = 20;
pub const DIM: usize = 32;
pub const PIPELINE_SEED: u64 = 2023;

pub fn oqa() -> Command {
    Command::new(env!("CARGO_BIN_EXE_oqa"))
}

/// Runs `oqa` quietly with `args`, returning the raw output.
pub fn run_oqa(args: &[&str]) -> Output {
    let mut cmd = oqa();
    cmd.arg("--quiet").args(args).env_remove("OQA_SEED");
    cmd.output().expect("spawn oqa")
}

pub fn run_ok(args: &[&str]) {
    let out = run_oqa(args);
    assert!(
        out.status.success(),
        "oqa {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn syllable_word<R: Rng>(rng: &mut R) -> String {
    const SYL: &[&str] = &[
        "ka", "le", "mi", "ro", "tu", "şe", "ya", "dı", "gö", "ne", "pa", "si", "lar", "ler", "da", "ma",
        "çi", "bo", "zu", "re",
    ];
    let n = rng.random_range(1..=3);
    (0..n).map(|_| SYL[rng.random_range(0..SYL.len())]).collect()
}

fn words<R: Rng>(rng: &mut R, vocab: &[String], n: usize) -> Vec<String> {
    (0..n).map(|_| vocab[rng.random_range(0..vocab.len())].clone()).collect()
}

pub struct Fixture {
    pub dir: PathBuf,
    pub raw_dataset: PathBuf,
    pub documents: PathBuf,
    /// Question ids whose raw answer text needs approximate matching.
    pub fuzzy_ids: Vec<String>,
}

/// 80 wiki documents and 20 QA contexts, each at most 75 words, so the
/// merged knowledge source holds exactly 100 passages. Every context
/// carries a planted answer phrase made of tokens found nowhere else.
pub fn build_fixture(dir: &Path, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<String> = (0..300).map(|_| syllable_word(&mut rng)).collect();

    let mut docs = String::new();
    for i in 0..WIKI_DOCS {
        let n = rng.random_range(20..=70);
        let doc = json!({ "title": format!("Madde {i}"), "text": words(&mut rng, &vocab, n).join(" ") });
        docs.push_str(&doc.to_string());
        docs.push('\n');
    }
    let documents = dir.join("documents.jsonl");
    fs::write(&documents, docs).unwrap();

    let mut articles = Vec::new();
    let mut fuzzy_ids = Vec::new();
    for i in 0..QUESTIONS {
        let answer = format!("Zafer{i}yıl {}.{} milyonluk", 10 + i, i % 10);
        let (nb, na) = (rng.random_range(10..30), rng.random_range(10..30));
        let before = words(&mut rng, &vocab, nb);
        let after = words(&mut rng, &vocab, na);
        let context = format!("{} {} {}", before.join(" "), answer, after.join(" "));
        let q_words: Vec<String> = before.iter().rev().take(4).cloned().collect();
        let question = format!("{} ne zaman oldu?", q_words.join(" "));
        let id = format!("q{i:02}");
        // every fourth answer arrives with a decimal comma instead of a point
        let raw_answer = if i % 4 == 1 {
            fuzzy_ids.push(id.clone());
            answer.replacen('.', ",", 1)
        } else {
            answer.clone()
        };
        articles.push(json!({
            "title": format!("Konu {i}"),
            "paragraphs": [{
                "context": context,
                "qas": [{
                    "id": id,
                    "question": question,
                    "is_impossible": false,
                    "answers": [{ "text": raw_answer, "answer_start": 0 }]
                }]
            }]
        }));
    }
    let raw = json!({ "version": "v2.0", "data": articles });
    let raw_dataset = dir.join("raw.json");
    fs::write(&raw_dataset, serde_json::to_vec(&raw).unwrap()).unwrap();
    Fixture {
        dir: dir.to_path_buf(),
        raw_dataset,
        documents,
        fuzzy_ids,
    }
}

fn unit_rows<R: Rng>(rng: &mut R, n: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| {
            let v: Vec<f32> = (0..DIM).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Writes multi-vector passage embeddings and question embeddings that copy
/// the token rows of each question's gold passage (the one holding its
/// context). Returns qid -> gold passage id.
pub fn write_vectors(
    passages_tsv: &Path,
    dataset_json: &Path,
    passages_out: &Path,
    queries_out: &Path,
    seed: u64,
) -> BTreeMap<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coll = PassageCollection::read_tsv(BufReader::new(fs::File::open(passages_tsv).unwrap()), 75).unwrap();
    let dataset = parse_squad_json(&fs::read(dataset_json).unwrap()).unwrap();

    let mut rows_by_id = BTreeMap::new();
    let mut w = VectorWriter::new(fs::File::create(passages_out).unwrap(), DIM, VectorMode::MultiVector).unwrap();
    for passage in coll.passages() {
        let n = rng.random_range(3..=6);
        let rows = unit_rows(&mut rng, n);
        w.write_record(&VectorRecord::from_rows(passage.id.clone(), &rows).unwrap())
            .unwrap();
        rows_by_id.insert(passage.id.clone(), rows);
    }
    w.finish().unwrap();

    let mut gold = BTreeMap::new();
    let mut w = VectorWriter::new(fs::File::create(queries_out).unwrap(), DIM, VectorMode::MultiVector).unwrap();
    for (_, para, qa) in dataset.qas() {
        let ctx = para.context.split_whitespace().collect::<Vec<_>>().join(" ");
        let passage = coll
            .passages()
            .iter()
            .find(|p| p.text == ctx)
            .expect("context passage present");
        w.write_record(&VectorRecord::from_rows(qa.id.clone(), &rows_by_id[&passage.id]).unwrap())
            .unwrap();
        gold.insert(qa.id.clone(), passage.id.clone());
    }
    w.finish().unwrap();
    gold
}

/// Reader predictions: the recovered gold text for even questions, a wrong
/// guess for odd ones.
pub fn write_predictions(dataset_json: &Path, out: &Path) {
    let dataset = parse_squad_json(&fs::read(dataset_json).unwrap()).unwrap();
    let mut preds = BTreeMap::new();
    for (i, (_, _, qa)) in dataset.qas().enumerate() {
        let text = if i % 2 == 0 {
            qa.answers[0].text.clone()
        } else {
            "bilinmiyor".to_string()
        };
        preds.insert(qa.id.clone(), text);
    }
    fs::write(out, serde_json::to_vec(&preds).unwrap()).unwrap();
}

pub fn manifest(output: &Path) -> Value {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    read_json(Path::new(&s))
}
