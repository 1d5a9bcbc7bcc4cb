//! Uncased tokenization schemes and the answer-containment predicate that
//! decides whether a passage is positive for a question.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

/// Maps a lowercase surface token to its stem.
pub trait Stemmer: Send + Sync + fmt::Debug {
    fn stem(&self, token: &str) -> Result<String>;

    /// Short label used in reports and manifests.
    fn label(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Whitespace,
    Morphological,
    EnhancedWhitespace,
}

impl SchemeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::Whitespace => "whitespace",
            SchemeKind::Morphological => "morph",
            SchemeKind::EnhancedWhitespace => "enhanced",
        }
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitespace" => Ok(SchemeKind::Whitespace),
            "morph" | "morphological" => Ok(SchemeKind::Morphological),
            "enhanced" | "enhanced_whitespace" => Ok(SchemeKind::EnhancedWhitespace),
            other => Err(Error::Config(format!("unknown tokenizer {other:?}"))),
        }
    }
}

/// A validated tokenization configuration.
#[derive(Debug, Clone)]
pub struct TokenizationScheme {
    kind: SchemeKind,
    stemmer: Option<Arc<dyn Stemmer>>,
    turkish_lowercase: bool,
}

impl TokenizationScheme {
    pub fn new(
        kind: SchemeKind,
        stemmer: Option<Arc<dyn Stemmer>>,
        turkish_lowercase: bool,
    ) -> Result<Self> {
        if kind == SchemeKind::Morphological && stemmer.is_none() {
            return Err(Error::Config(
                "morphological tokenization requires a stemmer".into(),
            ));
        }
        Ok(TokenizationScheme {
            kind,
            stemmer,
            turkish_lowercase,
        })
    }

    pub fn whitespace() -> Self {
        TokenizationScheme {
            kind: SchemeKind::Whitespace,
            stemmer: None,
            turkish_lowercase: false,
        }
    }

    pub fn enhanced_whitespace() -> Self {
        TokenizationScheme {
            kind: SchemeKind::EnhancedWhitespace,
            stemmer: None,
            turkish_lowercase: false,
        }
    }

    pub fn morphological(stemmer: Arc<dyn Stemmer>) -> Self {
        TokenizationScheme {
            kind: SchemeKind::Morphological,
            stemmer: Some(stemmer),
            turkish_lowercase: false,
        }
    }

    pub fn with_turkish_lowercase(mut self, on: bool) -> Self {
        self.turkish_lowercase = on;
        self
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn turkish_lowercase(&self) -> bool {
        self.turkish_lowercase
    }

    pub fn stemmer(&self) -> Option<&Arc<dyn Stemmer>> {
        self.stemmer.as_ref()
    }

    pub fn label(&self) -> String {
        let mut s = self.kind.as_str().to_string();
        if let Some(st) = &self.stemmer {
            s.push('+');
            s.push_str(&st.label());
        }
        if self.turkish_lowercase {
            s.push_str("+tr-case");
        }
        s
    }

    fn lowercase(&self, token: &str) -> String {
        if self.turkish_lowercase {
            token
                .chars()
                .map(|c| match c {
                    'I' => 'ı',
                    'İ' => 'i',
                    c => c,
                })
                .flat_map(char::to_lowercase)
                .collect()
        } else {
            token.to_lowercase()
        }
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenList> {
        let tokens = match self.kind {
            SchemeKind::Whitespace => text.split_whitespace().map(|t| self.lowercase(t)).collect(),
            SchemeKind::EnhancedWhitespace => text
                .split(|c: char| !c.is_alphanumeric())
                .filter(|t| !t.is_empty())
                .map(|t| self.lowercase(t))
                .collect(),
            SchemeKind::Morphological => {
                let stemmer = self
                    .stemmer
                    .as_ref()
                    .ok_or_else(|| Error::Config("morphological tokenization requires a stemmer".into()))?;
                let mut out = Vec::new();
                for t in text.split_whitespace() {
                    let stem = stemmer.stem(&self.lowercase(t))?;
                    // stems must stay valid tokens
                    out.extend(
                        stem.split_whitespace()
                            .filter(|s| !s.is_empty())
                            .map(|s| self.lowercase(s)),
                    );
                }
                out
            }
        };
        Ok(TokenList(tokens))
    }

    /// True iff some answer tokenizes to a non-empty sequence occurring
    /// contiguously in the passage tokens.
    pub fn contains_answer<S: AsRef<str>>(&self, passage_text: &str, answers: &[S]) -> Result<bool> {
        let passage = self.tokenize(passage_text)?;
        for a in answers {
            let ans = self.tokenize(a.as_ref())?;
            if passage.contains_sequence(&ans) {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenList(Vec<String>);

impl TokenList {
    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }

    /// Contiguous-subsequence test; an empty needle never matches.
    pub fn contains_sequence(&self, needle: &TokenList) -> bool {
        !needle.is_empty()
            && needle.len() <= self.len()
            && self.0.windows(needle.len()).any(|w| w == needle.0.as_slice())
    }
}

impl<'a> IntoIterator for &'a TokenList {
    type Item = &'a String;
    type IntoIter = std::slice::Iter<'a, String>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Strips the longest matching suffix from a fixed list, keeping at least
/// `min_stem` characters. A stand-in for a real morphological analyzer.
#[derive(Debug, Clone)]
pub struct SuffixStripper {
    suffixes: Vec<String>,
    min_stem: usize,
}

const TURKISH_SUFFIXES: &[&str] = &[
    "ların", "lerin", "ları", "leri", "lar", "ler", "dan", "den", "tan", "ten", "nın", "nin",
    "nun", "nün", "da", "de", "ta", "te", "ya", "ye", "yı", "yi", "yu", "yü", "ın", "in", "un",
    "ün", "ı", "i", "u", "ü", "a", "e",
];

impl Default for SuffixStripper {
    fn default() -> Self {
        SuffixStripper::new(TURKISH_SUFFIXES.iter().map(|s| s.to_string()), 2)
    }
}

impl SuffixStripper {
    pub fn new(suffixes: impl IntoIterator<Item = String>, min_stem: usize) -> Self {
        let mut suffixes: Vec<String> = suffixes.into_iter().collect();
        suffixes.sort_by_key(|s| std::cmp::Reverse(s.chars().count()));
        SuffixStripper { suffixes, min_stem }
    }
}

impl Stemmer for SuffixStripper {
    fn stem(&self, token: &str) -> Result<String> {
        let len = token.chars().count();
        for suf in &self.suffixes {
            if token.ends_with(suf.as_str()) && len - suf.chars().count() >= self.min_stem {
                return Ok(token[..token.len() - suf.len()].to_string());
            }
        }
        Ok(token.to_string())
    }

    fn label(&self) -> String {
        "suffix-stub".into()
    }
}

/// Stems through a child process speaking a line protocol: one surface
/// token per line in, one stem per line out. Results are memoized.
#[derive(Debug)]
pub struct ExternalStemmer {
    program: PathBuf,
    io: Mutex<ExternalIo>,
}

#[derive(Debug)]
struct ExternalIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    cache: HashMap<String, String>,
}

impl ExternalStemmer {
    pub fn spawn(program: impl AsRef<Path>) -> Result<Self> {
        let program = program.as_ref().to_path_buf();
        let mut child = Command::new(&program)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Config(format!("cannot start stemmer {}: {e}", program.display())))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ExternalStemmer {
            program,
            io: Mutex::new(ExternalIo {
                child,
                stdin,
                stdout,
                cache: HashMap::new(),
            }),
        })
    }
}

impl Stemmer for ExternalStemmer {
    fn stem(&self, token: &str) -> Result<String> {
        let mut io = self.io.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(s) = io.cache.get(token) {
            return Ok(s.clone());
        }
        writeln!(io.stdin, "{token}")?;
        io.stdin.flush()?;
        let mut line = String::new();
        if io.stdout.read_line(&mut line)? == 0 {
            return Err(Error::Config(format!(
                "stemmer {} closed its output",
                self.program.display()
            )));
        }
        let stem = line.trim_end_matches(['\n', '\r']).to_string();
        io.cache.insert(token.to_string(), stem.clone());
        Ok(stem)
    }

    fn label(&self) -> String {
        format!("external:{}", self.program.display())
    }
}

impl Drop for ExternalStemmer {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}

/// Builds a stemmer from `none`, `suffix-stub` or `external:<path>`.
pub fn stemmer_from_spec(spec: &str) -> Result<Option<Arc<dyn Stemmer>>> {
    match spec {
        "none" | "" => Ok(None),
        "suffix-stub" => Ok(Some(Arc::new(SuffixStripper::default()))),
        s => match s.strip_prefix("external:") {
            Some(path) if !path.is_empty() => Ok(Some(Arc::new(ExternalStemmer::spawn(path)?))),
            _ => Err(Error::Config(format!("unknown stemmer {spec:?}"))),
        },
    }
}
