//! Brute-force reference implementations and random fixture generators.
//! Nothing here calls into the library's scoring or matching code.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;

/// (start, text, distance) in Unicode scalar offsets.
pub type Span = (usize, String, usize);

fn word(c: char) -> bool {
    c.is_alphanumeric()
}

fn edge_ok(ctx: &[char], s: usize, e: usize) -> bool {
    let first = ctx[s];
    let last = ctx[e - 1];
    if first.is_whitespace() || last.is_whitespace() {
        return false;
    }
    let cuts_left = s > 0 && word(ctx[s - 1]) && word(first);
    let cuts_right = e < ctx.len() && word(last) && word(ctx[e]);
    !cuts_left && !cuts_right
}

/// Scans every substring, keeps those on token edges within the distance
/// budget, then keeps the longest. Distances come from `strsim`.
pub fn fuzzy_oracle(context: &str, answer: &str) -> Vec<Span> {
    let ctx: Vec<char> = context.chars().collect();
    let n_ans = answer.chars().count();
    if n_ans == 0 {
        return Vec::new();
    }
    let t = if n_ans < 4 { 1 } else { 3 };
    let mut hits: Vec<Span> = Vec::new();
    for s in 0..ctx.len() {
        for e in s + 1..=ctx.len() {
            if !edge_ok(&ctx, s, e) {
                continue;
            }
            // length difference alone already exceeds the budget
            if (e - s).abs_diff(n_ans) > t {
                continue;
            }
            let cand: String = ctx[s..e].iter().collect();
            let d = strsim::levenshtein(&cand, answer);
            if d <= t {
                hits.push((s, cand, d));
            }
        }
    }
    let Some(best) = hits.iter().map(|h| h.1.chars().count()).max() else {
        return Vec::new();
    };
    hits.retain(|h| h.1.chars().count() == best);
    hits.sort_by_key(|h| h.0);
    hits
}

/// Random text over a small alphabet with spaces and punctuation, so
/// near-misses are frequent.
pub fn random_text<R: Rng>(rng: &mut R, max_len: usize) -> String {
    const ALPHABET: &[char] = &[
        'a', 'b', 'c', 'd', 'e', 'ı', 'ş', 'ö', '1', '2', ' ', ' ', ' ', '\'', '.', ',',
    ];
    let len = rng.random_range(0..=max_len);
    (0..len)
        .map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())])
        .collect()
}

/// Answer drawn from the context (then perturbed) or generated freshly.
pub fn random_answer<R: Rng>(rng: &mut R, context: &str, max_len: usize) -> String {
    let ctx: Vec<char> = context.chars().collect();
    let mut ans: Vec<char> = if !ctx.is_empty() && rng.random_bool(0.7) {
        let s = rng.random_range(0..ctx.len());
        let len = rng.random_range(1..=max_len.min(ctx.len() - s));
        ctx[s..s + len].to_vec()
    } else {
        random_text(rng, max_len).chars().collect()
    };
    for _ in 0..rng.random_range(0..=3) {
        if ans.is_empty() {
            break;
        }
        let i = rng.random_range(0..ans.len());
        match rng.random_range(0..3) {
            0 => {
                ans.remove(i);
            }
            1 => ans[i] = 'x',
            _ => {
                if ans.len() < max_len {
                    ans.insert(i, 'y');
                }
            }
        }
    }
    ans.truncate(max_len);
    let out: String = ans.into_iter().collect();
    if out.trim().is_empty() {
        "a".to_string()
    } else {
        out
    }
}

/// BM25 straight from raw term counts:
/// Σ over query tokens present in the corpus of ln(N/df) · f / (f + k1(1 − b + b·|d|/avgdl)).
/// Returns every document containing at least one query token, ranked by
/// descending score then ascending id.
pub fn bm25_oracle(
    docs: &[(String, Vec<String>)],
    query: &[String],
    k1: f64,
    b: f64,
) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.1.len()).sum::<usize>() as f64 / n;
    let mut df: HashMap<&str, usize> = HashMap::new();
    for (_, toks) in docs {
        let mut uniq: Vec<&str> = toks.iter().map(String::as_str).collect();
        uniq.sort_unstable();
        uniq.dedup();
        for t in uniq {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut out = Vec::new();
    for (id, toks) in docs {
        let mut matched = false;
        let mut score = 0.0;
        for q in query {
            let Some(&dft) = df.get(q.as_str()) else { continue };
            let f = toks.iter().filter(|t| *t == q).count() as f64;
            if f == 0.0 {
                continue;
            }
            matched = true;
            let norm = 1.0 - b + b * toks.len() as f64 / avgdl;
            score += (n / dft as f64).ln() * f / (f + k1 * norm);
        }
        if matched {
            out.push((id.clone(), score));
        }
    }
    sort_ranked(&mut out);
    out
}

pub fn sort_ranked(v: &mut [(String, f64)]) {
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
}

/// Plain f64 inner product.
pub fn inner(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..a.len() {
        s += a[i] as f64 * b[i] as f64;
    }
    s
}

/// Late-interaction score over explicit row lists.
pub fn maxsim_oracle(q: &[Vec<f32>], d: &[Vec<f32>]) -> f64 {
    let mut total = 0.0;
    for qi in q {
        let mut best = f64::NEG_INFINITY;
        for dj in d {
            let s = inner(qi, dj);
            if s > best {
                best = s;
            }
        }
        total += best;
    }
    total
}

pub fn random_rows<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect()
}

/// Corpus of `n` passages over a skewed vocabulary of `vocab` words.
pub fn random_corpus<R: Rng>(rng: &mut R, n: usize, vocab: usize) -> Vec<(String, String, String)> {
    (0..n)
        .map(|i| {
            let len = rng.random_range(3..40);
            let text: Vec<String> = (0..len).map(|_| skewed_word(rng, vocab)).collect();
            let title = skewed_word(rng, vocab);
            (format!("{i}:0"), title, text.join(" "))
        })
        .collect()
}

pub fn skewed_word<R: Rng>(rng: &mut R, vocab: usize) -> String {
    let u: f64 = rng.random();
    let idx = ((vocab as f64).powf(u) - 1.0) as usize;
    format!("w{}", idx.min(vocab - 1))
}
