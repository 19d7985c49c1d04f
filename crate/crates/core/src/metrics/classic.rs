//! Sentence-level, single-reference n-gram and alignment metrics. All
//! scores are in [0, 1].

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use rust_stemmers::{Algorithm, Stemmer};

/// Mteval-v13a tokenisation as used by SacreBLEU.
pub fn tokenize_13a(text: &str) -> Vec<String> {
    static RULES: OnceLock<Vec<(Regex, &'static str)>> = OnceLock::new();
    let rules = RULES.get_or_init(|| {
        [
            (r"([\{-~\[-`\x20-&\(-\+:-@/])", " $1 "),
            (r"([^0-9])([\.,])", "$1 $2 "),
            (r"([\.,])([^0-9])", " $1 $2"),
            (r"([0-9])(-)", "$1 $2 "),
        ]
        .into_iter()
        .map(|(re, rep)| (Regex::new(re).expect("valid regex"), rep))
        .collect()
    });
    let mut line = text
        .replace("<skipped>", "")
        .replace("-\n", "")
        .replace('\n', " ");
    if line.contains('&') {
        line = line
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let mut line = format!(" {line} ");
    for (re, rep) in rules {
        line = re.replace_all(&line, *rep).into_owned();
    }
    line.split_whitespace().map(str::to_owned).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and candidate n-gram total for orders 1..=4.
fn ngram_stats(cand: &[String], reference: &[String]) -> [(usize, usize); 4] {
    let mut out = [(0, 0); 4];
    for (i, slot) in out.iter_mut().enumerate() {
        let n = i + 1;
        let c = ngram_counts(cand, n);
        let r = ngram_counts(reference, n);
        let matches = c
            .iter()
            .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
            .sum();
        *slot = (matches, cand.len().saturating_sub(n - 1));
    }
    out
}

fn brevity_penalty(cand_len: usize, ref_len: usize) -> f64 {
    if cand_len == 0 {
        0.0
    } else if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    }
}

/// Sentence BLEU-4 over 13a tokens with add-one smoothing of the 2- to
/// 4-gram precisions. Unigram precision is unsmoothed, so no shared token
/// means a score of 0.
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize_13a(candidate);
    let refs = tokenize_13a(reference);
    if cand.is_empty() {
        return 0.0;
    }
    let stats = ngram_stats(&cand, &refs);
    if stats[0].0 == 0 {
        return 0.0;
    }
    let log_p: f64 = stats
        .iter()
        .enumerate()
        .map(|(i, &(m, t))| {
            if i == 0 {
                (m as f64 / t as f64).ln()
            } else {
                ((m as f64 + 1.0) / (t as f64 + 1.0)).ln()
            }
        })
        .sum();
    brevity_penalty(cand.len(), refs.len()) * (log_p / 4.0).exp()
}

/// SacreBLEU sentence score (13a, exponential smoothing, effective order),
/// divided by 100.
pub fn sacrebleu(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize_13a(candidate);
    let refs = tokenize_13a(reference);
    if cand.is_empty() {
        return 0.0;
    }
    let stats = ngram_stats(&cand, &refs);
    let mut precisions = [0.0f64; 4];
    let mut smooth = 1.0;
    let mut order = 4;
    for (i, &(m, t)) in stats.iter().enumerate() {
        if t == 0 {
            break;
        }
        order = i + 1;
        precisions[i] = if m == 0 {
            smooth *= 2.0;
            1.0 / (smooth * t as f64)
        } else {
            m as f64 / t as f64
        };
    }
    let mean_log: f64 = precisions[..order].iter().map(|p| p.ln()).sum::<f64>() / order as f64;
    brevity_penalty(cand.len(), refs.len()) * mean_log.exp()
}

fn rouge_tokens(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    lower
        .split(|c: char| !(c.is_ascii_lowercase() || c.is_ascii_digit()))
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 over lowercased alphanumeric tokens.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let cand = rouge_tokens(candidate);
    let refs = rouge_tokens(reference);
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&refs, &cand) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / cand.len() as f64;
    let r = lcs / refs.len() as f64;
    2.0 * p * r / (p + r)
}

const METEOR_ALPHA: f64 = 0.9;
const METEOR_BETA: f64 = 3.0;
const METEOR_GAMMA: f64 = 0.5;

/// Greedy one-to-one alignment: each remaining candidate word, last first,
/// takes the last unmatched reference word with the same form.
fn align_stage(
    cand: &mut Vec<(usize, String)>,
    refs: &mut Vec<(usize, String)>,
    matches: &mut Vec<(usize, usize)>,
) {
    let mut i = cand.len();
    while i > 0 {
        i -= 1;
        if let Some(j) = refs.iter().rposition(|(_, w)| *w == cand[i].1) {
            matches.push((cand[i].0, refs[j].0));
            cand.remove(i);
            refs.remove(j);
        }
    }
}

/// METEOR with exact and stem matching stages and the standard
/// parameters (alpha 0.9, beta 3, gamma 0.5).
pub fn meteor(candidate: &str, reference: &str) -> f64 {
    let words = |t: &str| -> Vec<(usize, String)> {
        tokenize_13a(&t.to_lowercase()).into_iter().enumerate().collect()
    };
    let mut cand = words(candidate);
    let mut refs = words(reference);
    let (cand_len, ref_len) = (cand.len(), refs.len());
    if cand_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let mut matches = Vec::new();
    align_stage(&mut cand, &mut refs, &mut matches);

    let stemmer = Stemmer::create(Algorithm::English);
    let stem = |v: Vec<(usize, String)>| -> Vec<(usize, String)> {
        v.into_iter().map(|(i, w)| (i, stemmer.stem(&w).into_owned())).collect()
    };
    let (mut cand, mut refs) = (stem(cand), stem(refs));
    align_stage(&mut cand, &mut refs, &mut matches);

    if matches.is_empty() {
        return 0.0;
    }
    matches.sort_by_key(|m| m.0);
    let mut chunks = 1;
    for w in matches.windows(2) {
        if !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1) {
            chunks += 1;
        }
    }
    let m = matches.len() as f64;
    let p = m / cand_len as f64;
    let r = m / ref_len as f64;
    let fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let penalty = METEOR_GAMMA * (chunks as f64 / m).powf(METEOR_BETA);
    fmean * (1.0 - penalty)
}
