//! Okapi BM25 over an in-memory inverted index.
//!
//! score(q, d) = Σ_{t ∈ q} idf(t) · tf(t,d)·(k1+1) / (tf(t,d) + k1·(1 − b + b·|d|/avgdl))
//! idf(t) = ln(1 + (N − df(t) + 0.5) / (df(t) + 0.5))
//!
//! The `1 +` inside the log keeps idf positive for terms that occur in more
//! than half of the corpus, which matters for tiny corpora.

use std::collections::HashMap;

use super::{ClaimEvidencePair, Label};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.5, b: 0.75 }
    }
}

#[derive(Debug, Clone)]
pub struct Document {
    pub id: String,
    pub text: String,
}

/// A claim to retrieve evidence for. The label is copied onto the pair.
#[derive(Debug, Clone)]
pub struct ClaimQuery {
    pub id: String,
    pub claim: String,
    pub label: Option<Label>,
}

/// Lowercased whitespace tokens with surrounding punctuation stripped.
pub(crate) fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

pub struct Bm25Index {
    params: Bm25Params,
    postings: HashMap<String, Vec<(usize, u32)>>,
    doc_lens: Vec<u32>,
    avg_len: f64,
}

impl Bm25Index {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, params: Bm25Params) -> Self {
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        let mut doc_lens = Vec::new();
        for (doc, text) in texts.into_iter().enumerate() {
            let tokens = tokenize(text);
            doc_lens.push(tokens.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((doc, count));
            }
        }
        let total: u64 = doc_lens.iter().map(|&l| l as u64).sum();
        let avg_len = if doc_lens.is_empty() {
            0.0
        } else {
            total as f64 / doc_lens.len() as f64
        };
        Bm25Index {
            params,
            postings,
            doc_lens,
            avg_len,
        }
    }

    pub fn len(&self) -> usize {
        self.doc_lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_lens.is_empty()
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.doc_lens.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Score of every document for `query`.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let mut scores = vec![0.0; self.doc_lens.len()];
        let mut terms = tokenize(query);
        terms.sort();
        terms.dedup();
        let Bm25Params { k1, b } = self.params;
        let avg = if self.avg_len > 0.0 { self.avg_len } else { 1.0 };
        for term in terms {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(list.len());
            for &(doc, tf) in list {
                let tf = tf as f64;
                let norm = k1 * (1.0 - b + b * self.doc_lens[doc] as f64 / avg);
                scores[doc] += idf * tf * (k1 + 1.0) / (tf + norm);
            }
        }
        scores
    }

    /// Indices of the `k` best documents, best first. Equal scores keep
    /// corpus order.
    pub fn top_k(&self, query: &str, k: usize) -> Vec<(usize, f64)> {
        let mut ranked: Vec<(usize, f64)> = self.scores(query).into_iter().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        ranked
    }
}

/// Builds evidence for each claim by concatenating its top-`k` abstracts
/// (space separated, best first).
pub fn retrieve_evidence(
    claims: &[ClaimQuery],
    abstracts: &[Document],
    k: usize,
    params: Bm25Params,
) -> Result<Vec<ClaimEvidencePair>> {
    if abstracts.is_empty() {
        return Err(Error::Validation("abstract corpus is empty".into()));
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let index = Bm25Index::build(abstracts.iter().map(|d| d.text.as_str()), params);
    claims
        .iter()
        .map(|q| {
            let evidence = index
                .top_k(&q.claim, k)
                .into_iter()
                .map(|(i, _)| abstracts[i].text.trim())
                .collect::<Vec<_>>()
                .join(" ");
            ClaimEvidencePair::new(q.id.clone(), q.claim.clone(), evidence, q.label)
        })
        .collect()
}
