//! Deterministic bag-of-features encoder. No model weights: word unigrams,
//! word bigrams and character trigrams are hashed into a signed vector.
//! Used for tests, toy runs and anywhere a pretrained encoder is
//! unavailable. Similarity reflects surface overlap only.

use xxhash_rust::xxh3::xxh3_64_with_seed;

use super::embedding::{EmbeddingVector, SentenceEncoder};
use crate::error::{Error, Result};

pub const HASHING_PREFIX: &str = "hash:";

pub struct HashingEncoder {
    id: String,
    dim: usize,
}

impl HashingEncoder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config("hashing encoder needs at least 2 dimensions".into()));
        }
        Ok(HashingEncoder {
            id: format!("{HASHING_PREFIX}{dim}"),
            dim,
        })
    }

    /// Parses `hash:<dim>`.
    pub fn from_id(id: &str) -> Result<Self> {
        let dim = id
            .strip_prefix(HASHING_PREFIX)
            .and_then(|d| d.parse::<usize>().ok())
            .ok_or_else(|| Error::Config(format!("bad hashing encoder id '{id}' (expected hash:<dim>)")))?;
        Self::new(dim)
    }

    fn add(&self, v: &mut [f64], feature: &str, kind: u64, weight: f64) {
        let h = xxh3_64_with_seed(feature.as_bytes(), kind);
        // Slot 0 is reserved for the bias term.
        let slot = 1 + (h % (self.dim as u64 - 1)) as usize;
        let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
        v[slot] += sign * weight;
    }

    fn encode(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        // Constant component: keeps every vector non-zero, including the
        // empty string's.
        v[0] = 1.0;
        let lower = text.to_lowercase();
        let words: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        for w in &words {
            self.add(&mut v, w, 1, 1.0);
        }
        for pair in words.windows(2) {
            self.add(&mut v, &format!("{} {}", pair[0], pair[1]), 2, 1.0);
        }
        for w in &words {
            let chars: Vec<char> = format!("<{w}>").chars().collect();
            for tri in chars.windows(3) {
                self.add(&mut v, &tri.iter().collect::<String>(), 3, 0.5);
            }
        }
        v
    }
}

impl SentenceEncoder for HashingEncoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        texts.iter().map(|t| EmbeddingVector::new(self.encode(t))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::embedding::cosine;

    fn sim(enc: &HashingEncoder, a: &str, b: &str) -> f64 {
        let v = enc.encode_batch(&[a, b]).unwrap();
        cosine(&v[0], &v[1]).unwrap()
    }

    #[test]
    fn id_roundtrip() {
        let enc = HashingEncoder::from_id("hash:256").unwrap();
        assert_eq!(enc.id(), "hash:256");
        assert_eq!(enc.dimension(), 256);
        assert!(HashingEncoder::from_id("hash:x").is_err());
        assert!(HashingEncoder::from_id("hash:1").is_err());
    }

    #[test]
    fn overlap_orders_similarity() {
        let enc = HashingEncoder::new(512).unwrap();
        let claim = "The reef lies off the northern coast.";
        let para = "The reef is located off the northern coast.";
        let other = "Heart failure rates rose sharply in 1990.";
        assert!(sim(&enc, claim, para) > sim(&enc, claim, other));
        assert!((sim(&enc, claim, claim) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_text_is_not_degenerate() {
        let enc = HashingEncoder::new(16).unwrap();
        let v = enc.encode_batch(&[""]).unwrap();
        assert!(v[0].norm() > 0.0);
    }
}
