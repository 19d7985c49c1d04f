use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

/// A sentence embedding. Stored in f64 so that similarity arithmetic does
/// not lose precision relative to the encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Backend("encoder produced a non-finite embedding".into()));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        EmbeddingVector(self.0.iter().map(|v| v * alpha).collect())
    }

    /// Element-wise `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dims(self, other)?;
        Ok(EmbeddingVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }
}

fn check_dims(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

/// Cosine similarity clamped to [-1, 1]. A zero vector has similarity 0 to
/// everything.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    check_dims(a, b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        log::warn!("cosine of a zero-norm embedding; returning 0");
        return Ok(0.0);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Maps text to fixed-length vectors.
pub trait SentenceEncoder: Send + Sync {
    /// Identifier the encoder was resolved from; part of the cache key.
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;
}

type CacheKey = [u8; 32];

const CACHE_MAGIC: &[u8; 8] = b"MPLEMB1\n";

/// Batched, memoising front end over a [`SentenceEncoder`]. Lookups take a
/// shared lock; inserts are serialised behind the write lock.
pub struct Embedder {
    encoder: Arc<dyn SentenceEncoder>,
    batch_size: usize,
    cache: RwLock<HashMap<CacheKey, Arc<EmbeddingVector>>>,
    encoded: AtomicUsize,
}

impl Embedder {
    pub fn new(encoder: Arc<dyn SentenceEncoder>) -> Self {
        Embedder {
            encoder,
            batch_size: 32,
            cache: RwLock::new(HashMap::new()),
            encoded: AtomicUsize::new(0),
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn encoder_id(&self) -> &str {
        self.encoder.id()
    }

    /// Number of texts actually sent to the encoder so far.
    pub fn encoded_count(&self) -> usize {
        self.encoded.load(Ordering::Relaxed)
    }

    pub fn cached_len(&self) -> usize {
        self.cache.read().unwrap().len()
    }

    fn key(&self, text: &str) -> CacheKey {
        let mut h = Sha256::new();
        h.update(self.encoder.id().as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        h.finalize().into()
    }

    pub fn embed(&self, texts: &[&str]) -> Result<Vec<Arc<EmbeddingVector>>> {
        let keys: Vec<CacheKey> = texts.iter().map(|t| self.key(t)).collect();
        let mut missing: Vec<(CacheKey, &str)> = Vec::new();
        {
            let cache = self.cache.read().unwrap();
            let mut queued = std::collections::HashSet::new();
            for (key, text) in keys.iter().zip(texts) {
                if !cache.contains_key(key) && queued.insert(*key) {
                    missing.push((*key, text));
                }
            }
        }
        for chunk in missing.chunks(self.batch_size) {
            let batch: Vec<&str> = chunk.iter().map(|(_, t)| *t).collect();
            let vectors = self.encoder.encode_batch(&batch)?;
            if vectors.len() != batch.len() {
                return Err(Error::Backend(format!(
                    "encoder returned {} vectors for {} texts",
                    vectors.len(),
                    batch.len()
                )));
            }
            self.encoded.fetch_add(batch.len(), Ordering::Relaxed);
            let mut cache = self.cache.write().unwrap();
            for ((key, _), v) in chunk.iter().zip(vectors) {
                cache.entry(*key).or_insert_with(|| Arc::new(v));
            }
        }
        let cache = self.cache.read().unwrap();
        Ok(keys.iter().map(|k| Arc::clone(&cache[k])).collect())
    }

    pub fn embed_one(&self, text: &str) -> Result<Arc<EmbeddingVector>> {
        Ok(self.embed(&[text])?.remove(0))
    }

    /// Cosine similarity of the two texts' embeddings.
    pub fn semsim(&self, a: &str, b: &str) -> Result<f64> {
        let v = self.embed(&[a, b])?;
        cosine(&v[0], &v[1])
    }

    /// Loads previously persisted embeddings. A missing file is not an error.
    pub fn load_cache(&self, path: &Path) -> Result<usize> {
        if !path.exists() {
            return Ok(0);
        }
        let mut r = BufReader::new(File::open(path).with_path(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).with_path(path)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Validation(format!("{} is not an embedding cache", path.display())));
        }
        let dim = r.read_u32::<LittleEndian>().with_path(path)? as usize;
        let count = r.read_u64::<LittleEndian>().with_path(path)? as usize;
        let mut cache = self.cache.write().unwrap();
        for _ in 0..count {
            let mut key = [0u8; 32];
            r.read_exact(&mut key).with_path(path)?;
            let mut values = vec![0f64; dim];
            r.read_f64_into::<LittleEndian>(&mut values).with_path(path)?;
            cache.insert(key, Arc::new(EmbeddingVector(values)));
        }
        Ok(count)
    }

    /// Writes every cached embedding, sorted by key so identical caches
    /// produce identical files.
    pub fn save_cache(&self, path: &Path) -> Result<()> {
        let cache = self.cache.read().unwrap();
        let mut entries: Vec<(&CacheKey, &Arc<EmbeddingVector>)> = cache.iter().collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        let dim = entries.first().map(|(_, v)| v.dim()).unwrap_or(0);
        let tmp = PathBuf::from(format!("{}.tmp", path.display()));
        {
            let mut w = BufWriter::new(File::create(&tmp).with_path(&tmp)?);
            w.write_all(CACHE_MAGIC).with_path(&tmp)?;
            w.write_u32::<LittleEndian>(dim as u32).with_path(&tmp)?;
            w.write_u64::<LittleEndian>(entries.len() as u64).with_path(&tmp)?;
            for (key, v) in entries {
                w.write_all(key).with_path(&tmp)?;
                for &x in v.values() {
                    w.write_f64::<LittleEndian>(x).with_path(&tmp)?;
                }
            }
            w.flush().with_path(&tmp)?;
        }
        std::fs::rename(&tmp, path).with_path(path)
    }
}
