//! Mean-pooled BERT and MPNet sentence encoders on candle, loaded from a
//! local sentence-transformers directory (config.json, tokenizer.json and
//! model.safetensors or pytorch_model.bin).

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::{Embedding, LayerNorm, Linear};
use serde::Deserialize;
use tokenizers::Tokenizer;

use super::embedding::{EmbeddingVector, SentenceEncoder};
use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Arch {
    Bert,
    MpNet,
}

#[derive(Debug, Deserialize)]
struct EncoderConfig {
    model_type: String,
    vocab_size: usize,
    hidden_size: usize,
    num_hidden_layers: usize,
    num_attention_heads: usize,
    #[serde(default = "default_eps")]
    layer_norm_eps: f64,
    #[serde(default = "default_buckets")]
    relative_attention_num_buckets: usize,
    #[serde(default)]
    pad_token_id: Option<u32>,
    #[serde(default)]
    hidden_act: Option<String>,
}

fn default_eps() -> f64 {
    1e-12
}

fn default_buckets() -> usize {
    32
}

/// Weight lookup tolerant of the `bert.` / `mpnet.` wrappers and of old
/// `gamma`/`beta` LayerNorm names.
pub(crate) struct WeightMap {
    tensors: HashMap<String, Tensor>,
}

impl WeightMap {
    pub(crate) fn load(dir: &Path) -> Result<Self> {
        let st = dir.join("model.safetensors");
        let raw: Vec<(String, Tensor)> = if st.exists() {
            candle_core::safetensors::load(&st, &Device::Cpu)?.into_iter().collect()
        } else {
            let bin = dir.join("pytorch_model.bin");
            if !bin.exists() {
                return Err(Error::Backend(format!(
                    "{} has neither model.safetensors nor pytorch_model.bin",
                    dir.display()
                )));
            }
            candle_core::pickle::read_all(&bin)?
        };
        let tensors = raw
            .into_iter()
            .map(|(k, t)| Ok((k, t.to_dtype(DType::F32)?)))
            .collect::<Result<HashMap<_, _>>>()?;
        Ok(WeightMap { tensors })
    }

    pub(crate) fn from_map(tensors: HashMap<String, Tensor>) -> Self {
        WeightMap { tensors }
    }

    pub(crate) fn get_opt(&self, name: &str) -> Option<Tensor> {
        let aliases = [
            name.to_string(),
            name.replace("LayerNorm.weight", "LayerNorm.gamma"),
            name.replace("LayerNorm.bias", "LayerNorm.beta"),
        ];
        for alias in &aliases {
            for prefix in ["", "bert.", "mpnet.", "0.auto_model."] {
                if let Some(t) = self.tensors.get(&format!("{prefix}{alias}")) {
                    return Some(t.clone());
                }
            }
        }
        None
    }

    pub(crate) fn get(&self, name: &str) -> Result<Tensor> {
        self.get_opt(name)
            .ok_or_else(|| Error::Backend(format!("checkpoint is missing weight '{name}'")))
    }

    fn linear(&self, prefix: &str) -> Result<Linear> {
        Ok(Linear::new(
            self.get(&format!("{prefix}.weight"))?,
            self.get_opt(&format!("{prefix}.bias")),
        ))
    }

    fn layer_norm(&self, prefix: &str, eps: f64) -> Result<LayerNorm> {
        Ok(LayerNorm::new(
            self.get(&format!("{prefix}.weight"))?,
            self.get(&format!("{prefix}.bias"))?,
            eps,
        ))
    }
}

/// Bucket of a signed relative position (`key - query`), shared by T5's
/// bidirectional attention and MPNet. Computed in f32 like the reference
/// implementations so boundaries land in the same bucket.
pub(crate) fn relative_bucket(relative: i64, bidirectional: bool, num_buckets: usize, max_distance: usize) -> usize {
    let mut buckets = num_buckets as i64;
    let mut bucket = 0i64;
    let n = if bidirectional {
        buckets /= 2;
        if relative > 0 {
            bucket += buckets;
        }
        relative.abs()
    } else {
        (-relative).max(0)
    };
    let max_exact = buckets / 2;
    if n < max_exact {
        bucket += n;
    } else {
        let scaled = (n as f32 / max_exact as f32).ln() / (max_distance as f32 / max_exact as f32).ln()
            * (buckets - max_exact) as f32;
        bucket += (max_exact + scaled as i64).min(buckets - 1);
    }
    bucket as usize
}

struct Layer {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    attn_norm: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
    ff_norm: LayerNorm,
}

struct Encoder {
    arch: Arch,
    word: Embedding,
    position: Embedding,
    token_type: Option<Tensor>,
    embed_norm: LayerNorm,
    layers: Vec<Layer>,
    relative_bias: Option<Embedding>,
    heads: usize,
    hidden: usize,
    num_buckets: usize,
    pad_id: u32,
    gelu_tanh: bool,
}

impl Encoder {
    fn load(cfg: &EncoderConfig, arch: Arch, w: &WeightMap) -> Result<Self> {
        let h = cfg.hidden_size;
        let eps = cfg.layer_norm_eps;
        let mut layers = Vec::with_capacity(cfg.num_hidden_layers);
        for i in 0..cfg.num_hidden_layers {
            let p = format!("encoder.layer.{i}");
            let layer = match arch {
                Arch::Bert => Layer {
                    q: w.linear(&format!("{p}.attention.self.query"))?,
                    k: w.linear(&format!("{p}.attention.self.key"))?,
                    v: w.linear(&format!("{p}.attention.self.value"))?,
                    o: w.linear(&format!("{p}.attention.output.dense"))?,
                    attn_norm: w.layer_norm(&format!("{p}.attention.output.LayerNorm"), eps)?,
                    ff_in: w.linear(&format!("{p}.intermediate.dense"))?,
                    ff_out: w.linear(&format!("{p}.output.dense"))?,
                    ff_norm: w.layer_norm(&format!("{p}.output.LayerNorm"), eps)?,
                },
                Arch::MpNet => Layer {
                    q: w.linear(&format!("{p}.attention.attn.q"))?,
                    k: w.linear(&format!("{p}.attention.attn.k"))?,
                    v: w.linear(&format!("{p}.attention.attn.v"))?,
                    o: w.linear(&format!("{p}.attention.attn.o"))?,
                    attn_norm: w.layer_norm(&format!("{p}.attention.LayerNorm"), eps)?,
                    ff_in: w.linear(&format!("{p}.intermediate.dense"))?,
                    ff_out: w.linear(&format!("{p}.output.dense"))?,
                    ff_norm: w.layer_norm(&format!("{p}.output.LayerNorm"), eps)?,
                },
            };
            layers.push(layer);
        }
        let word = w.get("embeddings.word_embeddings.weight")?;
        if word.dim(0)? != cfg.vocab_size {
            return Err(Error::Backend(format!(
                "word embedding has {} rows, config says {}",
                word.dim(0)?,
                cfg.vocab_size
            )));
        }
        let position = w.get("embeddings.position_embeddings.weight")?;
        let token_type = match arch {
            Arch::Bert => w
                .get_opt("embeddings.token_type_embeddings.weight")
                .map(|t| t.get(0))
                .transpose()?,
            Arch::MpNet => None,
        };
        let relative_bias = match arch {
            Arch::MpNet => Some(Embedding::new(w.get("encoder.relative_attention_bias.weight")?, cfg.num_attention_heads)),
            Arch::Bert => None,
        };
        let default_pad = if arch == Arch::MpNet { 1 } else { 0 };
        Ok(Encoder {
            arch,
            word: Embedding::new(word, h),
            position: Embedding::new(position, h),
            token_type,
            embed_norm: w.layer_norm("embeddings.LayerNorm", eps)?,
            layers,
            relative_bias,
            heads: cfg.num_attention_heads,
            hidden: h,
            num_buckets: cfg.relative_attention_num_buckets,
            pad_id: cfg.pad_token_id.unwrap_or(default_pad),
            gelu_tanh: matches!(cfg.hidden_act.as_deref(), Some("gelu_new" | "gelu_pytorch_tanh")),
        })
    }

    fn position_ids(&self, ids: &[Vec<u32>], width: usize) -> Vec<u32> {
        let mut out = Vec::with_capacity(ids.len() * width);
        for row in ids {
            match self.arch {
                Arch::Bert => out.extend(0..width as u32),
                Arch::MpNet => {
                    // Non-pad tokens count up from pad_id + 1; pads sit at pad_id.
                    let mut count = 0;
                    for j in 0..width {
                        let tok = row.get(j).copied().unwrap_or(self.pad_id);
                        if tok != self.pad_id {
                            count += 1;
                            out.push(count + self.pad_id);
                        } else {
                            out.push(self.pad_id);
                        }
                    }
                }
            }
        }
        out
    }

    /// Attention bias `[1, heads, len, len]` from relative positions.
    fn position_bias(&self, len: usize) -> Result<Option<Tensor>> {
        let Some(table) = &self.relative_bias else {
            return Ok(None);
        };
        let mut buckets = Vec::with_capacity(len * len);
        for q in 0..len as i64 {
            for k in 0..len as i64 {
                buckets.push(relative_bucket(k - q, true, self.num_buckets, 128) as u32);
            }
        }
        let idx = Tensor::from_vec(buckets, (len, len), &Device::Cpu)?;
        let bias = table.forward(&idx)?.permute((2, 0, 1))?.unsqueeze(0)?;
        Ok(Some(bias.contiguous()?))
    }

    /// Mean-pooled hidden states for right-padded id rows.
    fn pooled(&self, ids: &[Vec<u32>]) -> Result<Tensor> {
        let b = ids.len();
        let width = ids.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let mut flat = Vec::with_capacity(b * width);
        let mut mask = Vec::with_capacity(b * width);
        for row in ids {
            for j in 0..width {
                flat.push(row.get(j).copied().unwrap_or(self.pad_id));
                mask.push(if j < row.len() { 1f32 } else { 0f32 });
            }
        }
        let dev = Device::Cpu;
        let input = Tensor::from_vec(flat, (b, width), &dev)?;
        let mask = Tensor::from_vec(mask, (b, width), &dev)?;
        let pos = Tensor::from_vec(self.position_ids(ids, width), (b, width), &dev)?;

        let mut x = self.word.forward(&input)?.add(&self.position.forward(&pos)?)?;
        if let Some(tt) = &self.token_type {
            x = x.broadcast_add(tt)?;
        }
        let mut x = self.embed_norm.forward(&x)?;

        let attn_bias = ((mask.ones_like()? - &mask)? * -1e9)?.reshape((b, 1, 1, width))?;
        let pos_bias = self.position_bias(width)?;
        let dh = self.hidden / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let split = |t: Tensor| -> Result<Tensor> {
            Ok(t.reshape((b, width, self.heads, dh))?.transpose(1, 2)?.contiguous()?)
        };
        for layer in &self.layers {
            let q = split(layer.q.forward(&x)?)?;
            let k = split(layer.k.forward(&x)?)?;
            let v = split(layer.v.forward(&x)?)?;
            let mut scores = (q.matmul(&k.t()?)? * scale)?.broadcast_add(&attn_bias)?;
            if let Some(pb) = &pos_bias {
                scores = scores.broadcast_add(pb)?;
            }
            let probs = candle_nn::ops::softmax_last_dim(&scores)?;
            let ctx = probs.matmul(&v)?.transpose(1, 2)?.reshape((b, width, self.hidden))?;
            let attn = layer.attn_norm.forward(&(layer.o.forward(&ctx)? + &x)?)?;
            let ff = layer.ff_in.forward(&attn)?;
            let ff = if self.gelu_tanh { ff.gelu()? } else { ff.gelu_erf()? };
            x = layer.ff_norm.forward(&(layer.ff_out.forward(&ff)? + attn)?)?;
        }

        let m = mask.unsqueeze(2)?;
        let summed = x.broadcast_mul(&m)?.sum(1)?;
        let counts = m.sum(1)?.clamp(1e-9, f64::MAX)?;
        Ok(summed.broadcast_div(&counts)?)
    }
}

#[derive(Debug, Deserialize)]
struct SentenceBertConfig {
    max_seq_length: Option<usize>,
}

#[derive(Debug, Deserialize, Default)]
struct PoolingConfig {
    #[serde(default)]
    pooling_mode_mean_tokens: bool,
}

/// A pretrained transformer encoder with mean pooling.
pub struct TransformerEncoder {
    id: String,
    encoder: Encoder,
    tokenizer: Tokenizer,
    max_len: usize,
}

impl TransformerEncoder {
    pub fn load(dir: &Path, id: &str) -> Result<Self> {
        let cfg_path = dir.join("config.json");
        let cfg: EncoderConfig = serde_json::from_str(&std::fs::read_to_string(&cfg_path).with_path(&cfg_path)?)?;
        let arch = match cfg.model_type.as_str() {
            "bert" => Arch::Bert,
            "mpnet" => Arch::MpNet,
            other => return Err(Error::Backend(format!("unsupported encoder type '{other}'"))),
        };
        let pooling_path = dir.join("1_Pooling/config.json");
        if pooling_path.exists() {
            let pooling: PoolingConfig =
                serde_json::from_str(&std::fs::read_to_string(&pooling_path).with_path(&pooling_path)?)?;
            if !pooling.pooling_mode_mean_tokens {
                log::warn!("{id}: pooling config is not mean pooling; mean pooling is used regardless");
            }
        }
        let st_path = dir.join("sentence_bert_config.json");
        let max_len = if st_path.exists() {
            let st: SentenceBertConfig = serde_json::from_str(&std::fs::read_to_string(&st_path).with_path(&st_path)?)?;
            st.max_seq_length
        } else {
            None
        };
        let weights = WeightMap::load(dir)?;
        let encoder = Encoder::load(&cfg, arch, &weights)?;
        let max_positions = encoder.position.embeddings().dim(0)?;
        // MPNet offsets positions by pad_id + 1.
        let usable = match arch {
            Arch::Bert => max_positions,
            Arch::MpNet => max_positions - encoder.pad_id as usize - 1,
        };
        let max_len = max_len.unwrap_or(usable).min(usable);
        let tokenizer = load_tokenizer(dir)?;
        log::info!("loaded {arch:?} encoder {id} ({} layers, dim {}, max_len {max_len})", cfg.num_hidden_layers, cfg.hidden_size);
        Ok(TransformerEncoder {
            id: id.to_string(),
            encoder,
            tokenizer,
            max_len,
        })
    }

    /// Token ids including special tokens, truncated to the maximum
    /// sequence length (keeping the final special token).
    pub fn token_ids(&self, text: &str) -> Result<Vec<u32>> {
        let enc = self
            .tokenizer
            .encode(text, true)
            .map_err(|e| Error::Backend(format!("tokenizer: {e}")))?;
        let mut ids = enc.get_ids().to_vec();
        if ids.len() > self.max_len {
            let last = *ids.last().unwrap();
            let specials = enc.get_special_tokens_mask();
            ids.truncate(self.max_len);
            if specials.last() == Some(&1) {
                ids[self.max_len - 1] = last;
            }
        }
        Ok(ids)
    }

    /// Mean-pooled embeddings of pre-tokenised rows.
    pub fn embed_ids(&self, ids: &[Vec<u32>]) -> Result<Vec<Vec<f32>>> {
        Ok(self.encoder.pooled(ids)?.to_vec2::<f32>()?)
    }
}

pub(crate) fn load_tokenizer(dir: &Path) -> Result<Tokenizer> {
    let path = dir.join("tokenizer.json");
    if !path.exists() {
        return Err(Error::Backend(format!("{} not found", path.display())));
    }
    Tokenizer::from_file(&path).map_err(|e| Error::Backend(format!("{}: {e}", path.display())))
}

impl SentenceEncoder for TransformerEncoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.encoder.hidden
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let ids = texts.iter().map(|t| self.token_ids(t)).collect::<Result<Vec<_>>>()?;
        self.embed_ids(&ids)?
            .iter()
            .map(|v| EmbeddingVector::from_f32(v))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn fixtures() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
    }

    fn reference(model: &str) -> serde_json::Value {
        let text = std::fs::read_to_string(fixtures().join("reference_outputs.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v[model].clone()
    }

    fn check_against_reference(model: &str) {
        let enc = TransformerEncoder::load(&fixtures().join(model), model).unwrap();
        let r = reference(model);
        let texts: Vec<&str> = r["texts"].as_array().unwrap().iter().map(|t| t.as_str().unwrap()).collect();
        let ids: Vec<Vec<u32>> = serde_json::from_value(r["ids"].clone()).unwrap();
        for (t, expected) in texts.iter().zip(&ids) {
            assert_eq!(&enc.token_ids(t).unwrap(), expected);
        }
        let expected: Vec<Vec<f32>> = serde_json::from_value(r["embeddings"].clone()).unwrap();
        let got = enc.encode_batch(&texts).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            for (a, b) in g.values().iter().zip(e) {
                assert!((a - *b as f64).abs() < 1e-5, "{model}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn bert_matches_reference_implementation() {
        check_against_reference("bert_tiny");
    }

    #[test]
    fn mpnet_matches_reference_implementation() {
        check_against_reference("mpnet_tiny");
    }

    #[test]
    fn padding_does_not_change_embeddings() {
        for model in ["bert_tiny", "mpnet_tiny"] {
            let enc = TransformerEncoder::load(&fixtures().join(model), model).unwrap();
            let alone = enc.encode_batch(&["a town"]).unwrap();
            let batched = enc.encode_batch(&["a town", "the town was founded on the river , and is known for the market ."]).unwrap();
            for (a, b) in alone[0].values().iter().zip(batched[0].values()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn long_input_is_truncated_to_max_len() {
        let enc = TransformerEncoder::load(&fixtures().join("bert_tiny"), "bert_tiny").unwrap();
        let long = vec!["the"; 100].join(" ");
        let ids = enc.token_ids(&long).unwrap();
        assert_eq!(ids.len(), 32);
        assert_eq!(*ids.last().unwrap(), 3, "final [SEP] kept");
        assert_eq!(enc.encode_batch(&[&long]).unwrap()[0].dim(), 32);
    }

    #[test]
    fn bucket_matches_hand_values() {
        // Bidirectional, 32 buckets: 8 exact slots each side, log-spaced to 128.
        assert_eq!(relative_bucket(0, true, 32, 128), 0);
        assert_eq!(relative_bucket(-3, true, 32, 128), 3);
        assert_eq!(relative_bucket(3, true, 32, 128), 19);
        assert_eq!(relative_bucket(-8, true, 32, 128), 8);
        assert_eq!(relative_bucket(-1000, true, 32, 128), 15);
        assert_eq!(relative_bucket(1000, true, 32, 128), 31);
        // Unidirectional: only the past is distinguished.
        assert_eq!(relative_bucket(5, false, 32, 128), 0);
        assert_eq!(relative_bucket(-20, false, 32, 128), 16 + ((20f32 / 16.0).ln() / 8f32.ln() * 16.0) as usize);
    }
}
