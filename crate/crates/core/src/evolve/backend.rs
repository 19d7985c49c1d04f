use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};
use regex::Regex;
use tokenizers::Tokenizer;

use super::config::{EvolveConfig, SCRATCH_TINY};
use super::optim::AdamW;
use super::t5::{Dropout, LoraSpec, T5Config, T5Model};
use crate::error::{Error, Result};
use crate::hub::resolve_model_dir;
use crate::metrics::load_tokenizer;

/// Model operations needed by the training loop.
pub trait Seq2SeqBackend: Send {
    fn describe(&self) -> String;

    /// Token ids of `text` ending in EOS, cut to the length limit. The flag
    /// reports whether truncation happened.
    fn encode(&self, text: &str) -> Result<(Vec<u32>, bool)>;

    /// One optimisation step on (source, target) id pairs; returns the loss.
    fn train_batch(&mut self, batch: &[(Vec<u32>, Vec<u32>)], dropout_seed: u64) -> Result<f64>;

    /// Greedy outputs as text, with a flag for rows that hit the token limit.
    fn generate(&self, sources: &[Vec<u32>], max_new_tokens: usize) -> Result<Vec<(String, bool)>>;

    fn save_checkpoint(&self, path: &Path) -> Result<()>;

    fn load_checkpoint(&mut self, path: &Path, optimizer_steps: u64) -> Result<()>;

    fn optimizer_steps(&self) -> u64;

    /// (trainable, total) parameter counts.
    fn parameter_counts(&self) -> (usize, usize);
}

/// Wraps a tokenizer with EOS handling and length limits.
pub struct TextCodec {
    tokenizer: Tokenizer,
    eos: u32,
    max_length: usize,
}

impl TextCodec {
    pub fn new(tokenizer: Tokenizer, eos: u32, max_length: usize) -> Self {
        TextCodec { tokenizer, eos, max_length }
    }

    pub fn encode(&self, text: &str) -> Result<(Vec<u32>, bool)> {
        let enc = self
            .tokenizer
            .encode(text, true)
            .map_err(|e| Error::Backend(format!("tokenizer: {e}")))?;
        let mut ids = enc.get_ids().to_vec();
        if ids.last() != Some(&self.eos) {
            ids.push(self.eos);
        }
        let truncated = ids.len() > self.max_length;
        if truncated {
            ids.truncate(self.max_length - 1);
            ids.push(self.eos);
        }
        Ok((ids, truncated))
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        self.tokenizer
            .decode(ids, true)
            .map_err(|e| Error::Backend(format!("tokenizer: {e}")))
    }

    pub fn vocab_size(&self) -> usize {
        self.tokenizer.get_vocab_size(true)
    }
}

/// Word-level tokenizer over the given texts: `<pad>`=0, `</s>`=1,
/// `<unk>`=2, then words by descending frequency (ties alphabetical), at
/// most `max_words`.
pub fn build_word_tokenizer<'a>(texts: impl IntoIterator<Item = &'a str>, max_words: usize) -> Result<Tokenizer> {
    let re = Regex::new(r"\w+|[^\w\s]+").expect("valid regex");
    let mut counts: HashMap<String, usize> = HashMap::new();
    for t in texts {
        for m in re.find_iter(&t.to_lowercase()) {
            *counts.entry(m.as_str().to_string()).or_default() += 1;
        }
    }
    let mut words: Vec<(String, usize)> = counts.into_iter().collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut vocab = BTreeMap::new();
    for (i, s) in ["<pad>", "</s>", "<unk>"].iter().enumerate() {
        vocab.insert(s.to_string(), i as u32);
    }
    for (w, _) in words.into_iter().take(max_words) {
        let id = vocab.len() as u32;
        vocab.entry(w).or_insert(id);
    }
    let special = |id: u32, content: &str| {
        serde_json::json!({"id": id, "content": content, "single_word": false, "lstrip": false,
                           "rstrip": false, "normalized": false, "special": true})
    };
    let spec = serde_json::json!({
        "version": "1.0",
        "truncation": null,
        "padding": null,
        "added_tokens": [special(0, "<pad>"), special(1, "</s>")],
        "normalizer": {"type": "Lowercase"},
        "pre_tokenizer": {"type": "Whitespace"},
        "post_processor": {
            "type": "TemplateProcessing",
            "single": [{"Sequence": {"id": "A", "type_id": 0}}, {"SpecialToken": {"id": "</s>", "type_id": 0}}],
            "pair": [{"Sequence": {"id": "A", "type_id": 0}}, {"Sequence": {"id": "B", "type_id": 1}}],
            "special_tokens": {"</s>": {"id": "</s>", "ids": [1], "tokens": ["</s>"]}}
        },
        "decoder": null,
        "model": {"type": "WordLevel", "vocab": vocab, "unk_token": "<unk>"}
    });
    spec.to_string()
        .parse::<Tokenizer>()
        .map_err(|e| Error::Backend(format!("building word tokenizer: {e}")))
}

const SCRATCH_VOCAB: usize = 4000;

/// T5 with its tokenizer and optimiser.
pub struct T5Backend {
    model: T5Model,
    codec: TextCodec,
    optimizer: AdamW,
    description: String,
}

impl T5Backend {
    /// Resolves `cfg.base_model_id`. `scratch:tiny` builds a small random
    /// model whose vocabulary comes from `corpus`.
    pub fn create<'a>(cfg: &EvolveConfig, init_seed: u64, corpus: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let lora = Some(LoraSpec {
            rank: cfg.lora_rank,
            alpha: cfg.lora_alpha,
            dropout: cfg.lora_dropout,
        });
        let (model, tokenizer, description) = if cfg.base_model_id == SCRATCH_TINY {
            let tokenizer = build_word_tokenizer(corpus, SCRATCH_VOCAB)?;
            let t5 = T5Config::tiny(tokenizer.get_vocab_size(true));
            let model = T5Model::random(t5, cfg.adapter, lora, init_seed)?;
            (model, tokenizer, SCRATCH_TINY.to_string())
        } else {
            let dir = resolve_model_dir(&cfg.base_model_id)?;
            let model = T5Model::load(&dir, cfg.adapter, lora, init_seed)?;
            let tokenizer = load_tokenizer(&dir)?;
            (model, tokenizer, format!("{} ({})", cfg.base_model_id, dir.display()))
        };
        let codec = TextCodec::new(tokenizer, model.cfg.eos_token_id, cfg.max_length);
        let backend = T5Backend {
            model,
            codec,
            optimizer: AdamW::new(cfg.learning_rate),
            description,
        };
        backend.report_parameters(cfg);
        Ok(backend)
    }

    fn report_parameters(&self, cfg: &EvolveConfig) {
        let (trainable, total) = self.model.parameter_counts();
        let pct = 100.0 * trainable as f64 / total as f64;
        log::info!("{}: trainable params {trainable} / {total} ({pct:.3}%)", self.description);
        if cfg.adapter == super::t5::Adapter::Lora {
            let small = self.model.cfg == T5Config::t5_small() || self.model.cfg.d_model == 512 && self.model.cfg.num_layers == 6;
            if small && trainable != 294_912 {
                log::warn!("trainable parameter count {trainable} differs from the 294,912 expected for t5-small with rank 8");
            }
            if pct >= 1.0 {
                log::warn!("adapter parameters are {pct:.2}% of the model, above the 1% budget");
            }
        }
    }

    pub fn model(&self) -> &T5Model {
        &self.model
    }
}

impl Seq2SeqBackend for T5Backend {
    fn describe(&self) -> String {
        self.description.clone()
    }

    fn encode(&self, text: &str) -> Result<(Vec<u32>, bool)> {
        self.codec.encode(text)
    }

    fn train_batch(&mut self, batch: &[(Vec<u32>, Vec<u32>)], dropout_seed: u64) -> Result<f64> {
        let (sources, targets): (Vec<Vec<u32>>, Vec<Vec<u32>>) = batch.iter().cloned().unzip();
        let mut dropout = Dropout::new(dropout_seed);
        let loss = self.model.loss(&sources, &targets, Some(&mut dropout))?;
        let value = loss.to_scalar::<f32>()? as f64;
        if !value.is_finite() {
            return Err(Error::Backend(format!("non-finite training loss {value}")));
        }
        let grads = loss.backward()?;
        let params = self.model.trainable_parameters();
        self.optimizer.step(&params, &grads)?;
        Ok(value)
    }

    fn generate(&self, sources: &[Vec<u32>], max_new_tokens: usize) -> Result<Vec<(String, bool)>> {
        self.model
            .generate(sources, max_new_tokens)?
            .into_iter()
            .map(|(ids, hit)| Ok((self.codec.decode(&ids)?, hit)))
            .collect()
    }

    fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut tensors: HashMap<String, Tensor> = self
            .model
            .trainable_state()
            .into_iter()
            .map(|(k, v)| (format!("param.{k}"), v))
            .collect();
        for (k, v) in self.optimizer.state() {
            tensors.insert(format!("optim.{k}"), v);
        }
        let tmp = path.with_extension("tmp");
        candle_core::safetensors::save(&tensors, &tmp)?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
    }

    fn load_checkpoint(&mut self, path: &Path, optimizer_steps: u64) -> Result<()> {
        let all = candle_core::safetensors::load(path, &Device::Cpu)?;
        let mut params = HashMap::new();
        let mut optim = HashMap::new();
        for (k, v) in all {
            if let Some(name) = k.strip_prefix("param.") {
                params.insert(name.to_string(), v);
            } else if let Some(name) = k.strip_prefix("optim.") {
                optim.insert(name.to_string(), v);
            }
        }
        self.model.load_trainable_state(&params)?;
        self.optimizer.load_state(optimizer_steps, &optim)
    }

    fn optimizer_steps(&self) -> u64 {
        self.optimizer.steps()
    }

    fn parameter_counts(&self) -> (usize, usize) {
        self.model.parameter_counts()
    }
}
