use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::t5::Adapter;
use crate::error::{Error, Result};

pub const DEFAULT_BASE_MODEL: &str = "t5-small";
/// Randomly initialised miniature model with a vocabulary built from the
/// pool; needs no downloaded files.
pub const SCRATCH_TINY: &str = "scratch:tiny";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeStrategy {
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub strategy: DecodeStrategy,
    /// Defaults to `max_length`.
    pub max_new_tokens: Option<usize>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            strategy: DecodeStrategy::Greedy,
            max_new_tokens: None,
        }
    }
}

/// Settings of the seq2seq fine-tuning stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveConfig {
    pub epochs: usize,
    pub include_epoch_zero: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_length: usize,
    pub adapter: Adapter,
    pub lora_dropout: f64,
    pub lora_alpha: f64,
    pub lora_rank: usize,
    pub prompt: String,
    pub base_model_id: String,
    pub decode: DecodeConfig,
    /// Seeds adapter initialisation, shuffling and dropout.
    pub seed: u64,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            epochs: 20,
            include_epoch_zero: true,
            learning_rate: 1e-4,
            batch_size: 16,
            max_length: 512,
            adapter: Adapter::Lora,
            lora_dropout: 0.1,
            lora_alpha: 32.0,
            lora_rank: 8,
            prompt: "Summarize:".into(),
            base_model_id: DEFAULT_BASE_MODEL.into(),
            decode: DecodeConfig::default(),
            seed: 42,
        }
    }
}

impl EvolveConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs < 1 {
            return fail("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.lora_dropout) {
            return fail("lora_dropout must be in [0, 1)");
        }
        if self.max_length < 2 {
            return fail("max_length must be at least 2");
        }
        if self.adapter == Adapter::Lora && self.lora_rank < 1 {
            return fail("lora_rank must be at least 1");
        }
        if let Some(n) = self.decode.max_new_tokens {
            if n < 1 || n > self.max_length {
                return fail("decode.max_new_tokens must be in 1..=max_length");
            }
        }
        Ok(())
    }

    pub fn num_checkpoints(&self) -> usize {
        self.epochs + usize::from(self.include_epoch_zero)
    }

    /// Epochs at which mutations are recorded, ascending.
    pub fn checkpoint_epochs(&self) -> Vec<usize> {
        let start = if self.include_epoch_zero { 0 } else { 1 };
        (start..=self.epochs).collect()
    }

    pub fn max_new_tokens(&self) -> usize {
        self.decode.max_new_tokens.unwrap_or(self.max_length)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(json))
    }
}
