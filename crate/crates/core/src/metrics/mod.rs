//! Pair metrics: sentence-embedding cosine similarity (SemSim) and the
//! classic NLG metrics used for ablations, behind one [`PairMetric`]
//! interface.
//!
//! Asymmetric metrics treat the first text as the reference and the second
//! as the candidate.

pub mod classic;
mod embedding;
pub mod external;
mod hashing;
mod transformer;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use embedding::{cosine, Embedder, EmbeddingVector, SentenceEncoder};
pub use external::ExternalMetric;
pub use hashing::HashingEncoder;
pub(crate) use transformer::{load_tokenizer, relative_bucket, WeightMap};
pub use transformer::TransformerEncoder;

use crate::error::{Error, Result};
use crate::hub::resolve_model_dir;

/// Encoder used for SemSim unless configured otherwise.
pub const DEFAULT_SEMSIM_ENCODER: &str = "sentence-transformers/all-mpnet-base-v2";
/// NLI-trained encoder used by the SEED baseline.
pub const DEFAULT_SEED_ENCODER: &str = "sentence-transformers/bert-base-nli-mean-tokens";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    #[serde(rename = "semsim")]
    SemSim,
    Bleu,
    RougeL,
    Meteor,
    #[serde(rename = "sacrebleu")]
    SacreBleu,
    Bleurt,
    #[serde(rename = "bartscore")]
    BartScore,
}

impl MetricName {
    pub const ALL: [MetricName; 7] = [
        MetricName::SemSim,
        MetricName::Bleu,
        MetricName::RougeL,
        MetricName::Meteor,
        MetricName::SacreBleu,
        MetricName::Bleurt,
        MetricName::BartScore,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::SemSim => "semsim",
            MetricName::Bleu => "bleu",
            MetricName::RougeL => "rouge_l",
            MetricName::Meteor => "meteor",
            MetricName::SacreBleu => "sacrebleu",
            MetricName::Bleurt => "bleurt",
            MetricName::BartScore => "bartscore",
        }
    }

    /// Whether scores are guaranteed to lie in [-1, 1].
    pub fn is_bounded(self) -> bool {
        !matches!(self, MetricName::Bleurt | MetricName::BartScore)
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        MetricName::ALL
            .into_iter()
            .find(|m| m.as_str() == lower)
            .ok_or_else(|| Error::UnknownMetric(s.to_string()))
    }
}

/// Checks every configured name against the registry before any work starts.
pub fn resolve_metric_names<S: AsRef<str>>(names: &[S]) -> Result<Vec<MetricName>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for n in names {
        let m: MetricName = n.as_ref().parse()?;
        if seen.insert(m) {
            out.push(m);
        }
    }
    Ok(out)
}

pub trait PairMetric: Send + Sync {
    fn name(&self) -> MetricName;

    fn score(&self, reference: &str, candidate: &str) -> Result<f64>;

    /// Scores many pairs; implementations may batch.
    fn score_batch(&self, pairs: &[(&str, &str)]) -> Vec<Result<f64>> {
        pairs.iter().map(|(r, c)| self.score(r, c)).collect()
    }

    /// Identifier of the sentence encoder, for embedding-based metrics.
    fn encoder_id(&self) -> Option<&str> {
        None
    }

    fn embedder(&self) -> Option<&Embedder> {
        None
    }
}

/// Loads a sentence encoder: `hash:<dim>` for the built-in hashing encoder,
/// otherwise a model identifier or directory.
pub fn load_encoder(id: &str) -> Result<Arc<dyn SentenceEncoder>> {
    if id.starts_with(hashing::HASHING_PREFIX) {
        return Ok(Arc::new(HashingEncoder::from_id(id)?));
    }
    let dir = resolve_model_dir(id)?;
    Ok(Arc::new(TransformerEncoder::load(&dir, id)?))
}

/// Cosine similarity of sentence embeddings.
pub struct SemSim {
    embedder: Arc<Embedder>,
}

impl SemSim {
    pub fn new(embedder: Arc<Embedder>) -> Self {
        SemSim { embedder }
    }

    pub fn from_encoder_id(id: &str) -> Result<Self> {
        Ok(SemSim::new(Arc::new(Embedder::new(load_encoder(id)?))))
    }
}

impl PairMetric for SemSim {
    fn name(&self) -> MetricName {
        MetricName::SemSim
    }

    fn score(&self, a: &str, b: &str) -> Result<f64> {
        self.embedder.semsim(a, b)
    }

    fn score_batch(&self, pairs: &[(&str, &str)]) -> Vec<Result<f64>> {
        let mut texts: Vec<&str> = pairs.iter().flat_map(|(a, b)| [*a, *b]).collect();
        texts.sort_unstable();
        texts.dedup();
        let vectors = match self.embedder.embed(&texts) {
            Ok(v) => v,
            Err(e) => {
                let msg = e.to_string();
                return pairs.iter().map(|_| Err(Error::Backend(msg.clone()))).collect();
            }
        };
        let lookup: HashMap<&str, &EmbeddingVector> =
            texts.iter().copied().zip(vectors.iter().map(Arc::as_ref)).collect();
        pairs
            .iter()
            .map(|(a, b)| cosine(lookup[a], lookup[b]))
            .collect()
    }

    fn encoder_id(&self) -> Option<&str> {
        Some(self.embedder.encoder_id())
    }

    fn embedder(&self) -> Option<&Embedder> {
        Some(&self.embedder)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassicKind {
    Bleu,
    RougeL,
    Meteor,
    SacreBleu,
}

/// Sentence-level score of `candidate` against a single `reference`.
pub fn classic_metric(kind: ClassicKind, candidate: &str, reference: &str) -> f64 {
    match kind {
        ClassicKind::Bleu => classic::bleu(candidate, reference),
        ClassicKind::RougeL => classic::rouge_l(candidate, reference),
        ClassicKind::Meteor => classic::meteor(candidate, reference),
        ClassicKind::SacreBleu => classic::sacrebleu(candidate, reference),
    }
}

pub struct Classic {
    kind: ClassicKind,
}

impl PairMetric for Classic {
    fn name(&self) -> MetricName {
        match self.kind {
            ClassicKind::Bleu => MetricName::Bleu,
            ClassicKind::RougeL => MetricName::RougeL,
            ClassicKind::Meteor => MetricName::Meteor,
            ClassicKind::SacreBleu => MetricName::SacreBleu,
        }
    }

    fn score(&self, reference: &str, candidate: &str) -> Result<f64> {
        Ok(classic_metric(self.kind, candidate, reference))
    }
}

/// What a metric needs to be constructed.
#[derive(Debug, Clone)]
pub struct MetricContext {
    pub encoder_id: String,
    pub batch_size: usize,
    /// Shell commands for the external adapters, keyed by metric.
    pub external: HashMap<MetricName, String>,
}

impl Default for MetricContext {
    fn default() -> Self {
        MetricContext {
            encoder_id: DEFAULT_SEMSIM_ENCODER.to_string(),
            batch_size: 32,
            external: HashMap::new(),
        }
    }
}

pub fn build_metric(name: MetricName, ctx: &MetricContext) -> Result<Box<dyn PairMetric>> {
    Ok(match name {
        MetricName::SemSim => {
            let embedder = Embedder::new(load_encoder(&ctx.encoder_id)?).with_batch_size(ctx.batch_size);
            Box::new(SemSim::new(Arc::new(embedder)))
        }
        MetricName::Bleu => Box::new(Classic { kind: ClassicKind::Bleu }),
        MetricName::RougeL => Box::new(Classic { kind: ClassicKind::RougeL }),
        MetricName::Meteor => Box::new(Classic { kind: ClassicKind::Meteor }),
        MetricName::SacreBleu => Box::new(Classic { kind: ClassicKind::SacreBleu }),
        MetricName::Bleurt | MetricName::BartScore => {
            Box::new(ExternalMetric::from_context(name, ctx)?)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn names_roundtrip() {
        for m in MetricName::ALL {
            assert_eq!(m.as_str().parse::<MetricName>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
        }
        assert!(matches!("rouge".parse::<MetricName>(), Err(Error::UnknownMetric(_))));
    }

    #[test]
    fn registry_is_closed() {
        assert_eq!(resolve_metric_names(&["semsim", "bleu", "semsim"]).unwrap().len(), 2);
        let err = resolve_metric_names(&["semsim", "cider"]).unwrap_err();
        assert!(err.to_string().contains("cider"));
    }

    #[test]
    fn classic_metrics_through_registry() {
        let ctx = MetricContext::default();
        let rouge = build_metric(MetricName::RougeL, &ctx).unwrap();
        assert!((rouge.score("the cat sat down", "the cat sat").unwrap() - 6.0 / 7.0).abs() < 1e-12);
        for m in [MetricName::Bleu, MetricName::Meteor, MetricName::SacreBleu] {
            let metric = build_metric(m, &ctx).unwrap();
            assert_eq!(metric.name(), m);
            assert!(metric.score("a b c d e", "a b c d e").unwrap() > 0.99);
        }
    }

    #[test]
    fn external_adapters_disabled_by_default() {
        let err = build_metric(MetricName::Bleurt, &MetricContext::default()).err().unwrap();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    fn hashing_semsim() -> SemSim {
        SemSim::from_encoder_id("hash:256").unwrap()
    }

    #[test]
    fn batch_scores_equal_single_scores() {
        let m = hashing_semsim();
        let pairs = [("a b", "b c"), ("x", "x"), ("a b", "zzz")];
        let batch = m.score_batch(&pairs);
        for ((a, b), s) in pairs.iter().zip(batch) {
            assert_eq!(s.unwrap(), m.score(a, b).unwrap());
        }
    }

    #[test]
    fn fixture_mpnet_semsim_properties() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mpnet_tiny");
        let m = SemSim::from_encoder_id(dir.to_str().unwrap()).unwrap();
        for t in ["the reef lies on the northern coast .", "", "unknown words here"] {
            assert!((m.score(t, t).unwrap() - 1.0).abs() < 1e-6);
        }
        let (a, b) = ("heart failure rates rose", "the town was founded on the river");
        assert_eq!(m.score(a, b).unwrap(), m.score(b, a).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn semsim_properties(a in "\\PC{0,40}", b in "\\PC{0,40}") {
            let m = hashing_semsim();
            let ab = m.score(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, m.score(&b, &a).unwrap());
            prop_assert!((m.score(&a, &a).unwrap() - 1.0).abs() < 1e-6);
        }
    }
}
