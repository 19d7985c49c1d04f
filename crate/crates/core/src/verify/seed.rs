use serde::{Deserialize, Serialize};

use super::argmax;
use crate::corpus::{ClaimEvidencePair, Label};
use crate::error::{Error, Result};
use crate::metrics::{cosine, Embedder, EmbeddingVector};

/// How a query difference vector is compared to the class vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedDistance {
    #[default]
    Cosine,
    Euclidean,
}

/// Nearest-class-vector baseline over claim − evidence embedding differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedModel {
    /// Mean difference vector per label, in label order.
    pub class_vectors: Vec<(Label, Vec<f64>)>,
    pub encoder_id: String,
    pub distance: SeedDistance,
}

/// `embed(claim) − embed(evidence)` for each pair.
pub fn difference_vectors(pairs: &[ClaimEvidencePair], embedder: &Embedder) -> Result<Vec<EmbeddingVector>> {
    let texts: Vec<&str> = pairs.iter().flat_map(|p| [p.claim.as_str(), p.evidence.as_str()]).collect();
    let vectors = embedder.embed(&texts)?;
    vectors
        .chunks_exact(2)
        .map(|cv| cv[0].sub(&cv[1]))
        .collect()
}

impl SeedModel {
    /// Class vectors as the mean of each class's difference vectors.
    pub fn from_differences(diffs: &[&[f64]], labels: &[Label], encoder_id: &str, distance: SeedDistance) -> Result<Self> {
        if diffs.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: diffs.len(), got: labels.len() });
        }
        let dim = diffs.first().map_or(0, |d| d.len());
        let mut class_vectors = Vec::with_capacity(3);
        for class in Label::ALL {
            let members: Vec<&[f64]> = diffs
                .iter()
                .zip(labels)
                .filter(|(_, l)| **l == class)
                .map(|(d, _)| *d)
                .collect();
            if members.is_empty() {
                return Err(Error::InsufficientClass {
                    class: class.to_string(),
                    available: 0,
                    required: 1,
                });
            }
            let mut mean = vec![0.0; dim];
            for m in &members {
                if m.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: m.len() });
                }
                mean.iter_mut().zip(m.iter()).for_each(|(a, v)| *a += v);
            }
            let n = members.len() as f64;
            mean.iter_mut().for_each(|a| *a /= n);
            class_vectors.push((class, mean));
        }
        Ok(SeedModel {
            class_vectors,
            encoder_id: encoder_id.to_string(),
            distance,
        })
    }

    /// Predicted label for a difference vector. A zero vector yields the
    /// first class.
    pub fn predict_difference(&self, diff: &[f64]) -> Result<Label> {
        if diff.iter().all(|v| *v == 0.0) {
            log::warn!("zero difference vector; predicting {}", self.class_vectors[0].0);
            return Ok(self.class_vectors[0].0);
        }
        let q = EmbeddingVector::new(diff.to_vec())?;
        let scores = self
            .class_vectors
            .iter()
            .map(|(_, v)| match self.distance {
                SeedDistance::Cosine => cosine(&q, &EmbeddingVector::new(v.clone())?),
                SeedDistance::Euclidean => {
                    if v.len() != diff.len() {
                        return Err(Error::DimensionMismatch { expected: v.len(), got: diff.len() });
                    }
                    Ok(-diff.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(self.class_vectors[argmax(&scores)].0)
    }
}

/// Fits the baseline by embedding the sample's claims and evidence.
pub fn fit_seed(sample: &[ClaimEvidencePair], embedder: &Embedder, distance: SeedDistance) -> Result<SeedModel> {
    let labels = sample.iter().map(ClaimEvidencePair::require_label).collect::<Result<Vec<_>>>()?;
    let diffs = difference_vectors(sample, embedder)?;
    let rows: Vec<&[f64]> = diffs.iter().map(EmbeddingVector::values).collect();
    SeedModel::from_differences(&rows, &labels, embedder.encoder_id(), distance)
}

pub fn predict_seed(model: &SeedModel, pair: &ClaimEvidencePair, embedder: &Embedder) -> Result<Label> {
    if embedder.encoder_id() != model.encoder_id {
        return Err(Error::Config(format!(
            "model was fitted with encoder '{}', got '{}'",
            model.encoder_id,
            embedder.encoder_id()
        )));
    }
    let diff = difference_vectors(std::slice::from_ref(pair), embedder)?.remove(0);
    model.predict_difference(diff.values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_d() -> SeedModel {
        // S diffs {(1,0),(1,0.2)}, R = (-1,0), N = (0,-1).
        let diffs: [&[f64]; 4] = [&[1.0, 0.0], &[1.0, 0.2], &[-1.0, 0.0], &[0.0, -1.0]];
        let labels = [Label::Supports, Label::Supports, Label::Refutes, Label::NotEnoughInfo];
        SeedModel::from_differences(&diffs, &labels, "stub", SeedDistance::Cosine).unwrap()
    }

    #[test]
    fn class_vector_is_the_mean() {
        let m = two_d();
        assert_eq!(m.class_vectors[0].1, vec![1.0, 0.1]);
        assert_eq!(m.class_vectors[1].1, vec![-1.0, 0.0]);
    }

    #[test]
    fn hand_computed_query() {
        // cos((0.9,0.05),(1,0.1)) ≈ 0.998, cos with (-1,0) < 0.
        assert_eq!(two_d().predict_difference(&[0.9, 0.05]).unwrap(), Label::Supports);
    }

    #[test]
    fn class_vector_query_returns_its_class() {
        let m = two_d();
        for (label, v) in m.class_vectors.clone() {
            assert_eq!(m.predict_difference(&v).unwrap(), label);
        }
    }

    #[test]
    fn zero_difference_falls_back_to_first_class() {
        assert_eq!(two_d().predict_difference(&[0.0, 0.0]).unwrap(), Label::Supports);
    }

    #[test]
    fn euclidean_flag_changes_the_rule() {
        let diffs: [&[f64]; 3] = [&[10.0, 0.0], &[0.0, 1.0], &[-1.0, -1.0]];
        let m = SeedModel::from_differences(&diffs, &Label::ALL, "stub", SeedDistance::Euclidean).unwrap();
        // Direction matches S, distance favours R.
        assert_eq!(m.predict_difference(&[0.5, 0.0]).unwrap(), Label::Refutes);
        let c = SeedModel { distance: SeedDistance::Cosine, ..m };
        assert_eq!(c.predict_difference(&[0.5, 0.0]).unwrap(), Label::Supports);
    }

    #[test]
    fn missing_class_is_an_error() {
        let diffs: [&[f64]; 2] = [&[1.0], &[2.0]];
        assert!(SeedModel::from_differences(&diffs, &[Label::Supports, Label::Refutes], "s", SeedDistance::Cosine).is_err());
    }

    proptest! {
        #[test]
        fn positive_rescaling_keeps_predictions(
            vs in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 3),
            q in proptest::collection::vec(-1.0f64..1.0, 4),
            alpha in 0.01f64..100.0,
            which in 0usize..3,
        ) {
            let rows: Vec<&[f64]> = vs.iter().map(Vec::as_slice).collect();
            prop_assume!(vs.iter().all(|v| v.iter().any(|x| x.abs() > 1e-3)));
            prop_assume!(q.iter().any(|x| x.abs() > 1e-3));
            let m = SeedModel::from_differences(&rows, &Label::ALL, "s", SeedDistance::Cosine).unwrap();
            let base = m.predict_difference(&q).unwrap();
            let scaled_q: Vec<f64> = q.iter().map(|x| x * alpha).collect();
            prop_assert_eq!(m.predict_difference(&scaled_q).unwrap(), base);
            let mut m2 = m.clone();
            m2.class_vectors[which].1.iter_mut().for_each(|x| *x *= alpha);
            prop_assert_eq!(m2.predict_difference(&q).unwrap(), base);
        }
    }
}
