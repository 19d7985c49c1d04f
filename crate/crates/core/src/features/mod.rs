//! Per-triple similarity scores and their assembly into one feature row per
//! instance.

mod store;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{Direction, EvolveConfig, TripleSet};
use crate::metrics::PairMetric;

pub use store::{FeatureSchema, FEATURES_FILE, SCHEMA_FILE};

/// Which pair of texts a score compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScoreKind {
    /// claim vs evidence
    #[serde(rename = "s_ce")]
    ClaimEvidence,
    /// claim vs mutation
    #[serde(rename = "s_cm")]
    ClaimMutation,
    /// evidence vs mutation
    #[serde(rename = "s_em")]
    EvidenceMutation,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 3] = [ScoreKind::ClaimEvidence, ScoreKind::ClaimMutation, ScoreKind::EvidenceMutation];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::ClaimEvidence => "s_ce",
            ScoreKind::ClaimMutation => "s_cm",
            ScoreKind::EvidenceMutation => "s_em",
        }
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown score kind '{s}'")))
    }
}

/// Scores of one triple.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleScores {
    pub instance_id: Arc<str>,
    pub direction: Direction,
    pub epoch: usize,
    pub s_ce: f64,
    pub s_cm: f64,
    pub s_em: f64,
}

impl TripleScores {
    pub fn get(&self, kind: ScoreKind) -> f64 {
        match kind {
            ScoreKind::ClaimEvidence => self.s_ce,
            ScoreKind::ClaimMutation => self.s_cm,
            ScoreKind::EvidenceMutation => self.s_em,
        }
    }
}

/// Feature column descriptor, written as `dir:epoch:kind`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Column {
    pub direction: Direction,
    pub epoch: usize,
    pub kind: ScoreKind,
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.direction.tag(), self.epoch, self.kind.as_str())
    }
}

impl FromStr for Column {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let [dir, epoch, kind] = parts[..] else {
            return Err(Error::Validation(format!("bad column descriptor '{s}'")));
        };
        Ok(Column {
            direction: dir.parse()?,
            epoch: epoch
                .parse()
                .map_err(|_| Error::Validation(format!("bad epoch in column '{s}'")))?,
            kind: kind.parse()?,
        })
    }
}

/// Columns in canonical order: direction, then epoch ascending, then kind.
pub fn columns_for(cfg: &EvolveConfig) -> Vec<Column> {
    let mut cols = Vec::with_capacity(2 * 3 * cfg.num_checkpoints());
    for direction in Direction::ALL {
        for epoch in cfg.checkpoint_epochs() {
            for kind in ScoreKind::ALL {
                cols.push(Column { direction, epoch, kind });
            }
        }
    }
    cols
}

/// Scores every triple. A pair the metric fails on is recorded as NaN; if
/// any failed, the count is returned as an error after all pairs ran.
///
/// Asymmetric metrics see the claim as reference for `s_ce` and `s_cm` and
/// the evidence as reference for `s_em`; the other text is the candidate.
pub fn score_triples(triples: &TripleSet, metric: &dyn PairMetric) -> Result<Vec<TripleScores>> {
    let pairs: Vec<(&str, &str)> = triples
        .triples
        .iter()
        .flat_map(|t| {
            [
                (&*t.claim, &*t.evidence),
                (&*t.claim, t.mutation.as_str()),
                (&*t.evidence, t.mutation.as_str()),
            ]
        })
        .collect();
    let results: Vec<Result<f64>> = if metric.embedder().is_some() {
        metric.score_batch(&pairs)
    } else {
        pairs.par_chunks(256).flat_map_iter(|c| metric.score_batch(c)).collect()
    };
    let mut failures = 0;
    let values: Vec<f64> = results
        .into_iter()
        .map(|r| match r {
            Ok(v) if v.is_finite() => v,
            Ok(v) => {
                failures += 1;
                log::warn!("{} returned non-finite score {v}", metric.name().as_str());
                f64::NAN
            }
            Err(e) => {
                if failures == 0 {
                    log::warn!("{} failed: {e}", metric.name().as_str());
                }
                failures += 1;
                f64::NAN
            }
        })
        .collect();
    if failures > 0 {
        return Err(Error::MetricFailures {
            metric: metric.name().as_str().to_string(),
            count: failures,
        });
    }
    Ok(triples
        .triples
        .iter()
        .zip(values.chunks_exact(3))
        .map(|(t, v)| TripleScores {
            instance_id: t.instance_id.clone(),
            direction: t.direction,
            epoch: t.epoch,
            s_ce: v[0],
            s_cm: v[1],
            s_em: v[2],
        })
        .collect())
}

/// Instances × features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    instance_ids: Vec<String>,
    columns: Vec<Column>,
    values: Vec<f64>,
    index: HashMap<String, usize>,
}

impl FeatureMatrix {
    pub fn new(instance_ids: Vec<String>, columns: Vec<Column>, values: Vec<f64>) -> Result<Self> {
        if values.len() != instance_ids.len() * columns.len() {
            return Err(Error::DimensionMismatch {
                expected: instance_ids.len() * columns.len(),
                got: values.len(),
            });
        }
        let mut index = HashMap::with_capacity(instance_ids.len());
        for (i, id) in instance_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate feature row '{id}'")));
            }
        }
        Ok(FeatureMatrix { instance_ids, columns, values, index })
    }

    pub fn instance_ids(&self) -> &[String] {
        &self.instance_ids
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_rows(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n_cols();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn row_by_id(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    /// Rows for the given ids, in order.
    pub fn rows_for<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<&[f64]>> {
        ids.iter()
            .map(|id| {
                self.row_by_id(id.as_ref())
                    .ok_or_else(|| Error::Inconsistent(format!("no feature row for instance '{}'", id.as_ref())))
            })
            .collect()
    }

    pub fn column_index(&self, col: &Column) -> Option<usize> {
        self.columns.iter().position(|c| c == col)
    }
}

/// Per-column mean and standard deviation, for metrics whose ranges differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(m: &FeatureMatrix) -> Self {
        let (n, k) = (m.n_rows().max(1) as f64, m.n_cols());
        let mut mean = vec![0.0; k];
        for i in 0..m.n_rows() {
            for (acc, v) in mean.iter_mut().zip(m.row(i)) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|x| *x /= n);
        let mut var = vec![0.0; k];
        for i in 0..m.n_rows() {
            for ((acc, v), mu) in var.iter_mut().zip(m.row(i)).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Standardizer { mean, std }
    }

    /// Centres and scales; constant columns are only centred.
    pub fn apply(&self, m: &FeatureMatrix) -> FeatureMatrix {
        let k = m.n_cols();
        let values = m
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let j = i % k;
                let s = if self.std[j] > 0.0 { self.std[j] } else { 1.0 };
                (v - self.mean[j]) / s
            })
            .collect();
        FeatureMatrix {
            values,
            ..m.clone()
        }
    }
}

/// Builds the feature matrix. Rows are sorted by instance id so the result
/// does not depend on the order of `scores`.
pub fn assemble(scores: &[TripleScores], cfg: &EvolveConfig) -> Result<FeatureMatrix> {
    let columns = columns_for(cfg);
    let per_row = columns.len();
    let slot: HashMap<(Direction, usize), usize> = Direction::ALL
        .into_iter()
        .flat_map(|d| cfg.checkpoint_epochs().into_iter().map(move |e| (d, e)))
        .enumerate()
        .map(|(i, key)| (key, i * 3))
        .collect();

    let mut ids: Vec<&str> = scores.iter().map(|s| &*s.instance_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let row_of: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();

    let mut values = vec![f64::NAN; ids.len() * per_row];
    let mut filled = vec![false; ids.len() * per_row / 3];
    for s in scores {
        let Some(&offset) = slot.get(&(s.direction, s.epoch)) else {
            return Err(Error::Inconsistent(format!(
                "score for {} at epoch {} is outside the configured checkpoints",
                s.instance_id, s.epoch
            )));
        };
        let base = row_of[&*s.instance_id] * per_row + offset;
        if std::mem::replace(&mut filled[base / 3], true) {
            return Err(Error::Inconsistent(format!(
                "duplicate score for ({}, {}, {})",
                s.instance_id, s.direction, s.epoch
            )));
        }
        values[base] = s.s_ce;
        values[base + 1] = s.s_cm;
        values[base + 2] = s.s_em;
    }

    let mut missing = Vec::new();
    for (r, id) in ids.iter().enumerate() {
        for c in (0..per_row).step_by(3) {
            if !filled[(r * per_row + c) / 3] {
                let col = columns[c];
                missing.push(format!("{id}/{}/{}", col.direction, col.epoch));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Incomplete(missing));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "non-finite score for instance '{}' column {}",
            ids[i / per_row],
            columns[i % per_row]
        )));
    }
    FeatureMatrix::new(ids.into_iter().map(String::from).collect(), columns, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ClaimEvidencePair;
    use crate::evolve::{assemble_triples, Mutation, Provenance};
    use crate::metrics::{Embedder, HashingEncoder, MetricName, SemSim};
    use proptest::prelude::*;

    fn cfg(epochs: usize, zero: bool) -> EvolveConfig {
        EvolveConfig {
            epochs,
            include_epoch_zero: zero,
            ..Default::default()
        }
    }

    fn triple_set(d: usize, cfg: &EvolveConfig, text: impl Fn(usize, Direction, usize) -> String) -> TripleSet {
        let pool: Vec<ClaimEvidencePair> = (0..d)
            .map(|i| ClaimEvidencePair::new(format!("i{i}"), format!("claim number {i}"), format!("evidence text {i}"), None).unwrap())
            .collect();
        let mut ms = Vec::new();
        for dir in Direction::ALL {
            for e in cfg.checkpoint_epochs() {
                for i in 0..d {
                    ms.push(Mutation { instance_id: format!("i{i}"), direction: dir, epoch: e, text: text(i, dir, e) });
                }
            }
        }
        let prov = Provenance {
            config: cfg.clone(),
            config_hash: cfg.hash(),
            model: "test".into(),
            pool_size: d,
            num_checkpoints: cfg.num_checkpoints(),
            trainable_parameters: 0,
            total_parameters: 0,
            direction_seeds: vec![],
        };
        assemble_triples(&pool, ms, prov).unwrap()
    }

    fn semsim() -> SemSim {
        SemSim::new(Arc::new(Embedder::new(Arc::new(HashingEncoder::new(64).unwrap()))))
    }

    #[test]
    fn default_config_gives_126_columns() {
        let cols = columns_for(&EvolveConfig::default());
        assert_eq!(cols.len(), 2 * 21 * 3);
        assert_eq!(cols[0].to_string(), "c2e:0:s_ce");
        assert_eq!(cols[2].to_string(), "c2e:0:s_em");
        assert_eq!(cols[63].to_string(), "e2c:0:s_ce");
        assert_eq!(cols[125].to_string(), "e2c:20:s_em");
        for c in &cols {
            assert_eq!(c.to_string().parse::<Column>().unwrap(), *c);
        }
    }

    #[test]
    fn minimal_matrix_is_one_by_six() {
        let c = cfg(1, false);
        let set = triple_set(1, &c, |_, _, _| "anything".into());
        let m = assemble(&score_triples(&set, &semsim()).unwrap(), &c).unwrap();
        assert_eq!((m.n_rows(), m.n_cols()), (1, 6));
    }

    #[test]
    fn twelve_triples_give_twelve_records() {
        let c = cfg(3, false);
        let set = triple_set(2, &c, |i, _, e| format!("gen {i} {e}"));
        assert_eq!(set.triples.len(), 12);
        let scores = score_triples(&set, &semsim()).unwrap();
        assert_eq!(scores.len(), 12);
        assert_eq!(scores.len() * 3, 36);
    }

    #[test]
    fn mutation_equal_to_evidence_scores_one() {
        let c = cfg(2, true);
        let set = triple_set(2, &c, |i, _, _| format!("evidence text {i}"));
        for s in score_triples(&set, &semsim()).unwrap() {
            assert!((s.s_em - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn claim_evidence_score_constant_across_epochs() {
        let c = cfg(3, true);
        let set = triple_set(2, &c, |i, d, e| format!("{i} {d} {e} words"));
        let scores = score_triples(&set, &semsim()).unwrap();
        let mut first: HashMap<(&str, Direction), f64> = HashMap::new();
        for s in &scores {
            let v = *first.entry((&*s.instance_id, s.direction)).or_insert(s.s_ce);
            assert_eq!(v, s.s_ce);
        }
    }

    #[test]
    fn missing_cell_is_reported() {
        let c = cfg(2, false);
        let set = triple_set(2, &c, |_, _, _| "x".into());
        let mut scores = score_triples(&set, &semsim()).unwrap();
        scores.retain(|s| !(&*s.instance_id == "i1" && s.direction == Direction::E2C && s.epoch == 2));
        match assemble(&scores, &c) {
            Err(Error::Incomplete(keys)) => assert_eq!(keys, vec!["i1/e2c/2".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    struct Flaky;

    impl PairMetric for Flaky {
        fn name(&self) -> MetricName {
            MetricName::Bleu
        }
        fn score(&self, _: &str, candidate: &str) -> Result<f64> {
            if candidate == "bad" {
                Err(Error::Backend("nope".into()))
            } else {
                Ok(0.5)
            }
        }
    }

    #[test]
    fn metric_failures_are_counted_not_dropped() {
        let c = cfg(1, true);
        let set = triple_set(3, &c, |i, _, e| if i == 0 && e == 1 { "bad".into() } else { "ok".into() });
        match score_triples(&set, &Flaky) {
            // Mutation "bad" is a candidate in s_cm and s_em, in both directions.
            Err(Error::MetricFailures { count, .. }) => assert_eq!(count, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn standardizer_centres_columns() {
        let m = FeatureMatrix::new(
            vec!["a".into(), "b".into()],
            columns_for(&cfg(1, false)),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 3.0, 2.0, 1.0, 0.0, 5.0, 6.0],
        )
        .unwrap();
        let z = Standardizer::fit(&m).apply(&m);
        assert_eq!(z.row(0), &[-1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(z.row(1), &[1.0, 0.0, -1.0, -1.0, 0.0, 0.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn permutation_does_not_change_matrix(d in 1usize..5, epochs in 1usize..4, zero: bool, seed: u64) {
            let c = cfg(epochs, zero);
            let set = triple_set(d, &c, |i, dir, e| format!("m {} {i} {dir} {e}", seed % 7));
            let scores = score_triples(&set, &semsim()).unwrap();
            let reference = assemble(&scores, &c).unwrap();
            prop_assert_eq!(reference.n_rows(), d);
            prop_assert_eq!(reference.n_cols(), 6 * c.num_checkpoints());
            prop_assert!(reference.values().iter().all(|v| (-1.0..=1.0).contains(v)));

            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = scores.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(assemble(&shuffled, &c).unwrap(), reference);
        }
    }
}
