use std::collections::HashSet;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{label_histogram, ClaimEvidencePair, DatasetConfig, Label};
use crate::error::{Error, IoContext, Result};

/// Train pool (also the unlabeled pool once labels are masked) plus a
/// class-balanced held-out test set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBundle {
    pub config: DatasetConfig,
    pub train_pool: Vec<ClaimEvidencePair>,
    pub test_set: Vec<ClaimEvidencePair>,
}

impl SplitBundle {
    /// Every instance of the configuration with labels removed: the input
    /// of the seq2seq and transformation stages.
    pub fn unlabeled_instances(&self) -> Vec<ClaimEvidencePair> {
        self.train_pool
            .iter()
            .chain(&self.test_set)
            .map(ClaimEvidencePair::unlabeled)
            .collect()
    }

    /// Writes the manifest and both halves as pair files into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_path(dir)?;
        self.manifest().save(&dir.join(MANIFEST_FILE))?;
        super::write_pairs(&dir.join(TRAIN_FILE), &self.train_pool)?;
        super::write_pairs(&dir.join(TEST_FILE), &self.test_set)
    }

    /// Reads a split written by [`SplitBundle::save`], checking the pair
    /// files against the manifest.
    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        if !mpath.exists() {
            return Err(Error::MissingCache {
                path: mpath,
                hint: "maple prepare".into(),
            });
        }
        let manifest = SplitManifest::load(&mpath)?;
        let train_pool = super::load_pairs(&dir.join(TRAIN_FILE))?;
        let test_set = super::load_pairs(&dir.join(TEST_FILE))?;
        let ids = |v: &[ClaimEvidencePair]| v.iter().map(|p| p.id.clone()).collect::<Vec<_>>();
        if ids(&train_pool) != manifest.train_ids || ids(&test_set) != manifest.test_ids {
            return Err(Error::Inconsistent(format!(
                "pair files in {} do not match {MANIFEST_FILE}",
                dir.display()
            )));
        }
        let name = manifest
            .config
            .parse()
            .map_err(|_| Error::Validation(format!("unknown dataset '{}' in manifest", manifest.config)))?;
        Ok(SplitBundle {
            config: DatasetConfig {
                name,
                test_per_class: manifest.test_per_class,
                split_seed: manifest.split_seed,
            },
            train_pool,
            test_set,
        })
    }

    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            config: self.config.name.to_string(),
            split_seed: self.config.split_seed,
            test_per_class: self.config.test_per_class,
            train_ids: self.train_pool.iter().map(|p| p.id.clone()).collect(),
            test_ids: self.test_set.iter().map(|p| p.id.clone()).collect(),
        }
    }
}

pub const MANIFEST_FILE: &str = "split.json";
pub const TRAIN_FILE: &str = "train_pool.jsonl";
pub const TEST_FILE: &str = "test.jsonl";

/// Keeps `n` pairs, drawn round-robin over the classes so the label mix
/// stays as even as the data allows. Survivors keep their input order.
pub fn subsample(pairs: &[ClaimEvidencePair], n: usize, seed: u64) -> Vec<ClaimEvidencePair> {
    if n >= pairs.len() {
        return pairs.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queues: Vec<Vec<&str>> = Vec::new();
    for label in Label::ALL.map(Some).into_iter().chain([None]) {
        let mut ids: Vec<&str> = pairs.iter().filter(|p| p.label == label).map(|p| p.id.as_str()).collect();
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        ids.reverse();
        queues.push(ids);
    }
    let mut keep = HashSet::new();
    while keep.len() < n {
        for q in queues.iter_mut() {
            if keep.len() < n {
                if let Some(id) = q.pop() {
                    keep.insert(id);
                }
            }
        }
    }
    pairs.iter().filter(|p| keep.contains(p.id.as_str())).cloned().collect()
}

/// Ids of both halves of a split, enough to reproduce it exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub config: String,
    pub split_seed: u64,
    pub test_per_class: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SplitManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).with_path(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_path(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Reserves `test_per_class` instances of every class as the test set and
/// leaves the rest, in input order, as the train pool.
pub fn build_splits(pairs: &[ClaimEvidencePair], cfg: &DatasetConfig) -> Result<SplitBundle> {
    if cfg.test_per_class == 0 {
        return Err(Error::Config("test_per_class must be at least 1".into()));
    }
    if let Some(p) = pairs.iter().find(|p| p.label.is_none()) {
        return Err(Error::Validation(format!(
            "cannot split: pair '{}' is unlabeled",
            p.id
        )));
    }
    let counts = label_histogram(pairs);
    for label in Label::ALL {
        let available = counts[label.index()];
        if available <= cfg.test_per_class {
            return Err(Error::InsufficientClass {
                class: label.to_string(),
                available,
                required: cfg.test_per_class + 1,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.split_seed);
    let mut test_ids = HashSet::new();
    let mut test_set = Vec::with_capacity(3 * cfg.test_per_class);
    for label in Label::ALL {
        let mut members: Vec<&ClaimEvidencePair> =
            pairs.iter().filter(|p| p.label == Some(label)).collect();
        members.sort_by(|a, b| a.id.cmp(&b.id));
        members.shuffle(&mut rng);
        let mut chosen: Vec<&ClaimEvidencePair> =
            members.into_iter().take(cfg.test_per_class).collect();
        chosen.sort_by(|a, b| a.id.cmp(&b.id));
        for p in chosen {
            test_ids.insert(p.id.as_str());
            test_set.push(p.clone());
        }
    }
    let train_pool = pairs
        .iter()
        .filter(|p| !test_ids.contains(p.id.as_str()))
        .cloned()
        .collect();

    Ok(SplitBundle {
        config: cfg.clone(),
        train_pool,
        test_set,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSample {
    pub n: usize,
    pub seed: u64,
    pub instances: Vec<ClaimEvidencePair>,
}

impl FewShotSample {
    pub fn labels(&self) -> Vec<Label> {
        self.instances
            .iter()
            .map(|p| p.label.expect("few-shot instances are labeled"))
            .collect()
    }
}

/// Draws `n` instances of every class from the train pool without
/// replacement. The result depends only on the pool, `n` and `seed`, and is
/// ordered by class then id.
pub fn sample_few_shot(bundle: &SplitBundle, n: usize, seed: u64) -> Result<FewShotSample> {
    if n == 0 {
        return Err(Error::Config("n-shot must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(3 * n);
    for label in Label::ALL {
        let mut members: Vec<&ClaimEvidencePair> = bundle
            .train_pool
            .iter()
            .filter(|p| p.label == Some(label))
            .collect();
        if members.len() < n {
            return Err(Error::InsufficientClass {
                class: label.to_string(),
                available: members.len(),
                required: n,
            });
        }
        members.sort_by(|a, b| a.id.cmp(&b.id));
        let mut picked: Vec<&ClaimEvidencePair> = index::sample(&mut rng, members.len(), n)
            .into_iter()
            .map(|i| members[i])
            .collect();
        picked.sort_by(|a, b| a.id.cmp(&b.id));
        instances.extend(picked.into_iter().cloned());
    }
    Ok(FewShotSample { n, seed, instances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DatasetName;
    use proptest::prelude::*;

    fn pool(per_class: [usize; 3]) -> Vec<ClaimEvidencePair> {
        let mut out = Vec::new();
        for label in Label::ALL {
            for i in 0..per_class[label.index()] {
                out.push(
                    ClaimEvidencePair::new(
                        format!("{}-{i:04}", label.as_str()),
                        format!("claim {i}"),
                        format!("evidence {i}"),
                        Some(label),
                    )
                    .unwrap(),
                );
            }
        }
        out
    }

    fn cfg(test_per_class: usize) -> DatasetConfig {
        DatasetConfig {
            name: DatasetName::Fever,
            test_per_class,
            split_seed: 42,
        }
    }

    #[test]
    fn subsample_balances_classes() {
        let pairs = pool([30, 30, 5]);
        let s = subsample(&pairs, 15, 9);
        assert_eq!(label_histogram(&s), [5, 5, 5]);
        assert_eq!(subsample(&pairs, 15, 9), s);
        let s = subsample(&pairs, 25, 9);
        assert_eq!(label_histogram(&s), [10, 10, 5]);
        let order: Vec<usize> = s.iter().map(|p| pairs.iter().position(|q| q.id == p.id).unwrap()).collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn save_and_load_round_trip() {
        let pairs = pool([6, 6, 6]);
        let b = build_splits(&pairs, &DatasetConfig { test_per_class: 2, ..DatasetConfig::new(DatasetName::Fever) }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        b.save(dir.path()).unwrap();
        assert_eq!(SplitBundle::load(dir.path()).unwrap(), b);
        let first = std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        b.save(dir.path()).unwrap();
        assert_eq!(std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap(), first);
        let err = SplitBundle::load(&dir.path().join("nope")).unwrap_err();
        assert!(err.to_string().contains("maple prepare"));
    }

    #[test]
    fn fever_sized_split() {
        // 9351 pool pairs plus 150 reserved per class.
        let pairs = pool([3099 + 150, 3069 + 150, 3183 + 150]);
        let bundle = build_splits(&pairs, &cfg(150)).unwrap();
        assert_eq!(bundle.test_set.len(), 450);
        assert_eq!(bundle.train_pool.len(), 9351);
        assert_eq!(label_histogram(&bundle.test_set), [150, 150, 150]);
        assert_eq!(label_histogram(&bundle.train_pool), [3099, 3069, 3183]);
    }

    #[test]
    fn minimal_split_leaves_one_per_class() {
        let bundle = build_splits(&pool([151, 151, 151]), &cfg(150)).unwrap();
        assert_eq!(bundle.train_pool.len(), 3);
    }

    #[test]
    fn deficient_class_is_named() {
        let err = build_splits(&pool([200, 100, 200]), &cfg(150)).unwrap_err();
        assert!(err.to_string().contains("REFUTES"), "{err}");
    }

    #[test]
    fn unlabeled_input_rejected() {
        let mut pairs = pool([3, 3, 3]);
        pairs[0].label = None;
        assert!(build_splits(&pairs, &cfg(1)).is_err());
    }

    #[test]
    fn split_is_deterministic_to_the_byte() {
        let pairs = pool([40, 30, 50]);
        let a = serde_json::to_vec(&build_splits(&pairs, &cfg(10)).unwrap()).unwrap();
        let b = serde_json::to_vec(&build_splits(&pairs, &cfg(10)).unwrap()).unwrap();
        assert_eq!(a, b);
        let mut other = cfg(10);
        other.split_seed = 7;
        let c = serde_json::to_vec(&build_splits(&pairs, &other).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn one_shot_has_one_per_class() {
        let bundle = build_splits(&pool([20, 20, 20]), &cfg(5)).unwrap();
        let s = sample_few_shot(&bundle, 1, 123).unwrap();
        assert_eq!(s.instances.len(), 3);
        assert_eq!(s.labels(), Label::ALL.to_vec());
    }

    #[test]
    fn seeds_change_the_sample() {
        let bundle = build_splits(&pool([3099 + 150, 3069 + 150, 3183 + 150]), &cfg(150)).unwrap();
        let a = sample_few_shot(&bundle, 5, 123).unwrap();
        let b = sample_few_shot(&bundle, 5, 123).unwrap();
        let c = sample_few_shot(&bundle, 5, 124).unwrap();
        assert_eq!(a, b);
        let ids = |s: &FewShotSample| s.instances.iter().map(|p| p.id.clone()).collect::<HashSet<_>>();
        assert_ne!(ids(&a), ids(&c));
    }

    #[test]
    fn too_many_shots_is_an_error() {
        let bundle = build_splits(&pool([8, 4, 8]), &cfg(2)).unwrap();
        assert!(sample_few_shot(&bundle, 2, 1).is_ok());
        assert!(matches!(
            sample_few_shot(&bundle, 3, 1),
            Err(Error::InsufficientClass { .. })
        ));
    }

    proptest! {
        #[test]
        fn sampler_is_exact(n in 1usize..6, seed in any::<u64>(), extra in 0usize..20) {
            let bundle = build_splits(&pool([6 + extra, 6, 6 + extra / 2]), &cfg(1)).unwrap();
            let s = sample_few_shot(&bundle, n, seed).unwrap();
            prop_assert_eq!(s.instances.len(), 3 * n);
            prop_assert_eq!(label_histogram(&s.instances), [n, n, n]);
            let ids: HashSet<_> = s.instances.iter().map(|p| p.id.as_str()).collect();
            prop_assert_eq!(ids.len(), 3 * n);
            let test_ids: HashSet<_> = bundle.test_set.iter().map(|p| p.id.as_str()).collect();
            prop_assert!(ids.is_disjoint(&test_ids));
        }

        #[test]
        fn split_halves_are_disjoint(seed in any::<u64>(), k in 1usize..5) {
            let mut c = cfg(k);
            c.split_seed = seed;
            let bundle = build_splits(&pool([k + 3, k + 1, k + 7]), &c).unwrap();
            prop_assert_eq!(label_histogram(&bundle.test_set), [k, k, k]);
            let train: HashSet<_> = bundle.train_pool.iter().map(|p| p.id.as_str()).collect();
            prop_assert!(bundle.test_set.iter().all(|p| !train.contains(p.id.as_str())));
            prop_assert_eq!(train.len() + bundle.test_set.len(), 3 * k + 11);
        }
    }
}
