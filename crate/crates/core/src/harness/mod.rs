//! Repeated-seed few-shot experiments: sampling, fitting, scoring,
//! aggregation, diagnostics and plots.

mod plots;
mod results;
mod runtime;
mod separation;
mod stats;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{sample_few_shot, ClaimEvidencePair, DatasetName, FewShotSample, Label, SplitBundle};
use crate::error::{Error, IoContext, Result};
use crate::evolve::EvolveConfig;
use crate::features::{FeatureMatrix, Standardizer};
use crate::metrics::{Embedder, EmbeddingVector, MetricName, DEFAULT_SEED_ENCODER, DEFAULT_SEMSIM_ENCODER};
use crate::verify::{difference_vectors, fit_logistic, LogisticConfig, SeedDistance, SeedModel};

pub use plots::{plot_f1_curves, plot_separation};
pub use results::{aggregate, read_results, report, write_results, Aggregate, AGGREGATES_FILE, RESULTS_FILE};
pub use runtime::{RuntimeLog, RUNTIME_FILE};
pub use separation::{class_separation_report, ClassStats, SeparationReport, SeparationTest};
pub use stats::{accuracy, classwise_f1, macro_f1, mann_whitney, mean_std, MannWhitney};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "MAPLE")]
    Maple,
    #[serde(rename = "SEED")]
    Seed,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Maple => "MAPLE",
            Method::Seed => "SEED",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MAPLE" => Ok(Method::Maple),
            "SEED" => Ok(Method::Seed),
            _ => Err(Error::Config(format!("unknown method '{s}' (known: MAPLE, SEED)"))),
        }
    }
}

/// Inclusive range of sampling seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRange {
    pub first: u64,
    pub last: u64,
}

impl Default for SeedRange {
    fn default() -> Self {
        SeedRange { first: 123, last: 222 }
    }
}

impl SeedRange {
    pub fn iter(&self) -> impl Iterator<Item = u64> {
        self.first..=self.last
    }

    pub fn len(&self) -> usize {
        (self.last + 1).saturating_sub(self.first) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetName,
    pub methods: Vec<Method>,
    pub shots: Vec<usize>,
    pub seeds: SeedRange,
    pub metric: MetricName,
    /// Sentence encoder for the pair metric.
    pub encoder_id: String,
    /// Sentence encoder for the SEED baseline.
    pub seed_encoder_id: String,
    pub seed_distance: SeedDistance,
    /// Standardise feature columns before fitting.
    pub standardize: bool,
    pub logistic: LogisticConfig,
    pub evolve: EvolveConfig,
    /// Worker threads for experiment cells; 0 uses all cores.
    pub workers: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetName::SciFactOracle,
            methods: vec![Method::Maple, Method::Seed],
            shots: (1..=5).collect(),
            seeds: SeedRange::default(),
            metric: MetricName::SemSim,
            encoder_id: DEFAULT_SEMSIM_ENCODER.into(),
            seed_encoder_id: DEFAULT_SEED_ENCODER.into(),
            seed_distance: SeedDistance::Cosine,
            standardize: false,
            logistic: LogisticConfig::default(),
            evolve: EvolveConfig::default(),
            workers: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.shots.is_empty() || self.shots.contains(&0) {
            return Err(Error::Config("shots must be a non-empty list of positive counts".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("the seed range is empty".into()));
        }
        self.evolve.validate()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serialises")))
    }

    /// Hash of the settings a single cell's result depends on. Methods,
    /// shots, seeds and worker count are excluded so the matrix can grow.
    pub fn cell_hash(&self) -> String {
        let key = serde_json::json!({
            "dataset": self.dataset,
            "metric": self.metric,
            "encoder_id": self.encoder_id,
            "seed_encoder_id": self.seed_encoder_id,
            "seed_distance": self.seed_distance,
            "standardize": self.standardize,
            "logistic": self.logistic,
            "evolve": self.evolve.hash(),
        });
        hex::encode(Sha256::digest(key.to_string()))
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut methods = self.methods.clone();
        methods.sort();
        methods.dedup();
        let mut shots = self.shots.clone();
        shots.sort();
        shots.dedup();
        let mut out = Vec::new();
        for &method in &methods {
            for &n in &shots {
                for seed in self.seeds.iter() {
                    out.push(Cell { method, n, seed });
                }
            }
        }
        out
    }
}

/// One (method, shots, seed) experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub method: Method,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub method: Method,
    pub n: usize,
    pub seed: u64,
    pub macro_f1: f64,
    pub accuracy: f64,
    /// In label order.
    pub classwise_f1: [f64; 3],
    pub wall_time: Duration,
}

impl RunResult {
    pub fn cell(&self) -> Cell {
        Cell {
            method: self.method,
            n: self.n,
            seed: self.seed,
        }
    }

    pub fn score(cell: Cell, pred: &[Label], gold: &[Label], wall_time: Duration) -> Result<Self> {
        Ok(RunResult {
            method: cell.method,
            n: cell.n,
            seed: cell.seed,
            macro_f1: macro_f1(pred, gold)?,
            accuracy: accuracy(pred, gold)?,
            classwise_f1: classwise_f1(pred, gold)?,
            wall_time,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    /// Sorted by (method, n, seed).
    pub rows: Vec<RunResult>,
    pub aggregates: Vec<Aggregate>,
}

/// Predicts test labels for one cell from its few-shot sample.
pub trait CellClassifier: Sync {
    fn classify(&self, method: Method, sample: &FewShotSample, test: &[ClaimEvidencePair]) -> Result<Vec<Label>>;
}

/// Runs every pending cell and merges it with results already stored in
/// `output_dir`. Finished cells are appended to a partial file as they
/// complete, so an interrupted run resumes where it stopped.
pub fn run_matrix(
    cfg: &ExperimentConfig,
    bundle: &SplitBundle,
    classifier: &dyn CellClassifier,
    output_dir: Option<&Path>,
) -> Result<ResultTable> {
    cfg.validate()?;
    let cells = cfg.cells();
    let mut done: BTreeMap<Cell, RunResult> = BTreeMap::new();
    if let Some(dir) = output_dir {
        std::fs::create_dir_all(dir).with_path(dir)?;
        results::check_config_marker(dir, &cfg.cell_hash())?;
        for r in results::read_existing(dir)? {
            done.insert(r.cell(), r);
        }
    }
    let wanted: HashSet<Cell> = cells.iter().copied().collect();
    done.retain(|c, _| wanted.contains(c));
    let pending: Vec<Cell> = cells.into_iter().filter(|c| !done.contains_key(c)).collect();
    if !done.is_empty() {
        log::info!("{} cell(s) already complete, {} to run", done.len(), pending.len());
    }

    let gold: Vec<Label> = bundle
        .test_set
        .iter()
        .map(ClaimEvidencePair::require_label)
        .collect::<Result<_>>()?;
    let mut samples: HashMap<(usize, u64), FewShotSample> = HashMap::new();
    for c in &pending {
        if let std::collections::hash_map::Entry::Vacant(e) = samples.entry((c.n, c.seed)) {
            e.insert(sample_few_shot(bundle, c.n, c.seed)?);
        }
    }

    let writer = match output_dir {
        Some(dir) => Some(Mutex::new(results::PartialWriter::open(dir)?)),
        None => None,
    };
    let run_cell = |c: &Cell| -> Result<RunResult> {
        let t0 = Instant::now();
        let pred = classifier.classify(c.method, &samples[&(c.n, c.seed)], &bundle.test_set)?;
        let r = RunResult::score(*c, &pred, &gold, t0.elapsed())?;
        if let Some(w) = &writer {
            w.lock().expect("result writer").append(&r)?;
        }
        Ok(r)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let fresh: Vec<Result<RunResult>> = pool.install(|| pending.par_iter().map(run_cell).collect());
    for r in fresh {
        let r = r?;
        done.insert(r.cell(), r);
    }

    let rows: Vec<RunResult> = done.into_values().collect();
    let aggregates = aggregate(&rows)?;
    if let Some(dir) = output_dir {
        write_results(&dir.join(RESULTS_FILE), &rows)?;
        results::write_aggregates(dir, &aggregates)?;
        results::remove_partial(dir)?;
    }
    Ok(ResultTable { rows, aggregates })
}

/// The MAPLE classifier over precomputed features and the SEED baseline
/// over precomputed difference vectors.
pub struct PipelineClassifier<'a> {
    features: Option<FeatureMatrix>,
    seed_diffs: HashMap<String, EmbeddingVector>,
    seed_encoder: String,
    cfg: &'a ExperimentConfig,
}

impl<'a> PipelineClassifier<'a> {
    /// `features` is required for MAPLE, `seed_embedder` for SEED.
    pub fn new(
        cfg: &'a ExperimentConfig,
        bundle: &SplitBundle,
        features: Option<&FeatureMatrix>,
        seed_embedder: Option<&Embedder>,
    ) -> Result<Self> {
        let features = match (cfg.methods.contains(&Method::Maple), features) {
            (false, _) => None,
            (true, None) => {
                return Err(Error::MissingCache {
                    path: cfg.output_dir.join(crate::features::FEATURES_FILE),
                    hint: "maple transform".into(),
                })
            }
            (true, Some(f)) if cfg.standardize => Some(Standardizer::fit(f).apply(f)),
            (true, Some(f)) => Some(f.clone()),
        };
        let mut seed_diffs = HashMap::new();
        let mut seed_encoder = String::new();
        if cfg.methods.contains(&Method::Seed) {
            let embedder = seed_embedder
                .ok_or_else(|| Error::Config("the SEED baseline needs a sentence encoder".into()))?;
            seed_encoder = embedder.encoder_id().to_string();
            // Only test instances and instances some cell samples need vectors.
            let mut needed: Vec<ClaimEvidencePair> = bundle.test_set.clone();
            let mut seen: HashSet<String> = needed.iter().map(|p| p.id.clone()).collect();
            let mut shots = cfg.shots.clone();
            shots.sort();
            shots.dedup();
            for &n in &shots {
                for seed in cfg.seeds.iter() {
                    for p in sample_few_shot(bundle, n, seed)?.instances {
                        if seen.insert(p.id.clone()) {
                            needed.push(p);
                        }
                    }
                }
            }
            let diffs = difference_vectors(&needed, embedder)?;
            seed_diffs = needed.into_iter().map(|p| p.id).zip(diffs).collect();
        }
        Ok(PipelineClassifier {
            features,
            seed_diffs,
            seed_encoder,
            cfg,
        })
    }
}

impl CellClassifier for PipelineClassifier<'_> {
    fn classify(&self, method: Method, sample: &FewShotSample, test: &[ClaimEvidencePair]) -> Result<Vec<Label>> {
        let labels = sample.labels();
        match method {
            Method::Maple => {
                let features = self.features.as_ref().expect("features checked at construction");
                let train_ids: Vec<&str> = sample.instances.iter().map(|p| p.id.as_str()).collect();
                let test_ids: Vec<&str> = test.iter().map(|p| p.id.as_str()).collect();
                let logistic = LogisticConfig {
                    seed: sample.seed,
                    ..self.cfg.logistic.clone()
                };
                let model = fit_logistic(&features.rows_for(&train_ids)?, &labels, &logistic)?;
                model.predict(&features.rows_for(&test_ids)?)
            }
            Method::Seed => {
                let diff = |p: &ClaimEvidencePair| -> Result<&[f64]> {
                    self.seed_diffs
                        .get(&p.id)
                        .map(EmbeddingVector::values)
                        .ok_or_else(|| Error::Inconsistent(format!("no difference vector for '{}'", p.id)))
                };
                let rows = sample.instances.iter().map(diff).collect::<Result<Vec<_>>>()?;
                let model = SeedModel::from_differences(&rows, &labels, &self.seed_encoder, self.cfg.seed_distance)?;
                test.iter().map(|p| model.predict_difference(diff(p)?)).collect()
            }
        }
    }
}

/// Runs the configured experiment, writing results, aggregates and the
/// F1 plot into `cfg.output_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    bundle: &SplitBundle,
    features: Option<&FeatureMatrix>,
    seed_embedder: Option<&Embedder>,
) -> Result<ResultTable> {
    let classifier = PipelineClassifier::new(cfg, bundle, features, seed_embedder)?;
    let table = run_matrix(cfg, bundle, &classifier, Some(&cfg.output_dir))?;
    plot_f1_curves(&table.aggregates, &cfg.output_dir.join("f1_vs_shots.svg"), cfg.dataset.as_str())?;
    Ok(table)
}
