use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::{Seq2SeqBackend, T5Backend};
use super::store::{read_mutations, write_atomic, write_mutations, Provenance};
use super::{derive_seed, Direction, EvolveConfig, Mutation, Triple, TripleSet};
use crate::corpus::ClaimEvidencePair;
use crate::error::{Error, IoContext, Result};

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

pub const MUTATIONS_FILE: &str = "mutations.jsonl";
pub const PROVENANCE_FILE: &str = "provenance.json";

/// Progress after one checkpoint of one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub direction: Direction,
    pub epoch: usize,
    /// Mean training loss of the epoch; `None` for the untrained checkpoint.
    pub mean_loss: Option<f64>,
    pub optimizer_steps: u64,
    pub truncated_sources: usize,
    /// Generations that stopped at the token limit.
    pub hit_token_limit: usize,
    pub seconds: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    direction: Direction,
    completed_epoch: usize,
    optimizer_steps: u64,
    config_hash: String,
    pool_hash: String,
}

fn pool_hash(pool: &[ClaimEvidencePair]) -> String {
    let mut h = Sha256::new();
    for p in pool {
        for part in [&p.id, &p.claim, &p.evidence] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
    }
    hex::encode(h.finalize())
}

fn check_pool(pool: &[ClaimEvidencePair]) -> Result<()> {
    if pool.is_empty() {
        return Err(Error::Validation("the pool is empty".into()));
    }
    let mut seen = HashSet::new();
    for p in pool {
        p.validate()?;
        if !seen.insert(p.id.as_str()) {
            return Err(Error::Validation(format!("duplicate instance id '{}'", p.id)));
        }
    }
    Ok(())
}

fn direction_index(d: Direction) -> u64 {
    d as u64
}

struct Workdir {
    dir: PathBuf,
}

impl Workdir {
    fn chunk(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("epoch_{epoch:03}.jsonl"))
    }

    fn meta(&self) -> PathBuf {
        self.dir.join("checkpoint.json")
    }

    fn weights(&self) -> PathBuf {
        self.dir.join("checkpoint.safetensors")
    }

    /// A stored chunk, if present and covering exactly the pool in order.
    fn valid_chunk(&self, epoch: usize, direction: Direction, pool: &[ClaimEvidencePair]) -> Result<Option<Vec<Mutation>>> {
        let path = self.chunk(epoch);
        if !path.exists() {
            return Ok(None);
        }
        let ms = read_mutations(&path)?;
        let ok = ms.len() == pool.len()
            && ms
                .iter()
                .zip(pool)
                .all(|(m, p)| m.instance_id == p.id && m.epoch == epoch && m.direction == direction);
        Ok(ok.then_some(ms))
    }
}

/// Fine-tunes `backend` in one direction and returns `d × num_checkpoints`
/// mutations, ordered by epoch then pool order.
///
/// With a `workdir`, every checkpoint's mutations and the trainable state
/// after each epoch are stored there, and a rerun continues after the last
/// completed epoch.
pub fn train_direction(
    pool: &[ClaimEvidencePair],
    direction: Direction,
    cfg: &EvolveConfig,
    backend: &mut dyn Seq2SeqBackend,
    workdir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochReport),
) -> Result<Vec<Mutation>> {
    cfg.validate()?;
    check_pool(pool)?;
    let config_hash = cfg.hash();
    let pool_hash = pool_hash(pool);
    let work = match workdir {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_path(dir)?;
            Some(Workdir { dir: dir.to_path_buf() })
        }
        None => None,
    };

    let mut sources = Vec::with_capacity(pool.len());
    let mut examples = Vec::with_capacity(pool.len());
    let mut truncated = 0;
    for p in pool {
        let (src, tgt) = direction.source_target(&cfg.prompt, &p.claim, &p.evidence);
        let (src_ids, cut) = backend.encode(&src)?;
        let (tgt_ids, _) = backend.encode(tgt)?;
        truncated += usize::from(cut);
        sources.push(src_ids.clone());
        examples.push((src_ids, tgt_ids));
    }
    if truncated > 0 {
        log::warn!("{direction}: {truncated} source(s) truncated to {} tokens", cfg.max_length);
    }

    let mut start_epoch = 1;
    let mut chunks: HashMap<usize, Vec<Mutation>> = HashMap::new();
    if let Some(w) = &work {
        if w.meta().exists() {
            let meta: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(w.meta()).with_path(&w.meta())?)?;
            if meta.config_hash != config_hash || meta.pool_hash != pool_hash || meta.direction != direction {
                return Err(Error::Inconsistent(format!(
                    "{} holds a checkpoint from a different configuration or pool; remove it to start over",
                    w.dir.display()
                )));
            }
            backend.load_checkpoint(&w.weights(), meta.optimizer_steps)?;
            start_epoch = meta.completed_epoch + 1;
            log::info!("{direction}: resuming after epoch {}", meta.completed_epoch);
            for epoch in cfg.checkpoint_epochs().into_iter().filter(|&e| e <= meta.completed_epoch) {
                match w.valid_chunk(epoch, direction, pool)? {
                    Some(ms) => {
                        chunks.insert(epoch, ms);
                    }
                    None if epoch == meta.completed_epoch => {}
                    None => {
                        return Err(Error::Inconsistent(format!(
                            "{} lacks mutations for epoch {epoch}",
                            w.dir.display()
                        )))
                    }
                }
            }
        }
    }

    let record = |epoch: usize,
                  backend: &mut dyn Seq2SeqBackend,
                  chunks: &mut HashMap<usize, Vec<Mutation>>|
     -> Result<usize> {
        let mut mutations = Vec::with_capacity(pool.len());
        let mut hit = 0;
        for (rows, ids) in sources.chunks(cfg.batch_size).zip(pool.chunks(cfg.batch_size)) {
            for ((text, limit), p) in backend.generate(rows, cfg.max_new_tokens())?.into_iter().zip(ids) {
                hit += usize::from(limit);
                mutations.push(Mutation {
                    instance_id: p.id.clone(),
                    direction,
                    epoch,
                    text,
                });
            }
        }
        if let Some(w) = &work {
            write_mutations(&w.chunk(epoch), &mutations)?;
        }
        chunks.insert(epoch, mutations);
        Ok(hit)
    };

    // The final trained epoch's chunk may be missing if a run stopped between
    // saving weights and writing mutations.
    if start_epoch > 1 && !chunks.contains_key(&(start_epoch - 1)) {
        record(start_epoch - 1, backend, &mut chunks)?;
    }

    if cfg.include_epoch_zero && !chunks.contains_key(&0) {
        let t0 = Instant::now();
        let reused = match &work {
            Some(w) if start_epoch == 1 => w.valid_chunk(0, direction, pool)?,
            _ => None,
        };
        let hit = match reused {
            Some(ms) => {
                chunks.insert(0, ms);
                0
            }
            None => record(0, backend, &mut chunks)?,
        };
        progress(&EpochReport {
            direction,
            epoch: 0,
            mean_loss: None,
            optimizer_steps: backend.optimizer_steps(),
            truncated_sources: truncated,
            hit_token_limit: hit,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }

    let dir_idx = direction_index(direction);
    for epoch in start_epoch..=cfg.epochs {
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_SHUFFLE, dir_idx, epoch as u64]));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(Vec<u32>, Vec<u32>)> = idx.iter().map(|&i| examples[i].clone()).collect();
            let seed = derive_seed(cfg.seed, &[STREAM_DROPOUT, dir_idx, epoch as u64, step as u64]);
            loss_sum += backend.train_batch(&batch, seed)?;
            batches += 1;
        }
        let hit = record(epoch, backend, &mut chunks)?;
        if let Some(w) = &work {
            backend.save_checkpoint(&w.weights())?;
            let meta = CheckpointMeta {
                direction,
                completed_epoch: epoch,
                optimizer_steps: backend.optimizer_steps(),
                config_hash: config_hash.clone(),
                pool_hash: pool_hash.clone(),
            };
            write_atomic(&w.meta(), serde_json::to_string_pretty(&meta)?.as_bytes())?;
        }
        let report = EpochReport {
            direction,
            epoch,
            mean_loss: Some(loss_sum / batches as f64),
            optimizer_steps: backend.optimizer_steps(),
            truncated_sources: truncated,
            hit_token_limit: hit,
            seconds: t0.elapsed().as_secs_f64(),
        };
        log::info!(
            "{direction} epoch {epoch}/{}: loss {:.4} ({:.1}s)",
            cfg.epochs,
            report.mean_loss.unwrap_or(f64::NAN),
            report.seconds
        );
        progress(&report);
    }

    let mut out = Vec::with_capacity(pool.len() * cfg.num_checkpoints());
    for epoch in cfg.checkpoint_epochs() {
        let ms = chunks
            .remove(&epoch)
            .ok_or_else(|| Error::Inconsistent(format!("{direction}: no mutations for epoch {epoch}")))?;
        out.extend(ms);
    }
    Ok(out)
}

/// Joins mutations back to their pairs. Checks that every (instance,
/// direction) has exactly one mutation per checkpoint epoch.
pub fn assemble_triples(pool: &[ClaimEvidencePair], mutations: Vec<Mutation>, provenance: Provenance) -> Result<TripleSet> {
    let cfg = &provenance.config;
    type Texts = (Arc<str>, Arc<str>, Arc<str>);
    let by_id: HashMap<&str, Texts> = pool
        .iter()
        .map(|p| (p.id.as_str(), (Arc::from(p.id.as_str()), Arc::from(p.claim.as_str()), Arc::from(p.evidence.as_str()))))
        .collect();
    let epochs: HashSet<usize> = cfg.checkpoint_epochs().into_iter().collect();
    let mut seen = HashSet::new();
    let mut triples = Vec::with_capacity(mutations.len());
    for m in mutations {
        let (id, claim, evidence) = by_id
            .get(m.instance_id.as_str())
            .ok_or_else(|| Error::Inconsistent(format!("mutation for unknown instance '{}'", m.instance_id)))?;
        if !epochs.contains(&m.epoch) {
            return Err(Error::Inconsistent(format!("mutation at unexpected epoch {}", m.epoch)));
        }
        if !seen.insert((id.clone(), m.direction, m.epoch)) {
            return Err(Error::Inconsistent(format!(
                "duplicate mutation for ({}, {}, {})",
                m.instance_id, m.direction, m.epoch
            )));
        }
        triples.push(Triple {
            instance_id: id.clone(),
            direction: m.direction,
            epoch: m.epoch,
            claim: claim.clone(),
            evidence: evidence.clone(),
            mutation: m.text,
        });
    }
    let expected = 2 * pool.len() * cfg.num_checkpoints();
    if triples.len() != expected {
        return Err(Error::Inconsistent(format!(
            "{} triples, expected 2 x {} x {} = {expected}",
            triples.len(),
            pool.len(),
            cfg.num_checkpoints()
        )));
    }
    Ok(TripleSet { triples, provenance })
}

/// Trains both directions and assembles the triple set. With `out_dir`,
/// per-direction state lives under `out_dir/work/<dir>` and the final store
/// is `mutations.jsonl` plus `provenance.json`.
pub fn run_evolution(
    pool: &[ClaimEvidencePair],
    cfg: &EvolveConfig,
    out_dir: Option<&Path>,
    make_backend: &mut dyn FnMut(Direction, u64) -> Result<Box<dyn Seq2SeqBackend>>,
    progress: &mut dyn FnMut(&EpochReport),
) -> Result<TripleSet> {
    cfg.validate()?;
    check_pool(pool)?;
    let mut all = Vec::with_capacity(2 * pool.len() * cfg.num_checkpoints());
    let mut model = String::new();
    let mut counts = (0, 0);
    let mut direction_seeds = Vec::new();
    for direction in Direction::ALL {
        let seed = derive_seed(cfg.seed, &[STREAM_INIT, direction_index(direction)]);
        direction_seeds.push((direction.tag().to_string(), seed));
        let mut backend = make_backend(direction, seed)?;
        model = backend.describe();
        counts = backend.parameter_counts();
        let work = out_dir.map(|d| d.join("work").join(direction.tag()));
        all.extend(train_direction(pool, direction, cfg, backend.as_mut(), work.as_deref(), progress)?);
    }
    let provenance = Provenance {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        model,
        pool_size: pool.len(),
        num_checkpoints: cfg.num_checkpoints(),
        trainable_parameters: counts.0,
        total_parameters: counts.1,
        direction_seeds,
    };
    if let Some(dir) = out_dir {
        write_mutations(&dir.join(MUTATIONS_FILE), &all)?;
        provenance.save(&dir.join(PROVENANCE_FILE))?;
    }
    assemble_triples(pool, all, provenance)
}

/// [`run_evolution`] with the T5 backend named by `cfg.base_model_id`.
pub fn run_evolution_t5(
    pool: &[ClaimEvidencePair],
    cfg: &EvolveConfig,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochReport),
) -> Result<TripleSet> {
    let mut corpus: Vec<&str> = vec![cfg.prompt.as_str()];
    for p in pool {
        corpus.push(&p.claim);
        corpus.push(&p.evidence);
    }
    let mut make = |_: Direction, seed: u64| -> Result<Box<dyn Seq2SeqBackend>> {
        Ok(Box::new(T5Backend::create(cfg, seed, corpus.iter().copied())?))
    };
    run_evolution(pool, cfg, out_dir, &mut make, progress)
}

/// Reads a finished mutation store back into a triple set.
pub fn load_triple_set(pool: &[ClaimEvidencePair], dir: &Path) -> Result<TripleSet> {
    let mpath = dir.join(MUTATIONS_FILE);
    if !mpath.exists() {
        return Err(Error::MissingCache {
            path: mpath,
            hint: "maple evolve".into(),
        });
    }
    let provenance = Provenance::load(&dir.join(PROVENANCE_FILE))?;
    assemble_triples(pool, read_mutations(&mpath)?, provenance)
}
