use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Instant;

use maple::corpus::{
    build_splits, label_histogram, load_raw_records, resolve_evidence, retrieve_evidence, subsample, synthetic,
    write_pairs, Bm25Params, ClaimQuery, DatasetConfig, DatasetName, Document, SplitBundle,
};
use maple::error::{Error, Result};
use maple::evolve::{load_triple_set, run_evolution_t5, EpochReport};
use maple::features::{assemble, score_triples, FeatureMatrix};
use maple::harness::{class_separation_report, report, run_experiment, Aggregate, Method, RuntimeLog};
use maple::metrics::{build_metric, load_encoder, Embedder, MetricContext, MetricName};
use maple::verify::SeedDistance;
use serde::Deserialize;

use crate::config::Resolved;
use crate::{Cli, Command, DistanceArg, EvolveArgs, PrepareArgs, ReportArgs, RunArgs, SynthArgs, TransformArgs};

pub fn dispatch(cli: Cli) -> Result<()> {
    if let Command::Synth(args) = &cli.command {
        return synth(args);
    }
    let mut r = Resolved::load(cli.config.as_deref())?;
    if let Some(dir) = &cli.output_dir {
        r.experiment.output_dir = dir.clone();
    }
    if let Some(name) = &cli.dataset {
        r.experiment.dataset = name.parse::<DatasetName>().map_err(|e| Error::Config(e.to_string()))?;
    }
    let stage = match &cli.command {
        Command::Prepare(a) => {
            apply_prepare(&mut r, a);
            "prepare"
        }
        Command::Evolve(a) => {
            apply_evolve(&mut r, a);
            "evolve"
        }
        Command::Transform(a) => {
            apply_transform(&mut r, a)?;
            "transform"
        }
        Command::Run(a) => {
            apply_run(&mut r, a)?;
            "run"
        }
        Command::Report(_) => "report",
        Command::Synth(_) => unreachable!("handled above"),
    };
    r.validate()?;
    println!("config hash {}", r.hash());
    r.echo(stage)?;

    let started = Instant::now();
    match &cli.command {
        Command::Prepare(_) => prepare(&r)?,
        Command::Evolve(_) => evolve(&r)?,
        Command::Transform(_) => transform(&r)?,
        Command::Run(_) => run(&r)?,
        Command::Report(a) => return report_cmd(&r, a),
        Command::Synth(_) => unreachable!("handled above"),
    }
    RuntimeLog::update(&r.experiment.output_dir, stage, started.elapsed().as_secs_f64())
}

fn apply_prepare(r: &mut Resolved, a: &PrepareArgs) {
    let d = &mut r.data;
    if a.input.is_some() {
        d.input = a.input.clone();
    }
    if a.abstracts.is_some() {
        d.abstracts = a.abstracts.clone();
    }
    if a.subsample.is_some() {
        d.subsample = a.subsample;
    }
    d.retrieve_k = a.retrieve_k.unwrap_or(d.retrieve_k);
    d.split_seed = a.split_seed.unwrap_or(d.split_seed);
    d.test_per_class = a.test_per_class.unwrap_or(d.test_per_class);
}

fn apply_evolve(r: &mut Resolved, a: &EvolveArgs) {
    let e = &mut r.experiment.evolve;
    e.epochs = a.epochs.unwrap_or(e.epochs);
    if a.no_epoch_zero {
        e.include_epoch_zero = false;
    }
    if let Some(m) = &a.base_model {
        e.base_model_id = m.clone();
    }
    if let Some(p) = &a.prompt {
        e.prompt = p.clone();
    }
    e.learning_rate = a.learning_rate.unwrap_or(e.learning_rate);
    e.batch_size = a.batch_size.unwrap_or(e.batch_size);
    e.max_length = a.max_length.unwrap_or(e.max_length);
    e.lora_rank = a.lora_rank.unwrap_or(e.lora_rank);
    e.seed = a.seed.unwrap_or(e.seed);
}

fn apply_metric(r: &mut Resolved, metric: &Option<String>, encoder: &Option<String>) -> Result<()> {
    if let Some(m) = metric {
        r.experiment.metric = m.parse::<MetricName>()?;
    }
    if let Some(e) = encoder {
        r.experiment.encoder_id = e.clone();
    }
    Ok(())
}

fn apply_transform(r: &mut Resolved, a: &TransformArgs) -> Result<()> {
    apply_metric(r, &a.metric, &a.encoder)
}

fn apply_run(r: &mut Resolved, a: &RunArgs) -> Result<()> {
    apply_metric(r, &a.metric, &a.encoder)?;
    let x = &mut r.experiment;
    if let Some(methods) = &a.methods {
        x.methods = methods
            .iter()
            .map(|m| m.parse::<Method>())
            .collect::<Result<_>>()?;
    }
    if let Some(shots) = &a.shots {
        x.shots = shots.clone();
    }
    if let Some(first) = a.first_seed {
        let len = x.seeds.len() as u64;
        x.seeds.first = first;
        x.seeds.last = first + len.max(1) - 1;
    }
    if let Some(n) = a.num_seeds {
        if n == 0 {
            return Err(Error::Config("--num-seeds must be at least 1".into()));
        }
        x.seeds.last = x.seeds.first + n - 1;
    }
    x.workers = a.workers.unwrap_or(x.workers);
    if a.standardize {
        x.standardize = true;
    }
    if let Some(e) = &a.seed_encoder {
        x.seed_encoder_id = e.clone();
    }
    if let Some(d) = a.seed_distance {
        x.seed_distance = match d {
            DistanceArg::Cosine => SeedDistance::Cosine,
            DistanceArg::Euclidean => SeedDistance::Euclidean,
        };
    }
    Ok(())
}

#[derive(Deserialize)]
struct AbstractLine {
    id: String,
    text: String,
}

fn load_abstracts(path: &Path) -> Result<Vec<Document>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let a: AbstractLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(Document { id: a.id, text: a.text });
    }
    Ok(docs)
}

fn load_bundle(r: &Resolved) -> Result<SplitBundle> {
    let bundle = SplitBundle::load(&r.data_dir())?;
    if bundle.config.name != r.experiment.dataset {
        return Err(Error::Inconsistent(format!(
            "{} holds a {} split but the config names {}",
            r.data_dir().display(),
            bundle.config.name,
            r.experiment.dataset
        )));
    }
    Ok(bundle)
}

fn prepare(r: &Resolved) -> Result<()> {
    let d = &r.data;
    let input = d
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input file: pass --input or set data.input".into()))?;
    let records = load_raw_records(input)?;
    let pairs = if r.experiment.dataset == DatasetName::SciFactRetrieved {
        let path = d.abstracts.as_ref().ok_or_else(|| {
            Error::Config("retrieved evidence needs an abstract corpus: pass --abstracts".into())
        })?;
        let queries: Vec<ClaimQuery> = records
            .into_iter()
            .map(|rec| ClaimQuery {
                id: rec.id,
                claim: rec.claim,
                label: rec.label,
            })
            .collect();
        retrieve_evidence(&queries, &load_abstracts(path)?, d.retrieve_k, Bm25Params::default())?
    } else {
        resolve_evidence(records, d.split_seed)?
    };
    let pairs = match d.subsample {
        Some(n) => subsample(&pairs, n, d.split_seed),
        None => pairs,
    };
    let cfg = DatasetConfig {
        name: r.experiment.dataset,
        test_per_class: d.test_per_class,
        split_seed: d.split_seed,
    };
    let bundle = build_splits(&pairs, &cfg)?;
    bundle.save(&r.data_dir())?;
    let h = label_histogram(&pairs);
    println!(
        "{}: {} pairs (SUPPORTS {}, REFUTES {}, NOT_ENOUGH_INFO {}); train pool {}, test {}",
        cfg.name,
        pairs.len(),
        h[0],
        h[1],
        h[2],
        bundle.train_pool.len(),
        bundle.test_set.len()
    );
    println!("wrote {}", r.data_dir().display());
    Ok(())
}

fn evolve(r: &Resolved) -> Result<()> {
    let bundle = load_bundle(r)?;
    let pool = bundle.unlabeled_instances();
    let mut progress = |rep: &EpochReport| {
        let loss = rep.mean_loss.map_or_else(|| "-".to_string(), |l| format!("{l:.4}"));
        log::info!(
            "{} epoch {}: loss {loss}, {} steps, {} truncated, {} at token limit, {:.1}s",
            rep.direction.tag(),
            rep.epoch,
            rep.optimizer_steps,
            rep.truncated_sources,
            rep.hit_token_limit,
            rep.seconds
        );
    };
    let set = run_evolution_t5(&pool, &r.experiment.evolve, Some(&r.evolve_dir()), &mut progress)?;
    println!(
        "{} triples from {} instances over {} checkpoints",
        set.triples.len(),
        pool.len(),
        r.experiment.evolve.num_checkpoints()
    );
    println!("wrote {}", r.evolve_dir().display());
    Ok(())
}

fn cache_path(dir: &Path, prefix: &str, encoder_id: &str) -> PathBuf {
    let safe: String = encoder_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    dir.join(format!("{prefix}.{safe}.bin"))
}

fn transform(r: &Resolved) -> Result<()> {
    let x = &r.experiment;
    let bundle = load_bundle(r)?;
    let pool = bundle.unlabeled_instances();
    let set = load_triple_set(&pool, &r.evolve_dir())?;
    if set.provenance.config_hash != x.evolve.hash() {
        return Err(Error::Inconsistent(format!(
            "mutations in {} come from a different evolve config; rerun `maple evolve`",
            r.evolve_dir().display()
        )));
    }
    let ctx = MetricContext {
        encoder_id: x.encoder_id.clone(),
        external: r.external.clone(),
        ..MetricContext::default()
    };
    let metric = build_metric(x.metric, &ctx)?;
    let dir = r.features_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let cache = metric.embedder().map(|e| (e, cache_path(&dir, "embeddings", e.encoder_id())));
    if let Some((e, path)) = &cache {
        let n = e.load_cache(path)?;
        log::info!("{n} cached embeddings loaded");
    }
    let scores = score_triples(&set, metric.as_ref())?;
    if let Some((e, path)) = &cache {
        e.save_cache(path)?;
    }
    let m = assemble(&scores, &x.evolve)?;
    m.save(&dir, metric.name().as_str(), metric.encoder_id(), &x.evolve.hash())?;
    println!("{} x {} feature matrix ({})", m.n_rows(), m.n_cols(), metric.name());
    println!("wrote {}", dir.display());
    Ok(())
}

fn load_features(r: &Resolved) -> Result<FeatureMatrix> {
    let x = &r.experiment;
    let (m, schema) = FeatureMatrix::load(&r.features_dir())?;
    let stale = schema.evolve_config_hash != x.evolve.hash()
        || schema.metric != x.metric.as_str()
        || (x.metric == MetricName::SemSim && schema.encoder_id.as_deref() != Some(x.encoder_id.as_str()));
    if stale {
        return Err(Error::Inconsistent(format!(
            "features in {} were computed under different settings; rerun `maple transform`",
            r.features_dir().display()
        )));
    }
    Ok(m)
}

fn print_aggregates(aggs: &[Aggregate]) {
    println!("{:<6} {:>5} {:>6}  {:>17}  {:>17}", "method", "shots", "runs", "macro F1", "accuracy");
    for a in aggs {
        println!(
            "{:<6} {:>5} {:>6}  {:>8.4} ± {:<6.4}  {:>8.4} ± {:<6.4}",
            a.method.as_str(),
            a.n,
            a.count,
            a.macro_f1_mean,
            a.macro_f1_std,
            a.accuracy_mean,
            a.accuracy_std
        );
    }
}

fn run(r: &Resolved) -> Result<()> {
    let x = &r.experiment;
    let bundle = load_bundle(r)?;
    let features = if x.methods.contains(&Method::Maple) {
        Some(load_features(r)?)
    } else {
        None
    };
    let seed = if x.methods.contains(&Method::Seed) {
        let embedder = Embedder::new(load_encoder(&x.seed_encoder_id)?);
        let dir = x.output_dir.join("features");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let path = cache_path(&dir, "seed_embeddings", &x.seed_encoder_id);
        embedder.load_cache(&path)?;
        Some((embedder, path))
    } else {
        None
    };

    let results = r.results_dir();
    let run_cfg = maple::harness::ExperimentConfig {
        output_dir: results.clone(),
        ..x.clone()
    };
    let table = run_experiment(&run_cfg, &bundle, features.as_ref(), seed.as_ref().map(|(e, _)| e))?;
    if let Some((e, path)) = &seed {
        e.save_cache(path)?;
    }
    if let Some(m) = &features {
        let sep = class_separation_report(m, &bundle.test_set)?;
        sep.save(&results)?;
        for t in &sep.tests {
            if let Some(p) = t.p_value {
                log::info!(
                    "{} {} epoch {}: NOT_ENOUGH_INFO {:.4} vs {} {:.4}, p = {p:.3e}",
                    t.direction.tag(),
                    t.kind.as_str(),
                    t.epoch,
                    t.nei_mean.unwrap_or(f64::NAN),
                    t.other,
                    t.other_mean.unwrap_or(f64::NAN)
                );
            }
        }
    }
    print_aggregates(&table.aggregates);
    println!("wrote {}", results.display());
    Ok(())
}

fn report_cmd(r: &Resolved, a: &ReportArgs) -> Result<()> {
    let dir = a.dir.clone().unwrap_or_else(|| r.results_dir());
    let aggs = report(&dir, r.experiment.dataset.as_str())?;
    print_aggregates(&aggs);
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let pairs = synthetic::generate(a.per_class, a.seed);
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    write_pairs(&a.out, &pairs)?;
    println!("wrote {} pairs to {}", pairs.len(), a.out.display());
    Ok(())
}
