use std::sync::Arc;

use maple::corpus::{build_splits, synthetic, DatasetConfig, DatasetName};
use maple::evolve::{load_triple_set, run_evolution_t5, EvolveConfig, SCRATCH_TINY};
use maple::features::{assemble, score_triples, FeatureMatrix};
use maple::harness::{run_experiment, ExperimentConfig, Method, SeedRange, RESULTS_FILE};
use maple::metrics::{Embedder, HashingEncoder, SemSim};

#[test]
fn library_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = synthetic::generate(8, 21);
    let split = DatasetConfig {
        test_per_class: 3,
        ..DatasetConfig::new(DatasetName::Fever)
    };
    let bundle = build_splits(&pairs, &split).unwrap();
    let pool = bundle.unlabeled_instances();
    assert_eq!(pool.len(), 24);

    let evolve = EvolveConfig {
        epochs: 1,
        base_model_id: SCRATCH_TINY.into(),
        batch_size: 8,
        ..Default::default()
    };
    let evolve_dir = dir.path().join("evolve");
    let set = run_evolution_t5(&pool, &evolve, Some(&evolve_dir), &mut |_| {}).unwrap();
    assert_eq!(set.triples.len(), 2 * 24 * 2);
    let reloaded = load_triple_set(&pool, &evolve_dir).unwrap();
    assert_eq!(reloaded.triples.len(), set.triples.len());
    assert_eq!(reloaded.provenance.config_hash, evolve.hash());

    let embedder = Arc::new(Embedder::new(Arc::new(HashingEncoder::new(128).unwrap())));
    let metric = SemSim::new(embedder.clone());
    let features = assemble(&score_triples(&reloaded, &metric).unwrap(), &evolve).unwrap();
    assert_eq!((features.n_rows(), features.n_cols()), (24, 12));
    let fdir = dir.path().join("features");
    features.save(&fdir, "semsim", Some("hash:128"), &evolve.hash()).unwrap();
    let (features, schema) = FeatureMatrix::load(&fdir).unwrap();
    assert_eq!(schema.rows, 24);

    let cfg = ExperimentConfig {
        dataset: DatasetName::Fever,
        shots: vec![1, 2],
        seeds: SeedRange { first: 123, last: 125 },
        encoder_id: "hash:128".into(),
        seed_encoder_id: "hash:128".into(),
        evolve,
        workers: 2,
        output_dir: dir.path().join("results"),
        ..Default::default()
    };
    let table = run_experiment(&cfg, &bundle, Some(&features), Some(&embedder)).unwrap();
    assert_eq!(table.rows.len(), 2 * 2 * 3);
    assert_eq!(table.aggregates.len(), 4);
    assert!(table.rows.iter().all(|r| (0.0..=1.0).contains(&r.macro_f1)));
    assert!(table.aggregates.iter().any(|a| a.method == Method::Seed));

    let first = std::fs::read(cfg.output_dir.join(RESULTS_FILE)).unwrap();
    run_experiment(&cfg, &bundle, Some(&features), Some(&embedder)).unwrap();
    assert_eq!(std::fs::read(cfg.output_dir.join(RESULTS_FILE)).unwrap(), first);
    assert!(cfg.output_dir.join("f1_vs_shots.svg").exists());
}
