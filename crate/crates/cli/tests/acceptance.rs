//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so every line is printed; exits nonzero if any criterion fails.
//!
//! Criteria 4-6 need the converted SciFact_oracle pair file
//! (`MAPLE_SCIFACT_ORACLE`) and the pretrained models under
//! `MAPLE_MODEL_CACHE`; without them they fail with the reason.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use maple::corpus::{synthetic, write_pairs, ClaimEvidencePair, Label};
use maple::error::Result as MapleResult;
use maple::evolve::{run_evolution, run_evolution_t5, Direction, EvolveConfig, Seq2SeqBackend, SCRATCH_TINY};
use maple::features::{assemble, score_triples, ScoreKind};
use maple::harness::{Aggregate, Method, SeparationReport, RUNTIME_FILE};
use maple::hub::resolve_model_dir;
use maple::metrics::{
    cosine, Embedder, EmbeddingVector, HashingEncoder, PairMetric, SemSim, SentenceEncoder, DEFAULT_SEED_ENCODER,
    DEFAULT_SEMSIM_ENCODER,
};
use maple::verify::{fit_logistic_classes, fit_seed, predict_seed, LogisticConfig, SeedDistance};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};

// Pinned tolerances and targets.
const TOY_TIME_LIMIT: Duration = Duration::from_secs(60);
const SELF_IDENTITY_TOL: f64 = 1e-6;
const SCALE_INVARIANCE_TOL: f64 = 1e-9;
const PROPERTY_CASES: u32 = 1000;
const GRID_POINTS: usize = 101;
const MAPLE_1SHOT_TARGET: f64 = 0.3938;
const MAPLE_1SHOT_TOL: f64 = 0.08;
const MAPLE_5SHOT_TARGET: f64 = 0.4554;
const MAPLE_5SHOT_TOL: f64 = 0.06;
const REFERENCE_RUNTIME_SECS: f64 = 23.0 * 60.0 + 29.0;
const RUNTIME_FACTOR: f64 = 2.0;
const SEPARATION_ALPHA: f64 = 0.01;
const DETERMINISM_POOL: usize = 50;
const DETERMINISM_EPOCHS: usize = 2;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn scratch_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn maple_cli(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_maple"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .map_err(err)?;
    if !out.status.success() {
        return Err(format!(
            "`maple {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Returns token bytes unchanged, so generation echoes the source.
struct CopyBackend {
    steps: u64,
}

impl Seq2SeqBackend for CopyBackend {
    fn describe(&self) -> String {
        "copy".into()
    }
    fn encode(&self, text: &str) -> MapleResult<(Vec<u32>, bool)> {
        Ok((text.bytes().map(u32::from).collect(), false))
    }
    fn train_batch(&mut self, _: &[(Vec<u32>, Vec<u32>)], _: u64) -> MapleResult<f64> {
        self.steps += 1;
        Ok(0.0)
    }
    fn generate(&self, sources: &[Vec<u32>], _: usize) -> MapleResult<Vec<(String, bool)>> {
        Ok(sources
            .iter()
            .map(|s| (s.iter().map(|&b| b as u8 as char).collect(), false))
            .collect())
    }
    fn save_checkpoint(&self, path: &Path) -> MapleResult<()> {
        std::fs::write(path, b"").map_err(|e| maple::error::Error::io("checkpoint", e))
    }
    fn load_checkpoint(&mut self, _: &Path, steps: u64) -> MapleResult<()> {
        self.steps = steps;
        Ok(())
    }
    fn optimizer_steps(&self) -> u64 {
        self.steps
    }
    fn parameter_counts(&self) -> (usize, usize) {
        (0, 0)
    }
}

fn toy_pool(d: usize) -> Vec<ClaimEvidencePair> {
    synthetic::generate(d.div_ceil(3), 17)
        .into_iter()
        .take(d)
        .map(|p| p.unlabeled())
        .collect()
}

fn hashing_semsim() -> SemSim {
    SemSim::new(Arc::new(Embedder::new(Arc::new(HashingEncoder::new(256).unwrap()))))
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let pool = toy_pool(10);
    let metric = hashing_semsim();
    let mut checked = 0;
    for e in 1..=6 {
        let cfg = EvolveConfig {
            epochs: e,
            include_epoch_zero: true,
            batch_size: 4,
            ..Default::default()
        };
        let set = run_evolution(&pool, &cfg, None, &mut |_, _| Ok(Box::new(CopyBackend { steps: 0 })), &mut |_| {})
            .map_err(err)?;
        ensure(set.triples.len() == 2 * pool.len() * (e + 1), format!("e={e}: {} triples", set.triples.len()))?;
        let m = assemble(&score_triples(&set, &metric).map_err(err)?, &cfg).map_err(err)?;
        ensure(
            m.n_rows() == pool.len() && m.n_cols() == 6 * (e + 1),
            format!("e={e}: {}x{} features", m.n_rows(), m.n_cols()),
        )?;
        checked += 1;
    }
    // The same arithmetic through the real seq2seq stack.
    let cfg = EvolveConfig {
        epochs: 2,
        base_model_id: SCRATCH_TINY.into(),
        batch_size: 4,
        ..Default::default()
    };
    let set = run_evolution_t5(&pool, &cfg, None, &mut |_| {}).map_err(err)?;
    let m = assemble(&score_triples(&set, &metric).map_err(err)?, &cfg).map_err(err)?;
    ensure(set.triples.len() == 2 * 10 * 3, format!("scratch model: {} triples", set.triples.len()))?;
    ensure(m.n_rows() == 10 && m.n_cols() == 18, format!("scratch model: {}x{}", m.n_rows(), m.n_cols()))?;
    let elapsed = started.elapsed();
    ensure(elapsed < TOY_TIME_LIMIT, format!("took {elapsed:?}"))?;
    Ok(format!(
        "d=10, e=1..6 copy backend ({checked} configs) + e=2 scratch T5: 2·d·(e+1) triples, d×6(e+1) features, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn semsim_under_test() -> (SemSim, String) {
    match SemSim::from_encoder_id(DEFAULT_SEMSIM_ENCODER) {
        Ok(m) => (m, DEFAULT_SEMSIM_ENCODER.to_string()),
        Err(_) => (hashing_semsim(), "hash:256 (default encoder unavailable)".to_string()),
    }
}

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let (metric, encoder) = semsim_under_test();
    let sentence = "[a-z]{1,9}( [a-z]{1,9}){0,8}";
    let mut runner = TestRunner::new(PropConfig {
        cases: PROPERTY_CASES,
        failure_persistence: None,
        ..PropConfig::default()
    });
    runner
        .run(&(sentence, sentence), |(a, b)| {
            let self_score = metric.score(&a, &a).unwrap();
            prop_assert!((self_score - 1.0).abs() <= SELF_IDENTITY_TOL, "self {self_score}");
            let ab = metric.score(&a, &b).unwrap();
            let ba = metric.score(&b, &a).unwrap();
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert!((-1.0..=1.0).contains(&ab), "out of bounds {ab}");
            Ok(())
        })
        .map_err(err)?;
    let vector = proptest::collection::vec(-10.0f64..10.0, 1..64);
    runner
        .run(&(vector.clone(), vector, 1e-3f64..1e3), |(a, b, alpha)| {
            let n = a.len().min(b.len());
            let (a, b) = (&a[..n], &b[..n]);
            prop_assume!(a.iter().any(|v| v.abs() > 1e-6) && b.iter().any(|v| v.abs() > 1e-6));
            let va = EmbeddingVector::new(a.to_vec()).unwrap();
            let vb = EmbeddingVector::new(b.to_vec()).unwrap();
            let base = cosine(&va, &vb).unwrap();
            let scaled = cosine(&va.scaled(alpha), &vb).unwrap();
            prop_assert!((base - scaled).abs() <= SCALE_INVARIANCE_TOL, "{base} vs {scaled}");
            Ok(())
        })
        .map_err(err)?;
    let elapsed = started.elapsed();
    ensure(elapsed < TOY_TIME_LIMIT, format!("took {elapsed:?}"))?;
    Ok(format!(
        "{PROPERTY_CASES} SemSim cases ({encoder}) + {PROPERTY_CASES} cosine scaling cases, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

/// Zero-error threshold with the widest gap, as the midpoint of that gap.
/// Points above it belong to `upper`.
fn threshold_oracle(xs: &[f64], labels: &[bool]) -> Option<f64> {
    let mut sorted: Vec<(f64, bool)> = xs.iter().copied().zip(labels.iter().copied()).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<(f64, f64)> = None;
    for i in 0..sorted.len() - 1 {
        let t = (sorted[i].0 + sorted[i + 1].0) / 2.0;
        let errors = sorted.iter().filter(|(x, up)| (*x > t) != *up).count();
        let gap = sorted[i + 1].0 - sorted[i].0;
        if errors == 0 && best.is_none_or(|(_, g)| gap > g) {
            best = Some((t, gap));
        }
    }
    best.map(|(t, _)| t)
}

fn logistic_agrees_with_oracle(upper: &[f64], lower: &[f64]) -> Result<usize, String> {
    let (a, b) = (Label::Supports, Label::Refutes);
    let xs: Vec<f64> = upper.iter().chain(lower).copied().collect();
    let ups: Vec<bool> = upper.iter().map(|_| true).chain(lower.iter().map(|_| false)).collect();
    let labels: Vec<Label> = ups.iter().map(|&u| if u { a } else { b }).collect();
    let rows: Vec<[f64; 1]> = xs.iter().map(|&x| [x]).collect();
    let refs: Vec<&[f64]> = rows.iter().map(|r| &r[..]).collect();
    let model = fit_logistic_classes(&refs, &labels, &[a, b], &LogisticConfig::default()).map_err(err)?;
    let t = threshold_oracle(&xs, &ups).ok_or("data not separable")?;
    let grid: Vec<[f64; 1]> = (0..GRID_POINTS).map(|i| [i as f64 / GRID_POINTS as f64]).collect();
    let grid_refs: Vec<&[f64]> = grid.iter().map(|r| &r[..]).collect();
    let predicted = model.predict(&grid_refs).map_err(err)?;
    let agree = grid
        .iter()
        .zip(&predicted)
        .filter(|(g, p)| (**p == a) == (g[0] > t))
        .count();
    Ok(agree)
}

struct Stub2d;

impl SentenceEncoder for Stub2d {
    fn id(&self) -> &str {
        "stub-2d"
    }
    fn dimension(&self) -> usize {
        2
    }
    fn encode_batch(&self, texts: &[&str]) -> MapleResult<Vec<EmbeddingVector>> {
        texts
            .iter()
            .map(|t| {
                let v: Vec<f64> = t.split(',').map(|x| x.trim().parse().unwrap()).collect();
                EmbeddingVector::new(v)
            })
            .collect()
    }
}

fn criterion_3() -> Outcome {
    let agree = logistic_agrees_with_oracle(&[0.9, 0.8], &[0.1, 0.2])?;
    ensure(agree == GRID_POINTS, format!("toy model: {agree}/{GRID_POINTS} grid points agree"))?;
    // Mirror-symmetric separable sets share the oracle's midpoint boundary.
    let mut runner = TestRunner::new(PropConfig {
        cases: 50,
        failure_persistence: None,
        ..PropConfig::default()
    });
    runner
        .run(&proptest::collection::vec(0.0f64..0.45, 1..6), |lower| {
            let upper: Vec<f64> = lower.iter().map(|x| 1.0 - x).collect();
            let agree = logistic_agrees_with_oracle(&upper, &lower).unwrap();
            prop_assert_eq!(agree, GRID_POINTS);
            Ok(())
        })
        .map_err(err)?;

    // Pairs encode "claim − evidence" through the stub: claim is the
    // difference itself, evidence the origin.
    let embedder = Embedder::new(Arc::new(Stub2d));
    let pair = |id: &str, d: (f64, f64), label| {
        ClaimEvidencePair::new(id, format!("{},{}", d.0, d.1), "0,0", Some(label)).unwrap()
    };
    let sample = [
        pair("s1", (1.0, 0.0), Label::Supports),
        pair("s2", (1.0, 0.2), Label::Supports),
        pair("r1", (-1.0, 0.0), Label::Refutes),
        pair("n1", (0.0, -1.0), Label::NotEnoughInfo),
    ];
    let model = fit_seed(&sample, &embedder, SeedDistance::Cosine).map_err(err)?;
    let class = |l: Label| model.class_vectors.iter().find(|(c, _)| *c == l).unwrap().1.clone();
    ensure(class(Label::Supports) == vec![1.0, 0.1], format!("S vector {:?}", class(Label::Supports)))?;
    let query = pair("q", (0.9, 0.05), Label::Supports);
    let hand = |v: [f64; 2]| {
        let q = [0.9, 0.05];
        (q[0] * v[0] + q[1] * v[1]) / ((q[0] * q[0] + q[1] * q[1]).sqrt() * (v[0] * v[0] + v[1] * v[1]).sqrt())
    };
    let cos_s = hand([1.0, 0.1]);
    let cos_r = hand([-1.0, 0.0]);
    let cos_n = hand([0.0, -1.0]);
    // 0.905 / (sqrt(0.8125) · sqrt(1.01))
    let exact_s = 0.905 / (0.8125f64.sqrt() * 1.01f64.sqrt());
    ensure((cos_s - exact_s).abs() < 1e-12 && cos_r < 0.0, format!("hand cosines {cos_s} {cos_r}"))?;
    let expected = if cos_s >= cos_r && cos_s >= cos_n { Label::Supports } else { Label::Refutes };
    let got = predict_seed(&model, &query, &embedder).map_err(err)?;
    ensure(got == expected, format!("SEED predicted {got}, hand-computed {expected}"))?;
    Ok(format!(
        "logistic = threshold oracle on {GRID_POINTS}/{GRID_POINTS} grid points (toy + 50 mirrored sets); SEED (0.9,0.05) → {got} (cos S {cos_s:.4}, R {cos_r:.4})"
    ))
}

struct FullRun {
    aggregates: Vec<Aggregate>,
    total_seconds: f64,
    separation: SeparationReport,
}

fn full_run_prerequisites() -> Result<PathBuf, String> {
    let mut missing = Vec::new();
    let data = std::env::var_os("MAPLE_SCIFACT_ORACLE").map(PathBuf::from);
    match &data {
        Some(p) if p.is_file() => {}
        Some(p) => missing.push(format!("{} does not exist", p.display())),
        None => missing.push("MAPLE_SCIFACT_ORACLE (converted SciFact_oracle pair file) is unset".into()),
    }
    for id in ["t5-small", DEFAULT_SEMSIM_ENCODER, DEFAULT_SEED_ENCODER] {
        if resolve_model_dir(id).is_err() {
            missing.push(format!("model '{id}' not found (set MAPLE_MODEL_CACHE)"));
        }
    }
    if missing.is_empty() {
        Ok(data.unwrap())
    } else {
        Err(format!("blocked: {}", missing.join("; ")))
    }
}

fn full_run() -> Result<FullRun, String> {
    let data = full_run_prerequisites()?;
    let dir = std::env::var_os("MAPLE_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("scifact-oracle"));
    std::fs::create_dir_all(&dir).map_err(err)?;
    let config = format!(
        "dataset = \"SciFact_oracle\"\noutput_dir = \"out\"\n\n[data]\ninput = {:?}\n",
        data.display().to_string()
    );
    std::fs::write(dir.join("scifact.toml"), config).map_err(err)?;
    for stage in ["prepare", "evolve", "transform", "run"] {
        maple_cli(&dir, &["-c", "scifact.toml", stage])?;
    }
    let out = dir.join("out");
    let read = |p: PathBuf| std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()));
    let aggregates: Vec<Aggregate> = serde_json::from_str(&read(out.join("results/aggregates.json"))?).map_err(err)?;
    let runtime: serde_json::Value = serde_json::from_str(&read(out.join(RUNTIME_FILE))?).map_err(err)?;
    let separation: SeparationReport = serde_json::from_str(&read(out.join("results/separation.json"))?).map_err(err)?;
    Ok(FullRun {
        aggregates,
        total_seconds: runtime["seconds"]["total"].as_f64().ok_or("runtime total missing")?,
        separation,
    })
}

fn cell(run: &FullRun, method: Method, n: usize) -> Result<&Aggregate, String> {
    run.aggregates
        .iter()
        .find(|a| a.method == method && a.n == n)
        .ok_or_else(|| format!("no aggregate for {method} {n}-shot"))
}

fn criterion_4(run: &Result<FullRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let one = cell(run, Method::Maple, 1)?;
    let five = cell(run, Method::Maple, 5)?;
    let budget = RUNTIME_FACTOR * REFERENCE_RUNTIME_SECS;
    let detail = format!(
        "MAPLE 1-shot {:.4} (target {MAPLE_1SHOT_TARGET} ± {MAPLE_1SHOT_TOL}), 5-shot {:.4} (target {MAPLE_5SHOT_TARGET} ± {MAPLE_5SHOT_TOL}), runtime {:.0}s (budget {budget:.0}s)",
        one.macro_f1_mean, five.macro_f1_mean, run.total_seconds
    );
    ensure(
        (one.macro_f1_mean - MAPLE_1SHOT_TARGET).abs() <= MAPLE_1SHOT_TOL
            && (five.macro_f1_mean - MAPLE_5SHOT_TARGET).abs() <= MAPLE_5SHOT_TOL
            && run.total_seconds <= budget,
        detail.clone(),
    )?;
    Ok(detail)
}

fn pooled_se(a: &Aggregate, b: &Aggregate) -> f64 {
    (a.macro_f1_std.powi(2) / a.count as f64 + b.macro_f1_std.powi(2) / b.count as f64).sqrt()
}

fn criterion_5(run: &Result<FullRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let m1 = cell(run, Method::Maple, 1)?;
    let m5 = cell(run, Method::Maple, 5)?;
    let s1 = cell(run, Method::Seed, 1)?;
    let trend = m5.macro_f1_mean - m1.macro_f1_mean;
    let gap = m1.macro_f1_mean - s1.macro_f1_mean;
    let detail = format!(
        "MAPLE 5-shot − 1-shot {trend:.4} (SE {:.4}); MAPLE − SEED at 1-shot {gap:.4} (SE {:.4})",
        pooled_se(m5, m1),
        pooled_se(m1, s1)
    );
    ensure(trend > pooled_se(m5, m1) && gap > pooled_se(m1, s1), detail.clone())?;
    Ok(detail)
}

fn criterion_6(run: &Result<FullRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let mut parts = Vec::new();
    let mut ok = true;
    for direction in Direction::ALL {
        let t = run
            .separation
            .test(direction, ScoreKind::EvidenceMutation, Label::Supports)
            .ok_or("no separation test recorded")?;
        let (nei, sup, p) = (t.nei_mean.unwrap_or(f64::NAN), t.other_mean.unwrap_or(f64::NAN), t.p_value.unwrap_or(1.0));
        ok &= nei < sup && p < SEPARATION_ALPHA;
        parts.push(format!("{}: NEI {nei:.4} vs SUPPORTS {sup:.4}, p {p:.2e}", direction.tag()));
    }
    let detail = format!("epoch {} s_em, {}", run.separation.final_epoch, parts.join("; "));
    ensure(ok, detail.clone())?;
    Ok(detail)
}

fn criterion_7() -> Outcome {
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scripts/long_run_fever.sh");
    let text = std::fs::read_to_string(&script).map_err(|e| format!("{}: {e}", script.display()))?;
    ensure(text.contains("0.6155"), "long-run script does not carry the FEVER targets")?;
    Ok("not gated; optional long run documented in scripts/long_run_fever.sh".into())
}

fn criterion_8() -> Outcome {
    let started = Instant::now();
    let (input, source) = match std::env::var_os("MAPLE_SCIFACT_ORACLE").map(PathBuf::from) {
        Some(p) if p.is_file() => (p, "SciFact_oracle"),
        _ => {
            let p = scratch_dir("determinism-data").join("pairs.jsonl");
            write_pairs(&p, &synthetic::generate(40, 11)).map_err(err)?;
            (p, "synthetic stand-in (SciFact_oracle unavailable)")
        }
    };
    let encoder = if resolve_model_dir(DEFAULT_SEMSIM_ENCODER).is_ok() { DEFAULT_SEMSIM_ENCODER } else { "hash:256" };
    let seed_encoder = if resolve_model_dir(DEFAULT_SEED_ENCODER).is_ok() { DEFAULT_SEED_ENCODER } else { "hash:256" };
    let config = format!(
        r#"dataset = "SciFact_oracle"
output_dir = "out"
encoder_id = "{encoder}"
seed_encoder_id = "{seed_encoder}"
workers = 2

[seeds]
first = 123
last = 142

[evolve]
epochs = {DETERMINISM_EPOCHS}
base_model_id = "{SCRATCH_TINY}"
batch_size = 8

[data]
input = {:?}
test_per_class = 5
subsample = {DETERMINISM_POOL}
"#,
        input.display().to_string()
    );
    let mut outputs = Vec::new();
    for run in ["determinism-a", "determinism-b"] {
        let dir = scratch_dir(run);
        std::fs::write(dir.join("toy.toml"), &config).map_err(err)?;
        for stage in ["prepare", "evolve", "transform", "run"] {
            maple_cli(&dir, &["-c", "toy.toml", stage])?;
        }
        let features = std::fs::read(dir.join("out/features/semsim/features.csv")).map_err(err)?;
        let results = std::fs::read(dir.join("out/results/results.csv")).map_err(err)?;
        outputs.push((features, results));
    }
    ensure(outputs[0].0 == outputs[1].0, "feature stores differ")?;
    ensure(outputs[0].1 == outputs[1].1, "result CSVs differ")?;
    Ok(format!(
        "{source}, pool {DETERMINISM_POOL}, epochs {DETERMINISM_EPOCHS}, encoder {encoder}: features.csv ({} B) and results.csv ({} B) byte-identical, {:.0}s",
        outputs[0].0.len(),
        outputs[0].1.len(),
        started.elapsed().as_secs_f64()
    ))
}

fn main() {
    // `cargo test -- --list` and filters come through as arguments.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match &outcome {
            Ok(detail) => println!("criterion {n} PASS {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("criterion {n} FAIL {name}: {reason}");
            }
        }
    };
    report(1, "pipeline arithmetic", criterion_1());
    report(2, "metric properties", criterion_2());
    report(3, "oracle equivalence", criterion_3());
    let run = full_run();
    report(4, "SciFact_oracle reproduction", criterion_4(&run));
    report(5, "trend and ordering", criterion_5(&run));
    report(6, "class separation", criterion_6(&run));
    report(7, "FEVER-scale long run", criterion_7());
    report(8, "determinism", criterion_8());
    println!("acceptance: {} of 8 criteria pass", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
