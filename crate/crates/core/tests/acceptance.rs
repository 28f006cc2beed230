//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. `ACCEPTANCE_ONLY=3,5` restricts the run.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srtriage::architectures::{build, build_shallow, count_params, ArchitectureKind, ArchitectureSpec};
use srtriage::corpus::{check_temporal, Label, Source};
use srtriage::embedding::{nearest_neighbors, train_skipgram, SkipGramConfig};
use srtriage::evaluator::{accuracy, auc, auc_trapezoid, confusion, ConfusionMatrix};
use srtriage::nn::{
    check_layer_gradients, check_network_gradients, Conv, Dense, GradCheckConfig, Layer, Tensor,
};
use srtriage::pipeline::{artifacts, run_pipeline, PipelineConfig, PipelineOutcome};
use srtriage::preprocess::{stem, TokenSequence};
use srtriage::trainer::{train_with_validator, Sample, TrainError, TrainingConfig};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

// 1
fn shallow_param_count() -> Check {
    let mut counts = Vec::new();
    for len in [5, 50, 200, 1000] {
        let n = count_params(&build_shallow(len, 100, 128).map_err(|e| e.to_string())?);
        ensure(n == 116_354, || format!("L={len}: {n} parameters"))?;
        counts.push(n);
    }
    Ok(format!("shallow(d=100, F=128) = {} for L in {{5, 50, 200, 1000}}", counts[0]))
}

// 2
fn gradient_oracle() -> Check {
    const TOL: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    let trials = 100u64;

    for trial in 0..trials {
        let width = rng.gen_range(2..8);
        let len = rng.gen_range(8..20);
        let cases: Vec<(Layer, Vec<usize>)> = vec![
            (Layer::Conv(Conv::new(rng.gen_range(1..6), rng.gen_range(1..5), width, &mut rng)), vec![len, width]),
            (Layer::GlobalMaxPool, vec![len, width]),
            (Layer::MaxPool { window: 2, stride: 2 }, vec![len, width]),
            (Layer::Flatten, vec![len, width]),
            (Layer::Dense(Dense::new(width * 2, rng.gen_range(1..6), &mut rng)), vec![width * 2]),
            (Layer::Relu, vec![len * width]),
            (Layer::Dropout { rate: rng.gen_range(0.0..0.8) }, vec![len * width]),
            (Layer::Softmax, vec![rng.gen_range(2..7)]),
            (
                Layer::Concat(vec![
                    vec![Layer::Conv(Conv::new(1, 3, width, &mut rng)), Layer::Relu, Layer::GlobalMaxPool],
                    vec![Layer::Conv(Conv::new(3, 2, width, &mut rng)), Layer::Relu, Layer::GlobalMaxPool],
                ]),
                vec![len, width],
            ),
        ];
        let cfg = GradCheckConfig { seed: trial, ..Default::default() };
        for (layer, shape) in cases {
            let x = random_tensor(shape, &mut rng);
            let r = check_layer_gradients(&layer, &x, &cfg).map_err(|e| e.to_string())?;
            ensure(r.max_relative_error <= TOL, || {
                format!("{} trial {trial}: rel err {:e} at {:?}", layer.kind(), r.max_relative_error, r.worst)
            })?;
            worst = worst.max(r.max_relative_error);
            checked += r.checked;
            skipped += r.skipped_kinks;
        }
    }

    // whole architectures: trial 0 of each is the full-width build, the rest shrink it
    let arch_trials = 25u64;
    for kind in ArchitectureKind::ALL {
        for trial in 0..arch_trials {
            let mut spec = ArchitectureSpec::default_for(kind, 0);
            spec.seed = trial;
            let batch;
            let coords;
            if trial == 0 {
                spec.input_len = 64;
                batch = 2;
                coords = 8;
            } else {
                spec.embed_dim = rng.gen_range(3..10);
                for k in spec.kernel_plan.iter_mut() {
                    k.filters = rng.gen_range(2..6);
                }
                if let Some(s) = spec.second_conv.as_mut() {
                    s.filters = rng.gen_range(2..5);
                }
                spec.fc_plan.iter_mut().for_each(|w| *w = rng.gen_range(2..8));
                spec.input_len = rng.gen_range(spec.min_input_len()..=64);
                batch = 3;
                coords = 12;
            }
            let net = build(&spec).map_err(|e| e.to_string())?;
            let xs: Vec<Tensor> =
                (0..batch).map(|_| random_tensor(vec![spec.input_len, spec.embed_dim], &mut rng)).collect();
            let refs: Vec<&Tensor> = xs.iter().collect();
            let ys: Vec<f64> = (0..batch).map(|i| (i % 2) as f64).collect();
            let cfg = GradCheckConfig { seed: trial, max_coords_per_tensor: coords, ..Default::default() };
            let r = check_network_gradients(&net, &refs, &ys, &cfg).map_err(|e| e.to_string())?;
            ensure(r.checked > 0, || format!("{kind} trial {trial}: every coordinate sat on a kink"))?;
            ensure(r.max_relative_error <= TOL, || {
                format!("{kind} trial {trial}: rel err {:e} at {:?}", r.max_relative_error, r.worst)
            })?;
            worst = worst.max(r.max_relative_error);
            checked += r.checked;
            skipped += r.skipped_kinks;
        }
    }
    Ok(format!(
        "{trials} trials x 9 layer kinds, {arch_trials} trials x 4 architectures; \
         {checked} coordinates, {skipped} kink skips, max rel err {worst:.2e}"
    ))
}

// 3
fn auc_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut sets = 0;
    while sets < 1000 {
        let n = rng.gen_range(2..=100);
        let levels = rng.gen_range(2..=20);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..levels)) / levels as f64).collect();
        let labels: Vec<Label> = (0..n).map(|_| if rng.gen_bool(0.5) { Label::Sr } else { Label::NonSr }).collect();
        if !labels.contains(&Label::Sr) || !labels.contains(&Label::NonSr) {
            continue;
        }
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if labels[i] == Label::Sr && labels[j] == Label::NonSr {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        let brute = wins / pairs;
        let trap = auc_trapezoid(&scores, &labels).map_err(|e| e.to_string())?;
        let rank = auc(&scores, &labels).map_err(|e| e.to_string())?;
        let err = (trap - brute).abs().max((rank - brute).abs());
        ensure(err <= 1e-9, || format!("set {sets}: trapezoid {trap}, rank {rank}, pairwise {brute}"))?;
        worst = worst.max(err);
        sets += 1;
    }
    Ok(format!("1000 tied score sets, max |trapezoid - pairwise| = {worst:.1e}"))
}

// 4
fn accuracy_formula() -> Check {
    let acc = accuracy(&ConfusionMatrix { tp: 48, tn: 48, fp: 2, r#fn: 2 }).map_err(|e| e.to_string())?;
    ensure(acc == 0.96, || format!("accuracy(48,48,2,2) = {acc}"))?;
    let mut cases = Vec::new();
    for tp in 0..3u64 {
        for tn in 0..3u64 {
            for fp in 0..3u64 {
                for fneg in 0..3u64 {
                    if tp + tn + fp + fneg > 0 {
                        cases.push((tp, tn, fp, fneg));
                    }
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    cases.shuffle(&mut rng);
    for &(tp, tn, fp, fneg) in cases.iter().take(20) {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for (count, score, label) in
            [(tp, 0.9, Label::Sr), (tn, 0.1, Label::NonSr), (fp, 0.7, Label::NonSr), (fneg, 0.2, Label::Sr)]
        {
            for _ in 0..count {
                scores.push(score);
                labels.push(label);
            }
        }
        let cm = confusion(&scores, &labels, 0.5).map_err(|e| e.to_string())?;
        ensure(cm == ConfusionMatrix { tp, tn, fp, r#fn: fneg }, || format!("{cm:?} for {tp},{tn},{fp},{fneg}"))?;
        let recount = scores
            .iter()
            .zip(&labels)
            .filter(|(&s, &l)| (s >= 0.5) == (l == Label::Sr))
            .count() as f64
            / scores.len() as f64;
        let acc = accuracy(&cm).map_err(|e| e.to_string())?;
        ensure(acc == recount, || format!("accuracy {acc} vs recount {recount}"))?;
    }
    Ok("accuracy(48,48,2,2) = 0.96; 20 enumerated matrices match a direct recount".into())
}

// 5
fn stemmer_conformance() -> Check {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let voc = fs::read_to_string(dir.join("snowball_en_voc.txt")).map_err(|e| e.to_string())?;
    let out = fs::read_to_string(dir.join("snowball_en_output.txt")).map_err(|e| e.to_string())?;
    let (voc, out): (Vec<&str>, Vec<&str>) = (voc.lines().collect(), out.lines().collect());
    ensure(voc.len() == out.len() && !voc.is_empty(), || "word lists differ in length".into())?;
    let mismatches: Vec<String> = voc
        .iter()
        .zip(&out)
        .filter(|(w, e)| stem(w) != **e)
        .take(5)
        .map(|(w, e)| format!("{w} -> {} (expected {e})", stem(w)))
        .collect();
    ensure(mismatches.is_empty(), || mismatches.join(", "))?;
    Ok(format!("{}/{} words agree", voc.len(), voc.len()))
}

fn end_to_end_config() -> PipelineConfig {
    let mut cfg = PipelineConfig { seed: 7, ..Default::default() };
    cfg.training.max_epochs = 300;
    cfg.training.max_len = 32;
    cfg
}

fn run_end_to_end(out: &Path) -> Result<PipelineOutcome, String> {
    let docs = common::synthetic_corpus(1000, 11);
    run_pipeline(&docs, &end_to_end_config(), Some(out)).map_err(|e| e.to_string())
}

// 6
fn end_to_end(outcome: &PipelineOutcome) -> Check {
    let r = &outcome.test.overall;
    let auc = r.auc.ok_or("test split holds a single class")?;
    let h = &outcome.training.history;
    ensure(check_temporal(&outcome.split), || "test split is not strictly newest".into())?;
    ensure(outcome.embedding.dim() == 100, || "embedding dim is not 100".into())?;
    ensure(h.stopped_epoch <= 300, || format!("ran {} epochs", h.stopped_epoch))?;
    let summary = format!(
        "test n={} accuracy {:.4} AUC {:.4} loss {:.4}; best epoch {}, stopped at {}",
        r.n_samples, r.accuracy, auc, r.loss, h.best_epoch, h.stopped_epoch
    );
    ensure(r.accuracy >= 0.90 && auc >= 0.95, || summary.clone())?;
    Ok(summary)
}

// 7
fn early_stopping_protocol() -> Check {
    let cfg = TrainingConfig { batch_size: 4, ..Default::default() };
    ensure(cfg.max_epochs == 2000 && cfg.patience == 100, || "defaults changed".into())?;
    let mut spec = ArchitectureSpec::shallow(6);
    spec.embed_dim = 4;
    spec.kernel_plan.iter_mut().for_each(|k| k.filters = 3);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let samples: Vec<Sample> = (0..16)
        .map(|i| Sample {
            id: i.to_string(),
            input: random_tensor(vec![6, 4], &mut rng),
            label: if i % 2 == 0 { Label::Sr } else { Label::NonSr },
            source: Source::Other,
        })
        .collect();
    let k = 37;
    let mut snapshot = None;
    let outcome = train_with_validator(build(&spec).unwrap(), &spec, &samples, &cfg, |net, epoch| {
        if epoch == k {
            snapshot = Some(net.clone());
        }
        // improves every epoch up to k, never afterwards
        let loss = if epoch <= k { 1.0 / epoch as f64 } else { 1.0 / k as f64 + 1e-3 };
        Ok::<_, TrainError>((loss, 0.5))
    })
    .map_err(|e| e.to_string())?;
    let h = &outcome.history;
    ensure(h.stopped_epoch == k + 100 && h.best_epoch == k, || {
        format!("stopped at {} with best {}", h.stopped_epoch, h.best_epoch)
    })?;
    let snapshot = snapshot.ok_or("epoch k never validated")?;
    ensure(outcome.best == snapshot, || "restored weights differ from the epoch-k snapshot".into())?;
    for s in &samples {
        let a = outcome.best.infer(&s.input).map_err(|e| e.to_string())?;
        let b = snapshot.infer(&s.input).map_err(|e| e.to_string())?;
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(bits(&a) == bits(&b), || format!("outputs differ on sample {}", s.id))?;
    }
    ensure(outcome.last != outcome.best, || "final weights never moved past epoch k".into())?;
    Ok(format!("improvement at epoch {k}; stopped at {}, epoch-{k} weights restored bit-exactly", h.stopped_epoch))
}

// 8
fn embedding_sanity() -> Check {
    let corpus: Vec<TokenSequence> = (0..1000)
        .map(|i| TokenSequence { doc_id: i.to_string(), tokens: vec!["alpha".into(), "beta".into()] })
        .collect();
    let mut sims = Vec::new();
    for seed in 0..10 {
        let cfg = SkipGramConfig { window: 1, seed, ..Default::default() };
        let model = train_skipgram(&corpus, &cfg).map_err(|e| e.to_string())?;
        let nn = nearest_neighbors(&model, "alpha", 1).map_err(|e| e.to_string())?;
        ensure(nn[0].0 == "beta", || format!("seed {seed}: nearest neighbor {:?}", nn[0]))?;
        sims.push(nn[0].1);
    }
    let min = sims.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(format!("10/10 seeds give beta (min cosine {min:.3})"))
}

// 9
fn determinism(first: &Path, second: &Path) -> Check {
    let mut files = vec![
        artifacts::EMBEDDINGS.to_string(),
        artifacts::REPORT.to_string(),
        artifacts::ROC.to_string(),
        artifacts::SPLIT.to_string(),
        artifacts::EFFECTIVE_CONFIG.to_string(),
    ];
    for name in ["best.ckpt", "final.ckpt", "history.csv"] {
        files.push(format!("{}/{name}", artifacts::CHECKPOINTS));
    }
    for f in &files {
        let a = fs::read(first.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = fs::read(second.join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure(a == b, || format!("{f} differs between runs"))?;
    }
    Ok(format!("{} artifacts byte-identical across two runs", files.len()))
}

// 10
fn reference_counts() -> Check {
    let mut lines = Vec::new();
    for kind in ArchitectureKind::ALL {
        let spec = ArchitectureSpec::default_for(kind, 200);
        let n = count_params(&build(&spec).map_err(|e| e.to_string())?);
        let plan: Vec<String> = spec.kernel_plan.iter().map(|k| format!("{}x{}", k.ngram, k.filters)).collect();
        lines.push(format!(
            "    {kind:<7} {n:>9} (reference {:>9}) L=200 d=100 kernels [{}] second_conv {:?} pools after {:?} fc {:?} dropout {}",
            kind.reference_params(),
            plan.join(", "),
            spec.second_conv.map(|k| format!("{}x{}", k.ngram, k.filters)),
            spec.pool_after,
            spec.fc_plan,
            spec.dropout_rate,
        ));
    }
    println!("{}", lines.join("\n"));
    Ok("parameter counts logged beside the reference values (not asserted)".into())
}

struct Runner {
    only: Option<Vec<u32>>,
    failures: u32,
}

impl Runner {
    fn wanted(&self, id: u32) -> bool {
        self.only.as_ref().is_none_or(|o| o.contains(&id))
    }

    fn run<T>(&mut self, id: u32, name: &str, limit: Duration, f: impl FnOnce() -> Result<T, String>) -> Option<T>
    where
        T: Describe,
    {
        if !self.wanted(id) {
            return None;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let (status, detail, value) = match result {
            Ok(v) if elapsed <= limit => ("PASS", v.describe(), Some(v)),
            Ok(v) => ("FAIL", format!("over time limit; {}", v.describe()), Some(v)),
            Err(e) => ("FAIL", e, None),
        };
        if status == "FAIL" {
            self.failures += 1;
        }
        println!(
            "criterion {id:>2} {status} {name}: {detail} [{:.1}s, limit {}s]",
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
        value
    }
}

trait Describe {
    fn describe(&self) -> String;
}

impl Describe for String {
    fn describe(&self) -> String {
        self.clone()
    }
}

fn main() {
    let only = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut r = Runner { only, failures: 0 };
    let secs = Duration::from_secs;

    r.run(1, "parameter count", secs(1), shallow_param_count);
    r.run(2, "gradient oracle", secs(120), gradient_oracle);
    r.run(3, "AUC oracle equivalence", secs(30), auc_equivalence);
    r.run(4, "accuracy formula", secs(1), accuracy_formula);
    r.run(5, "stemmer conformance", secs(10), stemmer_conformance);

    let scratch = tempfile::tempdir().expect("temp dir");
    let (run_a, run_b) = (scratch.path().join("run_a"), scratch.path().join("run_b"));
    let e2e_limit = secs(600);
    let mut first: Option<(Result<(), String>, Duration)> = None;
    if r.wanted(6) {
        r.run(6, "end-to-end learning", e2e_limit, || {
            let start = Instant::now();
            let outcome = run_end_to_end(&run_a);
            first = Some((outcome.as_ref().map(|_| ()).map_err(Clone::clone), start.elapsed()));
            end_to_end(&outcome?)
        });
    }
    r.run(7, "early-stopping protocol", secs(60), early_stopping_protocol);
    r.run(8, "embedding sanity", secs(60), embedding_sanity);

    if r.wanted(9) {
        let spent = first.as_ref().map_or(Duration::ZERO, |f| f.1);
        r.run(9, "determinism", (e2e_limit * 2).saturating_sub(spent), || {
            match first {
                Some((Ok(()), _)) => {}
                Some((Err(e), _)) => return Err(format!("first pipeline run failed: {e}")),
                None => {
                    run_end_to_end(&run_a)?;
                }
            }
            run_end_to_end(&run_b)?;
            determinism(&run_a, &run_b)
        });
    }
    r.run(10, "reference parameter counts", secs(60), reference_counts);

    if r.failures > 0 {
        println!("acceptance: {} criterion(s) failed", r.failures);
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
