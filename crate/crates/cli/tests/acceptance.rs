//! Acceptance criteria, one line each. Runs as a plain binary so the verdict
//! lines are always printed; exits nonzero when any criterion fails.
//!
//! Criteria that need the official review files, pretrained checkpoints and
//! word vectors read their locations from the environment:
//! `DRUGSENT_UCI_TRAIN`, `DRUGSENT_UCI_TEST`, `DRUGSENT_W2V` and
//! `DRUGSENT_CHECKPOINT_DIR`. The full-scale run is opt-in with
//! `DRUGSENT_FULL_SCALE=1`.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use common::*;
use drugsent::analysis::{
    build_records, disagreement_partition, emit_triage_report, ingest_triage, misclassified_indices, severe_errors,
    Bucket, ModelNames, PatternTag, TriageFilter,
};
use drugsent::corpus::{bin_rating, SentimentClass};
use drugsent::encoders::{EncodedExample, StaticEmbeddingTable, StaticVocab};
use drugsent::metrics::{read_report, EvaluationReport};
use drugsent::models::{build_cnn, resolve_checkpoint, InputEncoder, Model, ModelConfig, ModelKind, Network};
use drugsent::nn::Gradients;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (u8, &'static str, fn() -> Verdict);

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

/// Official split sizes per class (negative, neutral, positive).
const TRAIN_COUNTS: [usize; 3] = [40075, 42702, 78520];
const TEST_COUNTS: [usize; 3] = [13497, 14076, 26193];
/// Reported macro F1 per model on the full test split.
const REPORTED_F1: [(ModelKind, f64); 4] = [
    (ModelKind::FrozenEncoderHead, 0.70),
    (ModelKind::CnnStatic, 0.76),
    (ModelKind::FinetuneGeneral, 0.80),
    (ModelKind::FinetuneClinical, 0.81),
];
const METRIC_TOL: f64 = 1e-12;
const GRAD_TOL: f64 = 1e-4;
const MAJORITY_APPROX: f64 = 0.22;
const MAJORITY_TOL: f64 = 0.005;
const ORDERING_SLACK: f64 = 0.01;
const FULL_SCALE_TOL: f64 = 0.02;

fn workspace_root() -> PathBuf {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    root.canonicalize().unwrap_or(root)
}

fn env_path(var: &str, fallback: &str) -> PathBuf {
    std::env::var_os(var)
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join(fallback))
}

fn uci_files() -> Result<(PathBuf, PathBuf), String> {
    let train = env_path("DRUGSENT_UCI_TRAIN", "data/drugsComTrain_raw.tsv");
    let test = env_path("DRUGSENT_UCI_TEST", "data/drugsComTest_raw.tsv");
    for p in [&train, &test] {
        if !p.is_file() {
            return Err(format!(
                "official review file {} not found (set DRUGSENT_UCI_TRAIN / DRUGSENT_UCI_TEST)",
                p.display()
            ));
        }
    }
    Ok((train, test))
}

fn criterion_binning() -> Verdict {
    let oracle = |r: i64| match r {
        1..=4 => SentimentClass::Negative,
        5..=8 => SentimentClass::Neutral,
        _ => SentimentClass::Positive,
    };
    for r in 1..=10 {
        if bin_rating(r).ok() != Some(oracle(r)) {
            return Verdict::Fail(format!("rating {r} binned as {:?}", bin_rating(r)));
        }
    }
    for r in [-1, 0, 11, 100] {
        if bin_rating(r).is_ok() {
            return Verdict::Fail(format!("rating {r} accepted"));
        }
    }
    Verdict::Pass("ratings 1..=10 match <=4 / 5-8 / >=9; out-of-range rejected".into())
}

fn criterion_counts() -> Verdict {
    let (train, test) = match uci_files() {
        Ok(p) => p,
        Err(e) => return Verdict::Fail(e),
    };
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("prepared");
    let result = drugsent(&["prepare", "--train-file", path_str(&train), "--test-file", path_str(&test), "--out", path_str(&out)]);
    if !result.status.success() {
        return Verdict::Fail(format!("prepare failed: {}", stderr(&result)));
    }
    let counts: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("counts.json")).unwrap()).unwrap();
    let got = |split: &str| -> [usize; 3] {
        ["negative", "neutral", "positive"].map(|c| counts[split][c].as_u64().unwrap() as usize)
    };
    let (tr, te) = (got("train"), got("test"));
    if tr == TRAIN_COUNTS && te == TEST_COUNTS {
        Verdict::Pass(format!("train {tr:?}, test {te:?}"))
    } else {
        Verdict::Fail(format!("train {tr:?} (want {TRAIN_COUNTS:?}), test {te:?} (want {TEST_COUNTS:?})"))
    }
}

/// Brute-force scores of one class straight from the label sequences.
fn oracle_prf(gold: &[usize], pred: &[usize], class: usize) -> [f64; 3] {
    let mut tp = 0usize;
    let mut predicted = 0usize;
    let mut actual = 0usize;
    for (&g, &p) in gold.iter().zip(pred) {
        if p == class {
            predicted += 1;
        }
        if g == class {
            actual += 1;
            if p == class {
                tp += 1;
            }
        }
    }
    let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
    let recall = if actual == 0 { 0.0 } else { tp as f64 / actual as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    [precision, recall, f1]
}

fn criterion_metrics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let n = rng.random_range(1..=500);
        // Some cases draw from fewer classes to reach the zero-division paths.
        let classes: Vec<usize> = match case % 5 {
            0 => vec![rng.random_range(0..3)],
            1 => vec![0, 2],
            _ => vec![0, 1, 2],
        };
        let draw = |rng: &mut ChaCha8Rng| classes[rng.random_range(0..classes.len())];
        let gold: Vec<usize> = (0..n).map(|_| draw(&mut rng)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let as_class = |v: &[usize]| -> Vec<SentimentClass> { v.iter().map(|&c| SentimentClass::ALL[c]).collect() };
        let report = EvaluationReport::from_predictions("m", "s", &as_class(&gold), &as_class(&pred)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = gold.iter().zip(&pred).filter(|&(&g, &p)| g == i && p == j).count() as u64;
                if report.confusion.cells[i][j] != want {
                    return Verdict::Fail(format!("case {case}: confusion[{i}][{j}] {} != {want}", report.confusion.cells[i][j]));
                }
            }
        }
        let mut macro_sum = [0.0; 3];
        for c in 0..3 {
            let want = oracle_prf(&gold, &pred, c);
            let got = &report.per_class[c];
            for (k, g) in [got.precision, got.recall, got.f1].into_iter().enumerate() {
                worst = worst.max((g - want[k]).abs());
                macro_sum[k] += want[k];
            }
        }
        let m = &report.macro_avg;
        for (k, g) in [m.precision, m.recall, m.f1].into_iter().enumerate() {
            worst = worst.max((g - macro_sum[k] / 3.0).abs());
        }
    }
    if worst <= METRIC_TOL {
        Verdict::Pass(format!("1000 cases, max abs deviation {worst:.1e}"))
    } else {
        Verdict::Fail(format!("max abs deviation {worst:.3e} > {METRIC_TOL:e}"))
    }
}

fn mini_cnn() -> Model {
    let tokens: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
    let vocab = StaticVocab::from_tokens(tokens).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut vectors = Array2::from_shape_simple_fn((vocab.rows(), 6), || rng.random_range(-1.0..1.0));
    vectors.row_mut(vocab.pad_index() as usize).fill(0.0);
    let mut config = ModelConfig::new(ModelKind::CnnStatic);
    config.filter_widths = vec![1, 2, 3];
    config.filters_per_width = 3;
    config.hidden_size = 4;
    config.max_len = 7;
    config.seed = 17;
    build_cnn(config, StaticEmbeddingTable { vocab, vectors }).unwrap()
}

fn criterion_gradients() -> Verdict {
    let mut model = mini_cnn();
    let (InputEncoder::Static(vocab), Network::Cnn(net)) = (&model.inputs, &model.network) else {
        return Verdict::Fail("unexpected model layout".into());
    };
    let pad = vocab.pad_index();
    let dim = net.dimension(&model.store);
    let embedding = net.embedding;
    let example = |ids: &[u32], label| {
        let mut token_ids = ids.to_vec();
        let mut mask = vec![1u8; ids.len()];
        token_ids.resize(7, pad);
        mask.resize(7, 0);
        EncodedExample {
            token_ids,
            attention_mask: mask,
            label: Some(label),
        }
    };
    let batch = [
        example(&[0, 3, 5, 7], SentimentClass::Positive),
        example(&[1, 13, 2], SentimentClass::Negative),
        example(&[4, 4, 9, 10, 11, 6, 8], SentimentClass::Neutral),
    ];
    let mut grads = Gradients::zeros_like(&model.store);
    model.loss_and_grad(&batch, &mut grads, None).unwrap();
    let ids: Vec<_> = model.store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let pad_row = pad as usize * dim..(pad as usize + 1) * dim;
    for id in ids {
        let analytic = grads.get(id).unwrap().clone();
        for k in 0..analytic.len() {
            // The padding row is pinned at zero and is not a free coordinate.
            if id == embedding && pad_row.contains(&k) {
                continue;
            }
            let orig = model.store.param(id).value.as_slice().unwrap()[k];
            model.store.param_mut(id).value.as_slice_mut().unwrap()[k] = orig + h;
            let up = model.mean_loss(&batch).unwrap();
            model.store.param_mut(id).value.as_slice_mut().unwrap()[k] = orig - h;
            let down = model.mean_loss(&batch).unwrap();
            model.store.param_mut(id).value.as_slice_mut().unwrap()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.as_slice().unwrap()[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
            checked += 1;
        }
    }
    if worst <= GRAD_TOL {
        Verdict::Pass(format!("{checked} coordinates, max relative error {worst:.2e}"))
    } else {
        Verdict::Fail(format!("max relative error {worst:.3e} > {GRAD_TOL:e}"))
    }
}

fn criterion_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let prepared = prepared_corpus(dir.path(), 2000, 300, 0.1);
    let counts: serde_json::Value = serde_json::from_slice(&std::fs::read(prepared.join("counts.json")).unwrap()).unwrap();
    let n = counts["train_total"].as_u64().unwrap();
    let embeddings = dir.path().join("vectors.txt");
    write_embeddings(&embeddings);
    let cnn = cnn_config(dir.path(), &prepared, &embeddings, 4);
    let encoder = dir.path().join("encoder.toml");
    std::fs::write(
        &encoder,
        format!(
            "[data]\ntrain = {:?}\ntest = {:?}\n[model]\nkind = \"finetune_general\"\ncheckpoint_id = {:?}\n\
             trainable_encoder_layers = 2\nhidden_size = 8\nmax_len = 32\ndropout = 0.1\n[train]\nepochs_max = 2\n\
             learning_rate = 0.001\n",
            prepared.join("train.tsv"),
            prepared.join("test.tsv"),
            fixture_checkpoint("tiny-general"),
        ),
    )
    .unwrap();
    let mut details = Vec::new();
    for (name, config) in [("cnn_static", &cnn), ("finetune_general", &encoder)] {
        let mut metrics = Vec::new();
        for run in ["first", "second"] {
            let out = dir.path().join(format!("{name}_{run}"));
            let r = drugsent(&["train", "--config", path_str(config), "--out", path_str(&out)]);
            if !r.status.success() {
                return Verdict::Fail(format!("{name} train failed: {}", stderr(&r)));
            }
            metrics.push((
                std::fs::read(out.join("metrics.json")).unwrap(),
                std::fs::read(out.join("model/weights.safetensors")).unwrap(),
            ));
        }
        if metrics[0].0 != metrics[1].0 {
            return Verdict::Fail(format!("{name}: metrics files differ"));
        }
        if metrics[0].1 != metrics[1].1 {
            return Verdict::Fail(format!("{name}: weights differ"));
        }
        details.push(name);
    }
    Verdict::Pass(format!("{n} training examples; metrics and weights byte-identical for {}", details.join(", ")))
}

/// Macro F1 of always predicting the majority class, from per-class counts.
fn majority_macro_f1(counts: [usize; 3]) -> f64 {
    let total: usize = counts.iter().sum();
    let majority = (0..3).max_by_key(|&c| counts[c]).unwrap();
    let precision = counts[majority] as f64 / total as f64;
    let f1 = 2.0 * precision / (precision + 1.0);
    f1 / 3.0
}

/// Prepares the official files at `fraction`, then trains and evaluates
/// all four models with default settings.
fn run_suite(fraction: f64) -> Result<BTreeMap<&'static str, f64>, String> {
    let (train, test) = uci_files()?;
    let vectors = env_path("DRUGSENT_W2V", "data/GoogleNews-vectors-negative300.bin");
    if !vectors.is_file() {
        return Err(format!("word vectors {} not found (set DRUGSENT_W2V)", vectors.display()));
    }
    for kind in ModelKind::ALL.into_iter().filter(|k| k.uses_encoder()) {
        let id = kind.default_checkpoint().unwrap();
        resolve_checkpoint(id).map_err(|e| e.to_string())?;
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let prepared = dir.path().join("prepared");
    let fraction_arg = fraction.to_string();
    let r = drugsent(&[
        "prepare",
        "--train-file",
        path_str(&train),
        "--test-file",
        path_str(&test),
        "--out",
        path_str(&prepared),
        "--fraction",
        &fraction_arg,
        "--seed",
        "42",
    ]);
    if !r.status.success() {
        return Err(format!("prepare failed: {}", stderr(&r)));
    }
    let mut scores = BTreeMap::new();
    for kind in ModelKind::ALL {
        let mut text = format!(
            "[data]\ntrain = {:?}\ntest = {:?}\n[model]\nkind = \"{kind}\"\n",
            prepared.join("train.tsv"),
            prepared.join("test.tsv")
        );
        if kind == ModelKind::CnnStatic {
            text.push_str(&format!("embeddings = {vectors:?}\n"));
        }
        let config = dir.path().join(format!("{kind}.toml"));
        std::fs::write(&config, text).map_err(|e| e.to_string())?;
        let out = dir.path().join(kind.as_str());
        let r = drugsent(&["train", "--config", path_str(&config), "--out", path_str(&out)]);
        if !r.status.success() {
            return Err(format!("{kind} training failed: {}", stderr(&r)));
        }
        let report = read_report(&out.join("metrics.json")).map_err(|e| e.to_string())?;
        scores.insert(kind.as_str(), report.macro_avg.f1);
    }
    Ok(scores)
}

fn criterion_desk_ordering() -> Verdict {
    let baseline = majority_macro_f1(TEST_COUNTS);
    if (baseline - MAJORITY_APPROX).abs() > MAJORITY_TOL {
        return Verdict::Fail(format!("majority baseline {baseline:.4} is not ~{MAJORITY_APPROX}"));
    }
    let f1 = match run_suite(0.05) {
        Ok(s) => s,
        Err(e) => return Verdict::Fail(format!("majority baseline {baseline:.4}; {e}")),
    };
    let (clinical, general, cnn, frozen) = (
        f1["finetune_clinical"],
        f1["finetune_general"],
        f1["cnn_static"],
        f1["frozen_encoder_head"],
    );
    let mut broken = Vec::new();
    if clinical < general - ORDERING_SLACK {
        broken.push("clinical >= general - 0.01");
    }
    if general <= cnn {
        broken.push("general > cnn");
    }
    if cnn <= frozen {
        broken.push("cnn > frozen");
    }
    if f1.values().any(|&v| v <= baseline) {
        broken.push("all above majority baseline");
    }
    let detail = format!(
        "clinical {clinical:.4}, general {general:.4}, cnn {cnn:.4}, frozen {frozen:.4}, baseline {baseline:.4}"
    );
    if broken.is_empty() {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(format!("{detail}; violated: {}", broken.join(", ")))
    }
}

fn criterion_full_scale() -> Verdict {
    if std::env::var("DRUGSENT_FULL_SCALE").as_deref() != Ok("1") {
        return Verdict::Skip("full-scale run is opt-in (DRUGSENT_FULL_SCALE=1)".into());
    }
    let f1 = match run_suite(1.0) {
        Ok(s) => s,
        Err(e) => return Verdict::Fail(e),
    };
    let mut lines = Vec::new();
    let mut ok = true;
    for (kind, want) in REPORTED_F1 {
        let got = f1[kind.as_str()];
        ok &= (got - want).abs() <= FULL_SCALE_TOL;
        lines.push(format!("{kind} {got:.4} (reported {want:.2})"));
    }
    if ok {
        Verdict::Pass(lines.join(", "))
    } else {
        Verdict::Fail(lines.join(", "))
    }
}

fn bucket_oracle(g: SentimentClass, a: SentimentClass, b: SentimentClass) -> Bucket {
    match (a == g, b == g) {
        (true, true) => Bucket::BothRight,
        (false, false) => Bucket::BothWrong,
        (false, true) => Bucket::AWrongBRight,
        (true, false) => Bucket::ARightBWrong,
    }
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const PIECES: [&str; 10] = ["plain", "\t", "\n", "\"", "|", "ü", "💊", " ", ",", "\\"];
    (0..rng.random_range(0..12)).map(|_| PIECES[rng.random_range(0..PIECES.len())]).collect()
}

fn criterion_analysis() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dir = tempfile::tempdir().unwrap();
    let classes = SentimentClass::ALL;
    for case in 0..300 {
        let n = rng.random_range(0..=50);
        let mut draw = || classes[rng.random_range(0..3)];
        let gold: Vec<_> = (0..n).map(|_| draw()).collect();
        let pa: Vec<_> = (0..n).map(|_| draw()).collect();
        let pb: Vec<_> = (0..n).map(|_| draw()).collect();

        let wrong: Vec<usize> = (0..n).filter(|&i| gold[i] != pa[i]).collect();
        let extreme = |g: SentimentClass, p: SentimentClass| {
            matches!((g.code(), p.code()), (0, 2) | (2, 0))
        };
        let severe: Vec<usize> = (0..n).filter(|&i| extreme(gold[i], pa[i])).collect();
        let got_wrong = misclassified_indices(&gold, &pa).unwrap();
        let got_severe = severe_errors(&gold, &pa).unwrap();
        if got_wrong != wrong || got_severe != severe {
            return Verdict::Fail(format!("case {case}: index sets disagree with enumeration"));
        }
        if !got_severe.iter().all(|i| got_wrong.contains(i)) {
            return Verdict::Fail(format!("case {case}: severe errors not a subset"));
        }

        let partition = disagreement_partition(&gold, &pa, &pb).unwrap();
        let mut seen = vec![0usize; n];
        for bucket in Bucket::ALL {
            for &i in partition.get(bucket) {
                seen[i] += 1;
                if bucket_oracle(gold[i], pa[i], pb[i]) != bucket {
                    return Verdict::Fail(format!("case {case}: index {i} in wrong bucket"));
                }
            }
        }
        if seen.iter().any(|&c| c != 1) {
            return Verdict::Fail(format!("case {case}: partition not disjoint-exhaustive"));
        }

        let ids: Vec<String> = (0..n).map(|i| format!("{case}-{i}{}", random_text(&mut rng))).collect();
        let texts: Vec<String> = (0..n).map(|_| random_text(&mut rng)).collect();
        let mut records = build_records(&ids, &texts, &gold, &pa, &pb).unwrap();
        for r in &mut records {
            let pick = rng.random_range(0..=PatternTag::ALL.len());
            r.pattern_tag = PatternTag::ALL.get(pick).copied();
        }
        let path = dir.path().join(format!("triage_{case}.tsv"));
        emit_triage_report(&records, &path, &TriageFilter::default(), &ModelNames::default()).unwrap();
        let back = ingest_triage(&path).unwrap();
        if back != records {
            return Verdict::Fail(format!("case {case}: triage report did not round-trip"));
        }
    }
    Verdict::Pass("300 random instances (n <= 50): subset, partition and round-trip hold".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        (1, "binning oracle", criterion_binning),
        (2, "official dataset counts", criterion_counts),
        (3, "metric oracle equivalence", criterion_metrics),
        (4, "CNN gradient check", criterion_gradients),
        (5, "training determinism", criterion_determinism),
        (6, "desk-scale model ordering", criterion_desk_ordering),
        (7, "full-scale reported scores", criterion_full_scale),
        (8, "analysis properties", criterion_analysis),
    ];
    let mut failed = 0;
    for (n, name, check) in criteria {
        let verdict = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Verdict::Fail(format!("panicked: {msg}"))
            });
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("criterion {n} [{tag}] {name}: {detail}");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
