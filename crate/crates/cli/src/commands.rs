//! The five pipeline stages. Each reads its inputs from files and writes its
//! outputs plus a run manifest; nothing is shared between invocations.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use drugsent::analysis::{
    build_records, disagreement_partition, emit_triage_report, ingest_triage, severe_errors, tag_summary,
    write_tag_summary, Bucket, ModelNames, Severity, TriageFilter,
};
use drugsent::corpus::{
    class_counts, load_raw, read_prepared, stratified_subsample, write_prepared, ClassCounts, LabeledExample,
    RowPolicy, SentimentClass,
};
use drugsent::encoders::{load_static_embeddings_with, static_tokens, EncodedExample, LoadEmbeddingOptions};
use drugsent::metrics::{read_report, round_half_up_2, write_report, EvaluationReport};
use drugsent::models::{build_cnn, build_finetuned_encoder, build_frozen_encoder_head, Model, ModelKind};
use drugsent::seeding::set_global_seed;
use drugsent::trainer::{data_fingerprint, load_checkpoint, save_checkpoint, train, MANIFEST_FILE};
use serde::Serialize;

use crate::config::RunConfig;
use crate::run_manifest::{RunManifest, RUN_MANIFEST_FILE};

/// A bad flag combination or a config that cannot drive the stage.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn parent_dir(path: &Path) -> anyhow::Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

/// Sibling path of a file output, e.g. `metrics.json` → `metrics.run.json`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Serialize)]
struct CountSummary {
    train: ClassCounts,
    train_total: usize,
    test: ClassCounts,
    test_total: usize,
}

pub struct PrepareArgs<'a> {
    pub train_file: &'a Path,
    pub test_file: &'a Path,
    pub out: &'a Path,
    pub fraction: f64,
    pub seed: u64,
    pub skip_bad_rows: bool,
}

fn label_all(path: &Path, policy: RowPolicy) -> anyhow::Result<Vec<LabeledExample>> {
    let raw = load_raw(path, policy)?;
    Ok(raw.iter().map(LabeledExample::from_raw).collect::<Result<_, _>>()?)
}

pub fn prepare(args: PrepareArgs<'_>) -> anyhow::Result<()> {
    let mut run = RunManifest::start("prepare");
    run.seed(args.seed);
    set_global_seed(args.seed);
    let policy = if args.skip_bad_rows { RowPolicy::Skip } else { RowPolicy::Abort };
    run.input(args.train_file)?;
    run.input(args.test_file)?;
    let mut train_set = label_all(args.train_file, policy)?;
    let mut test_set = label_all(args.test_file, policy)?;
    run.phase("load");
    if args.fraction < 1.0 {
        train_set = stratified_subsample(&train_set, args.fraction, args.seed)?;
        test_set = stratified_subsample(&test_set, args.fraction, args.seed)?;
    } else if args.fraction != 1.0 {
        return Err(drugsent::DataError::InvalidFraction(args.fraction).into());
    }
    create_dir(args.out)?;
    let train_path = args.out.join("train.tsv");
    let test_path = args.out.join("test.tsv");
    write_prepared(&train_path, &train_set)?;
    write_prepared(&test_path, &test_set)?;
    let summary = CountSummary {
        train: class_counts(&train_set),
        train_total: train_set.len(),
        test: class_counts(&test_set),
        test_total: test_set.len(),
    };
    let counts_path = args.out.join("counts.json");
    let json = serde_json::to_string_pretty(&summary).expect("counts serialize");
    std::fs::write(&counts_path, json + "\n").with_context(|| format!("writing {}", counts_path.display()))?;
    run.phase("write");
    for p in [&train_path, &test_path, &counts_path] {
        run.output(p);
    }
    run.write(&args.out.join(RUN_MANIFEST_FILE))?;
    for (name, c) in [("train", summary.train), ("test", summary.test)] {
        println!(
            "{name}\tnegative={}\tneutral={}\tpositive={}\ttotal={}",
            c.negative,
            c.neutral,
            c.positive,
            c.total()
        );
    }
    Ok(())
}

fn build_model(config: &RunConfig, corpus: &[&[LabeledExample]]) -> anyhow::Result<Model> {
    let model_config = config.model.clone();
    Ok(match model_config.kind {
        ModelKind::CnnStatic => {
            let path = model_config
                .embeddings
                .clone()
                .ok_or_else(|| usage("model.embeddings is required for cnn_static"))?;
            // Only rows for corpus words are kept; pretrained files are huge.
            let keep: HashSet<String> = corpus
                .iter()
                .flat_map(|set| set.iter())
                .flat_map(|e| static_tokens(&e.text))
                .collect();
            let options = LoadEmbeddingOptions {
                format: None,
                keep: Some(&keep),
            };
            let table = load_static_embeddings_with(Path::new(&path), model_config.seed, &options)?;
            log::info!("embedding table: {} rows, dimension {}", table.vocab.rows(), table.dimension());
            build_cnn(model_config, table)?
        }
        ModelKind::FrozenEncoderHead => build_frozen_encoder_head(model_config)?,
        ModelKind::FinetuneGeneral | ModelKind::FinetuneClinical => build_finetuned_encoder(model_config)?,
    })
}

fn encode_all(model: &Model, examples: &[LabeledExample]) -> Vec<EncodedExample> {
    examples.iter().map(|e| model.encode(&e.text).with_label(e.label)).collect()
}

fn predict_all(model: &Model, examples: &[LabeledExample]) -> anyhow::Result<Vec<SentimentClass>> {
    Ok(model.predict(&encode_all(model, examples))?)
}

fn write_predictions(path: &Path, examples: &[LabeledExample], pred: &[SentimentClass]) -> anyhow::Result<()> {
    let mut out = String::from("unique_id\tgold\tpred\n");
    for (e, p) in examples.iter().zip(pred) {
        writeln!(out, "{}\t{}\t{}", e.unique_id, e.label.code(), p.code()).expect("writing to a string");
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub struct TrainArgs<'a> {
    pub config: &'a Path,
    pub data: Option<&'a Path>,
    pub out: Option<&'a Path>,
}

pub fn train_cmd(args: TrainArgs<'_>) -> anyhow::Result<()> {
    let mut run = RunManifest::start("train");
    let mut config = RunConfig::parse_config(args.config)?;
    if let Some(d) = args.data {
        config.data.train = Some(d.to_owned());
    }
    if let Some(o) = args.out {
        config.output.dir = Some(o.to_owned());
    }
    let train_path = config
        .data
        .train
        .clone()
        .ok_or_else(|| usage("no training data: set data.train or pass --data"))?;
    let out = config
        .output
        .dir
        .clone()
        .ok_or_else(|| usage("no output directory: set output.dir or pass --out"))?;
    let resolved = config.to_toml();
    run.config(&resolved, config.model.seed);
    set_global_seed(config.model.seed);
    create_dir(&out)?;
    let config_path = out.join("config.toml");
    std::fs::write(&config_path, &resolved).with_context(|| format!("writing {}", config_path.display()))?;
    run.output(&config_path);

    run.input(&train_path)?;
    let mut train_set = read_prepared(&train_path)?;
    if config.data.fraction < 1.0 {
        train_set = stratified_subsample(&train_set, config.data.fraction, config.data.seed)?;
    }
    let test_set = match &config.data.test {
        Some(p) => {
            run.input(p)?;
            Some(read_prepared(p)?)
        }
        None => None,
    };
    log::info!("{} training examples from {}", train_set.len(), train_path.display());
    let mut corpus: Vec<&[LabeledExample]> = vec![&train_set];
    if let Some(t) = &test_set {
        corpus.push(t);
    }
    let model = build_model(&config, &corpus)?;
    let encoded = encode_all(&model, &train_set);
    run.phase("load");

    let (model, history) = train(model, &encoded, &config.train)?;
    run.phase("train");
    let model_dir = out.join("model");
    save_checkpoint(
        &model,
        &model_dir,
        &config.train,
        Some(&history),
        &data_fingerprint(&train_path)?,
    )?;
    run.output(&model_dir);
    log::info!(
        "trained {} epochs, kept epoch {}",
        history.stopped_epoch,
        history.best_epoch
    );

    if let Some(test_set) = &test_set {
        let pred = predict_all(&model, test_set)?;
        let gold: Vec<_> = test_set.iter().map(|e| e.label).collect();
        let report = EvaluationReport::from_predictions(model.kind().as_str(), "test", &gold, &pred)?;
        let metrics_path = out.join("metrics.json");
        write_report(&report, &metrics_path)?;
        let pred_path = out.join("predictions.tsv");
        write_predictions(&pred_path, test_set, &pred)?;
        run.output(&metrics_path);
        run.output(&pred_path);
        run.phase("evaluate");
        print_macro(&report);
    }
    run.write(&out.join(RUN_MANIFEST_FILE))?;
    Ok(())
}

fn print_macro(report: &EvaluationReport) {
    let m = &report.macro_avg;
    println!(
        "{}\t{}\tn={}\tprecision={}\trecall={}\tf1={}",
        report.model_id,
        report.split,
        report.n_examples,
        round_half_up_2(m.precision),
        round_half_up_2(m.recall),
        round_half_up_2(m.f1)
    );
}

/// Accepts a checkpoint directory or a `train` output directory holding one.
fn checkpoint_dir(path: &Path) -> PathBuf {
    let nested = path.join("model");
    if !path.join(MANIFEST_FILE).exists() && nested.join(MANIFEST_FILE).exists() {
        nested
    } else {
        path.to_owned()
    }
}

fn load_model(path: &Path, run: &mut RunManifest) -> anyhow::Result<Model> {
    let dir = checkpoint_dir(path);
    let (model, manifest) = load_checkpoint(&dir)?;
    run.input(&dir.join(MANIFEST_FILE))?;
    log::info!("loaded {} checkpoint from {}", manifest.kind, dir.display());
    Ok(model)
}

pub struct EvaluateArgs<'a> {
    pub model_dir: &'a Path,
    pub data: &'a Path,
    pub out: &'a Path,
    pub split: &'a str,
    pub model_id: Option<&'a str>,
}

pub fn evaluate(args: EvaluateArgs<'_>) -> anyhow::Result<()> {
    let mut run = RunManifest::start("evaluate");
    let model = load_model(args.model_dir, &mut run)?;
    run.seed(model.config.seed);
    set_global_seed(model.config.seed);
    run.input(args.data)?;
    let examples = read_prepared(args.data)?;
    run.phase("load");
    let pred = predict_all(&model, &examples)?;
    let gold: Vec<_> = examples.iter().map(|e| e.label).collect();
    let id = args.model_id.unwrap_or(model.kind().as_str());
    let report = EvaluationReport::from_predictions(id, args.split, &gold, &pred)?;
    run.phase("predict");
    parent_dir(args.out)?;
    write_report(&report, args.out)?;
    let pred_path = sibling(args.out, "predictions.tsv");
    write_predictions(&pred_path, &examples, &pred)?;
    run.output(args.out);
    run.output(&pred_path);
    run.write(&sibling(args.out, "run.json"))?;
    print_macro(&report);
    Ok(())
}

pub struct CompareArgs<'a> {
    pub model_a: &'a Path,
    pub model_b: &'a Path,
    pub data: &'a Path,
    pub out: &'a Path,
    pub names: ModelNames,
    pub severity: Option<Severity>,
    pub buckets: Vec<Bucket>,
}

#[derive(Serialize)]
struct ComparisonSummary {
    model_a: String,
    model_b: String,
    n_examples: usize,
    buckets: BTreeMap<&'static str, usize>,
    severe_errors_a: usize,
    severe_errors_b: usize,
    macro_f1_a: f64,
    macro_f1_b: f64,
    triage_rows: usize,
}

pub fn compare(args: CompareArgs<'_>) -> anyhow::Result<()> {
    let mut run = RunManifest::start("compare");
    let model_a = load_model(args.model_a, &mut run)?;
    let model_b = load_model(args.model_b, &mut run)?;
    run.input(args.data)?;
    let examples = read_prepared(args.data)?;
    run.phase("load");
    let pred_a = predict_all(&model_a, &examples)?;
    let pred_b = predict_all(&model_b, &examples)?;
    run.phase("predict");
    let gold: Vec<_> = examples.iter().map(|e| e.label).collect();
    let ids: Vec<String> = examples.iter().map(|e| e.unique_id.clone()).collect();
    let texts: Vec<String> = examples.iter().map(|e| e.text.clone()).collect();
    let records = build_records(&ids, &texts, &gold, &pred_a, &pred_b)?;
    let filter = if args.severity.is_none() && args.buckets.is_empty() {
        TriageFilter::errors()
    } else {
        TriageFilter {
            severity: args.severity,
            buckets: (!args.buckets.is_empty()).then(|| args.buckets.clone()),
        }
    };
    create_dir(args.out)?;
    let paths = emit_triage_report(&records, &args.out.join("triage.tsv"), &filter, &args.names)?;
    let partition = disagreement_partition(&gold, &pred_a, &pred_b)?;
    let report_a = EvaluationReport::from_predictions(&args.names.a, "compare", &gold, &pred_a)?;
    let report_b = EvaluationReport::from_predictions(&args.names.b, "compare", &gold, &pred_b)?;
    let summary = ComparisonSummary {
        model_a: args.names.a.clone(),
        model_b: args.names.b.clone(),
        n_examples: examples.len(),
        buckets: Bucket::ALL.iter().map(|b| (b.as_str(), partition.get(*b).len())).collect(),
        severe_errors_a: severe_errors(&gold, &pred_a)?.len(),
        severe_errors_b: severe_errors(&gold, &pred_b)?.len(),
        macro_f1_a: report_a.macro_avg.f1,
        macro_f1_b: report_b.macro_avg.f1,
        triage_rows: paths.written,
    };
    let summary_path = args.out.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&summary_path, json + "\n").with_context(|| format!("writing {}", summary_path.display()))?;
    for p in [&paths.table, &paths.markdown, &summary_path] {
        run.output(p);
    }
    run.phase("write");
    run.write(&args.out.join(RUN_MANIFEST_FILE))?;
    println!(
        "{} triage rows; both_right={} both_wrong={} a_wrong_b_right={} a_right_b_wrong={}",
        paths.written,
        partition.both_right.len(),
        partition.both_wrong.len(),
        partition.a_wrong_b_right.len(),
        partition.a_right_b_wrong.len()
    );
    Ok(())
}

pub enum ReportInput<'a> {
    Triage(&'a Path),
    Metrics(&'a [PathBuf]),
}

pub fn report(input: ReportInput<'_>, out: &Path) -> anyhow::Result<()> {
    let mut run = RunManifest::start("report");
    parent_dir(out)?;
    match input {
        ReportInput::Triage(path) => {
            run.input(path)?;
            let records = ingest_triage(path)?;
            let summary = tag_summary(&records);
            let untagged = records.iter().filter(|r| r.pattern_tag.is_none()).count();
            write_tag_summary(&summary, untagged, out)?;
        }
        ReportInput::Metrics(paths) => {
            let mut table = String::from("| Model | Precision | Recall | F1 |\n|---|---|---|---|\n");
            for path in paths {
                run.input(path)?;
                let r = read_report(path)?;
                let m = &r.macro_avg;
                writeln!(
                    table,
                    "| {} | {} | {} | {} |",
                    r.model_id,
                    round_half_up_2(m.precision),
                    round_half_up_2(m.recall),
                    round_half_up_2(m.f1)
                )
                .expect("writing to a string");
            }
            std::fs::write(out, table).with_context(|| format!("writing {}", out.display()))?;
        }
    }
    run.output(out);
    run.write(&sibling(out, "run.json"))?;
    print!("{}", std::fs::read_to_string(out).with_context(|| format!("reading {}", out.display()))?);
    Ok(())
}
