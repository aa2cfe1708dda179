mod common;

use std::path::Path;

use common::*;
use drugsent::analysis::ingest_triage;
use drugsent::corpus::read_prepared;
use drugsent::metrics::read_report;

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&read(path)).unwrap()
}

#[test]
fn prepare_writes_counts_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train_raw.tsv");
    let test = dir.path().join("test_raw.tsv");
    let (neg, neu, pos) = write_raw(&train, 300, 1);
    write_raw(&test, 100, 2);
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let result = drugsent(&[
            "prepare",
            "--train-file",
            path_str(&train),
            "--test-file",
            path_str(&test),
            "--out",
            path_str(&out),
        ]);
        assert_ok(&result);
        let stdout = String::from_utf8(result.stdout).unwrap();
        assert!(stdout.contains(&format!("negative={neg}\tneutral={neu}\tpositive={pos}")), "{stdout}");
        outputs.push(out);
    }
    for file in ["train.tsv", "test.tsv", "counts.json"] {
        assert_eq!(read(&outputs[0].join(file)), read(&outputs[1].join(file)), "{file} differs");
    }
    let counts = json(&outputs[0].join("counts.json"));
    assert_eq!(counts["train"]["negative"], neg);
    assert_eq!(counts["train"]["neutral"], neu);
    assert_eq!(counts["train"]["positive"], pos);
    assert_eq!(counts["test_total"], 100);

    let examples = read_prepared(&outputs[0].join("train.tsv")).unwrap();
    assert_eq!(examples.len(), 300);
    assert!(examples[0].text.contains("it's fine"), "{}", examples[0].text);
    assert!(!examples[0].text.contains("&quot;"));

    let manifest = json(&outputs[0].join("run_manifest.json"));
    assert_eq!(manifest["command"], "prepare");
    assert_eq!(manifest["data_fingerprints"].as_object().unwrap().len(), 2);
    assert!(manifest["total_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn prepare_subsample_is_stratified() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = prepared_corpus(dir.path(), 1000, 500, 0.1);
    let counts = json(&prepared.join("counts.json"));
    assert_eq!(counts["train_total"], 100);
    assert_eq!(counts["train"]["negative"], 40);
    assert_eq!(counts["train"]["neutral"], 40);
    assert_eq!(counts["train"]["positive"], 20);
    assert_eq!(counts["test_total"], 50);
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.tsv");
    let out = dir.path().join("out");

    let r = drugsent(&["frobnicate"]);
    assert_eq!(r.status.code(), Some(2));
    let r = drugsent(&["prepare", "--train-file", "x"]);
    assert_eq!(r.status.code(), Some(2));

    let r = drugsent(&[
        "prepare",
        "--train-file",
        path_str(&missing),
        "--test-file",
        path_str(&missing),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.status.code(), Some(3), "{}", stderr(&r));
    assert!(stderr(&r).contains("nope.tsv"));

    let bad = dir.path().join("bad.tsv");
    write_raw(&bad, 20, 3);
    let text = std::fs::read_to_string(&bad).unwrap().replacen("\t1\tJanuary", "\t11\tJanuary", 1);
    std::fs::write(&bad, text).unwrap();
    let args = ["prepare", "--train-file", path_str(&bad), "--test-file", path_str(&bad), "--out", path_str(&out)];
    assert_eq!(drugsent(&args).status.code(), Some(3));
    let mut skipping = args.to_vec();
    skipping.push("--skip-bad-rows");
    assert_ok(&drugsent(&skipping));
    assert_eq!(read_prepared(&out.join("train.tsv")).unwrap().len(), 19);

    let config = dir.path().join("run.toml");
    std::fs::write(&config, "[model]\nkinds = \"cnn_static\"\n").unwrap();
    let r = drugsent(&["train", "--config", path_str(&config), "--out", path_str(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stderr(&r).contains("kinds"), "{}", stderr(&r));

    std::fs::write(&config, "[model]\nkind = \"cnn_static\"\n").unwrap();
    let r = drugsent(&["train", "--config", path_str(&config), "--out", path_str(&out)]);
    assert_eq!(r.status.code(), Some(2), "no training data is a usage error");

    let r = drugsent(&[
        "evaluate",
        "--model-dir",
        path_str(&missing),
        "--data",
        path_str(&missing),
        "--out",
        path_str(&out.join("r.json")),
    ]);
    assert_eq!(r.status.code(), Some(3));
}

#[test]
fn missing_encoder_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = prepared_corpus(dir.path(), 100, 100, 1.0);
    let config = dir.path().join("ft.toml");
    std::fs::write(
        &config,
        format!(
            "[data]\ntrain = {:?}\n[model]\nkind = \"finetune_general\"\ncheckpoint_id = \"no-such/checkpoint\"\n",
            prepared.join("train.tsv")
        ),
    )
    .unwrap();
    let r = std::process::Command::new(BIN)
        .args(["train", "--config", path_str(&config), "--out", path_str(&dir.path().join("o"))])
        .env("DRUGSENT_CHECKPOINT_DIR", dir.path())
        .env("HF_HOME", dir.path())
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(3), "{}", stderr(&r));
    assert!(stderr(&r).contains("no-such/checkpoint"));
}

#[test]
fn cnn_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = prepared_corpus(dir.path(), 400, 200, 1.0);
    let embeddings = dir.path().join("vectors.txt");
    write_embeddings(&embeddings);
    let config = cnn_config(dir.path(), &prepared, &embeddings, 6);
    let run_a = dir.path().join("run_a");
    assert_ok(&drugsent(&["train", "--config", path_str(&config), "--out", path_str(&run_a)]));
    for f in ["config.toml", "metrics.json", "predictions.tsv", "run_manifest.json", "model/manifest.toml"] {
        assert!(run_a.join(f).exists(), "{f} missing");
    }
    let metrics = read_report(&run_a.join("metrics.json")).unwrap();
    assert_eq!(metrics.n_examples, 200);
    assert!(metrics.macro_avg.f1 > 0.6, "synthetic task should be learnable: {}", metrics.macro_avg.f1);

    // The echoed config drives an identical run.
    let echoed = run_a.join("config.toml");
    let run_b = dir.path().join("run_b");
    assert_ok(&drugsent(&["train", "--config", path_str(&echoed), "--out", path_str(&run_b)]));
    assert_eq!(read(&run_a.join("metrics.json")), read(&run_b.join("metrics.json")));
    let ma = json(&run_a.join("run_manifest.json"));
    let mb = json(&run_b.join("run_manifest.json"));
    assert_eq!(ma["command"], "train");
    assert_eq!(ma["seed"], 42);
    assert!(ma["config_hash"].as_str().unwrap().len() == 64);
    assert_ne!(ma["config_hash"], mb["config_hash"], "output dirs differ");

    // evaluate on the saved checkpoint reproduces the training-time report.
    let report = dir.path().join("eval/report.json");
    assert_ok(&drugsent(&[
        "evaluate",
        "--model-dir",
        path_str(&run_a),
        "--data",
        path_str(&prepared.join("test.tsv")),
        "--out",
        path_str(&report),
    ]));
    assert_eq!(read(&report), read(&run_a.join("metrics.json")));
    assert!(dir.path().join("eval/report.run.json").exists());
    assert!(dir.path().join("eval/report.predictions.tsv").exists());

    // A weaker second model to compare against.
    let weak_config = dir.path().join("weak.toml");
    let text = std::fs::read_to_string(&config).unwrap().replace("epochs_max = 6", "epochs_max = 1");
    std::fs::write(&weak_config, text.replace("learning_rate = 0.01", "learning_rate = 0.0001")).unwrap();
    let weak = dir.path().join("weak");
    assert_ok(&drugsent(&["train", "--config", path_str(&weak_config), "--out", path_str(&weak)]));

    let cmp = dir.path().join("cmp");
    assert_ok(&drugsent(&[
        "compare",
        "--model-a",
        path_str(&weak.join("model")),
        "--model-b",
        path_str(&run_a.join("model")),
        "--data",
        path_str(&prepared.join("test.tsv")),
        "--out",
        path_str(&cmp),
        "--name-a",
        "weak",
        "--name-b",
        "strong",
    ]));
    let summary = json(&cmp.join("summary.json"));
    let buckets = summary["buckets"].as_object().unwrap();
    let total: u64 = buckets.values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 200);
    let records = ingest_triage(&cmp.join("triage.tsv")).unwrap();
    assert_eq!(records.len() as u64, 200 - buckets["both_right"].as_u64().unwrap());
    assert_eq!(summary["triage_rows"].as_u64().unwrap(), records.len() as u64);
    let md = std::fs::read_to_string(cmp.join("triage.md")).unwrap();
    assert!(md.contains("weak") && md.contains("strong"));

    // Reviewer fills tags, then report summarizes them.
    let tsv = std::fs::read_to_string(cmp.join("triage.tsv")).unwrap();
    let mut lines: Vec<String> = tsv.lines().map(str::to_owned).collect();
    let mut tagged = 0;
    for line in lines.iter_mut().skip(1).take(3) {
        let mut cells: Vec<&str> = line.split('\t').collect();
        cells[6] = "Contradictory language";
        *line = cells.join("\t");
        tagged += 1;
    }
    let edited = dir.path().join("edited.tsv");
    std::fs::write(&edited, lines.join("\n") + "\n").unwrap();
    let summary_md = dir.path().join("tags.md");
    assert_ok(&drugsent(&["report", "--triage", path_str(&edited), "--out", path_str(&summary_md)]));
    let text = std::fs::read_to_string(&summary_md).unwrap();
    assert!(text.contains(&format!("| ContradictoryLanguage | {tagged} |")), "{text}");

    let table = dir.path().join("table.md");
    assert_ok(&drugsent(&[
        "report",
        "--metrics",
        path_str(&run_a.join("metrics.json")),
        path_str(&weak.join("metrics.json")),
        "--out",
        path_str(&table),
    ]));
    let text = std::fs::read_to_string(&table).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.contains("| cnn_static |"));

    let r = drugsent(&["report", "--out", path_str(&table)]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn severe_filter_selects_only_severe_rows() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = prepared_corpus(dir.path(), 200, 200, 1.0);
    let embeddings = dir.path().join("vectors.txt");
    write_embeddings(&embeddings);
    let config = cnn_config(dir.path(), &prepared, &embeddings, 1);
    let run = dir.path().join("run");
    assert_ok(&drugsent(&["train", "--config", path_str(&config), "--out", path_str(&run)]));
    let model = run.join("model");
    let cmp = dir.path().join("cmp");
    assert_ok(&drugsent(&[
        "compare",
        "--model-a",
        path_str(&model),
        "--model-b",
        path_str(&model),
        "--data",
        path_str(&prepared.join("test.tsv")),
        "--out",
        path_str(&cmp),
        "--severity",
        "severe",
    ]));
    let records = ingest_triage(&cmp.join("triage.tsv")).unwrap();
    let summary = json(&cmp.join("summary.json"));
    assert_eq!(records.len() as u64, summary["severe_errors_a"].as_u64().unwrap());
    assert!(records.iter().all(|r| r.severity.as_str() == "severe"));
    assert_eq!(summary["buckets"]["a_wrong_b_right"], 0);
}

#[test]
fn encoder_pipeline_with_local_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = prepared_corpus(dir.path(), 100, 100, 1.0);
    for (kind, checkpoint, layers) in [
        ("finetune_general", "tiny-general", 2),
        ("finetune_clinical", "tiny-clinical", 2),
        ("frozen_encoder_head", "tiny-general", 0),
    ] {
        let config = dir.path().join(format!("{kind}.toml"));
        std::fs::write(
            &config,
            format!(
                "[data]\ntrain = {:?}\ntest = {:?}\n[model]\nkind = \"{kind}\"\ncheckpoint_id = {:?}\n\
                 trainable_encoder_layers = {layers}\nhidden_size = 8\nmax_len = 32\n[train]\nepochs_max = 2\n\
                 learning_rate = 0.001\n",
                prepared.join("train.tsv"),
                prepared.join("test.tsv"),
                fixture_checkpoint(checkpoint),
            ),
        )
        .unwrap();
        let out = dir.path().join(kind);
        assert_ok(&drugsent(&["train", "--config", path_str(&config), "--out", path_str(&out)]));
        let report = dir.path().join(format!("{kind}.json"));
        assert_ok(&drugsent(&[
            "evaluate",
            "--model-dir",
            path_str(&out.join("model")),
            "--data",
            path_str(&prepared.join("test.tsv")),
            "--out",
            path_str(&report),
        ]));
        assert_eq!(read(&report), read(&out.join("metrics.json")), "{kind}");
        assert_eq!(read_report(&report).unwrap().model_id, kind);
        assert!(out.join("model/vocab.txt").exists());
    }
}

#[test]
fn diverging_training_exits_with_runtime_code() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = prepared_corpus(dir.path(), 100, 100, 1.0);
    let embeddings = dir.path().join("vectors.txt");
    write_embeddings(&embeddings);
    let config = cnn_config(dir.path(), &prepared, &embeddings, 3);
    let text = std::fs::read_to_string(&config).unwrap().replace("learning_rate = 0.01", "learning_rate = 1e300");
    std::fs::write(&config, text).unwrap();
    let r = drugsent(&["train", "--config", path_str(&config), "--out", path_str(&dir.path().join("o"))]);
    assert_eq!(r.status.code(), Some(4), "{}", stderr(&r));
    assert!(stderr(&r).contains("non-finite"), "{}", stderr(&r));
}
