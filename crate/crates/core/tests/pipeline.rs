//! End-to-end command-line tests: every stage runs through the real
//! argument surface, artifacts land on disk, and failures exit with a
//! diagnostic.

use std::path::{Path, PathBuf};
use std::process::Command;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_tgcap")
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Workspace {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("config.json"),
            r#"{
  "seed": 41,
  "topics": 3,
  "lda": {"alpha": 0.5, "iterations": 120, "burn_in": 40, "sample_lag": 8},
  "predictor": {"hidden": 24, "epochs": 40, "batch_size": 16, "learning_rate": 0.003},
  "captioner": {"variant": "tgm", "hidden": 24, "factors": 12, "epochs": 10,
                "batch_size": 16, "learning_rate": 0.005, "dropout": 0.0}
}"#,
        )
        .unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> std::process::Output {
        Command::new(binary())
            .arg("--config")
            .arg(self.path("config.json"))
            .args(args)
            .output()
            .expect("binary runs")
    }

    fn run_ok(&self, args: &[&str]) {
        let output = self.run(args);
        assert!(
            output.status.success(),
            "command {:?} failed:\n{}",
            args,
            String::from_utf8_lossy(&output.stderr)
        );
    }
}

fn arg(path: &Path) -> String {
    path.display().to_string()
}

fn read_lines(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn full_pipeline_end_to_end() {
    let ws = Workspace::new();
    ws.run_ok(&[
        "synth",
        "--out",
        &arg(&ws.path("corpus.jsonl")),
        "--manifest-out",
        &arg(&ws.path("manifest.json")),
        "--truth-out",
        &arg(&ws.path("truth.jsonl")),
        "--videos-per-topic",
        "20",
        "--captions-per-video",
        "3",
        "--test-per-topic",
        "4",
        "--template-captions",
    ]);
    ws.run_ok(&[
        "mine-topics",
        "--corpus",
        &arg(&ws.path("corpus.jsonl")),
        "--out",
        &arg(&ws.path("topics.tgc")),
    ]);
    ws.run_ok(&[
        "show-topics",
        "--model",
        &arg(&ws.path("topics.tgc")),
        "--json",
    ]);
    ws.run_ok(&[
        "cooccurrence",
        "--model",
        &arg(&ws.path("topics.tgc")),
        "--corpus",
        &arg(&ws.path("corpus.jsonl")),
        "--out",
        &arg(&ws.path("cooccurrence.json")),
    ]);
    ws.run_ok(&[
        "train-predictor",
        "--corpus",
        &arg(&ws.path("corpus.jsonl")),
        "--manifest",
        &arg(&ws.path("manifest.json")),
        "--topic-model",
        &arg(&ws.path("topics.tgc")),
        "--out",
        &arg(&ws.path("predictor.tgc")),
    ]);
    ws.run_ok(&[
        "predict-topics",
        "--corpus",
        &arg(&ws.path("corpus.jsonl")),
        "--manifest",
        &arg(&ws.path("manifest.json")),
        "--predictor",
        &arg(&ws.path("predictor.tgc")),
        "--topic-model",
        &arg(&ws.path("topics.tgc")),
        "--out",
        &arg(&ws.path("predicted.jsonl")),
    ]);
    ws.run_ok(&[
        "train-captioner",
        "--corpus",
        &arg(&ws.path("corpus.jsonl")),
        "--manifest",
        &arg(&ws.path("manifest.json")),
        "--topic-source",
        "teacher",
        "--topic-model",
        &arg(&ws.path("topics.tgc")),
        "--out",
        &arg(&ws.path("captioner.tgc")),
    ]);
    ws.run_ok(&[
        "caption",
        "--corpus",
        &arg(&ws.path("corpus.jsonl")),
        "--model",
        &arg(&ws.path("captioner.tgc")),
        "--topic-source",
        "predicted",
        "--topics-file",
        &arg(&ws.path("predicted.jsonl")),
        "--out",
        &arg(&ws.path("captions.jsonl")),
    ]);
    ws.run_ok(&[
        "evaluate",
        "--corpus",
        &arg(&ws.path("corpus.jsonl")),
        "--captions",
        &arg(&ws.path("captions.jsonl")),
        "--out",
        &arg(&ws.path("report.json")),
        "--text",
    ]);

    // Predictions have the documented shape.
    let predictions = read_lines(&ws.path("predicted.jsonl"));
    assert_eq!(predictions.len(), 12);
    for line in &predictions {
        let topics = line["topics"].as_array().unwrap();
        assert_eq!(topics.len(), 3);
        let sum: f64 = topics.iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(!line["sources"].as_array().unwrap().is_empty());
    }
    // Captions have the documented shape.
    let captions = read_lines(&ws.path("captions.jsonl"));
    assert_eq!(captions.len(), 12);
    for line in &captions {
        assert!(line["caption"].is_string());
        assert!(line["log_prob"].is_number());
        assert_eq!(line["variant"], "tgm");
    }
    // The report carries all three corpus metrics.
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.path("report.json")).unwrap()).unwrap();
    for key in ["bleu4", "rouge_l", "cider", "unique_hypothesis_words"] {
        assert!(report.get(key).is_some(), "report lacks {key}");
    }
}

#[test]
fn beam_width_one_matches_greedy_decoding() {
    let ws = Workspace::new();
    ws.run_ok(&[
        "synth",
        "--out",
        &arg(&ws.path("corpus.jsonl")),
        "--manifest-out",
        &arg(&ws.path("manifest.json")),
        "--videos-per-topic",
        "12",
        "--captions-per-video",
        "3",
        "--test-per-topic",
        "3",
        "--template-captions",
    ]);
    ws.run_ok(&[
        "train-captioner",
        "--corpus",
        &arg(&ws.path("corpus.jsonl")),
        "--manifest",
        &arg(&ws.path("manifest.json")),
        "--variant",
        "vanilla",
        "--topic-source",
        "none",
        "--epochs",
        "5",
        "--out",
        &arg(&ws.path("captioner.tgc")),
    ]);
    ws.run_ok(&[
        "caption",
        "--corpus",
        &arg(&ws.path("corpus.jsonl")),
        "--model",
        &arg(&ws.path("captioner.tgc")),
        "--topic-source",
        "none",
        "--beam-width",
        "1",
        "--out",
        &arg(&ws.path("beam1.jsonl")),
    ]);

    // Greedy decoding through the library on the same checkpoint.
    let checkpoint = tgcap::checkpoint::load_checkpoint(&ws.path("captioner.tgc")).unwrap();
    let (params, tokens) = tgcap::checkpoint::caption_model_from_checkpoint(&checkpoint).unwrap();
    let vocab = tgcap::corpus::Vocabulary::from_tokens(tokens, 3).unwrap();
    let manifest = tgcap::corpus::FeatureManifest::new(
        checkpoint
            .meta
            .manifest
            .clone()
            .unwrap()
            .into_iter()
            .collect(),
    )
    .unwrap();
    let records = tgcap::corpus::load_records(&ws.path("corpus.jsonl")).unwrap();
    let beam1 = read_lines(&ws.path("beam1.jsonl"));
    for line in beam1 {
        let id = line["video_id"].as_str().unwrap();
        let record = records.iter().find(|r| r.video_id == id).unwrap();
        let features = tgcap::predictor::assemble_features(record, &manifest).unwrap();
        let greedy = tgcap::captioner::greedy_decode(&params, &features, None, 30).unwrap();
        let caption: Vec<&str> = greedy.words().iter().map(|&t| vocab.token(t)).collect();
        assert_eq!(line["caption"].as_str().unwrap(), caption.join(" "));
        assert!((line["log_prob"].as_f64().unwrap() - greedy.log_prob).abs() < 1e-12);
    }
}

#[test]
fn ablation_emits_one_report_per_topic_count() {
    let ws = Workspace::new();
    ws.run_ok(&[
        "synth",
        "--out",
        &arg(&ws.path("corpus.jsonl")),
        "--manifest-out",
        &arg(&ws.path("manifest.json")),
        "--videos-per-topic",
        "12",
        "--captions-per-video",
        "3",
        "--test-per-topic",
        "3",
        "--template-captions",
    ]);
    let output = ws.run(&[
        "ablate-topics",
        "--corpus",
        &arg(&ws.path("corpus.jsonl")),
        "--manifest",
        &arg(&ws.path("manifest.json")),
        "--k-list",
        "2,3",
        "--out-dir",
        &arg(&ws.path("ablate")),
    ]);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    for k in [2, 3] {
        let report = ws.path(&format!("ablate/k{k}/report.json"));
        assert!(report.exists(), "missing report for K={k}");
        let value: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
        assert!(value["cider"].is_number());
    }
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("BLEU@4"), "missing sweep summary");
}

#[test]
fn failures_exit_nonzero_with_one_line_diagnostic() {
    let ws = Workspace::new();
    // Missing corpus file.
    let output = ws.run(&[
        "mine-topics",
        "--corpus",
        &arg(&ws.path("nope.jsonl")),
        "--out",
        &arg(&ws.path("topics.tgc")),
    ]);
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.starts_with("error:"), "stderr: {stderr}");
    assert_eq!(stderr.trim().lines().count(), 1, "stderr: {stderr}");

    // Unknown config key.
    std::fs::write(ws.path("bad.json"), r#"{"sseed": 1}"#).unwrap();
    let output = Command::new(binary())
        .arg("--config")
        .arg(ws.path("bad.json"))
        .args(["gradcheck"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("sseed"));

    // Corrupted checkpoint magic.
    ws.run_ok(&[
        "synth",
        "--out",
        &arg(&ws.path("corpus.jsonl")),
        "--manifest-out",
        &arg(&ws.path("manifest.json")),
        "--videos-per-topic",
        "8",
        "--captions-per-video",
        "2",
        "--test-per-topic",
        "2",
    ]);
    ws.run_ok(&[
        "mine-topics",
        "--corpus",
        &arg(&ws.path("corpus.jsonl")),
        "--out",
        &arg(&ws.path("topics.tgc")),
        "--iterations",
        "30",
        "--burn-in",
        "10",
        "--sample-lag",
        "4",
    ]);
    let mut bytes = std::fs::read(ws.path("topics.tgc")).unwrap();
    bytes[0] = b'Z';
    std::fs::write(ws.path("topics.tgc"), bytes).unwrap();
    let output = ws.run(&["show-topics", "--model", &arg(&ws.path("topics.tgc"))]);
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("magic"));
}

#[test]
fn gradcheck_command_passes() {
    let ws = Workspace::new();
    let output = ws.run(&["gradcheck"]);
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert_eq!(stdout.lines().filter(|l| l.contains("PASS")).count(), 8);
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn worker_count_does_not_change_outputs() {
    let ws = Workspace::new();
    ws.run_ok(&[
        "synth",
        "--out",
        &arg(&ws.path("corpus.jsonl")),
        "--manifest-out",
        &arg(&ws.path("manifest.json")),
        "--videos-per-topic",
        "10",
        "--captions-per-video",
        "3",
        "--test-per-topic",
        "3",
    ]);
    ws.run_ok(&[
        "mine-topics",
        "--corpus",
        &arg(&ws.path("corpus.jsonl")),
        "--out",
        &arg(&ws.path("topics.tgc")),
        "--iterations",
        "60",
        "--burn-in",
        "20",
        "--sample-lag",
        "5",
    ]);
    ws.run_ok(&[
        "train-predictor",
        "--corpus",
        &arg(&ws.path("corpus.jsonl")),
        "--manifest",
        &arg(&ws.path("manifest.json")),
        "--topic-model",
        &arg(&ws.path("topics.tgc")),
        "--epochs",
        "10",
        "--out",
        &arg(&ws.path("predictor.tgc")),
    ]);
    for (workers, out) in [("1", "w1.jsonl"), ("4", "w4.jsonl")] {
        ws.run_ok(&[
            "--workers",
            workers,
            "predict-topics",
            "--corpus",
            &arg(&ws.path("corpus.jsonl")),
            "--manifest",
            &arg(&ws.path("manifest.json")),
            "--predictor",
            &arg(&ws.path("predictor.tgc")),
            "--topic-model",
            &arg(&ws.path("topics.tgc")),
            "--out",
            &arg(&ws.path(out)),
        ]);
    }
    assert_eq!(
        std::fs::read(ws.path("w1.jsonl")).unwrap(),
        std::fs::read(ws.path("w4.jsonl")).unwrap(),
        "worker count changed prediction bytes"
    );
}

/// Library-level pipeline over irregular corpora: rare words that fall
/// out of the vocabulary, punctuation-only captions, missing
/// modalities, and videos without speech. Exercises every stage for
/// panics and malformed outputs rather than for quality.
#[test]
fn irregular_corpora_run_clean() {
    use std::collections::BTreeMap;
    use tgcap::captioner::{
        beam_search, caption_examples, train_captioner, CaptionDims, CaptionVariant, TrainConfig,
    };
    use tgcap::corpus::{
        build_vocabulary, tokenize, video_document, FeatureManifest, Split, StopwordSet,
        VideoRecord,
    };
    use tgcap::metrics::{evaluate_corpus, EvalPair};
    use tgcap::numerics::Rng;
    use tgcap::predictor::{
        assemble_features, predict_general, train_general_predictor, PredictorTrainConfig,
    };
    use tgcap::topics::{lda_fit, LdaConfig};

    let pool = [
        "cat", "dog", "runs", "sings", "fast", "red", "ball", "man", "woman", "plays",
    ];
    for seed in [3u64, 17, 92] {
        let mut rng = Rng::seed_from_u64(seed);
        let manifest = FeatureManifest::new(vec![("a".into(), 2), ("b".into(), 3)]).unwrap();
        let mut records = Vec::new();
        for i in 0..14 {
            let split = if i < 10 { Split::Train } else { Split::Test };
            let mut captions = Vec::new();
            for _ in 0..2 + rng.below(2) {
                let len = 2 + rng.below(6);
                let mut words: Vec<String> = (0..len)
                    .map(|_| pool[rng.below(pool.len())].to_string())
                    .collect();
                // Rare words fall below the count threshold.
                if rng.below(4) == 0 {
                    words.push(format!("rare{}{}", seed, rng.below(1000)));
                }
                captions.push(words.join(" "));
            }
            if i == 2 {
                captions.push("!!! ...".to_string()); // tokenizes to nothing
            }
            let mut features = BTreeMap::new();
            features.insert("a".to_string(), vec![rng.normal(), rng.normal()]);
            if i % 3 != 0 {
                features.insert(
                    "b".to_string(),
                    vec![rng.normal(), rng.normal(), rng.normal()],
                );
            }
            records.push(VideoRecord {
                video_id: format!("v{i:02}"),
                split,
                category: Some((i % 4) as u32),
                captions,
                features,
                speech: if i % 2 == 0 {
                    Some("cat dog runs sings fast red ball man woman plays cat dog".into())
                } else {
                    None
                },
            });
        }

        let vocab = build_vocabulary(&records, 3).unwrap();
        let stop = StopwordSet::default_english();
        let train: Vec<VideoRecord> = records
            .iter()
            .filter(|r| r.split == Split::Train)
            .cloned()
            .collect();
        let docs: Vec<_> = train
            .iter()
            .map(|r| (r.video_id.clone(), video_document(r, &vocab, &stop)))
            .collect();
        let lda = LdaConfig {
            topics: 2,
            alpha: Some(0.5),
            eta: 0.01,
            iterations: 40,
            burn_in: 10,
            sample_lag: 3,
        };
        let model = lda_fit(&docs, vocab.len(), &lda, &mut rng).unwrap();

        let mut teachers = BTreeMap::new();
        for r in &train {
            teachers.insert(r.video_id.clone(), model.teacher_distribution(&r.video_id).unwrap());
        }
        let student = train_general_predictor(
            &train,
            &teachers,
            &manifest,
            &PredictorTrainConfig {
                hidden_dim: 8,
                epochs: 5,
                batch_size: 4,
                learning_rate: 1e-3,
            },
            &mut rng,
        )
        .unwrap();

        let mut examples = Vec::new();
        for r in &train {
            let teacher = teachers[&r.video_id].clone();
            examples.extend(
                caption_examples(r, &manifest, &vocab, Some(teacher.probs()), 30).unwrap(),
            );
        }
        let dims = CaptionDims {
            variant: CaptionVariant::Tgm,
            hidden: 12,
            factors: 6,
            vocab: vocab.len(),
            feature_dim: manifest.total_dim(),
            topic_dim: 2,
        };
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 1e-3,
            dropout: 0.5,
            max_caption_len: 30,
            target_perplexity: None,
        };
        let (params, _) = train_captioner(dims, &examples, &cfg, &mut rng).unwrap();

        let mut pairs = Vec::new();
        for r in records.iter().filter(|r| r.split == Split::Test) {
            let features = assemble_features(r, &manifest).unwrap();
            let predicted = predict_general(r, &manifest, &student).unwrap();
            let decoded = beam_search(&params, &features, Some(predicted.probs()), 5, 30).unwrap();
            assert!(decoded.tokens.len() <= 30);
            let caption: Vec<String> = decoded
                .words()
                .iter()
                .map(|&t| vocab.token(t).to_string())
                .collect();
            pairs.push(EvalPair {
                video_id: r.video_id.clone(),
                hypothesis: caption,
                references: r.captions.iter().map(|c| tokenize(c)).collect(),
            });
        }
        let report = evaluate_corpus(&pairs).unwrap();
        assert!(report.bleu4.is_finite() && report.rouge_l.is_finite() && report.cider.is_finite());
    }
}
