//! Command-line pipeline: synthetic corpora, topic mining, predictor
//! training, captioner training, decoding, evaluation, and the
//! verification harnesses.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::captioner::{
    beam_search, caption_examples, gradient_suite_with_perturbation, train_captioner, CaptionDims,
    CaptionExample, CaptionVariant, TrainConfig, DEFAULT_GRADCHECK_SEED,
};
use crate::checkpoint::{
    caption_model_checkpoint, caption_model_from_checkpoint, load_checkpoint, mlp_checkpoint,
    mlp_from_checkpoint, save_checkpoint, topic_model_checkpoint, topic_model_from_checkpoint,
    KIND_CATEGORY_CLASSIFIER, KIND_TOPIC_PREDICTOR,
};
use crate::config::PipelineConfig;
use crate::corpus::{
    build_vocabulary, generate_synthetic_corpus, load_records, save_records, tokenize,
    validate_records, video_document, FeatureManifest, Split, StopwordSet, SyntheticConfig,
    VideoRecord, Vocabulary,
};
use crate::metrics::{evaluate_corpus, EvalPair};
use crate::numerics::Rng;
use crate::predictor::{
    assemble_features, ensemble, predict_speech, train_category_classifier,
    train_general_predictor, PredictorTrainConfig, TopicSource as PredictionSource,
};
use crate::topics::{lda_fit, topic_category_cooccurrence, InferConfig, LdaConfig, TopicModel};

#[derive(Parser)]
#[command(
    name = "tgcap",
    version,
    about = "Topic-guided video captioning pipeline"
)]
pub struct Cli {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for pure per-video inference and evaluation
    /// (also the TGCAP_WORKERS environment variable).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TopicSourceArg {
    /// Mixtures of the fitted topic model's own training documents.
    Teacher,
    /// Per-video distributions from a predictions file.
    Predicted,
    /// Per-video distributions supplied by hand.
    Annotated,
    /// One-hot encoding of the predefined category tag.
    Category,
    /// No topic conditioning (vanilla decoder only).
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn keeps(self, split: Split) -> bool {
        matches!(
            (self, split),
            (SplitArg::All, _)
                | (SplitArg::Train, Split::Train)
                | (SplitArg::Val, Split::Val)
                | (SplitArg::Test, Split::Test)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PredictorKind {
    General,
    Category,
}

#[derive(Args)]
struct SynthArgs {
    /// Corpus output path (JSON Lines).
    #[arg(long)]
    out: PathBuf,
    /// Feature manifest output path.
    #[arg(long)]
    manifest_out: PathBuf,
    /// Ground-truth mixture output path (JSON Lines).
    #[arg(long)]
    truth_out: Option<PathBuf>,
    #[arg(long)]
    topics: Option<usize>,
    #[arg(long, default_value_t = 150)]
    vocab_words: usize,
    #[arg(long, default_value_t = 100)]
    videos_per_topic: usize,
    #[arg(long, default_value_t = 5)]
    captions_per_video: usize,
    #[arg(long, default_value_t = 8)]
    caption_len: usize,
    #[arg(long, default_value_t = 0.85)]
    dominant_mass: f64,
    #[arg(long, default_value_t = 0.05)]
    feature_noise: f64,
    /// Draw captions from fixed per-topic template sentences.
    #[arg(long)]
    template_captions: bool,
    /// Make features pure noise with no topic signal.
    #[arg(long)]
    uninformative_features: bool,
    #[arg(long, default_value_t = 0.5)]
    speech_fraction: f64,
    #[arg(long, default_value_t = 0)]
    val_per_topic: usize,
    #[arg(long, default_value_t = 10)]
    test_per_topic: usize,
}

#[derive(Args)]
struct MineTopicsArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Topic model checkpoint output.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    topics: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    sample_lag: Option<usize>,
    /// Stopword override file (one token per line).
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Args)]
struct ShowTopicsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 10)]
    top_n: usize,
    /// Emit the report as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CooccurrenceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Write the table as JSON here in addition to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainPredictorArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Topic model checkpoint (teacher); required for --kind general.
    #[arg(long)]
    topic_model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = PredictorKind::General)]
    kind: PredictorKind,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args)]
struct PredictTopicsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    predictor: PathBuf,
    /// Topic model checkpoint for the speech-dedicated prediction.
    #[arg(long)]
    topic_model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Skip the speech source even when transcripts exist.
    #[arg(long)]
    no_speech: bool,
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Args)]
struct TrainCaptionerArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long, value_enum, default_value_t = TopicSourceArg::Teacher)]
    topic_source: TopicSourceArg,
    #[arg(long)]
    topic_model: Option<PathBuf>,
    /// Per-video topic distributions (JSON Lines: video_id, topics).
    #[arg(long)]
    topics_file: Option<PathBuf>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    factors: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    max_caption_len: Option<usize>,
}

#[derive(Args)]
struct CaptionArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long, value_enum, default_value_t = TopicSourceArg::Predicted)]
    topic_source: TopicSourceArg,
    #[arg(long)]
    topic_model: Option<PathBuf>,
    #[arg(long)]
    topics_file: Option<PathBuf>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    max_length: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Generated captions (JSON Lines from the caption command).
    #[arg(long)]
    captions: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the full per-video table.
    #[arg(long)]
    text: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = DEFAULT_GRADCHECK_SEED)]
    gradcheck_seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    perturbation: f64,
}

#[derive(Args)]
struct AblateTopicsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated topic counts to sweep.
    #[arg(long, alias = "K-list", default_value = "10,20,30")]
    k_list: String,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with known topic structure.
    Synth(SynthArgs),
    /// Fit the topic model on training captions.
    MineTopics(MineTopicsArgs),
    /// Print each topic's most probable words.
    ShowTopics(ShowTopicsArgs),
    /// Topic/category co-occurrence table.
    Cooccurrence(CooccurrenceArgs),
    /// Train the multimodal topic student or the category classifier.
    TrainPredictor(TrainPredictorArgs),
    /// Predict topic distributions for videos and write them out.
    PredictTopics(PredictTopicsArgs),
    /// Train a caption decoder variant.
    TrainCaptioner(TrainCaptionerArgs),
    /// Decode captions with beam search.
    Caption(CaptionArgs),
    /// Score generated captions against the reference captions.
    Evaluate(EvaluateArgs),
    /// Verify analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Sweep the topic count and emit one evaluation report per K.
    AblateTopics(AblateTopicsArgs),
}

/// Parse `args` and run the selected command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        // --help and --version are not failures.
        Err(err)
            if matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{err}");
            return Ok(());
        }
        // Usage errors: let the argument parser render its message and
        // exit with its conventional status.
        Err(err) => err.exit(),
    };
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let workers = cli
        .workers
        .or_else(|| {
            std::env::var("TGCAP_WORKERS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1)
        .max(1);

    match cli.command {
        Command::Synth(args) => cmd_synth(&config, args),
        Command::MineTopics(args) => cmd_mine_topics(&config, args),
        Command::ShowTopics(args) => cmd_show_topics(args),
        Command::Cooccurrence(args) => cmd_cooccurrence(args),
        Command::TrainPredictor(args) => cmd_train_predictor(&config, args),
        Command::PredictTopics(args) => cmd_predict_topics(&config, args, workers),
        Command::TrainCaptioner(args) => cmd_train_captioner(&config, args),
        Command::Caption(args) => cmd_caption(&config, args, workers),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::AblateTopics(args) => cmd_ablate_topics(&config, args),
    }
}

fn stopword_set(path: &Option<PathBuf>) -> Result<StopwordSet> {
    match path {
        Some(path) => Ok(StopwordSet::from_file(path)?),
        None => Ok(StopwordSet::default_english()),
    }
}

fn load_corpus(path: &Path, manifest: Option<&FeatureManifest>) -> Result<Vec<VideoRecord>> {
    let records = load_records(path)?;
    if let Some(manifest) = manifest {
        validate_records(&records, manifest)?;
    }
    Ok(records)
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building worker pool")
}

fn cmd_synth(config: &PipelineConfig, args: SynthArgs) -> Result<()> {
    let synth = SyntheticConfig {
        topics: args.topics.unwrap_or(config.topics),
        vocab_words: args.vocab_words,
        videos_per_topic: args.videos_per_topic,
        captions_per_video: args.captions_per_video,
        caption_len: args.caption_len,
        dominant_mass: args.dominant_mass,
        feature_noise: args.feature_noise,
        informative_features: !args.uninformative_features,
        template_captions: args.template_captions,
        speech_fraction: args.speech_fraction,
        val_per_topic: args.val_per_topic,
        test_per_topic: args.test_per_topic,
    };
    let mut rng = Rng::seed_from_u64(config.seed);
    let corpus = generate_synthetic_corpus(&synth, &mut rng)?;
    save_records(&args.out, &corpus.records)?;
    corpus.manifest.save(&args.manifest_out)?;
    if let Some(truth_out) = &args.truth_out {
        write_topic_lines(
            &truth_out.clone(),
            corpus
                .mixtures
                .iter()
                .map(|(id, theta)| (id.clone(), theta.clone(), vec![])),
        )?;
    }
    println!(
        "wrote {} videos over {} topics to {}",
        corpus.records.len(),
        synth.topics,
        args.out.display()
    );
    Ok(())
}

/// One line of a topic distributions file.
#[derive(Serialize, Deserialize)]
struct TopicLine {
    video_id: String,
    topics: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    sources: Vec<PredictionSource>,
}

fn write_topic_lines(
    path: &Path,
    lines: impl Iterator<Item = (String, Vec<f64>, Vec<PredictionSource>)>,
) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for (video_id, topics, sources) in lines {
        serde_json::to_writer(
            &mut w,
            &TopicLine {
                video_id,
                topics,
                sources,
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_topic_lines(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let file =
        File::open(path).with_context(|| format!("opening topics file {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TopicLine = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        out.insert(parsed.video_id, parsed.topics);
    }
    Ok(out)
}

fn mined_documents(
    records: &[VideoRecord],
    vocab: &Vocabulary,
    stopwords: &StopwordSet,
) -> Vec<(String, crate::corpus::BagOfWords)> {
    records
        .iter()
        .filter(|r| r.split == Split::Train)
        .map(|r| (r.video_id.clone(), video_document(r, vocab, stopwords)))
        .collect()
}

fn cmd_mine_topics(config: &PipelineConfig, args: MineTopicsArgs) -> Result<()> {
    let records = load_corpus(&args.corpus, None)?;
    let stopwords = stopword_set(&args.stopwords)?;
    let vocab = build_vocabulary(&records, config.vocab_min_count)?;
    let docs = mined_documents(&records, &vocab, &stopwords);
    let lda = LdaConfig {
        topics: args.topics.unwrap_or(config.topics),
        alpha: args.alpha.or(config.lda.alpha),
        eta: args.eta.unwrap_or(config.lda.eta),
        iterations: args.iterations.unwrap_or(config.lda.iterations),
        burn_in: args.burn_in.unwrap_or(config.lda.burn_in),
        sample_lag: args.sample_lag.unwrap_or(config.lda.sample_lag),
    };
    let mut rng = Rng::seed_from_u64(config.seed);
    let model = lda_fit(&docs, vocab.len(), &lda, &mut rng)?;
    let checkpoint =
        topic_model_checkpoint(&model, vocab.tokens().to_vec(), config.model_snapshot());
    save_checkpoint(&args.out, &checkpoint)?;
    println!(
        "mined {} topics from {} documents ({} word types) -> {}",
        model.topics(),
        docs.len(),
        vocab.len(),
        args.out.display()
    );
    Ok(())
}

fn load_topic_model(path: &Path) -> Result<(TopicModel, Vocabulary)> {
    let checkpoint = load_checkpoint(path)?;
    let (model, tokens) = topic_model_from_checkpoint(&checkpoint)?;
    let min_count = checkpoint.meta.config["pipeline"]["vocab_min_count"]
        .as_u64()
        .unwrap_or(3) as usize;
    Ok((model, Vocabulary::from_tokens(tokens, min_count)?))
}

#[derive(Serialize)]
struct TopicReport {
    topic: usize,
    words: Vec<String>,
    probabilities: Vec<f64>,
}

fn cmd_show_topics(args: ShowTopicsArgs) -> Result<()> {
    let (model, vocab) = load_topic_model(&args.model)?;
    let mut reports = Vec::new();
    for topic in 0..model.topics() {
        let top = model.top_words(topic, args.top_n)?;
        reports.push(TopicReport {
            topic,
            words: top
                .iter()
                .map(|(w, _)| vocab.token(*w).to_string())
                .collect(),
            probabilities: top.iter().map(|(_, p)| *p).collect(),
        });
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&reports)?);
    } else {
        for report in &reports {
            println!("topic {:>2}: {}", report.topic, report.words.join(" "));
        }
    }
    Ok(())
}

fn cmd_cooccurrence(args: CooccurrenceArgs) -> Result<()> {
    let (model, vocab) = load_topic_model(&args.model)?;
    let records = load_corpus(&args.corpus, None)?;
    let table = topic_category_cooccurrence(&records, &model)?;
    println!(
        "{:<6} {:>7}  {:<40}  representative words",
        "topic", "videos", "co-occurrence with categories"
    );
    for topic in 0..model.topics() {
        // Categories with at least 1% of the row, highest first.
        let mut shares: Vec<(u32, f64)> = table
            .categories
            .iter()
            .zip(&table.percentages[topic])
            .map(|(&c, &p)| (c, p))
            .filter(|(_, p)| *p >= 0.01)
            .collect();
        shares.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let shares = shares
            .iter()
            .map(|(c, p)| format!("{c}:{:.0}%", p * 100.0))
            .collect::<Vec<_>>()
            .join(" ");
        let words = model
            .top_words(topic, 9)?
            .iter()
            .map(|(w, _)| vocab.token(*w).to_string())
            .collect::<Vec<_>>()
            .join(" ");
        println!(
            "{:<6} {:>7}  {:<40}  {}",
            topic,
            table.row_total(topic),
            shares,
            words
        );
    }
    if let Some(out) = &args.out {
        crate::corpus::write_json_file(out, &table)
            .map_err(|e| anyhow!("writing {}: {e}", out.display()))?;
    }
    Ok(())
}

fn cmd_train_predictor(config: &PipelineConfig, args: TrainPredictorArgs) -> Result<()> {
    let manifest = FeatureManifest::load(&args.manifest)?;
    let records = load_corpus(&args.corpus, Some(&manifest))?;
    let train: Vec<VideoRecord> = records
        .iter()
        .filter(|r| r.split == Split::Train)
        .cloned()
        .collect();
    let cfg = PredictorTrainConfig {
        hidden_dim: args.hidden.unwrap_or(config.predictor.hidden),
        epochs: args.epochs.unwrap_or(config.predictor.epochs),
        batch_size: args.batch_size.unwrap_or(config.predictor.batch_size),
        learning_rate: args.learning_rate.unwrap_or(config.predictor.learning_rate),
    };
    let mut rng = Rng::seed_from_u64(config.seed);
    let (params, kind) = match args.kind {
        PredictorKind::General => {
            let topic_model_path = args
                .topic_model
                .as_ref()
                .ok_or_else(|| anyhow!("--kind general needs --topic-model"))?;
            let (model, _) = load_topic_model(topic_model_path)?;
            let mut teachers = BTreeMap::new();
            for record in &train {
                teachers.insert(
                    record.video_id.clone(),
                    model.teacher_distribution(&record.video_id)?,
                );
            }
            (
                train_general_predictor(&train, &teachers, &manifest, &cfg, &mut rng)?,
                KIND_TOPIC_PREDICTOR,
            )
        }
        PredictorKind::Category => (
            train_category_classifier(&train, config.category_count, &manifest, &cfg, &mut rng)?,
            KIND_CATEGORY_CLASSIFIER,
        ),
    };
    let checkpoint = mlp_checkpoint(&params, kind, manifest.to_map(), config.model_snapshot());
    save_checkpoint(&args.out, &checkpoint)?;
    println!(
        "trained {kind} on {} videos ({} epochs) -> {}",
        train.len(),
        cfg.epochs,
        args.out.display()
    );
    Ok(())
}

fn cmd_predict_topics(
    config: &PipelineConfig,
    args: PredictTopicsArgs,
    workers: usize,
) -> Result<()> {
    let manifest = FeatureManifest::load(&args.manifest)?;
    let records = load_corpus(&args.corpus, Some(&manifest))?;
    let predictor_ckpt = load_checkpoint(&args.predictor)?;
    let is_classifier = predictor_ckpt.meta.kind == KIND_CATEGORY_CLASSIFIER;
    let params = mlp_from_checkpoint(&predictor_ckpt, &predictor_ckpt.meta.kind)?;
    let speech_model = if is_classifier || args.no_speech {
        None
    } else {
        match &args.topic_model {
            Some(path) => Some(load_topic_model(path)?),
            None => None,
        }
    };
    let infer = InferConfig {
        iterations: config.lda.infer_iterations,
        burn_in: config.lda.infer_burn_in,
        sample_lag: config.lda.infer_sample_lag,
    };
    let stopwords = stopword_set(&args.stopwords)?;
    let selected: Vec<&VideoRecord> = records
        .iter()
        .filter(|r| args.split.keeps(r.split))
        .collect();
    let seed = config.seed;

    type PredictionRow = (String, Vec<f64>, Vec<PredictionSource>);
    let pool = worker_pool(workers)?;
    let lines: Result<Vec<PredictionRow>> = pool.install(|| {
        use rayon::prelude::*;
        selected
            .par_iter()
            .map(|record| {
                let features = assemble_features(record, &manifest)?;
                let general = params.predict(&features)?;
                let speech = speech_model.as_ref().and_then(|(model, vocab)| {
                    let mut rng = Rng::derive(seed, &record.video_id);
                    predict_speech(record, vocab, &stopwords, model, &infer, &mut rng)
                });
                let prediction = ensemble(&general, speech.as_ref());
                Ok((
                    record.video_id.clone(),
                    prediction.distribution.into_vec(),
                    prediction.sources,
                ))
            })
            .collect()
    });
    let lines = lines?;
    let with_speech = lines.iter().filter(|(_, _, s)| s.len() > 1).count();
    write_topic_lines(&args.out, lines.into_iter())?;
    println!(
        "predicted topics for {} videos ({} with speech) -> {}",
        selected.len(),
        with_speech,
        args.out.display()
    );
    Ok(())
}

/// Resolve the per-video topic vectors a caption model conditions on.
fn resolve_topics(
    source: TopicSourceArg,
    records: &[VideoRecord],
    topic_model: &Option<PathBuf>,
    topics_file: &Option<PathBuf>,
    category_count: usize,
) -> Result<(usize, BTreeMap<String, Vec<f64>>)> {
    match source {
        TopicSourceArg::None => Ok((0, BTreeMap::new())),
        TopicSourceArg::Teacher => {
            let path = topic_model
                .as_ref()
                .ok_or_else(|| anyhow!("--topic-source teacher needs --topic-model"))?;
            let (model, _) = load_topic_model(path)?;
            let mut map = BTreeMap::new();
            for record in records {
                if let Ok(theta) = model.teacher_distribution(&record.video_id) {
                    map.insert(record.video_id.clone(), theta.into_vec());
                }
            }
            Ok((model.topics(), map))
        }
        TopicSourceArg::Predicted | TopicSourceArg::Annotated => {
            let path = topics_file
                .as_ref()
                .ok_or_else(|| anyhow!("--topic-source predicted/annotated needs --topics-file"))?;
            let map = read_topic_lines(path)?;
            let dim = map
                .values()
                .next()
                .map(Vec::len)
                .ok_or_else(|| anyhow!("topics file {} is empty", path.display()))?;
            if let Some((id, bad)) = map.iter().find(|(_, v)| v.len() != dim) {
                bail!(
                    "topics file row {id} has dimension {}, expected {dim}",
                    bad.len()
                );
            }
            Ok((dim, map))
        }
        TopicSourceArg::Category => {
            let mut map = BTreeMap::new();
            for record in records {
                if let Some(category) = record.category {
                    let mut one_hot = vec![0.0; category_count];
                    let idx = category as usize;
                    if idx >= category_count {
                        bail!(
                            "category {idx} of {} exceeds category_count {category_count}",
                            record.video_id
                        );
                    }
                    one_hot[idx] = 1.0;
                    map.insert(record.video_id.clone(), one_hot);
                }
            }
            Ok((category_count, map))
        }
    }
}

fn cmd_train_captioner(config: &PipelineConfig, args: TrainCaptionerArgs) -> Result<()> {
    let manifest = FeatureManifest::load(&args.manifest)?;
    let records = load_corpus(&args.corpus, Some(&manifest))?;
    let variant =
        CaptionVariant::from_str(args.variant.as_deref().unwrap_or(&config.captioner.variant))?;
    let vocab = build_vocabulary(&records, config.vocab_min_count)?;
    let train: Vec<&VideoRecord> = records.iter().filter(|r| r.split == Split::Train).collect();
    if train.is_empty() {
        bail!("corpus has no training records");
    }
    let source = if variant.uses_topics() {
        args.topic_source
    } else {
        TopicSourceArg::None
    };
    let (topic_dim, topic_map) = resolve_topics(
        source,
        &records,
        &args.topic_model,
        &args.topics_file,
        config.category_count,
    )?;
    let max_len = args
        .max_caption_len
        .unwrap_or(config.captioner.max_caption_len);

    let mut examples: Vec<CaptionExample> = Vec::new();
    for record in &train {
        let topic = if variant.uses_topics() {
            match topic_map.get(&record.video_id) {
                Some(z) => Some(z.as_slice()),
                None => bail!(
                    "no topic distribution for training video {}",
                    record.video_id
                ),
            }
        } else {
            None
        };
        examples.extend(caption_examples(record, &manifest, &vocab, topic, max_len)?);
    }

    let dims = CaptionDims {
        variant,
        hidden: args.hidden.unwrap_or(config.captioner.hidden),
        factors: args.factors.unwrap_or(config.captioner.factors),
        vocab: vocab.len(),
        feature_dim: manifest.total_dim(),
        topic_dim,
    };
    let train_cfg = TrainConfig {
        epochs: args.epochs.unwrap_or(config.captioner.epochs),
        batch_size: args.batch_size.unwrap_or(config.captioner.batch_size),
        learning_rate: args.learning_rate.unwrap_or(config.captioner.learning_rate),
        dropout: args.dropout.unwrap_or(config.captioner.dropout),
        max_caption_len: max_len,
        target_perplexity: None,
    };
    let mut rng = Rng::seed_from_u64(config.seed);
    let (params, stats) = train_captioner(dims, &examples, &train_cfg, &mut rng)?;
    let checkpoint = caption_model_checkpoint(
        &params,
        vocab.tokens().to_vec(),
        manifest.to_map(),
        config.model_snapshot(),
    );
    save_checkpoint(&args.out, &checkpoint)?;
    println!(
        "trained {variant} on {} caption pairs for {} epochs (loss {:.4} -> {:.4}, ppl {:.4}) -> {}",
        examples.len(),
        stats.epochs_run,
        stats.first_epoch_loss,
        stats.last_epoch_loss,
        stats.final_perplexity,
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CaptionLine {
    video_id: String,
    caption: String,
    log_prob: f64,
    variant: String,
}

fn cmd_caption(config: &PipelineConfig, args: CaptionArgs, workers: usize) -> Result<()> {
    let checkpoint = load_checkpoint(&args.model)?;
    let (params, tokens) = caption_model_from_checkpoint(&checkpoint)?;
    let vocab = Vocabulary::from_tokens(tokens, config.vocab_min_count)?;
    let manifest_map = checkpoint
        .meta
        .manifest
        .clone()
        .ok_or_else(|| anyhow!("caption checkpoint lacks a feature manifest"))?;
    let manifest = FeatureManifest::new(manifest_map.into_iter().collect())?;
    let records = load_corpus(&args.corpus, Some(&manifest))?;
    let selected: Vec<&VideoRecord> = records
        .iter()
        .filter(|r| args.split.keeps(r.split))
        .collect();
    if selected.is_empty() {
        bail!("no videos in the requested split");
    }
    let source = if params.dims.variant.uses_topics() {
        args.topic_source
    } else {
        TopicSourceArg::None
    };
    let (topic_dim, topic_map) = resolve_topics(
        source,
        &records,
        &args.topic_model,
        &args.topics_file,
        config.category_count,
    )?;
    if params.dims.variant.uses_topics() && topic_dim != params.dims.topic_dim {
        bail!(
            "topic source has dimension {topic_dim}, model expects {}",
            params.dims.topic_dim
        );
    }
    let beam_width = args.beam_width.unwrap_or(config.captioner.beam_width);
    let max_length = args.max_length.unwrap_or(config.captioner.max_caption_len);
    let variant = params.dims.variant;

    let pool = worker_pool(workers)?;
    let lines: Result<Vec<CaptionLine>> = pool.install(|| {
        use rayon::prelude::*;
        selected
            .par_iter()
            .map(|record| {
                let features = assemble_features(record, &manifest)?;
                let topic = if variant.uses_topics() {
                    Some(topic_map.get(&record.video_id).ok_or_else(|| {
                        anyhow!("no topic distribution for video {}", record.video_id)
                    })?)
                } else {
                    None
                };
                let result = beam_search(
                    &params,
                    &features,
                    topic.map(Vec::as_slice),
                    beam_width,
                    max_length,
                )?;
                let caption = result
                    .words()
                    .iter()
                    .map(|&t| vocab.token(t))
                    .collect::<Vec<_>>()
                    .join(" ");
                Ok(CaptionLine {
                    video_id: record.video_id.clone(),
                    caption,
                    log_prob: result.log_prob,
                    variant: variant.name().to_string(),
                })
            })
            .collect()
    });
    let lines = lines?;
    let file =
        File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut w = BufWriter::new(file);
    for line in &lines {
        serde_json::to_writer(&mut w, line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    println!(
        "captioned {} videos with {} (beam {beam_width}) -> {}",
        lines.len(),
        variant,
        args.out.display()
    );
    Ok(())
}

fn read_caption_lines(path: &Path) -> Result<Vec<CaptionLine>> {
    let file =
        File::open(path).with_context(|| format!("opening captions file {}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CaptionLine = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        out.push(parsed);
    }
    Ok(out)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let records = load_corpus(&args.corpus, None)?;
    let by_id: BTreeMap<&str, &VideoRecord> =
        records.iter().map(|r| (r.video_id.as_str(), r)).collect();
    let captions = read_caption_lines(&args.captions)?;
    let mut pairs = Vec::with_capacity(captions.len());
    for line in &captions {
        let record = by_id
            .get(line.video_id.as_str())
            .ok_or_else(|| anyhow!("video {} not present in the corpus", line.video_id))?;
        pairs.push(EvalPair {
            video_id: line.video_id.clone(),
            hypothesis: tokenize(&line.caption),
            references: record.captions.iter().map(|c| tokenize(c)).collect(),
        });
    }
    let report = evaluate_corpus(&pairs)?;
    if args.text {
        print!("{}", report.text_table());
    } else {
        println!(
            "BLEU@4 {:.4}  ROUGE-L {:.4}  CIDEr {:.4}  unique words {}",
            report.bleu4, report.rouge_l, report.cider, report.unique_hypothesis_words
        );
    }
    if let Some(out) = &args.out {
        crate::corpus::write_json_file(out, &report)
            .map_err(|e| anyhow!("writing {}: {e}", out.display()))?;
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let reports = gradient_suite_with_perturbation(args.gradcheck_seed, args.perturbation)?;
    let mut failed = false;
    for report in &reports {
        let ok = report.max_relative_error < 1e-4;
        failed |= !ok;
        println!(
            "{:<24} {:>12.3e}  {}",
            report.name,
            report.max_relative_error,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    if failed {
        bail!("gradient check failed");
    }
    Ok(())
}

fn cmd_ablate_topics(config: &PipelineConfig, args: AblateTopicsArgs) -> Result<()> {
    let k_list: Vec<usize> = args
        .k_list
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .context("parsing --k-list")?;
    if k_list.is_empty() {
        bail!("--k-list is empty");
    }
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let variant = args
        .variant
        .clone()
        .unwrap_or_else(|| config.captioner.variant.clone());

    let mut summaries = Vec::new();
    for k in &k_list {
        let dir = args.out_dir.join(format!("k{k}"));
        std::fs::create_dir_all(&dir)?;
        let mut sub = config.clone();
        sub.topics = *k;
        let topic_model = dir.join("topics.tgc");
        cmd_mine_topics(
            &sub,
            MineTopicsArgs {
                corpus: args.corpus.clone(),
                out: topic_model.clone(),
                topics: Some(*k),
                alpha: None,
                eta: None,
                iterations: None,
                burn_in: None,
                sample_lag: None,
                stopwords: args.stopwords.clone(),
            },
        )?;
        let predictor = dir.join("predictor.tgc");
        cmd_train_predictor(
            &sub,
            TrainPredictorArgs {
                corpus: args.corpus.clone(),
                manifest: args.manifest.clone(),
                topic_model: Some(topic_model.clone()),
                out: predictor.clone(),
                kind: PredictorKind::General,
                hidden: None,
                epochs: None,
                batch_size: None,
                learning_rate: None,
            },
        )?;
        let predictions = dir.join("predicted-topics.jsonl");
        cmd_predict_topics(
            &sub,
            PredictTopicsArgs {
                corpus: args.corpus.clone(),
                manifest: args.manifest.clone(),
                predictor,
                topic_model: Some(topic_model.clone()),
                out: predictions.clone(),
                split: SplitArg::Test,
                no_speech: false,
                stopwords: args.stopwords.clone(),
            },
            1,
        )?;
        let caption_model = dir.join("captioner.tgc");
        cmd_train_captioner(
            &sub,
            TrainCaptionerArgs {
                corpus: args.corpus.clone(),
                manifest: args.manifest.clone(),
                out: caption_model.clone(),
                variant: Some(variant.clone()),
                topic_source: TopicSourceArg::Teacher,
                topic_model: Some(topic_model),
                topics_file: None,
                hidden: None,
                factors: None,
                epochs: None,
                batch_size: None,
                learning_rate: None,
                dropout: None,
                max_caption_len: None,
            },
        )?;
        let captions = dir.join("captions.jsonl");
        cmd_caption(
            &sub,
            CaptionArgs {
                corpus: args.corpus.clone(),
                model: caption_model,
                out: captions.clone(),
                split: SplitArg::Test,
                topic_source: TopicSourceArg::Predicted,
                topic_model: None,
                topics_file: Some(predictions),
                beam_width: None,
                max_length: None,
            },
            1,
        )?;
        let report_path = dir.join("report.json");
        cmd_evaluate(EvaluateArgs {
            corpus: args.corpus.clone(),
            captions,
            out: Some(report_path.clone()),
            text: false,
        })?;
        let report: serde_json::Value =
            serde_json::from_reader(BufReader::new(File::open(&report_path)?))?;
        summaries.push((*k, report));
    }
    println!("{:<6} {:>8} {:>8} {:>8}", "K", "BLEU@4", "ROUGE-L", "CIDEr");
    for (k, report) in &summaries {
        println!(
            "{:<6} {:>8.4} {:>8.4} {:>8.4}",
            k,
            report["bleu4"].as_f64().unwrap_or(f64::NAN),
            report["rouge_l"].as_f64().unwrap_or(f64::NAN),
            report["cider"].as_f64().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
