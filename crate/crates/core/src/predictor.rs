//! Topic prediction for unseen videos.
//!
//! The general predictor is a one-hidden-layer network over the
//! concatenated multimodal features, trained to match the mined topic
//! mixtures under a KL loss. The speech predictor folds cleaned
//! transcripts back through the fitted topic model. Their outputs are
//! ensembled by plain averaging over whichever sources exist.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    clean_speech, to_bag_of_words, FeatureManifest, StopwordSet, VideoRecord, Vocabulary,
};
use crate::numerics::{
    matvec, softmax, AdamConfig, AdamState, ParamGrads, ParamStore, Rng, Tape, Tensor,
};
use crate::topics::{InferConfig, TopicDistribution, TopicModel};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("feature {modality} of {video_id} has dimension {found}, manifest says {expected}")]
    FeatureDimension {
        video_id: String,
        modality: String,
        expected: usize,
        found: usize,
    },
    #[error("no teacher distribution for training video {0}")]
    MissingTeacher(String),
    #[error("training video {0} has no category label")]
    MissingLabel(String),
    #[error("no training videos")]
    NoTrainingData,
    #[error("invalid settings: {0}")]
    BadConfig(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("input dimension {found} does not match trained dimension {expected}")]
    InputDimension { expected: usize, found: usize },
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
}

/// One-hidden-layer network with tanh units and a softmax output.
#[derive(Clone, Debug)]
pub struct MlpParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub store: ParamStore,
}

const INIT_SCALE: f64 = 0.08;

impl MlpParams {
    pub fn init(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        rng: &mut Rng,
    ) -> MlpParams {
        let mut store = ParamStore::new();
        let matrix = |rng: &mut Rng, rows: usize, cols: usize| {
            let data = (0..rows * cols)
                .map(|_| rng.uniform(-INIT_SCALE, INIT_SCALE))
                .collect();
            Tensor::from_vec(&[rows, cols], data).expect("consistent init shape")
        };
        store.insert("hidden.w", matrix(rng, hidden_dim, input_dim));
        store.insert("hidden.b", Tensor::vector(vec![0.0; hidden_dim]));
        store.insert("out.w", matrix(rng, output_dim, hidden_dim));
        store.insert("out.b", Tensor::vector(vec![0.0; output_dim]));
        MlpParams {
            input_dim,
            hidden_dim,
            output_dim,
            store,
        }
    }

    pub fn logits(&self, input: &[f64]) -> Result<Vec<f64>, PredictorError> {
        if input.len() != self.input_dim {
            return Err(PredictorError::InputDimension {
                expected: self.input_dim,
                found: input.len(),
            });
        }
        let w1 = self.store.get("hidden.w").unwrap();
        let b1 = self.store.get("hidden.b").unwrap();
        let w2 = self.store.get("out.w").unwrap();
        let b2 = self.store.get("out.b").unwrap();
        let mut hidden = matvec(w1.data(), self.hidden_dim, self.input_dim, input);
        for (h, b) in hidden.iter_mut().zip(b1.data()) {
            *h = (*h + b).tanh();
        }
        let mut logits = matvec(w2.data(), self.output_dim, self.hidden_dim, &hidden);
        for (l, b) in logits.iter_mut().zip(b2.data()) {
            *l += b;
        }
        Ok(logits)
    }

    pub fn predict(&self, input: &[f64]) -> Result<TopicDistribution, PredictorError> {
        let probs = softmax(&self.logits(input)?)?;
        Ok(TopicDistribution::from_unnormalized(probs).expect("softmax output"))
    }
}

/// Concatenate a record's feature vectors in manifest order, padding
/// absent modalities with zeros.
pub fn assemble_features(
    video: &VideoRecord,
    manifest: &FeatureManifest,
) -> Result<Vec<f64>, PredictorError> {
    let mut out = Vec::with_capacity(manifest.total_dim());
    for (modality, dim) in manifest.entries() {
        match video.features.get(modality) {
            Some(vector) => {
                if vector.len() != *dim {
                    return Err(PredictorError::FeatureDimension {
                        video_id: video.video_id.clone(),
                        modality: modality.clone(),
                        expected: *dim,
                        found: vector.len(),
                    });
                }
                out.extend_from_slice(vector);
            }
            None => out.extend(std::iter::repeat_n(0.0, *dim)),
        }
    }
    Ok(out)
}

/// D_KL(p || q) with zero-probability terms of `p` contributing nothing
/// and `q` floored at 1e-12 inside the logarithm.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    p.iter()
        .zip(q.iter())
        .filter(|(pk, _)| **pk > 0.0)
        .map(|(pk, qk)| pk * (pk.ln() - qk.max(1e-12).ln()))
        .sum()
}

#[derive(Clone, Copy, Debug)]
pub struct PredictorTrainConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for PredictorTrainConfig {
    fn default() -> PredictorTrainConfig {
        PredictorTrainConfig {
            hidden_dim: 512,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-4,
        }
    }
}

impl PredictorTrainConfig {
    fn validate(&self) -> Result<(), PredictorError> {
        if self.hidden_dim == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(PredictorError::BadConfig(
                "hidden size, epochs and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PredictorError::BadConfig(
                "learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

enum Target<'a> {
    Distribution(&'a [f64]),
    Label(usize),
}

fn batch_loss_and_grads(
    params: &MlpParams,
    inputs: &[&[f64]],
    targets: &[Target],
) -> Result<(f64, ParamGrads), PredictorError> {
    let mut tape = Tape::new();
    let w1 = tape.param(&params.store, params.store.slot("hidden.w").unwrap());
    let b1 = tape.param(&params.store, params.store.slot("hidden.b").unwrap());
    let w2 = tape.param(&params.store, params.store.slot("out.w").unwrap());
    let b2 = tape.param(&params.store, params.store.slot("out.b").unwrap());
    let mut losses = Vec::with_capacity(inputs.len());
    for (input, target) in inputs.iter().zip(targets.iter()) {
        let x = tape.constant(input.to_vec());
        let pre = tape.matvec(w1, params.hidden_dim, params.input_dim, x);
        let pre_b = tape.add(pre, b1);
        let hidden = tape.tanh(pre_b);
        let out = tape.matvec(w2, params.output_dim, params.hidden_dim, hidden);
        let logits = tape.add(out, b2);
        let loss = match target {
            Target::Distribution(p) => tape.kl_to_softmax(logits, p)?,
            Target::Label(label) => tape.cross_entropy(logits, *label)?,
        };
        losses.push(loss);
    }
    let total = tape.sum_scalars(losses);
    let mean = tape.scale(total, 1.0 / inputs.len() as f64);
    let value = tape.scalar(mean);
    let grads = tape.backward(mean, &params.store);
    Ok((value, grads))
}

fn train_loop(
    mut params: MlpParams,
    inputs: Vec<Vec<f64>>,
    targets: Vec<OwnedTarget>,
    cfg: &PredictorTrainConfig,
    rng: &mut Rng,
) -> Result<MlpParams, PredictorError> {
    let mut adam = AdamState::new(
        AdamConfig::with_learning_rate(cfg.learning_rate),
        &params.store,
    );
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let batch_inputs: Vec<&[f64]> = batch.iter().map(|&i| inputs[i].as_slice()).collect();
            let batch_targets: Vec<Target> = batch
                .iter()
                .map(|&i| match &targets[i] {
                    OwnedTarget::Distribution(p) => Target::Distribution(p),
                    OwnedTarget::Label(l) => Target::Label(*l),
                })
                .collect();
            let (loss, grads) = batch_loss_and_grads(&params, &batch_inputs, &batch_targets)?;
            if !loss.is_finite() {
                return Err(PredictorError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            adam.step(&mut params.store, &grads)?;
        }
    }
    Ok(params)
}

enum OwnedTarget {
    Distribution(Vec<f64>),
    Label(usize),
}

/// Distill the mined topic mixtures into a multimodal feed-forward
/// student by minimizing the mean KL divergence to the teacher.
pub fn train_general_predictor(
    train: &[VideoRecord],
    teachers: &BTreeMap<String, TopicDistribution>,
    manifest: &FeatureManifest,
    cfg: &PredictorTrainConfig,
    rng: &mut Rng,
) -> Result<MlpParams, PredictorError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(PredictorError::NoTrainingData);
    }
    let mut inputs = Vec::with_capacity(train.len());
    let mut targets = Vec::with_capacity(train.len());
    let mut topics = 0;
    for record in train {
        let teacher = teachers
            .get(&record.video_id)
            .ok_or_else(|| PredictorError::MissingTeacher(record.video_id.clone()))?;
        topics = teacher.len();
        inputs.push(assemble_features(record, manifest)?);
        targets.push(OwnedTarget::Distribution(teacher.probs().to_vec()));
    }
    let params = MlpParams::init(manifest.total_dim(), cfg.hidden_dim, topics, rng);
    train_loop(params, inputs, targets, cfg, rng)
}

/// Mean KL divergence from the teacher mixtures to the student's
/// predictions.
pub fn mean_kl_to_teacher(
    params: &MlpParams,
    records: &[VideoRecord],
    teachers: &BTreeMap<String, TopicDistribution>,
    manifest: &FeatureManifest,
) -> Result<f64, PredictorError> {
    let mut total = 0.0;
    let mut n = 0usize;
    for record in records {
        let Some(teacher) = teachers.get(&record.video_id) else {
            continue;
        };
        let q = predict_general(record, manifest, params)?;
        total += kl_divergence(teacher.probs(), q.probs());
        n += 1;
    }
    if n == 0 {
        return Err(PredictorError::NoTrainingData);
    }
    Ok(total / n as f64)
}

pub fn predict_general(
    video: &VideoRecord,
    manifest: &FeatureManifest,
    params: &MlpParams,
) -> Result<TopicDistribution, PredictorError> {
    let features = assemble_features(video, manifest)?;
    params.predict(&features)
}

/// Fold the cleaned speech transcript through the topic model; absent
/// or too-short transcripts yield no prediction.
pub fn predict_speech(
    video: &VideoRecord,
    vocab: &Vocabulary,
    stopwords: &StopwordSet,
    model: &TopicModel,
    cfg: &InferConfig,
    rng: &mut Rng,
) -> Option<TopicDistribution> {
    let transcript = video.speech.as_deref()?;
    let tokens = clean_speech(transcript, vocab)?;
    let bag = to_bag_of_words(&tokens, vocab, stopwords);
    Some(model.infer(&bag, cfg, rng))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopicSource {
    General,
    Speech,
}

/// Ensembled topic prediction with the sources that contributed.
#[derive(Clone, Debug, Serialize)]
pub struct TopicPrediction {
    pub distribution: TopicDistribution,
    pub sources: Vec<TopicSource>,
}

/// Arithmetic mean of the available predictions; a missing speech
/// prediction is simply left out of the average.
pub fn ensemble(
    general: &TopicDistribution,
    speech: Option<&TopicDistribution>,
) -> TopicPrediction {
    match speech {
        None => TopicPrediction {
            distribution: general.clone(),
            sources: vec![TopicSource::General],
        },
        Some(speech) => {
            let mean: Vec<f64> = general
                .probs()
                .iter()
                .zip(speech.probs())
                .map(|(a, b)| (a + b) / 2.0)
                .collect();
            TopicPrediction {
                distribution: TopicDistribution::from_unnormalized(mean)
                    .expect("mean of distributions"),
                sources: vec![TopicSource::General, TopicSource::Speech],
            }
        }
    }
}

/// Classifier over predefined category tags, trained with
/// cross-entropy.
pub fn train_category_classifier(
    train: &[VideoRecord],
    num_categories: usize,
    manifest: &FeatureManifest,
    cfg: &PredictorTrainConfig,
    rng: &mut Rng,
) -> Result<MlpParams, PredictorError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(PredictorError::NoTrainingData);
    }
    let mut inputs = Vec::with_capacity(train.len());
    let mut targets = Vec::with_capacity(train.len());
    for record in train {
        let label = record
            .category
            .ok_or_else(|| PredictorError::MissingLabel(record.video_id.clone()))?
            as usize;
        if label >= num_categories {
            return Err(PredictorError::BadConfig(format!(
                "category {label} of {} exceeds configured count {num_categories}",
                record.video_id
            )));
        }
        inputs.push(assemble_features(record, manifest)?);
        targets.push(OwnedTarget::Label(label));
    }
    let params = MlpParams::init(manifest.total_dim(), cfg.hidden_dim, num_categories, rng);
    train_loop(params, inputs, targets, cfg, rng)
}

/// Mean loss and analytic gradients of one batch, exposed for the
/// gradient verification harness.
pub fn kl_loss_and_grads(
    params: &MlpParams,
    input: &[f64],
    teacher: &[f64],
) -> Result<(f64, ParamGrads), PredictorError> {
    batch_loss_and_grads(params, &[input], &[Target::Distribution(teacher)])
}

pub fn cross_entropy_loss_and_grads(
    params: &MlpParams,
    input: &[f64],
    label: usize,
) -> Result<(f64, ParamGrads), PredictorError> {
    batch_loss_and_grads(params, &[input], &[Target::Label(label)])
}

/// Loss evaluation used by the finite-difference side of the gradient
/// check.
pub fn kl_loss_value(
    params: &MlpParams,
    store: &ParamStore,
    input: &[f64],
    teacher: &[f64],
) -> f64 {
    let probe = MlpParams {
        store: store.clone(),
        ..params.clone()
    };
    let logits = probe.logits(input).expect("dimension-checked input");
    let q = softmax(&logits).expect("finite logits");
    kl_divergence(teacher, &q)
}

pub fn cross_entropy_loss_value(
    params: &MlpParams,
    store: &ParamStore,
    input: &[f64],
    label: usize,
) -> f64 {
    let probe = MlpParams {
        store: store.clone(),
        ..params.clone()
    };
    let logits = probe.logits(input).expect("dimension-checked input");
    let log_probs = crate::numerics::log_softmax(&logits).expect("finite logits");
    -log_probs[label]
}
