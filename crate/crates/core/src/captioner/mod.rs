//! Multimodal encoder and the topic-conditioned LSTM caption decoders.
//!
//! Six decoder variants share one parameter layout scheme:
//!
//! * `vanilla` - plain encoder/decoder, topics unused.
//! * `tce` - topic vector concatenated to the encoder input.
//! * `tcd` - topic vector concatenated to the word embedding at every
//!   decoder step.
//! * `tead` / `temd` - a learned topic embedding added to /
//!   multiplied into the word embedding at every step.
//! * `tgm` - every LSTM weight matrix is composed per video as
//!   `W(z) = W_a diag(W_b z) W_c`, an ensemble of topic-specific
//!   decoders sharing factor parameters.
//!
//! The output projection is tied to the word embedding: logits are
//! `E h + b` where `E` is the embedding matrix itself, so the tie holds
//! under every update by construction.

mod beam;
mod graph;

pub use beam::{beam_search, greedy_decode, BeamHypothesis, BeamResult};
pub use graph::{
    batch_loss_and_grads, caption_examples, gradient_suite, gradient_suite_with_perturbation,
    perplexity, sequence_loss, sequence_loss_value, train_captioner, train_captioner_params,
    CaptionExample, GradCheckReport, TrainConfig, TrainStats, DEFAULT_GRADCHECK_SEED,
};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::numerics::{matvec, softmax, ParamStore, Rng, Tensor};

#[derive(Debug, Error)]
pub enum CaptionerError {
    #[error("invalid settings: {0}")]
    BadConfig(String),
    #[error("{what} has length {found}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("variant {0} needs a topic distribution but none was supplied")]
    MissingTopic(CaptionVariant),
    #[error("caption has no tokens")]
    EmptyCaption,
    #[error("no caption examples to train on")]
    NoExamples,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("no predicted tokens to score")]
    ZeroTokens,
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CaptionVariant {
    Vanilla,
    Tce,
    Tcd,
    Tead,
    Temd,
    Tgm,
}

impl CaptionVariant {
    pub const ALL: [CaptionVariant; 6] = [
        CaptionVariant::Vanilla,
        CaptionVariant::Tce,
        CaptionVariant::Tcd,
        CaptionVariant::Tead,
        CaptionVariant::Temd,
        CaptionVariant::Tgm,
    ];

    pub fn uses_topics(self) -> bool {
        self != CaptionVariant::Vanilla
    }

    pub fn name(self) -> &'static str {
        match self {
            CaptionVariant::Vanilla => "vanilla",
            CaptionVariant::Tce => "tce",
            CaptionVariant::Tcd => "tcd",
            CaptionVariant::Tead => "tead",
            CaptionVariant::Temd => "temd",
            CaptionVariant::Tgm => "tgm",
        }
    }
}

impl fmt::Display for CaptionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CaptionVariant {
    type Err = CaptionerError;

    fn from_str(s: &str) -> Result<CaptionVariant, CaptionerError> {
        match s {
            "vanilla" => Ok(CaptionVariant::Vanilla),
            "tce" => Ok(CaptionVariant::Tce),
            "tcd" => Ok(CaptionVariant::Tcd),
            "tead" => Ok(CaptionVariant::Tead),
            "temd" => Ok(CaptionVariant::Temd),
            "tgm" => Ok(CaptionVariant::Tgm),
            other => Err(CaptionerError::BadConfig(format!(
                "unknown caption variant {other:?}"
            ))),
        }
    }
}

/// Gate order used throughout: input, forget, output, cell candidate.
pub(crate) const GATES: [&str; 4] = ["input", "forget", "output", "cell"];
const FORGET_GATE: usize = 1;

#[derive(Clone, Copy, Debug)]
pub struct CaptionDims {
    pub variant: CaptionVariant,
    /// LSTM state size; also the word-embedding width (required by the
    /// tied output projection).
    pub hidden: usize,
    /// Factor count of the composed weight matrices (tgm only).
    pub factors: usize,
    pub vocab: usize,
    pub feature_dim: usize,
    pub topic_dim: usize,
}

impl CaptionDims {
    pub fn encoder_input(&self) -> usize {
        self.feature_dim
            + if self.variant == CaptionVariant::Tce {
                self.topic_dim
            } else {
                0
            }
    }

    pub fn step_input(&self) -> usize {
        self.hidden
            + if self.variant == CaptionVariant::Tcd {
                self.topic_dim
            } else {
                0
            }
    }

    fn validate(&self) -> Result<(), CaptionerError> {
        if self.hidden == 0 || self.vocab < 3 || self.feature_dim == 0 {
            return Err(CaptionerError::BadConfig(
                "hidden size, vocabulary and feature dimension must be positive".into(),
            ));
        }
        if self.variant.uses_topics() && self.topic_dim == 0 {
            return Err(CaptionerError::BadConfig(format!(
                "variant {} needs a positive topic dimension",
                self.variant
            )));
        }
        if self.variant == CaptionVariant::Tgm && self.factors == 0 {
            return Err(CaptionerError::BadConfig(
                "tgm needs a positive factor count".into(),
            ));
        }
        Ok(())
    }
}

/// All trainable parameters of one caption model.
#[derive(Clone, Debug)]
pub struct CaptionModelParams {
    pub dims: CaptionDims,
    pub store: ParamStore,
}

const INIT_SCALE: f64 = 0.08;
/// Forget gates open at initialization.
const FORGET_BIAS_INIT: f64 = 1.0;

fn uniform_tensor(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.uniform(-INIT_SCALE, INIT_SCALE))
        .collect();
    Tensor::from_vec(&[rows, cols], data).expect("consistent init shape")
}

/// Initialize parameters for `dims`. Weights are uniform in
/// [-0.08, 0.08]; biases are zero except the forget gate's.
pub fn init_caption_params(
    dims: CaptionDims,
    rng: &mut Rng,
) -> Result<CaptionModelParams, CaptionerError> {
    dims.validate()?;
    let h = dims.hidden;
    let mut store = ParamStore::new();
    store.insert("encoder.w", uniform_tensor(rng, h, dims.encoder_input()));
    store.insert("encoder.b", Tensor::vector(vec![0.0; h]));
    store.insert("embedding", uniform_tensor(rng, dims.vocab, h));
    store.insert("output.b", Tensor::vector(vec![0.0; dims.vocab]));
    let n_in = dims.step_input();
    for (gi, gate) in GATES.iter().enumerate() {
        let bias = if gi == FORGET_GATE {
            FORGET_BIAS_INIT
        } else {
            0.0
        };
        if dims.variant == CaptionVariant::Tgm {
            for (map, cols) in [("x", n_in), ("h", h)] {
                store.insert(
                    &format!("lstm.{gate}.{map}.wa"),
                    uniform_tensor(rng, h, dims.factors),
                );
                store.insert(
                    &format!("lstm.{gate}.{map}.wb"),
                    uniform_tensor(rng, dims.factors, dims.topic_dim),
                );
                store.insert(
                    &format!("lstm.{gate}.{map}.wc"),
                    uniform_tensor(rng, dims.factors, cols),
                );
            }
        } else {
            store.insert(&format!("lstm.{gate}.wx"), uniform_tensor(rng, h, n_in));
            store.insert(&format!("lstm.{gate}.wh"), uniform_tensor(rng, h, h));
        }
        store.insert(&format!("lstm.{gate}.b"), Tensor::vector(vec![bias; h]));
    }
    if matches!(dims.variant, CaptionVariant::Tead | CaptionVariant::Temd) {
        store.insert("topic.w", uniform_tensor(rng, h, dims.topic_dim));
        store.insert("topic.b", Tensor::vector(vec![0.0; h]));
    }
    Ok(CaptionModelParams { dims, store })
}

/// Every tensor name a model with these dimensions must carry, with
/// its shape. Checkpoint loading validates against this.
pub fn expected_tensors(dims: &CaptionDims) -> Vec<(String, Vec<usize>)> {
    let h = dims.hidden;
    let n_in = dims.step_input();
    let mut names = vec![
        ("encoder.w".to_string(), vec![h, dims.encoder_input()]),
        ("encoder.b".to_string(), vec![h]),
        ("embedding".to_string(), vec![dims.vocab, h]),
        ("output.b".to_string(), vec![dims.vocab]),
    ];
    for gate in GATES {
        if dims.variant == CaptionVariant::Tgm {
            for (map, cols) in [("x", n_in), ("h", h)] {
                names.push((format!("lstm.{gate}.{map}.wa"), vec![h, dims.factors]));
                names.push((
                    format!("lstm.{gate}.{map}.wb"),
                    vec![dims.factors, dims.topic_dim],
                ));
                names.push((format!("lstm.{gate}.{map}.wc"), vec![dims.factors, cols]));
            }
        } else {
            names.push((format!("lstm.{gate}.wx"), vec![h, n_in]));
            names.push((format!("lstm.{gate}.wh"), vec![h, h]));
        }
        names.push((format!("lstm.{gate}.b"), vec![h]));
    }
    if matches!(dims.variant, CaptionVariant::Tead | CaptionVariant::Temd) {
        names.push(("topic.w".to_string(), vec![h, dims.topic_dim]));
        names.push(("topic.b".to_string(), vec![h]));
    }
    names
}

impl CaptionModelParams {
    pub fn embedding(&self) -> &Tensor {
        self.store.get("embedding").expect("embedding present")
    }

    /// Embedding row of one word; also the tied output projection row.
    pub fn embed(&self, word: usize) -> &[f64] {
        let h = self.dims.hidden;
        &self.embedding().data()[word * h..(word + 1) * h]
    }
}

/// Hidden and cell state of the decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl DecoderState {
    pub fn zeros(hidden: usize) -> DecoderState {
        DecoderState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// One gate's affine maps.
#[derive(Clone, Debug)]
pub struct GateWeights {
    pub wx: Tensor,
    pub wh: Tensor,
    pub b: Tensor,
}

/// Effective LSTM weights in gate order (composed per video for tgm).
#[derive(Clone, Debug)]
pub struct LstmWeights {
    pub gates: Vec<GateWeights>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Standard LSTM update: logistic input/forget/output gates, tanh cell
/// candidate, `c' = f*c + i*g`, `h' = o*tanh(c')`.
pub fn lstm_step(
    state: &DecoderState,
    input: &[f64],
    weights: &LstmWeights,
) -> Result<DecoderState, CaptionerError> {
    let h = state.h.len();
    let mut pre = Vec::with_capacity(4);
    for gate in &weights.gates {
        let (rows, cols) = gate.wx.dims2()?;
        if cols != input.len() || rows != h {
            return Err(CaptionerError::Dimension {
                what: "lstm step input",
                expected: cols,
                found: input.len(),
            });
        }
        let mut v = matvec(gate.wx.data(), rows, cols, input);
        let vh = matvec(gate.wh.data(), h, h, &state.h);
        for ((a, b), bias) in v.iter_mut().zip(vh.iter()).zip(gate.b.data()) {
            *a += b + bias;
        }
        pre.push(v);
    }
    let mut new = DecoderState::zeros(h);
    for k in 0..h {
        let i = sigmoid(pre[0][k]);
        let f = sigmoid(pre[1][k]);
        let o = sigmoid(pre[2][k]);
        let g = pre[3][k].tanh();
        new.c[k] = f * state.c[k] + i * g;
        new.h[k] = o * new.c[k].tanh();
    }
    if new.h.iter().chain(new.c.iter()).any(|v| !v.is_finite()) {
        return Err(CaptionerError::Numerics(
            crate::numerics::NumericsError::NonFinite {
                context: "lstm_step",
            },
        ));
    }
    Ok(new)
}

/// Compose the effective matrix `W(z) = W_a diag(W_b z) W_c`.
pub fn tgm_compose(
    z: &[f64],
    wa: &Tensor,
    wb: &Tensor,
    wc: &Tensor,
) -> Result<Tensor, CaptionerError> {
    let (rows, nf_a) = wa.dims2()?;
    let (nf_b, k) = wb.dims2()?;
    let (nf_c, cols) = wc.dims2()?;
    if nf_a != nf_b || nf_b != nf_c {
        return Err(CaptionerError::Dimension {
            what: "tgm factor count",
            expected: nf_a,
            found: nf_b.max(nf_c),
        });
    }
    if z.len() != k {
        return Err(CaptionerError::Dimension {
            what: "tgm topic vector",
            expected: k,
            found: z.len(),
        });
    }
    let scale = matvec(wb.data(), nf_b, k, z);
    let mut out = vec![0.0; rows * cols];
    for f in 0..nf_a {
        let s = scale[f];
        if s == 0.0 {
            continue;
        }
        for r in 0..rows {
            let a = wa.data()[r * nf_a + f] * s;
            if a == 0.0 {
                continue;
            }
            let row = &mut out[r * cols..(r + 1) * cols];
            let crow = &wc.data()[f * cols..(f + 1) * cols];
            for (o, c) in row.iter_mut().zip(crow.iter()) {
                *o += a * c;
            }
        }
    }
    Tensor::from_vec(&[rows, cols], out).map_err(CaptionerError::from)
}

/// Encoder: affine map of the concatenated features (with the topic
/// vector appended first for tce).
pub fn encode(
    params: &CaptionModelParams,
    features: &[f64],
    topic: Option<&[f64]>,
) -> Result<Vec<f64>, CaptionerError> {
    let dims = &params.dims;
    if features.len() != dims.feature_dim {
        return Err(CaptionerError::Dimension {
            what: "encoder features",
            expected: dims.feature_dim,
            found: features.len(),
        });
    }
    let mut input = features.to_vec();
    if dims.variant == CaptionVariant::Tce {
        let z = topic.ok_or(CaptionerError::MissingTopic(dims.variant))?;
        if z.len() != dims.topic_dim {
            return Err(CaptionerError::Dimension {
                what: "topic vector",
                expected: dims.topic_dim,
                found: z.len(),
            });
        }
        input.extend_from_slice(z);
    }
    let we = params.store.get("encoder.w").unwrap();
    let be = params.store.get("encoder.b").unwrap();
    let mut x = matvec(we.data(), dims.hidden, dims.encoder_input(), &input);
    for (v, b) in x.iter_mut().zip(be.data()) {
        *v += b;
    }
    Ok(x)
}

/// Per-step decoder input for a variant, given the previous word's
/// embedding.
pub fn decoder_input(
    params: &CaptionModelParams,
    prev_embedding: &[f64],
    topic: Option<&[f64]>,
) -> Result<Vec<f64>, CaptionerError> {
    let dims = &params.dims;
    let need_topic = || topic.ok_or(CaptionerError::MissingTopic(dims.variant));
    match dims.variant {
        CaptionVariant::Vanilla | CaptionVariant::Tce | CaptionVariant::Tgm => {
            Ok(prev_embedding.to_vec())
        }
        CaptionVariant::Tcd => {
            let z = need_topic()?;
            let mut input = prev_embedding.to_vec();
            input.extend_from_slice(z);
            Ok(input)
        }
        CaptionVariant::Tead | CaptionVariant::Temd => {
            let z = need_topic()?;
            let ze = topic_embedding(params, z)?;
            Ok(prev_embedding
                .iter()
                .zip(ze.iter())
                .map(|(w, e)| {
                    if dims.variant == CaptionVariant::Tead {
                        w + e
                    } else {
                        w * e
                    }
                })
                .collect())
        }
    }
}

/// z_e = W_z z + b_z.
pub fn topic_embedding(params: &CaptionModelParams, z: &[f64]) -> Result<Vec<f64>, CaptionerError> {
    let dims = &params.dims;
    if z.len() != dims.topic_dim {
        return Err(CaptionerError::Dimension {
            what: "topic vector",
            expected: dims.topic_dim,
            found: z.len(),
        });
    }
    let wz = params.store.get("topic.w").unwrap();
    let bz = params.store.get("topic.b").unwrap();
    let mut ze = matvec(wz.data(), dims.hidden, dims.topic_dim, z);
    for (v, b) in ze.iter_mut().zip(bz.data()) {
        *v += b;
    }
    Ok(ze)
}

/// Word distribution from the current state through the tied output
/// projection.
pub fn step_probabilities(
    state: &DecoderState,
    params: &CaptionModelParams,
) -> Result<Vec<f64>, CaptionerError> {
    let logits = output_logits(state, params);
    softmax(&logits).map_err(CaptionerError::from)
}

fn output_logits(state: &DecoderState, params: &CaptionModelParams) -> Vec<f64> {
    let dims = &params.dims;
    let e = params.embedding();
    let bd = params.store.get("output.b").unwrap();
    let mut logits = matvec(e.data(), dims.vocab, dims.hidden, &state.h);
    for (l, b) in logits.iter_mut().zip(bd.data()) {
        *l += b;
    }
    logits
}

enum StepExtra {
    Plain,
    ConcatTopic(Vec<f64>),
    AddEmbedding(Vec<f64>),
    MulEmbedding(Vec<f64>),
}

/// Per-video evaluator: encoder output, effective LSTM weights
/// (composed once for tgm since the topic is fixed), and the step-input
/// rule. Decoding and scoring are pure given this.
pub struct EvalModel<'a> {
    params: &'a CaptionModelParams,
    weights: LstmWeights,
    initial: DecoderState,
    extra: StepExtra,
}

impl<'a> EvalModel<'a> {
    pub fn prepare(
        params: &'a CaptionModelParams,
        features: &[f64],
        topic: Option<&[f64]>,
    ) -> Result<EvalModel<'a>, CaptionerError> {
        let dims = &params.dims;
        if dims.variant.uses_topics() {
            let z = topic.ok_or(CaptionerError::MissingTopic(dims.variant))?;
            if z.len() != dims.topic_dim {
                return Err(CaptionerError::Dimension {
                    what: "topic vector",
                    expected: dims.topic_dim,
                    found: z.len(),
                });
            }
        }
        let x = encode(params, features, topic)?;
        let initial = DecoderState {
            h: x,
            c: vec![0.0; dims.hidden],
        };
        let weights = effective_weights(params, topic)?;
        let extra = match dims.variant {
            CaptionVariant::Vanilla | CaptionVariant::Tce | CaptionVariant::Tgm => StepExtra::Plain,
            CaptionVariant::Tcd => StepExtra::ConcatTopic(topic.unwrap().to_vec()),
            CaptionVariant::Tead => {
                StepExtra::AddEmbedding(topic_embedding(params, topic.unwrap())?)
            }
            CaptionVariant::Temd => {
                StepExtra::MulEmbedding(topic_embedding(params, topic.unwrap())?)
            }
        };
        Ok(EvalModel {
            params,
            weights,
            initial,
            extra,
        })
    }

    pub fn initial_state(&self) -> DecoderState {
        self.initial.clone()
    }

    pub fn dims(&self) -> &CaptionDims {
        &self.params.dims
    }

    fn step_input(&self, prev_word: usize) -> Vec<f64> {
        let e = self.params.embed(prev_word);
        match &self.extra {
            StepExtra::Plain => e.to_vec(),
            StepExtra::ConcatTopic(z) => {
                let mut input = e.to_vec();
                input.extend_from_slice(z);
                input
            }
            StepExtra::AddEmbedding(ze) => e.iter().zip(ze).map(|(w, t)| w + t).collect(),
            StepExtra::MulEmbedding(ze) => e.iter().zip(ze).map(|(w, t)| w * t).collect(),
        }
    }

    /// Consume `prev_word` and return the next state with its logits.
    pub fn step(
        &self,
        state: &DecoderState,
        prev_word: usize,
    ) -> Result<(DecoderState, Vec<f64>), CaptionerError> {
        let input = self.step_input(prev_word);
        let next = lstm_step(state, &input, &self.weights)?;
        let logits = output_logits(&next, self.params);
        Ok((next, logits))
    }

    /// Negative log-likelihood of a token sequence (teacher forcing,
    /// no dropout). `tokens` excludes the sentence markers; the end
    /// marker is scored as the final prediction.
    pub fn sequence_nll(&self, tokens: &[usize]) -> Result<f64, CaptionerError> {
        if tokens.is_empty() {
            return Err(CaptionerError::EmptyCaption);
        }
        let mut state = self.initial_state();
        let mut nll = 0.0;
        let mut prev = crate::corpus::Vocabulary::BOS;
        for &target in tokens
            .iter()
            .chain(std::iter::once(&crate::corpus::Vocabulary::EOS))
        {
            let (next, logits) = self.step(&state, prev)?;
            let log_probs = crate::numerics::log_softmax(&logits)?;
            nll -= log_probs[target];
            state = next;
            prev = target;
        }
        Ok(nll)
    }
}

/// Effective per-gate weights: stored matrices, or the per-topic
/// composition for tgm.
pub fn effective_weights(
    params: &CaptionModelParams,
    topic: Option<&[f64]>,
) -> Result<LstmWeights, CaptionerError> {
    let dims = &params.dims;
    let mut gates = Vec::with_capacity(4);
    for gate in GATES {
        let (wx, wh) = if dims.variant == CaptionVariant::Tgm {
            let z = topic.ok_or(CaptionerError::MissingTopic(dims.variant))?;
            let compose = |map: &str| -> Result<Tensor, CaptionerError> {
                tgm_compose(
                    z,
                    params.store.get(&format!("lstm.{gate}.{map}.wa")).unwrap(),
                    params.store.get(&format!("lstm.{gate}.{map}.wb")).unwrap(),
                    params.store.get(&format!("lstm.{gate}.{map}.wc")).unwrap(),
                )
            };
            (compose("x")?, compose("h")?)
        } else {
            (
                params
                    .store
                    .get(&format!("lstm.{gate}.wx"))
                    .unwrap()
                    .clone(),
                params
                    .store
                    .get(&format!("lstm.{gate}.wh"))
                    .unwrap()
                    .clone(),
            )
        };
        gates.push(GateWeights {
            wx,
            wh,
            b: params.store.get(&format!("lstm.{gate}.b")).unwrap().clone(),
        });
    }
    Ok(LstmWeights { gates })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_dims(variant: CaptionVariant) -> CaptionDims {
        CaptionDims {
            variant,
            hidden: 8,
            factors: 4,
            vocab: 20,
            feature_dim: 5,
            topic_dim: 3,
        }
    }

    #[test]
    fn encoder_zero_features_give_bias() {
        let mut rng = Rng::seed_from_u64(1);
        let params = init_caption_params(small_dims(CaptionVariant::Vanilla), &mut rng).unwrap();
        let x = encode(&params, &[0.0; 5], None).unwrap();
        assert_eq!(x, params.store.get("encoder.b").unwrap().data());
    }

    #[test]
    fn tce_encoder_width_includes_topics() {
        let dims = small_dims(CaptionVariant::Tce);
        assert_eq!(dims.encoder_input(), 5 + 3);
        let mut rng = Rng::seed_from_u64(2);
        let params = init_caption_params(dims, &mut rng).unwrap();
        let we = params.store.get("encoder.w").unwrap();
        assert_eq!(we.dims2().unwrap(), (8, 8));
    }

    #[test]
    fn tce_zero_topic_matches_trimmed_encoder() {
        let mut rng = Rng::seed_from_u64(3);
        let tce = init_caption_params(small_dims(CaptionVariant::Tce), &mut rng).unwrap();
        let features = [0.3, -0.5, 0.7, 0.1, -0.2];
        let x = encode(&tce, &features, Some(&[0.0, 0.0, 0.0])).unwrap();
        // Manually apply only the feature columns.
        let we = tce.store.get("encoder.w").unwrap();
        let be = tce.store.get("encoder.b").unwrap();
        let (h, cols) = we.dims2().unwrap();
        let mut expected = vec![0.0; h];
        for r in 0..h {
            for (j, f) in features.iter().enumerate() {
                expected[r] += we.data()[r * cols + j] * f;
            }
            expected[r] += be.data()[r];
        }
        for (a, b) in x.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn lstm_zero_weights_zero_output() {
        let h = 4;
        let zero_gate = || GateWeights {
            wx: Tensor::zeros(&[h, 6]),
            wh: Tensor::zeros(&[h, h]),
            b: Tensor::vector(vec![0.0; h]),
        };
        let weights = LstmWeights {
            gates: vec![zero_gate(), zero_gate(), zero_gate(), zero_gate()],
        };
        let state = DecoderState::zeros(h);
        let mut rng = Rng::seed_from_u64(4);
        for _ in 0..5 {
            let input: Vec<f64> = (0..6).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let next = lstm_step(&state, &input, &weights).unwrap();
            assert!(next.h.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn lstm_saturated_forget_gate_preserves_cell() {
        let h = 3;
        let mut rng = Rng::seed_from_u64(5);
        let rand_gate = |rng: &mut Rng, bias: f64| GateWeights {
            wx: Tensor::from_vec(
                &[h, 2],
                (0..h * 2).map(|_| rng.uniform(-0.5, 0.5)).collect(),
            )
            .unwrap(),
            wh: Tensor::from_vec(
                &[h, h],
                (0..h * h).map(|_| rng.uniform(-0.5, 0.5)).collect(),
            )
            .unwrap(),
            b: Tensor::vector(vec![bias; h]),
        };
        let weights = LstmWeights {
            gates: vec![
                rand_gate(&mut rng, 0.0),
                rand_gate(&mut rng, 50.0), // forget gate saturated open
                rand_gate(&mut rng, 0.0),
                rand_gate(&mut rng, 0.0),
            ],
        };
        let state = DecoderState {
            h: vec![0.1, -0.2, 0.3],
            c: vec![0.5, -0.4, 0.8],
        };
        let input = [0.3, -0.6];
        let next = lstm_step(&state, &input, &weights).unwrap();
        // c' should be c + i*g to within the forget-gate saturation.
        for k in 0..h {
            let pre_i: f64 = weights.gates[0].wx.data()[k * 2..k * 2 + 2]
                .iter()
                .zip(input.iter())
                .map(|(w, x)| w * x)
                .sum::<f64>()
                + weights.gates[0].wh.data()[k * h..(k + 1) * h]
                    .iter()
                    .zip(state.h.iter())
                    .map(|(w, x)| w * x)
                    .sum::<f64>();
            let pre_g: f64 = weights.gates[3].wx.data()[k * 2..k * 2 + 2]
                .iter()
                .zip(input.iter())
                .map(|(w, x)| w * x)
                .sum::<f64>()
                + weights.gates[3].wh.data()[k * h..(k + 1) * h]
                    .iter()
                    .zip(state.h.iter())
                    .map(|(w, x)| w * x)
                    .sum::<f64>();
            let expected = state.c[k] + sigmoid(pre_i) * pre_g.tanh();
            assert!((next.c[k] - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn tgm_compose_hand_example() {
        let wa = Tensor::from_vec(&[2, 1], vec![1.0, 2.0]).unwrap();
        let wb = Tensor::from_vec(&[1, 2], vec![3.0, 5.0]).unwrap();
        let wc = Tensor::from_vec(&[1, 2], vec![7.0, 11.0]).unwrap();
        let w = tgm_compose(&[1.0, 0.0], &wa, &wb, &wc).unwrap();
        assert_eq!(w.data(), &[21.0, 33.0, 42.0, 66.0]);
    }

    #[test]
    fn tgm_compose_zero_topic_is_zero() {
        let mut rng = Rng::seed_from_u64(6);
        let wa = uniform_tensor(&mut rng, 3, 2);
        let wb = uniform_tensor(&mut rng, 2, 4);
        let wc = uniform_tensor(&mut rng, 2, 5);
        let w = tgm_compose(&[0.0; 4], &wa, &wb, &wc).unwrap();
        assert!(w.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tgm_compose_one_hot_selects_column() {
        let mut rng = Rng::seed_from_u64(7);
        let wa = uniform_tensor(&mut rng, 3, 2);
        let wb = uniform_tensor(&mut rng, 2, 4);
        let wc = uniform_tensor(&mut rng, 2, 5);
        for k in 0..4 {
            let mut z = vec![0.0; 4];
            z[k] = 1.0;
            let w = tgm_compose(&z, &wa, &wb, &wc).unwrap();
            // Direct evaluation with the k-th column of wb as the scale.
            let mut expected = [0.0; 3 * 5];
            for r in 0..3 {
                for c in 0..5 {
                    for f in 0..2 {
                        expected[r * 5 + c] +=
                            wa.data()[r * 2 + f] * wb.data()[f * 4 + k] * wc.data()[f * 5 + c];
                    }
                }
            }
            for (a, b) in w.data().iter().zip(expected.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tgm_compose_is_linear_in_topic() {
        let mut rng = Rng::seed_from_u64(8);
        let wa = uniform_tensor(&mut rng, 4, 3);
        let wb = uniform_tensor(&mut rng, 3, 3);
        let wc = uniform_tensor(&mut rng, 3, 4);
        // Materialize each one-hot composition, then check the convex
        // combination matches the direct composition.
        let columns: Vec<Tensor> = (0..3)
            .map(|k| {
                let mut z = vec![0.0; 3];
                z[k] = 1.0;
                tgm_compose(&z, &wa, &wb, &wc).unwrap()
            })
            .collect();
        for _ in 0..20 {
            let z: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let direct = tgm_compose(&z, &wa, &wb, &wc).unwrap();
            let mut summed = [0.0; 16];
            for (k, col) in columns.iter().enumerate() {
                for (s, v) in summed.iter_mut().zip(col.data()) {
                    *s += z[k] * v;
                }
            }
            for (a, b) in direct.data().iter().zip(summed.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn decoder_input_shapes_and_reductions() {
        let mut rng = Rng::seed_from_u64(9);
        let tcd = init_caption_params(small_dims(CaptionVariant::Tcd), &mut rng).unwrap();
        let e = tcd.embed(4).to_vec();
        let input = decoder_input(&tcd, &e, Some(&[0.1, 0.2, 0.7])).unwrap();
        assert_eq!(input.len(), 8 + 3);

        // tead with a zero topic embedding is the plain input.
        let mut tead = init_caption_params(small_dims(CaptionVariant::Tead), &mut rng).unwrap();
        for name in ["topic.w", "topic.b"] {
            tead.store
                .get_mut(name)
                .unwrap()
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let e = tead.embed(3).to_vec();
        assert_eq!(decoder_input(&tead, &e, Some(&[0.5, 0.3, 0.2])).unwrap(), e);

        // temd with a unit topic embedding is the plain input.
        let mut temd = init_caption_params(small_dims(CaptionVariant::Temd), &mut rng).unwrap();
        temd.store
            .get_mut("topic.w")
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
        temd.store
            .get_mut("topic.b")
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 1.0);
        let e = temd.embed(7).to_vec();
        assert_eq!(decoder_input(&temd, &e, Some(&[0.5, 0.3, 0.2])).unwrap(), e);
    }

    #[test]
    fn step_probabilities_uniform_on_zero_state() {
        let mut rng = Rng::seed_from_u64(10);
        let mut params =
            init_caption_params(small_dims(CaptionVariant::Vanilla), &mut rng).unwrap();
        params
            .store
            .get_mut("output.b")
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
        let state = DecoderState::zeros(8);
        let probs = step_probabilities(&state, &params).unwrap();
        for &p in &probs {
            assert!((p - 1.0 / 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn step_argmax_invariant_to_constant_bias_shift() {
        let mut rng = Rng::seed_from_u64(11);
        let params = init_caption_params(small_dims(CaptionVariant::Vanilla), &mut rng).unwrap();
        let mut shifted = params.clone();
        shifted
            .store
            .get_mut("output.b")
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += 3.25);
        let state = DecoderState {
            h: (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect(),
            c: vec![0.0; 8],
        };
        let a = step_probabilities(&state, &params).unwrap();
        let b = step_probabilities(&state, &shifted).unwrap();
        assert_eq!(crate::numerics::argmax(&a), crate::numerics::argmax(&b));
    }
}
