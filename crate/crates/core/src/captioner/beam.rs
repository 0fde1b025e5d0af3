//! Beam-search decoding.

use crate::corpus::Vocabulary;
use crate::numerics::log_softmax;

use super::{CaptionModelParams, CaptionerError, DecoderState, EvalModel};

/// A partial or finished decode: emitted tokens (the end marker stays
/// in when it finished the hypothesis) and their accumulated
/// log-probability. `state` is the decoder state the last token's
/// distribution was computed from; the last token itself is consumed
/// lazily at the next expansion.
#[derive(Clone, Debug)]
pub struct BeamHypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub state: DecoderState,
    pub finished: bool,
}

/// Winning hypothesis of a decode.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamResult {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
}

impl BeamResult {
    /// Tokens without the end marker.
    pub fn words(&self) -> &[usize] {
        match self.tokens.split_last() {
            Some((&last, rest)) if last == Vocabulary::EOS => rest,
            _ => &self.tokens,
        }
    }
}

struct Candidate {
    parent: usize,
    token: usize,
    log_prob: f64,
}

fn better(a: &Candidate, b: &Candidate, live: &[BeamHypothesis]) -> std::cmp::Ordering {
    b.log_prob
        .partial_cmp(&a.log_prob)
        .expect("finite scores")
        .then_with(|| {
            let ta = &live[a.parent].tokens;
            let tb = &live[b.parent].tokens;
            ta.cmp(tb).then_with(|| a.token.cmp(&b.token))
        })
}

/// Standard beam search: expand every live hypothesis over the full
/// vocabulary, keep the `beam_width` best by accumulated
/// log-probability, finish on the end marker or at `max_len` tokens,
/// and return the best finished hypothesis. No length normalization;
/// ties break lexicographically on token ids, so decoding is
/// deterministic.
pub fn beam_search(
    params: &CaptionModelParams,
    features: &[f64],
    topic: Option<&[f64]>,
    beam_width: usize,
    max_len: usize,
) -> Result<BeamResult, CaptionerError> {
    if beam_width == 0 || max_len == 0 {
        return Err(CaptionerError::BadConfig(
            "beam width and maximum length must be positive".into(),
        ));
    }
    let model = EvalModel::prepare(params, features, topic)?;
    let mut live = vec![BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: model.initial_state(),
        finished: false,
    }];
    let mut finished: Vec<BeamHypothesis> = Vec::new();

    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let mut next_states = Vec::with_capacity(live.len());
        let mut candidates = Vec::with_capacity(live.len() * params.dims.vocab);
        for (parent, hyp) in live.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(Vocabulary::BOS);
            let (state, logits) = model.step(&hyp.state, prev)?;
            let log_probs = log_softmax(&logits)?;
            next_states.push(state);
            for (token, lp) in log_probs.iter().enumerate() {
                candidates.push(Candidate {
                    parent,
                    token,
                    log_prob: hyp.log_prob + lp,
                });
            }
        }
        candidates.sort_by(|a, b| better(a, b, &live));
        candidates.truncate(beam_width);

        let mut next_live = Vec::with_capacity(beam_width);
        for cand in candidates {
            let mut tokens = live[cand.parent].tokens.clone();
            tokens.push(cand.token);
            let done = cand.token == Vocabulary::EOS || tokens.len() == max_len;
            let hyp = BeamHypothesis {
                tokens,
                log_prob: cand.log_prob,
                state: next_states[cand.parent].clone(),
                finished: done,
            };
            if done {
                finished.push(hyp);
            } else {
                next_live.push(hyp);
            }
        }
        live = next_live;
    }

    let best = finished
        .into_iter()
        .max_by(|a, b| {
            a.log_prob
                .partial_cmp(&b.log_prob)
                .expect("finite scores")
                .then_with(|| b.tokens.cmp(&a.tokens))
        })
        .expect("max_len > 0 forces at least one finished hypothesis");
    Ok(BeamResult {
        tokens: best.tokens,
        log_prob: best.log_prob,
    })
}

/// Greedy decoding: the per-step argmax (lowest token id on ties).
pub fn greedy_decode(
    params: &CaptionModelParams,
    features: &[f64],
    topic: Option<&[f64]>,
    max_len: usize,
) -> Result<BeamResult, CaptionerError> {
    if max_len == 0 {
        return Err(CaptionerError::BadConfig(
            "maximum length must be positive".into(),
        ));
    }
    let model = EvalModel::prepare(params, features, topic)?;
    let mut state = model.initial_state();
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    let mut prev = Vocabulary::BOS;
    for _ in 0..max_len {
        let (next, logits) = model.step(&state, prev)?;
        let log_probs = log_softmax(&logits)?;
        let token = crate::numerics::argmax(&log_probs);
        log_prob += log_probs[token];
        tokens.push(token);
        state = next;
        prev = token;
        if token == Vocabulary::EOS {
            break;
        }
    }
    Ok(BeamResult { tokens, log_prob })
}
