//! Topic-guided video captioning at desk scale.
//!
//! The pipeline mines latent topics from training captions with LDA,
//! distills them into multimodal topic predictors, and generates
//! captions with a family of topic-conditioned LSTM decoders, decoded
//! by beam search and scored with BLEU@4, ROUGE-L and CIDEr.

pub mod captioner;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod metrics;
pub mod numerics;
pub mod predictor;
pub mod topics;
