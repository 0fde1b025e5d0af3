//! Latent topic mining over caption documents.
//!
//! Fitting runs collapsed Gibbs sampling over per-token topic
//! assignments. After burn-in, every `sample_lag`-th sweep is retained
//! and the topic-word distributions and per-document topic mixtures are
//! posterior means averaged over the retained sweeps. Inference for a
//! new document folds it in against the fitted topic-word estimates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BagOfWords, VideoRecord};
use crate::numerics::{argmax, sample_categorical, Rng};

#[derive(Debug, Error)]
pub enum TopicsError {
    #[error("all documents are empty")]
    EmptyDocuments,
    #[error("invalid settings: {0}")]
    BadConfig(String),
    #[error("video {0} was not part of the training fit")]
    UnknownVideo(String),
    #[error("topic index {index} out of range for {topics} topics")]
    TopicOutOfRange { index: usize, topics: usize },
    #[error("no categorized videos available")]
    NoCategories,
    #[error("word index {word} exceeds vocabulary size {vocab}")]
    WordOutOfRange { word: usize, vocab: usize },
}

#[derive(Clone, Copy, Debug)]
pub struct LdaConfig {
    pub topics: usize,
    /// Symmetric document-topic prior; defaults to 50/K when unset.
    pub alpha: Option<f64>,
    /// Symmetric topic-word prior.
    pub eta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    /// Keep every `sample_lag`-th sweep after burn-in.
    pub sample_lag: usize,
}

impl Default for LdaConfig {
    fn default() -> LdaConfig {
        LdaConfig {
            topics: 20,
            alpha: None,
            eta: 0.01,
            iterations: 1000,
            burn_in: 200,
            sample_lag: 20,
        }
    }
}

impl LdaConfig {
    pub fn effective_alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.topics as f64)
    }

    fn validate(&self) -> Result<(), TopicsError> {
        if self.topics < 2 {
            return Err(TopicsError::BadConfig("need at least 2 topics".into()));
        }
        if self.eta <= 0.0 || self.effective_alpha() <= 0.0 {
            return Err(TopicsError::BadConfig("priors must be positive".into()));
        }
        if self.iterations <= self.burn_in {
            return Err(TopicsError::BadConfig(
                "iterations must exceed burn_in".into(),
            ));
        }
        if self.sample_lag == 0 {
            return Err(TopicsError::BadConfig("sample_lag must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct InferConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub sample_lag: usize,
}

impl Default for InferConfig {
    fn default() -> InferConfig {
        InferConfig {
            iterations: 100,
            burn_in: 20,
            sample_lag: 2,
        }
    }
}

/// Probability vector over topics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopicDistribution(Vec<f64>);

impl TopicDistribution {
    /// Wrap a vector that already lies on the simplex (within 1e-9).
    pub fn new(probs: Vec<f64>) -> Result<TopicDistribution, TopicsError> {
        if probs.is_empty() {
            return Err(TopicsError::BadConfig("empty distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(TopicsError::BadConfig(
                "distribution entries must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(TopicsError::BadConfig(format!(
                "distribution sums to {sum}, not 1"
            )));
        }
        Ok(TopicDistribution(probs))
    }

    pub fn uniform(k: usize) -> TopicDistribution {
        TopicDistribution(vec![1.0 / k as f64; k])
    }

    /// Normalize arbitrary non-negative mass into a distribution.
    pub fn from_unnormalized(mut mass: Vec<f64>) -> Result<TopicDistribution, TopicsError> {
        let sum: f64 = mass.iter().sum();
        if !sum.is_finite() || sum <= 0.0 {
            return Err(TopicsError::BadConfig(
                "cannot normalize non-positive mass".into(),
            ));
        }
        for v in &mut mass {
            *v /= sum;
        }
        TopicDistribution::new(mass)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Most likely topic, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Fitted LDA state: assignment counts, retained-sample averages, and
/// the hyperparameters that produced them.
#[derive(Clone, Debug)]
pub struct TopicModel {
    topics: usize,
    alpha: f64,
    eta: f64,
    vocab_size: usize,
    /// K x V topic-word assignment counts (final sweep).
    topic_word_counts: Vec<u32>,
    /// Per-topic totals (final sweep).
    topic_totals: Vec<u32>,
    /// Per-document topic counts (final sweep).
    doc_topic_counts: Vec<Vec<u32>>,
    doc_totals: Vec<u32>,
    /// Per-token topic assignments (final sweep).
    assignments: Vec<Vec<u32>>,
    /// K x V topic-word distributions averaged over retained sweeps.
    beta: Vec<f64>,
    /// Per-document mixtures averaged over retained sweeps.
    doc_theta: Vec<Vec<f64>>,
    doc_ids: Vec<String>,
}

/// Posterior-mean mixture from smoothed counts.
pub(crate) fn smoothed_theta(counts: &[u32], total: u32, alpha: f64) -> Vec<f64> {
    let k = counts.len() as f64;
    let denom = total as f64 + k * alpha;
    counts.iter().map(|&c| (c as f64 + alpha) / denom).collect()
}

pub fn lda_fit(
    documents: &[(String, BagOfWords)],
    vocab_size: usize,
    cfg: &LdaConfig,
    rng: &mut Rng,
) -> Result<TopicModel, TopicsError> {
    cfg.validate()?;
    if documents.iter().all(|(_, bag)| bag.is_empty()) {
        return Err(TopicsError::EmptyDocuments);
    }
    let k = cfg.topics;
    let alpha = cfg.effective_alpha();
    let eta = cfg.eta;
    let v = vocab_size;

    let words: Vec<Vec<usize>> = documents.iter().map(|(_, bag)| bag.expand()).collect();
    for doc in &words {
        if let Some(&w) = doc.iter().find(|&&w| w >= v) {
            return Err(TopicsError::WordOutOfRange { word: w, vocab: v });
        }
    }

    let d = words.len();
    let mut topic_word = vec![0u32; k * v];
    let mut topic_total = vec![0u32; k];
    let mut doc_topic: Vec<Vec<u32>> = vec![vec![0; k]; d];
    let mut doc_total = vec![0u32; d];
    let mut assignments: Vec<Vec<u32>> = words.iter().map(|doc| vec![0; doc.len()]).collect();

    for (di, doc) in words.iter().enumerate() {
        for (ti, &word) in doc.iter().enumerate() {
            let topic = rng.below(k);
            assignments[di][ti] = topic as u32;
            topic_word[topic * v + word] += 1;
            topic_total[topic] += 1;
            doc_topic[di][topic] += 1;
            doc_total[di] += 1;
        }
    }

    let mut weights = vec![0.0; k];
    let eta_total = eta * v as f64;
    let mut beta_acc = vec![0.0; k * v];
    let mut theta_acc: Vec<Vec<f64>> = vec![vec![0.0; k]; d];
    let mut retained = 0usize;

    for iter in 0..cfg.iterations {
        for (di, doc) in words.iter().enumerate() {
            for (ti, &word) in doc.iter().enumerate() {
                let old = assignments[di][ti] as usize;
                topic_word[old * v + word] -= 1;
                topic_total[old] -= 1;
                doc_topic[di][old] -= 1;
                for (topic, weight) in weights.iter_mut().enumerate() {
                    *weight = (doc_topic[di][topic] as f64 + alpha)
                        * (topic_word[topic * v + word] as f64 + eta)
                        / (topic_total[topic] as f64 + eta_total);
                }
                let new = sample_categorical(&weights, rng).expect("positive gibbs weights");
                assignments[di][ti] = new as u32;
                topic_word[new * v + word] += 1;
                topic_total[new] += 1;
                doc_topic[di][new] += 1;
            }
        }
        if iter >= cfg.burn_in && (iter - cfg.burn_in + 1).is_multiple_of(cfg.sample_lag) {
            retained += 1;
            for topic in 0..k {
                let denom = topic_total[topic] as f64 + eta_total;
                for word in 0..v {
                    beta_acc[topic * v + word] +=
                        (topic_word[topic * v + word] as f64 + eta) / denom;
                }
            }
            for di in 0..d {
                let theta = smoothed_theta(&doc_topic[di], doc_total[di], alpha);
                for (acc, t) in theta_acc[di].iter_mut().zip(theta.iter()) {
                    *acc += t;
                }
            }
        }
    }
    debug_assert!(retained > 0);
    for b in &mut beta_acc {
        *b /= retained as f64;
    }
    for theta in &mut theta_acc {
        for t in theta.iter_mut() {
            *t /= retained as f64;
        }
    }

    Ok(TopicModel {
        topics: k,
        alpha,
        eta,
        vocab_size: v,
        topic_word_counts: topic_word,
        topic_totals: topic_total,
        doc_topic_counts: doc_topic,
        doc_totals: doc_total,
        assignments,
        beta: beta_acc,
        doc_theta: theta_acc,
        doc_ids: documents.iter().map(|(id, _)| id.clone()).collect(),
    })
}

impl TopicModel {
    pub fn topics(&self) -> usize {
        self.topics
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn beta_row(&self, topic: usize) -> &[f64] {
        &self.beta[topic * self.vocab_size..(topic + 1) * self.vocab_size]
    }

    /// Total tokens currently assigned across all topics.
    pub fn assigned_tokens(&self) -> u64 {
        self.topic_totals.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn doc_token_total(&self) -> u64 {
        self.doc_totals.iter().map(|&c| u64::from(c)).sum()
    }

    /// Fold-in inference for a new document with the fitted topic-word
    /// estimates frozen. Empty documents get the uniform mixture.
    pub fn infer(
        &self,
        document: &BagOfWords,
        cfg: &InferConfig,
        rng: &mut Rng,
    ) -> TopicDistribution {
        let words: Vec<usize> = document
            .expand()
            .into_iter()
            .filter(|&w| w < self.vocab_size)
            .collect();
        if words.is_empty() {
            return TopicDistribution::uniform(self.topics);
        }
        let k = self.topics;
        let mut local = vec![0u32; k];
        let mut z = vec![0usize; words.len()];
        for (ti, &word) in words.iter().enumerate() {
            let mut weights = vec![0.0; k];
            for (topic, weight) in weights.iter_mut().enumerate() {
                *weight =
                    (local[topic] as f64 + self.alpha) * self.beta[topic * self.vocab_size + word];
            }
            let topic = sample_categorical(&weights, rng).expect("positive fold-in weights");
            z[ti] = topic;
            local[topic] += 1;
        }
        let total = words.len() as u32;
        let mut acc = vec![0.0; k];
        let mut retained = 0usize;
        let sweeps = cfg.iterations.max(cfg.burn_in + 1);
        for iter in 0..sweeps {
            for (ti, &word) in words.iter().enumerate() {
                let old = z[ti];
                local[old] -= 1;
                let mut weights = vec![0.0; k];
                for (topic, weight) in weights.iter_mut().enumerate() {
                    *weight = (local[topic] as f64 + self.alpha)
                        * self.beta[topic * self.vocab_size + word];
                }
                let new = sample_categorical(&weights, rng).expect("positive fold-in weights");
                z[ti] = new;
                local[new] += 1;
            }
            if iter >= cfg.burn_in && (iter - cfg.burn_in + 1).is_multiple_of(cfg.sample_lag.max(1))
            {
                retained += 1;
                for (a, t) in acc
                    .iter_mut()
                    .zip(smoothed_theta(&local, total, self.alpha))
                {
                    *a += t;
                }
            }
        }
        if retained == 0 {
            retained = 1;
            for (a, t) in acc
                .iter_mut()
                .zip(smoothed_theta(&local, total, self.alpha))
            {
                *a += t;
            }
        }
        for a in &mut acc {
            *a /= retained as f64;
        }
        TopicDistribution::from_unnormalized(acc).expect("positive mixture")
    }

    /// Mixture of a document that was part of the fit.
    pub fn teacher_distribution(&self, video_id: &str) -> Result<TopicDistribution, TopicsError> {
        let di = self
            .doc_ids
            .iter()
            .position(|id| id == video_id)
            .ok_or_else(|| TopicsError::UnknownVideo(video_id.to_string()))?;
        TopicDistribution::from_unnormalized(self.doc_theta[di].clone())
            .map_err(|_| TopicsError::UnknownVideo(video_id.to_string()))
    }

    /// The `n` highest-probability words of a topic, ties broken by
    /// word index.
    pub fn top_words(&self, topic: usize, n: usize) -> Result<Vec<(usize, f64)>, TopicsError> {
        if topic >= self.topics {
            return Err(TopicsError::TopicOutOfRange {
                index: topic,
                topics: self.topics,
            });
        }
        let row = self.beta_row(topic);
        let mut ranked: Vec<(usize, f64)> = row.iter().cloned().enumerate().collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(n.min(self.vocab_size));
        Ok(ranked)
    }

    pub(crate) fn parts(&self) -> TopicModelParts<'_> {
        TopicModelParts {
            topics: self.topics,
            alpha: self.alpha,
            eta: self.eta,
            vocab_size: self.vocab_size,
            topic_word_counts: &self.topic_word_counts,
            topic_totals: &self.topic_totals,
            doc_topic_counts: &self.doc_topic_counts,
            doc_totals: &self.doc_totals,
            assignments: &self.assignments,
            beta: &self.beta,
            doc_theta: &self.doc_theta,
            doc_ids: &self.doc_ids,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        topics: usize,
        alpha: f64,
        eta: f64,
        vocab_size: usize,
        topic_word_counts: Vec<u32>,
        topic_totals: Vec<u32>,
        doc_topic_counts: Vec<Vec<u32>>,
        doc_totals: Vec<u32>,
        assignments: Vec<Vec<u32>>,
        beta: Vec<f64>,
        doc_theta: Vec<Vec<f64>>,
        doc_ids: Vec<String>,
    ) -> TopicModel {
        TopicModel {
            topics,
            alpha,
            eta,
            vocab_size,
            topic_word_counts,
            topic_totals,
            doc_topic_counts,
            doc_totals,
            assignments,
            beta,
            doc_theta,
            doc_ids,
        }
    }
}

pub(crate) struct TopicModelParts<'a> {
    pub topics: usize,
    pub alpha: f64,
    pub eta: f64,
    pub vocab_size: usize,
    pub topic_word_counts: &'a [u32],
    pub topic_totals: &'a [u32],
    pub doc_topic_counts: &'a [Vec<u32>],
    pub doc_totals: &'a [u32],
    pub assignments: &'a [Vec<u32>],
    pub beta: &'a [f64],
    pub doc_theta: &'a [Vec<f64>],
    pub doc_ids: &'a [String],
}

/// Co-occurrence of most-likely topics with category tags.
#[derive(Clone, Debug, Serialize)]
pub struct CooccurrenceTable {
    /// Distinct category tags, ascending.
    pub categories: Vec<u32>,
    /// K x C assignment counts.
    pub counts: Vec<Vec<usize>>,
    /// Row-normalized percentages (zero rows stay zero).
    pub percentages: Vec<Vec<f64>>,
}

impl CooccurrenceTable {
    pub fn row_total(&self, topic: usize) -> usize {
        self.counts[topic].iter().sum()
    }
}

pub fn topic_category_cooccurrence(
    records: &[VideoRecord],
    model: &TopicModel,
) -> Result<CooccurrenceTable, TopicsError> {
    let mut categories: Vec<u32> = records.iter().filter_map(|r| r.category).collect();
    categories.sort_unstable();
    categories.dedup();
    if categories.is_empty() {
        return Err(TopicsError::NoCategories);
    }
    let mut counts = vec![vec![0usize; categories.len()]; model.topics()];
    let mut any = false;
    for record in records {
        let Some(category) = record.category else {
            continue;
        };
        let Ok(theta) = model.teacher_distribution(&record.video_id) else {
            continue;
        };
        let topic = theta.argmax();
        let col = categories.binary_search(&category).expect("known category");
        counts[topic][col] += 1;
        any = true;
    }
    if !any {
        return Err(TopicsError::NoCategories);
    }
    let percentages = counts
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            if total == 0 {
                vec![0.0; row.len()]
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect();
    Ok(CooccurrenceTable {
        categories,
        counts,
        percentages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, StopwordSet};
    use crate::corpus::{generate_synthetic_corpus, video_document, SyntheticConfig, Vocabulary};

    type BlockCorpus = (
        Vec<(String, BagOfWords)>,
        Vocabulary,
        Vec<Vec<String>>,
        Vec<VideoRecord>,
    );

    fn block_corpus(seed: u64) -> BlockCorpus {
        let cfg = SyntheticConfig {
            topics: 3,
            vocab_words: 60,
            videos_per_topic: 20,
            captions_per_video: 4,
            caption_len: 10,
            dominant_mass: 0.9,
            test_per_topic: 2,
            ..SyntheticConfig::default()
        };
        let mut rng = Rng::seed_from_u64(seed);
        let corpus = generate_synthetic_corpus(&cfg, &mut rng).unwrap();
        let vocab = build_vocabulary(&corpus.records, 3).unwrap();
        let stop = StopwordSet::default_english();
        let docs: Vec<(String, BagOfWords)> = corpus
            .records
            .iter()
            .filter(|r| r.split == crate::corpus::Split::Train)
            .map(|r| (r.video_id.clone(), video_document(r, &vocab, &stop)))
            .collect();
        (docs, vocab, corpus.topic_words, corpus.records)
    }

    fn fit_cfg() -> LdaConfig {
        LdaConfig {
            topics: 3,
            alpha: Some(0.5),
            eta: 0.01,
            iterations: 300,
            burn_in: 100,
            sample_lag: 10,
        }
    }

    #[test]
    fn recovers_disjoint_blocks() {
        let (docs, vocab, blocks, _) = block_corpus(41);
        let mut rng = Rng::seed_from_u64(13);
        let model = lda_fit(&docs, vocab.len(), &fit_cfg(), &mut rng).unwrap();
        // Each fitted topic's top-10 words should fall inside a single
        // generating block, and blocks should be distinct.
        let mut matched = Vec::new();
        for topic in 0..3 {
            let top = model.top_words(topic, 10).unwrap();
            let mut best = (0usize, 0usize);
            for (bi, block) in blocks.iter().enumerate() {
                let hits = top
                    .iter()
                    .filter(|(w, _)| block.contains(&vocab.token(*w).to_string()))
                    .count();
                if hits > best.1 {
                    best = (bi, hits);
                }
            }
            assert!(best.1 >= 8, "topic {topic} overlap {}", best.1);
            matched.push(best.0);
        }
        matched.sort_unstable();
        matched.dedup();
        assert_eq!(matched.len(), 3, "topics collapsed onto the same block");
    }

    #[test]
    fn single_word_document_concentrates() {
        let mut bag = BagOfWords::default();
        for _ in 0..200 {
            bag.add(3);
        }
        let docs = vec![("only".to_string(), bag)];
        let cfg = LdaConfig {
            topics: 2,
            alpha: Some(0.1),
            eta: 0.01,
            iterations: 200,
            burn_in: 50,
            sample_lag: 5,
        };
        let mut rng = Rng::seed_from_u64(2);
        let model = lda_fit(&docs, 6, &cfg, &mut rng).unwrap();
        let theta = model.teacher_distribution("only").unwrap();
        let dominant = theta.argmax();
        assert!(
            model.beta_row(dominant)[3] > 0.99,
            "beta {}",
            model.beta_row(dominant)[3]
        );
    }

    #[test]
    fn token_conservation() {
        let (docs, vocab, _, _) = block_corpus(7);
        let total_tokens: u64 = docs.iter().map(|(_, b)| b.total() as u64).sum();
        let mut rng = Rng::seed_from_u64(3);
        let model = lda_fit(&docs, vocab.len(), &fit_cfg(), &mut rng).unwrap();
        assert_eq!(model.assigned_tokens(), total_tokens);
        assert_eq!(model.doc_token_total(), total_tokens);
    }

    #[test]
    fn beta_rows_and_theta_on_simplex() {
        let (docs, vocab, _, _) = block_corpus(9);
        let mut rng = Rng::seed_from_u64(4);
        let model = lda_fit(&docs, vocab.len(), &fit_cfg(), &mut rng).unwrap();
        for topic in 0..model.topics() {
            let sum: f64 = model.beta_row(topic).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "beta row {topic} sums to {sum}");
            assert!(model.beta_row(topic).iter().all(|&p| p >= 0.0));
        }
        for id in model.doc_ids() {
            let theta = model.teacher_distribution(id).unwrap();
            let sum: f64 = theta.probs().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_is_seed_deterministic() {
        let (docs, vocab, _, _) = block_corpus(11);
        let a = lda_fit(&docs, vocab.len(), &fit_cfg(), &mut Rng::seed_from_u64(5)).unwrap();
        let b = lda_fit(&docs, vocab.len(), &fit_cfg(), &mut Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.beta, b.beta);
        assert_eq!(a.doc_theta, b.doc_theta);
        assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn infer_empty_document_is_uniform() {
        let (docs, vocab, _, _) = block_corpus(15);
        let mut rng = Rng::seed_from_u64(6);
        let model = lda_fit(&docs, vocab.len(), &fit_cfg(), &mut rng).unwrap();
        let theta = model.infer(&BagOfWords::default(), &InferConfig::default(), &mut rng);
        for &p in theta.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn infer_pure_block_document() {
        let (docs, vocab, blocks, _) = block_corpus(17);
        let mut rng = Rng::seed_from_u64(7);
        let model = lda_fit(&docs, vocab.len(), &fit_cfg(), &mut rng).unwrap();
        // Build a document of words purely from block 0 and find which
        // fitted topic owns that block.
        let mut bag = BagOfWords::default();
        for word in blocks[0].iter().take(12) {
            bag.add(vocab.index_of(word));
        }
        let theta = model.infer(&bag, &InferConfig::default(), &mut rng);
        let top = theta.argmax();
        let top_words = model.top_words(top, 10).unwrap();
        let hits = top_words
            .iter()
            .filter(|(w, _)| blocks[0].contains(&vocab.token(*w).to_string()))
            .count();
        assert!(hits >= 8, "inferred topic not aligned with block");
        assert!(theta.probs()[top] > 0.9, "mass {}", theta.probs()[top]);
    }

    #[test]
    fn infer_is_seed_deterministic() {
        let (docs, vocab, blocks, _) = block_corpus(19);
        let model = lda_fit(&docs, vocab.len(), &fit_cfg(), &mut Rng::seed_from_u64(8)).unwrap();
        let mut bag = BagOfWords::default();
        for word in blocks[1].iter().take(8) {
            bag.add(vocab.index_of(word));
        }
        let a = model.infer(&bag, &InferConfig::default(), &mut Rng::seed_from_u64(9));
        let b = model.infer(&bag, &InferConfig::default(), &mut Rng::seed_from_u64(9));
        assert_eq!(a.probs(), b.probs());
    }

    #[test]
    fn infer_close_to_teacher_on_training_document() {
        let (docs, vocab, _, _) = block_corpus(23);
        let model = lda_fit(&docs, vocab.len(), &fit_cfg(), &mut Rng::seed_from_u64(10)).unwrap();
        let (id, bag) = &docs[0];
        let teacher = model.teacher_distribution(id).unwrap();
        let folded = model.infer(bag, &InferConfig::default(), &mut Rng::seed_from_u64(11));
        let tv: f64 = teacher
            .probs()
            .iter()
            .zip(folded.probs())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.1, "total variation {tv}");
    }

    #[test]
    fn teacher_formula_single_token() {
        let theta = smoothed_theta(&[1, 0], 1, 0.5);
        assert_eq!(theta, vec![0.75, 0.25]);
    }

    #[test]
    fn teacher_unknown_video_errors() {
        let (docs, vocab, _, _) = block_corpus(27);
        let model = lda_fit(&docs, vocab.len(), &fit_cfg(), &mut Rng::seed_from_u64(12)).unwrap();
        assert!(matches!(
            model.teacher_distribution("nope"),
            Err(TopicsError::UnknownVideo(_))
        ));
    }

    #[test]
    fn top_words_edges() {
        let (docs, vocab, _, _) = block_corpus(29);
        let model = lda_fit(&docs, vocab.len(), &fit_cfg(), &mut Rng::seed_from_u64(14)).unwrap();
        assert!(model.top_words(0, 0).unwrap().is_empty());
        let all = model.top_words(0, vocab.len() + 50).unwrap();
        assert_eq!(all.len(), vocab.len());
        assert!(model.top_words(99, 5).is_err());
    }

    #[test]
    fn empty_documents_rejected() {
        let docs = vec![("a".to_string(), BagOfWords::default())];
        assert!(matches!(
            lda_fit(&docs, 10, &fit_cfg(), &mut Rng::seed_from_u64(0)),
            Err(TopicsError::EmptyDocuments)
        ));
    }

    #[test]
    fn cooccurrence_diagonal_on_synthetic() {
        let (docs, vocab, _, records) = block_corpus(31);
        let model = lda_fit(&docs, vocab.len(), &fit_cfg(), &mut Rng::seed_from_u64(15)).unwrap();
        let table = topic_category_cooccurrence(&records, &model).unwrap();
        // Category tags equal generating topics, so each populated row
        // should concentrate on one distinct category.
        let mut dominant = Vec::new();
        for topic in 0..model.topics() {
            let total = table.row_total(topic);
            if total == 0 {
                continue;
            }
            let best = argmax(&table.percentages[topic]);
            assert!(
                table.percentages[topic][best] >= 0.8,
                "row {topic}: {:?}",
                table.percentages[topic]
            );
            dominant.push(best);
        }
        dominant.sort_unstable();
        dominant.dedup();
        assert_eq!(dominant.len(), 3);
    }

    #[test]
    fn cooccurrence_row_sums_match_counts() {
        let (docs, vocab, _, records) = block_corpus(33);
        let model = lda_fit(&docs, vocab.len(), &fit_cfg(), &mut Rng::seed_from_u64(16)).unwrap();
        let table = topic_category_cooccurrence(&records, &model).unwrap();
        let assigned: usize = (0..model.topics()).map(|t| table.row_total(t)).sum();
        let eligible = records
            .iter()
            .filter(|r| r.category.is_some() && model.teacher_distribution(&r.video_id).is_ok())
            .count();
        assert_eq!(assigned, eligible);
    }

    #[test]
    fn cooccurrence_without_categories_errors() {
        let (docs, vocab, _, mut records) = block_corpus(35);
        for r in &mut records {
            r.category = None;
        }
        let model = lda_fit(&docs, vocab.len(), &fit_cfg(), &mut Rng::seed_from_u64(17)).unwrap();
        assert!(matches!(
            topic_category_cooccurrence(&records, &model),
            Err(TopicsError::NoCategories)
        ));
    }
}
