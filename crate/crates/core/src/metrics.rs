//! Corpus-level multi-reference caption metrics: BLEU@4, ROUGE-L and
//! CIDEr.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no evaluation pairs")]
    Empty,
    #[error("pair {video_id} has no references")]
    NoReferences { video_id: String },
    #[error("consensus scoring needs at least 2 videos, got {0}")]
    TooFewVideos(usize),
}

/// One hypothesis with its reference captions, all tokenized.
#[derive(Clone, Debug)]
pub struct EvalPair {
    pub video_id: String,
    pub hypothesis: Vec<String>,
    pub references: Vec<Vec<String>>,
}

fn validate(pairs: &[EvalPair]) -> Result<(), MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    for pair in pairs {
        if pair.references.is_empty() {
            return Err(MetricsError::NoReferences {
                video_id: pair.video_id.clone(),
            });
        }
    }
    Ok(())
}

/// n-gram counts keyed by the joined tokens (the separator cannot occur
/// inside a token).
fn ngram_counts(tokens: &[String], n: usize) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window.join("\u{1}")).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU with n = 1..4: clipped n-gram precisions
/// aggregated over the corpus, geometric mean, and a brevity penalty
/// using each hypothesis' closest reference length (ties toward the
/// shorter reference). No smoothing: a zero precision zeroes the score.
pub fn bleu4(pairs: &[EvalPair]) -> Result<f64, MetricsError> {
    validate(pairs)?;
    const N: usize = 4;
    let mut matched = [0usize; N];
    let mut total = [0usize; N];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for pair in pairs {
        hyp_len += pair.hypothesis.len();
        ref_len += closest_reference_length(pair);
        for n in 1..=N {
            let hyp_counts = ngram_counts(&pair.hypothesis, n);
            let mut max_ref: HashMap<String, usize> = HashMap::new();
            for reference in &pair.references {
                for (gram, count) in ngram_counts(reference, n) {
                    let entry = max_ref.entry(gram).or_insert(0);
                    *entry = (*entry).max(count);
                }
            }
            for (gram, count) in &hyp_counts {
                total[n - 1] += *count;
                matched[n - 1] += (*count).min(*max_ref.get(gram).unwrap_or(&0));
            }
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..N {
        if matched[n] == 0 || total[n] == 0 {
            return Ok(0.0);
        }
        log_sum += (matched[n] as f64 / total[n] as f64).ln();
    }
    let precision = (log_sum / N as f64).exp();
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(precision * bp)
}

fn closest_reference_length(pair: &EvalPair) -> usize {
    let c = pair.hypothesis.len() as i64;
    pair.references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&r| ((r as i64 - c).abs(), r))
        .expect("references validated non-empty")
}

fn lcs_length(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            row[j + 1] = if x == y {
                prev[j] + 1
            } else {
                row[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

const ROUGE_BETA: f64 = 1.2;

fn rouge_l_pair(pair: &EvalPair) -> f64 {
    if pair.hypothesis.is_empty() {
        return 0.0;
    }
    let mut best: f64 = 0.0;
    for reference in &pair.references {
        if reference.is_empty() {
            continue;
        }
        let lcs = lcs_length(&pair.hypothesis, reference) as f64;
        if lcs == 0.0 {
            continue;
        }
        let p = lcs / pair.hypothesis.len() as f64;
        let r = lcs / reference.len() as f64;
        let beta2 = ROUGE_BETA * ROUGE_BETA;
        let f = (1.0 + beta2) * p * r / (r + beta2 * p);
        best = best.max(f);
    }
    best
}

/// Mean over pairs of the best LCS F-measure (beta = 1.2) against any
/// reference.
pub fn rouge_l(pairs: &[EvalPair]) -> Result<f64, MetricsError> {
    validate(pairs)?;
    let scores = rouge_l_scores(pairs)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

pub(crate) fn rouge_l_scores(pairs: &[EvalPair]) -> Result<Vec<f64>, MetricsError> {
    validate(pairs)?;
    Ok(pairs.iter().map(rouge_l_pair).collect())
}

const CIDER_MAX_N: usize = 4;
const CIDER_SCALE: f64 = 10.0;

struct CiderCorpus {
    /// Per n, document frequency of each n-gram over the videos'
    /// reference sets (counted once per video).
    doc_freq: Vec<HashMap<String, usize>>,
    log_videos: f64,
}

impl CiderCorpus {
    fn build(pairs: &[EvalPair]) -> CiderCorpus {
        let mut doc_freq = vec![HashMap::new(); CIDER_MAX_N];
        for pair in pairs {
            for (n, df) in doc_freq.iter_mut().enumerate() {
                let mut seen: HashSet<String> = HashSet::new();
                for reference in &pair.references {
                    seen.extend(ngram_counts(reference, n + 1).into_keys());
                }
                for gram in seen {
                    *df.entry(gram).or_insert(0) += 1;
                }
            }
        }
        CiderCorpus {
            doc_freq,
            log_videos: (pairs.len() as f64).ln(),
        }
    }

    /// TF-IDF vector for one sentence at one n. The document frequency
    /// is clamped at 1 so unseen n-grams receive the maximum IDF.
    /// Ordered keys keep float summation order, and therefore emitted
    /// score bits, identical across runs.
    fn vector(&self, tokens: &[String], n: usize) -> BTreeMap<String, f64> {
        ngram_counts(tokens, n + 1)
            .into_iter()
            .map(|(gram, count)| {
                let df = *self.doc_freq[n].get(&gram).unwrap_or(&0);
                let idf = self.log_videos - (df.max(1) as f64).ln();
                (gram, count as f64 * idf)
            })
            .collect()
    }
}

fn cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let norm = |v: &BTreeMap<String, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a
        .iter()
        .filter_map(|(gram, x)| b.get(gram).map(|y| x * y))
        .sum();
    dot / (na * nb)
}

/// Consensus score: per n, cosine similarity of TF-IDF n-gram vectors
/// averaged over references; 10 x mean over n = 1..4; corpus score is
/// the mean over pairs. Document frequencies come from the reference
/// sets grouped per video.
pub fn cider(pairs: &[EvalPair]) -> Result<f64, MetricsError> {
    let scores = cider_scores(pairs)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

pub(crate) fn cider_scores(pairs: &[EvalPair]) -> Result<Vec<f64>, MetricsError> {
    validate(pairs)?;
    if pairs.len() < 2 {
        return Err(MetricsError::TooFewVideos(pairs.len()));
    }
    let corpus = CiderCorpus::build(pairs);
    let mut scores = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let mut per_n_sum = 0.0;
        for n in 0..CIDER_MAX_N {
            let hyp_vec = corpus.vector(&pair.hypothesis, n);
            let mut sim_sum = 0.0;
            for reference in &pair.references {
                let ref_vec = corpus.vector(reference, n);
                sim_sum += cosine(&hyp_vec, &ref_vec);
            }
            per_n_sum += sim_sum / pair.references.len() as f64;
        }
        scores.push(CIDER_SCALE * per_n_sum / CIDER_MAX_N as f64);
    }
    Ok(scores)
}

#[derive(Clone, Debug, Serialize)]
pub struct VideoScores {
    pub video_id: String,
    pub rouge_l: f64,
    pub cider: f64,
}

/// All three corpus scores plus a per-video breakdown and the distinct
/// hypothesis word count.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub unique_hypothesis_words: usize,
    pub videos: usize,
    pub per_video: Vec<VideoScores>,
}

pub fn evaluate_corpus(pairs: &[EvalPair]) -> Result<EvalReport, MetricsError> {
    validate(pairs)?;
    let bleu = bleu4(pairs)?;
    let rouge_scores = rouge_l_scores(pairs)?;
    let cider_scores = cider_scores(pairs)?;
    let unique: BTreeSet<&String> = pairs.iter().flat_map(|p| p.hypothesis.iter()).collect();
    let per_video = pairs
        .iter()
        .zip(rouge_scores.iter().zip(cider_scores.iter()))
        .map(|(pair, (&rouge_l, &cider))| VideoScores {
            video_id: pair.video_id.clone(),
            rouge_l,
            cider,
        })
        .collect();
    Ok(EvalReport {
        bleu4: bleu,
        rouge_l: rouge_scores.iter().sum::<f64>() / rouge_scores.len() as f64,
        cider: cider_scores.iter().sum::<f64>() / cider_scores.len() as f64,
        unique_hypothesis_words: unique.len(),
        videos: pairs.len(),
        per_video,
    })
}

/// Paired bootstrap over videos: resample the pair indices with
/// replacement and report the fraction of resamples on which system
/// `a` scores at least system `b` under `metric`. Both systems must
/// cover the same videos in the same order.
pub fn paired_bootstrap<F>(
    a: &[EvalPair],
    b: &[EvalPair],
    metric: F,
    iterations: usize,
    rng: &mut crate::numerics::Rng,
) -> Result<f64, MetricsError>
where
    F: Fn(&[EvalPair]) -> Result<f64, MetricsError>,
{
    validate(a)?;
    validate(b)?;
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.video_id != y.video_id) {
        return Err(MetricsError::Empty);
    }
    let mut wins = 0usize;
    for _ in 0..iterations.max(1) {
        let sample: Vec<usize> = (0..a.len()).map(|_| rng.below(a.len())).collect();
        let pick = |pairs: &[EvalPair]| -> Vec<EvalPair> {
            sample.iter().map(|&i| pairs[i].clone()).collect()
        };
        if metric(&pick(a))? >= metric(&pick(b))? {
            wins += 1;
        }
    }
    Ok(wins as f64 / iterations.max(1) as f64)
}

impl EvalReport {
    /// Aligned plain-text table.
    pub fn text_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>8} {:>8} {:>8}\n",
            "corpus", "BLEU@4", "ROUGE-L", "CIDEr"
        ));
        out.push_str(&format!(
            "{:<10} {:>8.4} {:>8.4} {:>8.4}\n",
            format!("n={}", self.videos),
            self.bleu4,
            self.rouge_l,
            self.cider
        ));
        out.push_str(&format!(
            "unique hypothesis words: {}\n",
            self.unique_hypothesis_words
        ));
        out.push_str(&format!(
            "{:<24} {:>8} {:>8}\n",
            "video", "ROUGE-L", "CIDEr"
        ));
        for v in &self.per_video {
            out.push_str(&format!(
                "{:<24} {:>8.4} {:>8.4}\n",
                v.video_id, v.rouge_l, v.cider
            ));
        }
        out
    }
}
