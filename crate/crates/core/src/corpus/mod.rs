//! Video records, caption tokenization, vocabulary construction,
//! bag-of-words documents, and feature manifests.

mod stopwords;
mod synthetic;

pub use stopwords::StopwordSet;
pub use synthetic::{generate_synthetic_corpus, SyntheticConfig, SyntheticCorpus};

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed record at {path}:{line}: {source}")]
    Malformed {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("corpus has no training records")]
    EmptyCorpus,
    #[error("training record {video_id} has no captions")]
    MissingCaptions { video_id: String },
    #[error("feature {modality} of {video_id} has dimension {found}, manifest says {expected}")]
    FeatureDimension {
        video_id: String,
        modality: String,
        expected: usize,
        found: usize,
    },
    #[error("manifest: {0}")]
    BadManifest(String),
    #[error("synthetic corpus: {0}")]
    BadSyntheticConfig(String),
    #[error("stored vocabulary lacks the reserved sentence markers")]
    BadVocabulary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One video: captions, per-modality feature vectors, optional category
/// tag and speech transcript.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<u32>,
    #[serde(default)]
    pub captions: Vec<String>,
    #[serde(default)]
    pub features: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speech: Option<String>,
}

/// Lowercase, strip ASCII punctuation (replaced by spaces, so
/// hyphenated forms split), then break on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token/index bijection with reserved sentence markers. Indices are
/// dense; non-reserved tokens are ordered by descending corpus count,
/// ties alphabetically.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_count: usize,
}

impl Vocabulary {
    pub const BOS: usize = 0;
    pub const EOS: usize = 1;
    pub const UNK: usize = 2;

    /// Rebuild from a stored token list; the reserved markers must sit
    /// at their fixed indices.
    pub fn from_tokens(tokens: Vec<String>, min_count: usize) -> Result<Vocabulary, CorpusError> {
        let ok = tokens.len() >= 3
            && tokens[Self::BOS] == BOS_TOKEN
            && tokens[Self::EOS] == EOS_TOKEN
            && tokens[Self::UNK] == UNK_TOKEN;
        if !ok {
            return Err(CorpusError::BadVocabulary);
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary {
            tokens,
            index,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Index of `token`, or the UNK index when absent.
    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.index_of(t)).collect()
    }
}

/// Vocabulary over training captions: tokens whose corpus count reaches
/// `min_count` plus the reserved markers.
pub fn build_vocabulary(
    records: &[VideoRecord],
    min_count: usize,
) -> Result<Vocabulary, CorpusError> {
    let train: Vec<&VideoRecord> = records.iter().filter(|r| r.split == Split::Train).collect();
    if train.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for record in &train {
        for caption in &record.captions {
            for token in tokenize(caption) {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tokens = vec![
        BOS_TOKEN.to_string(),
        EOS_TOKEN.to_string(),
        UNK_TOKEN.to_string(),
    ];
    tokens.extend(kept.into_iter().map(|(t, _)| t));
    Vocabulary::from_tokens(tokens, min_count)
}

/// Word-index counts over the tokens that survive stopword and
/// out-of-vocabulary removal.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BagOfWords {
    counts: BTreeMap<usize, usize>,
}

impl BagOfWords {
    pub fn add(&mut self, word: usize) {
        *self.counts.entry(word).or_insert(0) += 1;
    }

    pub fn counts(&self) -> &BTreeMap<usize, usize> {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Word indices with multiplicity, ascending by index.
    pub fn expand(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total());
        for (&word, &count) in &self.counts {
            out.extend(std::iter::repeat_n(word, count));
        }
        out
    }
}

pub fn to_bag_of_words(
    tokens: &[String],
    vocab: &Vocabulary,
    stopwords: &StopwordSet,
) -> BagOfWords {
    let mut bag = BagOfWords::default();
    for token in tokens {
        if stopwords.contains(token) {
            continue;
        }
        if !vocab.contains(token) {
            continue;
        }
        bag.add(vocab.index_of(token));
    }
    bag
}

/// All of a video's captions concatenated into one bag-of-words
/// document.
pub fn video_document(
    record: &VideoRecord,
    vocab: &Vocabulary,
    stopwords: &StopwordSet,
) -> BagOfWords {
    let mut bag = BagOfWords::default();
    for caption in &record.captions {
        for token in tokenize(caption) {
            if stopwords.contains(&token) || !vocab.contains(&token) {
                continue;
            }
            bag.add(vocab.index_of(&token));
        }
    }
    bag
}

/// Drop out-of-vocabulary words from a transcript; transcripts with
/// fewer than 10 surviving tokens are treated as having no speech.
pub fn clean_speech(transcript: &str, vocab: &Vocabulary) -> Option<Vec<String>> {
    let kept: Vec<String> = tokenize(transcript)
        .into_iter()
        .filter(|t| vocab.contains(t))
        .collect();
    if kept.len() < 10 {
        None
    } else {
        Some(kept)
    }
}

/// Ordered (modality, dimension) list. Loaded from a JSON object; since
/// JSON objects carry no reliable order, entries are sorted by name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureManifest {
    entries: Vec<(String, usize)>,
}

impl FeatureManifest {
    pub fn new(mut entries: Vec<(String, usize)>) -> Result<FeatureManifest, CorpusError> {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(CorpusError::BadManifest(format!(
                    "duplicate modality {:?}",
                    pair[0].0
                )));
            }
        }
        if let Some((name, _)) = entries.iter().find(|(_, d)| *d == 0) {
            return Err(CorpusError::BadManifest(format!(
                "modality {name:?} has dimension 0"
            )));
        }
        Ok(FeatureManifest { entries })
    }

    pub fn entries(&self) -> &[(String, usize)] {
        &self.entries
    }

    pub fn total_dim(&self) -> usize {
        self.entries.iter().map(|(_, d)| d).sum()
    }

    pub fn dim_of(&self, name: &str) -> Option<usize> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| *d)
    }

    pub fn load(path: &Path) -> Result<FeatureManifest, CorpusError> {
        let file = File::open(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let map: BTreeMap<String, usize> =
            serde_json::from_reader(BufReader::new(file)).map_err(|source| {
                CorpusError::Malformed {
                    path: path.display().to_string(),
                    line: 1,
                    source,
                }
            })?;
        FeatureManifest::new(map.into_iter().collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let map: BTreeMap<&str, usize> =
            self.entries.iter().map(|(n, d)| (n.as_str(), *d)).collect();
        write_json_file(path, &map)
    }

    pub fn to_map(&self) -> BTreeMap<String, usize> {
        self.entries.iter().cloned().collect()
    }
}

pub(crate) fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value).map_err(|source| CorpusError::Malformed {
        path: path.display().to_string(),
        line: 1,
        source,
    })?;
    writer.write_all(b"\n").map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Load newline-delimited JSON records.
pub fn load_records(path: &Path) -> Result<Vec<VideoRecord>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: VideoRecord =
            serde_json::from_str(&line).map_err(|source| CorpusError::Malformed {
                path: path.display().to_string(),
                line: lineno + 1,
                source,
            })?;
        records.push(record);
    }
    Ok(records)
}

pub fn save_records(path: &Path, records: &[VideoRecord]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut writer, record).map_err(|source| CorpusError::Malformed {
            path: path.display().to_string(),
            line: 0,
            source,
        })?;
        writer.write_all(b"\n").map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

/// Check feature dimensions against the manifest and per-split
/// invariants. A modality absent from a record stays absent; only
/// present-but-wrong-size vectors are rejected.
pub fn validate_records(
    records: &[VideoRecord],
    manifest: &FeatureManifest,
) -> Result<(), CorpusError> {
    for record in records {
        if record.split == Split::Train && record.captions.is_empty() {
            return Err(CorpusError::MissingCaptions {
                video_id: record.video_id.clone(),
            });
        }
        for (modality, vector) in &record.features {
            if let Some(expected) = manifest.dim_of(modality) {
                if vector.len() != expected {
                    return Err(CorpusError::FeatureDimension {
                        video_id: record.video_id.clone(),
                        modality: modality.clone(),
                        expected,
                        found: vector.len(),
                    });
                }
            }
        }
    }
    Ok(())
}
