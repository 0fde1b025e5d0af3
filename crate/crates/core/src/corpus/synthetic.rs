//! Synthetic corpora with known topic structure for tests and the
//! command-line harnesses.
//!
//! Each topic owns a disjoint block of vocabulary words. A video draws
//! a topic mixture concentrated on its home topic; captions draw a
//! topic per caption (template mode) or per word (bag mode) and then
//! words from that topic's block. Feature vectors encode the mixture
//! plus noise, or pure noise when `informative_features` is off.

use std::collections::BTreeMap;

use crate::numerics::{argmax, sample_categorical, Rng};

use super::{CorpusError, FeatureManifest, Split, VideoRecord};

#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    /// Number of topics (K).
    pub topics: usize,
    /// Total vocabulary size, split into disjoint per-topic blocks.
    pub vocab_words: usize,
    pub videos_per_topic: usize,
    pub captions_per_video: usize,
    /// Words per caption in bag mode.
    pub caption_len: usize,
    /// Probability mass on the video's home topic.
    pub dominant_mass: f64,
    /// Stddev of Gaussian noise added to feature vectors (and the full
    /// scale of the features when they are uninformative).
    pub feature_noise: f64,
    /// When false, features are pure noise carrying no topic signal,
    /// drawn as `feature_noise * N(0, 1)` per dimension.
    pub informative_features: bool,
    /// Captions are fixed per-topic template sentences instead of
    /// independently drawn words.
    pub template_captions: bool,
    /// Fraction of videos given a synthetic speech transcript.
    pub speech_fraction: f64,
    pub val_per_topic: usize,
    pub test_per_topic: usize,
}

impl Default for SyntheticConfig {
    fn default() -> SyntheticConfig {
        SyntheticConfig {
            topics: 3,
            vocab_words: 150,
            videos_per_topic: 100,
            captions_per_video: 5,
            caption_len: 8,
            dominant_mass: 0.85,
            feature_noise: 0.05,
            informative_features: true,
            template_captions: false,
            speech_fraction: 0.5,
            val_per_topic: 0,
            test_per_topic: 10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub records: Vec<VideoRecord>,
    pub manifest: FeatureManifest,
    /// Ground-truth topic mixture per video id.
    pub mixtures: BTreeMap<String, Vec<f64>>,
    /// The word block generating each topic.
    pub topic_words: Vec<Vec<String>>,
}

const TEMPLATE_WEIGHTS: [f64; 4] = [0.55, 0.15, 0.15, 0.15];

fn topic_templates(block: &[String]) -> Vec<Vec<String>> {
    let b = block.len();
    (0..TEMPLATE_WEIGHTS.len())
        .map(|j| {
            let len = 5 + j % 3;
            (0..len)
                .map(|i| block[(i * (j + 1) + j) % b].clone())
                .collect()
        })
        .collect()
}

pub fn generate_synthetic_corpus(
    cfg: &SyntheticConfig,
    rng: &mut Rng,
) -> Result<SyntheticCorpus, CorpusError> {
    if cfg.topics < 2 {
        return Err(CorpusError::BadSyntheticConfig(
            "need at least 2 topics".into(),
        ));
    }
    if cfg.vocab_words < cfg.topics {
        return Err(CorpusError::BadSyntheticConfig(format!(
            "vocabulary of {} words cannot cover {} topics",
            cfg.vocab_words, cfg.topics
        )));
    }
    if cfg.videos_per_topic == 0 || cfg.captions_per_video == 0 || cfg.caption_len == 0 {
        return Err(CorpusError::BadSyntheticConfig(
            "videos, captions and caption length must be positive".into(),
        ));
    }
    if cfg.val_per_topic + cfg.test_per_topic >= cfg.videos_per_topic {
        return Err(CorpusError::BadSyntheticConfig(
            "val + test videos leave no training videos".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.dominant_mass) || !(0.0..=1.0).contains(&cfg.speech_fraction) {
        return Err(CorpusError::BadSyntheticConfig(
            "dominant_mass and speech_fraction must lie in [0, 1]".into(),
        ));
    }

    let k = cfg.topics;
    // Disjoint word blocks; the remainder widens the first blocks.
    let base = cfg.vocab_words / k;
    let rem = cfg.vocab_words % k;
    let mut topic_words: Vec<Vec<String>> = Vec::with_capacity(k);
    for topic in 0..k {
        let size = base + usize::from(topic < rem);
        topic_words.push((0..size).map(|i| format!("t{topic}w{i}")).collect());
    }
    let templates: Vec<Vec<Vec<String>>> = topic_words.iter().map(|b| topic_templates(b)).collect();
    // Words the captions can actually emit; speech transcripts draw
    // from these so they survive vocabulary filtering.
    let surface_words: Vec<Vec<String>> = if cfg.template_captions {
        templates
            .iter()
            .map(|ts| {
                let mut words: Vec<String> = ts.iter().flatten().cloned().collect();
                words.sort();
                words.dedup();
                words
            })
            .collect()
    } else {
        topic_words.clone()
    };

    let manifest = FeatureManifest::new(vec![("aux".into(), 2), ("mix".into(), k)])?;

    let mut records = Vec::new();
    let mut mixtures = BTreeMap::new();
    let speech_cut = (cfg.speech_fraction * cfg.videos_per_topic as f64).round() as usize;

    for topic in 0..k {
        for j in 0..cfg.videos_per_topic {
            let video_id = format!("t{topic}v{j:03}");
            let split = if j < cfg.test_per_topic {
                Split::Test
            } else if j < cfg.test_per_topic + cfg.val_per_topic {
                Split::Val
            } else {
                Split::Train
            };

            // Mixture: dominant mass on the home topic, the rest spread
            // by a Dirichlet(1) draw.
            let mut noise: Vec<f64> = (0..k).map(|_| -rng.next_f64().max(1e-12).ln()).collect();
            let noise_sum: f64 = noise.iter().sum();
            for v in &mut noise {
                *v *= (1.0 - cfg.dominant_mass) / noise_sum;
            }
            let mut theta = noise;
            theta[topic] += cfg.dominant_mass;

            let mut captions = Vec::with_capacity(cfg.captions_per_video);
            for _ in 0..cfg.captions_per_video {
                if cfg.template_captions {
                    let z = sample_categorical(&theta, rng).expect("valid mixture");
                    let t = sample_categorical(&TEMPLATE_WEIGHTS, rng).expect("valid weights");
                    captions.push(templates[z][t].join(" "));
                } else {
                    let words: Vec<&str> = (0..cfg.caption_len)
                        .map(|_| {
                            let z = sample_categorical(&theta, rng).expect("valid mixture");
                            topic_words[z][rng.below(topic_words[z].len())].as_str()
                        })
                        .collect();
                    captions.push(words.join(" "));
                }
            }

            let speech = if j < speech_cut {
                let pool = &surface_words[topic];
                let words: Vec<&str> = (0..12)
                    .map(|_| pool[rng.below(pool.len())].as_str())
                    .collect();
                Some(words.join(" "))
            } else {
                None
            };

            let mut features = BTreeMap::new();
            let mix: Vec<f64> = if cfg.informative_features {
                theta
                    .iter()
                    .map(|v| v + cfg.feature_noise * rng.normal())
                    .collect()
            } else {
                (0..k).map(|_| cfg.feature_noise * rng.normal()).collect()
            };
            features.insert("mix".to_string(), mix);
            // Every fourth video is missing the aux modality so the
            // zero-padding path gets real coverage.
            if j % 4 != 3 {
                let aux = if cfg.informative_features {
                    vec![
                        theta[0] + cfg.feature_noise * rng.normal(),
                        theta[argmax(&theta)] + cfg.feature_noise * rng.normal(),
                    ]
                } else {
                    vec![
                        cfg.feature_noise * rng.normal(),
                        cfg.feature_noise * rng.normal(),
                    ]
                };
                features.insert("aux".to_string(), aux);
            }

            mixtures.insert(video_id.clone(), theta.clone());
            records.push(VideoRecord {
                video_id,
                split,
                category: Some(topic as u32),
                captions,
                features,
                speech,
            });
        }
    }

    Ok(SyntheticCorpus {
        records,
        manifest,
        mixtures,
        topic_words,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_stay_inside_generating_blocks() {
        let cfg = SyntheticConfig {
            topics: 3,
            vocab_words: 150,
            videos_per_topic: 5,
            test_per_topic: 1,
            ..SyntheticConfig::default()
        };
        let mut rng = Rng::seed_from_u64(1);
        let corpus = generate_synthetic_corpus(&cfg, &mut rng).unwrap();
        let all_words: std::collections::HashSet<&String> =
            corpus.topic_words.iter().flatten().collect();
        for record in &corpus.records {
            for caption in &record.captions {
                for token in caption.split_whitespace() {
                    assert!(all_words.contains(&token.to_string()));
                }
            }
        }
    }

    #[test]
    fn zero_noise_features_equal_mixture() {
        let cfg = SyntheticConfig {
            feature_noise: 0.0,
            videos_per_topic: 4,
            test_per_topic: 1,
            ..SyntheticConfig::default()
        };
        let mut rng = Rng::seed_from_u64(2);
        let corpus = generate_synthetic_corpus(&cfg, &mut rng).unwrap();
        for record in &corpus.records {
            let theta = &corpus.mixtures[&record.video_id];
            assert_eq!(&record.features["mix"], theta);
        }
    }

    #[test]
    fn fixed_seed_reproduces_corpus() {
        let cfg = SyntheticConfig {
            videos_per_topic: 6,
            test_per_topic: 1,
            ..SyntheticConfig::default()
        };
        let a = generate_synthetic_corpus(&cfg, &mut Rng::seed_from_u64(7)).unwrap();
        let b = generate_synthetic_corpus(&cfg, &mut Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (x, y) in a.records.iter().zip(b.records.iter()) {
            assert_eq!(x.video_id, y.video_id);
            assert_eq!(x.captions, y.captions);
            assert_eq!(x.features, y.features);
            assert_eq!(x.speech, y.speech);
        }
        assert_eq!(a.mixtures, b.mixtures);
    }

    #[test]
    fn vocab_smaller_than_topics_rejected() {
        let cfg = SyntheticConfig {
            topics: 5,
            vocab_words: 3,
            ..SyntheticConfig::default()
        };
        assert!(generate_synthetic_corpus(&cfg, &mut Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn mixture_is_on_simplex_and_dominated() {
        let cfg = SyntheticConfig {
            videos_per_topic: 8,
            test_per_topic: 1,
            ..SyntheticConfig::default()
        };
        let mut rng = Rng::seed_from_u64(3);
        let corpus = generate_synthetic_corpus(&cfg, &mut rng).unwrap();
        for record in &corpus.records {
            let theta = &corpus.mixtures[&record.video_id];
            let sum: f64 = theta.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            let home = record.category.unwrap() as usize;
            assert_eq!(argmax(theta), home);
            assert!(theta[home] >= cfg.dominant_mass);
        }
    }
}
