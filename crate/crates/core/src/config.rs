//! Pipeline configuration: JSON file with a strict schema, flag
//! overrides handled by the command layer.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config {path}: {source}")]
    Malformed {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stopwords: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LdaSettings {
    /// Document-topic prior; defaults to 50/K when absent.
    pub alpha: Option<f64>,
    pub eta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub sample_lag: usize,
    pub infer_iterations: usize,
    pub infer_burn_in: usize,
    pub infer_sample_lag: usize,
}

impl Default for LdaSettings {
    fn default() -> LdaSettings {
        LdaSettings {
            alpha: None,
            eta: 0.01,
            iterations: 1000,
            burn_in: 200,
            sample_lag: 20,
            infer_iterations: 100,
            infer_burn_in: 20,
            infer_sample_lag: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorSettings {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for PredictorSettings {
    fn default() -> PredictorSettings {
        PredictorSettings {
            hidden: 512,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CaptionerSettings {
    pub variant: String,
    pub hidden: usize,
    pub factors: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub beam_width: usize,
    pub max_caption_len: usize,
}

impl Default for CaptionerSettings {
    fn default() -> CaptionerSettings {
        CaptionerSettings {
            variant: "tgm".to_string(),
            hidden: 512,
            factors: 512,
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-4,
            dropout: 0.5,
            beam_width: 5,
            max_caption_len: 30,
        }
    }
}

/// Full pipeline configuration. Unknown keys are rejected.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Number of mined topics (K).
    pub topics: usize,
    /// Minimum corpus count for a caption word to enter the vocabulary.
    pub vocab_min_count: usize,
    /// Number of predefined category tags.
    pub category_count: usize,
    pub paths: Paths,
    pub lda: LdaSettings,
    pub predictor: PredictorSettings,
    pub captioner: CaptionerSettings,
}

impl Default for PipelineConfig {
    fn default() -> PipelineConfig {
        PipelineConfig {
            seed: 1,
            topics: 20,
            vocab_min_count: 3,
            category_count: 20,
            paths: Paths::default(),
            lda: LdaSettings::default(),
            predictor: PredictorSettings::default(),
            captioner: CaptionerSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: PipelineConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Malformed {
                path: path.display().to_string(),
                source,
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.topics < 2 {
            return fail(format!("topics must be at least 2, got {}", self.topics));
        }
        if self.vocab_min_count == 0 {
            return fail("vocab_min_count must be positive".into());
        }
        if self.category_count == 0 {
            return fail("category_count must be positive".into());
        }
        if let Some(alpha) = self.lda.alpha {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return fail(format!("lda.alpha must be positive, got {alpha}"));
            }
        }
        if !(self.lda.eta > 0.0 && self.lda.eta.is_finite()) {
            return fail(format!("lda.eta must be positive, got {}", self.lda.eta));
        }
        if self.lda.iterations <= self.lda.burn_in {
            return fail("lda.iterations must exceed lda.burn_in".into());
        }
        if self.lda.sample_lag == 0 || self.lda.infer_sample_lag == 0 {
            return fail("lda sample lags must be positive".into());
        }
        if self.lda.infer_iterations <= self.lda.infer_burn_in {
            return fail("lda.infer_iterations must exceed lda.infer_burn_in".into());
        }
        if self.predictor.hidden == 0
            || self.predictor.epochs == 0
            || self.predictor.batch_size == 0
        {
            return fail("predictor sizes and epochs must be positive".into());
        }
        if !(self.predictor.learning_rate > 0.0 && self.predictor.learning_rate.is_finite()) {
            return fail("predictor.learning_rate must be positive".into());
        }
        let c = &self.captioner;
        c.variant
            .parse::<crate::captioner::CaptionVariant>()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if c.hidden == 0 || c.factors == 0 || c.epochs == 0 || c.batch_size == 0 {
            return fail("captioner sizes and epochs must be positive".into());
        }
        if !(c.learning_rate > 0.0 && c.learning_rate.is_finite()) {
            return fail("captioner.learning_rate must be positive".into());
        }
        if !(0.0..1.0).contains(&c.dropout) {
            return fail(format!(
                "captioner.dropout must lie in [0, 1), got {}",
                c.dropout
            ));
        }
        if c.beam_width == 0 || c.max_caption_len == 0 {
            return fail("beam_width and max_caption_len must be positive".into());
        }
        Ok(())
    }

    /// Model-relevant snapshot embedded in checkpoints: everything
    /// except the machine-local paths, so identical runs in different
    /// directories produce identical checkpoint bytes.
    pub fn model_snapshot(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("config serializes");
        value
            .as_object_mut()
            .expect("config is an object")
            .remove("paths");
        value
    }
}
