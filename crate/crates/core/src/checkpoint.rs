//! Binary model checkpoints.
//!
//! Layout: the magic bytes `TGC1`, a little-endian u32 format version,
//! a length-prefixed JSON metadata block, then a named tensor table
//! where every tensor is stored as name, shape, and row-major
//! little-endian f64 values. Saving and loading round-trip bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::captioner::{CaptionDims, CaptionModelParams, CaptionVariant};
use crate::numerics::{ParamStore, Tensor};
use crate::predictor::MlpParams;
use crate::topics::TopicModel;

pub const MAGIC: [u8; 4] = *b"TGC1";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported version: expected {expected}, found {found}")]
    BadVersion { expected: u32, found: u32 },
    #[error("malformed metadata: {0}")]
    MalformedMeta(serde_json::Error),
    #[error("checkpoint is truncated or oversized ({0})")]
    Corrupt(String),
    #[error("checkpoint has no tensor {0:?}")]
    MissingTensor(String),
    #[error("checkpoint metadata lacks {0}")]
    MissingMeta(&'static str),
    #[error("checkpoint kind {found:?}, expected {expected:?}")]
    WrongKind { expected: String, found: String },
}

pub const KIND_TOPIC_MODEL: &str = "topic-model";
pub const KIND_TOPIC_PREDICTOR: &str = "topic-predictor";
pub const KIND_CATEGORY_CLASSIFIER: &str = "category-classifier";
pub const KIND_CAPTION_MODEL: &str = "caption-model";

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    /// Hyperparameter snapshot; never contains machine-local paths.
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<BTreeMap<String, usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_ids: Option<Vec<String>>,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: ParamStore,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors
            .get(name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }

    pub fn expect_kind(&self, expected: &str) -> Result<(), CheckpointError> {
        if self.meta.kind == expected {
            Ok(())
        } else {
            Err(CheckpointError::WrongKind {
                expected: expected.to_string(),
                found: self.meta.kind.clone(),
            })
        }
    }

    fn config_usize(&self, key: &'static str) -> Result<usize, CheckpointError> {
        self.meta.config[key]
            .as_u64()
            .map(|v| v as usize)
            .ok_or(CheckpointError::MissingMeta(key))
    }

    fn config_f64(&self, key: &'static str) -> Result<f64, CheckpointError> {
        self.meta.config[key]
            .as_f64()
            .ok_or(CheckpointError::MissingMeta(key))
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let err = io_err(path);
    w.write_all(&MAGIC).map_err(&err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(&err)?;
    let meta = serde_json::to_vec(&checkpoint.meta).map_err(CheckpointError::MalformedMeta)?;
    w.write_all(&(meta.len() as u64).to_le_bytes())
        .map_err(&err)?;
    w.write_all(&meta).map_err(&err)?;
    w.write_all(&(checkpoint.tensors.len() as u64).to_le_bytes())
        .map_err(&err)?;
    for (name, tensor) in checkpoint.tensors.iter() {
        w.write_all(&(name.len() as u64).to_le_bytes())
            .map_err(&err)?;
        w.write_all(name.as_bytes()).map_err(&err)?;
        w.write_all(&(tensor.shape().len() as u64).to_le_bytes())
            .map_err(&err)?;
        for &dim in tensor.shape() {
            w.write_all(&(dim as u64).to_le_bytes()).map_err(&err)?;
        }
        for &value in tensor.data() {
            w.write_all(&value.to_le_bytes()).map_err(&err)?;
        }
    }
    w.flush().map_err(&err)
}

const MAX_REASONABLE: u64 = 1 << 40;

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(io_err(path))?;
    Ok(u64::from_le_bytes(buf))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let err = io_err(path);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(&err)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic {
            expected: String::from_utf8_lossy(&MAGIC).into_owned(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version).map_err(&err)?;
    let version = u32::from_le_bytes(version);
    if version != VERSION {
        return Err(CheckpointError::BadVersion {
            expected: VERSION,
            found: version,
        });
    }
    let meta_len = read_u64(&mut r, path)?;
    if meta_len > MAX_REASONABLE {
        return Err(CheckpointError::Corrupt(format!("meta length {meta_len}")));
    }
    let mut meta = vec![0u8; meta_len as usize];
    r.read_exact(&mut meta).map_err(&err)?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&meta).map_err(CheckpointError::MalformedMeta)?;

    let count = read_u64(&mut r, path)?;
    if count > 1 << 20 {
        return Err(CheckpointError::Corrupt(format!("tensor count {count}")));
    }
    let mut tensors = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u64(&mut r, path)?;
        if name_len > 1 << 16 {
            return Err(CheckpointError::Corrupt(format!("name length {name_len}")));
        }
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name).map_err(&err)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Corrupt("tensor name not utf-8".into()))?;
        let ndim = read_u64(&mut r, path)?;
        if ndim > 8 {
            return Err(CheckpointError::Corrupt(format!("rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim as usize);
        let mut numel: u64 = 1;
        for _ in 0..ndim {
            let dim = read_u64(&mut r, path)?;
            numel = numel.saturating_mul(dim.max(1));
            shape.push(dim as usize);
        }
        if numel > MAX_REASONABLE / 8 {
            return Err(CheckpointError::Corrupt(format!(
                "tensor of {numel} values"
            )));
        }
        let total: usize = shape.iter().product();
        let mut data = Vec::with_capacity(total);
        let mut buf = [0u8; 8];
        for _ in 0..total {
            r.read_exact(&mut buf).map_err(&err)?;
            data.push(f64::from_le_bytes(buf));
        }
        let tensor =
            Tensor::from_vec(&shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        tensors.insert(&name, tensor);
    }
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(CheckpointError::Corrupt("trailing bytes".into())),
        Err(source) => return Err(err(source)),
    }
    Ok(Checkpoint { meta, tensors })
}

fn counts_tensor(shape: &[usize], counts: impl Iterator<Item = u32>) -> Tensor {
    Tensor::from_vec(shape, counts.map(f64::from).collect()).expect("consistent count shape")
}

fn tensor_counts(tensor: &Tensor) -> Vec<u32> {
    tensor.data().iter().map(|&v| v as u32).collect()
}

/// Package a fitted topic model (with the vocabulary it indexes into).
pub fn topic_model_checkpoint(
    model: &TopicModel,
    vocabulary: Vec<String>,
    config: serde_json::Value,
) -> Checkpoint {
    let parts = model.parts();
    let k = parts.topics;
    let v = parts.vocab_size;
    let d = parts.doc_ids.len();
    let mut tensors = ParamStore::new();
    tensors.insert(
        "beta",
        Tensor::from_vec(&[k, v], parts.beta.to_vec()).unwrap(),
    );
    tensors.insert(
        "topic_word_counts",
        counts_tensor(&[k, v], parts.topic_word_counts.iter().copied()),
    );
    tensors.insert(
        "topic_totals",
        counts_tensor(&[k], parts.topic_totals.iter().copied()),
    );
    tensors.insert(
        "doc_topic_counts",
        counts_tensor(&[d, k], parts.doc_topic_counts.iter().flatten().copied()),
    );
    tensors.insert(
        "doc_totals",
        counts_tensor(&[d], parts.doc_totals.iter().copied()),
    );
    tensors.insert(
        "doc_theta",
        Tensor::from_vec(&[d, k], parts.doc_theta.iter().flatten().copied().collect()).unwrap(),
    );
    tensors.insert(
        "doc_lens",
        counts_tensor(&[d], parts.assignments.iter().map(|a| a.len() as u32)),
    );
    let flat: Vec<u32> = parts.assignments.iter().flatten().copied().collect();
    tensors.insert(
        "assignments",
        counts_tensor(&[flat.len()], flat.into_iter()),
    );

    let mut full_config = serde_json::Map::new();
    full_config.insert("pipeline".into(), config);
    full_config.insert("topics".into(), k.into());
    full_config.insert("alpha".into(), parts.alpha.into());
    full_config.insert("eta".into(), parts.eta.into());
    full_config.insert("vocab_size".into(), v.into());

    Checkpoint {
        meta: CheckpointMeta {
            kind: KIND_TOPIC_MODEL.into(),
            config: serde_json::Value::Object(full_config),
            vocabulary: Some(vocabulary),
            manifest: None,
            video_ids: Some(parts.doc_ids.to_vec()),
        },
        tensors,
    }
}

pub fn topic_model_from_checkpoint(
    checkpoint: &Checkpoint,
) -> Result<(TopicModel, Vec<String>), CheckpointError> {
    checkpoint.expect_kind(KIND_TOPIC_MODEL)?;
    let k = checkpoint.config_usize("topics")?;
    let v = checkpoint.config_usize("vocab_size")?;
    let alpha = checkpoint.config_f64("alpha")?;
    let eta = checkpoint.config_f64("eta")?;
    let doc_ids = checkpoint
        .meta
        .video_ids
        .clone()
        .ok_or(CheckpointError::MissingMeta("video_ids"))?;
    let vocabulary = checkpoint
        .meta
        .vocabulary
        .clone()
        .ok_or(CheckpointError::MissingMeta("vocabulary"))?;
    let d = doc_ids.len();

    let beta = checkpoint.tensor("beta")?.data().to_vec();
    let topic_word_counts = tensor_counts(checkpoint.tensor("topic_word_counts")?);
    let topic_totals = tensor_counts(checkpoint.tensor("topic_totals")?);
    let doc_topic_flat = tensor_counts(checkpoint.tensor("doc_topic_counts")?);
    let doc_totals = tensor_counts(checkpoint.tensor("doc_totals")?);
    let doc_theta_flat = checkpoint.tensor("doc_theta")?.data().to_vec();
    let doc_lens = tensor_counts(checkpoint.tensor("doc_lens")?);
    let flat_assignments = tensor_counts(checkpoint.tensor("assignments")?);

    if beta.len() != k * v || doc_topic_flat.len() != d * k || doc_theta_flat.len() != d * k {
        return Err(CheckpointError::Corrupt("tensor shapes disagree".into()));
    }
    let doc_topic_counts: Vec<Vec<u32>> = doc_topic_flat
        .chunks(k.max(1))
        .map(|c| c.to_vec())
        .collect();
    let doc_theta: Vec<Vec<f64>> = doc_theta_flat
        .chunks(k.max(1))
        .map(|c| c.to_vec())
        .collect();
    let mut assignments = Vec::with_capacity(d);
    let mut offset = 0usize;
    for &len in &doc_lens {
        let len = len as usize;
        if offset + len > flat_assignments.len() {
            return Err(CheckpointError::Corrupt(
                "assignment lengths disagree".into(),
            ));
        }
        assignments.push(flat_assignments[offset..offset + len].to_vec());
        offset += len;
    }
    if offset != flat_assignments.len() {
        return Err(CheckpointError::Corrupt(
            "assignment lengths disagree".into(),
        ));
    }
    Ok((
        TopicModel::from_parts(
            k,
            alpha,
            eta,
            v,
            topic_word_counts,
            topic_totals,
            doc_topic_counts,
            doc_totals,
            assignments,
            beta,
            doc_theta,
            doc_ids,
        ),
        vocabulary,
    ))
}

/// Package a feed-forward predictor (topic student or category
/// classifier).
pub fn mlp_checkpoint(
    params: &MlpParams,
    kind: &str,
    manifest: BTreeMap<String, usize>,
    config: serde_json::Value,
) -> Checkpoint {
    let mut full_config = serde_json::Map::new();
    full_config.insert("pipeline".into(), config);
    full_config.insert("input_dim".into(), params.input_dim.into());
    full_config.insert("hidden_dim".into(), params.hidden_dim.into());
    full_config.insert("output_dim".into(), params.output_dim.into());
    Checkpoint {
        meta: CheckpointMeta {
            kind: kind.to_string(),
            config: serde_json::Value::Object(full_config),
            vocabulary: None,
            manifest: Some(manifest),
            video_ids: None,
        },
        tensors: params.store.clone(),
    }
}

pub fn mlp_from_checkpoint(
    checkpoint: &Checkpoint,
    kind: &str,
) -> Result<MlpParams, CheckpointError> {
    checkpoint.expect_kind(kind)?;
    for required in ["hidden.w", "hidden.b", "out.w", "out.b"] {
        checkpoint.tensor(required)?;
    }
    Ok(MlpParams {
        input_dim: checkpoint.config_usize("input_dim")?,
        hidden_dim: checkpoint.config_usize("hidden_dim")?,
        output_dim: checkpoint.config_usize("output_dim")?,
        store: checkpoint.tensors.clone(),
    })
}

/// Package a caption model with its vocabulary and feature manifest so
/// decoding needs no corpus access.
pub fn caption_model_checkpoint(
    params: &CaptionModelParams,
    vocabulary: Vec<String>,
    manifest: BTreeMap<String, usize>,
    config: serde_json::Value,
) -> Checkpoint {
    let dims = &params.dims;
    let mut full_config = serde_json::Map::new();
    full_config.insert("pipeline".into(), config);
    full_config.insert("variant".into(), dims.variant.name().into());
    full_config.insert("hidden".into(), dims.hidden.into());
    full_config.insert("factors".into(), dims.factors.into());
    full_config.insert("vocab".into(), dims.vocab.into());
    full_config.insert("feature_dim".into(), dims.feature_dim.into());
    full_config.insert("topic_dim".into(), dims.topic_dim.into());
    Checkpoint {
        meta: CheckpointMeta {
            kind: KIND_CAPTION_MODEL.into(),
            config: serde_json::Value::Object(full_config),
            vocabulary: Some(vocabulary),
            manifest: Some(manifest),
            video_ids: None,
        },
        tensors: params.store.clone(),
    }
}

pub fn caption_model_from_checkpoint(
    checkpoint: &Checkpoint,
) -> Result<(CaptionModelParams, Vec<String>), CheckpointError> {
    checkpoint.expect_kind(KIND_CAPTION_MODEL)?;
    let variant: CaptionVariant = checkpoint.meta.config["variant"]
        .as_str()
        .ok_or(CheckpointError::MissingMeta("variant"))?
        .parse()
        .map_err(|_| CheckpointError::MissingMeta("variant"))?;
    let dims = CaptionDims {
        variant,
        hidden: checkpoint.config_usize("hidden")?,
        factors: checkpoint.config_usize("factors")?,
        vocab: checkpoint.config_usize("vocab")?,
        feature_dim: checkpoint.config_usize("feature_dim")?,
        topic_dim: checkpoint.config_usize("topic_dim")?,
    };
    let vocabulary = checkpoint
        .meta
        .vocabulary
        .clone()
        .ok_or(CheckpointError::MissingMeta("vocabulary"))?;
    if vocabulary.len() != dims.vocab {
        return Err(CheckpointError::Corrupt(format!(
            "vocabulary has {} entries, model expects {}",
            vocabulary.len(),
            dims.vocab
        )));
    }
    for (name, shape) in crate::captioner::expected_tensors(&dims) {
        let tensor = checkpoint.tensor(&name)?;
        if tensor.shape() != shape.as_slice() {
            return Err(CheckpointError::Corrupt(format!(
                "tensor {name:?} has shape {:?}, expected {shape:?}",
                tensor.shape()
            )));
        }
    }
    Ok((
        CaptionModelParams {
            dims,
            store: checkpoint.tensors.clone(),
        },
        vocabulary,
    ))
}
