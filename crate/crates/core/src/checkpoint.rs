//! Checkpoint files: versioned JSON holding the model configuration,
//! every parameter tensor by name, the fitted normalizer, provenance
//! (metal, seed, epochs trained) and optionally the optimizer moments
//! so training can resume exactly where it stopped.
//!
//! Floats are written in shortest-round-trip decimal form, so a
//! save/load cycle reproduces every parameter bit for bit.

use crate::data::MetalKind;
use crate::model::{ModelConfig, ModelParams, ParamTensors};
use crate::optim::{AdamConfig, AdamState};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug)]
pub enum CheckpointError {
    Io(std::io::Error),
    Malformed { detail: String },
    VersionMismatch { found: u32, supported: u32 },
    BadArray { name: String, detail: String },
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "io: {e}"),
            CheckpointError::Malformed { detail } => write!(f, "malformed checkpoint: {detail}"),
            CheckpointError::VersionMismatch { found, supported } => write!(
                f,
                "checkpoint format version {found} is not supported (this build reads {supported})"
            ),
            CheckpointError::BadArray { name, detail } => {
                write!(f, "array '{name}': {detail}")
            }
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub metal: MetalKind,
    pub seed: u64,
    pub epochs_total: u64,
}

#[derive(Serialize, Deserialize)]
struct ArrayDoc {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerDoc {
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: BTreeMap<String, ArrayDoc>,
    v: BTreeMap<String, ArrayDoc>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    model: ModelConfig,
    metal: MetalKind,
    seed: u64,
    epochs_total: u64,
    norm_stats: Vec<(f64, f64)>,
    arrays: BTreeMap<String, ArrayDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optimizer: Option<OptimizerDoc>,
}

fn tensors_to_docs(t: &ParamTensors) -> BTreeMap<String, ArrayDoc> {
    t.named_arrays()
        .into_iter()
        .map(|(name, shape, values)| {
            (
                name,
                ArrayDoc {
                    shape,
                    values: values.to_vec(),
                },
            )
        })
        .collect()
}

fn docs_to_tensors(
    config: &ModelConfig,
    docs: &BTreeMap<String, ArrayDoc>,
    section: &str,
) -> Result<ParamTensors, CheckpointError> {
    let mut tensors = ParamTensors::zeros(config);
    let expected: Vec<(String, Vec<usize>)> = tensors
        .named_arrays()
        .into_iter()
        .map(|(name, shape, _)| (name, shape))
        .collect();
    if docs.len() != expected.len() {
        let known: Vec<&str> = expected.iter().map(|(n, _)| n.as_str()).collect();
        let extra: Vec<&String> = docs
            .keys()
            .filter(|k| !known.contains(&k.as_str()))
            .collect();
        return Err(CheckpointError::Malformed {
            detail: format!(
                "{section} has {} arrays, expected {} (unrecognized: {extra:?})",
                docs.len(),
                expected.len()
            ),
        });
    }
    // named_arrays() and flat_mut() walk the tensors in the same order
    for ((name, shape), slot) in expected.iter().zip(tensors.flat_mut()) {
        let doc = docs.get(name).ok_or_else(|| CheckpointError::BadArray {
            name: format!("{section}:{name}"),
            detail: "missing".into(),
        })?;
        if &doc.shape != shape {
            return Err(CheckpointError::BadArray {
                name: format!("{section}:{name}"),
                detail: format!("shape {:?}, expected {:?}", doc.shape, shape),
            });
        }
        if doc.values.len() != slot.len() {
            return Err(CheckpointError::BadArray {
                name: format!("{section}:{name}"),
                detail: format!("{} values for shape {:?}", doc.values.len(), shape),
            });
        }
        slot.copy_from_slice(&doc.values);
    }
    Ok(tensors)
}

/// Writes params (+ optional optimizer state) as a version-1 checkpoint.
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    meta: &CheckpointMeta,
    optimizer: Option<&AdamState>,
) -> Result<(), CheckpointError> {
    let file = CheckpointFile {
        format_version: CHECKPOINT_FORMAT_VERSION,
        model: params.config,
        metal: meta.metal,
        seed: meta.seed,
        epochs_total: meta.epochs_total,
        norm_stats: params.norm_stats.clone(),
        arrays: tensors_to_docs(&params.tensors),
        optimizer: optimizer.map(|opt| OptimizerDoc {
            t: opt.t,
            beta1: opt.config.beta1,
            beta2: opt.config.beta2,
            eps: opt.config.eps,
            m: tensors_to_docs(&opt.m),
            v: tensors_to_docs(&opt.v),
        }),
    };
    let bytes = serde_json::to_vec(&file).map_err(|e| CheckpointError::Malformed {
        detail: e.to_string(),
    })?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads a checkpoint, validating the version and every array shape.
pub fn load_checkpoint(
    path: &Path,
) -> Result<(ModelParams, CheckpointMeta, Option<AdamState>), CheckpointError> {
    let bytes = fs::read(path)?;
    let file: CheckpointFile =
        serde_json::from_slice(&bytes).map_err(|e| CheckpointError::Malformed {
            detail: e.to_string(),
        })?;
    if file.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: file.format_version,
            supported: CHECKPOINT_FORMAT_VERSION,
        });
    }
    file.model
        .validate()
        .map_err(|e| CheckpointError::Malformed {
            detail: e.to_string(),
        })?;
    if file.norm_stats.len() != file.model.input_dim {
        return Err(CheckpointError::Malformed {
            detail: format!(
                "{} norm_stats entries for input_dim {}",
                file.norm_stats.len(),
                file.model.input_dim
            ),
        });
    }
    let tensors = docs_to_tensors(&file.model, &file.arrays, "arrays")?;
    let params = ModelParams {
        config: file.model,
        tensors,
        norm_stats: file.norm_stats,
    };
    let optimizer = match &file.optimizer {
        None => None,
        Some(doc) => Some(AdamState {
            config: AdamConfig {
                beta1: doc.beta1,
                beta2: doc.beta2,
                eps: doc.eps,
            },
            t: doc.t,
            m: docs_to_tensors(&file.model, &doc.m, "optimizer.m")?,
            v: docs_to_tensors(&file.model, &doc.v, "optimizer.v")?,
        }),
    };
    let meta = CheckpointMeta {
        metal: file.metal,
        seed: file.seed,
        epochs_total: file.epochs_total,
    };
    Ok((params, meta, optimizer))
}
