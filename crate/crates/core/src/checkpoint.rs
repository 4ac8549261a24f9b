//! Self-describing JSON checkpoints: a format tag, the full model config,
//! and every parameter array with its declared shape. Loading rebuilds the
//! parameter tree from the config and refuses any mismatch.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FredformerConfig, ModelError, ModelParams};

pub const CHECKPOINT_FORMAT: &str = "fredformer-checkpoint-v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a readable checkpoint: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported checkpoint format `{found}`, expected `{CHECKPOINT_FORMAT}`")]
    WrongFormat { found: String },
    #[error("checkpoint stores {found} arrays, the config implies {expected}")]
    ArrayCount { expected: usize, found: usize },
    #[error("array `{name}`: {detail}")]
    ArrayMismatch { name: String, detail: String },
    #[error("refusing to save non-finite parameters")]
    NonFinite,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredArray {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format_version: String,
    config: FredformerConfig,
    arrays: Vec<StoredArray>,
}

pub fn save(
    path: impl AsRef<Path>,
    cfg: &FredformerConfig,
    params: &ModelParams,
) -> Result<(), CheckpointError> {
    let display = path.as_ref().display().to_string();
    if !params.all_finite() {
        return Err(CheckpointError::NonFinite);
    }
    let arrays = params
        .named_arrays()
        .into_iter()
        .map(|(name, shape, values)| StoredArray { name, shape, values })
        .collect();
    let file = CheckpointFile {
        format_version: CHECKPOINT_FORMAT.to_string(),
        config: cfg.clone(),
        arrays,
    };
    let out = File::create(path.as_ref())
        .map_err(|e| CheckpointError::Io { path: display.clone(), source: e })?;
    serde_json::to_writer(BufWriter::new(out), &file)
        .map_err(|e| CheckpointError::Json { path: display, source: e })?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(FredformerConfig, ModelParams), CheckpointError> {
    let display = path.as_ref().display().to_string();
    let file = File::open(path.as_ref())
        .map_err(|e| CheckpointError::Io { path: display.clone(), source: e })?;
    let stored: CheckpointFile = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CheckpointError::Json { path: display, source: e })?;
    if stored.format_version != CHECKPOINT_FORMAT {
        return Err(CheckpointError::WrongFormat { found: stored.format_version });
    }
    stored.config.validate()?;

    let mut params = ModelParams::zeros(&stored.config)?;
    let expected = params.named_arrays();
    if expected.len() != stored.arrays.len() {
        return Err(CheckpointError::ArrayCount {
            expected: expected.len(),
            found: stored.arrays.len(),
        });
    }
    for ((name, shape, _), got) in expected.iter().zip(&stored.arrays) {
        if *name != got.name {
            return Err(CheckpointError::ArrayMismatch {
                name: got.name.clone(),
                detail: format!("unexpected at the position of `{name}`"),
            });
        }
        if *shape != got.shape {
            return Err(CheckpointError::ArrayMismatch {
                name: got.name.clone(),
                detail: format!("shape {:?} does not match the config's {:?}", got.shape, shape),
            });
        }
        let len: usize = got.shape.iter().product();
        if got.values.len() != len {
            return Err(CheckpointError::ArrayMismatch {
                name: got.name.clone(),
                detail: format!("{} values for shape {:?}", got.values.len(), got.shape),
            });
        }
        if got.values.iter().any(|v| !v.is_finite()) {
            return Err(CheckpointError::ArrayMismatch {
                name: got.name.clone(),
                detail: "contains non-finite values".into(),
            });
        }
    }
    let mut idx = 0;
    params.visit_mut(&mut |slice: &mut [f64]| {
        slice.copy_from_slice(&stored.arrays[idx].values);
        idx += 1;
    });
    Ok((stored.config, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> FredformerConfig {
        let mut cfg = FredformerConfig::new(3, 32, 16, 8);
        cfg.embed_dim = 8;
        cfg.heads = 2;
        cfg.head_dim = 4;
        cfg.depth = 1;
        cfg.mlp_dim = 12;
        cfg
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let cfg = cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save(&path, &cfg, &params).unwrap();
        let (cfg2, params2) = load(&path).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(params2.to_flat(), params.to_flat());
    }

    #[test]
    fn version_tag_is_enforced() {
        let cfg = cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save(&path, &cfg, &params).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace(CHECKPOINT_FORMAT, "someone-elses-format");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::WrongFormat { .. })));
    }

    #[test]
    fn tampered_shape_is_rejected() {
        let cfg = cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save(&path, &cfg, &params).unwrap();
        let mut doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        doc["arrays"][0]["shape"][0] = serde_json::json!(999);
        std::fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
        match load(&path) {
            Err(CheckpointError::ArrayMismatch { detail, .. }) => {
                assert!(detail.contains("999"), "{detail}")
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn config_and_arrays_must_agree() {
        let cfg = cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save(&path, &cfg, &params).unwrap();
        let mut doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        // Doubling the embedding width invalidates every stored shape.
        doc["config"]["embed_dim"] = serde_json::json!(16);
        std::fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::ArrayMismatch { .. })));
    }

    #[test]
    fn non_finite_parameters_never_reach_disk() {
        let cfg = cfg();
        let mut params = ModelParams::init(&cfg).unwrap();
        params.head_b[0] = f64::NAN;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        assert!(matches!(save(&path, &cfg, &params), Err(CheckpointError::NonFinite)));
        assert!(!path.exists());
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load("/nonexistent/model.json").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/model.json"));
    }
}
