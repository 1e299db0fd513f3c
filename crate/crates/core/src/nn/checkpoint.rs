//! Checkpoints: a JSON manifest next to a raw little-endian `f32` blob.
//! The blob holds, layer by layer, the trainable values followed by any
//! batch-norm running statistics.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LayerSpec, ModelParams, ModelSpec, NnError};

pub const CHECKPOINT_FORMAT: &str = "sst-cnn-f32le-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub spec: ModelSpec,
    pub seed: u64,
    pub total_params: usize,
    /// Floats in the blob: trainable values plus running statistics.
    pub n_values: usize,
    /// File name of the blob, relative to the manifest.
    pub blob: String,
    pub sha256: String,
    #[serde(default)]
    pub training: serde_json::Value,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn encode(params: &ModelParams<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * (params.values.len() + params.running.len()));
    for (i, p) in params.plan().iter().enumerate() {
        for v in params.layer_values(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let LayerSpec::BatchNorm { channels } = p.spec {
            for v in &params.running[p.running_offset..p.running_offset + 2 * channels] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Write `<path>` (manifest) and the blob beside it with extension `.bin`.
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams<f32>,
    seed: u64,
    training: serde_json::Value,
) -> Result<CheckpointManifest, NnError> {
    let bytes = encode(params);
    let blob = blob_path(path);
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        spec: params.spec.clone(),
        seed,
        total_params: params.total_params(),
        n_values: bytes.len() / 4,
        blob: blob
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sha256: hex_sha256(&bytes),
        training,
    };
    fs::write(&blob, &bytes)?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| NnError::Manifest(e.to_string()))?;
    fs::write(path, json)?;
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams<f32>, CheckpointManifest), NnError> {
    let text = fs::read_to_string(path)?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| NnError::Manifest(format!("{}: {e}", path.display())))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(NnError::Manifest(format!("unknown format {:?}", manifest.format)));
    }
    let expected = manifest.spec.total_params();
    if manifest.total_params != expected {
        return Err(NnError::ParamCountMismatch {
            declared: manifest.total_params,
            expected,
        });
    }
    let blob = path.parent().unwrap_or(Path::new(".")).join(&manifest.blob);
    let bytes = fs::read(&blob)?;
    if bytes.len() != manifest.n_values * 4 {
        return Err(NnError::ChecksumMismatch(format!(
            "{} has {} bytes, manifest declares {} floats",
            blob.display(),
            bytes.len(),
            manifest.n_values
        )));
    }
    if hex_sha256(&bytes) != manifest.sha256 {
        return Err(NnError::ChecksumMismatch(format!("{} sha256 differs", blob.display())));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let plan = manifest.spec.plan()?;
    let mut values = Vec::with_capacity(expected);
    let mut running = Vec::new();
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[f32], NnError> {
        let s = floats
            .get(pos..pos + n)
            .ok_or_else(|| NnError::ChecksumMismatch("blob shorter than the layer layout".into()))?;
        pos += n;
        Ok(s)
    };
    for p in &plan {
        values.extend_from_slice(take(p.spec.param_count())?);
        running.extend_from_slice(take(p.spec.running_count())?);
    }
    if pos != floats.len() {
        return Err(NnError::ChecksumMismatch("blob longer than the layer layout".into()));
    }
    let params = ModelParams::from_parts(manifest.spec.clone(), values, running)?;
    Ok((params, manifest))
}
