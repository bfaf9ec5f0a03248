//! Binary checkpoint and JSON sidecar manifest.
//!
//! Layout: magic `DRCFG1\0`, little-endian `u32` fields `N, H, d_t, T`, then
//! little-endian `f32` arrays `W1, b1, W2, b2`, each row-major. The network
//! input order `[guidance ‖ x_t ‖ time]` is recorded in the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use cfrec_core::DenoiserParams;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 7] = b"DRCFG1\0";
pub const INPUT_LAYOUT: &str = "guidance|x_t|time";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub input_layout: String,
    pub n_items: usize,
    pub hidden: usize,
    pub time_dim: usize,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub p_uncond: f64,
    pub seed: u64,
    pub dataset_fingerprint: String,
    /// Split used for model selection (`valid`, or `test` for two-way splits).
    pub selection_split: String,
    pub validation_ndcg10: f64,
    pub best_step: u64,
    /// Best nDCG@10 at each improvement, in order.
    pub history: Vec<(u64, f64)>,
    pub config: RunConfig,
    pub wall_clock_secs: f64,
}

pub fn encode(params: &DenoiserParams<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(MAGIC.len() + 16 + 4 * params.param_count());
    out.extend_from_slice(MAGIC);
    for v in [
        cfrec_core::NoisePredictor::n_items(params),
        params.hidden(),
        params.time_dim(),
        params.steps(),
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for tensor in params.tensors() {
        for v in tensor {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<DenoiserParams<f32>> {
    let bad = |msg: &str| CliError::Data(format!("checkpoint: {msg}"));
    let body = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| bad("bad magic bytes"))?;
    if body.len() < 16 {
        return Err(bad("truncated header"));
    }
    let dim = |i: usize| u32::from_le_bytes(body[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    let (n, h, d, t) = (dim(0), dim(1), dim(2), dim(3));
    let sizes = [(2 * n + d) * h, h, h * n, n];
    let floats = &body[16..];
    if floats.len() != 4 * sizes.iter().sum::<usize>() {
        return Err(bad(&format!(
            "expected {} parameters for N={n} H={h} d_t={d}, found {} bytes",
            sizes.iter().sum::<usize>(),
            floats.len()
        )));
    }
    let mut values = floats
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let mut take = |k: usize| values.by_ref().take(k).collect::<Vec<f32>>();
    let (w1, b1, w2, b2) = (take(sizes[0]), take(sizes[1]), take(sizes[2]), take(sizes[3]));
    Ok(DenoiserParams::from_parts(n, h, d, t, w1, b1, w2, b2)?)
}

pub fn manifest_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Writes manifest then checkpoint, each via write-then-rename.
pub fn save(path: &Path, params: &DenoiserParams<f32>, manifest: &Manifest) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n";
    write_atomic(&manifest_path(path), json.as_bytes())?;
    write_atomic(path, &encode(params))
}

pub fn load(path: &Path) -> Result<(DenoiserParams<f32>, Manifest)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let params = decode(&bytes)?;
    let mpath = manifest_path(path);
    let raw = fs::read_to_string(&mpath).map_err(|e| CliError::io(&mpath, e))?;
    let manifest: Manifest =
        serde_json::from_str(&raw).map_err(|e| CliError::Data(format!("{}: {e}", mpath.display())))?;
    if manifest.n_items != cfrec_core::NoisePredictor::n_items(&params) || manifest.steps != params.steps() {
        return Err(CliError::Data(format!(
            "{} does not describe {}",
            mpath.display(),
            path.display()
        )));
    }
    Ok((params, manifest))
}
