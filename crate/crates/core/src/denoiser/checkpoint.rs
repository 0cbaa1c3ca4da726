//! Checkpoint files: one JSON header line, then every parameter tensor as
//! little-endian `f64` values in header order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::network::DenoiserParams;
use super::train::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "sketch-denoiser";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub seed: u64,
    /// Completed epochs.
    pub epochs_done: usize,
    pub diverged: Option<String>,
    pub tensors: Vec<TensorSpec>,
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    params: &DenoiserParams,
    config: &TrainConfig,
    epochs_done: usize,
    diverged: Option<String>,
) -> Result<()> {
    let tensors = params.tensors();
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        seed: config.seed,
        epochs_done,
        diverged,
        tensors: tensors.iter().map(|(n, s, _)| TensorSpec { name: n.clone(), shape: s.clone() }).collect(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (_, _, data) in tensors {
        for v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<(CheckpointHeader, DenoiserParams)> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: CheckpointHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint {}/{}",
            header.format, header.version
        )));
    }
    let mut params = DenoiserParams::init(header.config.network, header.config.seed)?;
    {
        let slots = params.tensors_mut();
        if slots.len() != header.tensors.len() {
            return Err(Error::Format(format!(
                "checkpoint lists {} tensors, the network has {}",
                header.tensors.len(),
                slots.len()
            )));
        }
        let mut buf = [0u8; 8];
        for ((name, dst), spec) in slots.into_iter().zip(&header.tensors) {
            let n: usize = spec.shape.iter().product();
            if name != spec.name || n != dst.len() {
                return Err(Error::Format(format!("tensor {} does not match network slot {name}", spec.name)));
            }
            for v in dst.iter_mut() {
                r.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated tensor {name}: {e}")))?;
                *v = f64::from_le_bytes(buf);
            }
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after the last tensor", rest.len())));
    }
    Ok((header, params))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &DenoiserParams,
    config: &TrainConfig,
    epochs_done: usize,
    diverged: Option<String>,
) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), params, config, epochs_done, diverged)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointHeader, DenoiserParams)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
