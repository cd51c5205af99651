//! Checkpoint format: a JSON header (shapes, model geometry, schedule,
//! ablation mode, config hash) followed by every parameter as
//! little-endian 64-bit floats, denoiser slices first, then the
//! appearance encoder's.
//!
//! Layout: magic `WNVSCKPT`, `u64` header length (LE), header JSON bytes,
//! then the flat f64 payload.

use crate::appearance::AppearanceEncoderParams;
use crate::assembly::Ablation;
use crate::camera::ModelConfig;
use crate::denoiser::{DenoiserConfig, DenoiserParams};
use crate::scalar::Scalar;
use crate::schedule::ScheduleConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"WNVSCKPT";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

fn io_err(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SliceInfo {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    denoiser: DenoiserConfig,
    schedule: ScheduleConfig,
    ablation: Ablation,
    config_hash: String,
    slices: Vec<SliceInfo>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<S> {
    pub model: ModelConfig,
    pub denoiser_cfg: DenoiserConfig,
    pub schedule_cfg: ScheduleConfig,
    pub ablation: Ablation,
    pub config_hash: String,
    pub denoiser: DenoiserParams<S>,
    pub encoder: AppearanceEncoderParams<S>,
}

fn encoder_named_slices<S: Scalar>(enc: &AppearanceEncoderParams<S>) -> Vec<(String, &Vec<S>)> {
    enc.layers
        .iter()
        .enumerate()
        .flat_map(|(i, l)| {
            [
                (format!("encoder.{i}.weight"), &l.weight),
                (format!("encoder.{i}.bias"), &l.bias),
            ]
        })
        .collect()
}

pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    ckpt: &Checkpoint<S>,
) -> Result<(), CheckpointError> {
    let mut named = ckpt.denoiser.flat_slices();
    named.extend(encoder_named_slices(&ckpt.encoder));
    let header = Header {
        model: ckpt.model,
        denoiser: ckpt.denoiser_cfg,
        schedule: ckpt.schedule_cfg,
        ablation: ckpt.ablation,
        config_hash: ckpt.config_hash.clone(),
        slices: named
            .iter()
            .map(|(name, v)| SliceInfo {
                name: name.clone(),
                len: v.len(),
            })
            .collect(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let mut bytes = Vec::with_capacity(
        MAGIC.len() + 8 + header_json.len() + named.iter().map(|(_, v)| v.len() * 8).sum::<usize>(),
    );
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, slice) in &named {
        for v in slice.iter() {
            bytes.extend_from_slice(&v.lossy_f64().to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Checkpoint<S>, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let header_len =
        u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = 16 + header_len;
    if bytes.len() < header_end {
        return Err(CheckpointError::Corrupt("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;

    let total: usize = header.slices.iter().map(|s| s.len).sum();
    let payload = &bytes[header_end..];
    if payload.len() != total * 8 {
        return Err(CheckpointError::Corrupt(format!(
            "payload {} bytes, expected {}",
            payload.len(),
            total * 8
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));

    let mut denoiser = DenoiserParams::<S>::init(
        &header.model,
        &header.denoiser,
        header.schedule.timesteps,
        0,
    );
    let mut encoder = AppearanceEncoderParams::<S>::init(&header.model, 0)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;

    {
        let mut slots: Vec<&mut Vec<S>> = denoiser.flat_slices_mut();
        slots.extend(
            encoder
                .layers
                .iter_mut()
                .flat_map(|l| [&mut l.weight, &mut l.bias]),
        );
        if slots.len() != header.slices.len() {
            return Err(CheckpointError::Corrupt(format!(
                "slice count {} != expected {}",
                header.slices.len(),
                slots.len()
            )));
        }
        for (slot, info) in slots.iter_mut().zip(&header.slices) {
            if slot.len() != info.len {
                return Err(CheckpointError::Corrupt(format!(
                    "slice {} length {} != {}",
                    info.name,
                    info.len,
                    slot.len()
                )));
            }
            for v in slot.iter_mut() {
                *v = S::of(values.next().expect("length checked"));
            }
        }
    }
    Ok(Checkpoint {
        model: header.model,
        denoiser_cfg: header.denoiser,
        schedule_cfg: header.schedule,
        ablation: header.ablation,
        config_hash: header.config_hash,
        denoiser,
        encoder,
    })
}
