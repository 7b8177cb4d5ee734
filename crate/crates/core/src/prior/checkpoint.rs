//! Denoiser checkpoint files.
//!
//! Layout: the 8-byte magic `SEPDIFF1`, a little-endian `u32` header
//! length, the JSON header, then the flat parameter buffer as
//! little-endian `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::toy::{ToyConfig, ToyDenoiser};
use super::train::TrainConfig;
use super::ScoreModel;
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

const MAGIC: &[u8; 8] = b"SEPDIFF1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ToyConfig,
    pub data_rms: f64,
    pub param_count: usize,
    pub schedule_fingerprint: String,
    pub betas: Vec<f64>,
    #[serde(default)]
    pub training: Option<TrainingRecord>,
}

/// How a checkpoint was produced, for reload checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub config: TrainConfig,
    pub seed: u64,
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
}

pub fn encode_checkpoint(model: &ToyDenoiser, training: Option<TrainingRecord>) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        model: model.config().clone(),
        data_rms: model.data_rms(),
        param_count: model.param_count(),
        schedule_fingerprint: model.schedule().fingerprint(),
        betas: model.schedule().betas().to_vec(),
        training,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 8 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

/// Parses a checkpoint. When `expected` is given, the stored schedule must
/// have the same fingerprint.
pub fn decode_checkpoint(bytes: &[u8], expected: Option<&NoiseSchedule>) -> Result<(ToyDenoiser, CheckpointHeader)> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Schema("not a denoiser checkpoint (bad magic)".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| Error::Schema("checkpoint header truncated".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    let schedule = NoiseSchedule::from_betas(header.betas.clone())?;
    if schedule.fingerprint() != header.schedule_fingerprint {
        return Err(Error::Schema("checkpoint schedule fingerprint does not match its betas".into()));
    }
    if let Some(want) = expected {
        if want.fingerprint() != header.schedule_fingerprint {
            return Err(Error::Config(format!(
                "checkpoint was trained with schedule {} but the run uses {}",
                header.schedule_fingerprint,
                want.fingerprint()
            )));
        }
    }
    let raw = &bytes[12 + hlen..];
    if raw.len() != 8 * header.param_count {
        return Err(Error::Schema(format!(
            "checkpoint holds {} parameter bytes, header declares {} parameters",
            raw.len(),
            header.param_count
        )));
    }
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let model = ToyDenoiser::from_parts(header.model.clone(), schedule, header.data_rms, params)?;
    Ok((model, header))
}

pub fn save_checkpoint(path: &Path, model: &ToyDenoiser, training: Option<TrainingRecord>) -> Result<()> {
    let bytes = encode_checkpoint(model, training)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, expected: Option<&NoiseSchedule>) -> Result<(ToyDenoiser, CheckpointHeader)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ToyDenoiser {
        let cfg = ToyConfig {
            channels: 4,
            classes: vec!["a".into()],
            ..ToyConfig::default()
        };
        ToyDenoiser::new(cfg, NoiseSchedule::linear(200, 1e-4, 2e-2).unwrap(), 0.2, 3).unwrap()
    }

    #[test]
    fn round_trip_preserves_model() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.ckpt");
        save_checkpoint(&path, &m, None).unwrap();
        let (back, header) = load_checkpoint(&path, Some(m.schedule())).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(header.model.classes, vec!["a".to_string()]);
        let x = vec![0.3; 32];
        assert_eq!(back.score(&x, 10, Some("a")).unwrap(), m.score(&x, 10, Some("a")).unwrap());
        assert_eq!(std::fs::read(&path).unwrap(), encode_checkpoint(&back, None).unwrap());
    }

    #[test]
    fn schedule_mismatch_is_rejected() {
        let bytes = encode_checkpoint(&model(), None).unwrap();
        let other = NoiseSchedule::linear(100, 1e-4, 2e-2).unwrap();
        assert!(matches!(decode_checkpoint(&bytes, Some(&other)), Err(Error::Config(_))));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode_checkpoint(&model(), None).unwrap();
        assert!(matches!(decode_checkpoint(b"RIFF0000", None), Err(Error::Schema(_))));
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 8], None), Err(Error::Schema(_))));
        assert!(matches!(decode_checkpoint(&bytes[..20], None), Err(Error::Schema(_))));
    }
}
