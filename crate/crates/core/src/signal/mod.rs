//! Waveforms, time-frequency transforms, WAV I/O and mixture synthesis.

pub mod mixture;
pub mod resample;
pub mod stft;
pub mod synth;
pub mod wav;

pub use mixture::{make_mixture, Mixture, MixtureSpec, SourceKind, SourceSpec};
pub use resample::resample;
pub use stft::{istft, stft, Spectrogram, StftParams, StftPlan, WindowKind};
pub use synth::SynthRecipe;
pub use wav::{load_wav, read_wav, write_wav, SampleFormat};

use crate::error::{Error, Result};

pub const DEFAULT_RATE: u32 = 16_000;
/// Four seconds at 16 kHz.
pub const DEFAULT_LENGTH: usize = 64_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub rate: u32,
}

impl Waveform {
    /// Largest admissible sample magnitude.
    pub const HEADROOM: f64 = 4.0;

    pub fn new(samples: Vec<f64>, rate: u32) -> Result<Self> {
        if rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Config(format!("sample {i} is not finite")));
        }
        if let Some(i) = samples.iter().position(|s| s.abs() > Self::HEADROOM) {
            return Err(Error::Config(format!(
                "sample {i} = {} exceeds headroom {}",
                samples[i],
                Self::HEADROOM
            )));
        }
        Ok(Self { samples, rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Scales `x` so its RMS equals `10^(db/20)`.
pub fn scale_to_rms_db(x: &[f64], db: f64) -> Result<Vec<f64>> {
    let current = rms(x);
    if !(current > 0.0) {
        return Err(Error::MetricUndefined("RMS of a silent signal"));
    }
    let g = db_to_amplitude(db) / current;
    Ok(x.iter().map(|v| v * g).collect())
}

/// Crops or zero-pads at the end to exactly `len` samples.
pub fn fit_length(x: &[f64], len: usize) -> Vec<f64> {
    let mut out = x[..x.len().min(len)].to_vec();
    out.resize(len, 0.0);
    out
}

/// Delays `x` by `offset` samples, keeping the length.
pub fn delay(x: &[f64], offset: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    if offset < x.len() {
        out[offset..].copy_from_slice(&x[..x.len() - offset]);
    }
    out
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    energy(x).sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
