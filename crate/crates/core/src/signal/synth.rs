//! Synthetic source families with distinguishable spectral support.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SynthRecipe {
    /// Sum of harmonics of a random fundamental with geometric roll-off.
    Harmonic {
        f0_min: f64,
        f0_max: f64,
        partials: usize,
        rolloff: f64,
    },
    /// Gaussian noise restricted to `[band_lo, band_hi]` Hz, gated to a
    /// random burst covering `[min_fill, max_fill]` of the signal.
    NoiseBurst {
        band_lo: f64,
        band_hi: f64,
        min_fill: f64,
        max_fill: f64,
    },
    /// Linear frequency sweep between two random endpoints.
    Chirp {
        start_min: f64,
        start_max: f64,
        end_min: f64,
        end_max: f64,
    },
}

impl SynthRecipe {
    pub fn low_tone() -> Self {
        SynthRecipe::Harmonic {
            f0_min: 110.0,
            f0_max: 220.0,
            partials: 4,
            rolloff: 0.6,
        }
    }

    pub fn high_burst() -> Self {
        SynthRecipe::NoiseBurst {
            band_lo: 3000.0,
            band_hi: 6000.0,
            min_fill: 0.5,
            max_fill: 1.0,
        }
    }

    pub fn validate(&self, rate: u32) -> Result<()> {
        let nyquist = rate as f64 / 2.0;
        let ok = match *self {
            SynthRecipe::Harmonic {
                f0_min,
                f0_max,
                partials,
                rolloff,
            } => 0.0 < f0_min && f0_min <= f0_max && f0_max < nyquist && partials >= 1 && rolloff > 0.0,
            SynthRecipe::NoiseBurst {
                band_lo,
                band_hi,
                min_fill,
                max_fill,
            } => {
                0.0 <= band_lo
                    && band_lo < band_hi
                    && band_hi <= nyquist
                    && 0.0 < min_fill
                    && min_fill <= max_fill
                    && max_fill <= 1.0
            }
            SynthRecipe::Chirp {
                start_min,
                start_max,
                end_min,
                end_max,
            } => {
                0.0 < start_min
                    && start_min <= start_max
                    && start_max < nyquist
                    && 0.0 < end_min
                    && end_min <= end_max
                    && end_max < nyquist
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid synth recipe at {rate} Hz: {self:?}")))
        }
    }

    pub fn generate<R: Rng + ?Sized>(&self, len: usize, rate: u32, rng: &mut R) -> Result<Vec<f64>> {
        self.validate(rate)?;
        let fs = rate as f64;
        let out = match *self {
            SynthRecipe::Harmonic {
                f0_min,
                f0_max,
                partials,
                rolloff,
            } => {
                let f0 = rng.random_range(f0_min..=f0_max);
                let mut x = vec![0.0; len];
                for h in 1..=partials {
                    let f = f0 * h as f64;
                    if f >= 0.45 * fs {
                        break;
                    }
                    let amp = rolloff.powi(h as i32 - 1) * rng.random_range(0.7..1.0);
                    let phase = rng.random_range(0.0..2.0 * PI);
                    for (n, v) in x.iter_mut().enumerate() {
                        *v += amp * (2.0 * PI * f * n as f64 / fs + phase).sin();
                    }
                }
                // Slow tremolo keeps the family from being purely stationary.
                let rate_hz = rng.random_range(1.0..4.0);
                let depth = rng.random_range(0.0..0.5);
                let phase = rng.random_range(0.0..2.0 * PI);
                for (n, v) in x.iter_mut().enumerate() {
                    *v *= 1.0 - depth * 0.5 * (1.0 + (2.0 * PI * rate_hz * n as f64 / fs + phase).sin());
                }
                x
            }
            SynthRecipe::NoiseBurst {
                band_lo,
                band_hi,
                min_fill,
                max_fill,
            } => {
                let white: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
                let mut x = band_limit(&white, rate, band_lo, band_hi);
                let fill = rng.random_range(min_fill..=max_fill);
                let active = ((fill * len as f64) as usize).clamp(1, len);
                let start = rng.random_range(0..=len - active);
                let ramp = (active / 8).max(1);
                for (n, v) in x.iter_mut().enumerate() {
                    *v *= gate(n, start, active, ramp);
                }
                x
            }
            SynthRecipe::Chirp {
                start_min,
                start_max,
                end_min,
                end_max,
            } => {
                let f_start = rng.random_range(start_min..=start_max);
                let f_end = rng.random_range(end_min..=end_max);
                let dur = len as f64 / fs;
                let phase0 = rng.random_range(0.0..2.0 * PI);
                (0..len)
                    .map(|n| {
                        let t = n as f64 / fs;
                        let k = (f_end - f_start) / dur;
                        (2.0 * PI * (f_start * t + 0.5 * k * t * t) + phase0).sin()
                    })
                    .collect()
            }
        };
        Ok(out)
    }
}

/// Raised-cosine gate active on `[start, start + active)`.
fn gate(n: usize, start: usize, active: usize, ramp: usize) -> f64 {
    if n < start || n >= start + active {
        return 0.0;
    }
    let pos = n - start;
    let from_end = start + active - 1 - n;
    let edge = pos.min(from_end);
    if edge >= ramp {
        1.0
    } else {
        0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
    }
}

/// Zeroes all DFT bins outside `[lo, hi]` Hz.
pub fn band_limit(x: &[f64], rate: u32, lo: f64, hi: f64) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = x.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        let f = bin as f64 * rate as f64 / n as f64;
        if f < lo || f > hi {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}
