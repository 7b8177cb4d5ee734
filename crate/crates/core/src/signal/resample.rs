//! Band-limited resampling with a Blackman-windowed sinc kernel.

use crate::error::{Error, Result};

/// Zero crossings of the sinc kernel on each side, at the lower of the two
/// rates.
const HALF_ZEROS: f64 = 24.0;

pub fn resample(samples: &[f64], from: u32, to: u32) -> Result<Vec<f64>> {
    if from == 0 || to == 0 {
        return Err(Error::Config(format!("invalid resampling rates {from} -> {to}")));
    }
    if from == to {
        return Ok(samples.to_vec());
    }
    let ratio = to as f64 / from as f64;
    let out_len = (samples.len() as f64 * ratio).round() as usize;
    // Cutoff relative to the input Nyquist frequency.
    let cutoff = ratio.min(1.0) * 0.97;
    let half_width = HALF_ZEROS / cutoff;
    let n = samples.len() as isize;
    let out = (0..out_len)
        .map(|j| {
            let centre = j as f64 / ratio;
            let lo = ((centre - half_width).ceil() as isize).max(0);
            let hi = ((centre + half_width).floor() as isize).min(n - 1);
            (lo..=hi)
                .map(|k| {
                    let d = centre - k as f64;
                    samples[k as usize] * cutoff * sinc(cutoff * d) * blackman(d / half_width)
                })
                .sum()
        })
        .collect();
    Ok(out)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Blackman window on `[-1, 1]`.
fn blackman(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let a = std::f64::consts::PI * u;
    0.42 + 0.5 * a.cos() + 0.08 * (2.0 * a).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::stft::{stft, StftParams};

    fn tone(freq: f64, rate: u32, secs: f64) -> Vec<f64> {
        let n = (rate as f64 * secs) as usize;
        (0..n)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect()
    }

    #[test]
    fn upsampling_doubles_length() {
        let x = tone(300.0, 8000, 0.5);
        let y = resample(&x, 8000, 16000).unwrap();
        assert!((y.len() as isize - 2 * x.len() as isize).abs() <= 1);
    }

    #[test]
    fn tone_peak_survives_downsampling() {
        let x = tone(440.0, 48000, 1.0);
        let y = resample(&x, 48000, 16000).unwrap();
        assert_eq!(y.len(), 16000);
        let params = StftParams::new(1024, 512);
        let spec = stft(&y, params).unwrap();
        let frame = spec.frame(spec.frames / 2);
        let peak = (0..frame.len())
            .max_by(|&a, &b| frame[a].norm().total_cmp(&frame[b].norm()))
            .unwrap();
        let expected = 440.0 * 1024.0 / 16000.0;
        assert!((peak as f64 - expected).abs() <= 1.0, "peak bin {peak}, expected {expected}");
        // Amplitude preserved in the interior.
        let rms = (y[4000..12000].iter().map(|v| v * v).sum::<f64>() / 8000.0).sqrt();
        assert!((rms - 0.5 / 2f64.sqrt()).abs() < 0.01);
    }

    #[test]
    fn identity_rate_is_copy() {
        let x = vec![0.1, 0.2, -0.3];
        assert_eq!(resample(&x, 16000, 16000).unwrap(), x);
        assert!(resample(&x, 0, 16000).is_err());
    }
}
