//! Center-padded STFT/ISTFT with reflection padding.
//!
//! Frames are taken from the signal padded by `window_len / 2` reflected
//! samples on each side, giving `1 + len / hop` frames. Each frame's DFT is
//! scaled by `1/sqrt(window_len)`, so a frame's bin energy (counting the
//! mirrored half) equals its windowed sample energy. `istft` divides by the
//! overlap-added squared window; the
//! window and hop must make that envelope constant (COLA) away from the
//! signal edges.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    SqrtHann,
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Periodic window of length `len`.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        let n = len as f64;
        (0..len)
            .map(|i| {
                let hann = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos();
                match self {
                    WindowKind::SqrtHann => hann.sqrt(),
                    WindowKind::Hann => hann,
                    WindowKind::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

impl fmt::Display for WindowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowKind::SqrtHann => "sqrt-hann",
            WindowKind::Hann => "hann",
            WindowKind::Rectangular => "rectangular",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftParams {
    pub window_len: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            window_len: 510,
            hop: 255,
            window: WindowKind::SqrtHann,
        }
    }
}

impl StftParams {
    pub fn new(window_len: usize, hop: usize) -> Self {
        Self {
            window_len,
            hop,
            window: WindowKind::SqrtHann,
        }
    }

    pub fn freq_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn frames_for(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    fn validate(&self) -> Result<()> {
        if self.window_len < 2 || self.window_len % 2 != 0 {
            return Err(Error::Config(format!(
                "window_len must be even and >= 2, got {}",
                self.window_len
            )));
        }
        if self.hop == 0 || self.hop > self.window_len {
            return Err(Error::Config(format!(
                "hop must be in 1..={}, got {}",
                self.window_len, self.hop
            )));
        }
        Ok(())
    }
}

/// Complex spectrogram stored frame-major: `bins[frame * freq_bins + bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: Vec<Complex64>,
    pub frames: usize,
    pub params: StftParams,
}

impl Spectrogram {
    pub fn zeros(frames: usize, params: StftParams) -> Self {
        Self {
            bins: vec![Complex64::new(0.0, 0.0); frames * params.freq_bins()],
            frames,
            params,
        }
    }

    pub fn freq_bins(&self) -> usize {
        self.params.freq_bins()
    }

    pub fn frame(&self, m: usize) -> &[Complex64] {
        let f = self.freq_bins();
        &self.bins[m * f..(m + 1) * f]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm()).collect()
    }
}

/// Reusable STFT plan: window coefficients plus cached FFTs.
#[derive(Clone)]
pub struct StftPlan {
    params: StftParams,
    window: Vec<f64>,
    scale: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StftPlan").field("params", &self.params).finish()
    }
}

impl StftPlan {
    pub fn new(params: StftParams) -> Result<Self> {
        params.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            params,
            window: params.window.coefficients(params.window_len),
            scale: 1.0 / (params.window_len as f64).sqrt(),
            forward: planner.plan_fft_forward(params.window_len),
            inverse: planner.plan_fft_inverse(params.window_len),
        })
    }

    pub fn params(&self) -> StftParams {
        self.params
    }

    fn check_signal(&self, len: usize) -> Result<()> {
        if len < self.params.window_len {
            return Err(Error::Dimension {
                context: "stft: signal shorter than one frame",
                expected: self.params.window_len,
                actual: len,
            });
        }
        Ok(())
    }

    /// Index into the original signal for padded position `p`.
    fn source_index(&self, p: usize, len: usize) -> usize {
        let idx = p as isize - (self.params.window_len / 2) as isize;
        if idx < 0 {
            (-idx) as usize
        } else if idx as usize >= len {
            2 * (len - 1) - idx as usize
        } else {
            idx as usize
        }
    }

    pub fn forward(&self, signal: &[f64]) -> Result<Spectrogram> {
        self.check_signal(signal.len())?;
        let w = self.params.window_len;
        let hop = self.params.hop;
        let bins = self.params.freq_bins();
        let frames = self.params.frames_for(signal.len());
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); w];
        for m in 0..frames {
            for (n, slot) in buf.iter_mut().enumerate() {
                let x = signal[self.source_index(m * hop + n, signal.len())];
                *slot = Complex64::new(x * self.window[n] * self.scale, 0.0);
            }
            self.forward.process(&mut buf);
            out.extend_from_slice(&buf[..bins]);
        }
        Ok(Spectrogram {
            bins: out,
            frames,
            params: self.params,
        })
    }

    /// Overlap-added squared window over one hop period; constant under COLA.
    fn ola_gain(&self) -> Result<f64> {
        let w = self.params.window_len;
        let hop = self.params.hop;
        if w % hop != 0 {
            return Err(Error::Config(format!(
                "window {w} / hop {hop} is not a constant-overlap-add pair"
            )));
        }
        let sums: Vec<f64> = (0..hop)
            .map(|n| (n..w).step_by(hop).map(|i| self.window[i].powi(2)).sum())
            .collect();
        let gain = sums[0];
        if gain <= 0.0 || sums.iter().any(|s| (s - gain).abs() > 1e-10 * gain) {
            return Err(Error::Config(format!(
                "{} window with length {w} and hop {hop} does not satisfy COLA",
                self.params.window
            )));
        }
        Ok(gain)
    }

    pub fn inverse(&self, spec: &Spectrogram, length: usize) -> Result<Vec<f64>> {
        if spec.params != self.params {
            return Err(Error::Config("spectrogram framing does not match plan".into()));
        }
        let bins = self.params.freq_bins();
        if spec.bins.len() != spec.frames * bins {
            return Err(Error::Dimension {
                context: "istft bins",
                expected: spec.frames * bins,
                actual: spec.bins.len(),
            });
        }
        // Validates the configuration; the tail is covered by fewer frames,
        // so the actual envelope is divided out below.
        self.ola_gain()?;
        let w = self.params.window_len;
        let hop = self.params.hop;
        let half = w / 2;
        let mut padded = vec![0.0; (spec.frames - 1) * hop + w];
        let mut envelope = vec![0.0; padded.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); w];
        for m in 0..spec.frames {
            let frame = spec.frame(m);
            buf[..bins].copy_from_slice(frame);
            buf[0].im = 0.0;
            buf[half].im = 0.0;
            for k in 1..half {
                buf[w - k] = frame[k].conj();
            }
            self.inverse.process(&mut buf);
            for n in 0..w {
                padded[m * hop + n] += self.window[n] * buf[n].re * self.scale;
                envelope[m * hop + n] += self.window[n] * self.window[n];
            }
        }
        Ok((0..length)
            .map(|i| match (padded.get(i + half), envelope.get(i + half)) {
                (Some(v), Some(e)) if *e > 1e-12 => v / e,
                _ => 0.0,
            })
            .collect())
    }

    /// Adjoint of `forward` viewed as a real-linear map from the signal to
    /// the real and imaginary parts of the one-sided bins. `grad` holds
    /// `dL/dRe + i dL/dIm` per bin; the result is `dL/dsignal`.
    pub fn adjoint(&self, grad: &[Complex64], len: usize) -> Result<Vec<f64>> {
        self.check_signal(len)?;
        let w = self.params.window_len;
        let hop = self.params.hop;
        let bins = self.params.freq_bins();
        let frames = self.params.frames_for(len);
        if grad.len() != frames * bins {
            return Err(Error::Dimension {
                context: "stft adjoint",
                expected: frames * bins,
                actual: grad.len(),
            });
        }
        let mut out = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); w];
        for m in 0..frames {
            buf[..bins].copy_from_slice(&grad[m * bins..(m + 1) * bins]);
            for slot in buf[bins..].iter_mut() {
                *slot = Complex64::new(0.0, 0.0);
            }
            self.inverse.process(&mut buf);
            for n in 0..w {
                out[self.source_index(m * hop + n, len)] += self.window[n] * buf[n].re * self.scale;
            }
        }
        Ok(out)
    }
}

pub fn stft(signal: &[f64], params: StftParams) -> Result<Spectrogram> {
    StftPlan::new(params)?.forward(signal)
}

pub fn istft(spec: &Spectrogram, length: usize) -> Result<Vec<f64>> {
    StftPlan::new(spec.params)?.inverse(spec, length)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Direct O(W^2) DFT of frame `m`, independent of rustfft.
    fn naive_frame(signal: &[f64], params: StftParams, m: usize) -> Vec<Complex64> {
        let w = params.window_len;
        let win = params.window.coefficients(w);
        let half = (w / 2) as isize;
        let n_sig = signal.len() as isize;
        (0..params.freq_bins())
            .map(|f| {
                (0..w)
                    .map(|n| {
                        let mut idx = (m * params.hop + n) as isize - half;
                        if idx < 0 {
                            idx = -idx;
                        }
                        if idx >= n_sig {
                            idx = 2 * (n_sig - 1) - idx;
                        }
                        let ang = -2.0 * std::f64::consts::PI * (f * n) as f64 / w as f64;
                        Complex64::from_polar(signal[idx as usize] * win[n] / (w as f64).sqrt(), ang)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        let params = StftParams::new(16, 8);
        let sig = random_signal(50, 1);
        let spec = stft(&sig, params).unwrap();
        assert_eq!(spec.frames, 1 + 50 / 8);
        for m in [0, 3, spec.frames - 1] {
            for (a, b) in spec.frame(m).iter().zip(naive_frame(&sig, params, m)) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn frame_energy_matches_windowed_samples() {
        let params = StftParams::new(64, 32);
        let sig = random_signal(300, 6);
        let spec = stft(&sig, params).unwrap();
        let win = params.window.coefficients(64);
        let m = 4;
        let direct: f64 = (0..64).map(|n| (sig[m * 32 + n - 32] * win[n]).powi(2)).sum();
        let f = spec.frame(m);
        let bins: f64 = f[0].norm_sqr() + f[32].norm_sqr() + 2.0 * f[1..32].iter().map(|c| c.norm_sqr()).sum::<f64>();
        assert!((direct - bins).abs() < 1e-10 * direct);
    }

    #[test]
    fn dc_concentrates_in_lowest_bins() {
        let sig = vec![0.25; 4000];
        let spec = stft(&sig, StftParams::default()).unwrap();
        for m in 0..spec.frames {
            let e: Vec<f64> = spec.frame(m).iter().map(|c| c.norm_sqr()).collect();
            let total: f64 = e.iter().sum();
            assert!(e.iter().cloned().fold(0.0, f64::max) == e[0]);
            // sqrt-Hann main lobe spans bins 0 and 1.
            assert!((e[0] + e[1]) / total > 0.99);
        }
        let rect = StftParams {
            window: WindowKind::Rectangular,
            ..StftParams::default()
        };
        let spec = stft(&sig, rect).unwrap();
        for m in 0..spec.frames {
            let e: Vec<f64> = spec.frame(m).iter().map(|c| c.norm_sqr()).collect();
            assert!(e[0] / e.iter().sum::<f64>() >= 0.999);
        }
    }

    #[test]
    fn sine_peak_bin() {
        let sig: Vec<f64> = (0..16000)
            .map(|n| (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / 16000.0).sin())
            .collect();
        let spec = stft(&sig, StftParams::default()).unwrap();
        let mid = spec.frame(spec.frames / 2);
        let peak = (0..mid.len())
            .max_by(|&a, &b| mid[a].norm().total_cmp(&mid[b].norm()))
            .unwrap();
        assert_eq!(peak, 32);
    }

    #[test]
    fn round_trip_four_seconds() {
        let sig = random_signal(64000, 2);
        let spec = stft(&sig, StftParams::default()).unwrap();
        assert_eq!(spec.freq_bins(), 256);
        let back = istft(&spec, sig.len()).unwrap();
        let err = sig.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "max abs error {err}");
    }

    #[test]
    fn zero_spectrogram_gives_zero_waveform() {
        let params = StftParams::default();
        let spec = Spectrogram::zeros(10, params);
        assert!(istft(&spec, 2000).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn impulse_round_trip() {
        let params = StftParams::new(32, 16);
        let mut sig = vec![0.0; 32];
        sig[13] = 1.0;
        let spec = stft(&sig, params).unwrap();
        let back = istft(&spec, 32).unwrap();
        for (a, b) in sig.iter().zip(&back) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn non_cola_pair_is_rejected() {
        let hann = StftParams {
            window: WindowKind::Hann,
            ..StftParams::new(64, 32)
        };
        let spec = stft(&random_signal(256, 3), hann).unwrap();
        assert!(matches!(istft(&spec, 256), Err(Error::Config(_))));
        let odd = StftParams::new(64, 24);
        let spec = stft(&random_signal(256, 3), odd).unwrap();
        assert!(matches!(istft(&spec, 256), Err(Error::Config(_))));
    }

    #[test]
    fn short_signal_is_dimension_error() {
        assert!(matches!(
            stft(&[0.0; 100], StftParams::default()),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(stft(&[0.0; 100], StftParams::new(15, 5)), Err(Error::Config(_))));
    }

    #[test]
    fn adjoint_identity() {
        // <forward(x), g>_real == <x, adjoint(g)>
        let params = StftParams::new(16, 8);
        let plan = StftPlan::new(params).unwrap();
        let x = random_signal(40, 4);
        let spec = plan.forward(&x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g: Vec<Complex64> = (0..spec.bins.len())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let lhs: f64 = spec.bins.iter().zip(&g).map(|(s, g)| s.re * g.re + s.im * g.im).sum();
        let adj = plan.adjoint(&g, x.len()).unwrap();
        let rhs: f64 = x.iter().zip(&adj).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn interior_cola_reconstructs_constants() {
        let plan = StftPlan::new(StftParams::default()).unwrap();
        assert!((plan.ola_gain().unwrap() - 1.0).abs() < 1e-12);
    }
}
