//! Forward pass of a reduced triple-path attention U-Net over complex
//! spectrograms.
//!
//! The input `[2 × F × T]` (real and imaginary planes) is lifted to `C`
//! channels, passed through stages of intra-frame and intra-frequency
//! attention with stride-2 frequency resampling between them, and projected
//! back to two planes. The middle stage adds global-temporal attention. All
//! residual branches and decoder merges are gated by zero-initialized
//! AdaLN-Zero projections, so a fresh network reduces to its two outer
//! convolutions. Forward only; nothing here is trained.

mod blocks;
mod layers;

pub use blocks::{shuffle, unshuffle, Axis, AxisAttention, FeatureMap, GlobalTemporal, SeqBlock};
pub use layers::{sinusoidal, Linear, SwiGlu};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use layers::silu;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TfNetConfig {
    pub channels: usize,
    pub freq_bins: usize,
    pub frames: usize,
    pub subbands: usize,
    pub suppressed: usize,
    pub heads: usize,
    pub embed_dim: usize,
    /// Repetitions per stage; odd length, the middle entry is the latent
    /// stage.
    pub block_layout: Vec<usize>,
    pub classes: usize,
}

impl Default for TfNetConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            freq_bins: 32,
            frames: 24,
            subbands: 4,
            suppressed: 4,
            heads: 2,
            embed_dim: 16,
            block_layout: vec![2, 4, 8, 4, 2],
            classes: 4,
        }
    }
}

impl TfNetConfig {
    /// Number of stride-2 downsamplings before the latent stage.
    pub fn depth(&self) -> usize {
        self.block_layout.len() / 2
    }

    pub fn latent_freq(&self) -> usize {
        self.freq_bins >> self.depth()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("freq_bins", self.freq_bins),
            ("frames", self.frames),
            ("subbands", self.subbands),
            ("suppressed", self.suppressed),
            ("heads", self.heads),
            ("embed_dim", self.embed_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("tfnet {name} must be >= 1")));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.embed_dim % 2 != 0 {
            return Err(Error::Config("embed_dim must be even".into()));
        }
        if self.block_layout.len() % 2 == 0 {
            return Err(Error::Config("block_layout needs an odd number of stages".into()));
        }
        if self.freq_bins % self.subbands != 0 {
            return Err(Error::Config(format!(
                "{} frequency bins do not split into {} subbands",
                self.freq_bins, self.subbands
            )));
        }
        let step = (1usize << self.depth()) * self.subbands;
        if self.freq_bins % step != 0 {
            return Err(Error::Config(format!(
                "{} frequency bins must be a multiple of {step} for {} downsamplings and {} subbands",
                self.freq_bins,
                self.depth(),
                self.subbands
            )));
        }
        Ok(())
    }
}

/// 3×3 convolution over (frequency, time) with zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    /// `[out][in][3][3]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Conv2d {
    fn random<R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> Self {
        let std = 1.0 / ((cin * 9) as f64).sqrt();
        Self {
            cin,
            cout,
            w: (0..cout * cin * 9).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect(),
            b: vec![0.0; cout],
        }
    }

    pub fn apply(&self, x: &FeatureMap) -> FeatureMap {
        let mut out = FeatureMap::zeros(self.cout, x.freq, x.frames);
        for co in 0..self.cout {
            for f in 0..x.freq {
                for t in 0..x.frames {
                    let mut acc = self.b[co];
                    for ci in 0..self.cin {
                        for df in 0..3 {
                            let Some(ff) = (f + df).checked_sub(1).filter(|v| *v < x.freq) else {
                                continue;
                            };
                            for dt in 0..3 {
                                let Some(tt) = (t + dt).checked_sub(1).filter(|v| *v < x.frames) else {
                                    continue;
                                };
                                acc += self.w[((co * self.cin + ci) * 3 + df) * 3 + dt] * x.get(ci, ff, tt);
                            }
                        }
                    }
                    out.set(co, f, t, acc);
                }
            }
        }
        out
    }
}

/// Stride-2 frequency resampling, kernel 2: `down` merges bin pairs,
/// `up` (transposed) splits each bin into two.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqResample {
    pub channels: usize,
    pub up: bool,
    /// `[out][in][2]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl FreqResample {
    fn random<R: Rng + ?Sized>(channels: usize, up: bool, rng: &mut R) -> Self {
        let fan_in = if up { channels } else { 2 * channels };
        let std = 1.0 / (fan_in as f64).sqrt();
        Self {
            channels,
            up,
            w: (0..channels * channels * 2).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect(),
            b: vec![0.0; channels],
        }
    }

    pub fn apply(&self, x: &FeatureMap) -> FeatureMap {
        let c = self.channels;
        let freq = if self.up { x.freq * 2 } else { x.freq / 2 };
        let mut out = FeatureMap::zeros(c, freq, x.frames);
        for co in 0..c {
            for f in 0..freq {
                for t in 0..x.frames {
                    let mut acc = self.b[co];
                    for ci in 0..c {
                        acc += if self.up {
                            self.w[(co * c + ci) * 2 + f % 2] * x.get(ci, f / 2, t)
                        } else {
                            (0..2).map(|j| self.w[(co * c + ci) * 2 + j] * x.get(ci, 2 * f + j, t)).sum::<f64>()
                        };
                    }
                    out.set(co, f, t, acc);
                }
            }
        }
        out
    }
}

/// One repetition within a stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub frame: AxisAttention,
    pub freq: AxisAttention,
    pub global: Option<GlobalTemporal>,
}

impl Unit {
    fn apply(&self, x: &FeatureMap, cond: &[f64]) -> Result<FeatureMap> {
        let h = self.frame.apply(x, cond)?;
        let h = self.freq.apply(&h, cond)?;
        match &self.global {
            Some(g) => g.apply(&h, cond),
            None => Ok(h),
        }
    }

    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.frame.block.tensors();
        t.extend(self.freq.block.tensors());
        if let Some(g) = &self.global {
            t.extend(g.tensors());
        }
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.frame.block.tensors_mut();
        t.extend(self.freq.block.tensors_mut());
        if let Some(g) = &mut self.global {
            t.extend(g.tensors_mut());
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfNet {
    config: TfNetConfig,
    time_mlp: [Linear; 2],
    /// `[classes][embed_dim]`.
    class_table: Vec<f64>,
    input: Conv2d,
    output: Conv2d,
    stages: Vec<Vec<Unit>>,
    downs: Vec<FreqResample>,
    ups: Vec<FreqResample>,
    /// Zero-initialized gates on the upsampled path of each decoder merge.
    up_gates: Vec<Linear>,
}

impl TfNet {
    pub fn new(config: TfNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, e, h) = (config.channels, config.embed_dim, config.heads);
        let depth = config.depth();
        let mut stages = Vec::with_capacity(config.block_layout.len());
        for (s, &reps) in config.block_layout.iter().enumerate() {
            let level = if s <= depth { s } else { 2 * depth - s };
            let freq = config.freq_bins >> level;
            let units = (0..reps)
                .map(|_| {
                    Ok(Unit {
                        frame: AxisAttention::new(Axis::Frequency, c, e, h, &mut rng),
                        freq: AxisAttention::new(Axis::Time, c, e, h, &mut rng),
                        global: if s == depth {
                            Some(GlobalTemporal::new(c, freq, config.subbands, config.suppressed, e, h, &mut rng)?)
                        } else {
                            None
                        },
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(units);
        }
        Ok(Self {
            time_mlp: [Linear::random(e, e, &mut rng), Linear::random(e, e, &mut rng)],
            class_table: (0..config.classes * e).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            input: Conv2d::random(2, c, &mut rng),
            output: Conv2d::random(c, 2, &mut rng),
            downs: (0..depth).map(|_| FreqResample::random(c, false, &mut rng)).collect(),
            ups: (0..depth).map(|_| FreqResample::random(c, true, &mut rng)).collect(),
            up_gates: (0..depth).map(|_| Linear::zeros(e, c)).collect(),
            stages,
            config,
        })
    }

    pub fn config(&self) -> &TfNetConfig {
        &self.config
    }

    /// Timestep embedding through the MLP plus the class vector.
    pub fn condition(&self, step: usize, class: Option<usize>) -> Result<Vec<f64>> {
        let e = self.config.embed_dim;
        let h: Vec<f64> = self.time_mlp[0]
            .apply(&sinusoidal(step as f64, e))
            .into_iter()
            .map(silu)
            .collect();
        let mut cond = self.time_mlp[1].apply(&h);
        if let Some(k) = class {
            if k >= self.config.classes {
                return Err(Error::UnknownLabel(format!("class {k} of {}", self.config.classes)));
            }
            for (v, c) in cond.iter_mut().zip(&self.class_table[k * e..(k + 1) * e]) {
                *v += c;
            }
        }
        Ok(cond)
    }

    /// Noise estimate for a `[2 × F × T]` spectrogram, same layout out.
    pub fn forward(&self, x: &[f64], step: usize, class: Option<usize>) -> Result<Vec<f64>> {
        let cfg = &self.config;
        check_len("tfnet input", 2 * cfg.freq_bins * cfg.frames, x.len())?;
        let cond = self.condition(step, class)?;
        let act: Vec<f64> = cond.iter().map(|v| silu(*v)).collect();
        let depth = cfg.depth();
        let mut h = self.input.apply(&FeatureMap::from_vec(2, cfg.freq_bins, cfg.frames, x.to_vec())?);
        let mut skips = Vec::with_capacity(depth);
        for s in 0..depth {
            h = self.run_stage(s, h, &cond)?;
            skips.push(h.clone());
            h = self.downs[s].apply(&h);
        }
        h = self.run_stage(depth, h, &cond)?;
        for s in depth + 1..cfg.block_layout.len() {
            let j = 2 * depth - s;
            let low = self.ups[j].apply(&h);
            let gate = self.up_gates[j].apply(&act);
            h = self.merge(&skips[j], &low, &gate);
            h = self.run_stage(s, h, &cond)?;
        }
        Ok(self.output.apply(&h).data)
    }

    fn run_stage(&self, s: usize, mut h: FeatureMap, cond: &[f64]) -> Result<FeatureMap> {
        for unit in &self.stages[s] {
            h = unit.apply(&h, cond)?;
        }
        Ok(h)
    }

    fn merge(&self, skip: &FeatureMap, low: &FeatureMap, gate: &[f64]) -> FeatureMap {
        let mut out = skip.clone();
        for c in 0..out.channels {
            for f in 0..out.freq {
                for t in 0..out.frames {
                    let i = out.idx(c, f, t);
                    out.data[i] += gate[c] * low.data[i];
                }
            }
        }
        out
    }

    /// The two outer convolutions alone.
    pub fn stem(&self, x: &[f64]) -> Result<Vec<f64>> {
        let cfg = &self.config;
        check_len("tfnet input", 2 * cfg.freq_bins * cfg.frames, x.len())?;
        let h = self.input.apply(&FeatureMap::from_vec(2, cfg.freq_bins, cfg.frames, x.to_vec())?);
        Ok(self.output.apply(&h).data)
    }

    pub fn stages(&self) -> &[Vec<Unit>] {
        &self.stages
    }

    fn tensors(&self) -> Vec<&[f64]> {
        let mut t: Vec<&[f64]> = self.time_mlp.iter().flat_map(|l| l.tensors()).collect();
        t.push(&self.class_table);
        for conv in [&self.input, &self.output] {
            t.push(&conv.w);
            t.push(&conv.b);
        }
        for r in self.downs.iter().chain(&self.ups) {
            t.push(&r.w);
            t.push(&r.b);
        }
        t.extend(self.up_gates.iter().flat_map(|l| l.tensors()));
        t.extend(self.stages.iter().flatten().flat_map(|u| u.tensors()));
        t
    }

    /// Every parameter tensor, in a fixed order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t: Vec<&mut [f64]> = self.time_mlp.iter_mut().flat_map(|l| l.tensors_mut()).collect();
        t.push(&mut self.class_table);
        for conv in [&mut self.input, &mut self.output] {
            t.push(&mut conv.w);
            t.push(&mut conv.b);
        }
        for r in self.downs.iter_mut().chain(self.ups.iter_mut()) {
            t.push(&mut r.w);
            t.push(&mut r.b);
        }
        t.extend(self.up_gates.iter_mut().flat_map(|l| l.tensors_mut()));
        t.extend(self.stages.iter_mut().flatten().flat_map(|u| u.tensors_mut()));
        t
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Parameters flattened in [`TfNet::tensors_mut`] order.
    pub fn params(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        check_len("tfnet parameters", self.param_count(), flat.len())?;
        let mut at = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[at..at + t.len()]);
            at += t.len();
        }
        Ok(())
    }
}
