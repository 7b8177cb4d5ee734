use nalgebra::DMatrix;
use rand::Rng;

use super::layers::{norm_modulate, silu, Linear, SwiGlu};
use crate::error::{check_len, Error, Result};

/// Real feature map `[channels × freq × frames]`, frames fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub freq: usize,
    pub frames: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, freq: usize, frames: usize) -> Self {
        Self {
            channels,
            freq,
            frames,
            data: vec![0.0; channels * freq * frames],
        }
    }

    pub fn from_vec(channels: usize, freq: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        check_len("feature map", channels * freq * frames, data.len())?;
        Ok(Self {
            channels,
            freq,
            frames,
            data,
        })
    }

    #[inline]
    pub fn idx(&self, c: usize, f: usize, t: usize) -> usize {
        (c * self.freq + f) * self.frames + t
    }

    pub fn get(&self, c: usize, f: usize, t: usize) -> f64 {
        self.data[self.idx(c, f, t)]
    }

    pub fn set(&mut self, c: usize, f: usize, t: usize, v: f64) {
        let i = self.idx(c, f, t);
        self.data[i] = v;
    }

    fn check(&self, channels: usize, freq: usize, frames: usize) -> Result<()> {
        check_len("feature map channels", channels, self.channels)?;
        check_len("feature map frequency bins", freq, self.freq)?;
        check_len("feature map frames", frames, self.frames)
    }
}

/// Frequency unshuffle: `out[c·n + j, f, t] = x[c, f·n + j, t]`.
pub fn unshuffle(x: &FeatureMap, n: usize) -> Result<FeatureMap> {
    if n == 0 || x.freq % n != 0 {
        return Err(Error::Config(format!("{} frequency bins do not split into {n} subbands", x.freq)));
    }
    let mut out = FeatureMap::zeros(x.channels * n, x.freq / n, x.frames);
    for c in 0..x.channels {
        for f in 0..x.freq {
            for t in 0..x.frames {
                out.set(c * n + f % n, f / n, t, x.get(c, f, t));
            }
        }
    }
    Ok(out)
}

/// Inverse of [`unshuffle`].
pub fn shuffle(x: &FeatureMap, n: usize) -> Result<FeatureMap> {
    if n == 0 || x.channels % n != 0 {
        return Err(Error::Config(format!("{} channels do not merge {n} subbands", x.channels)));
    }
    let mut out = FeatureMap::zeros(x.channels / n, x.freq * n, x.frames);
    for c in 0..out.channels {
        for f in 0..out.freq {
            for t in 0..x.frames {
                out.set(c, f, t, x.get(c * n + f % n, f / n, t));
            }
        }
    }
    Ok(out)
}

/// Conditioning-independent part of a block's AdaLN-Zero modulation:
/// shift, scale and gate for the attention and feed-forward branches.
struct Modulation {
    shift1: Vec<f64>,
    scale1: Vec<f64>,
    gate1: Vec<f64>,
    shift2: Vec<f64>,
    scale2: Vec<f64>,
    gate2: Vec<f64>,
}

/// Pre-norm transformer block over a token sequence: SwiGLU input
/// projection, multi-head self-attention, SwiGLU feed-forward, both
/// branches gated by AdaLN-Zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBlock {
    pub width: usize,
    pub heads: usize,
    pub ada: Linear,
    pub pre: SwiGlu,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ffn: SwiGlu,
    pub ffn_out: Linear,
}

impl SeqBlock {
    pub fn new<R: Rng + ?Sized>(width: usize, embed: usize, heads: usize, cond: usize, rng: &mut R) -> Self {
        Self {
            width,
            heads,
            ada: Linear::zeros(cond, 6 * width),
            pre: SwiGlu::random(width, embed, rng),
            q: Linear::random(embed, embed, rng),
            k: Linear::random(embed, embed, rng),
            v: Linear::random(embed, embed, rng),
            o: Linear::random(embed, width, rng),
            ffn: SwiGlu::random(width, embed, rng),
            ffn_out: Linear::random(embed, width, rng),
        }
    }

    fn modulation(&self, cond: &[f64]) -> Modulation {
        let act: Vec<f64> = cond.iter().map(|v| silu(*v)).collect();
        let m = self.ada.apply(&act);
        let w = self.width;
        let part = |i: usize| m[i * w..(i + 1) * w].to_vec();
        Modulation {
            shift1: part(0),
            scale1: part(1),
            gate1: part(2),
            shift2: part(3),
            scale2: part(4),
            gate2: part(5),
        }
    }

    fn attention(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let q = self.q.apply_rows(u);
        let k = self.k.apply_rows(u);
        let v = self.v.apply_rows(u);
        let e = q.ncols();
        let dh = e / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = DMatrix::zeros(u.nrows(), e);
        for h in 0..self.heads {
            let qh = q.columns(h * dh, dh);
            let kh = k.columns(h * dh, dh);
            let vh = v.columns(h * dh, dh);
            let mut s = (qh * kh.transpose()) * scale;
            for mut row in s.row_iter_mut() {
                let max = row.max();
                row.apply(|x| *x = (*x - max).exp());
                let z = row.sum();
                row /= z;
            }
            out.columns_mut(h * dh, dh).copy_from(&(s * vh));
        }
        out
    }

    fn apply_with(&self, x: &DMatrix<f64>, m: &Modulation) -> DMatrix<f64> {
        let h = norm_modulate(x, &m.shift1, &m.scale1);
        let a = self.o.apply_rows(&self.attention(&self.pre.apply_rows(&h)));
        let mut x1 = x.clone();
        add_gated(&mut x1, &a, &m.gate1);
        let h2 = norm_modulate(&x1, &m.shift2, &m.scale2);
        let f = self.ffn_out.apply_rows(&self.ffn.apply_rows(&h2));
        add_gated(&mut x1, &f, &m.gate2);
        x1
    }

    /// Applies the block to a `tokens × width` matrix.
    pub fn apply(&self, x: &DMatrix<f64>, cond: &[f64]) -> Result<DMatrix<f64>> {
        check_len("sequence block width", self.width, x.ncols())?;
        check_len("conditioning", self.ada.input(), cond.len())?;
        Ok(self.apply_with(x, &self.modulation(cond)))
    }

    pub(crate) fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.ada.tensors();
        t.extend(self.pre.tensors());
        for l in [&self.q, &self.k, &self.v, &self.o] {
            t.extend(l.tensors());
        }
        t.extend(self.ffn.tensors());
        t.extend(self.ffn_out.tensors());
        t
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.ada.tensors_mut();
        t.extend(self.pre.tensors_mut());
        for l in [&mut self.q, &mut self.k, &mut self.v, &mut self.o] {
            t.extend(l.tensors_mut());
        }
        t.extend(self.ffn.tensors_mut());
        t.extend(self.ffn_out.tensors_mut());
        t
    }
}

fn add_gated(x: &mut DMatrix<f64>, branch: &DMatrix<f64>, gate: &[f64]) {
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            x[(i, j)] += gate[j] * branch[(i, j)];
        }
    }
}

/// Which axis a [`AxisAttention`] block attends along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Intra-frame: tokens are the frequency bins of one frame.
    Frequency,
    /// Intra-frequency: tokens are the frames of one bin.
    Time,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisAttention {
    pub axis: Axis,
    pub block: SeqBlock,
}

impl AxisAttention {
    pub fn new<R: Rng + ?Sized>(axis: Axis, channels: usize, embed: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            axis,
            block: SeqBlock::new(channels, embed, heads, embed, rng),
        }
    }

    pub fn apply(&self, x: &FeatureMap, cond: &[f64]) -> Result<FeatureMap> {
        x.check(self.block.width, x.freq, x.frames)?;
        check_len("conditioning", self.block.ada.input(), cond.len())?;
        let m = self.block.modulation(cond);
        let (outer, len) = match self.axis {
            Axis::Frequency => (x.frames, x.freq),
            Axis::Time => (x.freq, x.frames),
        };
        let pos = |o: usize, i: usize| match self.axis {
            Axis::Frequency => (i, o),
            Axis::Time => (o, i),
        };
        let mut out = x.clone();
        for o in 0..outer {
            let seq = DMatrix::from_fn(len, x.channels, |i, c| {
                let (f, t) = pos(o, i);
                x.get(c, f, t)
            });
            let y = self.block.apply_with(&seq, &m);
            for i in 0..len {
                let (f, t) = pos(o, i);
                for c in 0..x.channels {
                    out.set(c, f, t, y[(i, c)]);
                }
            }
        }
        Ok(out)
    }
}

/// Long-range temporal attention on a subband-compressed view of the whole
/// spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalTemporal {
    pub channels: usize,
    pub subbands: usize,
    pub suppressed: usize,
    pub proj_in: SwiGlu,
    pub block: SeqBlock,
    pub proj_out: Linear,
    pub gate: Linear,
}

impl GlobalTemporal {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        channels: usize,
        freq: usize,
        subbands: usize,
        suppressed: usize,
        embed: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if subbands == 0 || freq % subbands != 0 {
            return Err(Error::Config(format!("{freq} frequency bins do not split into {subbands} subbands")));
        }
        let wide = channels * subbands;
        let width = suppressed * freq / subbands;
        Ok(Self {
            channels,
            subbands,
            suppressed,
            proj_in: SwiGlu::random(wide, suppressed, rng),
            block: SeqBlock::new(width, embed, heads, embed, rng),
            proj_out: Linear::random(suppressed, wide, rng),
            gate: Linear::zeros(embed, channels),
        })
    }

    pub fn apply(&self, x: &FeatureMap, cond: &[f64]) -> Result<FeatureMap> {
        x.check(self.channels, x.freq, x.frames)?;
        check_len("conditioning", self.gate.input(), cond.len())?;
        let z = unshuffle(x, self.subbands)?;
        let sub = z.freq;
        check_len("global-temporal token width", self.block.width, self.suppressed * sub)?;
        let column = |m: &FeatureMap, f: usize, t: usize| -> Vec<f64> { (0..m.channels).map(|c| m.get(c, f, t)).collect() };

        let mut tokens = DMatrix::zeros(x.frames, self.suppressed * sub);
        for f in 0..sub {
            for t in 0..x.frames {
                for (c, v) in self.proj_in.apply(&column(&z, f, t)).into_iter().enumerate() {
                    tokens[(t, c * sub + f)] = v;
                }
            }
        }
        let tokens = self.block.apply(&tokens, cond)?;
        let mut back = FeatureMap::zeros(z.channels, sub, x.frames);
        for f in 0..sub {
            for t in 0..x.frames {
                let q: Vec<f64> = (0..self.suppressed).map(|c| tokens[(t, c * sub + f)]).collect();
                for (c, v) in self.proj_out.apply(&q).into_iter().enumerate() {
                    back.set(c, f, t, v);
                }
            }
        }
        let restored = shuffle(&back, self.subbands)?;
        let act: Vec<f64> = cond.iter().map(|v| silu(*v)).collect();
        let g = self.gate.apply(&act);
        let mut out = x.clone();
        for c in 0..x.channels {
            for f in 0..x.freq {
                for t in 0..x.frames {
                    let i = out.idx(c, f, t);
                    out.data[i] += g[c] * restored.data[i];
                }
            }
        }
        Ok(out)
    }

    pub(crate) fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.proj_in.tensors();
        t.extend(self.block.tensors());
        t.extend(self.proj_out.tensors());
        t.extend(self.gate.tensors());
        t
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.proj_in.tensors_mut();
        t.extend(self.block.tensors_mut());
        t.extend(self.proj_out.tensors_mut());
        t.extend(self.gate.tensors_mut());
        t
    }
}
