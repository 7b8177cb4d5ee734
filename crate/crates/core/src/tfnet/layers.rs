use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub(crate) fn silu(v: f64) -> f64 {
    v / (1.0 + (-v).exp())
}

/// Dense layer `y = W x + b`, `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: DMatrix<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn random<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let std = 1.0 / (input as f64).sqrt();
        Self {
            w: DMatrix::from_fn(output, input, |_, _| std * rng.sample::<f64, _>(StandardNormal)),
            b: vec![0.0; output],
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: DMatrix::zeros(output, input),
            b: vec![0.0; output],
        }
    }

    pub fn input(&self) -> usize {
        self.w.ncols()
    }

    pub fn output(&self) -> usize {
        self.w.nrows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.output())
            .map(|o| self.b[o] + (0..self.input()).map(|i| self.w[(o, i)] * x[i]).sum::<f64>())
            .collect()
    }

    /// Row-wise application to a `tokens × in` matrix.
    pub fn apply_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * self.w.transpose();
        for mut row in y.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        y
    }

    pub(crate) fn tensors(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice(), &self.b]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_mut_slice(), &mut self.b]
    }
}

/// `(A x + a) * silu(B x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwiGlu {
    pub value: Linear,
    pub gate: Linear,
}

impl SwiGlu {
    pub fn random<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            value: Linear::random(input, output, rng),
            gate: Linear::random(input, output, rng),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let v = self.value.apply(x);
        let g = self.gate.apply(x);
        v.iter().zip(&g).map(|(v, g)| v * silu(*g)).collect()
    }

    pub fn apply_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let v = self.value.apply_rows(x);
        let g = self.gate.apply_rows(x);
        v.zip_map(&g, |v, g| v * silu(g))
    }

    pub(crate) fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.value.tensors();
        t.extend(self.gate.tensors());
        t
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.value.tensors_mut();
        t.extend(self.gate.tensors_mut());
        t
    }
}

pub(crate) const LN_EPS: f64 = 1e-5;

/// Per-row layer norm without affine terms, then `(1 + scale) * h + shift`.
pub(crate) fn norm_modulate(x: &DMatrix<f64>, shift: &[f64], scale: &[f64]) -> DMatrix<f64> {
    let mut out = x.clone();
    let w = x.ncols() as f64;
    for mut row in out.row_iter_mut() {
        let mean = row.sum() / w;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * (1.0 + scale[j]) + shift[j];
        }
    }
    out
}

/// Sinusoidal embedding of a scalar step: sines then cosines.
pub fn sinusoidal(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let freqs = (0..half).map(|i| (-(10_000f64).ln() * i as f64 / half as f64).exp());
    let (s, c): (Vec<f64>, Vec<f64>) = freqs.map(|f| ((t * f).sin(), (t * f).cos())).unzip();
    s.into_iter().chain(c).collect()
}
