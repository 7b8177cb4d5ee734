//! Small strided 1-D convolutional epsilon-predictor.
//!
//! ```text
//! u  = c_in(t) x
//! h1 = silu(conv_k(u)            + cond_1)      C x N
//! h2 = silu(conv_4/2(h1)         + cond_2)      C x N/2
//! h3 = silu(conv_m(h2)           + cond_3)      C x N/2
//! h4 = silu(convT_4/2(h3) + h1   + cond_4)      C x N
//! eps = g kappa(t) u + conv_k(h4)               1 x N
//! ```
//!
//! `cond_l` is a per-channel bias plus a learned projection of sinusoidal
//! step features plus, for conditional models, a learned class embedding.
//! `c_in = 1 / sqrt(abar s^2 + 1 - abar)` normalizes the input for data of
//! RMS `s`. With the learned gain `g = 1`, `kappa = sqrt(1 - abar) c_in`
//! makes the skip path the optimal predictor for white data of that RMS,
//! leaving the convolutions to learn the structured residual. `g` starts
//! at zero. The score is `-eps / sqrt(1 - abar)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::nn::{silu, silu_grad, Conv, ConvTranspose};
use super::{check_inputs, label_index, JacobianSupport, Linearized, ModelKind, ScoreModel};
use crate::error::{check_len, Error, Result};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub channels: usize,
    pub kernel: usize,
    pub mid_kernel: usize,
    pub time_features: usize,
    #[serde(default)]
    pub classes: Vec<String>,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            kernel: 9,
            mid_kernel: 5,
            time_features: 16,
            classes: Vec::new(),
        }
    }
}

impl ToyConfig {
    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.time_features == 0 || self.time_features % 2 != 0 {
            return Err(Error::Config("channels must be positive and time_features even".into()));
        }
        if self.kernel % 2 == 0 || self.mid_kernel % 2 == 0 {
            return Err(Error::Config("kernel sizes must be odd".into()));
        }
        Ok(())
    }
}

const LAYERS: usize = 4;

/// Offsets of each tensor inside the flat parameter buffer.
#[derive(Debug, Clone)]
struct Layout {
    conv_in: Conv,
    down: Conv,
    mid: Conv,
    up: ConvTranspose,
    conv_out: Conv,
    w_in: usize,
    w_down: usize,
    w_mid: usize,
    w_up: usize,
    w_out: usize,
    b_out: usize,
    skip: usize,
    /// Per hidden layer: bias `[C]`, step projection `[C][E]`, class table `[K][C]`.
    bias: [usize; LAYERS],
    time: [usize; LAYERS],
    class: [usize; LAYERS],
    total: usize,
}

impl Layout {
    fn new(cfg: &ToyConfig) -> Self {
        let c = cfg.channels;
        let conv_in = Conv { cin: 1, cout: c, k: cfg.kernel, stride: 1, pad: cfg.kernel / 2 };
        let down = Conv { cin: c, cout: c, k: 4, stride: 2, pad: 1 };
        let mid = Conv { cin: c, cout: c, k: cfg.mid_kernel, stride: 1, pad: cfg.mid_kernel / 2 };
        let up = ConvTranspose { cin: c, cout: c, k: 4, stride: 2, pad: 1 };
        let conv_out = Conv { cin: c, cout: 1, k: cfg.kernel, stride: 1, pad: cfg.kernel / 2 };
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let w_in = take(conv_in.weights());
        let w_down = take(down.weights());
        let w_mid = take(mid.weights());
        let w_up = take(up.weights());
        let w_out = take(conv_out.weights());
        let b_out = take(1);
        let skip = take(1);
        let mut bias = [0; LAYERS];
        let mut time = [0; LAYERS];
        let mut class = [0; LAYERS];
        for l in 0..LAYERS {
            bias[l] = take(c);
            time[l] = take(c * cfg.time_features);
            class[l] = take(c * cfg.classes.len());
        }
        Self {
            conv_in,
            down,
            mid,
            up,
            conv_out,
            w_in,
            w_down,
            w_mid,
            w_up,
            w_out,
            b_out,
            skip,
            bias,
            time,
            class,
            total: at,
        }
    }
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Tape {
    len: usize,
    step_features: Vec<f64>,
    class: Option<usize>,
    c_in: f64,
    kappa: f64,
    u: Vec<f64>,
    pre: [Vec<f64>; LAYERS],
    post: [Vec<f64>; LAYERS],
}

#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    config: ToyConfig,
    layout: Layout,
    params: Vec<f64>,
    schedule: NoiseSchedule,
    data_rms: f64,
}

impl ToyDenoiser {
    /// Randomly initialized network for data of RMS `data_rms`.
    pub fn new(config: ToyConfig, schedule: NoiseSchedule, data_rms: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        if !(data_rms >= 0.0) || !data_rms.is_finite() {
            return Err(Error::Config(format!("data_rms must be finite and >= 0, got {data_rms}")));
        }
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        let mut fill = |start: usize, n: usize, std: f64, rng: &mut ChaCha8Rng| {
            let d = Normal::new(0.0, std).expect("positive std");
            for p in &mut params[start..start + n] {
                *p = d.sample(rng);
            }
        };
        let c = config.channels as f64;
        let l = &layout;
        fill(l.w_in, l.conv_in.weights(), (1.0 / config.kernel as f64).sqrt(), &mut rng);
        fill(l.w_down, l.down.weights(), (1.0 / (4.0 * c)).sqrt(), &mut rng);
        fill(l.w_mid, l.mid.weights(), (1.0 / (config.mid_kernel as f64 * c)).sqrt(), &mut rng);
        fill(l.w_up, l.up.weights(), (1.0 / (2.0 * c)).sqrt(), &mut rng);
        fill(l.w_out, l.conv_out.weights(), 0.1 * (1.0 / (config.kernel as f64 * c)).sqrt(), &mut rng);
        for layer in 0..LAYERS {
            fill(l.time[layer], config.channels * config.time_features, 0.1, &mut rng);
            fill(l.class[layer], config.channels * config.classes.len(), 0.1, &mut rng);
        }
        Ok(Self {
            config,
            layout,
            params,
            schedule,
            data_rms,
        })
    }

    pub(crate) fn from_parts(
        config: ToyConfig,
        schedule: NoiseSchedule,
        data_rms: f64,
        params: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        check_len("toy denoiser parameters", layout.total, params.len())?;
        Ok(Self {
            config,
            layout,
            params,
            schedule,
            data_rms,
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn data_rms(&self) -> f64 {
        self.data_rms
    }

    pub(crate) fn class_index(&self, label: Option<&str>) -> Option<usize> {
        label_index(&self.config.classes, label)
    }

    fn step_features(&self, step: usize) -> Vec<f64> {
        let half = self.config.time_features / 2;
        let t = step as f64;
        let mut out = Vec::with_capacity(2 * half);
        for j in 0..half {
            let freq = (-(1000f64.ln()) * j as f64 / half as f64).exp();
            out.push((t * freq).sin());
            out.push((t * freq).cos());
        }
        out
    }

    fn scalings(&self, step: usize) -> (f64, f64) {
        let abar = self.schedule.alpha_bar(step);
        let c_in = 1.0 / (abar * self.data_rms * self.data_rms + 1.0 - abar).sqrt();
        (c_in, (1.0 - abar).sqrt() * c_in)
    }

    fn layer_bias(&self, params: &[f64], layer: usize, feats: &[f64], class: Option<usize>) -> Vec<f64> {
        let c = self.config.channels;
        let e = self.config.time_features;
        let l = &self.layout;
        (0..c)
            .map(|ch| {
                let t0 = l.time[layer] + ch * e;
                let time: f64 = params[t0..t0 + e].iter().zip(feats).map(|(w, f)| w * f).sum();
                let cls = class.map_or(0.0, |k| params[l.class[layer] + k * c + ch]);
                params[l.bias[layer] + ch] + time + cls
            })
            .collect()
    }

    /// Noise prediction for `x` (length must be even).
    pub(crate) fn forward(&self, params: &[f64], x: &[f64], step: usize, class: Option<usize>) -> (Vec<f64>, Tape) {
        let n = x.len();
        let half = n / 2;
        let c = self.config.channels;
        let l = &self.layout;
        let feats = self.step_features(step);
        let (c_in, kappa) = self.scalings(step);
        let u: Vec<f64> = x.iter().map(|v| v * c_in).collect();

        let add_bias_act = |pre: &mut Vec<f64>, bias: &[f64], len: usize| -> Vec<f64> {
            for ch in 0..c {
                for v in &mut pre[ch * len..(ch + 1) * len] {
                    *v += bias[ch];
                }
            }
            pre.iter().map(|v| silu(*v)).collect()
        };

        let mut a1 = vec![0.0; c * n];
        l.conv_in.forward(&params[l.w_in..], &u, n, &mut a1);
        let h1 = add_bias_act(&mut a1, &self.layer_bias(params, 0, &feats, class), n);

        let mut a2 = vec![0.0; c * half];
        l.down.forward(&params[l.w_down..], &h1, n, &mut a2);
        let h2 = add_bias_act(&mut a2, &self.layer_bias(params, 1, &feats, class), half);

        let mut a3 = vec![0.0; c * half];
        l.mid.forward(&params[l.w_mid..], &h2, half, &mut a3);
        let h3 = add_bias_act(&mut a3, &self.layer_bias(params, 2, &feats, class), half);

        let mut a4 = h1.clone();
        l.up.forward(&params[l.w_up..], &h3, half, &mut a4);
        let h4 = add_bias_act(&mut a4, &self.layer_bias(params, 3, &feats, class), n);

        let mut out = vec![params[l.b_out]; n];
        l.conv_out.forward(&params[l.w_out..], &h4, n, &mut out);
        let gain = kappa * params[l.skip];
        for (o, uv) in out.iter_mut().zip(&u) {
            *o += gain * uv;
        }
        let tape = Tape {
            len: n,
            step_features: feats,
            class,
            c_in,
            kappa,
            u,
            pre: [a1, a2, a3, a4],
            post: [h1, h2, h3, h4],
        };
        (out, tape)
    }

    /// Pulls `g = dL/d eps_hat` back to `dL/dx`, accumulating parameter
    /// gradients into `grad_params` when given.
    pub(crate) fn backward(&self, params: &[f64], tape: &Tape, g: &[f64], mut grad_params: Option<&mut [f64]>) -> Vec<f64> {
        let n = tape.len;
        let half = n / 2;
        let c = self.config.channels;
        let e = self.config.time_features;
        let l = &self.layout;

        // Bias, step-projection and class-embedding gradients for one layer;
        // returns the pre-activation gradient.
        let layer_grads = |layer: usize, g_post: Vec<f64>, len: usize, gp: &mut Option<&mut [f64]>| -> Vec<f64> {
            let g_pre: Vec<f64> = g_post
                .iter()
                .zip(&tape.pre[layer])
                .map(|(gv, a)| gv * silu_grad(*a))
                .collect();
            if let Some(gp) = gp.as_deref_mut() {
                for ch in 0..c {
                    let s: f64 = g_pre[ch * len..(ch + 1) * len].iter().sum();
                    gp[l.bias[layer] + ch] += s;
                    for (k, f) in tape.step_features.iter().enumerate() {
                        gp[l.time[layer] + ch * e + k] += s * f;
                    }
                    if let Some(cls) = tape.class {
                        gp[l.class[layer] + cls * c + ch] += s;
                    }
                }
            }
            g_pre
        };

        if let Some(gp) = grad_params.as_deref_mut() {
            gp[l.b_out] += g.iter().sum::<f64>();
            gp[l.skip] += tape.kappa * g.iter().zip(&tape.u).map(|(a, b)| a * b).sum::<f64>();
        }
        let gain = tape.kappa * params[l.skip];
        let mut g_u: Vec<f64> = g.iter().map(|v| v * gain).collect();

        let mut g_h4 = vec![0.0; c * n];
        l.conv_out.backward(
            &params[l.w_out..],
            &tape.post[3],
            n,
            g,
            Some(&mut g_h4),
            grad_params.as_deref_mut().map(|gp| &mut gp[l.w_out..l.b_out]),
        );
        let g_a4 = layer_grads(3, g_h4, n, &mut grad_params);

        let mut g_h3 = vec![0.0; c * half];
        l.up.backward(
            &params[l.w_up..],
            &tape.post[2],
            half,
            &g_a4,
            Some(&mut g_h3),
            grad_params.as_deref_mut().map(|gp| &mut gp[l.w_up..l.w_out]),
        );
        let g_a3 = layer_grads(2, g_h3, half, &mut grad_params);

        let mut g_h2 = vec![0.0; c * half];
        l.mid.backward(
            &params[l.w_mid..],
            &tape.post[1],
            half,
            &g_a3,
            Some(&mut g_h2),
            grad_params.as_deref_mut().map(|gp| &mut gp[l.w_mid..l.w_up]),
        );
        let g_a2 = layer_grads(1, g_h2, half, &mut grad_params);

        // Skip connection feeds h1 straight into layer 4's pre-activation.
        let mut g_h1 = g_a4;
        l.down.backward(
            &params[l.w_down..],
            &tape.post[0],
            n,
            &g_a2,
            Some(&mut g_h1),
            grad_params.as_deref_mut().map(|gp| &mut gp[l.w_down..l.w_mid]),
        );
        let g_a1 = layer_grads(0, g_h1, n, &mut grad_params);

        l.conv_in.backward(
            &params[l.w_in..],
            &tape.u,
            n,
            &g_a1,
            Some(&mut g_u),
            grad_params.as_deref_mut().map(|gp| &mut gp[l.w_in..l.w_down]),
        );
        g_u.iter().map(|v| v * tape.c_in).collect()
    }

    /// Predicted noise `eps_hat(x_t, t, c)`.
    pub fn predict_noise(&self, x: &[f64], step: usize, label: Option<&str>) -> Result<Vec<f64>> {
        self.check(x, step, label)?;
        Ok(self.forward(&self.params, x, step, self.class_index(label)).0)
    }

    fn check(&self, x: &[f64], step: usize, label: Option<&str>) -> Result<()> {
        check_inputs(self, x, step, label)?;
        if x.len() < 2 || x.len() % 2 != 0 {
            return Err(Error::Dimension {
                context: "toy denoiser input length must be even",
                expected: x.len() + x.len() % 2,
                actual: x.len(),
            });
        }
        Ok(())
    }
}

struct ToyAt<'a> {
    model: &'a ToyDenoiser,
    tape: Tape,
    inv_std: f64,
    score: Vec<f64>,
}

impl Linearized for ToyAt<'_> {
    fn score(&self) -> &[f64] {
        &self.score
    }

    fn vjp(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("vjp direction", self.score.len(), v.len())?;
        let g = self.model.backward(&self.model.params, &self.tape, v, None);
        Ok(g.into_iter().map(|x| -x * self.inv_std).collect())
    }
}

impl ScoreModel for ToyDenoiser {
    fn kind(&self) -> ModelKind {
        ModelKind::ToyDenoiser
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn dim(&self) -> Option<usize> {
        None
    }

    fn class_vocab(&self) -> Option<&[String]> {
        if self.config.classes.is_empty() {
            None
        } else {
            Some(&self.config.classes)
        }
    }

    fn jacobian_support(&self) -> JacobianSupport {
        JacobianSupport::Backprop
    }

    fn linearize<'a>(&'a self, x: &[f64], step: usize, label: Option<&str>) -> Result<Box<dyn Linearized + 'a>> {
        self.check(x, step, label)?;
        let (eps, tape) = self.forward(&self.params, x, step, self.class_index(label));
        let inv_std = 1.0 / (1.0 - self.schedule.alpha_bar(step)).sqrt();
        let score = eps.iter().map(|e| -e * inv_std).collect();
        Ok(Box::new(ToyAt {
            model: self,
            tape,
            inv_std,
            score,
        }))
    }
}
