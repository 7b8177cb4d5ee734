use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::toy::{ToyConfig, ToyDenoiser};
use super::ScoreModel;
use crate::error::{check_finite, Error, Result};
use crate::schedule::{noise_to_level, NoiseSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ToyConfig,
    pub steps: usize,
    pub batch: usize,
    /// Training window length; `None` uses whole signals.
    pub crop: Option<usize>,
    pub learning_rate: f64,
    /// Size of the fixed evaluation batch used for reported losses.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ToyConfig::default(),
            steps: 2000,
            batch: 16,
            crop: Some(256),
            learning_rate: 2e-3,
            eval_batch: 64,
        }
    }
}

/// One labelled clean training signal.
#[derive(Debug, Clone)]
pub struct Example {
    pub signal: Vec<f64>,
    pub label: Option<String>,
}

impl From<Vec<f64>> for Example {
    fn from(signal: Vec<f64>) -> Self {
        Self { signal, label: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mini-batch loss at every step.
    pub losses: Vec<f64>,
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
}

/// A noised training example: `(x_t, step, eps, class)`.
struct Draw {
    x: Vec<f64>,
    step: usize,
    eps: Vec<f64>,
    class: Option<usize>,
}

fn draw(data: &[Example], model: &ToyDenoiser, crop: usize, rng: &mut ChaCha8Rng) -> Draw {
    let ex = &data[rng.random_range(0..data.len())];
    let start = rng.random_range(0..=ex.signal.len() - crop);
    let x0 = &ex.signal[start..start + crop];
    let step = rng.random_range(0..model.schedule().len());
    let eps: Vec<f64> = (0..crop).map(|_| rng.sample(StandardNormal)).collect();
    let x = noise_to_level(x0, step, &eps, model.schedule()).expect("window and noise lengths match");
    Draw {
        x,
        step,
        eps,
        class: model.class_index(ex.label.as_deref()),
    }
}

fn check_dataset(data: &[Example], cfg: &TrainConfig) -> Result<usize> {
    if data.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let len = data[0].signal.len();
    if data.iter().any(|e| e.signal.len() != len) {
        return Err(Error::Config("all training signals must have the same length".into()));
    }
    for e in data {
        check_finite("training signal", &e.signal)?;
    }
    let crop = cfg.crop.unwrap_or(len).min(len);
    if crop < 2 || crop % 2 != 0 {
        return Err(Error::Config(format!("training window must be even and >= 2, got {crop}")));
    }
    Ok(crop)
}

/// Mean squared noise-prediction error over a fixed batch drawn from `seed`.
pub fn denoising_loss(model: &ToyDenoiser, data: &[Example], cfg: &TrainConfig, seed: u64) -> Result<f64> {
    let crop = check_dataset(data, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut total = 0.0;
    for _ in 0..cfg.eval_batch.max(1) {
        let d = draw(data, model, crop, &mut rng);
        let (out, _) = model.forward(model.params(), &d.x, d.step, d.class);
        total += out.iter().zip(&d.eps).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / crop as f64;
    }
    Ok(total / cfg.eval_batch.max(1) as f64)
}

/// Trains a noise predictor with Adam on random windows and noise levels.
pub fn train_denoiser(
    data: &[Example],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ToyDenoiser, TrainReport)> {
    let crop = check_dataset(data, cfg)?;
    if cfg.batch == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config("batch and learning_rate must be positive".into()));
    }
    let mut model_cfg = cfg.model.clone();
    for e in data {
        if let Some(l) = &e.label {
            if !model_cfg.classes.contains(l) {
                model_cfg.classes.push(l.clone());
            }
        }
    }
    let count: usize = data.iter().map(|e| e.signal.len()).sum();
    let energy: f64 = data.iter().flat_map(|e| &e.signal).map(|v| v * v).sum();
    let data_rms = (energy / count as f64).sqrt();
    let mut model = ToyDenoiser::new(model_cfg, schedule.clone(), data_rms, seed)?;

    let initial_eval_loss = denoising_loss(&model, data, cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let np = model.param_count();
    let (b1, b2, eps_adam) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; np];
    let mut v = vec![0.0; np];
    let mut grad = vec![0.0; np];
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let scale = 1.0 / (cfg.batch * crop) as f64;
        for _ in 0..cfg.batch {
            let d = draw(data, &model, crop, &mut rng);
            let (out, tape) = model.forward(model.params(), &d.x, d.step, d.class);
            let resid: Vec<f64> = out.iter().zip(&d.eps).map(|(a, b)| a - b).collect();
            loss += resid.iter().map(|r| r * r).sum::<f64>() * scale;
            let g: Vec<f64> = resid.iter().map(|r| 2.0 * r * scale).collect();
            model.backward(model.params(), &tape, &g, Some(&mut grad));
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training { step, loss });
        }
        losses.push(loss);
        let t = (step + 1) as i32;
        let c1 = 1.0 - f64::powi(b1, t);
        let c2 = 1.0 - f64::powi(b2, t);
        for (((p, g), mi), vi) in model.params_mut().iter_mut().zip(&grad).zip(&mut m).zip(&mut v) {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            *p -= cfg.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + eps_adam);
        }
    }
    let final_eval_loss = denoising_loss(&model, data, cfg, seed)?;
    if !final_eval_loss.is_finite() {
        return Err(Error::Training {
            step: cfg.steps,
            loss: final_eval_loss,
        });
    }
    Ok((
        model,
        TrainReport {
            losses,
            initial_eval_loss,
            final_eval_loss,
        },
    ))
}
