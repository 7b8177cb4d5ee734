//! Score models `s(x_t, t, c) ~ grad log p_t(x_t)` and Tweedie denoising.
//!
//! Every model owns the [`NoiseSchedule`] it is defined against. Analytic
//! priors expose exact Jacobian-vector products; the toy denoiser exposes
//! reverse-mode products through its hand-written backward pass.

mod checkpoint;
mod gaussian;
mod gmm;
mod nn;
mod toy;
mod train;

use std::fmt;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader, TrainingRecord};
pub use gaussian::{Covariance, GaussianPrior};
pub use gmm::GmmPrior;
pub use toy::{ToyConfig, ToyDenoiser};
pub use train::{denoising_loss, train_denoiser, Example, TrainConfig, TrainReport};

use crate::error::{check_finite, check_len, Error, Result};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    AnalyticGaussian,
    AnalyticGmm,
    ToyDenoiser,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::AnalyticGaussian => "analytic-gaussian",
            ModelKind::AnalyticGmm => "analytic-gmm",
            ModelKind::ToyDenoiser => "toy-denoiser",
        })
    }
}

/// How a model can differentiate its score with respect to the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianSupport {
    /// Closed-form Jacobian products.
    Exact,
    /// Reverse-mode products through the network.
    Backprop,
    None,
}

/// A score evaluated at one point, able to pull vectors back through the
/// score's Jacobian at that point.
pub trait Linearized {
    fn score(&self) -> &[f64];

    /// Returns `J^T v` where `J = d score / d x_t`.
    fn vjp(&self, v: &[f64]) -> Result<Vec<f64>>;
}

pub trait ScoreModel: Send + Sync {
    fn kind(&self) -> ModelKind;

    fn schedule(&self) -> &NoiseSchedule;

    /// Fixed state dimensionality, or `None` for length-agnostic models.
    fn dim(&self) -> Option<usize>;

    /// Class labels accepted by a conditional model.
    fn class_vocab(&self) -> Option<&[String]> {
        None
    }

    fn jacobian_support(&self) -> JacobianSupport;

    fn score(&self, x: &[f64], step: usize, label: Option<&str>) -> Result<Vec<f64>> {
        Ok(self.linearize(x, step, label)?.score().to_vec())
    }

    /// Evaluates the score and keeps whatever is needed for `vjp`.
    fn linearize<'a>(
        &'a self,
        x: &[f64],
        step: usize,
        label: Option<&str>,
    ) -> Result<Box<dyn Linearized + 'a>>;
}

/// Shared precondition checks for score evaluation.
pub(crate) fn check_inputs(
    model: &dyn ScoreModel,
    x: &[f64],
    step: usize,
    label: Option<&str>,
) -> Result<()> {
    if let Some(d) = model.dim() {
        check_len("score input", d, x.len())?;
    }
    check_finite("score input", x)?;
    model.schedule().check_step(step)?;
    if let Some(c) = label {
        match model.class_vocab() {
            Some(vocab) if vocab.iter().any(|v| v == c) => {}
            _ => return Err(Error::UnknownLabel(c.to_string())),
        }
    }
    Ok(())
}

/// Index of `label` in the model vocabulary, after validation.
pub(crate) fn label_index(vocab: &[String], label: Option<&str>) -> Option<usize> {
    label.and_then(|c| vocab.iter().position(|v| v == c))
}

/// Tweedie estimate `(x_t + (1 - abar) s) / sqrt(abar)` from a score.
pub fn tweedie_from_score(x: &[f64], score: &[f64], step: usize, schedule: &NoiseSchedule) -> Vec<f64> {
    let abar = schedule.alpha_bar(step);
    let inv = 1.0 / abar.sqrt();
    x.iter()
        .zip(score)
        .map(|(x, s)| (x + (1.0 - abar) * s) * inv)
        .collect()
}

pub fn tweedie_x0(model: &dyn ScoreModel, x: &[f64], step: usize, label: Option<&str>) -> Result<Vec<f64>> {
    let s = model.score(x, step, label)?;
    Ok(tweedie_from_score(x, &s, step, model.schedule()))
}

/// `(d score / d x_t)^T v` at `x`. Fails with a capability error for models
/// without Jacobian support.
pub fn score_jvp(
    model: &dyn ScoreModel,
    x: &[f64],
    step: usize,
    v: &[f64],
    label: Option<&str>,
) -> Result<Vec<f64>> {
    if model.jacobian_support() == JacobianSupport::None {
        return Err(Error::Capability(format!(
            "{} does not provide Jacobian products",
            model.kind()
        )));
    }
    check_len("score_jvp direction", x.len(), v.len())?;
    model.linearize(x, step, label)?.vjp(v)
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// Central finite-difference `J^T v` via `grad_x <score(x), v>`.
    pub fn fd_vjp(model: &dyn ScoreModel, x: &[f64], step: usize, v: &[f64], label: Option<&str>, h: f64) -> Vec<f64> {
        let f = |p: &[f64]| -> f64 {
            let s = model.score(p, step, label).unwrap();
            s.iter().zip(v).map(|(a, b)| a * b).sum()
        };
        let mut p = x.to_vec();
        (0..x.len())
            .map(|i| {
                p[i] = x[i] + h;
                let up = f(&p);
                p[i] = x[i] - h;
                let down = f(&p);
                p[i] = x[i];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        diff / scale.max(1e-300)
    }
}
