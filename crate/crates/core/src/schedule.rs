//! Discrete DDPM noise schedule.
//!
//! Step indices are 0-based everywhere in this crate: index `i` holds the
//! quantities of diffusion step `i + 1` in the usual 1-based notation, so
//! `alpha_bar(0) = 1 - beta(0)` and the final reverse step is index 0.
//! `sigma(0)` is 0, which makes the last reverse step deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Parameters of a linear beta schedule, as read from run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: 200,
            beta_min: 1e-4,
            beta_max: 2e-2,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_min, self.beta_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear interpolation of `beta` from `beta_min` to `beta_max` over
    /// exactly `steps` points, endpoints included.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Config(format!("steps must be >= 2, got {steps}")));
        }
        if !(beta_min > 0.0) {
            return Err(Error::Config(format!("beta_min must be > 0, got {beta_min}")));
        }
        if !(beta_max < 1.0) {
            return Err(Error::Config(format!("beta_max must be < 1, got {beta_max}")));
        }
        if beta_min > beta_max {
            return Err(Error::Config(format!(
                "beta_min ({beta_min}) must not exceed beta_max ({beta_max})"
            )));
        }
        let span = (steps - 1) as f64;
        let beta = (0..steps)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / span)
            .collect();
        Self::from_betas(beta)
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.len() < 2 {
            return Err(Error::Config(format!("schedule needs >= 2 steps, got {}", beta.len())));
        }
        if let Some((i, b)) = beta.iter().enumerate().find(|(_, b)| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Config(format!("beta[{i}] = {b} outside (0, 1)")));
        }
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        let mut sigma = vec![0.0; beta.len()];
        for i in 1..beta.len() {
            sigma[i] = (beta[i] * (1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i])).sqrt();
        }
        Ok(Self {
            beta,
            alpha_bar,
            sigma,
        })
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn beta(&self, i: usize) -> f64 {
        self.beta[i]
    }

    pub fn alpha(&self, i: usize) -> f64 {
        1.0 - self.beta[i]
    }

    pub fn alpha_bar(&self, i: usize) -> f64 {
        self.alpha_bar[i]
    }

    /// `alpha_bar` of the step before `i`, with 1 for the clean signal.
    pub fn alpha_bar_prev(&self, i: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            self.alpha_bar[i - 1]
        }
    }

    pub fn sigma(&self, i: usize) -> f64 {
        self.sigma[i]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    pub(crate) fn check_step(&self, i: usize) -> Result<()> {
        if i < self.len() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "step {i} outside schedule of {} steps",
                self.len()
            )))
        }
    }

    /// Coefficients `(c_state, c_x0)` of the DDPM posterior mean
    /// `c_state * x_t + c_x0 * x0_hat` for the reverse step out of `i`.
    pub fn posterior_coefficients(&self, i: usize) -> (f64, f64) {
        let abar = self.alpha_bar[i];
        let abar_prev = self.alpha_bar_prev(i);
        let c_state = self.alpha(i).sqrt() * (1.0 - abar_prev) / (1.0 - abar);
        let c_x0 = abar_prev.sqrt() * self.beta[i] / (1.0 - abar);
        (c_state, c_x0)
    }

    /// Short content hash used to tie checkpoints to the schedule they were
    /// trained with.
    pub fn fingerprint(&self) -> String {
        // FNV-1a over the raw beta bits.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in &self.beta {
            for byte in b.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        format!("{h:016x}")
    }
}

/// Forward marginal sample `sqrt(abar) * x0 + sqrt(1 - abar) * eps`.
pub fn noise_to_level(x0: &[f64], step: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    check_len("noise_to_level", x0.len(), eps.len())?;
    schedule.check_step(step)?;
    let abar = schedule.alpha_bar(step);
    let (a, b) = (abar.sqrt(), (1.0 - abar).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}
