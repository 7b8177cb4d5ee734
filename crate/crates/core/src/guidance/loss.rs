use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::signal::{StftParams, StftPlan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconsLossConfig {
    pub lambda_time: f64,
    pub lambda_group: f64,
    pub lambda_stft: f64,
    pub groups: usize,
    pub stft: StftParams,
}

impl Default for ReconsLossConfig {
    fn default() -> Self {
        Self {
            lambda_time: 1.0,
            lambda_group: 0.05,
            lambda_stft: 0.1,
            groups: 8,
            stft: StftParams::default(),
        }
    }
}

impl ReconsLossConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda_time, self.lambda_group, self.lambda_stft];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        if !w.iter().any(|v| *v > 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        if self.groups == 0 {
            return Err(Error::Config("group count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Weighted total and the three unweighted terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub time: f64,
    pub group: f64,
    pub stft: f64,
}

/// Reconstruction loss with a cached STFT plan.
#[derive(Debug, Clone)]
pub struct ReconsLoss {
    config: ReconsLossConfig,
    plan: StftPlan,
}

impl ReconsLoss {
    pub fn new(config: ReconsLossConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            plan: StftPlan::new(config.stft)?,
        })
    }

    pub fn config(&self) -> &ReconsLossConfig {
        &self.config
    }

    fn check(&self, y: &[f64], y_hat: &[f64]) -> Result<()> {
        check_len("reconstruction loss", y.len(), y_hat.len())?;
        if y.len() % self.config.groups != 0 {
            return Err(Error::Dimension {
                context: "signal length must divide into loss groups",
                expected: y.len() - y.len() % self.config.groups,
                actual: y.len(),
            });
        }
        check_finite("mixture", y)?;
        check_finite("reconstruction", y_hat)
    }

    pub fn loss(&self, y: &[f64], y_hat: &[f64]) -> Result<LossComponents> {
        Ok(self.evaluate(y, y_hat, false)?.0)
    }

    /// Loss and its gradient with respect to `y_hat`.
    pub fn loss_and_grad(&self, y: &[f64], y_hat: &[f64]) -> Result<(LossComponents, Vec<f64>)> {
        let (c, g) = self.evaluate(y, y_hat, true)?;
        Ok((c, g.expect("gradient requested")))
    }

    fn evaluate(&self, y: &[f64], y_hat: &[f64], want_grad: bool) -> Result<(LossComponents, Option<Vec<f64>>)> {
        self.check(y, y_hat)?;
        let cfg = &self.config;
        let n = y.len();
        let seg = n / cfg.groups;
        let resid: Vec<f64> = y.iter().zip(y_hat).map(|(a, b)| a - b).collect();
        let time: f64 = resid.iter().map(|r| r * r).sum();
        let group = resid
            .chunks(seg)
            .map(|c| c.iter().map(|r| r * r).sum::<f64>())
            .sum::<f64>()
            / cfg.groups as f64;

        let mut grad = if want_grad {
            let w = -2.0 * (cfg.lambda_time + cfg.lambda_group / cfg.groups as f64);
            Some(resid.iter().map(|r| w * r).collect::<Vec<f64>>())
        } else {
            None
        };

        // The magnitude term is reported even when unweighted, as long as the
        // signal spans one frame.
        let mut stft = 0.0;
        if cfg.lambda_stft > 0.0 || n >= cfg.stft.window_len {
            let plan = &self.plan;
            let want_grad = want_grad && cfg.lambda_stft > 0.0;
            let sy = plan.forward(y)?;
            let sh = plan.forward(y_hat)?;
            let mut dspec = Vec::with_capacity(if want_grad { sh.bins.len() } else { 0 });
            for (a, b) in sy.bins.iter().zip(&sh.bins) {
                let (ma, mb) = (a.norm(), b.norm());
                stft += (ma - mb).powi(2);
                if want_grad {
                    // d/dRe, d/dIm of (|Y| - |Yh|)^2; zero at |Yh| = 0.
                    dspec.push(if mb > 0.0 {
                        *b * (-2.0 * cfg.lambda_stft * (ma - mb) / mb)
                    } else {
                        Complex64::new(0.0, 0.0)
                    });
                }
            }
            if let Some(g) = grad.as_mut().filter(|_| want_grad) {
                for (gi, ai) in g.iter_mut().zip(plan.adjoint(&dspec, n)?) {
                    *gi += ai;
                }
            }
        }
        let total = cfg.lambda_time * time + cfg.lambda_group * group + cfg.lambda_stft * stft;
        Ok((
            LossComponents {
                total,
                time,
                group,
                stft,
            },
            grad,
        ))
    }
}

/// One-shot reconstruction loss.
pub fn recons_loss(y: &[f64], y_hat: &[f64], config: &ReconsLossConfig) -> Result<LossComponents> {
    ReconsLoss::new(*config)?.loss(y, y_hat)
}
