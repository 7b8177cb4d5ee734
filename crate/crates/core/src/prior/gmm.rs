use rand::Rng;

use super::gaussian::Component;
use super::{check_inputs, label_index, Covariance, JacobianSupport, Linearized, ModelKind, ScoreModel};
use crate::error::{check_len, Error, Result};
use crate::schedule::NoiseSchedule;

/// Gaussian mixture prior. With a class vocabulary, each label carries its
/// own mixture weights over the shared components.
#[derive(Debug, Clone)]
pub struct GmmPrior {
    components: Vec<Component>,
    weights: Vec<f64>,
    vocab: Vec<String>,
    class_weights: Vec<Vec<f64>>,
    schedule: NoiseSchedule,
}

fn normalized(w: &[f64], n: usize) -> Result<Vec<f64>> {
    check_len("mixture weights", n, w.len())?;
    if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Config("mixture weights must be non-negative".into()));
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Config("mixture weights sum to zero".into()));
    }
    Ok(w.iter().map(|v| v / total).collect())
}

impl GmmPrior {
    pub fn new(components: Vec<(f64, Vec<f64>, Covariance)>, schedule: NoiseSchedule) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        let raw: Vec<f64> = components.iter().map(|c| c.0).collect();
        let comps = components
            .into_iter()
            .map(|(_, m, c)| Component::new(m, c))
            .collect::<Result<Vec<_>>>()?;
        let d = comps[0].dim();
        for c in &comps {
            check_len("mixture component", d, c.dim())?;
        }
        Ok(Self {
            weights: normalized(&raw, comps.len())?,
            components: comps,
            vocab: Vec::new(),
            class_weights: Vec::new(),
            schedule,
        })
    }

    /// Adds a class label whose samples use `weights` over the components.
    pub fn with_class(mut self, label: impl Into<String>, weights: &[f64]) -> Result<Self> {
        let w = normalized(weights, self.components.len())?;
        self.vocab.push(label.into());
        self.class_weights.push(w);
        Ok(self)
    }

    fn weights_for(&self, label: Option<&str>) -> &[f64] {
        match label_index(&self.vocab, label) {
            Some(i) => &self.class_weights[i],
            None => &self.weights,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, label: Option<&str>, rng: &mut R) -> Vec<f64> {
        let w = self.weights_for(label);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = w.len() - 1;
        for (i, wi) in w.iter().enumerate() {
            acc += wi;
            if u < acc {
                pick = i;
                break;
            }
        }
        self.components[pick].sample(rng)
    }
}

struct GmmAt<'a> {
    prior: &'a GmmPrior,
    abar: f64,
    resp: Vec<f64>,
    /// Per-component scores `-P_i (x - m_i)`.
    comp_scores: Vec<Vec<f64>>,
    score: Vec<f64>,
}

impl Linearized for GmmAt<'_> {
    fn score(&self) -> &[f64] {
        &self.score
    }

    // J = sum r_i (-P_i) + sum r_i s_i s_i^T - s s^T, symmetric.
    fn vjp(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("vjp direction", self.score.len(), v.len())?;
        let mut out = vec![0.0; v.len()];
        for ((comp, r), s) in self.prior.components.iter().zip(&self.resp).zip(&self.comp_scores) {
            if *r == 0.0 {
                continue;
            }
            let pv = comp.precision_apply(self.abar, v);
            let sv: f64 = s.iter().zip(v).map(|(a, b)| a * b).sum();
            for j in 0..out.len() {
                out[j] += r * (s[j] * sv - pv[j]);
            }
        }
        let mv: f64 = self.score.iter().zip(v).map(|(a, b)| a * b).sum();
        for (o, s) in out.iter_mut().zip(&self.score) {
            *o -= s * mv;
        }
        Ok(out)
    }
}

impl ScoreModel for GmmPrior {
    fn kind(&self) -> ModelKind {
        ModelKind::AnalyticGmm
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn dim(&self) -> Option<usize> {
        Some(self.components[0].dim())
    }

    fn class_vocab(&self) -> Option<&[String]> {
        if self.vocab.is_empty() {
            None
        } else {
            Some(&self.vocab)
        }
    }

    fn jacobian_support(&self) -> JacobianSupport {
        JacobianSupport::Exact
    }

    fn linearize<'a>(&'a self, x: &[f64], step: usize, label: Option<&str>) -> Result<Box<dyn Linearized + 'a>> {
        check_inputs(self, x, step, label)?;
        let abar = self.schedule.alpha_bar(step);
        let w = self.weights_for(label);
        let mut logits = Vec::with_capacity(self.components.len());
        let mut comp_scores = Vec::with_capacity(self.components.len());
        for (c, wi) in self.components.iter().zip(w) {
            let (lp, p) = c.log_density(abar, x);
            logits.push(if *wi > 0.0 { wi.ln() + lp } else { f64::NEG_INFINITY });
            comp_scores.push(p.into_iter().map(|v| -v).collect::<Vec<f64>>());
        }
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut resp: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = resp.iter().sum();
        resp.iter_mut().for_each(|r| *r /= z);
        let mut score = vec![0.0; x.len()];
        for (r, s) in resp.iter().zip(&comp_scores) {
            for (acc, v) in score.iter_mut().zip(s) {
                *acc += r * v;
            }
        }
        Ok(Box::new(GmmAt {
            prior: self,
            abar,
            resp,
            comp_scores,
            score,
        }))
    }
}
