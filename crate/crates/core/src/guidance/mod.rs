//! Reconstruction loss, its gradient through Tweedie denoising, and the
//! guidance-strength schedules.

mod loss;

pub use loss::{recons_loss, LossComponents, ReconsLoss, ReconsLossConfig};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::prior::{tweedie_from_score, JacobianSupport, ScoreModel};
use crate::schedule::NoiseSchedule;
use crate::signal::{dot, norm};

/// How `d x0_hat / d x_t` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    /// Closed-form score Jacobian (analytic priors only).
    ExactJvp,
    /// Any vector-Jacobian product the model offers.
    #[default]
    Backprop,
    /// Treats the score Jacobian as zero.
    IdentityJacobian,
    /// Central differences of the full loss; for reference checks only.
    FiniteDifference,
}

/// Whether gradient norms for normalized schedules are taken per source or
/// over all sources jointly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    #[default]
    PerSource,
    Joint,
}

/// Constant guidance strength used when none is given. Chosen by a sweep
/// over held-out desk mixtures (0.03 to 3); larger values diverge.
pub const DEFAULT_CONSTANT_GAMMA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GuidanceSchedule {
    Constant {
        value: f64,
    },
    /// `sigma(t) sqrt(N) / |grad|`.
    #[serde(alias = "dsg")]
    SigmaProportional,
    /// `SmoothMax_c(sigma(t), s_floor) sqrt(N) / |grad|`.
    Hybrid {
        s_floor: f64,
        c: f64,
    },
}

impl Default for GuidanceSchedule {
    fn default() -> Self {
        GuidanceSchedule::Hybrid {
            s_floor: 0.002,
            c: 1e3,
        }
    }
}

impl GuidanceSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GuidanceSchedule::Constant { value } if !(value >= 0.0) || !value.is_finite() => {
                Err(Error::Config(format!("constant guidance must be finite and >= 0, got {value}")))
            }
            GuidanceSchedule::Hybrid { s_floor, c } if !(s_floor > 0.0) || !(c > 0.0) => {
                Err(Error::Config(format!("hybrid needs s_floor > 0 and c > 0, got {s_floor}, {c}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GuidanceSchedule::Constant { .. } => "constant",
            GuidanceSchedule::SigmaProportional => "dsg",
            GuidanceSchedule::Hybrid { .. } => "hybrid",
        }
    }

    /// Target update norm per `sqrt(N)` for normalized kinds.
    pub fn target_scale(&self, sigma: f64) -> Option<f64> {
        match *self {
            GuidanceSchedule::Constant { .. } => None,
            GuidanceSchedule::SigmaProportional => Some(sigma),
            GuidanceSchedule::Hybrid { s_floor, c } => Some(smooth_max(sigma, s_floor, c)),
        }
    }
}

/// `(1/c) log(exp(c a) + exp(c b))` without overflow.
pub fn smooth_max(a: f64, b: f64, c: f64) -> f64 {
    a.max(b) + (-c * (a - b).abs()).exp().ln_1p() / c
}

/// Guidance strength at reverse step `step`. A zero gradient under a
/// normalized schedule yields 0, meaning the step is left unguided.
pub fn gamma(kind: &GuidanceSchedule, step: usize, grad_norm: f64, n: usize, noise: &NoiseSchedule) -> f64 {
    match kind.target_scale(noise.sigma(step)) {
        None => match *kind {
            GuidanceSchedule::Constant { value } => value,
            _ => unreachable!(),
        },
        Some(_) if !(grad_norm > 0.0) => 0.0,
        Some(scale) => scale * (n as f64).sqrt() / grad_norm,
    }
}

/// `-(g_prior . g_cond) / |g_cond|^2`; positive when the prior update works
/// against the conditional direction.
pub fn guidance_bound(g_prior: &[f64], g_cond: &[f64]) -> Result<f64> {
    check_len("guidance bound", g_prior.len(), g_cond.len())?;
    let nn = dot(g_cond, g_cond);
    if !(nn > 0.0) {
        return Err(Error::MetricUndefined("guidance bound with zero conditional gradient"));
    }
    Ok(-dot(g_prior, g_cond) / nn)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub schedule: GuidanceSchedule,
    pub loss: ReconsLossConfig,
    pub mode: GradientMode,
    pub normalization: Normalization,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            schedule: GuidanceSchedule::default(),
            loss: ReconsLossConfig::default(),
            mode: GradientMode::default(),
            normalization: Normalization::default(),
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.loss.validate()
    }
}

/// Per-source gradients of the reconstruction loss at one reverse step.
#[derive(Debug, Clone)]
pub struct ReconsGrad {
    pub grads: Vec<Vec<f64>>,
    pub loss: LossComponents,
    pub scores: Vec<Vec<f64>>,
    pub x0: Vec<Vec<f64>>,
}

fn check_mode(model: &dyn ScoreModel, mode: GradientMode) -> Result<()> {
    let support = model.jacobian_support();
    let ok = match mode {
        GradientMode::ExactJvp => support == JacobianSupport::Exact,
        GradientMode::Backprop => support != JacobianSupport::None,
        GradientMode::IdentityJacobian | GradientMode::FiniteDifference => true,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Capability(format!("{} cannot run in {mode:?} mode", model.kind())))
    }
}

fn sum_x0(x0: &[Vec<f64>]) -> Vec<f64> {
    let mut y = vec![0.0; x0[0].len()];
    for s in x0 {
        for (a, b) in y.iter_mut().zip(s) {
            *a += b;
        }
    }
    y
}

/// Gradient of `L(y, sum_k x0_hat(x_k))` with respect to every `x_k`,
/// chained through `d x0_hat / d x_t = (I + (1 - abar) J) / sqrt(abar)`.
pub fn recons_grad(
    states: &[Vec<f64>],
    step: usize,
    y: &[f64],
    models: &[&dyn ScoreModel],
    labels: &[Option<&str>],
    mode: GradientMode,
    loss: &ReconsLoss,
) -> Result<ReconsGrad> {
    let k = states.len();
    if k == 0 {
        return Err(Error::Config("no sources".into()));
    }
    check_len("models per source", k, models.len())?;
    check_len("labels per source", k, labels.len())?;
    for (x, m) in states.iter().zip(models) {
        check_len("source state", y.len(), x.len())?;
        check_mode(*m, mode)?;
    }
    let schedule = models[0].schedule();
    let abar = schedule.alpha_bar(step);

    let mut lins = Vec::with_capacity(k);
    let mut scores = Vec::with_capacity(k);
    let mut x0 = Vec::with_capacity(k);
    for ((x, m), c) in states.iter().zip(models).zip(labels) {
        let lin = m.linearize(x, step, *c)?;
        x0.push(tweedie_from_score(x, lin.score(), step, m.schedule()));
        scores.push(lin.score().to_vec());
        lins.push(lin);
    }
    let (components, u) = loss.loss_and_grad(y, &sum_x0(&x0))?;

    let inv = 1.0 / abar.sqrt();
    let mut grads = Vec::with_capacity(k);
    for (idx, lin) in lins.iter().enumerate() {
        let g = match mode {
            GradientMode::ExactJvp | GradientMode::Backprop => {
                let ju = lin.vjp(&u)?;
                u.iter().zip(&ju).map(|(a, b)| (a + (1.0 - abar) * b) * inv).collect()
            }
            GradientMode::IdentityJacobian => u.iter().map(|a| a * inv).collect(),
            GradientMode::FiniteDifference => fd_source_grad(states, idx, step, y, models, labels, &x0, loss)?,
        };
        grads.push(g);
    }
    Ok(ReconsGrad {
        grads,
        loss: components,
        scores,
        x0,
    })
}

#[allow(clippy::too_many_arguments)]
fn fd_source_grad(
    states: &[Vec<f64>],
    idx: usize,
    step: usize,
    y: &[f64],
    models: &[&dyn ScoreModel],
    labels: &[Option<&str>],
    x0: &[Vec<f64>],
    loss: &ReconsLoss,
) -> Result<Vec<f64>> {
    const H: f64 = 1e-5;
    let mut others = x0.to_vec();
    let mut x = states[idx].clone();
    let mut eval = |x: &[f64]| -> Result<f64> {
        others[idx] = crate::prior::tweedie_x0(models[idx], x, step, labels[idx])?;
        Ok(loss.loss(y, &sum_x0(&others))?.total)
    };
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + H;
        let up = eval(&x)?;
        x[i] = orig - H;
        let down = eval(&x)?;
        x[i] = orig;
        out.push((up - down) / (2.0 * H));
    }
    Ok(out)
}

/// Norms used to normalize each source's gradient, and the matching signal
/// length, under the chosen normalization.
pub fn normalizing_norms(grads: &[Vec<f64>], normalization: Normalization) -> (Vec<f64>, usize) {
    let n = grads[0].len();
    let norms: Vec<f64> = grads.iter().map(|g| norm(g)).collect();
    match normalization {
        Normalization::PerSource => (norms, n),
        Normalization::Joint => {
            let joint = norms.iter().map(|v| v * v).sum::<f64>().sqrt();
            (vec![joint; grads.len()], n * grads.len())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::testing::rel_err;
    use crate::prior::{Covariance, GaussianPrior, GmmPrior, ToyConfig, ToyDenoiser};
    use crate::signal::StftParams;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(200, 1e-4, 2e-2).unwrap()
    }

    fn small_loss() -> ReconsLoss {
        ReconsLoss::new(ReconsLossConfig {
            stft: StftParams::new(8, 4),
            ..ReconsLossConfig::default()
        })
        .unwrap()
    }

    fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn smooth_max_identities() {
        let v = smooth_max(0.002, 0.002, 1e3);
        assert!((v - (0.002 + 2f64.ln() / 1e3)).abs() < 1e-15);
        assert!((v - 0.0026931).abs() < 1e-7);
        assert!((smooth_max(0.1, 0.002, 1e3) - 0.1).abs() < 1e-40);
    }

    #[test]
    fn dsg_update_norm_is_sigma_sqrt_n() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = rand_vec(64000, &mut rng);
        let gn = norm(&g);
        let step = 120;
        let gm = gamma(&GuidanceSchedule::SigmaProportional, step, gn, g.len(), &s);
        let upd: Vec<f64> = g.iter().map(|v| v * gm).collect();
        let want = s.sigma(step) * 64000f64.sqrt();
        assert!((norm(&upd) - want).abs() < 1e-10 * want);
    }

    #[test]
    fn zero_gradient_skips_normalized_guidance() {
        let s = sched();
        assert_eq!(gamma(&GuidanceSchedule::default(), 10, 0.0, 100, &s), 0.0);
        assert_eq!(gamma(&GuidanceSchedule::SigmaProportional, 10, 0.0, 100, &s), 0.0);
        assert_eq!(gamma(&GuidanceSchedule::Constant { value: 0.3 }, 10, 0.0, 100, &s), 0.3);
    }

    #[test]
    fn hybrid_limits() {
        let s = sched();
        let (n, gn) = (1000, 2.5);
        let dsg = GuidanceSchedule::SigmaProportional;
        let no_floor = GuidanceSchedule::Hybrid { s_floor: 1e-300, c: 1e6 };
        for step in [5, 50, 199] {
            let a = gamma(&dsg, step, gn, n, &s);
            let b = gamma(&no_floor, step, gn, n, &s);
            assert!((a - b).abs() < 1e-5 * a, "step {step}");
        }
        // sigma(0) = 0: only the floor remains.
        let hyb = GuidanceSchedule::Hybrid { s_floor: 0.002, c: 1e6 };
        let want = 0.002 * (n as f64).sqrt() / gn;
        assert!((gamma(&hyb, 0, gn, n, &s) - want).abs() < 1e-3 * want);
    }

    #[test]
    fn guidance_bound_cases() {
        let g = [1.0, 2.0, -1.0];
        assert_eq!(guidance_bound(&[2.0, -1.0, 0.0], &g).unwrap(), 0.0);
        assert_eq!(guidance_bound(&[-1.0, -2.0, 1.0], &g).unwrap(), 1.0);
        assert_eq!(guidance_bound(&[2.0, 4.0, -2.0], &g).unwrap(), -2.0);
        assert!(matches!(guidance_bound(&g, &[0.0; 3]), Err(Error::MetricUndefined(_))));
    }

    #[test]
    fn schedule_serde_names() {
        let s: GuidanceSchedule = serde_json::from_str(r#"{"kind":"dsg"}"#).unwrap();
        assert_eq!(s, GuidanceSchedule::SigmaProportional);
        let h: GuidanceSchedule = serde_json::from_str(r#"{"kind":"hybrid","s_floor":0.002,"c":1000.0}"#).unwrap();
        assert_eq!(h, GuidanceSchedule::default());
        assert!(GuidanceSchedule::Constant { value: -1.0 }.validate().is_err());
        assert!(GuidanceSchedule::Hybrid { s_floor: 0.0, c: 1.0 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn smooth_max_bounds(a in -10.0f64..10.0, b in -10.0f64..10.0, c in 1e-2f64..1e4) {
            let m = a.max(b);
            let v = smooth_max(a, b, c);
            prop_assert!(m <= v);
            prop_assert!(v <= m + 2f64.ln() / c + 1e-12 * m.abs().max(1.0));
        }

        #[test]
        fn progress_iff_gamma_exceeds_bound(
            gp in prop::collection::vec(-1.0f64..1.0, 8),
            gc in prop::collection::vec(-1.0f64..1.0, 8),
            gamma in 0.0f64..5.0,
        ) {
            let b = guidance_bound(&gp, &gc).unwrap();
            prop_assume!((gamma - b).abs() > 1e-9);
            let upd: Vec<f64> = gp.iter().zip(&gc).map(|(p, c)| p + gamma * c).collect();
            prop_assert_eq!(dot(&upd, &gc) > 0.0, gamma > b);
        }
    }

    /// FD of `L(y, x0_hat(x))` with respect to one source's state.
    fn fd_check(models: &[&dyn ScoreModel], labels: &[Option<&str>], mode: GradientMode, seed: u64, n: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let loss = small_loss();
        let states: Vec<Vec<f64>> = models.iter().map(|_| rand_vec(n, &mut rng)).collect();
        let y = rand_vec(n, &mut rng);
        let step = rng.random_range(0..200);
        let exact = recons_grad(&states, step, &y, models, labels, mode, &loss).unwrap();
        let fd = recons_grad(&states, step, &y, models, labels, GradientMode::FiniteDifference, &loss).unwrap();
        exact
            .grads
            .iter()
            .zip(&fd.grads)
            .map(|(a, b)| rel_err(a, b))
            .fold(0.0, f64::max)
    }

    #[test]
    fn gaussian_exact_gradient_matches_fd() {
        let p = GaussianPrior::new(vec![0.1; 16], Covariance::Diagonal((0..16).map(|i| 0.1 + 0.05 * i as f64).collect()), sched()).unwrap();
        for seed in 0..3 {
            assert!(fd_check(&[&p], &[None], GradientMode::ExactJvp, seed, 16) < 1e-6);
        }
    }

    #[test]
    fn gmm_and_toy_gradients_match_fd() {
        let gmm = GmmPrior::new(
            vec![
                (0.4, vec![0.3; 16], Covariance::Diagonal(vec![0.2; 16])),
                (0.6, vec![-0.2; 16], Covariance::Diagonal(vec![0.5; 16])),
            ],
            sched(),
        )
        .unwrap();
        let cfg = ToyConfig {
            channels: 4,
            kernel: 5,
            mid_kernel: 3,
            time_features: 4,
            classes: Vec::new(),
        };
        let toy = ToyDenoiser::new(cfg, sched(), 0.3, 7).unwrap();
        for seed in 0..3 {
            assert!(fd_check(&[&gmm, &toy], &[None, None], GradientMode::Backprop, seed, 16) < 1e-4);
        }
        let e = recons_grad(&[vec![0.0; 16]], 3, &[0.0; 16], &[&toy], &[None], GradientMode::ExactJvp, &small_loss());
        assert!(matches!(e, Err(Error::Capability(_))));
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        let s = sched();
        let p = GaussianPrior::new(vec![0.2; 16], Covariance::Diagonal(vec![0.3; 16]), s.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let states = vec![rand_vec(16, &mut rng), rand_vec(16, &mut rng)];
        let step = 40;
        let y: Vec<f64> = states
            .iter()
            .map(|x| crate::prior::tweedie_x0(&p, x, step, None).unwrap())
            .fold(vec![0.0; 16], |acc, v| acc.iter().zip(&v).map(|(a, b)| a + b).collect());
        let r = recons_grad(&states, step, &y, &[&p, &p], &[None, None], GradientMode::ExactJvp, &small_loss()).unwrap();
        assert!(r.loss.total < 1e-24);
        for g in &r.grads {
            assert!(norm(g) < 1e-10);
        }
    }

    #[test]
    fn identity_jacobian_differs_by_known_factor() {
        let s = sched();
        let scale = 0.25;
        let p = GaussianPrior::new(vec![0.0; 16], Covariance::Diagonal(vec![scale; 16]), s.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let states = vec![rand_vec(16, &mut rng)];
        let y = rand_vec(16, &mut rng);
        let step = 100;
        let loss = small_loss();
        let exact = recons_grad(&states, step, &y, &[&p], &[None], GradientMode::ExactJvp, &loss).unwrap();
        let ident = recons_grad(&states, step, &y, &[&p], &[None], GradientMode::IdentityJacobian, &loss).unwrap();
        let (a, b) = (&exact.grads[0], &ident.grads[0]);
        let cos = dot(a, b) / (norm(a) * norm(b));
        assert!(cos > 0.99);
        let abar = s.alpha_bar(step);
        let ratio = abar * scale / (abar * scale + 1.0 - abar);
        assert!((norm(a) / norm(b) - ratio).abs() < 1e-10);
    }

    #[test]
    fn joint_normalization_pools_sources() {
        let grads = vec![vec![3.0, 0.0], vec![0.0, 4.0]];
        let (per, n) = normalizing_norms(&grads, Normalization::PerSource);
        assert_eq!((per, n), (vec![3.0, 4.0], 2));
        let (joint, n) = normalizing_norms(&grads, Normalization::Joint);
        assert_eq!((joint, n), (vec![5.0, 5.0], 4));
    }
}
