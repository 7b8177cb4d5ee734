//! Seeded problem fixtures shared by the acceptance suite and the CLI.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::guidance::{GradientMode, GuidanceConfig, GuidanceSchedule, ReconsLossConfig};
use crate::prior::{train_denoiser, Covariance, Example, GaussianPrior, ToyDenoiser, TrainConfig, TrainReport};
use crate::schedule::NoiseSchedule;
use crate::separator::{InitConfig, InitMode, SamplerConfig};
use crate::signal::{make_mixture, scale_to_rms_db, Mixture, MixtureSpec, SourceKind, SourceSpec, StftParams, SynthRecipe};

/// Two Gaussian sources whose covariances occupy complementary halves of a
/// random orthonormal basis, mixed from true samples.
pub struct GaussianPair {
    pub priors: [GaussianPrior; 2],
    pub truth: [Vec<f64>; 2],
    pub y: Vec<f64>,
}

/// Variance of each prior along its own half of the basis.
pub const GAUSSIAN_MAJOR_VAR: f64 = 1.0;
/// Variance along the other half.
pub const GAUSSIAN_MINOR_VAR: f64 = 1e-4;

fn random_rotation(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    a.qr().q()
}

pub fn gaussian_pair(dim: usize, seed: u64, schedule: &NoiseSchedule) -> Result<GaussianPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_rotation(dim, &mut rng);
    let half = dim / 2;
    let cov = |first: f64, second: f64| {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(dim, |i, _| if i < half { first } else { second }));
        let c = &q * d * q.transpose();
        (&c + c.transpose()) * 0.5
    };
    let mean = |rng: &mut ChaCha8Rng, offset: f64| -> Vec<f64> {
        (0..dim).map(|_| offset + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let m1 = mean(&mut rng, 0.5);
    let m2 = mean(&mut rng, -0.5);
    let p1 = GaussianPrior::new(m1, Covariance::Full(cov(GAUSSIAN_MAJOR_VAR, GAUSSIAN_MINOR_VAR)), schedule.clone())?;
    let p2 = GaussianPrior::new(m2, Covariance::Full(cov(GAUSSIAN_MINOR_VAR, GAUSSIAN_MAJOR_VAR)), schedule.clone())?;
    let s1 = p1.sample(&mut rng);
    let s2 = p2.sample(&mut rng);
    let y = s1.iter().zip(&s2).map(|(a, b)| a + b).collect();
    Ok(GaussianPair {
        priors: [p1, p2],
        truth: [s1, s2],
        y,
    })
}

/// Sampler settings for short vector problems: STFT framing scaled down to
/// fit, exact Jacobians, and the full reverse trajectory.
pub fn gaussian_sampler_config(dim: usize, seed: u64) -> SamplerConfig {
    let window = (dim / 2).max(2) & !1;
    SamplerConfig {
        guidance: GuidanceConfig {
            loss: ReconsLossConfig {
                stft: StftParams::new(window, window / 2),
                ..ReconsLossConfig::default()
            },
            mode: GradientMode::ExactJvp,
            ..GuidanceConfig::default()
        },
        init: InitConfig {
            mode: InitMode::Unified,
            t_star: 150,
        },
        seed,
        ..SamplerConfig::default()
    }
}

/// Desk-scale separation fixture: a low harmonic tone and a high-band noise
/// burst, each with its own trained toy prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskConfig {
    pub rate: u32,
    pub length: usize,
    pub train_examples: usize,
    pub train: TrainConfig,
    pub mixtures: usize,
    pub seed: u64,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self {
            rate: 16_000,
            length: 1024,
            train_examples: 200,
            train: TrainConfig::default(),
            mixtures: 20,
            seed: 2024,
        }
    }
}

pub fn desk_recipes() -> [SynthRecipe; 2] {
    [SynthRecipe::low_tone(), SynthRecipe::high_burst()]
}

/// Clean training signals for one recipe at mixture-like levels.
pub fn desk_dataset(recipe: &SynthRecipe, cfg: &DeskConfig, stream: u64) -> Result<Vec<Example>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let (lo, hi) = DESK_RMS_DB;
    (0..cfg.train_examples)
        .map(|_| {
            let raw = recipe.generate(cfg.length, cfg.rate, &mut rng)?;
            let db = rng.random_range(lo..=hi);
            Ok(Example::from(scale_to_rms_db(&raw, db)?))
        })
        .collect()
}

/// Source level range shared by training data and mixtures.
pub const DESK_RMS_DB: (f64, f64) = (-25.0, -20.0);

pub struct DeskPriors {
    pub models: [ToyDenoiser; 2],
    pub reports: [TrainReport; 2],
}

pub fn desk_priors(cfg: &DeskConfig, schedule: &NoiseSchedule) -> Result<DeskPriors> {
    let [a, b] = desk_recipes();
    let da = desk_dataset(&a, cfg, 10)?;
    let db = desk_dataset(&b, cfg, 11)?;
    let (ma, ra) = train_denoiser(&da, schedule, &cfg.train, cfg.seed)?;
    let (mb, rb) = train_denoiser(&db, schedule, &cfg.train, cfg.seed + 1)?;
    Ok(DeskPriors {
        models: [ma, mb],
        reports: [ra, rb],
    })
}

pub fn desk_mixture_specs(cfg: &DeskConfig) -> Vec<MixtureSpec> {
    (0..cfg.mixtures)
        .map(|i| MixtureSpec {
            id: format!("desk-{i:03}"),
            rate: cfg.rate,
            length: cfg.length,
            seed: cfg.seed.wrapping_mul(1000).wrapping_add(i as u64),
            rms_db_range: DESK_RMS_DB,
            max_offset: 0,
            sources: desk_recipes()
                .into_iter()
                .map(|r| SourceSpec {
                    source: SourceKind::Synth(r),
                    rms_db: None,
                    offset: None,
                })
                .collect(),
        })
        .collect()
}

pub fn desk_mixtures(cfg: &DeskConfig) -> Result<Vec<Mixture>> {
    desk_mixture_specs(cfg).iter().map(make_mixture).collect()
}

/// Sampler settings used on the desk fixture for a given schedule and
/// initialization.
pub fn desk_sampler_config(schedule: GuidanceSchedule, init: InitConfig, seed: u64) -> SamplerConfig {
    SamplerConfig {
        guidance: GuidanceConfig {
            schedule,
            mode: GradientMode::Backprop,
            ..GuidanceConfig::default()
        },
        init,
        seed,
        ..SamplerConfig::default()
    }
}
