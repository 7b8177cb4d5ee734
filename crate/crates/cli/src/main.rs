//! `sepdiff`: train toy priors, synthesize mixtures, separate, analyze
//! guidance traces and evaluate.

mod analyze;
mod config;
mod eval;
mod files;
mod mix;
mod separate;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::{Method, PriorSource, RunConfig};
use sepdiff_core::guidance::{GuidanceSchedule, DEFAULT_CONSTANT_GAMMA};
use sepdiff_core::separator::InitMode;

#[derive(Parser, Debug)]
#[command(name = "sepdiff", version, about = "Unsupervised source separation with guided diffusion priors")]
struct Cli {
    /// Run configuration (TOML). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root. Defaults to $SEPDIFF_OUTPUT, then ./sepdiff-out.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads for per-mixture work.
    #[arg(long, short = 'j', global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a toy denoiser prior on a directory of WAV files.
    TrainPrior {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Checkpoint file stem.
        #[arg(long)]
        name: Option<String>,
    },
    /// Render mixtures from a JSON manifest (one spec or a list).
    SynthMix {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Separate mixture directories with guided reverse diffusion.
    Separate {
        /// Mixture directory holding mix.wav (repeatable).
        #[arg(long = "mixture")]
        mixtures: Vec<PathBuf>,
        /// Prior checkpoint, one per source (repeatable).
        #[arg(long = "prior")]
        priors: Vec<PathBuf>,
        #[arg(long, value_enum)]
        guidance: Option<GuidanceArg>,
        /// Constant guidance strength; implies `--guidance constant`.
        #[arg(long = "const")]
        constant: Option<f64>,
        #[arg(long, value_enum)]
        init: Option<InitArg>,
        /// Initialization step, 1-based.
        #[arg(long)]
        t_star: Option<usize>,
    },
    /// Turn guidance traces into per-step series and schedule curves.
    AnalyzeGuidance {
        #[arg(long = "trace")]
        traces: Vec<PathBuf>,
        /// Signal length the traces were produced with.
        #[arg(long)]
        length: Option<usize>,
    },
    /// Score separated sources against references.
    Eval {
        #[arg(long)]
        estimates: Option<PathBuf>,
        #[arg(long)]
        references: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GuidanceArg {
    Constant,
    Dsg,
    Hybrid,
    Analytic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitArg {
    Unified,
    Independent,
    PureNoise,
}

/// A problem with the invocation rather than the data; exits with 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || matches!(cause.downcast_ref(), Some(sepdiff_core::Error::Config(_))) {
            return 2;
        }
    }
    1
}

fn apply_guidance(cfg: &mut RunConfig, guidance: Option<GuidanceArg>, constant: Option<f64>) {
    let schedule = &mut cfg.sampler.guidance.schedule;
    match guidance {
        Some(GuidanceArg::Constant) => {
            let current = match *schedule {
                GuidanceSchedule::Constant { value } => value,
                _ => DEFAULT_CONSTANT_GAMMA,
            };
            *schedule = GuidanceSchedule::Constant {
                value: constant.unwrap_or(current),
            };
            cfg.method = Method::Guided;
        }
        Some(GuidanceArg::Dsg) => {
            *schedule = GuidanceSchedule::SigmaProportional;
            cfg.method = Method::Guided;
        }
        Some(GuidanceArg::Hybrid) => {
            if !matches!(schedule, GuidanceSchedule::Hybrid { .. }) {
                *schedule = GuidanceSchedule::default();
            }
            cfg.method = Method::Guided;
        }
        Some(GuidanceArg::Analytic) => cfg.method = Method::Analytic,
        None => {
            if let Some(value) = constant {
                *schedule = GuidanceSchedule::Constant { value };
                cfg.method = Method::Guided;
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| usage(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    if let Some(o) = cli.output {
        cfg.output = Some(o);
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.sampler.seed = s;
    }
    if cfg.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    match cli.command {
        Command::TrainPrior { data, steps, name } => {
            if data.is_some() {
                cfg.dataset = data;
            }
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            if let Some(n) = name {
                cfg.prior_name = n;
            }
            train::run(cfg)
        }
        Command::SynthMix { manifest } => {
            if manifest.is_some() {
                cfg.manifest = manifest;
            }
            mix::run(cfg)
        }
        Command::Separate {
            mixtures,
            priors,
            guidance,
            constant,
            init,
            t_star,
        } => {
            if !mixtures.is_empty() {
                cfg.mixtures = mixtures;
            }
            if !priors.is_empty() {
                let labels = match &cfg.prior {
                    PriorSource::Checkpoints { labels, .. } => labels.clone(),
                    PriorSource::GaussianPair { .. } => Vec::new(),
                };
                cfg.prior = PriorSource::Checkpoints { paths: priors, labels };
            }
            apply_guidance(&mut cfg, guidance, constant);
            if let Some(mode) = init {
                cfg.sampler.init.mode = match mode {
                    InitArg::Unified => InitMode::Unified,
                    InitArg::Independent => InitMode::Independent,
                    InitArg::PureNoise => InitMode::PureNoise,
                };
            }
            if let Some(t) = t_star {
                cfg.sampler.init.t_star = t;
            }
            separate::run(cfg)
        }
        Command::AnalyzeGuidance { traces, length } => {
            if !traces.is_empty() {
                cfg.traces = traces;
            }
            if length.is_some() {
                cfg.trace_length = length;
            }
            analyze::run(cfg)
        }
        Command::Eval { estimates, references } => {
            if estimates.is_some() {
                cfg.estimates = estimates;
            }
            if references.is_some() {
                cfg.references = references;
            }
            eval::run(cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_config_errors_are_usage_errors() {
        let e: anyhow::Error = sepdiff_core::Error::Config("empty dataset".into()).into();
        assert_eq!(exit_code(&e), 2);
        assert_eq!(exit_code(&e.context("training")), 2);
        let e: anyhow::Error = sepdiff_core::Error::NonFinite("x").into();
        assert_eq!(exit_code(&e), 1);
    }

    #[test]
    fn const_flag_selects_constant_schedule() {
        let mut cfg = RunConfig::default();
        apply_guidance(&mut cfg, None, Some(0.0));
        assert_eq!(cfg.sampler.guidance.schedule, GuidanceSchedule::Constant { value: 0.0 });
        apply_guidance(&mut cfg, Some(GuidanceArg::Hybrid), None);
        assert_eq!(cfg.sampler.guidance.schedule, GuidanceSchedule::default());
        apply_guidance(&mut cfg, Some(GuidanceArg::Constant), None);
        assert_eq!(
            cfg.sampler.guidance.schedule,
            GuidanceSchedule::Constant {
                value: DEFAULT_CONSTANT_GAMMA
            }
        );
        apply_guidance(&mut cfg, Some(GuidanceArg::Analytic), None);
        assert_eq!(cfg.method, Method::Analytic);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
