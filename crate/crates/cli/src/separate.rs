use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;

use crate::config::{Method, PriorSource, RunConfig};
use crate::files::{dir_name, source_files, write_text};
use crate::usage;
use sepdiff_core::fixture::gaussian_pair;
use sepdiff_core::metrics::{evaluate, EvalEntry};
use sepdiff_core::prior::{load_checkpoint, ScoreModel};
use sepdiff_core::separator::{separate, separate_analytic, SeparationProblem, SeparationResult};
use sepdiff_core::signal::{load_wav, write_wav, SampleFormat, Waveform};
use sepdiff_core::{Error, NoiseSchedule};

struct Job {
    id: String,
    y: Vec<f64>,
    refs: Option<Vec<Vec<f64>>>,
}

fn mixture_job(dir: &Path, rate: u32) -> anyhow::Result<Job> {
    let y = load_wav(dir.join("mix.wav"), rate)?.samples;
    let refs = source_files(dir)
        .iter()
        .map(|p| Ok(load_wav(p, rate)?.samples))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(Job {
        id: dir_name(dir),
        y,
        refs: (!refs.is_empty()).then_some(refs),
    })
}

fn load_models(paths: &[PathBuf], schedule: &NoiseSchedule) -> anyhow::Result<Vec<Box<dyn ScoreModel>>> {
    paths
        .iter()
        .map(|p| {
            let (m, _) = load_checkpoint(p, Some(schedule)).with_context(|| format!("loading prior {}", p.display()))?;
            Ok(Box::new(m) as Box<dyn ScoreModel>)
        })
        .collect()
}

pub fn run(mut cfg: RunConfig) -> anyhow::Result<()> {
    let root = cfg.resolve_output();
    let out = root.join("separated");
    let schedule = cfg.schedule.build()?;
    let (models, labels, jobs): (Vec<Box<dyn ScoreModel>>, Vec<Option<String>>, Vec<Job>) = match &cfg.prior {
        PriorSource::Checkpoints { paths, labels } => {
            if paths.len() < 2 {
                return Err(usage("separate needs at least two --prior checkpoints"));
            }
            if !labels.is_empty() && labels.len() != paths.len() {
                return Err(usage("give one label per prior or none"));
            }
            if cfg.mixtures.is_empty() {
                return Err(usage("separate needs at least one --mixture directory"));
            }
            let models = load_models(paths, &schedule)?;
            let labels = if labels.is_empty() {
                vec![None; paths.len()]
            } else {
                labels.iter().map(|l| (!l.is_empty()).then(|| l.clone())).collect()
            };
            let jobs = cfg
                .mixtures
                .iter()
                .map(|d| mixture_job(d, cfg.rate))
                .collect::<anyhow::Result<Vec<_>>>()?;
            (models, labels, jobs)
        }
        PriorSource::GaussianPair { dim, seed } => {
            if !cfg.mixtures.is_empty() {
                return Err(usage("the gaussian-pair prior supplies its own mixture"));
            }
            let pair = gaussian_pair(*dim, *seed, &schedule)?;
            let job = Job {
                id: format!("gaussian-{seed}"),
                y: pair.y,
                refs: Some(pair.truth.to_vec()),
            };
            let models = pair.priors.into_iter().map(|p| Box::new(p) as Box<dyn ScoreModel>).collect();
            (models, vec![None, None], vec![job])
        }
    };
    cfg.write_resolved(&out, "separate")?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .context("building worker pool")?;
    let refs: Vec<&dyn ScoreModel> = models.iter().map(|m| m.as_ref()).collect();
    let results: Vec<anyhow::Result<Option<EvalEntry>>> = pool.install(|| {
        jobs.par_iter()
            .enumerate()
            .map(|(i, job)| run_one(&cfg, i, job, &refs, &labels, &out))
            .collect()
    });
    let mut first_err = None;
    for (job, r) in jobs.iter().zip(results) {
        match r {
            Ok(Some(e)) => println!("{}: mean SI-SDR {:.2} dB {:?}", job.id, e.mean, e.si_sdr),
            Ok(None) => println!("{}: done", job.id),
            Err(e) => {
                eprintln!("{}: {e:#}", job.id);
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn run_one(
    cfg: &RunConfig,
    index: usize,
    job: &Job,
    models: &[&dyn ScoreModel],
    labels: &[Option<String>],
    out: &Path,
) -> anyhow::Result<Option<EvalEntry>> {
    let mut sampler = cfg.sampler;
    sampler.seed = sampler.seed.wrapping_add(index as u64);
    let mut problem = SeparationProblem::new(job.y.clone(), models.to_vec(), sampler);
    problem.labels = labels.to_vec();
    problem.refs = job.refs.clone();
    let dir = out.join(&job.id);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let result = match cfg.method {
        Method::Guided => separate(&problem),
        Method::Analytic => separate_analytic(&problem),
    };
    let SeparationResult { sources, trace, .. } = match result {
        Ok(r) => r,
        Err(Error::Divergence { step, reason, trace }) => {
            trace.save(&dir.join("trace.csv"))?;
            return Err(anyhow!(
                "diverged at reverse step {step}: {reason}; partial trace in {}",
                dir.display()
            ));
        }
        Err(e) => return Err(e.into()),
    };
    trace.save(&dir.join("trace.csv"))?;
    for (k, s) in sources.iter().enumerate() {
        // Written as float samples without the ingestion headroom check.
        let w = Waveform {
            samples: s.clone(),
            rate: cfg.rate,
        };
        write_wav(dir.join(format!("s{}.wav", k + 1)), &w, SampleFormat::Float32)?;
    }
    write_text(&dir.join("sources.json"), &serde_json::to_string(&sources)?)?;
    job.refs
        .as_ref()
        .map(|r| evaluate(job.id.clone(), &sources, r))
        .transpose()
        .map_err(Into::into)
}
