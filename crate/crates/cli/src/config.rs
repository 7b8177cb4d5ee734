use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use sepdiff_core::prior::TrainConfig;
use sepdiff_core::separator::SamplerConfig;
use sepdiff_core::ScheduleParams;

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "SEPDIFF_OUTPUT";
pub const DEFAULT_OUTPUT: &str = "sepdiff-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorSource {
    /// Trained toy denoisers, one checkpoint per source.
    Checkpoints {
        paths: Vec<PathBuf>,
        #[serde(default)]
        labels: Vec<String>,
    },
    /// The two-source Gaussian fixture; it also supplies the mixture.
    GaussianPair { dim: usize, seed: u64 },
}

impl Default for PriorSource {
    fn default() -> Self {
        PriorSource::Checkpoints {
            paths: Vec::new(),
            labels: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Guided,
    Analytic,
}

/// Every input of every command. Each run writes this back, fully
/// resolved, next to its outputs; feeding that file to `--config` repeats
/// the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub jobs: usize,
    pub rate: u32,
    pub schedule: ScheduleParams,
    /// Directory of training WAVs; files in subdirectories take the
    /// subdirectory name as class label.
    pub dataset: Option<PathBuf>,
    pub prior_name: String,
    pub train: TrainConfig,
    pub manifest: Option<PathBuf>,
    pub mixtures: Vec<PathBuf>,
    pub method: Method,
    pub sampler: SamplerConfig,
    pub prior: PriorSource,
    pub traces: Vec<PathBuf>,
    pub trace_length: Option<usize>,
    pub estimates: Option<PathBuf>,
    pub references: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: None,
            jobs: 1,
            rate: sepdiff_core::signal::DEFAULT_RATE,
            schedule: ScheduleParams::default(),
            dataset: None,
            prior_name: "prior".into(),
            train: TrainConfig::default(),
            manifest: None,
            mixtures: Vec::new(),
            method: Method::Guided,
            sampler: SamplerConfig::default(),
            prior: PriorSource::default(),
            traces: Vec::new(),
            trace_length: None,
            estimates: None,
            references: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Output root: the config value, then the environment, then the
    /// built-in default.
    pub fn resolve_output(&mut self) -> PathBuf {
        let root = self
            .output
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
        self.output = Some(root.clone());
        root
    }

    pub fn write_resolved(&self, dir: &Path, command: &str) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(format!("{command}.resolved.toml"));
        let text = toml::to_string_pretty(self).context("serializing resolved config")?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let mut cfg = RunConfig {
            output: Some("out".into()),
            prior: PriorSource::GaussianPair { dim: 16, seed: 3 },
            traces: vec!["a.csv".into()],
            ..RunConfig::default()
        };
        cfg.sampler.guidance.schedule = sepdiff_core::guidance::GuidanceSchedule::Constant { value: 0.25 };
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 9\n[sampler.init]\nt_star = 120\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.sampler.init.t_star, 120);
        assert_eq!(cfg.schedule, ScheduleParams::default());
    }
}
