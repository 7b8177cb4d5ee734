//! Mixture synthesis: level-scaled, time-shifted sources summed into `y`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::SynthRecipe;
use super::wav::{load_wav, write_wav, SampleFormat};
use super::{delay, fit_length, scale_to_rms_db, Waveform, DEFAULT_LENGTH, DEFAULT_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    File(PathBuf),
    Synth(SynthRecipe),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub source: SourceKind,
    /// Target RMS in dB; drawn from `rms_db_range` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rms_db: Option<f64>,
    /// Delay in samples; drawn from `0..=max_offset` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
}

/// JSON mixture manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub id: String,
    #[serde(default = "default_rate")]
    pub rate: u32,
    #[serde(default = "default_length")]
    pub length: usize,
    pub seed: u64,
    #[serde(default = "default_range")]
    pub rms_db_range: (f64, f64),
    #[serde(default)]
    pub max_offset: usize,
    pub sources: Vec<SourceSpec>,
}

fn default_rate() -> u32 {
    DEFAULT_RATE
}

fn default_length() -> usize {
    DEFAULT_LENGTH
}

fn default_range() -> (f64, f64) {
    (-25.0, -20.0)
}

impl MixtureSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.rms_db_range;
        if !(lo <= hi) {
            return Err(Error::Config(format!("rms_db_range ({lo}, {hi}) is empty")));
        }
        if self.sources.is_empty() {
            return Err(Error::Config(format!("mixture {} has no sources", self.id)));
        }
        if self.length == 0 {
            return Err(Error::Config("mixture length must be positive".into()));
        }
        for (k, s) in self.sources.iter().enumerate() {
            if let Some(db) = s.rms_db {
                if db < lo || db > hi {
                    return Err(Error::Config(format!(
                        "source {} rms {db} dB outside [{lo}, {hi}]",
                        k + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Mixture {
    pub y: Waveform,
    pub refs: Vec<Waveform>,
    /// The input spec with every drawn level and offset filled in.
    pub resolved: MixtureSpec,
}

pub fn make_mixture(spec: &MixtureSpec) -> Result<Mixture> {
    make_mixture_in(spec, Path::new("."))
}

/// Like [`make_mixture`], resolving relative file paths against `base`.
pub fn make_mixture_in(spec: &MixtureSpec, base: &Path) -> Result<Mixture> {
    spec.validate()?;
    let mut levels = ChaCha8Rng::seed_from_u64(spec.seed);
    levels.set_stream(u64::MAX);
    let mut resolved = spec.clone();
    let mut refs = Vec::with_capacity(spec.sources.len());
    for (k, src) in resolved.sources.iter_mut().enumerate() {
        let raw = match &src.source {
            SourceKind::File(p) => {
                let path = if p.is_absolute() { p.clone() } else { base.join(p) };
                load_wav(&path, spec.rate)?.samples
            }
            SourceKind::Synth(recipe) => {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(k as u64);
                recipe.generate(spec.length, spec.rate, &mut rng)?
            }
        };
        let (lo, hi) = spec.rms_db_range;
        let db = src.rms_db.unwrap_or_else(|| levels.random_range(lo..=hi));
        let offset = src.offset.unwrap_or_else(|| levels.random_range(0..=spec.max_offset));
        src.rms_db = Some(db);
        src.offset = Some(offset);
        let shifted = delay(&fit_length(&raw, spec.length), offset);
        let scaled = scale_to_rms_db(&shifted, db).map_err(|_| {
            Error::ingestion(
                describe(&src.source),
                0,
                format!("source {} is silent after crop and offset", k + 1),
            )
        })?;
        refs.push(scaled);
    }
    let mut y = vec![0.0; spec.length];
    for r in &refs {
        for (acc, v) in y.iter_mut().zip(r) {
            *acc += v;
        }
    }
    let refs = refs
        .into_iter()
        .map(|r| Waveform::new(r, spec.rate))
        .collect::<Result<Vec<_>>>()?;
    Ok(Mixture {
        y: Waveform::new(y, spec.rate)?,
        refs,
        resolved,
    })
}

fn describe(kind: &SourceKind) -> PathBuf {
    match kind {
        SourceKind::File(p) => p.clone(),
        SourceKind::Synth(r) => PathBuf::from(format!("<synth {r:?}>")),
    }
}

impl Mixture {
    /// Writes `mix.wav`, `s1.wav`, ... and `manifest.json` under
    /// `root/mixtures/<id>/`, returning that directory.
    pub fn write(&self, root: &Path) -> Result<PathBuf> {
        let dir = root.join("mixtures").join(&self.resolved.id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_wav(dir.join("mix.wav"), &self.y, SampleFormat::Float32)?;
        for (k, r) in self.refs.iter().enumerate() {
            write_wav(dir.join(format!("s{}.wav", k + 1)), r, SampleFormat::Float32)?;
        }
        let manifest = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.resolved)?;
        fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
        Ok(dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::rms;

    fn synth(recipe: SynthRecipe, db: Option<f64>, offset: Option<usize>) -> SourceSpec {
        SourceSpec {
            source: SourceKind::Synth(recipe),
            rms_db: db,
            offset,
        }
    }

    fn spec(sources: Vec<SourceSpec>) -> MixtureSpec {
        MixtureSpec {
            id: "m0".into(),
            rate: 16000,
            length: 8000,
            seed: 5,
            rms_db_range: (-25.0, -20.0),
            max_offset: 2000,
            sources,
        }
    }

    #[test]
    fn identical_sources_double() {
        let dir = tempfile::tempdir().unwrap();
        let src = Waveform::new(
            (0..8000).map(|n| (n as f64 * 0.01).sin() * 0.3).collect(),
            16000,
        )
        .unwrap();
        let p = dir.path().join("a.wav");
        write_wav(&p, &src, SampleFormat::Float32).unwrap();
        let file = |db| SourceSpec {
            source: SourceKind::File(p.clone()),
            rms_db: Some(db),
            offset: Some(0),
        };
        let m = make_mixture(&spec(vec![file(-20.0), file(-20.0)])).unwrap();
        for (y, r) in m.y.samples.iter().zip(&m.refs[0].samples) {
            assert_eq!(*y, 2.0 * r);
        }
    }

    #[test]
    fn reference_rms_matches_target() {
        let m = make_mixture(&spec(vec![
            synth(SynthRecipe::low_tone(), Some(-25.0), Some(0)),
            synth(SynthRecipe::high_burst(), None, None),
        ]))
        .unwrap();
        let want = 10f64.powf(-25.0 / 20.0);
        assert!((rms(&m.refs[0].samples) / want - 1.0).abs() < 1e-9);
        let db = m.resolved.sources[1].rms_db.unwrap();
        assert!((-25.0..=-20.0).contains(&db));
        assert!(m.resolved.sources[1].offset.unwrap() <= 2000);
    }

    #[test]
    fn deterministic_and_additive() {
        let s = spec(vec![
            synth(SynthRecipe::low_tone(), None, None),
            synth(SynthRecipe::high_burst(), None, None),
        ]);
        let a = make_mixture(&s).unwrap();
        let b = make_mixture(&s).unwrap();
        assert_eq!(a.y.samples, b.y.samples);
        for n in 0..s.length {
            let sum = a.refs[0].samples[n] + a.refs[1].samples[n];
            assert_eq!(a.y.samples[n], sum);
        }
    }

    #[test]
    fn out_of_range_level_and_missing_file() {
        assert!(make_mixture(&spec(vec![synth(SynthRecipe::low_tone(), Some(-10.0), None)])).is_err());
        let missing = SourceSpec {
            source: SourceKind::File("/nonexistent/x.wav".into()),
            rms_db: None,
            offset: None,
        };
        let err = make_mixture(&spec(vec![missing])).unwrap_err().to_string();
        assert!(err.contains("/nonexistent/x.wav"), "{err}");
    }

    #[test]
    fn manifest_json_round_trip() {
        let s = spec(vec![synth(SynthRecipe::low_tone(), Some(-22.0), Some(10))]);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(MixtureSpec::from_json(&text).unwrap(), s);
    }
}
