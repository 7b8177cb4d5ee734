use std::path::Path;

use anyhow::Context;

use crate::config::RunConfig;
use crate::files::{dir_name, source_files, subdirs};
use crate::usage;
use sepdiff_core::metrics::{evaluate, EvalEntry, EvalReport};
use sepdiff_core::signal::load_wav;
use sepdiff_core::Error;

fn load_sources(dir: &Path, rate: u32) -> anyhow::Result<Vec<Vec<f64>>> {
    source_files(dir)
        .iter()
        .map(|p| Ok(load_wav(p, rate)?.samples))
        .collect()
}

/// Pairs every reference mixture `<id>/s*.wav` with the estimate directory
/// of the same name.
pub fn evaluate_dirs(estimates: &Path, references: &Path, rate: u32) -> anyhow::Result<Vec<EvalEntry>> {
    let mut entries = Vec::new();
    for ref_dir in subdirs(references)? {
        let refs = load_sources(&ref_dir, rate)?;
        if refs.is_empty() {
            continue;
        }
        let id = dir_name(&ref_dir);
        let est_dir = estimates.join(&id);
        if !est_dir.is_dir() {
            return Err(Error::Schema(format!("no estimates for mixture {id:?} in {}", estimates.display())).into());
        }
        let ests = load_sources(&est_dir, rate)?;
        if ests.len() != refs.len() {
            return Err(Error::Schema(format!(
                "mixture {id:?}: {} estimates for {} references",
                ests.len(),
                refs.len()
            ))
            .into());
        }
        entries.push(evaluate(id.clone(), &ests, &refs).with_context(|| format!("mixture {id}"))?);
    }
    if entries.is_empty() {
        return Err(Error::Schema(format!("no reference mixtures under {}", references.display())).into());
    }
    Ok(entries)
}

pub fn run(mut cfg: RunConfig) -> anyhow::Result<()> {
    let root = cfg.resolve_output();
    let estimates = cfg.estimates.clone().ok_or_else(|| usage("eval needs --estimates"))?;
    let references = cfg.references.clone().ok_or_else(|| usage("eval needs --references"))?;
    let report = EvalReport::from_entries(evaluate_dirs(&estimates, &references, cfg.rate)?);

    let dir = root.join("eval");
    cfg.write_resolved(&dir, "eval")?;
    report.write_json(&dir.join("eval.json"))?;
    let csv_path = dir.join("eval.csv");
    let file = std::fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    report.write_csv(file)?;
    println!(
        "{} mixtures: mean SI-SDR {:.2} dB, failure rate {:.3}",
        report.entries.len(),
        report.mean_si_sdr,
        report.failure_rate
    );
    Ok(())
}
