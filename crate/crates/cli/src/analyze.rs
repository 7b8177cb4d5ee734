use std::fmt::Write as _;

use anyhow::Context;
use serde::Serialize;

use crate::config::RunConfig;
use crate::files::write_text;
use crate::usage;
use sepdiff_core::guidance::{gamma, GuidanceSchedule, DEFAULT_CONSTANT_GAMMA};
use sepdiff_core::trace::{GuidanceTrace, TraceRecord};
use sepdiff_core::{Error, NoiseSchedule};

/// Conflict statistics of one source over the first and last quarters of
/// its reverse trajectory.
#[derive(Debug, Serialize)]
pub struct SourceSummary {
    pub trace: String,
    pub source: usize,
    pub steps: usize,
    pub early_bound_median: Option<f64>,
    pub late_bound_median: Option<f64>,
    pub early_gamma_median: Option<f64>,
    pub late_gamma_median: Option<f64>,
    pub final_si_sdr: Option<f64>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    v.retain(|x| x.is_finite());
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Records of one source in trajectory order (high noise first).
fn trajectory(trace: &GuidanceTrace, source: usize) -> Vec<&TraceRecord> {
    let mut r: Vec<&TraceRecord> = trace.source(source).collect();
    r.sort_by(|a, b| b.step.cmp(&a.step));
    r
}

pub fn summarize(name: &str, trace: &GuidanceTrace) -> Vec<SourceSummary> {
    let sources = trace.records.iter().map(|r| r.source + 1).max().unwrap_or(0);
    (0..sources)
        .map(|k| {
            let recs = trajectory(trace, k);
            let q = recs.len().div_ceil(4);
            let early = &recs[..q];
            let late = &recs[recs.len() - q..];
            let col = |rs: &[&TraceRecord], f: fn(&TraceRecord) -> f64| median(rs.iter().map(|r| f(r)).collect());
            SourceSummary {
                trace: name.to_string(),
                source: k,
                steps: recs.len(),
                early_bound_median: col(early, |r| r.guidance_bound),
                late_bound_median: col(late, |r| r.guidance_bound),
                early_gamma_median: col(early, |r| r.gamma),
                late_gamma_median: col(late, |r| r.gamma),
                final_si_sdr: recs.last().and_then(|r| r.si_sdr),
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// The three schedule families, with `grad_norm = sqrt(n)` so normalized
/// kinds show their target scale directly.
pub fn schedule_curves(cfg: &RunConfig, noise: &NoiseSchedule, n: usize) -> String {
    let constant = match cfg.sampler.guidance.schedule {
        GuidanceSchedule::Constant { value } => value,
        _ => DEFAULT_CONSTANT_GAMMA,
    };
    let hybrid = match cfg.sampler.guidance.schedule {
        h @ GuidanceSchedule::Hybrid { .. } => h,
        _ => GuidanceSchedule::default(),
    };
    let kinds = [
        GuidanceSchedule::Constant { value: constant },
        GuidanceSchedule::SigmaProportional,
        hybrid,
    ];
    let g = (n as f64).sqrt();
    let mut out = String::from("step,sigma,constant,dsg,hybrid\n");
    for step in (0..noise.len()).rev() {
        write!(out, "{step},{}", noise.sigma(step)).expect("writing to a string");
        for k in &kinds {
            write!(out, ",{}", gamma(k, step, g, n, noise)).expect("writing to a string");
        }
        out.push('\n');
    }
    out
}

pub fn run(mut cfg: RunConfig) -> anyhow::Result<()> {
    let root = cfg.resolve_output();
    if cfg.traces.is_empty() {
        return Err(usage("analyze-guidance needs at least one --trace"));
    }
    let n = cfg.trace_length.ok_or_else(|| usage("analyze-guidance needs --length"))?;
    if n == 0 {
        return Err(usage("--length must be positive"));
    }
    let noise = cfg.schedule.build()?;
    let dir = root.join("analysis");
    cfg.write_resolved(&dir, "analyze-guidance")?;

    let mut series = String::from("trace,step,source,sigma,gamma,grad_norm,grad_rms,guidance_bound,si_sdr,x0_energy\n");
    let mut summary = Vec::new();
    for (i, path) in cfg.traces.iter().enumerate() {
        let trace = GuidanceTrace::load(path).with_context(|| format!("reading trace {}", path.display()))?;
        let name = format!("{i}:{}", path.display());
        for r in &trace.records {
            if r.step >= noise.len() {
                return Err(Error::Schema(format!(
                    "{}: step {} outside a schedule of {} steps",
                    path.display(),
                    r.step,
                    noise.len()
                ))
                .into());
            }
            let rms = r.gamma * r.grad_norm / (n as f64).sqrt();
            writeln!(
                series,
                "{i},{},{},{},{},{},{},{},{},{}",
                r.step,
                r.source,
                noise.sigma(r.step),
                r.gamma,
                r.grad_norm,
                rms,
                r.guidance_bound,
                opt(r.si_sdr),
                r.x0_energy
            )
            .expect("writing to a string");
        }
        summary.extend(summarize(&name, &trace));
    }
    write_text(&dir.join("series.csv"), &series)?;
    write_text(&dir.join("schedules.csv"), &schedule_curves(&cfg, &noise, n))?;
    write_text(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    for s in &summary {
        println!(
            "{} source {}: guidance bound median early {} late {}",
            s.trace,
            s.source,
            opt(s.early_bound_median),
            opt(s.late_bound_median)
        );
    }
    Ok(())
}
