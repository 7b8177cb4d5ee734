use std::fmt::Write as _;

use anyhow::Context;

use crate::config::RunConfig;
use crate::files::{load_dataset, write_text};
use crate::usage;
use sepdiff_core::prior::{save_checkpoint, train_denoiser, TrainingRecord};

pub fn run(mut cfg: RunConfig) -> anyhow::Result<()> {
    let root = cfg.resolve_output();
    let dataset = cfg.dataset.clone().ok_or_else(|| usage("train-prior needs --data"))?;
    let data = load_dataset(&dataset, cfg.rate)?;
    let schedule = cfg.schedule.build()?;
    let (model, report) = train_denoiser(&data, &schedule, &cfg.train, cfg.seed).context("training prior")?;

    let dir = root.join("priors");
    let ckpt = dir.join(format!("{}.ckpt", cfg.prior_name));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let record = TrainingRecord {
        config: cfg.train.clone(),
        seed: cfg.seed,
        initial_eval_loss: report.initial_eval_loss,
        final_eval_loss: report.final_eval_loss,
    };
    save_checkpoint(&ckpt, &model, Some(record))?;

    let mut csv = String::from("step,loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        writeln!(csv, "{i},{l}").expect("writing to a string");
    }
    write_text(&dir.join(format!("{}.loss.csv", cfg.prior_name)), &csv)?;
    cfg.write_resolved(&dir, &format!("{}.train-prior", cfg.prior_name))?;
    println!(
        "trained {} on {} examples: eval loss {:.6} -> {:.6}; wrote {}",
        cfg.prior_name,
        data.len(),
        report.initial_eval_loss,
        report.final_eval_loss,
        ckpt.display()
    );
    Ok(())
}
