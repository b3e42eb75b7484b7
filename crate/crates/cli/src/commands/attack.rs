use std::path::PathBuf;

use aq_core::attack::{generate_attack_set, save_attack_set, AttackConfig, AttackMethod};
use aq_core::model::{self, evaluate};
use aq_core::{dataset, Result};

use crate::args::Args;
use crate::manifest::Manifest;

pub fn run(raw: &[String]) -> Result<()> {
    let args = Args::parse(
        raw,
        &["checkpoint", "dataset", "method", "out", "count", "seed", "eps-start", "eps-step",
          "eps-max", "multiplier", "threads"],
        &[],
    )?;
    super::configure_threads(&args)?;
    let model = model::load_checkpoint(&super::require_file(args.require("checkpoint")?)?)?;
    let ds = super::load_native(args.require("dataset")?)?;
    let method = AttackMethod::from_name(args.require("method")?)?;
    let out = PathBuf::from(args.require("out")?);
    let count: usize = args.get_parsed("count")?.unwrap_or(10_000);
    let seed: u64 = args.get_parsed("seed")?.unwrap_or(20160828);

    let mut cfg = match method {
        AttackMethod::Fgs => AttackConfig::fgs_default(),
        AttackMethod::Fgv => AttackConfig::fgv_default(),
    };
    if let Some(v) = args.get_parsed("eps-start")? {
        cfg.eps_start = v;
    }
    if let Some(v) = args.get_parsed("eps-step")? {
        cfg.eps_step = v;
    }
    if let Some(v) = args.get_parsed("eps-max")? {
        cfg.eps_max = v;
    }
    if let Some(v) = args.get_parsed("multiplier")? {
        cfg.fgv_multiplier = v;
    }
    cfg.validate()?;

    println!(
        "attacking {} images with {} (sweep {}..{} step {})",
        ds.len(),
        method.name(),
        cfg.eps_start,
        cfg.eps_max,
        cfg.eps_step
    );
    let (records, stats) = generate_attack_set(&ds, &model, &cfg, count, seed)?;
    println!(
        "successes {} / attempted {} (skipped misclassified {}, no flip {})",
        stats.succeeded, stats.attempted, stats.skipped_misclassified, stats.not_found
    );
    if stats.shortfall > 0 {
        println!("warning: {} requested records could not be produced", stats.shortfall);
    }
    println!("mean minimal epsilon: {:.4}", stats.mean_epsilon);

    save_attack_set(&records, &out)?;
    let attack_ds = dataset::load_dataset(&out)?;
    let post_acc = evaluate(&model, &attack_ds, None, false, seed)?;
    println!("post-attack accuracy against generating checkpoint: {:.2}%", post_acc * 100.0);

    let mut manifest = Manifest::new("attack");
    manifest.push("checkpoint", args.require("checkpoint")?);
    manifest.push("checkpoint_hash", format!("{:016x}", model::checkpoint_hash(&model)));
    manifest.push("dataset", args.require("dataset")?);
    manifest.push("out", out.display());
    manifest.push("method", method.name());
    manifest.push("config", cfg.provenance_text());
    manifest.push("count_requested", count);
    manifest.push("count_written", records.len());
    manifest.push("seed", seed);
    manifest.push("post_attack_accuracy", post_acc);
    manifest.write(&crate::manifest::sibling_path(&out))?;
    Ok(())
}
