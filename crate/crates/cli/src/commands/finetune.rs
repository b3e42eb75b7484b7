use std::path::PathBuf;

use aq_core::dataset::build_finetune_corpus;
use aq_core::model::{self, TrainConfig};
use aq_core::transforms::TransformSpec;
use aq_core::Result;

use crate::args::Args;
use crate::manifest::Manifest;

pub fn run(raw: &[String]) -> Result<()> {
    let args = Args::parse(
        raw,
        &["checkpoint", "train", "test", "out", "config", "epochs", "batch", "lr", "momentum",
          "weight-decay", "seed", "threads"],
        &[],
    )?;
    super::configure_threads(&args)?;
    let mut model = model::load_checkpoint(&super::require_file(args.require("checkpoint")?)?)?;
    let train_ds = super::load_native(args.require("train")?)?;
    let test_ds = super::load_native(args.require("test")?)?;
    let out = PathBuf::from(args.require("out")?);
    let cfg = super::resolve_train_config(&args, TrainConfig::finetune_default())?;

    println!("building 100k/20k fine-tuning corpus (combination transform, seed {})", cfg.seed);
    let (corpus_train, corpus_val) = build_finetune_corpus(
        &train_ds,
        &TransformSpec::Combination,
        cfg.seed,
    )?;

    let report = model::finetune(&mut model, &corpus_train, &corpus_val, Some(&test_ds), &cfg)?;
    for (epoch, (loss, evals)) in report
        .epoch_losses
        .iter()
        .zip(&report.eval_accuracies)
        .enumerate()
    {
        println!(
            "epoch {:>2}: train loss {loss:.4}, validation accuracy {:.2}%, test accuracy {:.2}%",
            epoch + 1,
            evals[0] * 100.0,
            evals[1] * 100.0
        );
    }
    if let Some(last) = report.eval_accuracies.last() {
        println!(
            "final: validation (20k) {:.2}%, mnist test {:.2}%",
            last[0] * 100.0,
            last[1] * 100.0
        );
    }

    model::save_checkpoint(&model, &out)?;
    let hash = format!("{:016x}", model::checkpoint_hash(&model));
    println!("fine-tuned checkpoint written to {} (hash {hash})", out.display());

    let mut manifest = Manifest::new("finetune");
    manifest.push("checkpoint", args.require("checkpoint")?);
    manifest.push("train", args.require("train")?);
    manifest.push("test", args.require("test")?);
    manifest.push("out", out.display());
    manifest.push("checkpoint_hash", &hash);
    manifest.push("corpus.pipeline", TransformSpec::Combination.text());
    super::config_manifest_entries(&mut manifest, &cfg);
    manifest.write(&crate::manifest::sibling_path(&out))?;
    Ok(())
}
