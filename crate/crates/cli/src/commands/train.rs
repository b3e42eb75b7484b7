use std::path::PathBuf;

use aq_core::model::{self, TrainConfig};
use aq_core::Result;

use crate::args::Args;
use crate::manifest::Manifest;

pub const TRAIN_FLAGS: [&str; 11] = [
    "train", "test", "out", "config", "epochs", "batch", "lr", "momentum", "weight-decay",
    "seed", "threads",
];

pub fn run(raw: &[String]) -> Result<()> {
    let args = Args::parse(raw, &TRAIN_FLAGS, &[])?;
    super::configure_threads(&args)?;
    let train_ds = super::load_native(args.require("train")?)?.to_unit();
    let test_ds = super::load_native(args.require("test")?)?;
    let out = PathBuf::from(args.require("out")?);
    let cfg = super::resolve_train_config(&args, TrainConfig::default())?;

    let mut model = model::build_lenet(cfg.seed);
    let report = model::train(&mut model, &train_ds, &cfg, &[("test", &test_ds)])?;
    for (epoch, (loss, evals)) in report
        .epoch_losses
        .iter()
        .zip(&report.eval_accuracies)
        .enumerate()
    {
        println!(
            "epoch {:>2}: train loss {loss:.4}, test accuracy {:.2}%",
            epoch + 1,
            evals[0] * 100.0
        );
    }
    if let Some(last) = report.eval_accuracies.last() {
        println!("final test accuracy: {:.2}%", last[0] * 100.0);
    }

    model::save_checkpoint(&model, &out)?;
    let hash = format!("{:016x}", model::checkpoint_hash(&model));
    println!("checkpoint written to {} (hash {hash})", out.display());

    let mut manifest = Manifest::new("train");
    manifest.push("train", args.require("train")?);
    manifest.push("test", args.require("test")?);
    manifest.push("out", out.display());
    manifest.push("checkpoint_hash", &hash);
    super::config_manifest_entries(&mut manifest, &cfg);
    manifest.write(&crate::manifest::sibling_path(&out))?;
    Ok(())
}
