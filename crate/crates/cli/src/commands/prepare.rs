use std::path::PathBuf;

use aq_core::{dataset, Result};

use crate::args::Args;
use crate::manifest::Manifest;

pub fn run(raw: &[String]) -> Result<()> {
    let args = Args::parse(raw, &["images", "labels", "out", "threads"], &[])?;
    super::configure_threads(&args)?;
    let images = super::require_file(args.require("images")?)?;
    let labels = super::require_file(args.require("labels")?)?;
    let out = PathBuf::from(args.require("out")?);

    let ds = dataset::load_idx(&images, &labels)?;
    dataset::save_dataset(&ds, &out)?;

    let hist = ds.label_histogram();
    println!("{}: {} images ({:?})", out.display(), ds.len(), ds.provenance.name());
    println!(
        "label histogram: {}",
        hist.iter()
            .enumerate()
            .map(|(d, c)| format!("{d}:{c}"))
            .collect::<Vec<_>>()
            .join(" ")
    );

    let mut manifest = Manifest::new("prepare");
    manifest.push("images", images.display());
    manifest.push("labels", labels.display());
    manifest.push("out", out.display());
    manifest.push("count", ds.len());
    manifest.push("provenance", ds.provenance.name());
    manifest.write(&crate::manifest::sibling_path(&out))?;
    Ok(())
}
