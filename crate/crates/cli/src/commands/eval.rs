use std::io::Write;
use std::path::PathBuf;

use aq_core::model::{self, evaluate};
use aq_core::transforms::{self, TransformSpec};
use aq_core::{Error, Result};

use crate::args::Args;
use crate::manifest::Manifest;

pub fn run(raw: &[String]) -> Result<()> {
    let args = Args::parse(
        raw,
        &["checkpoint", "dataset", "transform", "seed", "report", "dump-pgm", "threads"],
        &["fusion"],
    )?;
    super::configure_threads(&args)?;
    let model = model::load_checkpoint(&super::require_file(args.require("checkpoint")?)?)?;
    let ds = super::load_native(args.require("dataset")?)?;
    let seed: u64 = args.get_parsed("seed")?.unwrap_or(20160828);

    // "5-crops" is the fused row name; as a transform flag it means fusion
    // over untransformed images.
    let mut fusion = args.switch("fusion");
    let transform = match args.get("transform") {
        None | Some("none") => None,
        Some("5-crops") => {
            fusion = true;
            None
        }
        Some(name) => Some(TransformSpec::from_name(name)?),
    };
    let row_name = if fusion && transform.is_none() {
        "5-crops".to_string()
    } else {
        transform.as_ref().map_or("none".into(), |t| t.name().to_string())
    };

    let accuracy = evaluate(&model, &ds, transform.as_ref(), fusion, seed)?;
    let correct = (accuracy * ds.len() as f64).round() as usize;
    println!(
        "{} / {} / {}: accuracy {:.2}% ({correct}/{})",
        model.meta.kind,
        ds.name,
        row_name,
        accuracy * 100.0,
        ds.len()
    );

    if let Some(dir) = args.get("dump-pgm") {
        let dir = PathBuf::from(dir);
        std::fs::create_dir_all(&dir)?;
        for (i, img) in ds.images().iter().take(8).enumerate() {
            let shown = match &transform {
                Some(spec) => transforms::apply(spec, img, seed, i as u64)?,
                None => img.clone(),
            };
            let path = dir.join(format!(
                "{}_{i}_label{}.pgm",
                row_name,
                img.label().unwrap_or(255)
            ));
            super::write_pgm(&shown, &path)?;
        }
        println!("wrote previews to {}", dir.display());
    }

    let hash = format!("{:016x}", model::checkpoint_hash(&model));
    if let Some(report_path) = args.get("report") {
        let path = PathBuf::from(report_path);
        let add_header = !path.exists()
            || std::fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(Error::Io)?;
        if add_header {
            writeln!(file, "dataset,transform,model,accuracy,count,seed")?;
        }
        writeln!(
            file,
            "{},{},{},{},{},{}",
            ds.name,
            row_name,
            model.meta.kind,
            accuracy,
            ds.len(),
            seed
        )?;

        let mut manifest = Manifest::new("eval");
        manifest.push("checkpoint", args.require("checkpoint")?);
        manifest.push("checkpoint_hash", &hash);
        manifest.push("dataset", args.require("dataset")?);
        manifest.push("transform", &row_name);
        manifest.push("fusion", fusion);
        manifest.push("seed", seed);
        manifest.push("accuracy", accuracy);
        manifest.write(&crate::manifest::sibling_path(&path))?;
    } else {
        // No file outputs; the manifest goes to stdout so the run is still
        // re-derivable from captured logs.
        let mut manifest = Manifest::new("eval");
        manifest.push("checkpoint_hash", &hash);
        manifest.push("transform", &row_name);
        manifest.push("fusion", fusion);
        manifest.push("seed", seed);
        manifest.push("accuracy", accuracy);
        print!("{}", manifest.render());
    }
    Ok(())
}
