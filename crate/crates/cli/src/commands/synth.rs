use std::path::PathBuf;

use aq_core::{dataset, synth, Result};

use crate::args::Args;
use crate::manifest::Manifest;

pub fn run(raw: &[String]) -> Result<()> {
    let args = Args::parse(raw, &["out-dir", "seed", "per-class", "threads"], &[])?;
    super::configure_threads(&args)?;
    let out_dir = PathBuf::from(args.require("out-dir")?);
    let seed: u64 = args.get_parsed("seed")?.unwrap_or(20160828);

    // --per-class N writes a reduced corpus (N per class in each split) for
    // smoke tests; the default mirrors the full train/test histograms.
    let (train_count, test_count) = match args.get_parsed::<usize>("per-class")? {
        Some(n) => {
            if n == 0 {
                return Err(aq_core::Error::Config("--per-class must be at least 1".into()));
            }
            std::fs::create_dir_all(&out_dir)?;
            for (name_imgs, name_labels, salt) in [
                ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", 0x7261_696eu64),
                ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", 0x7465_7374u64),
            ] {
                let ds = synth::generate_dataset(
                    &[n; 10],
                    seed ^ salt,
                    "synth",
                    aq_core::dataset::Provenance::MnistTrain,
                )?;
                let rows: Vec<Vec<u8>> = ds
                    .images()
                    .iter()
                    .map(|img| img.pixels().iter().map(|&v| v as u8).collect())
                    .collect();
                dataset::write_idx_images(&out_dir.join(name_imgs), &rows)?;
                dataset::write_idx_labels(&out_dir.join(name_labels), &ds.labels())?;
            }
            (10 * n, 10 * n)
        }
        None => {
            synth::write_corpus(&out_dir, seed)?;
            (60_000, 10_000)
        }
    };
    println!(
        "wrote stand-in corpus to {} ({train_count} train / {test_count} test images, seed {seed})",
        out_dir.display()
    );

    let mut manifest = Manifest::new("synth");
    manifest.push("seed", seed);
    manifest.push("out_dir", out_dir.display());
    manifest.push("train_images", train_count);
    manifest.push("test_images", test_count);
    manifest.write(&out_dir.join("manifest.txt"))?;
    Ok(())
}
