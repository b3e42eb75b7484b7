use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use aq_core::harness::{compare_models, render_delta_table, run_grid, EvalReport};
use aq_core::model::{self, Model};
use aq_core::Result;

use crate::args::Args;
use crate::manifest::Manifest;

pub fn run(raw: &[String]) -> Result<()> {
    let args = Args::parse(
        raw,
        &["raw", "finetuned", "test", "fgs", "fgv", "out-dir", "seed", "threads"],
        &[],
    )?;
    super::configure_threads(&args)?;

    // All inputs are checked before any work starts.
    let raw_path = super::require_file(args.require("raw")?)?;
    let ft_path = super::require_file(args.require("finetuned")?)?;
    let test_path = super::require_file(args.require("test")?)?;
    let fgs_path = super::require_file(args.require("fgs")?)?;
    let fgv_path = super::require_file(args.require("fgv")?)?;
    let out_dir = PathBuf::from(args.require("out-dir")?);
    let seed: u64 = args.get_parsed("seed")?.unwrap_or(20160828);
    std::fs::create_dir_all(&out_dir)?;

    let raw_model = model::load_checkpoint(&raw_path)?;
    let ft_model = model::load_checkpoint(&ft_path)?;
    let test = aq_core::dataset::load_dataset(&test_path)?;
    let fgs = aq_core::dataset::load_dataset(&fgs_path)?;
    let fgv = aq_core::dataset::load_dataset(&fgv_path)?;

    let datasets: [(&str, &aq_core::dataset::Dataset); 3] =
        [("test", &test), ("fgs", &fgs), ("fgv", &fgv)];

    let (raw_reports, ft_reports) = run_both(&raw_model, &ft_model, &datasets, seed)?;

    // Per-dataset human tables (both model columns) and delta tables.
    let mut deltas_text = String::new();
    for ((name, _), (raw_rep, ft_rep)) in datasets.iter().zip(raw_reports.iter().zip(&ft_reports))
    {
        let table = side_by_side_table(name, raw_rep, ft_rep);
        std::fs::write(out_dir.join(format!("table_{name}.txt")), &table)?;
        println!("{table}");

        let deltas = compare_models(raw_rep, ft_rep)?;
        let _ = writeln!(deltas_text, "dataset: {name}");
        deltas_text.push_str(&render_delta_table(&deltas));
        deltas_text.push('\n');
    }
    std::fs::write(out_dir.join("deltas.txt"), &deltas_text)?;

    let machine = machine_file(&raw_reports, &ft_reports, seed);
    std::fs::write(out_dir.join("machine.csv"), &machine)?;

    let mut manifest = Manifest::new("grid");
    manifest.push("raw", raw_path.display());
    manifest.push("raw_checkpoint_hash", format!("{:016x}", model::checkpoint_hash(&raw_model)));
    manifest.push("finetuned", ft_path.display());
    manifest.push(
        "finetuned_checkpoint_hash",
        format!("{:016x}", model::checkpoint_hash(&ft_model)),
    );
    manifest.push("test", test_path.display());
    manifest.push("fgs", fgs_path.display());
    manifest.push("fgv", fgv_path.display());
    manifest.push("out_dir", out_dir.display());
    manifest.push("seed", seed);
    for (key, value) in aq_core::harness::knob_provenance() {
        manifest.push(&format!("prov.{key}"), value);
    }
    manifest.write(&out_dir.join("manifest.txt"))?;

    println!("grid artifacts written to {}", out_dir.display());
    Ok(())
}

/// Both models over all datasets; reports are returned in dataset order.
pub fn run_both(
    raw_model: &Model,
    ft_model: &Model,
    datasets: &[(&str, &aq_core::dataset::Dataset)],
    seed: u64,
) -> Result<(Vec<EvalReport>, Vec<EvalReport>)> {
    let raw_hash = format!("{:016x}", model::checkpoint_hash(raw_model));
    let ft_hash = format!("{:016x}", model::checkpoint_hash(ft_model));
    let raw_reports = run_grid(raw_model, "raw", &raw_hash, datasets, seed)?;
    let ft_reports = run_grid(ft_model, "fine-tuned", &ft_hash, datasets, seed)?;
    Ok((raw_reports, ft_reports))
}

fn side_by_side_table(dataset: &str, raw: &EvalReport, ft: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Accuracy on {dataset} ({} images)", raw.rows[0].count);
    let _ = writeln!(out, "raw checkpoint {}  fine-tuned {}", raw.checkpoint_hash, ft.checkpoint_hash);
    let _ = writeln!(out, "seed {}", raw.seed);
    for (k, v) in &raw.provenance {
        if !k.starts_with("transform.") {
            let _ = writeln!(out, "  {k}: {v}");
        }
    }
    let _ = writeln!(out, "  {:-<52}", "");
    let _ = writeln!(out, "  {:<24} {:>11} {:>12}", "TRANSFORMATION", "RAW MODEL", "FINE-TUNED");
    for (r, f) in raw.rows.iter().zip(&ft.rows) {
        let _ = writeln!(
            out,
            "  {:<24} {:>10.2}% {:>11.2}%",
            r.transform,
            r.accuracy * 100.0,
            f.accuracy * 100.0
        );
    }
    out
}

/// One machine-readable file covering every (dataset, transform, model) cell.
pub fn machine_file(raw_reports: &[EvalReport], ft_reports: &[EvalReport], seed: u64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# seed={seed}");
    if let Some(first) = raw_reports.first() {
        let _ = writeln!(out, "# raw_checkpoint_hash={}", first.checkpoint_hash);
    }
    if let Some(first) = ft_reports.first() {
        let _ = writeln!(out, "# finetuned_checkpoint_hash={}", first.checkpoint_hash);
    }
    for (key, value) in aq_core::harness::knob_provenance() {
        let _ = writeln!(out, "# prov.{key}={value}");
    }
    let _ = writeln!(out, "dataset,transform,model,accuracy,count,seed");
    for report in raw_reports.iter().chain(ft_reports) {
        for row in &report.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                report.dataset, row.transform, report.model, row.accuracy, row.count, report.seed
            );
        }
    }
    out
}

/// Used by tests to re-render from a directory without re-running.
pub fn read_machine_file(dir: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(dir.join("machine.csv"))?)
}
