//! Experiment grid, report rendering and the multi-frame risk estimate.
//!
//! A grid run scores one model against one dataset under the eight
//! registered rows: none, translation, noise, blur, crop-resize,
//! combination, 5-crops (fused, untransformed) and binarize. Reports carry
//! a provenance header naming every under-specified knob so the numbers
//! stay interpretable.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{evaluate, Model};
use crate::transforms::{Region, TransformSpec};

/// Grid row: evaluation name, transform, fusion flag.
fn grid_rows() -> Vec<(String, Option<TransformSpec>, bool)> {
    vec![
        ("none".into(), None, false),
        ("translation".into(), Some(TransformSpec::Translate { shift: 1 }), false),
        ("noise".into(), Some(TransformSpec::Noise { mean: 0.0, stddev: 0.25 }), false),
        ("blur".into(), Some(TransformSpec::Blur { width: 2, height: 1 }), false),
        (
            "crop-resize".into(),
            Some(TransformSpec::CropResize { crop: 27, region: Region::Center }),
            false,
        ),
        ("combination".into(), Some(TransformSpec::Combination), false),
        ("5-crops".into(), None, true),
        ("binarize".into(), Some(TransformSpec::Binarize), false),
    ]
}

pub const GRID_ROW_NAMES: [&str; 8] = [
    "none",
    "translation",
    "noise",
    "blur",
    "crop-resize",
    "combination",
    "5-crops",
    "binarize",
];

/// The knob interpretations that must appear in every report header.
pub fn knob_provenance() -> Vec<(String, String)> {
    vec![
        (
            "noise-scale".into(),
            "noise stddev 0.25 interpreted on Unit [0,1] pixel scale".into(),
        ),
        (
            "blur-semantics".into(),
            "normalized box filter, anchor (0,0) for 2x1, edge replication".into(),
        ),
        (
            "crop-offsets".into(),
            "corners at integer extremes; center at fractional offset (0.5,0.5)".into(),
        ),
        ("bicubic-kernel".into(), "Catmull-Rom, a=-0.5".into()),
        ("fusion-summation".into(), "probability vectors summed over 5 crops".into()),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub transform: String,
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// "raw" or "fine-tuned".
    pub model: String,
    pub checkpoint_hash: String,
    pub dataset: String,
    pub seed: u64,
    pub provenance: Vec<(String, String)>,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn row(&self, transform: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.transform == transform)
    }

    fn validate(&self) -> Result<()> {
        for row in &self.rows {
            if !(0.0..=1.0).contains(&row.accuracy) {
                return Err(Error::Contract(format!(
                    "row {} accuracy {} outside [0,1]",
                    row.transform, row.accuracy
                )));
            }
            if !GRID_ROW_NAMES.contains(&row.transform.as_str()) {
                return Err(Error::Contract(format!(
                    "row '{}' is not a registered transformation",
                    row.transform
                )));
            }
        }
        Ok(())
    }
}

/// Score `model` against every named dataset under the full transform grid.
pub fn run_grid(
    model: &Model,
    model_name: &str,
    checkpoint_hash: &str,
    datasets: &[(&str, &Dataset)],
    seed: u64,
) -> Result<Vec<EvalReport>> {
    if datasets.is_empty() {
        return Err(Error::Config("run_grid needs at least one dataset".into()));
    }
    let mut reports = Vec::with_capacity(datasets.len());
    for (ds_name, ds) in datasets {
        let mut rows = Vec::new();
        let mut provenance = knob_provenance();
        for (name, transform, fusion) in grid_rows() {
            let accuracy = evaluate(model, ds, transform.as_ref(), fusion, seed)?;
            if let Some(t) = &transform {
                provenance.push((format!("transform.{name}"), t.text()));
            }
            rows.push(ReportRow { transform: name, accuracy, count: ds.len() });
        }
        let report = EvalReport {
            model: model_name.to_string(),
            checkpoint_hash: checkpoint_hash.to_string(),
            dataset: ds_name.to_string(),
            seed,
            provenance,
            rows,
        };
        report.validate()?;
        reports.push(report);
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRow {
    pub transform: String,
    pub raw: f64,
    pub fine_tuned: f64,
    pub delta: f64,
    pub decreased: bool,
}

/// Per-row accuracy difference (fine-tuned minus raw) over matching grids.
pub fn compare_models(raw: &EvalReport, fine_tuned: &EvalReport) -> Result<Vec<DeltaRow>> {
    if raw.rows.len() != fine_tuned.rows.len()
        || raw
            .rows
            .iter()
            .zip(&fine_tuned.rows)
            .any(|(a, b)| a.transform != b.transform)
    {
        return Err(Error::Consistency(
            "reports do not share a grid row structure".into(),
        ));
    }
    Ok(raw
        .rows
        .iter()
        .zip(&fine_tuned.rows)
        .map(|(r, f)| DeltaRow {
            transform: r.transform.clone(),
            raw: r.accuracy,
            fine_tuned: f.accuracy,
            delta: f.accuracy - r.accuracy,
            decreased: f.accuracy < r.accuracy,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// multi-frame risk

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskQuery {
    pub frames: u64,
    pub threshold: u64,
    pub per_frame_error: f64,
}

impl RiskQuery {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Contract("frame count must be positive".into()));
        }
        if self.threshold > self.frames {
            return Err(Error::Contract(format!(
                "threshold {} exceeds frame count {}",
                self.threshold, self.frames
            )));
        }
        if !(0.0..=1.0).contains(&self.per_frame_error) {
            return Err(Error::Contract(format!(
                "per-frame error probability {} outside [0,1]",
                self.per_frame_error
            )));
        }
        Ok(())
    }
}

/// Exact C(n,k) for n <= 64; callers guarantee k <= n.
fn binomial_u128(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 1..=k {
        c = c * (n - k + i) as u128 / i as u128;
    }
    c
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    if n <= 64 {
        return (binomial_u128(n, k) as f64).ln();
    }
    let k = k.min(n - k);
    (1..=k)
        .map(|i| (((n - k + i) as f64) / i as f64).ln())
        .sum()
}

/// The bare product C(n,k) * p^k, with no complementary factor. This is the
/// single-term expression the risk estimate prints alongside the true tail.
pub fn risk_single_term(query: &RiskQuery) -> Result<f64> {
    query.validate()?;
    let (n, k, p) = (query.frames, query.threshold, query.per_frame_error);
    if k == 0 {
        return Ok(1.0);
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if n <= 64 {
        Ok(binomial_u128(n, k) as f64 * p.powi(k as i32))
    } else {
        Ok((ln_binomial(n, k) + k as f64 * p.ln()).exp())
    }
}

/// P(at least k wrong out of n): the upper binomial tail
/// sum_{j=k..n} C(n,j) p^j (1-p)^(n-j).
pub fn risk_majority_tail(query: &RiskQuery) -> Result<f64> {
    query.validate()?;
    let (n, k, p) = (query.frames, query.threshold, query.per_frame_error);
    if k == 0 {
        return Ok(1.0);
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    // Start from the k-th term in log space, then climb with the exact term
    // ratio; sums at most n-k+1 terms.
    let q = 1.0 - p;
    let ln_term_k = ln_binomial(n, k) + k as f64 * p.ln() + (n - k) as f64 * q.ln();
    let mut term = ln_term_k.exp();
    let mut total = term;
    for j in k..n {
        term *= (n - j) as f64 / (j + 1) as f64 * (p / q);
        total += term;
    }
    Ok(total.min(1.0))
}

// ---------------------------------------------------------------------------
// rendering

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Aligned text table mirroring the accuracy tables.
    Human,
    /// Comma-separated rows with a `#`-prefixed provenance header.
    Machine,
}

impl ReportFormat {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "table" | "human" => Ok(ReportFormat::Human),
            "csv" | "machine" => Ok(ReportFormat::Machine),
            other => Err(Error::Contract(format!(
                "unknown report format '{other}'; valid: table, csv"
            ))),
        }
    }
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Machine => {
            let mut out = String::new();
            out.push_str(&format!("# model={}\n", report.model));
            out.push_str(&format!("# checkpoint_hash={}\n", report.checkpoint_hash));
            out.push_str(&format!("# dataset={}\n", report.dataset));
            out.push_str(&format!("# seed={}\n", report.seed));
            for (k, v) in &report.provenance {
                out.push_str(&format!("# prov.{k}={v}\n"));
            }
            out.push_str("dataset,transform,model,accuracy,count,seed\n");
            for row in &report.rows {
                // `{}` on f64 prints the shortest representation that parses
                // back to the same bits, so rendering round-trips.
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    report.dataset, row.transform, report.model, row.accuracy, row.count,
                    report.seed
                ));
            }
            out
        }
        ReportFormat::Human => {
            let mut out = String::new();
            out.push_str(&format!(
                "model: {}  (checkpoint {})\n",
                report.model, report.checkpoint_hash
            ));
            out.push_str(&format!("dataset: {}  seed: {}\n", report.dataset, report.seed));
            for (k, v) in &report.provenance {
                out.push_str(&format!("  {k}: {v}\n"));
            }
            out.push_str(&format!("  {:-<44}\n", ""));
            out.push_str(&format!("  {:<24} {:>9} {:>8}\n", "TRANSFORMATION", "ACCURACY", "COUNT"));
            for row in &report.rows {
                out.push_str(&format!(
                    "  {:<24} {:>8.2}% {:>8}\n",
                    row.transform,
                    row.accuracy * 100.0,
                    row.count
                ));
            }
            out
        }
    }
}

/// Parse the machine format back into a report.
pub fn parse_machine_report(text: &str) -> Result<EvalReport> {
    let mut model = String::new();
    let mut checkpoint_hash = String::new();
    let mut dataset = String::new();
    let mut seed = 0u64;
    let mut provenance = Vec::new();
    let mut rows = Vec::new();
    let mut saw_header = false;

    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# ") {
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header line '{line}'")))?;
            match k {
                "model" => model = v.to_string(),
                "checkpoint_hash" => checkpoint_hash = v.to_string(),
                "dataset" => dataset = v.to_string(),
                "seed" => {
                    seed = v
                        .parse()
                        .map_err(|_| Error::Format(format!("bad seed '{v}'")))?
                }
                other => {
                    let key = other
                        .strip_prefix("prov.")
                        .ok_or_else(|| Error::Format(format!("unknown header key '{other}'")))?;
                    provenance.push((key.to_string(), v.to_string()));
                }
            }
        } else if line == "dataset,transform,model,accuracy,count,seed" {
            saw_header = true;
        } else if !line.is_empty() {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 6 {
                return Err(Error::Format(format!("bad data row '{line}'")));
            }
            rows.push(ReportRow {
                transform: parts[1].to_string(),
                accuracy: parts[3]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad accuracy '{}'", parts[3])))?,
                count: parts[4]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad count '{}'", parts[4])))?,
            });
        }
    }
    if !saw_header {
        return Err(Error::Format("machine report lacks the column header".into()));
    }
    Ok(EvalReport { model, checkpoint_hash, dataset, seed, provenance, rows })
}

pub fn render_delta_table(deltas: &[DeltaRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "  {:<24} {:>8} {:>11} {:>8}\n",
        "TRANSFORMATION", "RAW", "FINE-TUNED", "DELTA"
    ));
    for d in deltas {
        out.push_str(&format!(
            "  {:<24} {:>7.2}% {:>10.2}% {:>+7.2}{}\n",
            d.transform,
            d.raw * 100.0,
            d.fine_tuned * 100.0,
            d.delta * 100.0,
            if d.decreased { "  (decreased)" } else { "" }
        ));
    }
    out
}
