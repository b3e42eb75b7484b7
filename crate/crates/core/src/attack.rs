//! FGS and FGV adversarial example generation with minimal-epsilon search.
//!
//! Both attacks take the loss gradient at the original image once, then
//! sweep the step size linearly until the perturbed image flips the
//! prediction. FGS moves every pixel by +-epsilon (sign of the gradient,
//! sign(0) = 0); FGV adds epsilon times the raw gradient. Perturbed pixels
//! are always clipped back to the valid range.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dataset::{Dataset, Image, Provenance, Scale};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackMethod {
    Fgs,
    Fgv,
}

impl AttackMethod {
    pub fn name(self) -> &'static str {
        match self {
            AttackMethod::Fgs => "fgs",
            AttackMethod::Fgv => "fgv",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "fgs" => Ok(AttackMethod::Fgs),
            "fgv" => Ok(AttackMethod::Fgv),
            other => Err(Error::Config(format!(
                "unknown attack method '{other}'; valid: fgs, fgv"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub method: AttackMethod,
    pub eps_start: f64,
    pub eps_step: f64,
    pub eps_max: f64,
    /// FGV only: the returned image uses multiplier * minimal epsilon.
    pub fgv_multiplier: u32,
    /// Perturbed pixels are clipped to the valid range; images outside it
    /// are not representable, so `false` is rejected by `validate`.
    pub clip: bool,
}

impl AttackConfig {
    pub fn fgs_default() -> Self {
        AttackConfig {
            method: AttackMethod::Fgs,
            eps_start: 0.01,
            eps_step: 0.01,
            eps_max: 1.0,
            fgv_multiplier: 1,
            clip: true,
        }
    }

    /// FGV multiplies the raw gradient, whose per-pixel magnitude is far
    /// below 1, so its sweep covers a much wider range.
    pub fn fgv_default() -> Self {
        AttackConfig {
            method: AttackMethod::Fgv,
            eps_start: 0.25,
            eps_step: 0.25,
            eps_max: 60.0,
            fgv_multiplier: 1,
            clip: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps_start <= 0.0 || self.eps_step <= 0.0 || self.eps_max < self.eps_start {
            return Err(Error::Contract(format!(
                "epsilon sweep start={} step={} max={} is not a valid sweep",
                self.eps_start, self.eps_step, self.eps_max
            )));
        }
        if self.fgv_multiplier < 1 || self.fgv_multiplier > 5 {
            return Err(Error::Contract(format!(
                "fgv multiplier {} outside 1..=5",
                self.fgv_multiplier
            )));
        }
        if !self.clip {
            return Err(Error::Contract(
                "unclipped perturbations are not representable as images".into(),
            ));
        }
        Ok(())
    }

    pub fn provenance_text(&self) -> String {
        format!(
            "{} sweep=({},{},{}) multiplier={}",
            self.method.name(),
            self.eps_start,
            self.eps_step,
            self.eps_max,
            self.fgv_multiplier
        )
    }
}

/// One successful attack.
#[derive(Debug, Clone)]
pub struct AdversarialRecord {
    pub original: Image,
    pub perturbed: Image,
    pub true_label: u8,
    pub adversarial_label: u8,
    pub epsilon: f64,
    /// Euclidean norm of the perturbation, Byte scale.
    pub l2: f64,
    /// Max absolute perturbation, Byte scale.
    pub linf: f64,
    pub method: AttackMethod,
    /// Index of the original image in the source dataset.
    pub source_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackOutcome {
    Found,
    NotFound,
    SkippedMisclassified,
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn perturb(unit_pixels: &[f64], direction: &[f64], epsilon: f64) -> Vec<f64> {
    unit_pixels
        .iter()
        .zip(direction)
        .map(|(&x, &d)| (x + epsilon * d).clamp(0.0, 1.0))
        .collect()
}

/// One FGS step at fixed epsilon: clip(x + eps * sign(grad J)).
pub fn fgs_step(image: &Image, model: &Model, epsilon: f64) -> Result<Image> {
    attack_step(image, model, epsilon, AttackMethod::Fgs)
}

/// One FGV step at fixed epsilon: clip(x + eps * grad J).
pub fn fgv_step(image: &Image, model: &Model, epsilon: f64) -> Result<Image> {
    attack_step(image, model, epsilon, AttackMethod::Fgv)
}

fn attack_step(image: &Image, model: &Model, epsilon: f64, method: AttackMethod) -> Result<Image> {
    if epsilon < 0.0 {
        return Err(Error::Contract(format!("epsilon {epsilon} must be >= 0")));
    }
    let label = image
        .label()
        .ok_or_else(|| Error::Contract("attack step needs a labeled image".into()))?;
    let unit = image.to_unit();
    let grad = model.input_gradient(&unit, label)?;
    let direction: Vec<f64> = match method {
        AttackMethod::Fgs => grad.data().iter().map(|&g| sign(g)).collect(),
        AttackMethod::Fgv => grad.data().to_vec(),
    };
    Image::new(perturb(unit.pixels(), &direction, epsilon), Scale::Unit, Some(label))
}

/// Candidates per forward pass during the sweep; a batch shares one graph.
const SWEEP_BATCH: usize = 16;

/// Sweep epsilon from the configured start until the perturbed image is
/// misclassified. Returns the record at the first flipping epsilon (scaled
/// by the FGV multiplier and re-verified when applicable).
///
/// Candidates are classified in batches, but the result is defined purely by
/// the linear sweep order: the first grid epsilon whose clipped image flips.
pub fn find_minimal_adversarial(
    image: &Image,
    model: &Model,
    config: &AttackConfig,
    source_index: usize,
) -> Result<(AttackOutcome, Option<AdversarialRecord>)> {
    config.validate()?;
    let label = image
        .label()
        .ok_or_else(|| Error::Contract("attack needs a labeled image".into()))?;
    let unit = image.to_unit();

    if model.predict(&unit)?.class != label {
        return Ok((AttackOutcome::SkippedMisclassified, None));
    }

    let grad = model.input_gradient(&unit, label)?;
    let direction: Vec<f64> = match config.method {
        AttackMethod::Fgs => grad.data().iter().map(|&g| sign(g)).collect(),
        AttackMethod::Fgv => grad.data().to_vec(),
    };

    let mut previous: Option<Vec<f64>> = None;
    let mut step_index = 0u64;
    loop {
        // Collect the next batch of distinct candidates on the epsilon grid.
        let mut epsilons = Vec::with_capacity(SWEEP_BATCH);
        let mut candidates: Vec<Image> = Vec::with_capacity(SWEEP_BATCH);
        let mut saturated = false;
        while candidates.len() < SWEEP_BATCH {
            let epsilon = config.eps_start + step_index as f64 * config.eps_step;
            if epsilon > config.eps_max * (1.0 + 1e-12) {
                break;
            }
            step_index += 1;
            let pixels = perturb(unit.pixels(), &direction, epsilon);
            // Once clipping saturates, larger epsilons reproduce the same
            // image; nothing past this point can flip if this one does not.
            if previous.as_deref() == Some(pixels.as_slice()) {
                saturated = true;
                break;
            }
            previous = Some(pixels.clone());
            epsilons.push(epsilon);
            candidates.push(Image::new(pixels, Scale::Unit, Some(label))?);
        }
        if candidates.is_empty() {
            return Ok((AttackOutcome::NotFound, None));
        }

        let logits = model.logits_batch(&candidates)?;
        for ((epsilon, img), row) in epsilons.iter().zip(&candidates).zip(&logits) {
            let predicted = crate::model::argmax(row);
            if predicted == label {
                continue;
            }
            // Minimal epsilon found; apply the FGV multiplier if configured.
            let (final_eps, final_img, final_class) =
                if config.method == AttackMethod::Fgv && config.fgv_multiplier > 1 {
                    let eps = epsilon * config.fgv_multiplier as f64;
                    let scaled = Image::new(
                        perturb(unit.pixels(), &direction, eps),
                        Scale::Unit,
                        Some(label),
                    )?;
                    let class = model.predict(&scaled)?.class;
                    (eps, scaled, class)
                } else {
                    (*epsilon, img.clone(), predicted)
                };
            if final_class == label {
                // The multiplied perturbation walked back across the boundary.
                return Ok((AttackOutcome::NotFound, None));
            }
            let (l2, linf) = perturbation_metrics(&unit, &final_img)?;
            return Ok((
                AttackOutcome::Found,
                Some(AdversarialRecord {
                    original: unit,
                    perturbed: final_img,
                    true_label: label,
                    adversarial_label: final_class,
                    epsilon: final_eps,
                    l2,
                    linf,
                    method: config.method,
                    source_index,
                }),
            ));
        }
        if saturated {
            return Ok((AttackOutcome::NotFound, None));
        }
    }
}

/// (L2, Linf) of `perturbed - original` on Byte-scale values.
pub fn perturbation_metrics(original: &Image, perturbed: &Image) -> Result<(f64, f64)> {
    if original.pixels().len() != perturbed.pixels().len() {
        return Err(Error::Contract(format!(
            "metric over mismatched images: {} vs {} pixels",
            original.pixels().len(),
            perturbed.pixels().len()
        )));
    }
    let a = original.to_byte();
    let b = perturbed.to_byte();
    let mut sum_sq = 0.0;
    let mut linf: f64 = 0.0;
    for (x, y) in a.pixels().iter().zip(b.pixels()) {
        let d = y - x;
        sum_sq += d * d;
        linf = linf.max(d.abs());
    }
    Ok((sum_sq.sqrt(), linf))
}

#[derive(Debug, Clone, Default)]
pub struct AttackStats {
    pub attempted: usize,
    pub skipped_misclassified: usize,
    pub not_found: usize,
    pub succeeded: usize,
    /// How many requested records could not be produced.
    pub shortfall: usize,
    pub mean_epsilon: f64,
}

/// Attack every image, then sample up to `count` successes with the seeded
/// generator. Records keep source-dataset order.
pub fn generate_attack_set(
    dataset: &Dataset,
    model: &Model,
    config: &AttackConfig,
    count: usize,
    seed: u64,
) -> Result<(Vec<AdversarialRecord>, AttackStats)> {
    config.validate()?;
    let outcomes: Vec<(AttackOutcome, Option<AdversarialRecord>)> = dataset
        .images()
        .par_iter()
        .enumerate()
        .map(|(idx, img)| find_minimal_adversarial(img, model, config, idx))
        .collect::<Result<Vec<_>>>()?;

    let mut stats = AttackStats { attempted: dataset.len(), ..AttackStats::default() };
    let mut successes = Vec::new();
    for (outcome, record) in outcomes {
        match outcome {
            AttackOutcome::Found => successes.push(record.unwrap()),
            AttackOutcome::NotFound => stats.not_found += 1,
            AttackOutcome::SkippedMisclassified => stats.skipped_misclassified += 1,
        }
    }

    let selected = if successes.len() > count {
        let mut order: Vec<usize> = (0..successes.len()).collect();
        Rng::new(seed).shuffle(&mut order);
        let mut keep: Vec<usize> = order[..count].to_vec();
        keep.sort_unstable();
        let mut picked = Vec::with_capacity(count);
        // Drain in ascending source order.
        let mut successes = successes.into_iter().map(Some).collect::<Vec<_>>();
        for idx in keep {
            picked.push(successes[idx].take().unwrap());
        }
        picked
    } else {
        stats.shortfall = count - successes.len();
        successes
    };
    stats.succeeded = selected.len();
    stats.mean_epsilon = if selected.is_empty() {
        0.0
    } else {
        selected.iter().map(|r| r.epsilon).sum::<f64>() / selected.len() as f64
    };
    Ok((selected, stats))
}

// ---------------------------------------------------------------------------
// persistence

pub fn metrics_sidecar_path(set_path: &Path) -> PathBuf {
    let mut os = set_path.as_os_str().to_owned();
    os.push(".metrics");
    PathBuf::from(os)
}

/// Write the perturbed images as a native dataset (true labels) plus the
/// text metrics sidecar: index,true,adv,epsilon,l2,linf per record.
pub fn save_attack_set(records: &[AdversarialRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Contract("refusing to save an empty attack set".into()));
    }
    let provenance = match records[0].method {
        AttackMethod::Fgs => Provenance::FgsAdv,
        AttackMethod::Fgv => Provenance::FgvAdv,
    };
    let images: Vec<Image> = records.iter().map(|r| r.perturbed.clone()).collect();
    let ds = Dataset::new(
        path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        provenance,
        images,
    )?;
    crate::dataset::save_dataset(&ds, path)?;

    let mut w = BufWriter::new(File::create(metrics_sidecar_path(path))?);
    writeln!(w, "index,true,adv,epsilon,l2,linf")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.source_index, r.true_label, r.adversarial_label, r.epsilon, r.l2, r.linf
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub source_index: usize,
    pub true_label: u8,
    pub adversarial_label: u8,
    pub epsilon: f64,
    pub l2: f64,
    pub linf: f64,
}

pub fn load_attack_set(path: &Path) -> Result<(Dataset, Vec<MetricsRow>)> {
    let ds = crate::dataset::load_dataset(path)?;
    let file = File::open(metrics_sidecar_path(path))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != "index,true,adv,epsilon,l2,linf" {
                return Err(Error::Format(format!("unexpected sidecar header '{line}'")));
            }
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(Error::Format(format!("sidecar row has {} fields", parts.len())));
        }
        let parse_err = |what: &str| Error::Format(format!("sidecar field {what} unparsable"));
        rows.push(MetricsRow {
            source_index: parts[0].parse().map_err(|_| parse_err("index"))?,
            true_label: parts[1].parse().map_err(|_| parse_err("true"))?,
            adversarial_label: parts[2].parse().map_err(|_| parse_err("adv"))?,
            epsilon: parts[3].parse().map_err(|_| parse_err("epsilon"))?,
            l2: parts[4].parse().map_err(|_| parse_err("l2"))?,
            linf: parts[5].parse().map_err(|_| parse_err("linf"))?,
        });
    }
    if rows.len() != ds.len() {
        return Err(Error::Consistency(format!(
            "{} images but {} metric rows",
            ds.len(),
            rows.len()
        )));
    }
    Ok((ds, rows))
}
