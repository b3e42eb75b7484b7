//! Deterministic stand-in digit corpus.
//!
//! The pipeline consumes MNIST IDX files, but this repository cannot assume
//! the official download exists. This module draws stroke-skeleton digits
//! with seeded variation (affine pose, control-point jitter, stroke width)
//! and rasterizes them into MNIST-shaped rasters: near-binary ink on black,
//! anti-aliased edges, mass-centered in the 28x28 frame, class counts
//! mirroring the official label histograms. Files are written in real IDX
//! format, so everything downstream treats the two corpora identically.

use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{self, Dataset, Image, Provenance, IMG_PIXELS, IMG_SIDE};
use crate::error::Result;
use crate::rng::Rng;

/// Bumped whenever generated pixels change for a given seed; cache keys
/// derived from a corpus should include it.
pub const GENERATOR_VERSION: u32 = 8;

/// Official MNIST training-set label histogram.
pub const TRAIN_HISTOGRAM: [usize; 10] =
    [5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949];
/// Official MNIST test-set label histogram.
pub const TEST_HISTOGRAM: [usize; 10] =
    [980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009];

type Point = (f64, f64);

/// One pen stroke as a dense polyline in the unit square, y pointing down.
struct Stroke {
    points: Vec<Point>,
}

fn polyline(raw: &[Point], rng: &mut Rng, jitter: f64) -> Stroke {
    // Jitter the control points, then subdivide for smooth curves.
    let jittered: Vec<Point> = raw
        .iter()
        .map(|&(x, y)| (x + rng.normal(0.0, jitter), y + rng.normal(0.0, jitter)))
        .collect();
    let mut pts = jittered;
    for _ in 0..3 {
        pts = chaikin(&pts);
    }
    Stroke { points: pts }
}

fn closed_loop(cx: f64, cy: f64, rx: f64, ry: f64, rng: &mut Rng, jitter: f64) -> Stroke {
    let n = 14;
    let phase = rng.range_f64(0.0, std::f64::consts::TAU);
    let mut pts: Vec<Point> = (0..=n)
        .map(|i| {
            let a = phase + std::f64::consts::TAU * i as f64 / n as f64;
            let wobble = 1.0 + rng.normal(0.0, jitter * 2.0);
            (cx + rx * wobble * a.cos(), cy + ry * wobble * a.sin())
        })
        .collect();
    pts.push(pts[0]);
    let mut smoothed = pts;
    for _ in 0..2 {
        smoothed = chaikin(&smoothed);
    }
    Stroke { points: smoothed }
}

/// Chaikin corner cutting.
fn chaikin(pts: &[Point]) -> Vec<Point> {
    if pts.len() < 3 {
        return pts.to_vec();
    }
    let mut out = Vec::with_capacity(pts.len() * 2);
    out.push(pts[0]);
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        out.push((0.75 * a.0 + 0.25 * b.0, 0.75 * a.1 + 0.25 * b.1));
        out.push((0.25 * a.0 + 0.75 * b.0, 0.25 * a.1 + 0.75 * b.1));
    }
    out.push(*pts.last().unwrap());
    out
}

/// Skeleton strokes for one sample of `digit`, in the unit square.
fn skeleton(digit: u8, rng: &mut Rng) -> Vec<Stroke> {
    let j = 0.048;
    match digit {
        0 => {
            let rx = rng.range_f64(0.26, 0.34);
            let ry = rng.range_f64(0.36, 0.44);
            vec![closed_loop(0.5, 0.5, rx, ry, rng, j)]
        }
        1 => {
            let lean = rng.range_f64(-0.08, 0.10);
            let mut strokes = vec![polyline(
                &[(0.5 + lean, 0.10), (0.5, 0.50), (0.5 - lean * 0.6, 0.90)],
                rng,
                j,
            )];
            if rng.next_f64() < 0.55 {
                strokes.push(polyline(&[(0.34, 0.28), (0.5 + lean, 0.10)], rng, j));
            }
            if rng.next_f64() < 0.25 {
                strokes.push(polyline(&[(0.34, 0.90), (0.66, 0.90)], rng, j));
            }
            strokes
        }
        2 => vec![
            polyline(
                &[
                    (0.26, 0.30),
                    (0.34, 0.14),
                    (0.54, 0.08),
                    (0.72, 0.16),
                    (0.74, 0.34),
                    (0.58, 0.55),
                    (0.38, 0.72),
                    (0.26, 0.88),
                ],
                rng,
                j,
            ),
            polyline(&[(0.26, 0.88), (0.52, 0.86), (0.76, 0.88)], rng, j),
        ],
        3 => vec![
            polyline(
                &[
                    (0.30, 0.18),
                    (0.48, 0.08),
                    (0.68, 0.16),
                    (0.70, 0.32),
                    (0.52, 0.45),
                ],
                rng,
                j,
            ),
            polyline(
                &[
                    (0.52, 0.45),
                    (0.72, 0.56),
                    (0.72, 0.76),
                    (0.52, 0.90),
                    (0.30, 0.82),
                ],
                rng,
                j,
            ),
        ],
        4 => {
            if rng.next_f64() < 0.7 {
                vec![
                    polyline(&[(0.58, 0.08), (0.30, 0.42), (0.24, 0.58)], rng, j),
                    polyline(&[(0.24, 0.58), (0.78, 0.58)], rng, j),
                    polyline(&[(0.62, 0.32), (0.62, 0.92)], rng, j),
                ]
            } else {
                // Closed-top variant.
                vec![
                    polyline(&[(0.32, 0.10), (0.30, 0.52)], rng, j),
                    polyline(&[(0.30, 0.52), (0.74, 0.52)], rng, j),
                    polyline(&[(0.66, 0.10), (0.66, 0.92)], rng, j),
                ]
            }
        }
        5 => vec![
            polyline(&[(0.70, 0.10), (0.34, 0.10)], rng, j),
            polyline(&[(0.34, 0.10), (0.30, 0.46)], rng, j),
            polyline(
                &[
                    (0.30, 0.46),
                    (0.56, 0.40),
                    (0.74, 0.54),
                    (0.72, 0.76),
                    (0.52, 0.90),
                    (0.28, 0.82),
                ],
                rng,
                j,
            ),
        ],
        6 => {
            let r = rng.range_f64(0.17, 0.22);
            vec![
                polyline(
                    &[(0.64, 0.08), (0.46, 0.26), (0.34, 0.48), (0.30, 0.68)],
                    rng,
                    j,
                ),
                closed_loop(0.50, 0.70, r + 0.02, r, rng, j),
            ]
        }
        7 => {
            let mut strokes = vec![
                polyline(&[(0.24, 0.14), (0.50, 0.12), (0.76, 0.12)], rng, j),
                polyline(&[(0.76, 0.12), (0.58, 0.48), (0.42, 0.90)], rng, j),
            ];
            if rng.next_f64() < 0.3 {
                strokes.push(polyline(&[(0.36, 0.50), (0.64, 0.50)], rng, j));
            }
            strokes
        }
        8 => {
            let r1 = rng.range_f64(0.15, 0.19);
            let r2 = rng.range_f64(0.18, 0.23);
            vec![
                closed_loop(0.50, 0.28, r1 + 0.02, r1, rng, j),
                closed_loop(0.50, 0.70, r2, r2, rng, j),
            ]
        }
        9 => {
            let r = rng.range_f64(0.16, 0.21);
            vec![
                closed_loop(0.52, 0.32, r + 0.02, r, rng, j),
                polyline(
                    &[(0.52 + r, 0.34), (0.68, 0.56), (0.58, 0.90)],
                    rng,
                    j,
                ),
            ]
        }
        _ => unreachable!("digit class 0..=9"),
    }
}

fn dist_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let (px, py) = p;
    let (ax, ay) = a;
    let (bx, by) = b;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx) * (px - cx) + (py - cy) * (py - cy)).sqrt()
}

fn rasterize(strokes: &[Stroke], radius: f64, gain: f64) -> Vec<f64> {
    // Signed-distance rasterizer with a ~1.1px anti-aliasing band.
    let aa = 1.1;
    let mut out = vec![0.0; IMG_PIXELS];
    for (i, v) in out.iter_mut().enumerate() {
        let px = (i % IMG_SIDE) as f64 + 0.5;
        let py = (i / IMG_SIDE) as f64 + 0.5;
        let mut d = f64::INFINITY;
        for s in strokes {
            for w in s.points.windows(2) {
                d = d.min(dist_to_segment((px, py), w[0], w[1]));
                if d == 0.0 {
                    break;
                }
            }
        }
        let coverage = ((radius + aa * 0.5 - d) / aa).clamp(0.0, 1.0);
        *v = (coverage * gain * 255.0).round().clamp(0.0, 255.0);
    }
    out
}

fn ink_center(pixels: &[f64]) -> Point {
    let mut total = 0.0;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (i, &v) in pixels.iter().enumerate() {
        total += v;
        sx += v * (i % IMG_SIDE) as f64;
        sy += v * (i / IMG_SIDE) as f64;
    }
    if total == 0.0 {
        (13.5, 13.5)
    } else {
        (sx / total, sy / total)
    }
}

/// Render one digit sample.
pub fn generate_image(digit: u8, rng: &mut Rng) -> Vec<f64> {
    let strokes = skeleton(digit, rng);

    // Pose: rotation, shear and anisotropic scale around the glyph center.
    let angle = rng.normal(0.0, 0.16).clamp(-0.36, 0.36);
    let shear = rng.normal(0.0, 0.15).clamp(-0.38, 0.38);
    let scale_x = rng.range_f64(0.62, 1.06);
    let scale_y = rng.range_f64(0.68, 1.06);
    let (sin, cos) = angle.sin_cos();
    // A wavy low-frequency warp: real pen strokes are not straight.
    let wave_amp = rng.range_f64(0.0, 0.045);
    let wave_freq = rng.range_f64(3.0, 7.0);
    let wave_phase = rng.range_f64(0.0, std::f64::consts::TAU);
    // Unit square -> ~20x20 px box, MNIST's content region.
    let box_px = 19.0;

    let mapped: Vec<Stroke> = strokes
        .iter()
        .map(|s| Stroke {
            points: s
                .points
                .iter()
                .map(|&(x, y)| {
                    let x = x + wave_amp * (wave_freq * y + wave_phase).sin();
                    let y = y + 0.6 * wave_amp * (wave_freq * x - wave_phase).cos();
                    let (cx, cy) = (x - 0.5, y - 0.5);
                    let (cx, cy) = (cx + shear * cy, cy);
                    let (cx, cy) = (cx * scale_x, cy * scale_y);
                    let (cx, cy) = (cx * cos - cy * sin, cx * sin + cy * cos);
                    (cx * box_px + 14.0, cy * box_px + 14.0)
                })
                .collect(),
        })
        .collect();

    let radius = rng.range_f64(0.95, 2.05);
    let gain = rng.range_f64(0.92, 1.0);

    // Two passes: rasterize, re-center by center of mass with small jitter.
    let first = rasterize(&mapped, radius, gain);
    let (mx, my) = ink_center(&first);
    let tx = 13.5 - mx + rng.normal(0.0, 1.0);
    let ty = 13.5 - my + rng.normal(0.0, 1.0);
    let centered: Vec<Stroke> = mapped
        .iter()
        .map(|s| Stroke {
            points: s.points.iter().map(|&(x, y)| (x + tx, y + ty)).collect(),
        })
        .collect();
    let mut pixels = rasterize(&centered, radius, gain);
    apply_artifacts(&mut pixels, rng);
    // Scanner grain over the whole frame; zero for about a third of images.
    let grain = if rng.next_f64() < 0.35 { 0.0 } else { rng.range_f64(2.0, 14.0) };
    if grain > 0.0 {
        for v in &mut pixels {
            *v = (*v + rng.normal(0.0, grain)).round().clamp(0.0, 255.0);
        }
    }
    pixels
}

/// Scanner-style blemishes: occasional ink specks and stroke gaps. They make
/// classes overlap a little, the way real scans do.
fn apply_artifacts(pixels: &mut [f64], rng: &mut Rng) {
    if rng.next_f64() < 0.45 {
        let count = 1 + rng.below(3);
        for _ in 0..count {
            let cx = rng.range_f64(2.0, 26.0);
            let cy = rng.range_f64(2.0, 26.0);
            let r = rng.range_f64(0.4, 1.1);
            let ink = rng.range_f64(120.0, 255.0);
            stamp(pixels, cx, cy, r, |old, cov| old.max(cov * ink));
        }
    }
    let gaps = if rng.next_f64() < 0.4 { 1 + rng.below(2) } else { 0 };
    for _ in 0..gaps {
        // A pen-lift gap: erase a small disc somewhere with ink under it.
        for _ in 0..40 {
            let cx = rng.range_f64(4.0, 24.0);
            let cy = rng.range_f64(4.0, 24.0);
            let probe = pixels[(cy as usize) * IMG_SIDE + cx as usize];
            if probe > 128.0 {
                let r = rng.range_f64(0.7, 1.5);
                stamp(pixels, cx, cy, r, |old, cov| old * (1.0 - cov));
                break;
            }
        }
    }
}

/// Apply `f(old, coverage)` on a soft disc of radius `r` at (cx, cy).
fn stamp(pixels: &mut [f64], cx: f64, cy: f64, r: f64, f: impl Fn(f64, f64) -> f64) {
    let aa = 0.9;
    for (i, v) in pixels.iter_mut().enumerate() {
        let px = (i % IMG_SIDE) as f64 + 0.5;
        let py = (i / IMG_SIDE) as f64 + 0.5;
        let d = ((px - cx) * (px - cx) + (py - cy) * (py - cy)).sqrt();
        let cov = ((r + aa * 0.5 - d) / aa).clamp(0.0, 1.0);
        if cov > 0.0 {
            *v = f(*v, cov).round().clamp(0.0, 255.0);
        }
    }
}

/// Deterministic in-memory dataset with the requested per-class counts.
pub fn generate_dataset(
    histogram: &[usize; 10],
    seed: u64,
    name: &str,
    provenance: Provenance,
) -> Result<Dataset> {
    let total: usize = histogram.iter().sum();
    let mut labels = Vec::with_capacity(total);
    for (digit, &count) in histogram.iter().enumerate() {
        labels.extend(std::iter::repeat_n(digit as u8, count));
    }
    Rng::new(seed).shuffle(&mut labels);

    let images: Vec<Image> = labels
        .par_iter()
        .enumerate()
        .map(|(idx, &label)| {
            let mut rng = Rng::for_index(seed, idx as u64);
            Image::new(generate_image(label, &mut rng), crate::dataset::Scale::Byte, Some(label))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(name, provenance, images)
}

/// Small balanced dataset for tests: `per_class` samples of each digit.
pub fn small_dataset(per_class: usize, seed: u64) -> Dataset {
    let hist = [per_class; 10];
    generate_dataset(&hist, seed, "synth-small", Provenance::MnistTrain)
        .expect("synthetic generation cannot fail")
}

/// Write the full train/test corpus as IDX files into `dir`, mirroring the
/// official file names and label histograms.
pub fn write_corpus(dir: &Path, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (hist, images_name, labels_name, salt) in [
        (
            &TRAIN_HISTOGRAM,
            "train-images-idx3-ubyte",
            "train-labels-idx1-ubyte",
            0x7261_696eu64, // distinct streams for the two splits
        ),
        (
            &TEST_HISTOGRAM,
            "t10k-images-idx3-ubyte",
            "t10k-labels-idx1-ubyte",
            0x7465_7374u64,
        ),
    ] {
        let ds = generate_dataset(hist, seed ^ salt, "synth", Provenance::MnistTrain)?;
        let pixel_rows: Vec<Vec<u8>> = ds
            .images()
            .iter()
            .map(|img| img.pixels().iter().map(|&v| v as u8).collect())
            .collect();
        dataset::write_idx_images(&dir.join(images_name), &pixel_rows)?;
        dataset::write_idx_labels(&dir.join(labels_name), &ds.labels())?;
    }
    Ok(())
}
