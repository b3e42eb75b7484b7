//! Acquisition-mimicking image transformations.
//!
//! All transforms are pure 28x28 -> 28x28 maps. Translation, noise, blur,
//! crop/resize and the combination pipeline work on Unit-scale pixels;
//! Otsu thresholding and binarization are defined on Byte-scale values.
//! Noise is seeded per image from (master seed, image index) so parallel
//! evaluation order never changes results.

use crate::dataset::{Image, Scale, IMG_PIXELS, IMG_SIDE};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Crop anchor inside the 28x28 frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// Fractional offset ((28-crop)/2, (28-crop)/2); for a 27px crop that is
    /// half a pixel, resolved by bicubic sampling rather than flooring.
    Center,
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Region {
    pub fn name(self) -> &'static str {
        match self {
            Region::Center => "center",
            Region::TopLeft => "top-left",
            Region::TopRight => "top-right",
            Region::BottomLeft => "bottom-left",
            Region::BottomRight => "bottom-right",
        }
    }

    /// (row, col) offset of the crop window for a `crop`-sized window.
    fn offset(self, crop: usize) -> (f64, f64) {
        let gap = (IMG_SIDE - crop) as f64;
        match self {
            Region::Center => (gap / 2.0, gap / 2.0),
            Region::TopLeft => (0.0, 0.0),
            Region::TopRight => (0.0, gap),
            Region::BottomLeft => (gap, 0.0),
            Region::BottomRight => (gap, gap),
        }
    }
}

/// One registered transformation with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformSpec {
    Identity,
    Translate { shift: usize },
    Noise { mean: f64, stddev: f64 },
    Blur { width: usize, height: usize },
    CropResize { crop: usize, region: Region },
    Combination,
    Binarize,
}

impl TransformSpec {
    /// Registry row / CLI flag name. One vocabulary end to end.
    pub fn name(&self) -> &'static str {
        match self {
            TransformSpec::Identity => "none",
            TransformSpec::Translate { .. } => "translation",
            TransformSpec::Noise { .. } => "noise",
            TransformSpec::Blur { .. } => "blur",
            TransformSpec::CropResize { .. } => "crop-resize",
            TransformSpec::Combination => "combination",
            TransformSpec::Binarize => "binarize",
        }
    }

    /// Default-parameterized transform for a registry name.
    pub fn from_name(name: &str) -> Result<TransformSpec> {
        Ok(match name {
            "none" => TransformSpec::Identity,
            "translation" => TransformSpec::Translate { shift: 1 },
            "noise" => TransformSpec::Noise { mean: 0.0, stddev: 0.25 },
            "blur" => TransformSpec::Blur { width: 2, height: 1 },
            "crop-resize" => TransformSpec::CropResize { crop: 27, region: Region::Center },
            "combination" => TransformSpec::Combination,
            "binarize" => TransformSpec::Binarize,
            other => {
                return Err(Error::Config(format!(
                    "unknown transform '{other}'; valid: {}",
                    REGISTRY_NAMES.join(", ")
                )))
            }
        })
    }

    /// Provenance line embedded in reports: kind plus named parameters.
    pub fn text(&self) -> String {
        match self {
            TransformSpec::Identity => "none".into(),
            TransformSpec::Translate { shift } => format!("translation shift={shift}"),
            TransformSpec::Noise { mean, stddev } => {
                format!("noise mean={mean} stddev={stddev}")
            }
            TransformSpec::Blur { width, height } => {
                format!("blur width={width} height={height}")
            }
            TransformSpec::CropResize { crop, region } => {
                format!("crop-resize crop={crop} region={}", region.name())
            }
            TransformSpec::Combination => {
                "combination order=translation,noise,blur,crop-resize shift=1 mean=0 stddev=0.25 \
                 blur=2x1 crop=27 region=center"
                    .into()
            }
            TransformSpec::Binarize => "binarize method=otsu".into(),
        }
    }
}

pub const REGISTRY_NAMES: [&str; 7] = [
    "none",
    "translation",
    "noise",
    "blur",
    "crop-resize",
    "combination",
    "binarize",
];

/// Apply a transform; noise-bearing kinds derive their generator from
/// (master_seed, image_index).
pub fn apply(
    spec: &TransformSpec,
    image: &Image,
    master_seed: u64,
    image_index: u64,
) -> Result<Image> {
    match spec {
        TransformSpec::Identity => Ok(image.to_unit()),
        TransformSpec::Translate { shift } => translate_right(&image.to_unit(), *shift),
        TransformSpec::Noise { mean, stddev } => {
            let mut rng = Rng::for_index(master_seed, image_index);
            add_noise(&image.to_unit(), *mean, *stddev, &mut rng)
        }
        TransformSpec::Blur { width, height } => blur(&image.to_unit(), *width, *height),
        TransformSpec::CropResize { crop, region } => {
            crop_resize(&image.to_unit(), *crop, *region)
        }
        TransformSpec::Combination => combination(&image.to_unit(), master_seed, image_index),
        TransformSpec::Binarize => binarize(image),
    }
}

/// Shift right by `shift` columns, filling vacated columns with black.
pub fn translate_right(image: &Image, shift: usize) -> Result<Image> {
    if shift >= IMG_SIDE {
        return Err(Error::Contract(format!(
            "translation shift {shift} must be below image width {IMG_SIDE}"
        )));
    }
    let mut out = vec![0.0; IMG_PIXELS];
    for row in 0..IMG_SIDE {
        for col in shift..IMG_SIDE {
            out[row * IMG_SIDE + col] = image.get(row, col - shift);
        }
    }
    Image::new(out, image.scale(), image.label())
}

/// Additive per-pixel Gaussian noise, clipped back to [0, 1].
pub fn add_noise(image: &Image, mean: f64, stddev: f64, rng: &mut Rng) -> Result<Image> {
    if image.scale() != Scale::Unit {
        return Err(Error::Contract("add_noise expects a Unit-scale image".into()));
    }
    if stddev < 0.0 {
        return Err(Error::Contract(format!("noise stddev {stddev} must be >= 0")));
    }
    let out: Vec<f64> = image
        .pixels()
        .iter()
        .map(|&v| (v + rng.normal(mean, stddev)).clamp(0.0, 1.0))
        .collect();
    Image::new(out, Scale::Unit, image.label())
}

/// Normalized box filter. The anchor sits at ((w-1)/2, (h-1)/2), so a (2,1)
/// kernel averages each pixel with its right neighbour; borders replicate.
pub fn blur(image: &Image, width: usize, height: usize) -> Result<Image> {
    if width < 1 || height < 1 {
        return Err(Error::Contract(format!(
            "blur kernel {width}x{height} must be at least 1x1"
        )));
    }
    if width > IMG_SIDE || height > IMG_SIDE {
        return Err(Error::Contract(format!(
            "blur kernel {width}x{height} larger than {IMG_SIDE}x{IMG_SIDE} image"
        )));
    }
    let (ax, ay) = ((width as isize - 1) / 2, (height as isize - 1) / 2);
    let norm = 1.0 / (width * height) as f64;
    let side = IMG_SIDE as isize;
    let mut out = vec![0.0; IMG_PIXELS];
    for row in 0..side {
        for col in 0..side {
            let mut sum = 0.0;
            for dy in 0..height as isize {
                for dx in 0..width as isize {
                    let r = (row - ay + dy).clamp(0, side - 1) as usize;
                    let c = (col - ax + dx).clamp(0, side - 1) as usize;
                    sum += image.get(r, c);
                }
            }
            out[(row * side + col) as usize] = sum * norm;
        }
    }
    Image::new(out, image.scale(), image.label())
}

/// Keys cubic kernel weights (a = -0.75) for fractional position t in [0, 1),
/// taps at offsets -1..=2.
#[inline]
fn cubic_weights(t: f64) -> [f64; 4] {
    const A: f64 = -0.75;
    let w = |x: f64| -> f64 {
        let ax = x.abs();
        if ax <= 1.0 {
            ((A + 2.0) * ax - (A + 3.0)) * ax * ax + 1.0
        } else if ax < 2.0 {
            ((A * ax - 5.0 * A) * ax + 8.0 * A) * ax - 4.0 * A
        } else {
            0.0
        }
    };
    [w(-1.0 - t), w(-t), w(1.0 - t), w(2.0 - t)]
}

/// Bicubic sample of a row-major `h` x `w` buffer at continuous (y, x),
/// replicating edges.
fn bicubic_sample(src: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y0 = y.floor();
    let x0 = x.floor();
    let wy = cubic_weights(y - y0);
    let wx = cubic_weights(x - x0);
    let mut acc = 0.0;
    for (j, wyj) in wy.iter().enumerate() {
        let row = (y0 as isize + j as isize - 1).clamp(0, h as isize - 1) as usize;
        let mut line = 0.0;
        for (i, wxi) in wx.iter().enumerate() {
            let col = (x0 as isize + i as isize - 1).clamp(0, w as isize - 1) as usize;
            line += wxi * src[row * w + col];
        }
        acc += wyj * line;
    }
    acc
}

/// Crop a `crop` x `crop` window at `region` and bicubically resample it back
/// to 28x28. Integer-offset windows are extracted first so edge replication
/// sees only the window; the fractional center window samples the full frame
/// at half-pixel offsets.
pub fn crop_resize(image: &Image, crop: usize, region: Region) -> Result<Image> {
    if crop == 0 || crop > IMG_SIDE {
        return Err(Error::Contract(format!(
            "crop size {crop} must be in 1..={IMG_SIDE}"
        )));
    }
    let (off_y, off_x) = region.offset(crop);
    let scale = crop as f64 / IMG_SIDE as f64;
    let mut out = vec![0.0; IMG_PIXELS];

    let integral = off_y.fract() == 0.0 && off_x.fract() == 0.0;
    if integral {
        let (oy, ox) = (off_y as usize, off_x as usize);
        let mut window = vec![0.0; crop * crop];
        for r in 0..crop {
            for c in 0..crop {
                window[r * crop + c] = image.get(oy + r, ox + c);
            }
        }
        for r in 0..IMG_SIDE {
            let sy = (r as f64 + 0.5) * scale - 0.5;
            for c in 0..IMG_SIDE {
                let sx = (c as f64 + 0.5) * scale - 0.5;
                out[r * IMG_SIDE + c] = bicubic_sample(&window, crop, crop, sy, sx);
            }
        }
    } else {
        for r in 0..IMG_SIDE {
            let sy = off_y + (r as f64 + 0.5) * scale - 0.5;
            for c in 0..IMG_SIDE {
                let sx = off_x + (c as f64 + 0.5) * scale - 0.5;
                out[r * IMG_SIDE + c] =
                    bicubic_sample(image.pixels(), IMG_SIDE, IMG_SIDE, sy, sx);
            }
        }
    }
    let (lo, hi) = match image.scale() {
        Scale::Unit => (0.0, 1.0),
        Scale::Byte => (0.0, 255.0),
    };
    for v in &mut out {
        *v = v.clamp(lo, hi);
    }
    Image::new(out, image.scale(), image.label())
}

/// The full acquisition pipeline: translation, noise, blur, crop and resize,
/// in that order.
pub fn combination(image: &Image, master_seed: u64, image_index: u64) -> Result<Image> {
    let mut rng = Rng::for_index(master_seed, image_index);
    let step = translate_right(&image.to_unit(), 1)?;
    let step = add_noise(&step, 0.0, 0.25, &mut rng)?;
    let step = blur(&step, 2, 1)?;
    crop_resize(&step, 27, Region::Center)
}

/// Quantized Byte-scale values (the histogram domain for Otsu).
fn byte_bins(image: &Image) -> Vec<u8> {
    image
        .to_byte()
        .pixels()
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Otsu's threshold: the t in 0..=255 maximizing between-class variance of
/// the {<= t, > t} split, smallest t on ties.
pub fn otsu_threshold(image: &Image) -> Result<u8> {
    let bins = byte_bins(image);
    let mut hist = [0u32; 256];
    for &b in &bins {
        hist[b as usize] += 1;
    }
    if hist.iter().filter(|&&h| h > 0).count() < 2 {
        return Err(Error::Degenerate(
            "otsu threshold needs at least two distinct pixel values".into(),
        ));
    }
    let total = bins.len() as f64;
    let grand_sum: f64 = hist.iter().enumerate().map(|(v, &h)| v as f64 * h as f64).sum();

    let mut best_t = 0u8;
    let mut best_var = f64::NEG_INFINITY;
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    for (t, &count) in hist.iter().enumerate() {
        w0 += count as f64;
        sum0 += t as f64 * count as f64;
        if w0 == 0.0 {
            continue;
        }
        let w1 = total - w0;
        if w1 == 0.0 {
            break;
        }
        let mu0 = sum0 / w0;
        let mu1 = (grand_sum - sum0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_t = t as u8;
        }
    }
    Ok(best_t)
}

/// Binarize against the Otsu threshold; output is Byte-scale {0, 255}.
pub fn binarize(image: &Image) -> Result<Image> {
    let t = otsu_threshold(image)?;
    let out: Vec<f64> = byte_bins(image)
        .iter()
        .map(|&b| if b > t { 255.0 } else { 0.0 })
        .collect();
    Image::new(out, Scale::Byte, image.label())
}
