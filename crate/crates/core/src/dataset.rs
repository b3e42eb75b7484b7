//! MNIST-style dataset handling: IDX parsing, a small native container
//! format, and the fine-tuning corpus builder.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::transforms::{self, TransformSpec};

pub const IMG_SIDE: usize = 28;
pub const IMG_PIXELS: usize = IMG_SIDE * IMG_SIDE;

const IDX_IMAGES_MAGIC: u32 = 2051;
const IDX_LABELS_MAGIC: u32 = 2049;
const DATASET_MAGIC: &[u8; 8] = b"AQDS0001";

/// Pixel value convention of an [`Image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// Values in [0, 255].
    Byte,
    /// Values in [0, 1].
    Unit,
}

impl Scale {
    fn bounds(self) -> (f64, f64) {
        match self {
            Scale::Byte => (0.0, 255.0),
            Scale::Unit => (0.0, 1.0),
        }
    }

    fn tag(self) -> u8 {
        match self {
            Scale::Byte => 0,
            Scale::Unit => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Scale::Byte),
            1 => Ok(Scale::Unit),
            other => Err(Error::Format(format!("unknown scale tag {other}"))),
        }
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    MnistTrain,
    MnistTest,
    FgsAdv,
    FgvAdv,
    Transformed,
    Mixed,
}

impl Provenance {
    fn tag(self) -> u8 {
        match self {
            Provenance::MnistTrain => 0,
            Provenance::MnistTest => 1,
            Provenance::FgsAdv => 2,
            Provenance::FgvAdv => 3,
            Provenance::Transformed => 4,
            Provenance::Mixed => 5,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => Provenance::MnistTrain,
            1 => Provenance::MnistTest,
            2 => Provenance::FgsAdv,
            3 => Provenance::FgvAdv,
            4 => Provenance::Transformed,
            5 => Provenance::Mixed,
            other => return Err(Error::Format(format!("unknown provenance tag {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Provenance::MnistTrain => "mnist_train",
            Provenance::MnistTest => "mnist_test",
            Provenance::FgsAdv => "fgs_adv",
            Provenance::FgvAdv => "fgv_adv",
            Provenance::Transformed => "transformed",
            Provenance::Mixed => "mixed",
        }
    }
}

/// A 28x28 single-channel digit raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pixels: Vec<f64>,
    scale: Scale,
    label: Option<u8>,
}

impl Image {
    pub fn new(pixels: Vec<f64>, scale: Scale, label: Option<u8>) -> Result<Self> {
        if pixels.len() != IMG_PIXELS {
            return Err(Error::Contract(format!(
                "image needs {IMG_PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        let (lo, hi) = scale.bounds();
        if let Some(bad) = pixels.iter().find(|v| !v.is_finite() || **v < lo || **v > hi) {
            return Err(Error::Contract(format!(
                "pixel value {bad} outside {scale:?} bounds [{lo}, {hi}]"
            )));
        }
        if let Some(l) = label {
            if l > 9 {
                return Err(Error::Contract(format!("label {l} outside 0..=9")));
            }
        }
        Ok(Image { pixels, scale, label })
    }

    pub fn from_bytes(bytes: &[u8], label: Option<u8>) -> Result<Self> {
        Image::new(bytes.iter().map(|&b| b as f64).collect(), Scale::Byte, label)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * IMG_SIDE + col]
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn label(&self) -> Option<u8> {
        self.label
    }

    pub fn with_label(mut self, label: Option<u8>) -> Self {
        self.label = label;
        self
    }

    /// Exact division by 255; no-op if already Unit.
    pub fn to_unit(&self) -> Image {
        match self.scale {
            Scale::Unit => self.clone(),
            Scale::Byte => Image {
                pixels: self.pixels.iter().map(|v| v / 255.0).collect(),
                scale: Scale::Unit,
                label: self.label,
            },
        }
    }

    /// Exact multiplication by 255; no-op if already Byte.
    pub fn to_byte(&self) -> Image {
        match self.scale {
            Scale::Byte => self.clone(),
            Scale::Unit => Image {
                pixels: self.pixels.iter().map(|v| v * 255.0).collect(),
                scale: Scale::Byte,
                label: self.label,
            },
        }
    }

    /// Unit-scale pixel buffer regardless of stored scale.
    pub fn unit_pixels(&self) -> Vec<f64> {
        match self.scale {
            Scale::Unit => self.pixels.clone(),
            Scale::Byte => self.pixels.iter().map(|v| v / 255.0).collect(),
        }
    }
}

/// An ordered, label-complete collection of images sharing one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub provenance: Provenance,
    images: Vec<Image>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, provenance: Provenance, images: Vec<Image>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Contract("dataset must not be empty".into()));
        }
        let scale = images[0].scale();
        for (i, img) in images.iter().enumerate() {
            if img.scale() != scale {
                return Err(Error::Contract(format!(
                    "image {i} scale {:?} differs from dataset scale {scale:?}",
                    img.scale()
                )));
            }
            if img.label().is_none() {
                return Err(Error::Contract(format!("image {i} has no label")));
            }
        }
        Ok(Dataset { name: name.into(), provenance, images })
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn scale(&self) -> Scale {
        self.images[0].scale()
    }

    pub fn to_unit(&self) -> Dataset {
        Dataset {
            name: self.name.clone(),
            provenance: self.provenance,
            images: self.images.iter().map(Image::to_unit).collect(),
        }
    }

    pub fn labels(&self) -> Vec<u8> {
        self.images.iter().map(|i| i.label().unwrap()).collect()
    }

    pub fn label_histogram(&self) -> [usize; 10] {
        let mut hist = [0usize; 10];
        for img in &self.images {
            hist[img.label().unwrap() as usize] += 1;
        }
        hist
    }

    /// Pixels, labels, scale and provenance equal; names may differ.
    pub fn same_contents(&self, other: &Dataset) -> bool {
        self.provenance == other.provenance
            && self.images.len() == other.images.len()
            && self.images.iter().zip(&other.images).all(|(a, b)| {
                a.scale() == b.scale()
                    && a.label() == b.label()
                    && a.pixels()
                        .iter()
                        .zip(b.pixels())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

// ---------------------------------------------------------------------------
// IDX

fn read_u32_be(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}

/// Parse an MNIST IDX image/label file pair.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut ir = BufReader::new(File::open(images_path)?);
    let magic = read_u32_be(&mut ir)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{}: expected image magic {IDX_IMAGES_MAGIC}, got {magic}",
            images_path.display()
        )));
    }
    let count = read_u32_be(&mut ir)? as usize;
    let rows = read_u32_be(&mut ir)? as usize;
    let cols = read_u32_be(&mut ir)? as usize;
    if rows != IMG_SIDE || cols != IMG_SIDE {
        return Err(Error::Format(format!(
            "{}: expected {IMG_SIDE}x{IMG_SIDE} images, got {rows}x{cols}",
            images_path.display()
        )));
    }
    let mut pixel_bytes = vec![0u8; count * IMG_PIXELS];
    ir.read_exact(&mut pixel_bytes)?;

    let mut lr = BufReader::new(File::open(labels_path)?);
    let magic = read_u32_be(&mut lr)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{}: expected label magic {IDX_LABELS_MAGIC}, got {magic}",
            labels_path.display()
        )));
    }
    let label_count = read_u32_be(&mut lr)? as usize;
    if label_count != count {
        return Err(Error::Consistency(format!(
            "{count} images but {label_count} labels"
        )));
    }
    let mut labels = vec![0u8; count];
    lr.read_exact(&mut labels)?;
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Format(format!("label byte {bad} outside 0..=9")));
    }

    let images = pixel_bytes
        .chunks_exact(IMG_PIXELS)
        .zip(&labels)
        .map(|(chunk, &label)| Image::from_bytes(chunk, Some(label)))
        .collect::<Result<Vec<_>>>()?;

    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    let provenance = if name.contains("train") {
        Provenance::MnistTrain
    } else {
        Provenance::MnistTest
    };
    Dataset::new(name, provenance, images)
}

/// Write images in IDX format (byte-valued pixels expected).
pub fn write_idx_images(path: &Path, images: &[Vec<u8>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    w.write_all(&(images.len() as u32).to_be_bytes())?;
    w.write_all(&(IMG_SIDE as u32).to_be_bytes())?;
    w.write_all(&(IMG_SIDE as u32).to_be_bytes())?;
    for img in images {
        debug_assert_eq!(img.len(), IMG_PIXELS);
        w.write_all(img)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// native container

/// Serialize losslessly: magic, LE count, scale tag, provenance tag, then per
/// image a label byte and 784 LE f64 pixels.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&(dataset.len() as u32).to_le_bytes())?;
    w.write_all(&[dataset.scale().tag(), dataset.provenance.tag()])?;
    for img in dataset.images() {
        w.write_all(&[img.label().unwrap()])?;
        for px in img.pixels() {
            w.write_all(&px.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{}: header too short", path.display())))?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected {:?}",
            path.display(),
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(DATASET_MAGIC)
        )));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let count = u32::from_le_bytes(buf4) as usize;
    let mut tags = [0u8; 2];
    r.read_exact(&mut tags)?;
    let scale = Scale::from_tag(tags[0])?;
    let provenance = Provenance::from_tag(tags[1])?;

    let mut images = Vec::with_capacity(count);
    let mut px_buf = vec![0u8; IMG_PIXELS * 8];
    for _ in 0..count {
        let mut label = [0u8; 1];
        r.read_exact(&mut label)?;
        r.read_exact(&mut px_buf)?;
        let pixels: Vec<f64> = px_buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        images.push(Image::new(pixels, scale, Some(label[0]))?);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Dataset::new(name, provenance, images)
}

// ---------------------------------------------------------------------------
// fine-tuning corpus

pub const FINETUNE_TRAIN_SIZE: usize = 100_000;
pub const FINETUNE_VAL_SIZE: usize = 20_000;
const SHUFFLE_SALT: u64 = 0x5u64 << 60;

/// Pool the 60k clean images with one transformed copy each, shuffle, and
/// split 100k/20k. Pure function of (dataset, pipeline, seed).
pub fn build_finetune_corpus(
    train: &Dataset,
    pipeline: &TransformSpec,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if train.len() != 60_000 {
        return Err(Error::Contract(format!(
            "fine-tuning corpus wants the 60k training set, got {} images",
            train.len()
        )));
    }
    let clean = train.to_unit();
    let mut pool: Vec<Image> = Vec::with_capacity(2 * clean.len());
    pool.extend_from_slice(clean.images());
    for (idx, img) in clean.images().iter().enumerate() {
        pool.push(transforms::apply(pipeline, img, seed, idx as u64)?);
    }

    let mut order: Vec<usize> = (0..pool.len()).collect();
    Rng::new(seed ^ SHUFFLE_SALT).shuffle(&mut order);

    let train_imgs: Vec<Image> = order[..FINETUNE_TRAIN_SIZE]
        .iter()
        .map(|&i| pool[i].clone())
        .collect();
    let val_imgs: Vec<Image> = order[FINETUNE_TRAIN_SIZE..]
        .iter()
        .map(|&i| pool[i].clone())
        .collect();
    debug_assert_eq!(val_imgs.len(), FINETUNE_VAL_SIZE);

    Ok((
        Dataset::new("finetune-train", Provenance::Mixed, train_imgs)?,
        Dataset::new("finetune-val", Provenance::Mixed, val_imgs)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn tmp(name: &str) -> PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("aq-dataset-test-{}-{name}", std::process::id()));
        p
    }

    fn toy_image(fill: f64, label: u8) -> Image {
        Image::new(vec![fill; IMG_PIXELS], Scale::Byte, Some(label)).unwrap()
    }

    #[test]
    fn byte_unit_round_trip_tight() {
        let img = Image::new(
            (0..IMG_PIXELS).map(|i| (i % 256) as f64).collect(),
            Scale::Byte,
            Some(0),
        )
        .unwrap();
        let back = img.to_unit().to_byte();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_bounds_pixel_rejected() {
        let mut px = vec![0.0; IMG_PIXELS];
        px[3] = 255.0;
        assert!(Image::new(px.clone(), Scale::Byte, Some(1)).is_ok());
        px[3] = 255.1;
        assert!(Image::new(px.clone(), Scale::Byte, Some(1)).is_err());
        px[3] = 2.0; // fine for Byte, outside Unit
        assert!(Image::new(px.clone(), Scale::Byte, Some(1)).is_ok());
        assert!(Image::new(px, Scale::Unit, Some(1)).is_err());
    }

    #[test]
    fn idx_fixture_round_trips_exact_bytes() {
        let imgs_path = tmp("fixture-images");
        let labels_path = tmp("fixture-labels");
        let mut a = vec![0u8; IMG_PIXELS];
        a[0] = 17;
        a[783] = 255;
        let mut b = vec![0u8; IMG_PIXELS];
        b[28] = 3;
        write_idx_images(&imgs_path, &[a.clone(), b.clone()]).unwrap();
        write_idx_labels(&labels_path, &[7, 2]).unwrap();

        let ds = load_idx(&imgs_path, &labels_path).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.images()[0].label(), Some(7));
        assert_eq!(ds.images()[0].get(0, 0), 17.0);
        assert_eq!(ds.images()[0].get(27, 27), 255.0);
        assert_eq!(ds.images()[1].get(1, 0), 3.0);
        std::fs::remove_file(imgs_path).ok();
        std::fs::remove_file(labels_path).ok();
    }

    #[test]
    fn swapped_idx_files_detected() {
        let imgs_path = tmp("swap-images");
        let labels_path = tmp("swap-labels");
        write_idx_images(&imgs_path, &[vec![0u8; IMG_PIXELS]]).unwrap();
        write_idx_labels(&labels_path, &[1]).unwrap();
        // Labels file where images are expected: magic 2049 instead of 2051.
        let err = load_idx(&labels_path, &imgs_path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2051") && msg.contains("2049"), "{msg}");
        std::fs::remove_file(imgs_path).ok();
        std::fs::remove_file(labels_path).ok();
    }

    #[test]
    fn idx_count_mismatch_is_consistency_error() {
        let imgs_path = tmp("mismatch-images");
        let labels_path = tmp("mismatch-labels");
        write_idx_images(&imgs_path, &[vec![0u8; IMG_PIXELS]]).unwrap();
        write_idx_labels(&labels_path, &[1, 2]).unwrap();
        assert!(matches!(
            load_idx(&imgs_path, &labels_path),
            Err(Error::Consistency(_))
        ));
        std::fs::remove_file(imgs_path).ok();
        std::fs::remove_file(labels_path).ok();
    }

    #[test]
    fn truncated_idx_is_io_error() {
        let imgs_path = tmp("trunc-images");
        let labels_path = tmp("trunc-labels");
        write_idx_images(&imgs_path, &[vec![0u8; IMG_PIXELS]]).unwrap();
        write_idx_labels(&labels_path, &[1]).unwrap();
        let bytes = std::fs::read(&imgs_path).unwrap();
        std::fs::write(&imgs_path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(
            load_idx(&imgs_path, &labels_path),
            Err(Error::Io(_))
        ));
        std::fs::remove_file(imgs_path).ok();
        std::fs::remove_file(labels_path).ok();
    }

    #[test]
    fn native_round_trip_bitwise() {
        let path = tmp("native");
        let images = vec![
            Image::new(
                (0..IMG_PIXELS).map(|i| (i as f64 * 0.001).sin().abs()).collect(),
                Scale::Unit,
                Some(3),
            )
            .unwrap(),
            toy_image(0.0, 9).to_unit(),
        ];
        let ds = Dataset::new("orig", Provenance::Transformed, images).unwrap();
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert!(ds.same_contents(&back));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn empty_path_write_is_io_error() {
        let ds = Dataset::new("x", Provenance::MnistTest, vec![toy_image(1.0, 0)]).unwrap();
        assert!(matches!(save_dataset(&ds, Path::new("")), Err(Error::Io(_))));
    }

    #[test]
    fn corrupt_native_header_is_format_error() {
        let path = tmp("corrupt");
        std::fs::write(&path, b"NOTMAGIC rest of file").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format(_))));
        std::fs::write(&path, b"AQ").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format(_))));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn finetune_corpus_wrong_size_rejected() {
        let ds = Dataset::new("small", Provenance::MnistTrain, vec![toy_image(1.0, 0)]).unwrap();
        assert!(matches!(
            build_finetune_corpus(&ds, &TransformSpec::Identity, 1),
            Err(Error::Contract(_))
        ));
    }
}
