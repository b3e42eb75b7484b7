//! Five-crop fused prediction: one center and four corner 27x27 crops, each
//! rescaled to 28x28, classified separately, probability vectors summed.

use crate::dataset::Image;
use crate::error::{Error, Result};
use crate::model::{argmax, softmax, Model};
use crate::transforms::{crop_resize, Region};

pub const CROP_SIZE: usize = 27;
pub const CROP_REGIONS: [Region; 5] = [
    Region::Center,
    Region::TopLeft,
    Region::TopRight,
    Region::BottomLeft,
    Region::BottomRight,
];

/// The five crop views of one image.
#[derive(Debug, Clone)]
pub struct CropSet {
    crops: Vec<Image>,
    source: Image,
}

impl CropSet {
    pub fn crops(&self) -> &[Image] {
        &self.crops
    }

    pub fn source(&self) -> &Image {
        &self.source
    }
}

/// Build the center + corner crop set, each bicubically resized back to
/// 28x28.
pub fn five_crops(image: &Image) -> Result<CropSet> {
    if image.pixels().len() != crate::dataset::IMG_PIXELS {
        return Err(Error::Contract("five_crops wants a 28x28 image".into()));
    }
    let crops = CROP_REGIONS
        .iter()
        .map(|&region| crop_resize(image, CROP_SIZE, region))
        .collect::<Result<Vec<_>>>()?;
    Ok(CropSet { crops, source: image.clone() })
}

/// Sum of the five per-crop probability vectors and its argmax.
pub fn fused_predict(model: &Model, image: &Image) -> Result<(Vec<f64>, u8)> {
    let set = five_crops(&image.to_unit())?;
    let logits = model.logits_batch(set.crops())?;
    let mut summed = vec![0.0f64; 10];
    for row in &logits {
        for (acc, p) in summed.iter_mut().zip(softmax(row)) {
            *acc += p;
        }
    }
    let class = argmax(&summed);
    Ok((summed, class))
}
