use std::fmt;
use std::path::Path;

use image::imageops::{resize, FilterType};
use image::GrayImage;

use super::discover::Pair;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Normal,
    Benign,
    Malignant,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Normal, Label::Benign, Label::Malignant];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Benign => "benign",
            Label::Malignant => "malignant",
        }
    }

    /// Matches names such as `benign`, `Benign (12).png` or `malignant_3`.
    pub fn from_prefix(name: &str) -> Option<Label> {
        let lower = name.to_ascii_lowercase();
        Label::ALL.into_iter().find(|l| lower.starts_with(l.as_str()))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One image at working resolution with its unioned binary mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `1 × S × S`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub mask: Mask,
    pub label: Label,
    pub source: String,
}

pub(crate) fn open_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::data_file(path, other),
    })?;
    Ok(img.to_luma8())
}

/// Bilinear resize to `size × size`, scaled to `[0, 1]`.
pub(crate) fn image_tensor(img: &GrayImage, size: usize) -> Tensor<f32> {
    let s = size as u32;
    let resized = if img.dimensions() == (s, s) {
        img.clone()
    } else {
        resize(img, s, s, FilterType::Triangle)
    };
    let data = resized.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
    Tensor::new(&[1, size, size], data).expect("resized buffer")
}

/// Nearest-neighbour resize to `size × size`, thresholded at `> 127`.
pub(crate) fn mask_from_gray(img: &GrayImage, size: usize) -> Mask {
    let s = size as u32;
    let resized = if img.dimensions() == (s, s) {
        img.clone()
    } else {
        resize(img, s, s, FilterType::Nearest)
    };
    let data = resized.as_raw().iter().map(|&v| u8::from(v > 127)).collect();
    Mask::new(size, size, data).expect("binary by construction")
}

/// Union of mask files, at native resolution when `size` is `None`.
pub fn load_mask(paths: &[std::path::PathBuf], size: Option<usize>) -> Result<Mask> {
    let mut out: Option<Mask> = None;
    for path in paths {
        let gray = open_gray(path)?;
        let m = match size {
            Some(s) => mask_from_gray(&gray, s),
            None => {
                let (w, h) = gray.dimensions();
                let data = gray.as_raw().iter().map(|&v| u8::from(v > 127)).collect();
                Mask::new(h as usize, w as usize, data)?
            }
        };
        out = Some(match out {
            None => m,
            Some(acc) => acc
                .union(&m)
                .map_err(|e| Error::data_file(path, e))?,
        });
    }
    out.ok_or_else(|| Error::Data("no mask files".into()))
}

pub fn load_sample(pair: &Pair, image_size: usize) -> Result<Sample> {
    let image = image_tensor(&open_gray(&pair.image)?, image_size);
    let mask = load_mask(&pair.masks, Some(image_size))?;
    Ok(Sample {
        image,
        mask,
        label: pair.label,
        source: pair.stem(),
    })
}
