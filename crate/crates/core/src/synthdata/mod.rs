//! Synthetic screening images: a breast-shaped foreground on a dark
//! background with planted benign and malignant lesions, pixel masks and
//! keyword reports.
//!
//! On disk a dataset is a directory holding `manifest.jsonl` (one
//! [`ManifestRecord`] per line), `lexicon.txt`, `embeddings.txt`, and P5 PGM
//! rasters under `images/` and `masks/`.

mod generate;
pub mod lexicon;
mod load;
pub mod pgm;

use serde::{Deserialize, Serialize};

pub use generate::{allocate, generate_dataset, render_image, write_embeddings, SynthConfig};
pub use load::{load_dataset, read_manifest, DatasetReader};

use crate::label::{Label, Split};
use crate::numkernel::{Rect, Tensor};

/// Binary 2-D mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), height * width);
        Mask { height, width, bits }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// True pixels inside `rect` (inclusive bounds).
    pub fn count_in(&self, rect: &Rect) -> usize {
        (rect.y0..=rect.y1)
            .map(|y| {
                self.bits[y * self.width + rect.x0..=y * self.width + rect.x1]
                    .iter()
                    .filter(|&&b| b)
                    .count()
            })
            .sum()
    }

    /// Every true pixel of `self` is also true in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits.len() == other.bits.len() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Smallest rectangle holding every true pixel.
    pub fn bounding_box(&self) -> Option<Rect> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    bb = Some(match bb {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bb.map(|(x0, y0, x1, y1)| Rect::new(x0, y0, x1, y1))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LesionClass {
    Benign,
    Malignant,
}

impl LesionClass {
    pub fn label(self) -> Label {
        match self {
            LesionClass::Benign => Label::Benign,
            LesionClass::Malignant => Label::Malignant,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lesion {
    pub class: LesionClass,
    pub mask: Mask,
    pub keywords: Vec<String>,
}

/// One synthetic screening image with its annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    /// (H, W) intensities in [0, 1].
    pub pixels: Tensor,
    pub breast_mask: Mask,
    pub lesions: Vec<Lesion>,
    pub report_tokens: Vec<String>,
    pub split: Split,
}

impl ImageRecord {
    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }

    /// Image-level class: the most severe lesion class present.
    pub fn label(&self) -> Label {
        self.lesions
            .iter()
            .map(|l| l.class.label())
            .max()
            .unwrap_or(Label::Normal)
    }

    /// The (1, h, w) input tensor for the pixels under `rect`.
    pub fn crop(&self, rect: &Rect) -> Tensor {
        self.pixels
            .crop2(rect.y0, rect.x0, rect.height(), rect.width())
            .reshape(vec![1, rect.height(), rect.width()])
            .expect("crop shape")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ManifestLesion {
    pub class: String,
    pub keywords: Vec<String>,
    pub mask: String,
}

/// One line of `manifest.jsonl`. Paths are relative to the dataset directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ManifestRecord {
    pub image_id: String,
    pub split: String,
    pub height: usize,
    pub width: usize,
    pub image: String,
    pub breast_mask: String,
    pub lesions: Vec<ManifestLesion>,
    pub report_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: std::path::PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn split_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for r in &self.records {
            if let Ok(s) = r.split.parse::<Split>() {
                counts[s as usize] += 1;
            }
        }
        counts
    }
}
