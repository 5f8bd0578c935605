//! Sliding-window patch extraction and patch labelling.
//!
//! Patches are squares whose side is a fixed fraction of the image width.
//! Windows advance by a fraction of that side, and a final window is clamped
//! to each far edge so the grid covers the whole image. A patch is kept when
//! enough of it is breast tissue, and is labelled with a lesion class when
//! the class covers enough of the patch or the patch holds enough of one of
//! the class's findings.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{Label, Split};
use crate::numkernel::{Rect, Tensor};
use crate::synthdata::{self, ImageRecord, LesionClass, Mask};

/// Narrowest image accepted for extraction.
pub const MIN_IMAGE_WIDTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PatchConfig {
    pub width_fraction: f64,
    pub stride_fraction: f64,
    pub tissue_min: f64,
    pub tissue_rule: f64,
    pub finding_rule: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            width_fraction: 0.25,
            stride_fraction: 0.5,
            tissue_min: 0.5,
            tissue_rule: 0.3,
            finding_rule: 0.3,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("widthFraction", self.width_fraction),
            ("strideFraction", self.stride_fraction),
            ("tissueMin", self.tissue_min),
            ("tissueRule", self.tissue_rule),
            ("findingRule", self.finding_rule),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} = {v} must lie in (0, 1]")));
            }
        }
        Ok(())
    }

    /// Patch side for an image of the given width (round half up).
    pub fn patch_side(&self, image_width: usize) -> usize {
        round_half_up(self.width_fraction * image_width as f64)
    }

    pub fn stride(&self, side: usize) -> usize {
        round_half_up(self.stride_fraction * side as f64).max(1)
    }
}

fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LesionOverlap {
    pub lesion_index: usize,
    /// Share of the patch area covered by this lesion.
    pub fraction_of_patch: f64,
    /// Share of this lesion's mask inside the patch.
    pub fraction_of_finding: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PatchRecord {
    pub image_id: String,
    pub split: Split,
    pub rect: Rect,
    pub label: Label,
    pub tissue_fraction: f64,
    pub per_lesion_overlap: Vec<LesionOverlap>,
}

/// Window origins along one axis; the last window is clamped to the edge.
pub fn window_origins(extent: usize, side: usize, stride: usize) -> Vec<usize> {
    if extent < side {
        return Vec::new();
    }
    let last = extent - side;
    let mut origins: Vec<usize> = (0..=last).step_by(stride).collect();
    if origins.last() != Some(&last) {
        origins.push(last);
    }
    origins
}

/// Every window of the grid, kept or not.
pub fn window_grid(height: usize, width: usize, cfg: &PatchConfig) -> Result<Vec<Rect>> {
    cfg.validate()?;
    if width < MIN_IMAGE_WIDTH {
        return Err(Error::Config(format!(
            "image width {width} below the {MIN_IMAGE_WIDTH}px minimum"
        )));
    }
    let side = cfg.patch_side(width);
    if side > height {
        return Err(Error::Config(format!("patch side {side} exceeds image height {height}")));
    }
    let stride = cfg.stride(side);
    let ys = window_origins(height, side, stride);
    let xs = window_origins(width, side, stride);
    Ok(ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| Rect::square(x, y, side)))
        .collect())
}

/// Tissue pixels for images that carry no breast mask.
pub fn tissue_mask_from_intensity(image: &ImageRecord) -> Mask {
    tissue_from_pixels(&image.pixels)
}

/// Tissue estimate of a (H, W) or (1, H, W) image by intensity threshold.
pub fn tissue_from_pixels(pixels: &Tensor) -> Mask {
    let s = pixels.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    Mask::from_bits(h, w, pixels.data().iter().map(|&v| v > 0.05).collect())
}

pub fn extract_patches(image: &ImageRecord, cfg: &PatchConfig) -> Result<Vec<PatchRecord>> {
    let grid = window_grid(image.height(), image.width(), cfg)?;
    let mut out = Vec::new();
    for rect in grid {
        let tissue = image.breast_mask.count_in(&rect) as f64 / rect.area() as f64;
        if tissue < cfg.tissue_min {
            continue;
        }
        let (label, overlaps) = label_with_overlaps(&rect, image, cfg);
        out.push(PatchRecord {
            image_id: image.image_id.clone(),
            split: image.split,
            rect,
            label,
            tissue_fraction: tissue,
            per_lesion_overlap: overlaps,
        });
    }
    Ok(out)
}

pub fn label_patch(rect: &Rect, image: &ImageRecord, cfg: &PatchConfig) -> Label {
    label_with_overlaps(rect, image, cfg).0
}

fn label_with_overlaps(rect: &Rect, image: &ImageRecord, cfg: &PatchConfig) -> (Label, Vec<LesionOverlap>) {
    let area = rect.area() as f64;
    let overlaps: Vec<LesionOverlap> = image
        .lesions
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let inside = l.mask.count_in(rect) as f64;
            LesionOverlap {
                lesion_index: i,
                fraction_of_patch: inside / area,
                fraction_of_finding: inside / l.mask.count() as f64,
            }
        })
        .collect();

    for class in [LesionClass::Malignant, LesionClass::Benign] {
        let members: Vec<usize> = image
            .lesions
            .iter()
            .enumerate()
            .filter(|(_, l)| l.class == class)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        let finding = members
            .iter()
            .any(|&i| overlaps[i].fraction_of_finding >= cfg.finding_rule);
        // union of same-class masks, so overlapping lesions are not double counted
        let covered = (rect.y0..=rect.y1)
            .flat_map(|y| (rect.x0..=rect.x1).map(move |x| (y, x)))
            .filter(|&(y, x)| members.iter().any(|&i| image.lesions[i].mask.get(y, x)))
            .count() as f64;
        if finding || covered / area >= cfg.tissue_rule {
            return (class.label(), overlaps);
        }
    }
    (Label::Normal, overlaps)
}

/// Per-(split, label) patch counts.
pub type PatchCounts = BTreeMap<Split, BTreeMap<Label, usize>>;

pub fn count_patches(patches: &[PatchRecord]) -> PatchCounts {
    let mut counts: PatchCounts = BTreeMap::new();
    for p in patches {
        *counts.entry(p.split).or_default().entry(p.label).or_default() += 1;
    }
    counts
}

/// Extracts patches for every image of a dataset and writes `patches.jsonl`
/// and `counts.json` into `out_dir`.
pub fn build_manifest(dataset_dir: &Path, out_dir: &Path, cfg: &PatchConfig) -> Result<(Vec<PatchRecord>, PatchCounts)> {
    let images: Vec<ImageRecord> = synthdata::load_dataset(dataset_dir)?.collect::<Result<_>>()?;
    let per_image: Vec<Vec<PatchRecord>> = images
        .par_iter()
        .map(|img| extract_patches(img, cfg))
        .collect::<Result<_>>()?;
    let patches: Vec<PatchRecord> = per_image.into_iter().flatten().collect();
    let counts = count_patches(&patches);
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_patches(&out_dir.join("patches.jsonl"), &patches)?;
    let cpath = out_dir.join("counts.json");
    fs::write(&cpath, serde_json::to_string_pretty(&counts)? + "\n").map_err(|e| Error::io(&cpath, e))?;
    Ok((patches, counts))
}

pub fn write_patches(path: &Path, patches: &[PatchRecord]) -> Result<()> {
    let mut text = String::new();
    for p in patches {
        text.push_str(&serde_json::to_string(p)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_patches(path: &Path) -> Result<Vec<PatchRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

/// A patch paired with its pixels as a (1, side, side) model input.
#[derive(Debug, Clone)]
pub struct PatchSample {
    pub record: PatchRecord,
    pub input: Tensor,
}

pub fn patch_samples(
    images: &BTreeMap<String, ImageRecord>,
    patches: &[PatchRecord],
    split: Option<Split>,
) -> Result<Vec<PatchSample>> {
    patches
        .iter()
        .filter(|p| split.map_or(true, |s| p.split == s))
        .map(|p| {
            let img = images.get(&p.image_id).ok_or_else(|| Error::Record {
                image_id: p.image_id.clone(),
                reason: "patch references an image missing from the dataset".into(),
            })?;
            Ok(PatchSample {
                record: p.clone(),
                input: img.crop(&p.rect),
            })
        })
        .collect()
}
