use std::fs;
use std::path::{Path, PathBuf};

use super::{pgm, ImageRecord, Lesion, LesionClass, ManifestRecord, Mask};
use crate::error::{Error, Result};
use crate::label::Split;
use crate::numkernel::Tensor;

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRecord>> {
    let path = dir.join("manifest.jsonl");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::format(&path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Streams validated [`ImageRecord`]s in manifest order.
pub struct DatasetReader {
    root: PathBuf,
    rows: std::vec::IntoIter<ManifestRecord>,
}

impl Iterator for DatasetReader {
    type Item = Result<ImageRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let row = self.rows.next()?;
        Some(load_record(&self.root, &row))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.rows.size_hint()
    }
}

pub fn load_dataset(dir: &Path) -> Result<DatasetReader> {
    Ok(DatasetReader {
        root: dir.to_path_buf(),
        rows: read_manifest(dir)?.into_iter(),
    })
}

fn load_mask(root: &Path, rel: &str, row: &ManifestRecord) -> Result<Mask> {
    let (w, h, px) = read_raster(root, rel, row)?;
    Ok(Mask::from_bits(h, w, px.iter().map(|&b| b >= 128).collect()))
}

fn read_raster(root: &Path, rel: &str, row: &ManifestRecord) -> Result<(usize, usize, Vec<u8>)> {
    let err = |reason: String| Error::Record {
        image_id: row.image_id.clone(),
        reason,
    };
    let (w, h, px) = pgm::read(&root.join(rel)).map_err(|e| err(e.to_string()))?;
    if (h, w) != (row.height, row.width) {
        return Err(err(format!(
            "{rel} is {h}x{w}, manifest declares {}x{}",
            row.height, row.width
        )));
    }
    Ok((w, h, px))
}

pub(crate) fn load_record(root: &Path, row: &ManifestRecord) -> Result<ImageRecord> {
    let err = |reason: String| Error::Record {
        image_id: row.image_id.clone(),
        reason,
    };
    let split: Split = row.split.parse().map_err(err)?;
    let (_, _, px) = read_raster(root, &row.image, row)?;
    let pixels = Tensor::new(
        vec![row.height, row.width],
        px.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )?;
    let breast_mask = load_mask(root, &row.breast_mask, row)?;
    let mut lesions = Vec::with_capacity(row.lesions.len());
    for (k, l) in row.lesions.iter().enumerate() {
        let class = match l.class.as_str() {
            "benign" => LesionClass::Benign,
            "malignant" => LesionClass::Malignant,
            other => return Err(err(format!("lesion {k}: unknown class {other:?}"))),
        };
        let mask = load_mask(root, &l.mask, row)?;
        if mask.count() == 0 {
            return Err(err(format!("lesion {k}: empty mask")));
        }
        if !mask.is_subset_of(&breast_mask) {
            return Err(err(format!("lesion {k}: mask extends outside the breast region")));
        }
        lesions.push(Lesion {
            class,
            mask,
            keywords: l.keywords.clone(),
        });
    }
    if lesions.is_empty() != row.report_tokens.is_empty() {
        return Err(err("report tokens must be present exactly when lesions are".into()));
    }
    Ok(ImageRecord {
        image_id: row.image_id.clone(),
        pixels,
        breast_mask,
        lesions,
        report_tokens: row.report_tokens.clone(),
        split,
    })
}
