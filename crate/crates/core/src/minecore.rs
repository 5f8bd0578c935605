//! Unit mining over the final conv layer.
//!
//! The influence of unit `u` on a class decision for a patch is the unit's
//! spatial max activation times the classifier weight linking `u` to that
//! class. Each patch is attributed to its predicted class; per class, units
//! are tallied by how often they land in a patch's top influence list, and
//! the most frequent ones are selected for annotation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;
use crate::numkernel::{cmp_f64, receptive_field, upsample_bilinear, Model, Rect, Tensor};
use crate::patchline::PatchSample;
use crate::synthdata::{pgm, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MinerConfig {
    pub top_per_image: usize,
    pub top_per_class: usize,
    pub viz_patches_per_unit: usize,
    pub binarize_fraction: f64,
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig {
            top_per_image: 8,
            top_per_class: 20,
            viz_patches_per_unit: 16,
            binarize_fraction: 0.5,
        }
    }
}

impl MinerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_per_image == 0 || self.top_per_class == 0 || self.viz_patches_per_unit == 0 {
            return Err(Error::Config("miner counts must be positive".into()));
        }
        if !(self.binarize_fraction > 0.0 && self.binarize_fraction < 1.0) {
            return Err(Error::Config(format!(
                "binarize fraction {} must lie in (0, 1)",
                self.binarize_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InfluenceRecord {
    pub unit_id: usize,
    pub image_id: String,
    pub class_id: usize,
    pub max_activation: f64,
    pub class_weight: f64,
    pub influence: f64,
    /// Patch the activation was measured on, when mining patches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<Rect>,
}

/// Spatial max of every channel of a (U, h, w) feature tensor.
pub fn channel_maxima(features: &Tensor) -> Vec<f64> {
    let s = features.shape();
    let plane = s[1] * s[2];
    features
        .data()
        .chunks(plane)
        .map(|p| p.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

pub fn unit_max_activations(model: &Model, patch: &Tensor) -> Result<Vec<f64>> {
    Ok(channel_maxima(&model.features(patch)?))
}

/// Influence records for every unit, by descending influence then unit id.
pub fn influence_ranking(model: &Model, maxima: &[f64], class_id: usize, image_id: &str) -> Vec<InfluenceRecord> {
    let mut records: Vec<InfluenceRecord> = maxima
        .iter()
        .enumerate()
        .map(|(u, &a)| {
            let w = model.class_weight(class_id, u);
            InfluenceRecord {
                unit_id: u,
                image_id: image_id.to_string(),
                class_id,
                max_activation: a,
                class_weight: w,
                influence: a * w,
                patch: None,
            }
        })
        .collect();
    records.sort_by(|a, b| cmp_f64(b.influence, a.influence).then(a.unit_id.cmp(&b.unit_id)));
    records
}

/// The `top_per_image` most influential units of `patch` towards `class_id`.
pub fn rank_units(
    model: &Model,
    patch: &Tensor,
    class_id: usize,
    image_id: &str,
    cfg: &MinerConfig,
) -> Result<Vec<InfluenceRecord>> {
    if class_id >= model.spec.class_count {
        return Err(Error::OutOfRange(format!("class {class_id}")));
    }
    let maxima = unit_max_activations(model, patch)?;
    let mut ranked = influence_ranking(model, &maxima, class_id, image_id);
    ranked.truncate(cfg.top_per_image);
    Ok(ranked)
}

/// Mining state of one patch: features, prediction and its top list.
#[derive(Debug, Clone)]
pub struct PatchMining {
    pub image_id: String,
    pub rect: Rect,
    pub features: Tensor,
    pub predicted: usize,
    pub top: Vec<InfluenceRecord>,
}

/// Runs every patch once through the model (in parallel).
pub fn mine_patches(model: &Model, patches: &[PatchSample], cfg: &MinerConfig) -> Result<Vec<PatchMining>> {
    cfg.validate()?;
    let fc = model.fc_params();
    patches
        .par_iter()
        .map(|p| {
            let features = model.features(&p.input)?;
            let pooled = crate::numkernel::ops::gap(&features);
            let logits = crate::numkernel::ops::fc(&pooled, &fc.weight, &fc.bias);
            let predicted = logits.argmax();
            let maxima = channel_maxima(&features);
            let mut top = influence_ranking(model, &maxima, predicted, &p.record.image_id);
            top.truncate(cfg.top_per_image);
            for r in &mut top {
                r.patch = Some(p.record.rect);
            }
            Ok(PatchMining {
                image_id: p.record.image_id.clone(),
                rect: p.record.rect,
                features,
                predicted,
                top,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct UnitSelection {
    pub class_id: usize,
    pub class_name: String,
    /// Descending frequency, ties by ascending unit id.
    pub unit_ids: Vec<usize>,
    /// unit id -> number of attributed patches whose top list holds the unit.
    pub frequency: BTreeMap<usize, usize>,
    pub coverage: f64,
    pub patch_count: usize,
}

/// Per-class selections from a mining pass; also returns warnings for classes
/// with fewer influential units than requested.
pub fn select_from_mining(mined: &[PatchMining], class_count: usize, cfg: &MinerConfig) -> (Vec<UnitSelection>, Vec<String>) {
    let mut warnings = Vec::new();
    let selections = (0..class_count)
        .map(|c| {
            let mut frequency: BTreeMap<usize, usize> = BTreeMap::new();
            let mut patch_count = 0;
            for m in mined.iter().filter(|m| m.predicted == c) {
                patch_count += 1;
                for r in &m.top {
                    *frequency.entry(r.unit_id).or_default() += 1;
                }
            }
            let mut ranked: Vec<(usize, usize)> = frequency.iter().map(|(&u, &f)| (u, f)).collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            if ranked.len() < cfg.top_per_class {
                let msg = format!(
                    "class {}: only {} influential units for {} requested",
                    class_name(c),
                    ranked.len(),
                    cfg.top_per_class
                );
                warn!("{msg}");
                warnings.push(msg);
            }
            let unit_ids: Vec<usize> = ranked.iter().take(cfg.top_per_class).map(|&(u, _)| u).collect();
            let coverage = coverage_fraction(&unit_ids, c, mined, cfg).unwrap_or(0.0);
            UnitSelection {
                class_id: c,
                class_name: class_name(c),
                unit_ids,
                frequency,
                coverage,
                patch_count,
            }
        })
        .collect();
    (selections, warnings)
}

fn class_name(c: usize) -> String {
    Label::from_index(c).map_or_else(|| format!("class{c}"), |l| l.to_string())
}

pub fn select_influential_units(
    model: &Model,
    patches: &[PatchSample],
    cfg: &MinerConfig,
) -> Result<(Vec<UnitSelection>, Vec<PatchMining>, Vec<String>)> {
    if patches.is_empty() {
        return Err(Error::Config("no patches to mine".into()));
    }
    let mined = mine_patches(model, patches, cfg)?;
    let (selections, warnings) = select_from_mining(&mined, model.spec.class_count, cfg);
    Ok((selections, mined, warnings))
}

/// Share of the top-list slots of patches attributed to `class_id` that are
/// occupied by `units`.
pub fn coverage_fraction(units: &[usize], class_id: usize, mined: &[PatchMining], cfg: &MinerConfig) -> Result<f64> {
    let chosen: BTreeSet<usize> = units.iter().copied().collect();
    let attributed: Vec<&PatchMining> = mined.iter().filter(|m| m.predicted == class_id).collect();
    if attributed.is_empty() {
        return Err(Error::Metric(format!("no patches attributed to class {class_id}")));
    }
    let hits: usize = attributed
        .iter()
        .map(|m| m.top.iter().filter(|r| chosen.contains(&r.unit_id)).count())
        .sum();
    Ok(hits as f64 / (cfg.top_per_image * attributed.len()) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualizationEntry {
    pub image_id: String,
    pub patch_rect: Rect,
    pub activation: f64,
    /// Image-space receptive field of the strongest response.
    pub receptive_field: Rect,
    /// Binarized response at patch resolution.
    pub response_mask: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitVisualization {
    pub unit_id: usize,
    pub entries: Vec<VisualizationEntry>,
}

/// Thresholded, upsampled response of one unit map at patch resolution.
pub fn response_mask(unit_map: &Tensor, height: usize, width: usize, fraction: f64) -> Result<Mask> {
    let up = upsample_bilinear(unit_map, height, width)?;
    let threshold = fraction * unit_map.max();
    Ok(Mask::from_bits(
        height,
        width,
        up.data().iter().map(|&v| v >= threshold).collect(),
    ))
}

/// Top-activating patches of one unit, reusing features from a mining pass.
pub fn visualize_unit(model: &Model, unit_id: usize, mined: &[PatchMining], cfg: &MinerConfig) -> Result<UnitVisualization> {
    if unit_id >= model.spec.final_conv_units {
        return Err(Error::OutOfRange(format!(
            "unit {unit_id} of {}",
            model.spec.final_conv_units
        )));
    }
    let mut order: Vec<(usize, f64)> = mined
        .iter()
        .enumerate()
        .map(|(i, m)| (i, m.features.channel(unit_id).max()))
        .collect();
    order.sort_by(|a, b| cmp_f64(b.1, a.1).then(a.0.cmp(&b.0)));
    let layer = model.spec.feature_layer();
    let entries = order
        .into_iter()
        .take(cfg.viz_patches_per_unit)
        .map(|(i, activation)| {
            let m = &mined[i];
            let map = m.features.channel(unit_id);
            let peak = map.argmax();
            let (row, col) = (peak / map.shape()[1], peak % map.shape()[1]);
            let rf = receptive_field(&model.spec, layer, row, col)?.translate(m.rect.x0, m.rect.y0);
            Ok(VisualizationEntry {
                image_id: m.image_id.clone(),
                patch_rect: m.rect,
                activation,
                receptive_field: rf,
                response_mask: response_mask(&map, m.rect.height(), m.rect.width(), cfg.binarize_fraction)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(UnitVisualization { unit_id, entries })
}

pub fn build_unit_visualization(
    model: &Model,
    unit_id: usize,
    patches: &[PatchSample],
    cfg: &MinerConfig,
) -> Result<UnitVisualization> {
    let mined = mine_patches(model, patches, cfg)?;
    visualize_unit(model, unit_id, &mined, cfg)
}

/// `entries.json` row of a unit visualization directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EntryFile {
    pub rank: usize,
    pub image_id: String,
    pub patch_rect: Rect,
    pub activation: f64,
    pub receptive_field: Rect,
    pub crop: String,
    pub mask: String,
    pub segmented: String,
    pub context_image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct UnitEntriesFile {
    pub unit_id: usize,
    pub entries: Vec<EntryFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SelectionFile {
    pub config: MinerConfig,
    pub unit_count: usize,
    pub classes: Vec<UnitSelection>,
}

impl SelectionFile {
    /// Every selected unit id across classes, ascending.
    pub fn unit_ids(&self) -> BTreeSet<usize> {
        self.classes.iter().flat_map(|c| c.unit_ids.iter().copied()).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Writes `influence.jsonl`, `selection.json` and `units/unit_<id>/` under `dir`.
///
/// `pixels_of` returns the source image of a patch for the raster crops.
pub fn write_artifacts(
    dir: &Path,
    model: &Model,
    mined: &[PatchMining],
    selections: &[UnitSelection],
    visualizations: &[UnitVisualization],
    cfg: &MinerConfig,
    pixels_of: impl Fn(&str) -> Option<Tensor>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut influence = String::new();
    for m in mined {
        for r in &m.top {
            influence.push_str(&serde_json::to_string(r)?);
            influence.push('\n');
        }
    }
    let ipath = dir.join("influence.jsonl");
    fs::write(&ipath, influence).map_err(|e| Error::io(&ipath, e))?;

    let selection = SelectionFile {
        config: *cfg,
        unit_count: model.spec.final_conv_units,
        classes: selections.to_vec(),
    };
    let spath = dir.join("selection.json");
    fs::write(&spath, serde_json::to_string_pretty(&selection)? + "\n").map_err(|e| Error::io(&spath, e))?;

    for viz in visualizations {
        let udir = dir.join("units").join(format!("unit_{}", viz.unit_id));
        fs::create_dir_all(&udir).map_err(|e| Error::io(&udir, e))?;
        let mut rows = Vec::with_capacity(viz.entries.len());
        for (k, e) in viz.entries.iter().enumerate() {
            let (w, h) = (e.patch_rect.width(), e.patch_rect.height());
            let crop_name = format!("crop_{k:02}.pgm");
            let mask_name = format!("mask_{k:02}.pgm");
            let seg_name = format!("seg_{k:02}.pgm");
            if let Some(img) = pixels_of(&e.image_id) {
                let crop = img.crop2(e.patch_rect.y0, e.patch_rect.x0, h, w);
                let bytes: Vec<u8> = crop.data().iter().map(|&v| to_byte(v)).collect();
                let seg: Vec<u8> = crop
                    .data()
                    .iter()
                    .zip(e.response_mask.bits())
                    .map(|(&v, &on)| to_byte(if on { v } else { v * 0.25 }))
                    .collect();
                pgm::write(&udir.join(&crop_name), w, h, &bytes)?;
                pgm::write(&udir.join(&seg_name), w, h, &seg)?;
            }
            pgm::write(&udir.join(&mask_name), w, h, &e.response_mask.to_bytes())?;
            rows.push(EntryFile {
                rank: k,
                image_id: e.image_id.clone(),
                patch_rect: e.patch_rect,
                activation: e.activation,
                receptive_field: e.receptive_field,
                crop: crop_name,
                mask: mask_name,
                segmented: seg_name,
                context_image: format!("/api/images/{}", e.image_id),
            });
        }
        let file = UnitEntriesFile {
            unit_id: viz.unit_id,
            entries: rows,
        };
        let epath = udir.join("entries.json");
        fs::write(&epath, serde_json::to_string_pretty(&file)? + "\n").map_err(|e| Error::io(&epath, e))?;
    }
    Ok(())
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
