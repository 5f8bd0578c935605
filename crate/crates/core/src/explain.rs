//! Full-image explanations from a patch classifier.
//!
//! The classifier is recast as a fully convolutional network: the conv trunk
//! runs on an arbitrarily large image and the FC layer becomes a 1×1
//! convolution over the final feature maps. From that we get per-class score
//! maps, class activation maps and per-unit activation maps, and an
//! explanation pairs the prediction with the annotated units that drove it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;
use crate::minecore::{channel_maxima, MinerConfig};
use crate::numkernel::model::apply_layer;
use crate::patchline::{tissue_from_pixels, PatchConfig};
use crate::numkernel::{cmp_f64, softmax, upsample_bilinear, LayerSpec, Model, ParamSet, Rect, Tensor};
use crate::synthdata::pgm;

/// How the class score map is reduced to one image-level decision.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImagePooling {
    /// The most severe class predicted by any window with enough tissue to
    /// have been a training patch; class indices are ordered by severity.
    #[default]
    MostSevere,
    /// Argmax of the spatially averaged score map.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcnModel {
    pub conv_layers: Vec<LayerSpec>,
    conv_params: ParamSet,
    /// (C, U) copy of the FC weights; the 1×1 classifier kernel.
    pub classifier_weight: Tensor,
    pub classifier_bias: Tensor,
    pub patch_side: usize,
    /// Feature-map extent of one training patch.
    pub window: (usize, usize),
    /// Input extents must be multiples of this for pooling to tile exactly.
    pub alignment: usize,
    pub pooling: ImagePooling,
    /// Minimum tissue fraction of windows considered by [`ImagePooling::MostSevere`].
    pub tissue_min: f64,
}

impl FcnModel {
    pub fn from_model(model: &Model) -> Result<Self> {
        model.spec.validate()?;
        let f = model.spec.feature_layer();
        let shapes = model.spec.output_shapes()?;
        let alignment = model.spec.layers[..=f]
            .iter()
            .map(|l| match *l {
                LayerSpec::Conv { stride, .. } | LayerSpec::Maxpool { stride, .. } => stride,
                _ => 1,
            })
            .product();
        let fc = model.fc_params();
        Ok(FcnModel {
            conv_layers: model.spec.layers[..=f].to_vec(),
            conv_params: model.params[..=f].to_vec(),
            classifier_weight: fc.weight.clone(),
            classifier_bias: fc.bias.clone(),
            patch_side: model.spec.input_shape[1],
            window: (shapes[f][1], shapes[f][2]),
            alignment,
            pooling: ImagePooling::default(),
            tissue_min: PatchConfig::default().tissue_min,
        })
    }

    pub fn class_count(&self) -> usize {
        self.classifier_weight.shape()[0]
    }

    pub fn unit_count(&self) -> usize {
        self.classifier_weight.shape()[1]
    }

    /// Smallest valid input extent covering `n` pixels.
    pub fn padded_extent(&self, n: usize) -> usize {
        n.max(self.patch_side).div_ceil(self.alignment) * self.alignment
    }

    /// Zero-pads a (H, W) or (1, H, W) image on the right and bottom.
    pub fn pad(&self, image: &Tensor) -> Result<Tensor> {
        let (h, w) = image_dims(image)?;
        let (ph, pw) = (self.padded_extent(h), self.padded_extent(w));
        let mut out = Tensor::zeros(&[1, ph, pw]);
        let src = image.data();
        let dst = out.data_mut();
        for r in 0..h {
            dst[r * pw..r * pw + w].copy_from_slice(&src[r * w..(r + 1) * w]);
        }
        Ok(out)
    }

    /// Final conv feature maps (U, h, w) of an already valid-sized input.
    pub fn trunk(&self, input: &Tensor) -> Result<Tensor> {
        let s = input.shape();
        if s.len() != 3 || s[0] != 1 || s[1] < self.patch_side || s[2] < self.patch_side {
            return Err(Error::Shape {
                layer: "input".into(),
                expected: vec![1, self.patch_side, self.patch_side],
                actual: s.to_vec(),
            });
        }
        if s[1] % self.alignment != 0 || s[2] % self.alignment != 0 {
            return Err(Error::Validation(format!(
                "input {}x{} is not a multiple of {}",
                s[1], s[2], self.alignment
            )));
        }
        let mut x = input.clone();
        for (layer, params) in self.conv_layers.iter().zip(&self.conv_params) {
            x = apply_layer(layer, params.as_ref(), &x);
        }
        Ok(x)
    }

    /// Pads `image` and runs the trunk.
    pub fn features(&self, image: &Tensor) -> Result<Tensor> {
        self.trunk(&self.pad(image)?)
    }

    /// 1×1 classifier applied at every feature position: (C, h, w).
    pub fn dense_scores(&self, features: &Tensor) -> Tensor {
        let mut out = weighted_sum(features, &self.classifier_weight);
        let plane = features.shape()[1] * features.shape()[2];
        for (c, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let b = self.classifier_bias.data()[c];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        out
    }

    /// Class score map: position (i, j) holds the logits the patch classifier
    /// gives the patch whose features start at cell (i, j).
    pub fn score_map(&self, features: &Tensor) -> Tensor {
        window_average(&self.dense_scores(features), self.window)
    }

    /// Score-map positions whose window lies inside the image and holds at
    /// least `tissue_min` tissue.
    pub fn tissue_windows(&self, image: &Tensor) -> Result<Vec<bool>> {
        let (h, w) = image_dims(image)?;
        let tissue = tissue_from_pixels(image);
        let (ph, pw) = (self.padded_extent(h), self.padded_extent(w));
        let oh = ph / self.alignment + 1 - self.window.0;
        let ow = pw / self.alignment + 1 - self.window.1;
        let side = self.patch_side;
        Ok((0..oh * ow)
            .map(|p| {
                let (y0, x0) = ((p / ow) * self.alignment, (p % ow) * self.alignment);
                if y0 + side > h || x0 + side > w {
                    return false;
                }
                let rect = Rect::square(x0, y0, side);
                tissue.count_in(&rect) as f64 / rect.area() as f64 >= self.tissue_min
            })
            .collect())
    }

    /// Image-level decision under `self.pooling`.
    pub fn classify(&self, image: &Tensor) -> Result<Classification> {
        let features = self.features(image)?;
        Ok(self.classify_features(&features, &self.tissue_windows(image)?))
    }

    /// `valid` flags the score-map positions eligible under most-severe
    /// pooling; when none is, every position is.
    pub fn classify_features(&self, features: &Tensor, valid: &[bool]) -> Classification {
        let map = self.score_map(features);
        let (classes, plane) = (map.shape()[0], map.shape()[1] * map.shape()[2]);
        let at = |p: usize| -> Vec<f64> { (0..classes).map(|c| map.data()[c * plane + p]).collect() };
        let scores = match self.pooling {
            ImagePooling::Mean => (0..classes)
                .map(|c| map.data()[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64)
                .collect(),
            ImagePooling::MostSevere => {
                let any = valid.iter().any(|&v| v);
                let per_position: Vec<Vec<f64>> = (0..plane)
                    .filter(|&p| !any || valid.get(p).copied().unwrap_or(false))
                    .map(at)
                    .collect();
                let worst = per_position
                    .iter()
                    .map(|s| crate::numkernel::argmax(s))
                    .max()
                    .unwrap_or(0);
                // the position most confident in that class speaks for the image
                per_position
                    .into_iter()
                    .filter(|s| crate::numkernel::argmax(s) == worst)
                    .max_by(|a, b| cmp_f64(softmax(a)[worst], softmax(b)[worst]))
                    .expect("at least one position")
            }
        };
        let probabilities = softmax(&scores);
        let predicted = crate::numkernel::argmax(&scores);
        Classification {
            predicted,
            scores,
            probabilities,
        }
    }

    pub fn cam(&self, image: &Tensor, class_id: usize) -> Result<Heatmap> {
        let features = self.features(image)?;
        let (h, w) = image_dims(image)?;
        self.cam_from_features(&features, class_id, h, w)
    }

    /// Σ_k W[c, k] f_k, bias excluded.
    pub fn cam_from_features(&self, features: &Tensor, class_id: usize, height: usize, width: usize) -> Result<Heatmap> {
        if class_id >= self.class_count() {
            return Err(Error::OutOfRange(format!("class {class_id} of {}", self.class_count())));
        }
        let row = self.classifier_weight.crop2(class_id, 0, 1, self.unit_count());
        let values = weighted_sum(features, &row).reshape(features.shape()[1..].to_vec())?;
        Heatmap::new(values, self.alignment, height, width, HeatmapSource::Class(class_id))
    }

    pub fn unit_activation_map(&self, image: &Tensor, unit_id: usize) -> Result<Heatmap> {
        let features = self.features(image)?;
        let (h, w) = image_dims(image)?;
        self.unit_map_from_features(&features, unit_id, h, w)
    }

    pub fn unit_map_from_features(&self, features: &Tensor, unit_id: usize, height: usize, width: usize) -> Result<Heatmap> {
        if unit_id >= self.unit_count() {
            return Err(Error::OutOfRange(format!("unit {unit_id} of {}", self.unit_count())));
        }
        Heatmap::new(features.channel(unit_id), self.alignment, height, width, HeatmapSource::Unit(unit_id))
    }
}

fn image_dims(image: &Tensor) -> Result<(usize, usize)> {
    match *image.shape() {
        [h, w] | [1, h, w] => Ok((h, w)),
        ref s => Err(Error::Shape {
            layer: "image".into(),
            expected: vec![1, 0, 0],
            actual: s.to_vec(),
        }),
    }
}

/// (C, h, w) = Σ_k weight[c, k] · features[k].
fn weighted_sum(features: &Tensor, weight: &Tensor) -> Tensor {
    let (units, h, w) = (features.shape()[0], features.shape()[1], features.shape()[2]);
    let classes = weight.shape()[0];
    let plane = h * w;
    let mut out = Tensor::zeros(&[classes, h, w]);
    let f = features.data();
    let dst = out.data_mut();
    for c in 0..classes {
        let o = &mut dst[c * plane..(c + 1) * plane];
        for k in 0..units {
            let wk = weight.data()[c * units + k];
            for (v, x) in o.iter_mut().zip(&f[k * plane..(k + 1) * plane]) {
                *v += wk * x;
            }
        }
    }
    out
}

/// Stride-1 box average with a `window` kernel, valid positions only.
fn window_average(map: &Tensor, window: (usize, usize)) -> Tensor {
    let (c, h, w) = (map.shape()[0], map.shape()[1], map.shape()[2]);
    let (kh, kw) = window;
    let (oh, ow) = (h + 1 - kh, w + 1 - kw);
    let norm = (kh * kw) as f64;
    Tensor::from_fn(&[c, oh, ow], |i| {
        let (ch, r, col) = (i / (oh * ow), (i / ow) % oh, i % ow);
        let mut s = 0.0;
        for dr in 0..kh {
            for dc in 0..kw {
                s += map.at3(ch, r + dr, col + dc);
            }
        }
        s / norm
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub predicted: usize,
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum HeatmapSource {
    Class(usize),
    Unit(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// Feature-resolution values over the padded image.
    pub values: Tensor,
    /// Image-resolution values, cropped to the unpadded image.
    pub upsampled: Tensor,
    pub source: HeatmapSource,
}

impl Heatmap {
    fn new(values: Tensor, alignment: usize, height: usize, width: usize, source: HeatmapSource) -> Result<Self> {
        let (fh, fw) = (values.shape()[0], values.shape()[1]);
        let up = upsample_bilinear(&values, fh * alignment, fw * alignment)?;
        Ok(Heatmap {
            upsampled: up.crop2(0, 0, height, width),
            values,
            source,
        })
    }

    /// (row, col) of the upsampled maximum.
    pub fn peak(&self) -> (usize, usize) {
        let i = self.upsampled.argmax();
        let w = self.upsampled.shape()[1];
        (i / w, i % w)
    }
}

/// Annotation text per unit, as consumed by explanations.
pub trait AnnotationSource {
    /// Joined descriptions of a unit, or `None` when it has no usable annotation.
    fn annotation_text(&self, unit_id: usize) -> Option<String>;
}

impl AnnotationSource for BTreeMap<usize, String> {
    fn annotation_text(&self, unit_id: usize) -> Option<String> {
        self.get(&unit_id).cloned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainedUnit {
    pub unit_id: usize,
    pub influence: f64,
    pub annotation_text: String,
    pub map: Heatmap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub image_id: String,
    pub predicted_class: usize,
    pub class_probability: f64,
    pub class_scores: Vec<f64>,
    pub cam: Heatmap,
    pub units: Vec<ExplainedUnit>,
    /// Per-image top units by influence towards the predicted class.
    pub candidate_unit_ids: Vec<usize>,
    pub candidate_influence: Vec<f64>,
}

impl Explanation {
    /// Concatenated annotation text of the first `k` listed units.
    pub fn text(&self, k: usize) -> String {
        self.units
            .iter()
            .take(k)
            .map(|u| u.annotation_text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub const MAX_ANNOTATED: usize = 5;

pub fn build_explanation(
    fcn: &FcnModel,
    image_id: &str,
    image: &Tensor,
    annotations: &dyn AnnotationSource,
    cfg: &MinerConfig,
    max_annotated: usize,
) -> Result<Explanation> {
    let (h, w) = image_dims(image)?;
    let features = fcn.features(image)?;
    let class = fcn.classify_features(&features, &fcn.tissue_windows(image)?);
    let c = class.predicted;
    let maxima = channel_maxima(&features);
    let mut candidates: Vec<(usize, f64)> = maxima
        .iter()
        .enumerate()
        .map(|(u, &a)| (u, a * fcn.classifier_weight.at2(c, u)))
        .collect();
    candidates.sort_by(|a, b| cmp_f64(b.1, a.1).then(a.0.cmp(&b.0)));
    candidates.truncate(cfg.top_per_image);
    let units = candidates
        .iter()
        .filter_map(|&(u, inf)| annotations.annotation_text(u).map(|t| (u, inf, t)))
        .take(max_annotated)
        .map(|(u, influence, annotation_text)| {
            Ok(ExplainedUnit {
                unit_id: u,
                influence,
                annotation_text,
                map: fcn.unit_map_from_features(&features, u, h, w)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Explanation {
        image_id: image_id.to_string(),
        predicted_class: c,
        class_probability: class.probabilities[c],
        class_scores: class.scores,
        cam: fcn.cam_from_features(&features, c, h, w)?,
        units,
        candidate_unit_ids: candidates.iter().map(|c| c.0).collect(),
        candidate_influence: candidates.iter().map(|c| c.1).collect(),
    })
}

/// A heatmap raster on disk: byte v maps back to min + v/255 · (max − min).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HeatmapFile {
    pub file: String,
    pub source: HeatmapSource,
    pub min: f64,
    pub max: f64,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub value_shape: [usize; 2],
    pub peak: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExplainedUnitFile {
    pub unit_id: usize,
    pub influence: f64,
    pub annotation_text: String,
    pub map: HeatmapFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExplanationFile {
    pub image_id: String,
    pub predicted_class: String,
    pub predicted_class_id: usize,
    pub class_probability: f64,
    pub class_scores: Vec<f64>,
    pub cam: HeatmapFile,
    pub units: Vec<ExplainedUnitFile>,
    pub candidate_unit_ids: Vec<usize>,
    pub candidate_influence: Vec<f64>,
}

impl ExplanationFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Concatenated annotation text of the first `k` listed units.
    pub fn text(&self, k: usize) -> String {
        self.units
            .iter()
            .take(k)
            .map(|u| u.annotation_text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn write_heatmap(dir: &Path, name: &str, map: &Heatmap) -> Result<HeatmapFile> {
    let (h, w) = (map.upsampled.shape()[0], map.upsampled.shape()[1]);
    let (min, max) = (map.upsampled.min(), map.upsampled.max());
    let span = max - min;
    let bytes: Vec<u8> = map
        .upsampled
        .data()
        .iter()
        .map(|&v| if span > 0.0 { ((v - min) / span * 255.0).round() as u8 } else { 0 })
        .collect();
    pgm::write(&dir.join(name), w, h, &bytes)?;
    let (r, c) = map.peak();
    Ok(HeatmapFile {
        file: name.to_string(),
        source: map.source,
        min,
        max,
        height: h,
        width: w,
        values: map.values.data().to_vec(),
        value_shape: [map.values.shape()[0], map.values.shape()[1]],
        peak: [r, c],
    })
}

/// Writes `<dir>/<imageId>.json` and its PGM heatmaps.
pub fn write_explanation(dir: &Path, e: &Explanation) -> Result<ExplanationFile> {
    fs::create_dir_all(dir).map_err(|err| Error::io(dir, err))?;
    let cam = write_heatmap(dir, &format!("{}_cam.pgm", e.image_id), &e.cam)?;
    let units = e
        .units
        .iter()
        .map(|u| {
            Ok(ExplainedUnitFile {
                unit_id: u.unit_id,
                influence: u.influence,
                annotation_text: u.annotation_text.clone(),
                map: write_heatmap(dir, &format!("{}_unit{}.pgm", e.image_id, u.unit_id), &u.map)?,
            })
        })
        .collect::<Result<_>>()?;
    let file = ExplanationFile {
        image_id: e.image_id.clone(),
        predicted_class: Label::from_index(e.predicted_class).map_or_else(|| e.predicted_class.to_string(), |l| l.to_string()),
        predicted_class_id: e.predicted_class,
        class_probability: e.class_probability,
        class_scores: e.class_scores.clone(),
        cam,
        units,
        candidate_unit_ids: e.candidate_unit_ids.clone(),
        candidate_influence: e.candidate_influence.clone(),
    };
    let path = dir.join(format!("{}.json", e.image_id));
    fs::write(&path, serde_json::to_string_pretty(&file)? + "\n").map_err(|err| Error::io(&path, err))?;
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::ModelSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[1, h, w], |_| rng.gen_range(0.0..1.0))
    }

    fn model(units: usize, seed: u64) -> Model {
        Model::init(ModelSpec::desk(32, units), seed).unwrap()
    }

    #[test]
    fn patch_sized_input_gives_cnn_logits() {
        let m = model(6, 3);
        let fcn = FcnModel::from_model(&m).unwrap();
        let x = random_image(32, 32, 1);
        let map = fcn.score_map(&fcn.trunk(&x).unwrap());
        assert_eq!(map.shape(), &[3, 1, 1]);
        let logits = m.forward(&x, false).unwrap().logits;
        for (a, b) in map.data().iter().zip(logits.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_image_gives_constant_interior_scores() {
        // cells whose receptive field stays clear of the zero-padded border
        let fcn = FcnModel::from_model(&model(4, 1)).unwrap();
        let map = fcn.score_map(&fcn.trunk(&Tensor::filled(&[1, 256, 192], 0.4)).unwrap());
        let (h, w) = (map.shape()[1], map.shape()[2]);
        for c in 0..3 {
            let inner = map.channel(c).crop2(3, 3, h - 6, w - 6);
            assert!(inner.max() - inner.min() < 1e-12);
        }
    }

    #[test]
    fn pooling_rules_differ_on_a_single_hot_window() {
        let mut fcn = FcnModel::from_model(&model(2, 1)).unwrap();
        fcn.window = (1, 1);
        fcn.classifier_weight = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        fcn.classifier_bias = Tensor::zeros(&[3]);
        // unit 0 (normal) everywhere, unit 1 (malignant) strong at one cell
        let mut f = Tensor::zeros(&[2, 3, 3]);
        f.data_mut()[..9].fill(1.0);
        f.data_mut()[9 + 4] = 5.0;
        assert_eq!(fcn.classify_features(&f, &[true; 9]).predicted, 2);
        let mut valid = [true; 9];
        valid[4] = false;
        assert_eq!(fcn.classify_features(&f, &valid).predicted, 0);
        fcn.pooling = ImagePooling::Mean;
        assert_eq!(fcn.classify_features(&f, &[true; 9]).predicted, 0);
    }

    #[test]
    fn classifier_kernel_copies_fc() {
        let m = model(5, 2);
        let fcn = FcnModel::from_model(&m).unwrap();
        assert_eq!(fcn.classifier_weight, m.fc_params().weight);
        assert_eq!(fcn.classifier_bias, m.fc_params().bias);
        assert_eq!(fcn.alignment, 16);
        assert_eq!(fcn.window, (2, 2));
    }

    #[test]
    fn odd_sized_image_is_padded_and_cropped() {
        let fcn = FcnModel::from_model(&model(4, 2)).unwrap();
        let img = random_image(40, 50, 5).reshape(vec![40, 50]).unwrap();
        let cam = fcn.cam(&img, 1).unwrap();
        assert_eq!(cam.values.shape(), &[3, 4]);
        assert_eq!(cam.upsampled.shape(), &[40, 50]);
        assert!(fcn.cam(&img, 3).is_err());
        assert!(fcn.unit_activation_map(&img, 4).is_err());
    }

    #[test]
    fn zero_weights_give_zero_cam() {
        let mut m = model(4, 2);
        m.fc_params_mut().weight.data_mut().fill(0.0);
        let fcn = FcnModel::from_model(&m).unwrap();
        let cam = fcn.cam(&random_image(64, 64, 1), 0).unwrap();
        assert!(cam.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_map_ignores_weights() {
        let mut m = model(4, 2);
        let x = random_image(64, 64, 9);
        let before = FcnModel::from_model(&m).unwrap().unit_activation_map(&x, 2).unwrap();
        m.fc_params_mut().weight.data_mut().fill(0.0);
        let after = FcnModel::from_model(&m).unwrap().unit_activation_map(&x, 2).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn empty_store_still_explains() {
        let fcn = FcnModel::from_model(&model(10, 4)).unwrap();
        let store: BTreeMap<usize, String> = BTreeMap::new();
        let e = build_explanation(&fcn, "x", &random_image(64, 64, 2), &store, &MinerConfig::default(), 5).unwrap();
        assert!(e.units.is_empty());
        assert_eq!(e.candidate_unit_ids.len(), 8);
        assert_eq!(e.cam.source, HeatmapSource::Class(e.predicted_class));
    }

    #[test]
    fn top_candidate_annotated_alone() {
        let fcn = FcnModel::from_model(&model(10, 4)).unwrap();
        let img = random_image(64, 64, 2);
        let store = BTreeMap::new();
        let e = build_explanation(&fcn, "x", &img, &store, &MinerConfig::default(), 5).unwrap();
        let top = e.candidate_unit_ids[0];
        let store = BTreeMap::from([(top, "round mass".to_string())]);
        let e = build_explanation(&fcn, "x", &img, &store, &MinerConfig::default(), 5).unwrap();
        assert_eq!(e.units.len(), 1);
        assert_eq!(e.units[0].unit_id, top);
        assert_eq!(e.text(8), "round mass");
    }

    #[test]
    fn heatmap_file_inverts_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let fcn = FcnModel::from_model(&model(4, 7)).unwrap();
        let img = random_image(64, 64, 3);
        let store = BTreeMap::new();
        let e = build_explanation(&fcn, "img_x", &img, &store, &MinerConfig::default(), 5).unwrap();
        let f = write_explanation(dir.path(), &e).unwrap();
        let back = ExplanationFile::load(&dir.path().join("img_x.json")).unwrap();
        assert_eq!(back, f);
        let (_, _, px) = pgm::read(&dir.path().join(&f.cam.file)).unwrap();
        let step = (f.cam.max - f.cam.min) / 255.0;
        for (b, v) in px.iter().zip(e.cam.upsampled.data()) {
            let restored = f.cam.min + f64::from(*b) * step;
            assert!((restored - v).abs() <= step / 2.0 + 1e-12);
        }
    }
}
