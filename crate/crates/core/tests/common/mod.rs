//! Independent reference implementations and fixture builders shared by the
//! integration tests and the acceptance runner. Everything here is written
//! with plain loops and must not call the code it checks.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unitminer_core::evalkit::EmbeddingTable;
use unitminer_core::numkernel::{LayerSpec, Params};
use unitminer_core::synthdata::{ImageRecord, Lesion, LesionClass, Mask};
use unitminer_core::{Label, Model, ModelSpec, Rect, Split, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Cross-correlation by seven nested loops.
pub fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b.data()[oc];
                for ic in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as i64 - pad as i64;
                            let ix = (ox * stride + kx) as i64 - pad as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                continue;
                            }
                            let xv = x.data()[(ic * h + iy as usize) * wd + ix as usize];
                            let wv = w.data()[((oc * c + ic) * kh + ky) * kw + kx];
                            acc += xv * wv;
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Tensor::new(vec![o, oh, ow], out).unwrap()
}

pub fn naive_relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn naive_maxpool(x: &Tensor, k: usize, stride: usize) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..k {
                    for dx in 0..k {
                        m = m.max(x.at3(ch, oy * stride + dy, ox * stride + dx));
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).unwrap()
}

/// Forward pass by the reference kernels, returning every layer output.
pub fn naive_forward(model: &Model, input: &Tensor) -> Vec<Tensor> {
    let mut x = input.clone();
    let mut outs = Vec::new();
    for (layer, p) in model.spec.layers.iter().zip(&model.params) {
        x = match *layer {
            LayerSpec::Conv { stride, pad, .. } => {
                let p = p.as_ref().unwrap();
                naive_conv(&x, &p.weight, &p.bias, stride, pad)
            }
            LayerSpec::Relu => naive_relu(&x),
            LayerSpec::Maxpool { kernel, stride } => naive_maxpool(&x, kernel.0, stride),
            LayerSpec::Gap => {
                let (c, plane) = (x.shape()[0], x.shape()[1] * x.shape()[2]);
                let means = (0..c)
                    .map(|ch| x.data()[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
                    .collect();
                Tensor::new(vec![c], means).unwrap()
            }
            LayerSpec::Fc { in_features, out_features } => {
                let p = p.as_ref().unwrap();
                let y = (0..out_features)
                    .map(|o| {
                        p.bias.data()[o]
                            + (0..in_features)
                                .map(|i| p.weight.data()[o * in_features + i] * x.data()[i])
                                .sum::<f64>()
                    })
                    .collect();
                Tensor::new(vec![out_features], y).unwrap()
            }
        };
        outs.push(x.clone());
    }
    outs
}

/// Replaces every parameter (biases included) with uniform draws in [-scale, scale).
pub fn randomize(model: &mut Model, rng: &mut ChaCha8Rng, scale: f64) {
    for p in model.params.iter_mut().flatten() {
        let Params { weight, bias } = p;
        weight.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
        bias.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
    }
}

/// Desk architecture on `side`-pixel patches with `units` final units and
/// random weights and biases.
pub fn random_desk_model(side: usize, units: usize, seed: u64) -> Model {
    let mut model = Model::init(ModelSpec::desk(side, units), seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for p in model.params.iter_mut().flatten() {
        p.bias.data_mut().iter_mut().for_each(|v| *v = r.gen_range(-0.1..0.1));
    }
    model
}

/// Same layers and parameters as `model`, accepting `h`x`w` inputs.
pub fn resized(model: &Model, h: usize, w: usize) -> Model {
    let mut spec = model.spec.clone();
    spec.input_shape = [1, h, w];
    Model::from_params(spec, model.params.clone()).unwrap()
}

/// Patch label by direct pixel counting, with integer threshold tests
/// (`10 * count >= 3 * area` for the 0.3 rules).
pub fn brute_label(rect: &Rect, image: &ImageRecord) -> Label {
    let area = rect.width() * rect.height();
    for class in [LesionClass::Malignant, LesionClass::Benign] {
        let members: Vec<&Lesion> = image.lesions.iter().filter(|l| l.class == class).collect();
        if members.is_empty() {
            continue;
        }
        let mut covered = 0;
        for y in rect.y0..=rect.y1 {
            for x in rect.x0..=rect.x1 {
                if members.iter().any(|l| l.mask.get(y, x)) {
                    covered += 1;
                }
            }
        }
        let mut finding = false;
        for l in &members {
            let (mut inside, mut total) = (0, 0);
            for y in 0..l.mask.height() {
                for x in 0..l.mask.width() {
                    if l.mask.get(y, x) {
                        total += 1;
                        if x >= rect.x0 && x <= rect.x1 && y >= rect.y0 && y <= rect.y1 {
                            inside += 1;
                        }
                    }
                }
            }
            finding |= 10 * inside >= 3 * total;
        }
        if finding || 10 * covered >= 3 * area {
            return class.label();
        }
    }
    Label::Normal
}

fn random_blob(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Mask {
    let mut m = Mask::new(h, w);
    let cy = rng.gen_range(0..h) as f64;
    let cx = rng.gen_range(0..w) as f64;
    let disk = rng.gen_bool(0.5);
    let ry = rng.gen_range(1.0..h as f64 / 3.0);
    let rx = if disk { ry } else { rng.gen_range(1.0..w as f64 / 3.0) };
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let inside = if disk {
                dy * dy + dx * dx <= ry * ry
            } else {
                dy.abs() <= ry && dx.abs() <= rx
            };
            m.set(y, x, inside);
        }
    }
    m.set(cy as usize, cx as usize, true);
    m
}

/// A random image with a half-plane breast mask and 0-4 possibly overlapping
/// lesions of random classes.
pub fn random_labelled_image(rng: &mut ChaCha8Rng, id: &str) -> ImageRecord {
    let h = rng.gen_range(32..=64);
    let w = rng.gen_range(32..=64);
    let cut = rng.gen_range(0..w);
    let mut breast = Mask::new(h, w);
    for y in 0..h {
        for x in 0..cut.max(1) {
            breast.set(y, x, true);
        }
    }
    let lesions = (0..rng.gen_range(0..=4))
        .map(|_| Lesion {
            class: if rng.gen_bool(0.5) {
                LesionClass::Benign
            } else {
                LesionClass::Malignant
            },
            mask: random_blob(rng, h, w),
            keywords: vec![],
        })
        .collect();
    ImageRecord {
        image_id: id.to_string(),
        pixels: Tensor::from_fn(&[h, w], |_| rng.gen_range(0.0..1.0)),
        breast_mask: breast,
        lesions,
        report_tokens: vec![],
        split: Split::Train,
    }
}

pub fn random_rect(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Rect {
    let x0 = rng.gen_range(0..w);
    let y0 = rng.gen_range(0..h);
    Rect::new(x0, y0, rng.gen_range(x0..w), rng.gen_range(y0..h))
}

/// Mann-Whitney AUC over every (positive, negative) pair.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Partial area above `tpr_min` by sweeping `steps` FPR cells and reading the
/// ROC step function built from scratch at each cell's midpoint.
pub fn grid_partial_auc(scores: &[f64], labels: &[bool], tpr_min: f64, steps: usize) -> f64 {
    let np = labels.iter().filter(|&&l| l).count() as f64;
    let nn = labels.len() as f64 - np;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    // ROC vertices for "score >= t"
    let mut pts = vec![(0.0, 0.0)];
    for &t in &thresholds {
        let tp = scores.iter().zip(labels).filter(|(s, &l)| l && **s >= t).count() as f64;
        let fp = scores.iter().zip(labels).filter(|(s, &l)| !l && **s >= t).count() as f64;
        pts.push((fp / nn, tp / np));
    }
    let tpr_at = |f: f64| -> f64 {
        for seg in pts.windows(2) {
            let ((f0, t0), (f1, t1)) = (seg[0], seg[1]);
            if f >= f0 && f <= f1 && f1 > f0 {
                return t0 + (t1 - t0) * (f - f0) / (f1 - f0);
            }
        }
        1.0
    };
    let dx = 1.0 / steps as f64;
    (0..steps)
        .map(|i| (tpr_at((i as f64 + 0.5) * dx) - tpr_min).max(0.0) * dx)
        .sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Greedy matching by explicit max/mean over every token pair.
pub fn exhaustive_gms(candidate: &[&str], reference: &[&str], emb: &EmbeddingTable) -> f64 {
    let vecs = |toks: &[&str]| -> Vec<Vec<f64>> { toks.iter().filter_map(|t| emb.get(t).map(<[f64]>::to_vec)).collect() };
    let (c, r) = (vecs(candidate), vecs(reference));
    let sim = |a: &[f64], b: &[f64]| -> f64 {
        let dot: f64 = (0..a.len()).map(|i| a[i] * b[i]).sum();
        (dot / (norm(a) * norm(b))).clamp(-1.0, 1.0)
    };
    let side = |from: &[Vec<f64>], to: &[Vec<f64>]| -> f64 {
        let mut total = 0.0;
        for a in from {
            let mut best = f64::NEG_INFINITY;
            for b in to {
                best = best.max(sim(a, b));
            }
            total += best;
        }
        total / from.len() as f64
    };
    0.5 * (side(&c, &r) + side(&r, &c))
}

/// Frequency tally of per-patch top lists, grouped by attributed class.
pub fn tally(tops: &[(usize, Vec<usize>)]) -> BTreeMap<usize, BTreeMap<usize, usize>> {
    let mut out: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (class, units) in tops {
        let row = out.entry(*class).or_default();
        for u in units {
            *row.entry(*u).or_insert(0) += 1;
        }
    }
    out
}

/// The `n` most frequent units, ties by ascending id, by repeated scanning.
pub fn top_by_frequency(freq: &BTreeMap<usize, usize>, n: usize) -> Vec<usize> {
    let mut left: BTreeSet<usize> = freq.keys().copied().collect();
    let mut out = Vec::new();
    while out.len() < n && !left.is_empty() {
        let mut best: Option<usize> = None;
        for &u in &left {
            best = match best {
                Some(b) if freq[&b] >= freq[&u] => Some(b),
                _ => Some(u),
            };
        }
        let b = best.unwrap();
        left.remove(&b);
        out.push(b);
    }
    out
}

pub fn tokens(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

pub fn sample(image_id: &str, rect: Rect, input: Tensor) -> unitminer_core::patchline::PatchSample {
    unitminer_core::patchline::PatchSample {
        record: unitminer_core::patchline::PatchRecord {
            image_id: image_id.to_string(),
            split: Split::Test,
            rect,
            label: Label::Normal,
            tissue_fraction: 1.0,
            per_lesion_overlap: vec![],
        },
        input,
    }
}

/// `n` random patch samples of side `side`, each with its own image id.
pub fn random_samples(rng: &mut ChaCha8Rng, n: usize, side: usize) -> Vec<unitminer_core::patchline::PatchSample> {
    (0..n)
        .map(|i| {
            let rect = Rect::square(rng.gen_range(0..64), rng.gen_range(0..64), side);
            sample(&format!("img_{i:03}"), rect, random_tensor(rng, &[1, side, side], 0.0, 1.0))
        })
        .collect()
}

/// Spatial max of every channel by a plain scan.
pub fn scan_maxima(features: &Tensor) -> Vec<f64> {
    let (c, h, w) = (features.shape()[0], features.shape()[1], features.shape()[2]);
    (0..c)
        .map(|ch| {
            let mut m = f64::NEG_INFINITY;
            for y in 0..h {
                for x in 0..w {
                    if features.at3(ch, y, x) > m {
                        m = features.at3(ch, y, x);
                    }
                }
            }
            m
        })
        .collect()
}

/// (unit, influence) for every unit, ordered by repeated selection of the
/// largest remaining product (smaller id first on ties).
pub fn brute_ranking(model: &Model, features: &Tensor, class_id: usize) -> Vec<(usize, f64)> {
    let maxima = scan_maxima(features);
    let fc = model.params.last().unwrap().as_ref().unwrap();
    let units = maxima.len();
    let products: Vec<f64> = (0..units).map(|u| maxima[u] * fc.weight.data()[class_id * units + u]).collect();
    let mut used = vec![false; units];
    let mut out = Vec::new();
    for _ in 0..units {
        let mut best: Option<usize> = None;
        for u in 0..units {
            if used[u] {
                continue;
            }
            if best.is_none_or(|b| products[u] > products[b]) {
                best = Some(u);
            }
        }
        let b = best.unwrap();
        used[b] = true;
        out.push((b, products[b]));
    }
    out
}

pub mod service;
