use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::{self, Association, Family, LEXICON};
use super::{pgm, DatasetManifest, ImageRecord, Lesion, LesionClass, ManifestLesion, ManifestRecord, Mask};
use crate::error::{Error, Result};
use crate::label::{Label, Split};
use crate::numkernel::Tensor;

/// Smallest supported image side.
pub const MIN_IMAGE_SIDE: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub image_count: usize,
    /// (height, width)
    pub image_size: (usize, usize),
    /// (normal, benign, malignant)
    pub class_mix: (f64, f64, f64),
    /// (train, test, holdout)
    pub split_fractions: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_count: 200,
            image_size: (128, 128),
            class_mix: (0.4, 0.3, 0.3),
            split_fractions: (0.8, 0.1, 0.1),
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_count < 1 {
            return Err(Error::Config("image count must be >= 1".into()));
        }
        let (h, w) = self.image_size;
        if h < MIN_IMAGE_SIDE || w < MIN_IMAGE_SIDE {
            return Err(Error::Config(format!(
                "image size {h}x{w} below the {MIN_IMAGE_SIDE}px minimum needed to place lesions"
            )));
        }
        for (name, (a, b, c)) in [("class mix", self.class_mix), ("split fractions", self.split_fractions)] {
            let ok = [a, b, c].iter().all(|f| (0.0..=1.0).contains(f)) && ((a + b + c) - 1.0).abs() <= 1e-9;
            if !ok {
                return Err(Error::Config(format!("{name} ({a}, {b}, {c}) must lie in [0,1] and sum to 1")));
            }
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` items over `fractions`.
///
/// Every count is the floor or ceiling of `n * f`; leftover items go to the
/// largest fractional parts, earlier entries winning ties.
pub fn allocate(n: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Spreads `counts[s]` copies of each slot `s` evenly over a sequence.
fn interleave(counts: &[usize]) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let mut used = vec![0usize; counts.len()];
    let mut seq = Vec::with_capacity(n);
    for j in 0..n {
        let deficit = |s: usize| counts[s] as f64 * (j + 1) as f64 / n as f64 - used[s] as f64;
        let pick = (0..counts.len())
            .filter(|&s| used[s] < counts[s])
            .max_by(|&a, &b| deficit(a).partial_cmp(&deficit(b)).expect("finite").then(b.cmp(&a)))
            .expect("slots remain");
        used[pick] += 1;
        seq.push(pick);
    }
    seq
}

/// Renders one image of class `label` with its own RNG stream.
pub fn render_image(image_id: &str, label: Label, height: usize, width: usize, split: Split, seed: u64) -> ImageRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);

    // half-ellipse anchored on the left or right edge
    let left = rng.gen_bool(0.5);
    let cx = if left { 0.0 } else { w - 1.0 };
    let cy = h / 2.0 + rng.gen_range(-0.05..0.05) * h;
    let ax = w * rng.gen_range(0.78..0.95);
    let ay = h * rng.gen_range(0.40..0.49);

    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(0.04..0.18),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();

    let mut breast = Mask::new(height, width);
    let mut px = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64, y as f64);
            let r2 = ((fx - cx) / ax).powi(2) + ((fy - cy) / ay).powi(2);
            let i = y * width + x;
            if r2 <= 1.0 {
                breast.set(y, x, true);
                let texture: f64 = waves
                    .iter()
                    .map(|&(f, dir, phase)| (f * (fx * dir.cos() + fy * dir.sin()) + phase).sin())
                    .sum::<f64>()
                    / waves.len() as f64;
                let falloff = 0.08 * r2;
                let v = 0.38 + 0.09 * texture - falloff + rng.gen_range(-0.03..0.03);
                px[i] = v.clamp(0.21, 0.75);
            } else {
                px[i] = rng.gen_range(0.0..0.04);
            }
        }
    }

    let mut lesions = Vec::new();
    match label {
        Label::Normal => {}
        Label::Benign => lesions.push(plant_benign(&mut rng, &breast, &mut px, cx, cy, ax, ay)),
        Label::Malignant => lesions.push(plant_malignant(&mut rng, &breast, &mut px, cx, cy, ax, ay)),
    }

    let mut report_tokens: Vec<String> = Vec::new();
    for l in &lesions {
        for k in &l.keywords {
            if !report_tokens.contains(k) {
                report_tokens.push(k.clone());
            }
        }
    }

    let pixels = px
        .iter()
        .map(|&v| f64::from(quantize(v)) / 255.0)
        .collect::<Vec<_>>();
    ImageRecord {
        image_id: image_id.to_string(),
        pixels: Tensor::new(vec![height, width], pixels).expect("image shape"),
        breast_mask: breast,
        lesions,
        report_tokens,
        split,
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Lesion center well inside the breast ellipse.
fn lesion_center(rng: &mut ChaCha8Rng, cx: f64, cy: f64, ax: f64, ay: f64, width: f64) -> (f64, f64) {
    loop {
        let t = rng.gen_range(-PI / 2.0..PI / 2.0);
        let rho = rng.gen_range(0.15..0.7);
        let dx = rho * ax * t.cos();
        let x = if cx == 0.0 { dx } else { cx - dx };
        let y = cy + rho * ay * t.sin();
        if x >= 10.0 && x <= width - 11.0 {
            return (x, y);
        }
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, family: Family, association: Association) -> &'a str {
    let options: Vec<&str> = LEXICON
        .iter()
        .filter(|t| t.family == family && t.association == association)
        .map(|t| t.token)
        .collect();
    options.choose(rng).expect("lexicon covers family")
}

fn finish(class: LesionClass, mut mask: Mask, breast: &Mask, keywords: Vec<&str>) -> Lesion {
    for (m, &b) in mask.bits.iter_mut().zip(breast.bits()) {
        *m &= b;
    }
    assert!(mask.count() > 0, "lesion placed outside breast");
    Lesion {
        class,
        mask,
        keywords: keywords.into_iter().map(str::to_owned).collect(),
    }
}

#[allow(clippy::too_many_arguments)]
fn plant_benign(
    rng: &mut ChaCha8Rng,
    breast: &Mask,
    px: &mut [f64],
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
) -> Lesion {
    let (width, height) = (breast.width(), breast.height());
    let (lx, ly) = lesion_center(rng, cx, cy, ax, ay, width as f64);
    let radius = rng.gen_range(5.0..9.0);
    let gain = rng.gen_range(0.3..0.42);
    let mut mask = Mask::new(height, width);
    for y in 0..height {
        for x in 0..width {
            let d = ((x as f64 - lx).powi(2) + (y as f64 - ly).powi(2)).sqrt();
            if d <= radius && breast.get(y, x) {
                mask.set(y, x, true);
                px[y * width + x] += gain * (1.0 - (d / radius).powi(2)).sqrt().max(0.35);
            }
        }
    }
    let mut keywords = vec!["mass", pick(rng, Family::Shape, Association::Benign)];
    keywords.push(pick(rng, Family::Margin, Association::Benign));
    if rng.gen_bool(0.3) {
        keywords.push("calcification");
        keywords.push(pick(rng, Family::Calcification, Association::Benign));
    }
    finish(LesionClass::Benign, mask, breast, keywords)
}

#[allow(clippy::too_many_arguments)]
fn plant_malignant(
    rng: &mut ChaCha8Rng,
    breast: &Mask,
    px: &mut [f64],
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
) -> Lesion {
    let (width, height) = (breast.width(), breast.height());
    let (lx, ly) = lesion_center(rng, cx, cy, ax, ay, width as f64);
    let core = rng.gen_range(3.5..6.0);
    let spikes = rng.gen_range(6..11) as f64;
    let reach = core * rng.gen_range(0.9..1.5);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let gain = rng.gen_range(0.3..0.42);
    let mut mask = Mask::new(height, width);
    for y in 0..height {
        for x in 0..width {
            let (dx, dy) = (x as f64 - lx, y as f64 - ly);
            let d = (dx * dx + dy * dy).sqrt();
            let theta = dy.atan2(dx);
            let spike = (spikes * (theta + phase) / 2.0).cos().abs().powi(12);
            let r = core + reach * spike;
            if d <= r && breast.get(y, x) {
                mask.set(y, x, true);
                let v = if d <= core { gain } else { gain * 0.75 };
                px[y * width + x] += v;
            }
        }
    }
    // speckle cluster around the core
    let specks = rng.gen_range(5..10);
    for _ in 0..specks {
        let a = rng.gen_range(0.0..2.0 * PI);
        let rho = rng.gen_range(core * 0.8..core * 2.0);
        let (sx, sy) = ((lx + rho * a.cos()).round(), (ly + rho * a.sin()).round());
        for (ox, oy) in [(0, 0), (1, 0), (0, 1), (-1, 0), (0, -1)] {
            let (x, y) = (sx as i64 + ox, sy as i64 + oy);
            if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
                let (x, y) = (x as usize, y as usize);
                if !breast.get(y, x) {
                    continue;
                }
                mask.set(y, x, true);
                px[y * width + x] += 0.4;
            }
        }
    }
    let mut keywords = vec!["mass", "irregular", "spiculated"];
    if rng.gen_bool(0.5) {
        keywords.push("calcification");
        keywords.push(["pleomorphic", "clustered"][rng.gen_range(0..2)]);
    }
    finish(LesionClass::Malignant, mask, breast, keywords)
}

/// Generates a dataset into `out_dir`; identical configs give identical bytes.
pub fn generate_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let (height, width) = cfg.image_size;
    let n = cfg.image_count;
    for sub in ["images", "masks"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (cn, cb, cm) = cfg.class_mix;
    let class_counts = allocate(n, &[cn, cb, cm]);
    let mut labels: Vec<Label> = class_counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat(Label::ALL[c]).take(k))
        .collect();
    labels.shuffle(&mut rng);

    // stratify: walk images grouped by class, handing out splits evenly
    let (ft, fs_, fh) = cfg.split_fractions;
    let split_counts = allocate(n, &[ft, fs_, fh]);
    let mut by_class: Vec<usize> = (0..n).collect();
    by_class.sort_by_key(|&i| labels[i]);
    let mut splits = vec![Split::Train; n];
    for (slot, &img) in interleave(&split_counts).iter().zip(&by_class) {
        splits[img] = Split::ALL[*slot];
    }

    let seeds: Vec<u64> = (0..n).map(|_| rng.gen()).collect();
    let mut manifest = String::new();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let image_id = format!("img_{i:04}");
        let rec = render_image(&image_id, labels[i], height, width, splits[i], seeds[i]);
        let row = write_record(out_dir, &rec)?;
        manifest.push_str(&serde_json::to_string(&row)?);
        manifest.push('\n');
        records.push(row);
    }
    let mpath = out_dir.join("manifest.jsonl");
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    lexicon::write(&out_dir.join("lexicon.txt"))?;
    write_embeddings(&out_dir.join("embeddings.txt"), cfg.seed)?;
    Ok(DatasetManifest {
        root: out_dir.to_path_buf(),
        records,
    })
}

fn write_record(root: &Path, rec: &ImageRecord) -> Result<ManifestRecord> {
    let (h, w) = (rec.height(), rec.width());
    let image = format!("images/{}.pgm", rec.image_id);
    let bytes: Vec<u8> = rec.pixels.data().iter().map(|&v| quantize(v)).collect();
    pgm::write(&root.join(&image), w, h, &bytes)?;
    let breast_mask = format!("masks/{}_breast.pgm", rec.image_id);
    pgm::write(&root.join(&breast_mask), w, h, &rec.breast_mask.to_bytes())?;
    let mut lesions = Vec::with_capacity(rec.lesions.len());
    for (k, l) in rec.lesions.iter().enumerate() {
        let mask = format!("masks/{}_lesion{k}.pgm", rec.image_id);
        pgm::write(&root.join(&mask), w, h, &l.mask.to_bytes())?;
        lesions.push(ManifestLesion {
            class: match l.class {
                LesionClass::Benign => "benign".into(),
                LesionClass::Malignant => "malignant".into(),
            },
            keywords: l.keywords.clone(),
            mask,
        });
    }
    Ok(ManifestRecord {
        image_id: rec.image_id.clone(),
        split: rec.split.to_string(),
        height: h,
        width: w,
        image,
        breast_mask,
        lesions,
        report_tokens: rec.report_tokens.clone(),
    })
}

/// Dimension of the shipped toy embedding table.
pub const EMBEDDING_DIM: usize = 16;

/// Writes a small embedding table over the lexicon in which tokens of the same
/// family and clinical association lie close together.
pub fn write_embeddings(path: &Path, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e3b0);
    let mut basis = |_: usize| -> Vec<f64> { (0..EMBEDDING_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let families: Vec<Vec<f64>> = (0..4).map(&mut basis).collect();
    let assoc: Vec<Vec<f64>> = (0..3).map(&mut basis).collect();
    let noise: Vec<Vec<f64>> = (0..LEXICON.len()).map(&mut basis).collect();
    let mut text = String::new();
    for (t, nz) in LEXICON.iter().zip(&noise) {
        let f = &families[t.family as usize];
        let a = &assoc[t.association as usize];
        text.push_str(t.token);
        for d in 0..EMBEDDING_DIM {
            let v = f[d] + 0.7 * a[d] + 0.45 * nz[d];
            text.push_str(&format!(" {v:.6}"));
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
