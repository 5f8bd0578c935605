use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use unitminer_core::synthdata::{generate_dataset, load_dataset, pgm, read_manifest, ManifestRecord, SynthConfig};
use unitminer_core::{Error, Label};

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn small(count: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        image_count: count,
        image_size: (64, 64),
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn same_seed_gives_byte_identical_trees() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(&small(12, 3), a.path()).unwrap();
    generate_dataset(&small(12, 3), b.path()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(ta.len() > 12);
    assert_eq!(ta, tb);
    let c = tempfile::tempdir().unwrap();
    generate_dataset(&small(12, 4), c.path()).unwrap();
    assert_ne!(tree(c.path()), ta);
}

#[test]
fn all_normal_mix_has_no_lesions_or_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        class_mix: (1.0, 0.0, 0.0),
        ..small(10, 1)
    };
    let m = generate_dataset(&cfg, dir.path()).unwrap();
    assert!(m.records.iter().all(|r| r.lesions.is_empty() && r.report_tokens.is_empty()));
}

#[test]
fn split_and_class_counts_follow_floor_ceil_allocation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        image_count: 200,
        image_size: (32, 32),
        seed: 7,
        ..SynthConfig::default()
    };
    generate_dataset(&cfg, dir.path()).unwrap();
    // count straight from the manifest text
    let text = fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
    let mut splits: BTreeMap<String, usize> = BTreeMap::new();
    let mut classes: BTreeMap<String, usize> = BTreeMap::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        *splits.entry(v["split"].as_str().unwrap().to_string()).or_default() += 1;
        let lesions = v["lesions"].as_array().unwrap();
        let class = if lesions.iter().any(|l| l["class"] == "malignant") {
            "malignant"
        } else if lesions.is_empty() {
            "normal"
        } else {
            "benign"
        };
        *classes.entry(class.to_string()).or_default() += 1;
    }
    let within = |count: usize, exact: f64| count == exact.floor() as usize || count == exact.ceil() as usize;
    for (name, f) in [("train", 0.8), ("test", 0.1), ("holdout", 0.1)] {
        assert!(within(splits[name], 200.0 * f), "{name}: {}", splits[name]);
    }
    for (name, f) in [("normal", 0.4), ("benign", 0.3), ("malignant", 0.3)] {
        assert!(within(classes[name], 200.0 * f), "{name}: {}", classes[name]);
    }
    assert_eq!(splits.values().sum::<usize>(), 200);
    assert_eq!((splits["train"], splits["test"], splits["holdout"]), (160, 20, 20));
}

#[test]
fn loading_reproduces_every_manifest_field() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_dataset(&small(9, 5), dir.path()).unwrap();
    let loaded: Vec<_> = load_dataset(dir.path()).unwrap().map(Result::unwrap).collect();
    assert_eq!(loaded.len(), manifest.records.len());
    for (img, row) in loaded.iter().zip(&manifest.records) {
        assert_eq!(img.image_id, row.image_id);
        assert_eq!(img.split.to_string(), row.split);
        assert_eq!((img.height(), img.width()), (row.height, row.width));
        assert_eq!(img.report_tokens, row.report_tokens);
        let (_, _, px) = pgm::read(&dir.path().join(&row.image)).unwrap();
        let back: Vec<u8> = img.pixels.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(back, px);
        let (_, _, breast) = pgm::read(&dir.path().join(&row.breast_mask)).unwrap();
        assert_eq!(img.breast_mask.to_bytes(), breast);
        assert_eq!(img.lesions.len(), row.lesions.len());
        for (l, ml) in img.lesions.iter().zip(&row.lesions) {
            assert_eq!(l.class.label().as_str(), ml.class);
            assert_eq!(l.keywords, ml.keywords);
            let (_, _, bytes) = pgm::read(&dir.path().join(&ml.mask)).unwrap();
            assert_eq!(l.mask.to_bytes(), bytes);
            assert!(l.mask.count() > 0 && l.mask.is_subset_of(&img.breast_mask));
        }
    }
}

#[test]
fn missing_image_file_names_the_image() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_dataset(&small(3, 2), dir.path()).unwrap();
    let victim = &manifest.records[1];
    fs::remove_file(dir.path().join(&victim.image)).unwrap();
    let err = load_dataset(dir.path())
        .unwrap()
        .find_map(Result::err)
        .expect("load must fail");
    assert!(matches!(&err, Error::Record { image_id, .. } if *image_id == victim.image_id), "{err}");
    assert!(err.to_string().contains(&victim.image_id));
}

#[test]
fn hand_built_two_image_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::create_dir_all(root.join("images")).unwrap();
    let (h, w) = (32, 32);
    let full = vec![255u8; h * w];
    let mut lesion = vec![0u8; h * w];
    for y in 10..16 {
        for x in 10..16 {
            lesion[y * w + x] = 255;
        }
    }
    pgm::write(&root.join("images/a.pgm"), w, h, &vec![90u8; h * w]).unwrap();
    pgm::write(&root.join("images/b.pgm"), w, h, &vec![120u8; h * w]).unwrap();
    pgm::write(&root.join("images/breast.pgm"), w, h, &full).unwrap();
    pgm::write(&root.join("images/lesion.pgm"), w, h, &lesion).unwrap();
    let rows = [
        serde_json::json!({"imageId": "a", "split": "train", "height": h, "width": w,
            "image": "images/a.pgm", "breastMask": "images/breast.pgm", "lesions": [], "reportTokens": []}),
        serde_json::json!({"imageId": "b", "split": "test", "height": h, "width": w,
            "image": "images/b.pgm", "breastMask": "images/breast.pgm",
            "lesions": [{"class": "malignant", "keywords": ["spiculated"], "mask": "images/lesion.pgm"}],
            "reportTokens": ["spiculated", "mass"]}),
    ];
    let text: String = rows.iter().map(|r| format!("{r}\n")).collect();
    fs::write(root.join("manifest.jsonl"), text).unwrap();

    let parsed: Vec<ManifestRecord> = read_manifest(root).unwrap();
    assert_eq!(parsed.len(), 2);
    let images: Vec<_> = load_dataset(root).unwrap().map(Result::unwrap).collect();
    assert_eq!(images.len(), 2);
    assert_eq!(images[0].label(), Label::Normal);
    assert_eq!(images[1].label(), Label::Malignant);
    assert_eq!(images[1].lesions[0].mask.count(), 36);
    assert!((images[0].pixels.data()[0] - 90.0 / 255.0).abs() < 1e-15);
}
