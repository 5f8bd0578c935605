mod common;

use std::collections::BTreeMap;

use rand::Rng;

use common::{brute_ranking, random_desk_model, random_samples, random_tensor, rng, scan_maxima, tally, top_by_frequency};
use unitminer_core::minecore::{
    coverage_fraction, rank_units, response_mask, select_influential_units, unit_max_activations, visualize_unit,
    MinerConfig,
};
use unitminer_core::numkernel::{upsample_bilinear, LayerSpec, Params};
use unitminer_core::{Model, ModelSpec, Tensor};

#[test]
fn ranking_matches_exhaustive_enumeration() {
    let mut r = rng(31);
    let cfg = MinerConfig {
        top_per_image: 8,
        ..MinerConfig::default()
    };
    for trial in 0..20 {
        let model = random_desk_model(16, 8, trial);
        let patch = random_tensor(&mut r, &[1, 16, 16], 0.0, 1.0);
        let features = model.forward(&patch, true).unwrap().activation(model.spec.feature_layer()).unwrap().clone();
        for class in 0..3 {
            let got = rank_units(&model, &patch, class, "p", &cfg).unwrap();
            let want = brute_ranking(&model, &features, class);
            let got: Vec<(usize, f64)> = got.iter().map(|g| (g.unit_id, g.influence)).collect();
            assert_eq!(got, want, "trial {trial} class {class}");
        }
    }
}

#[test]
fn stored_influence_is_exact_product() {
    let model = random_desk_model(16, 8, 3);
    let patch = random_tensor(&mut rng(3), &[1, 16, 16], 0.0, 1.0);
    for rec in rank_units(&model, &patch, 2, "p", &MinerConfig::default()).unwrap() {
        assert_eq!(rec.influence, rec.max_activation * rec.class_weight);
        assert_eq!(rec.class_weight, model.class_weight(2, rec.unit_id));
        assert!(rec.max_activation >= 0.0);
    }
}

#[test]
fn unit_maxima_match_recorded_forward_pass() {
    let mut r = rng(9);
    for seed in 0..10 {
        let model = random_desk_model(32, 12, seed);
        let patch = random_tensor(&mut r, &[1, 32, 32], 0.0, 1.0);
        let pass = model.forward(&patch, true).unwrap();
        let recorded = pass.activation(model.spec.feature_layer()).unwrap();
        assert_eq!(unit_max_activations(&model, &patch).unwrap(), scan_maxima(recorded));
    }
}

/// One 1x1 conv copying the input into `units` channels with per-unit gains.
fn gain_model(side: usize, gains: &[f64]) -> Model {
    let units = gains.len();
    let spec = ModelSpec {
        input_shape: [1, side, side],
        layers: vec![
            LayerSpec::Conv {
                in_channels: 1,
                out_channels: units,
                kernel: (1, 1),
                stride: 1,
                pad: 0,
            },
            LayerSpec::Relu,
            LayerSpec::Gap,
            LayerSpec::Fc {
                in_features: units,
                out_features: 3,
            },
        ],
        class_count: 3,
        final_conv_units: units,
    };
    let params = vec![
        Some(Params {
            weight: Tensor::new(vec![units, 1, 1, 1], gains.to_vec()).unwrap(),
            bias: Tensor::zeros(&[units]),
        }),
        None,
        None,
        Some(Params {
            weight: Tensor::filled(&[3, units], 1.0),
            bias: Tensor::zeros(&[3]),
        }),
    ];
    Model::from_params(spec, params).unwrap()
}

#[test]
fn planted_spike_is_recovered() {
    let model = gain_model(8, &[0.0, 1.0, 0.0]);
    let mut patch = Tensor::zeros(&[1, 8, 8]);
    patch.data_mut()[3 * 8 + 5] = 3.2;
    let maxima = unit_max_activations(&model, &patch).unwrap();
    assert_eq!(maxima, vec![0.0, 3.2, 0.0]);
}

#[test]
fn selection_matches_independent_tally() {
    let mut r = rng(30);
    let model = random_desk_model(16, 8, 77);
    let patches = random_samples(&mut r, 30, 16);
    let cfg = MinerConfig {
        top_per_image: 3,
        top_per_class: 4,
        ..MinerConfig::default()
    };
    let (selections, mined, _) = select_influential_units(&model, &patches, &cfg).unwrap();

    let mut tops = Vec::new();
    for p in &patches {
        let outs = common::naive_forward(&model, &p.input);
        let logits = outs.last().unwrap().data().to_vec();
        let mut predicted = 0;
        for (c, &v) in logits.iter().enumerate() {
            if v > logits[predicted] {
                predicted = c;
            }
        }
        let features = &outs[model.spec.feature_layer()];
        let top: Vec<usize> = brute_ranking(&model, features, predicted).iter().take(3).map(|x| x.0).collect();
        tops.push((predicted, top));
    }
    assert_eq!(
        mined.iter().map(|m| (m.predicted, m.top.iter().map(|t| t.unit_id).collect())).collect::<Vec<_>>(),
        tops
    );
    let counts = tally(&tops);
    for s in &selections {
        let expected = counts.get(&s.class_id).cloned().unwrap_or_default();
        assert_eq!(s.frequency, expected, "class {}", s.class_id);
        assert_eq!(s.unit_ids, top_by_frequency(&expected, 4));
        assert_eq!(s.patch_count, tops.iter().filter(|t| t.0 == s.class_id).count());
        // frequency conservation
        assert_eq!(s.frequency.values().sum::<usize>(), cfg.top_per_image * s.patch_count);
        if s.patch_count > 0 {
            let hits: usize = tops
                .iter()
                .filter(|t| t.0 == s.class_id)
                .map(|t| t.1.iter().filter(|u| s.unit_ids.contains(u)).count())
                .sum();
            assert_eq!(s.coverage, hits as f64 / (3 * s.patch_count) as f64);
        }
    }
    assert_eq!(selections.iter().map(|s| s.patch_count).sum::<usize>(), 30);
}

#[test]
fn coverage_of_all_units_is_one_and_grows_with_the_set() {
    let mut r = rng(4);
    let model = random_desk_model(16, 8, 5);
    let patches = random_samples(&mut r, 20, 16);
    let cfg = MinerConfig {
        top_per_image: 4,
        ..MinerConfig::default()
    };
    let (selections, mined, _) = select_influential_units(&model, &patches, &cfg).unwrap();
    let class = selections.iter().find(|s| s.patch_count > 0).unwrap().class_id;
    let all: Vec<usize> = (0..8).collect();
    assert_eq!(coverage_fraction(&all, class, &mined, &cfg).unwrap(), 1.0);
    let mut prev = 0.0;
    for k in 0..=8 {
        let c = coverage_fraction(&all[..k], class, &mined, &cfg).unwrap();
        assert!(c >= prev);
        prev = c;
    }
    let absent = (0..3).find(|c| selections[*c].patch_count == 0);
    if let Some(c) = absent {
        assert!(coverage_fraction(&all, c, &mined, &cfg).is_err());
    }
}

/// Align-corners bilinear resampling written with float coordinates.
fn reference_upsample(map: &Tensor, th: usize, tw: usize) -> Vec<f64> {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let coord = |i: usize, dst: usize, src: usize| -> f64 {
        if dst == 1 || src == 1 {
            0.0
        } else {
            i as f64 * (src - 1) as f64 / (dst - 1) as f64
        }
    };
    let mut out = Vec::new();
    for y in 0..th {
        for x in 0..tw {
            let (sy, sx) = (coord(y, th, h), coord(x, tw, w));
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            let top = map.at2(y0, x0) * (1.0 - fx) + map.at2(y0, x1) * fx;
            let bottom = map.at2(y1, x0) * (1.0 - fx) + map.at2(y1, x1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

#[test]
fn response_masks_match_upsample_then_threshold() {
    let mut r = rng(12);
    for _ in 0..50 {
        let (h, w) = (r.gen_range(1..5), r.gen_range(1..5));
        let map = random_tensor(&mut r, &[h, w], 0.0, 2.0);
        let (th, tw) = (r.gen_range(8..40), r.gen_range(8..40));
        let mask = response_mask(&map, th, tw, 0.5).unwrap();
        let threshold = 0.5 * map.data().iter().copied().fold(f64::MIN, f64::max);
        let up = reference_upsample(&map, th, tw);
        for (i, v) in up.iter().enumerate() {
            // skip values within rounding distance of the threshold
            if (v - threshold).abs() > 1e-12 {
                assert_eq!(mask.bits()[i], *v >= threshold);
            }
        }
        let lib = upsample_bilinear(&map, th, tw).unwrap();
        for (a, b) in lib.data().iter().zip(&up) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn visualizations_are_sorted_and_tied_to_their_unit() {
    let mut r = rng(6);
    let model = random_desk_model(16, 6, 8);
    let patches = random_samples(&mut r, 25, 16);
    let cfg = MinerConfig {
        viz_patches_per_unit: 10,
        ..MinerConfig::default()
    };
    let mined = unitminer_core::minecore::mine_patches(&model, &patches, &cfg).unwrap();
    let by_image: BTreeMap<&str, &Tensor> = patches.iter().map(|p| (p.record.image_id.as_str(), &p.input)).collect();
    for unit in 0..6 {
        let viz = visualize_unit(&model, unit, &mined, &cfg).unwrap();
        assert_eq!(viz.entries.len(), 10);
        for pair in viz.entries.windows(2) {
            assert!(pair[0].activation >= pair[1].activation);
        }
        let best = patches
            .iter()
            .map(|p| scan_maxima(&model.features(&p.input).unwrap())[unit])
            .fold(f64::MIN, f64::max);
        assert_eq!(viz.entries[0].activation, best);
        for e in &viz.entries {
            let features = model.features(by_image[e.image_id.as_str()]).unwrap();
            let map = features.channel(unit);
            assert_eq!(e.activation, scan_maxima(&features)[unit]);
            let expected = response_mask(&map, 16, 16, 0.5).unwrap();
            assert_eq!(e.response_mask, expected);
            assert!(e.receptive_field.x0 >= e.patch_rect.x0 && e.receptive_field.x1 <= e.patch_rect.x1);
            assert!(e.receptive_field.y0 >= e.patch_rect.y0 && e.receptive_field.y1 <= e.patch_rect.y1);
        }
    }
}
