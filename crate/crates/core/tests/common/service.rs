//! A mining/dataset/explanation tree on disk and an in-process server over it.

use std::collections::BTreeMap;
use std::sync::Arc;

use tempfile::TempDir;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use unitminer_core::annohub::{load_state, serve, ServerConfig};
use unitminer_core::explain::{build_explanation, write_explanation, FcnModel};
use unitminer_core::minecore::{
    response_mask, write_artifacts, MinerConfig, UnitSelection, UnitVisualization, VisualizationEntry,
};
use unitminer_core::pipeline::load_images;
use unitminer_core::synthdata::{generate_dataset, SynthConfig};
use unitminer_core::{Label, Model, ModelSpec, Rect, Tensor};

pub struct Fixture {
    pub dir: TempDir,
    pub cfg: ServerConfig,
    /// Selected unit ids, in class order.
    pub selected: Vec<usize>,
    pub unit_count: usize,
}

/// Three classes whose selections partition `distinct` unit ids out of
/// `unit_count`; every selected unit gets two visualization entries on real
/// dataset images.
pub fn fixture(distinct: usize, unit_count: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = ServerConfig {
        mining_dir: root.join("mining"),
        dataset_dir: root.join("dataset"),
        explanations_dir: root.join("explanations"),
        store_path: root.join("annotations.jsonl"),
    };
    let synth = SynthConfig {
        image_count: 4,
        image_size: (64, 64),
        seed: 1,
        ..SynthConfig::default()
    };
    generate_dataset(&synth, &cfg.dataset_dir).unwrap();
    let images = load_images(&cfg.dataset_dir).unwrap();
    let ids: Vec<String> = images.keys().cloned().collect();

    let selected: Vec<usize> = (0..distinct).collect();
    let per_class = distinct.div_ceil(3);
    let selections: Vec<UnitSelection> = (0..3)
        .map(|c| {
            let units: Vec<usize> = selected.iter().copied().skip(c * per_class).take(per_class).collect();
            let frequency: BTreeMap<usize, usize> = units.iter().enumerate().map(|(i, &u)| (u, 50 - i)).collect();
            UnitSelection {
                class_id: c,
                class_name: Label::from_index(c).unwrap().to_string(),
                unit_ids: units,
                frequency,
                coverage: 0.5,
                patch_count: 10,
            }
        })
        .collect();

    let visualizations: Vec<UnitVisualization> = selected
        .iter()
        .map(|&u| UnitVisualization {
            unit_id: u,
            entries: (0..2)
                .map(|k| {
                    let rect = Rect::square(8 * ((u + k) % 5), 16 * k, 16);
                    let map = Tensor::from_fn(&[2, 2], |i| ((u + i + k) % 4) as f64);
                    VisualizationEntry {
                        image_id: ids[(u + k) % ids.len()].clone(),
                        patch_rect: rect,
                        activation: 3.0 - k as f64,
                        receptive_field: Rect::new(rect.x0, rect.y0, rect.x0 + 9, rect.y0 + 9),
                        response_mask: response_mask(&map, 16, 16, 0.5).unwrap(),
                    }
                })
                .collect(),
        })
        .collect();
    let model = Model::init(ModelSpec::desk(16, unit_count), 0).unwrap();
    write_artifacts(
        &cfg.mining_dir,
        &model,
        &[],
        &selections,
        &visualizations,
        &MinerConfig::default(),
        |id| images.get(id).map(|i| i.pixels.clone()),
    )
    .unwrap();

    let small = Model::init(ModelSpec::desk(16, 8), 3).unwrap();
    let fcn = FcnModel::from_model(&small).unwrap();
    let first = &images[&ids[0]];
    let none: BTreeMap<usize, String> = BTreeMap::new();
    let e = build_explanation(&fcn, &first.image_id, &first.pixels, &none, &MinerConfig::default(), 5).unwrap();
    write_explanation(&cfg.explanations_dir, &e).unwrap();

    Fixture {
        dir,
        cfg,
        selected,
        unit_count,
    }
}

pub struct Running {
    pub base: String,
    stop: oneshot::Sender<()>,
    handle: JoinHandle<std::io::Result<()>>,
}

impl Running {
    pub async fn stop(self) {
        let _ = self.stop.send(());
        self.handle.await.unwrap().unwrap();
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }
}

/// Loads state from disk and serves it on an ephemeral local port.
pub async fn start(cfg: &ServerConfig) -> Running {
    let state = Arc::new(load_state(cfg).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = oneshot::channel::<()>();
    let handle = tokio::spawn(serve(listener, state, async {
        let _ = rx.await;
    }));
    Running {
        base,
        stop: tx,
        handle,
    }
}

pub fn draft(expert: &str, recognizable: bool, descriptions: &[&str]) -> serde_json::Value {
    let phenomena: Vec<serde_json::Value> = descriptions
        .iter()
        .map(|d| serde_json::json!({"description": d, "cancerAssociation": "malignant-associated"}))
        .collect();
    serde_json::json!({"expertId": expert, "recognizable": recognizable, "phenomena": phenomena})
}
