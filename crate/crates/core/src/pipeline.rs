//! Glue between the stages: artifact layout under a data directory, patch
//! tensor assembly and the classifier training recipe.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{self, EmbeddingTable, ExplanationReport, ModelReport};
use crate::explain::{self, AnnotationSource, Explanation, ExplanationFile, FcnModel};
use crate::label::Split;
use crate::minecore::{self, MinerConfig, UnitSelection};
use crate::numkernel::{self, checkpoint, EpochStats, Model, ModelSpec, SgdConfig, Tensor};
use crate::patchline::{self, PatchConfig, PatchCounts, PatchRecord};
pub use crate::patchline::{patch_samples, PatchSample};
use crate::synthdata::{self, DatasetManifest, ImageRecord, SynthConfig};

/// Artifact directories under one data directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn patches_dir(&self) -> PathBuf {
        self.root.join("patches")
    }

    pub fn patches_file(&self) -> PathBuf {
        self.patches_dir().join("patches.jsonl")
    }

    pub fn default_model(&self) -> PathBuf {
        self.root.join("model.ckpt")
    }

    pub fn mining_dir(&self) -> PathBuf {
        self.root.join("mining")
    }

    pub fn explanations_dir(&self) -> PathBuf {
        self.root.join("explanations")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn default_store(&self) -> PathBuf {
        self.root.join("annotations.jsonl")
    }

    pub fn embeddings_file(&self) -> PathBuf {
        self.dataset_dir().join("embeddings.txt")
    }
}

/// Loads every image of a dataset keyed by id.
pub fn load_images(dataset_dir: &Path) -> Result<BTreeMap<String, ImageRecord>> {
    synthdata::load_dataset(dataset_dir)?
        .map(|r| r.map(|img| (img.image_id.clone(), img)))
        .collect()
}

/// Training recipe for the patch classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub sgd: SgdConfig,
    /// Units in the final conv layer.
    pub units: usize,
    pub balance_classes: bool,
    pub init_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sgd: SgdConfig::default(),
            units: 32,
            balance_classes: true,
            init_seed: 0,
        }
    }
}

pub fn train_classifier(
    samples: &[PatchSample],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(Model, Vec<EpochStats>)> {
    let first = samples.first().ok_or_else(|| Error::Config("no training patches".into()))?;
    let side = first.input.shape()[1];
    let mut model = Model::init(ModelSpec::desk(side, cfg.units), cfg.init_seed)?;
    let data: Vec<(Tensor, usize)> = samples
        .iter()
        .map(|s| (s.input.clone(), s.record.label.index()))
        .collect();
    let history = numkernel::train(&mut model, &data, &cfg.sgd, cfg.balance_classes, on_epoch)?;
    Ok((model, history))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn run_synth(ws: &Workspace, cfg: &SynthConfig) -> Result<DatasetManifest> {
    synthdata::generate_dataset(cfg, &ws.dataset_dir())
}

pub fn run_extract(ws: &Workspace, cfg: &PatchConfig) -> Result<(Vec<PatchRecord>, PatchCounts)> {
    patchline::build_manifest(&ws.dataset_dir(), &ws.patches_dir(), cfg)
}

/// Images plus the tensors of every patch in `split`.
pub fn load_split(ws: &Workspace, split: Split) -> Result<(BTreeMap<String, ImageRecord>, Vec<PatchSample>)> {
    let images = load_images(&ws.dataset_dir())?;
    let patches = patchline::read_patches(&ws.patches_file())?;
    let samples = patch_samples(&images, &patches, Some(split))?;
    Ok((images, samples))
}

/// Trains on the train split and writes the checkpoint plus a training log.
pub fn run_train(
    ws: &Workspace,
    cfg: &TrainConfig,
    model_path: &Path,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(Model, Vec<EpochStats>)> {
    let (_, samples) = load_split(ws, Split::Train)?;
    let (model, history) = train_classifier(&samples, cfg, on_epoch)?;
    checkpoint::save(&model, model_path)?;
    write_json(
        &ws.reports_dir().join("training.json"),
        &serde_json::json!({ "config": cfg, "patches": samples.len(), "epochs": history }),
    )?;
    Ok((model, history))
}

#[derive(Debug, Clone)]
pub struct MiningOutcome {
    pub selections: Vec<UnitSelection>,
    pub mined: Vec<minecore::PatchMining>,
    pub warnings: Vec<String>,
}

/// Mines the test-split patches and writes selection and unit visualizations.
pub fn run_mine(ws: &Workspace, model: &Model, cfg: &MinerConfig) -> Result<MiningOutcome> {
    let (images, samples) = load_split(ws, Split::Test)?;
    let (selections, mined, warnings) = minecore::select_influential_units(model, &samples, cfg)?;
    let units: std::collections::BTreeSet<usize> =
        selections.iter().flat_map(|s| s.unit_ids.iter().copied()).collect();
    let visualizations = units
        .into_par_iter()
        .map(|u| minecore::visualize_unit(model, u, &mined, cfg))
        .collect::<Result<Vec<_>>>()?;
    minecore::write_artifacts(&ws.mining_dir(), model, &mined, &selections, &visualizations, cfg, |id| {
        images.get(id).map(|img| img.pixels.clone())
    })?;
    Ok(MiningOutcome {
        selections,
        mined,
        warnings,
    })
}

/// Explains every image of `split` and writes the explanation files.
pub fn run_explain(
    ws: &Workspace,
    model: &Model,
    annotations: &(dyn AnnotationSource + Sync),
    cfg: &MinerConfig,
    split: Split,
) -> Result<Vec<Explanation>> {
    let fcn = FcnModel::from_model(model)?;
    let images = load_images(&ws.dataset_dir())?;
    let dir = ws.explanations_dir();
    let out: Vec<Explanation> = images
        .values()
        .filter(|img| img.split == split)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|img| {
            let e = explain::build_explanation(
                &fcn,
                &img.image_id,
                &img.pixels,
                annotations,
                cfg,
                explain::MAX_ANNOTATED,
            )?;
            explain::write_explanation(&dir, &e)?;
            Ok(e)
        })
        .collect::<Result<_>>()?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub model: ModelReport,
    /// Greedy matching at top-1 and top-8; absent when no explanations exist.
    pub explanations: Vec<ExplanationReport>,
}

/// Patch AUCs on the test split and greedy matching of holdout explanations.
pub fn run_eval(ws: &Workspace, model: &Model) -> Result<EvalOutcome> {
    let (images, samples) = load_split(ws, Split::Test)?;
    let report = evalkit::evaluate_model(model, &samples)?;
    write_json(&ws.reports_dir().join("model.json"), &report)?;
    write_text(&ws.reports_dir().join("model.txt"), &report.to_table())?;

    let dir = ws.explanations_dir();
    let mut files = Vec::new();
    for img in images.values().filter(|i| i.split == Split::Holdout) {
        let path = dir.join(format!("{}.json", img.image_id));
        if path.exists() {
            files.push(ExplanationFile::load(&path)?);
        }
    }
    let mut explanations = Vec::new();
    if !files.is_empty() {
        let emb = EmbeddingTable::load(&ws.embeddings_file())?;
        let reports: BTreeMap<String, Vec<String>> = images
            .values()
            .map(|i| (i.image_id.clone(), i.report_tokens.clone()))
            .collect();
        for k in [1, 8] {
            let r = evalkit::evaluate_explanations(&files, &reports, &emb, k);
            write_json(&ws.reports_dir().join(format!("explanations_top{k}.json")), &r)?;
            write_text(&ws.reports_dir().join(format!("explanations_top{k}.txt")), &r.to_table())?;
            explanations.push(r);
        }
    }
    Ok(EvalOutcome {
        model: report,
        explanations,
    })
}

pub fn load_model(path: &Path) -> Result<Model> {
    checkpoint::load(path)
}

