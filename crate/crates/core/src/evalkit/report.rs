use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{greedy_match_score, partial_auc, roc_auc, tokenize, EmbeddingTable, ScoredSet};
use crate::error::{Error, Result};
use crate::explain::{Explanation, ExplanationFile};
use crate::label::Label;
use crate::numkernel::Model;
use crate::patchline::PatchSample;

pub const PAUC_TPR_MIN: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassMetrics {
    pub class: Label,
    /// `None` when the split lacks positives or negatives of the class.
    pub auc: Option<f64>,
    pub pauc: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelReport {
    pub patch_count: usize,
    pub tpr_min: f64,
    /// Ordered normal, benign, malignant.
    pub classes: Vec<ClassMetrics>,
}

impl ModelReport {
    pub fn class(&self, label: Label) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.class == label)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<10} {:>8} {:>8} {:>6} {:>6}\n", "class", "auc", "pauc", "pos", "neg");
        for c in &self.classes {
            let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                s,
                "{:<10} {:>8} {:>8} {:>6} {:>6}",
                c.class.as_str(),
                fmt(c.auc),
                fmt(c.pauc),
                c.positives,
                c.negatives
            );
        }
        s
    }
}

/// Softmax probabilities of every sample, in order.
pub fn predict_probabilities(model: &Model, samples: &[PatchSample]) -> Result<Vec<Vec<f64>>> {
    samples
        .par_iter()
        .map(|s| Ok(model.forward(&s.input, false)?.probabilities.into_data()))
        .collect()
}

/// One-vs-rest AUC and pAUC per class from the model's softmax outputs.
/// Classes absent from (or filling) the split get no AUC.
pub fn evaluate_model(model: &Model, samples: &[PatchSample]) -> Result<ModelReport> {
    if samples.is_empty() {
        return Err(Error::Metric("no patches to evaluate".into()));
    }
    let probs = predict_probabilities(model, samples)?;
    let classes = Label::ALL
        .iter()
        .map(|&label| {
            let k = label.index();
            let set = ScoredSet::new(
                probs.iter().map(|p| p[k]).collect(),
                samples.iter().map(|s| s.record.label == label).collect(),
            )?;
            let defined = set.positives() > 0 && set.negatives() > 0;
            Ok(ClassMetrics {
                class: label,
                auc: defined.then(|| roc_auc(&set)).transpose()?,
                pauc: defined.then(|| partial_auc(&set, PAUC_TPR_MIN)).transpose()?,
                positives: set.positives(),
                negatives: set.negatives(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ModelReport {
        patch_count: samples.len(),
        tpr_min: PAUC_TPR_MIN,
        classes,
    })
}

/// Anything carrying ranked annotated units for one image.
pub trait ExplanationText {
    fn image_id(&self) -> &str;
    /// Annotation text of the first `k` annotated units.
    fn text(&self, k: usize) -> String;
}

impl ExplanationText for Explanation {
    fn image_id(&self) -> &str {
        &self.image_id
    }

    fn text(&self, k: usize) -> String {
        Explanation::text(self, k)
    }
}

impl ExplanationText for ExplanationFile {
    fn image_id(&self) -> &str {
        &self.image_id
    }

    fn text(&self, k: usize) -> String {
        ExplanationFile::text(self, k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ImageScore {
    pub image_id: String,
    pub candidate: Vec<String>,
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExplanationReport {
    pub top_k: usize,
    /// Mean over scored images; `None` when nothing was scored.
    pub mean: Option<f64>,
    pub scored: usize,
    pub skipped: usize,
    pub images: Vec<ImageScore>,
}

impl ExplanationReport {
    pub fn to_table(&self) -> String {
        let mut s = format!("top-{} greedy matching\n", self.top_k);
        for r in &self.images {
            let _ = match (r.score, &r.skipped) {
                (Some(v), _) => writeln!(s, "{:<12} {:>8.4}  {}", r.image_id, v, r.candidate.join(" ")),
                (None, why) => writeln!(s, "{:<12} {:>8}  {}", r.image_id, "skipped", why.as_deref().unwrap_or("")),
            };
        }
        let mean = self.mean.map_or("n/a".to_string(), |m| format!("{m:.4}"));
        let _ = writeln!(s, "mean {mean} over {} images ({} skipped)", self.scored, self.skipped);
        s
    }
}

/// Greedy matching of each explanation's top-`k` annotation text against the
/// image's report tokens.
pub fn evaluate_explanations<E: ExplanationText>(
    explanations: &[E],
    reports: &BTreeMap<String, Vec<String>>,
    emb: &EmbeddingTable,
    top_k: usize,
) -> ExplanationReport {
    let images: Vec<ImageScore> = explanations
        .iter()
        .map(|e| {
            let candidate = tokenize(&e.text(top_k));
            let outcome = match reports.get(e.image_id()) {
                None => Err("image not in dataset".to_string()),
                Some(r) if r.is_empty() => Err("no report tokens".to_string()),
                Some(_) if candidate.is_empty() => Err("no annotated units".to_string()),
                Some(r) => greedy_match_score(&candidate, r, emb).map_err(|err| err.to_string()),
            };
            ImageScore {
                image_id: e.image_id().to_string(),
                candidate,
                score: outcome.as_ref().ok().copied(),
                skipped: outcome.err(),
            }
        })
        .collect();
    let scores: Vec<f64> = images.iter().filter_map(|r| r.score).collect();
    ExplanationReport {
        top_k,
        mean: (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64),
        scored: scores.len(),
        skipped: images.len() - scores.len(),
        images,
    }
}
