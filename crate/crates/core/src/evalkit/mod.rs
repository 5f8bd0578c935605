//! Ranking metrics and report-similarity scoring.

mod auc;
mod gms;
mod report;

pub use auc::{partial_auc, roc_auc, roc_curve, ScoredSet};
pub use gms::{cosine, greedy_match_score, tokenize, EmbeddingTable};
pub use report::{
    evaluate_explanations, evaluate_model, predict_probabilities, ClassMetrics, ExplanationReport, ExplanationText,
    ImageScore, ModelReport, PAUC_TPR_MIN,
};
