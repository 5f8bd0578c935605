//! Expert annotations of mined units: an append-only store and the HTTP
//! service the annotation UI talks to.

mod server;
mod store;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use server::{load_state, router, run, serve, AppState, ServerConfig};
pub use store::{AnnotationStore, StoredAnnotation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CancerAssociation {
    BenignAssociated,
    MalignantAssociated,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Phenomenon {
    pub description: String,
    pub cancer_association: CancerAssociation,
}

/// Request body of an annotation: everything but the unit and timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AnnotationDraft {
    pub expert_id: String,
    pub recognizable: bool,
    #[serde(default)]
    pub phenomena: Vec<Phenomenon>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Annotation {
    pub unit_id: usize,
    pub expert_id: String,
    pub recognizable: bool,
    pub phenomena: Vec<Phenomenon>,
    pub created_at: DateTime<Utc>,
}

impl AnnotationDraft {
    /// Field-level problems, empty when the draft is well formed.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.expert_id.trim().is_empty() {
            out.push("expertId: must not be empty".to_string());
        }
        if !self.recognizable && !self.phenomena.is_empty() {
            out.push("phenomena: must be empty when recognizable is false".to_string());
        }
        for (i, p) in self.phenomena.iter().enumerate() {
            if p.description.trim().is_empty() {
                out.push(format!("phenomena[{i}].description: must not be empty"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems.join("; ")))
        }
    }

    pub fn into_annotation(self, unit_id: usize, created_at: DateTime<Utc>) -> Annotation {
        Annotation {
            unit_id,
            expert_id: self.expert_id,
            recognizable: self.recognizable,
            phenomena: self.phenomena,
            created_at,
        }
    }
}
