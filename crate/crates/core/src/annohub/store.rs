use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::{Annotation, AnnotationDraft};
use crate::error::{Error, Result};
use crate::explain::AnnotationSource;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StoredAnnotation {
    pub id: u64,
    #[serde(flatten)]
    pub annotation: Annotation,
}

struct Inner {
    file: File,
    records: Vec<StoredAnnotation>,
}

/// Append-only JSONL annotation log. Every record is fsynced before the save
/// returns; reads come from an in-memory copy of the log.
pub struct AnnotationStore {
    path: PathBuf,
    units: BTreeSet<usize>,
    inner: Mutex<Inner>,
}

impl AnnotationStore {
    /// Opens (creating if needed) the log at `path`, accepting annotations
    /// for `units` only.
    pub fn open(path: &Path, units: BTreeSet<usize>) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(Error::io(path, e)),
        };
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<StoredAnnotation>(l)
                    .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(AnnotationStore {
            path: path.to_path_buf(),
            units,
            inner: Mutex::new(Inner { file, records }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn units(&self) -> &BTreeSet<usize> {
        &self.units
    }

    pub fn check_unit(&self, unit_id: usize) -> Result<()> {
        if self.units.contains(&unit_id) {
            Ok(())
        } else {
            Err(Error::UnknownUnit {
                unit_id,
                valid: describe_ids(&self.units),
            })
        }
    }

    /// Validates and durably appends an annotation, returning its record id.
    pub fn save(&self, unit_id: usize, draft: AnnotationDraft) -> Result<u64> {
        self.check_unit(unit_id)?;
        draft.validate()?;
        let mut inner = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        let id = inner.records.last().map_or(1, |r| r.id + 1);
        // keep the log ordered by createdAt even if the clock steps back
        let now = Utc::now();
        let created_at = inner
            .records
            .last()
            .map_or(now, |r| r.annotation.created_at.max(now));
        let record = StoredAnnotation {
            id,
            annotation: draft.into_annotation(unit_id, created_at),
        };
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        inner
            .file
            .write_all(line.as_bytes())
            .and_then(|_| inner.file.sync_data())
            .map_err(|e| Error::io(&self.path, e))?;
        inner.records.push(record);
        Ok(id)
    }

    /// Records for one unit (or all), ordered by createdAt.
    pub fn list(&self, unit_id: Option<usize>) -> Vec<StoredAnnotation> {
        let inner = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        let mut out: Vec<StoredAnnotation> = inner
            .records
            .iter()
            .filter(|r| unit_id.is_none_or(|u| r.annotation.unit_id == u))
            .cloned()
            .collect();
        out.sort_by(|a, b| a.annotation.created_at.cmp(&b.annotation.created_at).then(a.id.cmp(&b.id)));
        out
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|p| p.into_inner()).records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Units with at least one recognizable annotation.
    pub fn annotated_units(&self) -> BTreeSet<usize> {
        let inner = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        inner
            .records
            .iter()
            .filter(|r| r.annotation.recognizable)
            .map(|r| r.annotation.unit_id)
            .collect()
    }

    /// How many of `selected` have at least one recognizable annotation.
    pub fn count_annotated(&self, selected: &[usize]) -> usize {
        let annotated = self.annotated_units();
        selected
            .iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .filter(|u| annotated.contains(u))
            .count()
    }
}

impl AnnotationSource for AnnotationStore {
    /// Every recognizable description of the unit, oldest first.
    fn annotation_text(&self, unit_id: usize) -> Option<String> {
        let parts: Vec<String> = self
            .list(Some(unit_id))
            .into_iter()
            .filter(|r| r.annotation.recognizable)
            .flat_map(|r| r.annotation.phenomena.into_iter().map(|p| p.description))
            .collect();
        (!parts.is_empty()).then(|| parts.join("; "))
    }
}

/// "0-31" for contiguous id sets, else a comma list.
fn describe_ids(ids: &BTreeSet<usize>) -> String {
    match (ids.first(), ids.last()) {
        (None, _) | (_, None) => "none".to_string(),
        (Some(&a), Some(&b)) if b - a + 1 == ids.len() => format!("{a}-{b}"),
        _ => ids.iter().map(|u| u.to_string()).collect::<Vec<_>>().join(", "),
    }
}
