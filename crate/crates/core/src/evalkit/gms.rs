use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Token -> vector lookup with a uniform dimension and no zero vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dimension: usize) -> Self {
        EmbeddingTable {
            dimension,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dimension {
            return Err(Error::Config(format!(
                "token {token:?} has dimension {}, table uses {}",
                vector.len(),
                self.dimension
            )));
        }
        if vector.iter().all(|&v| v == 0.0) || vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("token {token:?} has a zero or non-finite vector")));
        }
        self.vectors.insert(token.to_string(), vector);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Parses `token v1 v2 ... vD` lines.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut table: Option<EmbeddingTable> = None;
        for (n, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format(origin, format!("line {}: {e}", n + 1)))?;
            let t = table.get_or_insert_with(|| EmbeddingTable::new(values.len()));
            t.insert(token, values)
                .map_err(|e| Error::format(origin, format!("line {}: {e}", n + 1)))?;
        }
        table.ok_or_else(|| Error::format(origin, "empty embedding table"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Lowercased alphanumeric words of free text.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn directed(from: &[&[f64]], to: &[&[f64]]) -> f64 {
    from.iter()
        .map(|a| to.iter().map(|b| cosine(a, b)).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / from.len() as f64
}

/// Symmetric greedy matching: the mean, over both directions, of the average
/// best cosine match each token finds on the other side. Out-of-vocabulary
/// tokens are dropped.
pub fn greedy_match_score<S: AsRef<str>>(candidate: &[S], reference: &[S], emb: &EmbeddingTable) -> Result<f64> {
    let lookup = |tokens: &[S], side: &'static str| -> Result<Vec<&[f64]>> {
        let v: Vec<&[f64]> = tokens.iter().filter_map(|t| emb.get(t.as_ref())).collect();
        if v.is_empty() {
            return Err(Error::OutOfVocabulary { side });
        }
        Ok(v)
    };
    let c = lookup(candidate, "candidate")?;
    let r = lookup(reference, "reference")?;
    Ok((directed(&c, &r) + directed(&r, &c)) / 2.0)
}
