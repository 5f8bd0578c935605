//! Report vocabulary: shape, margin, calcification and density terms.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Shape,
    Margin,
    Calcification,
    Density,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Association {
    Benign,
    Malignant,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Term {
    pub token: &'static str,
    pub family: Family,
    pub association: Association,
}

const fn term(token: &'static str, family: Family, association: Association) -> Term {
    Term {
        token,
        family,
        association,
    }
}

use Association::{Benign as B, Malignant as M, Neutral as N};
use Family::{Calcification as Calc, Density as Dens, Margin as Marg, Shape as Shp};

pub const LEXICON: &[Term] = &[
    term("mass", Shp, N),
    term("round", Shp, B),
    term("oval", Shp, B),
    term("lobular", Shp, N),
    term("irregular", Shp, M),
    term("circumscribed", Marg, B),
    term("smooth", Marg, B),
    term("obscured", Marg, N),
    term("microlobulated", Marg, M),
    term("indistinct", Marg, M),
    term("spiculated", Marg, M),
    term("calcification", Calc, N),
    term("punctate", Calc, B),
    term("coarse", Calc, B),
    term("vascular", Calc, B),
    term("amorphous", Calc, M),
    term("pleomorphic", Calc, M),
    term("clustered", Calc, M),
    term("linear", Calc, M),
    term("dense", Dens, N),
    term("isodense", Dens, B),
    term("fat", Dens, B),
    term("asymmetry", Dens, N),
    term("distortion", Dens, M),
];

pub fn lookup(token: &str) -> Option<&'static Term> {
    LEXICON.iter().find(|t| t.token == token)
}

pub fn malignant_terms() -> impl Iterator<Item = &'static Term> {
    LEXICON.iter().filter(|t| t.association == Association::Malignant)
}

pub fn write(path: &Path) -> Result<()> {
    let mut text = String::new();
    for t in LEXICON {
        text.push_str(t.token);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a token-per-line lexicon file; blank lines are ignored.
pub fn read(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn tokens_are_unique_lowercase() {
        let set: HashSet<_> = LEXICON.iter().map(|t| t.token).collect();
        assert_eq!(set.len(), LEXICON.len());
        assert!(LEXICON.iter().all(|t| t.token == t.token.to_lowercase()));
        assert_eq!(LEXICON.len(), 24);
    }

    #[test]
    fn every_family_is_represented() {
        for f in [Family::Shape, Family::Margin, Family::Calcification, Family::Density] {
            assert!(LEXICON.iter().filter(|t| t.family == f).count() >= 4);
        }
        assert!(malignant_terms().count() >= 5);
    }
}
