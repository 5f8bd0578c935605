//! Mining interpretable units of small CNN image classifiers.
//!
//! The pipeline trains a classifier on sliding-window patches, ranks the
//! final-layer conv units by how often they drive each class decision,
//! collects expert annotations of those units over HTTP, and explains
//! full-image predictions with class activation maps plus the annotated
//! units that contributed most.

pub mod annohub;
pub mod error;
pub mod evalkit;
pub mod explain;
pub mod label;
pub mod minecore;
pub mod numkernel;
pub mod patchline;
pub mod pipeline;
pub mod synthdata;

pub use error::{Error, Result};
pub use label::{Label, Split};
pub use numkernel::{Model, ModelSpec, Rect, SgdConfig, Tensor};
