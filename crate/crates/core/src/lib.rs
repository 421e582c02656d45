//! Triangular-consistency curation of image-question-answer data.
//!
//! The crate turns seed triplets into multi-task instruction records,
//! scores synthetic triplets by how well a model reconstructs each masked
//! side, keeps the most consistent fraction per category and merges the
//! result back into the seed set. Models and text encoders sit behind
//! traits so the whole pipeline runs offline with the lexical backend and a
//! table-backed model.

pub mod consistency;
pub mod data;
pub mod metrics;
pub mod refine;
pub mod similarity;
pub mod taskgen;
pub mod templates;
mod util;

pub use consistency::{Reconstruction, ScoredTriplet};
pub use data::{BoundingBox, QaType, TaskKind, TaskRecord, Triplet};
pub use similarity::{EmbeddingProvider, Similarity, TextBackend};
pub use templates::TemplateSet;
