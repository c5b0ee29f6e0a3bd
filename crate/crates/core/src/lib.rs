//! Triplet-based semantic similarity (T3S) for full-reference evaluation of
//! low-level image processing.
//!
//! Images are represented by entity sets (segment features with mask areas
//! plus a global feature) and semantic annotations (class labels and
//! relation triplets). A pair is scored from three components: foreground
//! and background entity matching after soft decoupling, class and relation
//! consistency from word embeddings, and a global relation prior. The entity
//! and relation terms are combined with a harmonic mean.

pub mod annotation;
pub mod bench;
pub mod config;
pub mod constraints;
pub mod embedding;
pub mod entity;
pub mod error;
pub mod fbd;
pub mod matching;
pub mod report;
pub mod scorer;
pub mod semantics;
pub mod synth;
pub mod vector;

pub use annotation::{Relation, SemanticAnnotation};
pub use config::MetricConfig;
pub use embedding::EmbeddingTable;
pub use entity::{Entity, EntitySet, Region};
pub use error::{Error, Result};
pub use fbd::FbdWeights;
pub use report::ScoreReport;
pub use scorer::{score_pair, ImageSide, PairInput, Scorer};
