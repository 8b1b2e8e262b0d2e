//! Hierarchical multi-label classification of multi-document records onto a
//! label taxonomy.
//!
//! A two-level transformer encoder turns each typed document into a vector
//! and then mixes those vectors into a set of record "views". A transformer
//! decoder walks the taxonomy from the root, predicting one label per level
//! and a stop label that ends the path.

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod taxonomy;

#[cfg(any(test, feature = "oracle"))]
pub mod oracle;

pub use autodiff::{Adam, AdamConfig, Gradients, ParamId, ParamStore, Tape, Tensor, Var};
pub use corpus::{Document, Proposal, Vocabulary};
pub use error::{Error, Result};
pub use eval::MetricsReport;
pub use model::{DecodeMode, HmtModel, ModelConfig, PredictOptions, Prediction, TrainConfig};
pub use taxonomy::{LabelNode, LabelPath, NodeId, PathOutcome, Taxonomy};
