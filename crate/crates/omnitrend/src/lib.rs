//! Content-context decomposition engine for social popularity prediction.
//!
//! Log-scale popularity is split into a content attractiveness term, learned
//! by a small multimodal model with cross-attention and gated fusion, and a
//! contextual exposure term, learned by gradient-boosted trees on exogenous
//! features augmented with past-only retrieval statistics. Synthetic corpora
//! with known latent factors make the decomposition directly testable.

pub mod content;
pub mod context;
pub mod corpus;
pub mod error;
pub mod exposure;
pub mod pipeline;
pub mod retrieval;
pub mod synthgen;
pub mod tape;
pub mod tensor;
pub mod timeutil;

pub use error::{OmniError, Result};
