//! End-to-end toolkit for finding mathematical symbols and their textual
//! descriptions in scientific documents and linking them with typed relations.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`ingest`]: load annotated corpora, optionally flatten LaTeX markup
//!    while keeping math mode verbatim, tokenize with character offsets, and
//!    align character-level annotations to token spans.
//! 2. [`encoder`]: turn a token sequence into an `L x d` matrix of
//!    contextual embeddings, with sliding-window support for long documents.
//! 3. [`mention`]: enumerate candidate spans, pool them into fixed-size
//!    vectors, score them against entity-type prototypes, and keep the top-k.
//! 4. [`relation`]: classify every ordered pair of surviving spans against
//!    relation prototypes plus a bank of learned none-of-the-above vectors
//!    that act as a per-pair adaptive threshold.
//! 5. [`typing`] + [`eval`]: derive entity types from predicted relations and
//!    score the result with span- and relation-level metrics.
//!
//! [`pipeline`] ties the stages together behind train / predict / evaluate /
//! sweep entry points, and [`synth`] generates small planted-pattern corpora
//! used by the integration tests and for smoke-testing installs.

pub mod encoder;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod mention;
pub mod model;
pub mod pipeline;
pub mod relation;
pub mod synth;
pub mod typing;

pub use error::{Error, Result};
