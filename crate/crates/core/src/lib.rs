//! Batch zero-shot labeling of short texts through chat-completion
//! backends.
//!
//! The pipeline is: [`ingest`] a CSV corpus, assemble [`prompting`] headers
//! and item lists, split them with [`batching`], send them through a
//! [`client::ChatBackend`] with bounded retries, validate every reply in
//! [`parsing`], vote across runs, and score the result in [`evaluation`].
//!
//! Data-parallel work (line estimates, batch dispatch, confusion counting)
//! runs on rayon when the `parallel` feature is enabled and sequentially
//! otherwise; results are identical either way.

pub mod batching;
pub mod client;
pub mod evaluation;
pub mod exec;
pub mod ingest;
pub mod label;
pub mod parsing;
pub mod prompting;

pub use label::{
    majority_vote, AnnotatedItem, Category, Label, LabelMap, LabelSource, SourceKind,
};
