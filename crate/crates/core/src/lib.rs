//! Simulation harness for synchronous collaborative search.
//!
//! Two (or more) simulated searchers replay timestamped session transcripts
//! against a BM25 engine with incremental relevance feedback. Coordination
//! policies decide what each searcher sees and how the group's judgments feed
//! back into everyone's query, and the group is scored by the number of
//! distinct relevant documents across all members' ranked lists.

pub mod engine;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod feedback;
pub mod index;
pub mod report;
pub mod session;
pub mod synthetic;

pub use error::{Error, Result};
