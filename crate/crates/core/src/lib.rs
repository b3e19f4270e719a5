//! Allocation-only building blocks of the ImageRAG engine.
//!
//! Everything here is pure computation over in-memory values and builds with
//! `#![no_std]` plus `alloc`: exact cosine top-k over a normalized embedding
//! index, the `IRAG` binary index codec, BM25 and VLM re-ranking orders, the
//! fixed VLM instruction texts with their reply parsers, the temperature retry
//! schedule, reference-prompt rendering and mean/SEM aggregation.
//!
//! IO, network clients and orchestration live in the `imagerag` crate.
#![no_std]

extern crate alloc;

pub mod backend;
pub mod bm25;
pub mod error;
pub mod format;
pub mod index;
pub mod parse;
pub mod prompts;
pub mod rerank;
pub mod retry;
pub mod stats;
pub mod template;
pub mod vector;

pub use backend::{BackendCapabilities, GenerationParams};
pub use bm25::{Bm25Corpus, Bm25Params};
pub use error::{Error, Result};
pub use index::{EmbeddingIndex, EmbeddingRecord, Metric, RecordMetadata, RetrievalHit};
pub use parse::ConceptCaption;
pub use rerank::{Candidate, CandidatePool, RankingQuality};
pub use retry::{Attempt, AttemptOutcome, RetryPolicy, RetryState};
pub use stats::{aggregate, AggregateCell};
pub use template::{AugmentedPrompt, ConceptGroup, ImageRef, PlaceholderStyle};
