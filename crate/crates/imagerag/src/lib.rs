//! ImageRAG engine: retrieval-augmented text-to-image generation.
//!
//! Pure algorithms live in `imagerag-core`; this crate adds file formats,
//! model clients (HTTP and deterministic mocks), the end-to-end pipeline, the
//! evaluation harness and the command line.

pub mod backend;
pub mod chat;
pub mod cli;
pub mod embed;
pub mod error;
pub mod eval;
mod http;
pub mod media;
pub mod pipeline;
pub mod retrieval;
pub mod store;
pub mod synthetic;
pub mod vlm;

pub use error::{Error, Result};
pub use http::HttpConfig;
