//! In-memory embedding index with exact cosine top-k search.
//!
//! Vectors are unit-normalized once at construction and a query is a single
//! scan over every record. Scores divide the f64 dot product by both f64 norms,
//! so f32 rounding of the stored vectors cannot push a score outside [-1, 1].
//! The index is immutable afterwards.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{self, NormalizeError};

/// The scorer that produced a [`RetrievalHit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "cosine-clip-space")]
    CosineClip,
    #[serde(rename = "cosine-siglip-space")]
    CosineSiglip,
    #[serde(rename = "bm25")]
    Bm25,
    #[serde(rename = "vlm-rerank")]
    VlmRerank,
}

impl Metric {
    pub fn is_cosine(self) -> bool {
        matches!(self, Metric::CosineClip | Metric::CosineSiglip)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::CosineClip => "cosine-clip-space",
            Metric::CosineSiglip => "cosine-siglip-space",
            Metric::Bm25 => "bm25",
            Metric::VlmRerank => "vlm-rerank",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub id: String,
    pub score: f64,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RecordMetadata {
    pub uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f32>,
    pub metadata: RecordMetadata,
}

#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    dimension: usize,
    records: Vec<EmbeddingRecord>,
    /// L2 norm of each stored (already normalized) f32 vector.
    norms: Vec<f64>,
    embedder_tag: String,
    metric: Metric,
    by_id: BTreeMap<String, usize>,
}

impl EmbeddingIndex {
    /// Validates and normalizes `records` into an index.
    ///
    /// Rejects a zero dimension, empty or duplicate ids, vectors of the wrong
    /// length, and zero-norm or non-finite vectors (naming the offending id).
    pub fn new(
        dimension: usize,
        records: Vec<EmbeddingRecord>,
        embedder_tag: impl Into<String>,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::ZeroDimension);
        }
        let mut by_id = BTreeMap::new();
        let mut normalized = Vec::with_capacity(records.len());
        for (pos, mut record) in records.into_iter().enumerate() {
            if record.id.is_empty() {
                return Err(Error::EmptyId);
            }
            if record.vector.len() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    actual: record.vector.len(),
                });
            }
            record.vector = match vector::normalize(&record.vector) {
                Ok(v) => v,
                Err(NormalizeError::ZeroNorm) => return Err(Error::ZeroNorm(record.id)),
                Err(NormalizeError::NonFinite) => return Err(Error::NonFinite(record.id)),
            };
            if by_id.insert(record.id.clone(), pos).is_some() {
                return Err(Error::DuplicateId(record.id));
            }
            normalized.push(record);
        }
        let norms = normalized.iter().map(|r| vector::l2_norm(&r.vector)).collect();
        Ok(Self {
            dimension,
            records: normalized,
            norms,
            embedder_tag: embedder_tag.into(),
            metric: Metric::CosineClip,
            by_id,
        })
    }

    /// Labels hits from this index with `metric` (which embedding space it lives in).
    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn embedder_tag(&self) -> &str {
        &self.embedder_tag
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn find_by_uri(&self, uri: &str) -> Option<&EmbeddingRecord> {
        self.records.iter().find(|r| r.metadata.uri == uri)
    }

    /// True when every record carries a caption.
    pub fn fully_captioned(&self) -> bool {
        self.records.iter().all(|r| r.metadata.caption.is_some())
    }

    /// A new index holding the records at `positions`, in that order.
    ///
    /// Panics if a position is out of range.
    pub fn subset(&self, positions: &[usize]) -> Result<Self> {
        let records = positions.iter().map(|&p| self.records[p].clone()).collect();
        Ok(Self::new(self.dimension, records, self.embedder_tag.clone())?.with_metric(self.metric))
    }

    /// Exact top-k by cosine similarity.
    ///
    /// Returns `min(k, len)` hits, best first; equal scores are ordered by id
    /// ascending.
    pub fn top_k(&self, query: &[f32], k: usize) -> Result<Vec<RetrievalHit>> {
        if k == 0 {
            return Err(Error::ZeroK);
        }
        if query.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: query.len(),
            });
        }
        if query.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(String::from("<query>")));
        }
        let query_norm = vector::l2_norm(query);
        if query_norm == 0.0 {
            return Err(Error::ZeroNorm(String::from("<query>")));
        }

        let mut heap: BinaryHeap<Ranked<'_>> = BinaryHeap::with_capacity(k.min(self.len()) + 1);
        for (record, norm) in self.records.iter().zip(&self.norms) {
            let entry = Ranked {
                score: vector::dot(query, &record.vector) / (query_norm * norm),
                id: &record.id,
            };
            if heap.len() < k {
                heap.push(entry);
            } else if let Some(mut worst) = heap.peek_mut() {
                if entry < *worst {
                    *worst = entry;
                }
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|r| RetrievalHit {
                id: String::from(r.id),
                score: r.score,
                metric: self.metric,
            })
            .collect())
    }
}

/// Heap entry ordered so that `Greater` means "ranks worse".
#[derive(Debug, Clone, Copy)]
struct Ranked<'a> {
    score: f64,
    id: &'a str,
}

impl Ord for Ranked<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.id.cmp(other.id))
    }
}

impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked<'_> {}
