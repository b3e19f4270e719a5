//! Candidate pools over one or more embedding spaces, and re-ranking.

use std::sync::Arc;

use imagerag_core::prompts;
use imagerag_core::rerank::{self, Candidate, CandidatePool, RankingQuality};
use imagerag_core::{EmbeddingIndex, RetrievalHit};
use serde::{Deserialize, Serialize};

use crate::chat::{ChatMessage, ChatRequest, Role, VlmClient};
use crate::embed::{embed_text, EmbedderClient};
use crate::error::{Error, Result};

/// An index paired with the embedder that produced its space.
#[derive(Clone)]
pub struct RetrievalSource {
    pub index: Arc<EmbeddingIndex>,
    pub embedder: Arc<dyn EmbedderClient>,
}

impl RetrievalSource {
    pub fn new(index: Arc<EmbeddingIndex>, embedder: Arc<dyn EmbedderClient>) -> Self {
        Self { index, embedder }
    }

    /// Top `k` hits for a text query, carrying uri and caption.
    pub fn search(&self, query: &str, k: usize) -> Result<Vec<Candidate>> {
        if self.index.is_empty() {
            return Err(Error::Precondition(format!("index \"{}\" is empty", self.index.embedder_tag())));
        }
        let q = embed_text(self.embedder.as_ref(), query, Some(self.index.dimension()))?;
        let hits = self.index.top_k(&q, k)?;
        Ok(hits
            .into_iter()
            .map(|hit| {
                let meta = &self.index.get(&hit.id).expect("hit id comes from the index").metadata;
                Candidate {
                    uri: meta.uri.clone(),
                    caption: meta.caption.clone(),
                    hit,
                }
            })
            .collect())
    }
}

/// Deduplicated union of each source's top `per_source_k` hits.
pub fn build_pool(caption: &str, per_source_k: usize, sources: &[RetrievalSource]) -> Result<CandidatePool> {
    if sources.is_empty() {
        return Err(Error::Config("no retrieval sources".into()));
    }
    let lists = sources
        .iter()
        .map(|s| s.search(caption, per_source_k))
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidatePool::merge(caption, lists))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmRerank {
    pub hits: Vec<RetrievalHit>,
    pub quality: RankingQuality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub raw_response: Option<String>,
}

fn describe(c: &Candidate) -> String {
    match &c.caption {
        Some(caption) => caption.clone(),
        None => format!("image at {}", c.uri),
    }
}

/// Asks the VLM to order the pool. Transport failure or an unusable reply
/// leaves the cosine order in place and sets `warning`.
pub fn vlm_rerank(pool: &CandidatePool, query: &str, vlm: &dyn VlmClient) -> VlmRerank {
    let descriptions: Vec<String> = pool.candidates.iter().map(describe).collect();
    let req = ChatRequest {
        model: vlm.model_name().to_string(),
        temperature: 0.0,
        messages: vec![ChatMessage::text(
            Role::User,
            prompts::rerank(query, descriptions.iter().map(String::as_str)),
        )],
    };
    let raw = match vlm.complete(&req) {
        Ok(r) => r,
        Err(e) => {
            let parsed = rerank::ParsedRanking {
                order: Vec::new(),
                quality: RankingQuality::Unparseable,
            };
            return VlmRerank {
                hits: rerank::apply_ranking(pool, &parsed),
                quality: RankingQuality::Unparseable,
                warning: Some(format!("re-rank request failed, kept cosine order: {e}")),
                raw_response: None,
            };
        }
    };
    let parsed = rerank::parse_ranking(&raw, pool.len());
    let warning = match parsed.quality {
        RankingQuality::Complete => None,
        RankingQuality::Partial => Some("partial ranking; unranked candidates appended in cosine order".into()),
        RankingQuality::Unparseable => Some("unparseable ranking; kept cosine order".into()),
    };
    VlmRerank {
        hits: rerank::apply_ranking(pool, &parsed),
        quality: parsed.quality,
        warning,
        raw_response: Some(raw),
    }
}
