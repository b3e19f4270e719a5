//! Candidate pools and the two re-ranking orders (BM25 over captions, and a
//! ranking returned by a vision-language model).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::bm25::{tokenize, Bm25Corpus, Bm25Params};
use crate::error::{Error, Result};
use crate::index::{Metric, RetrievalHit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub hit: RetrievalHit,
    pub uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

/// Deduplicated union of candidates retrieved for one query caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub query_caption: String,
    /// Best score first, id ascending on ties; each id appears once.
    pub candidates: Vec<Candidate>,
    pub provenance: BTreeSet<Metric>,
}

fn by_score_then_id(a: &RetrievalHit, b: &RetrievalHit) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

impl CandidatePool {
    /// Merges per-source hit lists, keeping the best-scoring entry per id.
    pub fn merge<I>(query_caption: impl Into<String>, sources: I) -> Self
    where
        I: IntoIterator<Item = Vec<Candidate>>,
    {
        let mut provenance = BTreeSet::new();
        let mut best: BTreeMap<String, Candidate> = BTreeMap::new();
        for list in sources {
            for cand in list {
                provenance.insert(cand.hit.metric);
                match best.get_mut(&cand.hit.id) {
                    Some(kept) => {
                        if cand.hit.score > kept.hit.score {
                            let caption = kept.caption.take();
                            *kept = cand;
                            if kept.caption.is_none() {
                                kept.caption = caption;
                            }
                        } else if kept.caption.is_none() {
                            kept.caption = cand.caption;
                        }
                    }
                    None => {
                        best.insert(cand.hit.id.clone(), cand);
                    }
                }
            }
        }
        let mut candidates: Vec<Candidate> = best.into_values().collect();
        candidates.sort_by(|a, b| by_score_then_id(&a.hit, &b.hit));
        Self {
            query_caption: query_caption.into(),
            candidates,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.candidates.iter().map(|c| c.hit.id.as_str()).collect()
    }

    /// The pool in its own (cosine) order.
    pub fn hits(&self) -> Vec<RetrievalHit> {
        self.candidates.iter().map(|c| c.hit.clone()).collect()
    }

    /// BM25 statistics computed over the pool's own captions.
    pub fn local_corpus(&self) -> Result<Bm25Corpus> {
        let captions = self.captions()?;
        Ok(Bm25Corpus::from_documents(captions))
    }

    fn captions(&self) -> Result<Vec<&str>> {
        self.candidates
            .iter()
            .map(|c| c.caption.as_deref().ok_or_else(|| Error::MissingCaption(c.hit.id.clone())))
            .collect()
    }
}

/// Orders the pool by BM25 of each caption against `query`.
///
/// Ties (including the all-zero case) keep the prior cosine order, then id.
pub fn bm25_rerank(
    pool: &CandidatePool,
    query: &str,
    params: &Bm25Params,
    corpus: &Bm25Corpus,
) -> Result<Vec<RetrievalHit>> {
    if query.trim().is_empty() {
        return Err(Error::Empty("bm25 query"));
    }
    params.validate()?;
    let captions = pool.captions()?;
    let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
    let mut scored: Vec<(f64, &Candidate)> = pool
        .candidates
        .iter()
        .zip(captions)
        .map(|(cand, caption)| (corpus.score_terms(&terms, &tokenize(caption), params), cand))
        .collect();
    scored.sort_by(|(sa, a), (sb, b)| sb.total_cmp(sa).then_with(|| by_score_then_id(&a.hit, &b.hit)));
    Ok(scored
        .into_iter()
        .map(|(score, cand)| RetrievalHit {
            id: cand.hit.id.clone(),
            score,
            metric: Metric::Bm25,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingQuality {
    /// Every candidate was ranked exactly once and nothing else was said.
    Complete,
    /// Some positions were parsed; the rest fall back to cosine order.
    Partial,
    /// Nothing usable was parsed.
    Unparseable,
}

/// A ranking reply reduced to zero-based candidate positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedRanking {
    pub order: Vec<usize>,
    pub quality: RankingQuality,
}

/// Parses a comma-separated list of 1-based candidate numbers.
///
/// Out-of-range, repeated and non-numeric entries are dropped.
pub fn parse_ranking(response: &str, n_candidates: usize) -> ParsedRanking {
    let mut order = Vec::new();
    let mut seen = BTreeSet::new();
    let mut clean = true;
    for piece in response.split([',', '\n']) {
        let token = piece
            .trim()
            .trim_matches(|c: char| matches!(c, '.' | '[' | ']' | '(' | ')' | '#'))
            .trim();
        if token.is_empty() {
            continue;
        }
        match token.parse::<usize>() {
            Ok(n) if (1..=n_candidates).contains(&n) && seen.insert(n) => order.push(n - 1),
            _ => clean = false,
        }
    }
    let quality = if order.is_empty() {
        RankingQuality::Unparseable
    } else if clean && order.len() == n_candidates {
        RankingQuality::Complete
    } else {
        RankingQuality::Partial
    };
    ParsedRanking { order, quality }
}

/// Applies a parsed ranking: ranked positions first, then the remaining
/// candidates in the pool's cosine order.
///
/// Scores are rank-derived, `(n - position) / n`, so the list stays descending.
pub fn apply_ranking(pool: &CandidatePool, parsed: &ParsedRanking) -> Vec<RetrievalHit> {
    let n = pool.len();
    let mut placed = alloc::vec![false; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for &pos in &parsed.order {
        if pos < n && !placed[pos] {
            placed[pos] = true;
            order.push(pos);
        }
    }
    order.extend((0..n).filter(|&p| !placed[p]));
    order
        .into_iter()
        .enumerate()
        .map(|(rank, pos)| RetrievalHit {
            id: pool.candidates[pos].hit.id.clone(),
            score: (n - rank) as f64 / n as f64,
            metric: Metric::VlmRerank,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn cand(id: &str, score: f64, metric: Metric, caption: Option<&str>) -> Candidate {
        Candidate {
            hit: RetrievalHit {
                id: id.into(),
                score,
                metric,
            },
            uri: alloc::format!("mem://{id}"),
            caption: caption.map(ToString::to_string),
        }
    }

    #[test]
    fn merge_is_union_with_best_score() {
        let clip = vec![
            cand("a", 0.9, Metric::CosineClip, None),
            cand("b", 0.8, Metric::CosineClip, None),
            cand("c", 0.7, Metric::CosineClip, None),
        ];
        let siglip = vec![
            cand("b", 0.95, Metric::CosineSiglip, Some("bee")),
            cand("c", 0.1, Metric::CosineSiglip, None),
            cand("d", 0.05, Metric::CosineSiglip, None),
        ];
        let pool = CandidatePool::merge("q", [clip, siglip]);
        assert_eq!(pool.ids(), ["b", "a", "c", "d"]);
        assert_eq!(pool.candidates[0].hit.metric, Metric::CosineSiglip);
        assert_eq!(pool.candidates[2].hit.score, 0.7);
        assert_eq!(pool.provenance.len(), 2);
    }

    #[test]
    fn bm25_prefers_matching_caption() {
        let pool = CandidatePool::merge(
            "q",
            [vec![
                cand("car", 0.9, Metric::CosineClip, Some("a blue car")),
                cand("bird", 0.5, Metric::CosineClip, Some("a red bird")),
            ]],
        );
        let corpus = pool.local_corpus().unwrap();
        let hits = bm25_rerank(&pool, "red bird", &Bm25Params::default(), &corpus).unwrap();
        assert_eq!(hits[0].id, "bird");
        assert!(hits[0].score > 0.0);
        assert_eq!(hits[1].score, 0.0);
        assert!(hits.iter().all(|h| h.metric == Metric::Bm25));
    }

    #[test]
    fn bm25_zero_scores_fall_back_to_cosine_order() {
        let pool = CandidatePool::merge(
            "q",
            [vec![
                cand("x", 0.2, Metric::CosineClip, Some("one")),
                cand("y", 0.9, Metric::CosineClip, Some("two")),
                cand("z", 0.5, Metric::CosineClip, Some("three")),
            ]],
        );
        let corpus = pool.local_corpus().unwrap();
        let hits = bm25_rerank(&pool, "zebra", &Bm25Params::default(), &corpus).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.id.as_str()).collect();
        assert_eq!(ids, ["y", "z", "x"]);
        assert!(hits.iter().all(|h| h.score == 0.0));
    }

    #[test]
    fn bm25_requires_captions_and_query() {
        let pool = CandidatePool::merge("q", [vec![cand("x", 0.2, Metric::CosineClip, None)]]);
        let corpus = Bm25Corpus::default();
        assert_eq!(
            bm25_rerank(&pool, "a", &Bm25Params::default(), &corpus).unwrap_err(),
            Error::MissingCaption("x".into())
        );
        assert!(bm25_rerank(&pool, "  ", &Bm25Params::default(), &corpus).is_err());
    }

    #[test]
    fn ranking_parse_cases() {
        assert_eq!(
            parse_ranking("3, 2, 1", 3),
            ParsedRanking {
                order: vec![2, 1, 0],
                quality: RankingQuality::Complete
            }
        );
        assert_eq!(parse_ranking("no idea", 3).quality, RankingQuality::Unparseable);
        let partial = parse_ranking("4, 2", 4);
        assert_eq!(partial.order, [3, 1]);
        assert_eq!(partial.quality, RankingQuality::Partial);
        assert_eq!(parse_ranking("1, 1, 9, 2", 2).quality, RankingQuality::Partial);
    }
}
