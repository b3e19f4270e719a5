//! Okapi BM25 over short captions.
//!
//! Tokens are lowercase alphanumeric runs; no stemming and no stopword list.
//! IDF is `ln(1 + (N - df + 0.5) / (df + 0.5))`, which is always positive,
//! so a document's score is zero exactly when it shares no query term.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    #[serde(default = "default_k1")]
    pub k1: f64,
    #[serde(default = "default_b")]
    pub b: f64,
}

fn default_k1() -> f64 {
    1.2
}

fn default_b() -> f64 {
    0.75
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: default_k1(),
            b: default_b(),
        }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(Error::InvalidParam("bm25 k1 must be positive"));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidParam("bm25 b must lie in [0, 1]"));
        }
        Ok(())
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(core::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Collection statistics: document count, average length and document frequencies.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bm25Corpus {
    n_docs: usize,
    total_len: usize,
    df: BTreeMap<String, usize>,
}

impl Bm25Corpus {
    pub fn from_documents<'a, I: IntoIterator<Item = &'a str>>(docs: I) -> Self {
        let mut corpus = Self::default();
        for doc in docs {
            let tokens = tokenize(doc);
            corpus.n_docs += 1;
            corpus.total_len += tokens.len();
            let unique: BTreeSet<String> = tokens.into_iter().collect();
            for t in unique {
                *corpus.df.entry(t).or_insert(0) += 1;
            }
        }
        corpus
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn avg_doc_len(&self) -> f64 {
        if self.n_docs == 0 {
            0.0
        } else {
            self.total_len as f64 / self.n_docs as f64
        }
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs as f64;
        let df = self.doc_freq(term) as f64;
        libm::log(1.0 + (n - df + 0.5) / (df + 0.5))
    }

    /// BM25 score of `doc` for `query`; repeated query terms count once.
    pub fn score(&self, query: &str, doc: &str, params: &Bm25Params) -> f64 {
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        self.score_terms(&terms, &tokenize(doc), params)
    }

    pub(crate) fn score_terms(&self, terms: &BTreeSet<String>, doc_tokens: &[String], params: &Bm25Params) -> f64 {
        let avgdl = self.avg_doc_len();
        let len_ratio = if avgdl > 0.0 {
            doc_tokens.len() as f64 / avgdl
        } else {
            1.0
        };
        let norm = params.k1 * (1.0 - params.b + params.b * len_ratio);
        terms
            .iter()
            .map(|term| {
                let tf = doc_tokens.iter().filter(|t| *t == term).count() as f64;
                if tf == 0.0 {
                    0.0
                } else {
                    self.idf(term) * tf * (params.k1 + 1.0) / (tf + norm)
                }
            })
            .sum()
    }
}
