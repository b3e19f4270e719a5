//! Embedding clients: a remote service, and a deterministic mock.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use imagerag_core::vector::{self, NormalizeError};
use imagerag_core::ImageRef;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqwest::blocking::Client;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::http::{self, HttpConfig};
use crate::media;

/// Maps text and images into one embedding space. Outputs need not be normalized.
pub trait EmbedderClient: Send + Sync {
    fn tag(&self) -> &str;
    fn embed_text_raw(&self, text: &str) -> Result<Vec<f32>>;
    fn embed_image_raw(&self, image: &ImageRef) -> Result<Vec<f32>>;
}

fn finish(raw: Vec<f32>, what: &str, dimension: Option<usize>) -> Result<Vec<f32>> {
    if let Some(d) = dimension {
        if raw.len() != d {
            return Err(imagerag_core::Error::DimensionMismatch {
                expected: d,
                actual: raw.len(),
            }
            .into());
        }
    }
    vector::normalize(&raw).map_err(|e| {
        let label = what.chars().take(60).collect::<String>();
        match e {
            NormalizeError::ZeroNorm => imagerag_core::Error::ZeroNorm(label).into(),
            NormalizeError::NonFinite => imagerag_core::Error::NonFinite(label).into(),
        }
    })
}

/// Embeds `text` and L2-normalizes it, checking the dimension when given.
pub fn embed_text(embedder: &dyn EmbedderClient, text: &str, dimension: Option<usize>) -> Result<Vec<f32>> {
    if text.trim().is_empty() {
        return Err(Error::Precondition("text to embed is empty".into()));
    }
    finish(embedder.embed_text_raw(text)?, text, dimension)
}

pub fn embed_image(embedder: &dyn EmbedderClient, image: &ImageRef, dimension: Option<usize>) -> Result<Vec<f32>> {
    finish(embedder.embed_image_raw(image)?, "<image>", dimension)
}

/// Deterministic pseudo-random vector keyed by `(seed, key)`.
pub fn hash_vector(seed: u64, key: &str, dimension: usize) -> Vec<f32> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    (0..dimension).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Table-driven mock embedder.
///
/// Lookups go: explicit table entry, then (images only) an `embedding` field
/// inside a mock-generated JSON artifact, then a seeded hash vector.
#[derive(Debug)]
pub struct MockEmbedder {
    tag: String,
    dimension: usize,
    seed: u64,
    texts: HashMap<String, Vec<f32>>,
    images: HashMap<String, Vec<f32>>,
    hash_fallback: bool,
    calls: AtomicUsize,
}

impl MockEmbedder {
    pub fn new(tag: impl Into<String>, dimension: usize, seed: u64) -> Self {
        Self {
            tag: tag.into(),
            dimension,
            seed,
            texts: HashMap::new(),
            images: HashMap::new(),
            hash_fallback: true,
            calls: AtomicUsize::new(0),
        }
    }

    /// Unknown inputs become errors instead of hash vectors.
    pub fn strict(mut self) -> Self {
        self.hash_fallback = false;
        self
    }

    pub fn with_text(mut self, text: impl Into<String>, v: Vec<f32>) -> Self {
        self.texts.insert(text.into(), v);
        self
    }

    pub fn with_image(mut self, image: impl Into<String>, v: Vec<f32>) -> Self {
        self.images.insert(image.into(), v);
        self
    }

    pub fn insert_text(&mut self, text: impl Into<String>, v: Vec<f32>) {
        self.texts.insert(text.into(), v);
    }

    pub fn insert_image(&mut self, image: impl Into<String>, v: Vec<f32>) {
        self.images.insert(image.into(), v);
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Number of embed calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn fallback(&self, kind: &str, key: &str) -> Result<Vec<f32>> {
        if self.hash_fallback {
            Ok(hash_vector(self.seed, &format!("{kind}:{key}"), self.dimension))
        } else {
            Err(Error::Transport(format!("mock embedder has no {kind} entry for {key:?}")))
        }
    }
}

/// Reads the `embedding` field of a JSON artifact produced by the mock backend.
pub fn artifact_embedding(image: &ImageRef) -> Option<Vec<f32>> {
    let bytes = media::read_image(image).ok()?;
    let value: Value = serde_json::from_slice(&bytes).ok()?;
    value
        .get("embedding")?
        .as_array()?
        .iter()
        .map(|x| x.as_f64().map(|f| f as f32))
        .collect()
}

impl EmbedderClient for MockEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed_text_raw(&self, text: &str) -> Result<Vec<f32>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match self.texts.get(text) {
            Some(v) => Ok(v.clone()),
            None => self.fallback("text", text),
        }
    }

    fn embed_image_raw(&self, image: &ImageRef) -> Result<Vec<f32>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(v) = self.images.get(image.as_str()) {
            return Ok(v.clone());
        }
        if let Some(v) = artifact_embedding(image) {
            return Ok(v);
        }
        let key = match media::read_image(image) {
            Ok(bytes) => format!("sha256:{}", hex_digest(&bytes)),
            Err(_) => image.as_str().to_string(),
        };
        self.fallback("image", &key)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Remote embedding service.
///
/// Request: `{"model": tag, "input": text}` or `{"model": tag, "image": url}`;
/// response: `{"embedding": [f32, ...]}`.
pub struct HttpEmbedder {
    endpoint: String,
    tag: String,
    api_key: Option<String>,
    config: HttpConfig,
    client: Client,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, tag: impl Into<String>, config: HttpConfig) -> Result<Self> {
        Ok(Self {
            endpoint: endpoint.into(),
            tag: tag.into(),
            api_key: None,
            client: http::client(&config)?,
            config,
        })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    fn call(&self, body: Value) -> Result<Vec<f32>> {
        let resp = http::post_json(&self.client, &self.config, &self.endpoint, self.api_key.as_deref(), &body)?;
        parse_embedding_response(&resp)
    }
}

pub(crate) fn parse_embedding_response(resp: &Value) -> Result<Vec<f32>> {
    resp.get("embedding")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Protocol("missing \"embedding\" array".into()))?
        .iter()
        .map(|x| {
            x.as_f64()
                .map(|f| f as f32)
                .ok_or_else(|| Error::Protocol("non-numeric embedding component".into()))
        })
        .collect()
}

impl EmbedderClient for HttpEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed_text_raw(&self, text: &str) -> Result<Vec<f32>> {
        self.call(json!({ "model": self.tag, "input": text }))
    }

    fn embed_image_raw(&self, image: &ImageRef) -> Result<Vec<f32>> {
        self.call(json!({ "model": self.tag, "image": media::wire_url(image)? }))
    }
}
