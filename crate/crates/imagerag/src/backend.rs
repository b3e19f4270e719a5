//! Text-to-image backends: profiles, the HTTP client, and a hash-deterministic mock.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use imagerag_core::{BackendCapabilities, GenerationParams, ImageRef, PlaceholderStyle};
use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::embed::hex_digest;
use crate::error::{Error, Result};
use crate::http::{self, HttpConfig};
use crate::media;

const BUILTIN: &[(&str, &str)] = &[
    ("omnigen", include_str!("../profiles/omnigen.json")),
    ("sdxl-ip", include_str!("../profiles/sdxl-ip.json")),
];

/// Backend profile file: capabilities, defaults and placeholder syntax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendProfile {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub max_reference_images: usize,
    pub supports_personal_subject: bool,
    pub default_params: GenerationParams,
    #[serde(default)]
    pub placeholder_style: PlaceholderStyle,
}

impl BackendProfile {
    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    pub fn builtin(name: &str) -> Option<Self> {
        let (_, text) = BUILTIN.iter().find(|(n, _)| *n == name)?;
        Some(serde_json::from_str(text).expect("builtin profile parses"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let profile: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        profile.validate()?;
        Ok(profile)
    }

    /// A builtin name, or else a path to a profile file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(p) = Self::builtin(name_or_path) {
            return Ok(p);
        }
        let path = Path::new(name_or_path);
        if path.is_file() {
            return Self::load(path);
        }
        Err(Error::Config(format!(
            "unknown backend profile \"{name_or_path}\" (builtins: {})",
            Self::builtin_names().collect::<Vec<_>>().join(", ")
        )))
    }

    pub fn capabilities(&self) -> BackendCapabilities {
        BackendCapabilities {
            max_reference_images: self.max_reference_images,
            supports_personal_subject: self.supports_personal_subject,
            default_params: self.default_params.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        Ok(self.capabilities().validate()?)
    }
}

/// Body sent to a text-to-image service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T2iRequest {
    pub prompt: String,
    pub images: Vec<ImageRef>,
    pub params: GenerationParams,
}

impl T2iRequest {
    pub fn sha256(&self) -> String {
        hex_digest(&serde_json::to_vec(self).expect("request serializes"))
    }
}

pub trait T2iClient: Send + Sync {
    /// Returns the encoded output image.
    fn generate(&self, request: &T2iRequest) -> Result<Vec<u8>>;
}

/// HTTP service: POST `{prompt, images, params}`, answer `{image}` as base64,
/// a data URI, or an http(s) URL to fetch.
pub struct HttpT2i {
    endpoint: String,
    api_key: Option<String>,
    config: HttpConfig,
    client: Client,
}

impl HttpT2i {
    pub fn new(endpoint: impl Into<String>, config: HttpConfig) -> Result<Self> {
        Ok(Self {
            endpoint: endpoint.into(),
            api_key: None,
            client: http::client(&config)?,
            config,
        })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }
}

impl T2iClient for HttpT2i {
    fn generate(&self, request: &T2iRequest) -> Result<Vec<u8>> {
        let mut wire = request.clone();
        for img in &mut wire.images {
            *img = ImageRef::new(media::wire_url(img)?);
        }
        let resp = http::post_json(&self.client, &self.config, &self.endpoint, self.api_key.as_deref(), &wire)?;
        let image = resp
            .get("image")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Protocol("missing \"image\" in generation response".into()))?;
        if media::is_remote(image) {
            let bytes = self
                .client
                .get(image)
                .send()
                .and_then(|r| r.error_for_status())
                .and_then(|r| r.bytes())
                .map_err(|e| Error::Transport(format!("fetching {image}: {e}")))?;
            return Ok(bytes.to_vec());
        }
        if image.starts_with("data:") {
            return media::read_image(&ImageRef::from(image));
        }
        STANDARD
            .decode(image)
            .map_err(|e| Error::Protocol(format!("generation response is not base64: {e}")))
    }
}

/// Maps a generation request to an output embedding, for synthetic worlds in
/// which "image quality" is a position in embedding space.
pub trait LatentModel: Send + Sync {
    fn render(&self, request: &T2iRequest) -> Result<Vec<f32>>;
}

pub const MOCK_ARTIFACT_KIND: &str = "imagerag-mock-artifact";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockArtifact {
    pub kind: String,
    pub request_sha256: String,
    pub prompt: String,
    pub images: Vec<ImageRef>,
    pub params: GenerationParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
}

/// Deterministic backend: the artifact is a JSON manifest derived from the
/// request, so equal requests give byte-identical artifacts.
#[derive(Default)]
pub struct MockT2i {
    latent: Option<Box<dyn LatentModel>>,
}

impl MockT2i {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_latent(latent: impl LatentModel + 'static) -> Self {
        Self {
            latent: Some(Box::new(latent)),
        }
    }
}

impl T2iClient for MockT2i {
    fn generate(&self, request: &T2iRequest) -> Result<Vec<u8>> {
        let embedding = self.latent.as_ref().map(|m| m.render(request)).transpose()?;
        let artifact = MockArtifact {
            kind: MOCK_ARTIFACT_KIND.into(),
            request_sha256: request.sha256(),
            prompt: request.prompt.clone(),
            images: request.images.clone(),
            params: request.params.clone(),
            embedding,
        };
        Ok(serde_json::to_vec(&artifact)?)
    }
}

/// What a trace keeps about one generation call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub ext: String,
    pub artifact_sha256: String,
    pub request_sha256: String,
    /// The exact request sent to the backend.
    pub backend_request: T2iRequest,
    pub params_used: GenerationParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    /// The generated image as a data URI, usable in later requests.
    pub image: ImageRef,
    pub artifact: Vec<u8>,
    pub record: GenerationRecord,
}

/// Sends one request after merging profile defaults and enforcing the image cap.
pub fn generate(
    client: &dyn T2iClient,
    profile: &BackendProfile,
    prompt: &str,
    images: Vec<ImageRef>,
    seed: Option<u64>,
) -> Result<GenerationResult> {
    if images.len() > profile.max_reference_images {
        return Err(imagerag_core::Error::OverCap {
            count: images.len(),
            cap: profile.max_reference_images,
        }
        .into());
    }
    let params = profile.default_params.clone().with_seed(seed);
    params.validate()?;
    let request = T2iRequest {
        prompt: prompt.to_string(),
        images,
        params: params.clone(),
    };
    let artifact = client.generate(&request)?;
    if artifact.is_empty() {
        return Err(Error::Backend("empty image".into()));
    }
    Ok(GenerationResult {
        image: ImageRef::new(media::data_uri(&artifact)),
        record: GenerationRecord {
            ext: media::sniff_ext(&artifact).to_string(),
            artifact_sha256: hex_digest(&artifact),
            request_sha256: request.sha256(),
            backend_request: request,
            params_used: params,
        },
        artifact,
    })
}
