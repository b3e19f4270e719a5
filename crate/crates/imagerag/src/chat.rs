//! Chat-completion clients: HTTP, scripted transcript replay, and rule-based mocks.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read};
use std::sync::Mutex;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::http::{self, HttpConfig};
use crate::media;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            content: vec![ContentPart::Text { text: text.into() }],
        }
    }

    /// User turn carrying one image followed by text.
    pub fn user_with_image(image: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: vec![
                ContentPart::ImageUrl {
                    image_url: ImageUrl { url: image.into() },
                },
                ContentPart::Text { text: text.into() },
            ],
        }
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.content.iter().filter_map(|p| match p {
            ContentPart::Text { text } => Some(text.as_str()),
            ContentPart::ImageUrl { .. } => None,
        })
    }

    pub fn images(&self) -> impl Iterator<Item = &str> {
        self.content.iter().filter_map(|p| match p {
            ContentPart::ImageUrl { image_url } => Some(image_url.url.as_str()),
            ContentPart::Text { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    /// Text of the final user turn, parts joined with newlines.
    pub fn last_user_text(&self) -> String {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.texts().collect::<Vec<_>>().join("\n"))
            .unwrap_or_default()
    }
}

/// A chat-completion model. Implementations must tolerate concurrent calls.
pub trait VlmClient: Send + Sync {
    fn model_name(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

/// OpenAI-compatible chat-completions endpoint.
pub struct HttpVlmClient {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    config: HttpConfig,
    client: Client,
}

impl HttpVlmClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, config: HttpConfig) -> Result<Self> {
        Ok(Self {
            endpoint: endpoint.into(),
            model: model.into(),
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

/// Rewrites local image paths into data URIs so the service can read them.
pub fn inline_images(request: &ChatRequest) -> Result<ChatRequest> {
    let mut out = request.clone();
    for m in &mut out.messages {
        for part in &mut m.content {
            if let ContentPart::ImageUrl { image_url } = part {
                image_url.url = media::wire_url(&image_url.url.as_str().into())?;
            }
        }
    }
    Ok(out)
}

/// Pulls `choices[0].message.content` out of a completion response.
pub fn parse_completion(resp: &Value) -> Result<String> {
    let content = resp
        .pointer("/choices/0/message/content")
        .ok_or_else(|| Error::Protocol("missing choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        // Some servers return typed parts here as well.
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        Value::Null => Ok(String::new()),
        other => Err(Error::Protocol(format!("unexpected content type: {other}"))),
    }
}

impl VlmClient for HttpVlmClient {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let body = inline_images(request)?;
        let resp = http::post_json(&self.client, &self.config, &self.endpoint, self.api_key.as_deref(), &body)?;
        parse_completion(&resp)
    }
}

/// One scripted reply: either content or a transport failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptedReply {
    Content(String),
    TransportError(String),
}

/// One line of a mock transcript file.
///
/// `{"kind":"vlm","content":"..."}` or `{"kind":"vlm","error":"..."}` feed the
/// chat mock (a line without `kind` counts as `vlm`);
/// `{"kind":"embed","text":"...","vector":[...]}` feeds the mock embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f32>>,
}

fn default_kind() -> String {
    "vlm".into()
}

pub fn read_transcript<R: Read>(reader: R) -> Result<Vec<TranscriptLine>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::Config(format!("transcript line {}: {e}", n + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TranscriptLine = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("transcript line {}: {e}", n + 1)))?;
        out.push(parsed);
    }
    Ok(out)
}

/// Replays scripted replies in order and records every request.
#[derive(Debug)]
pub struct ScriptedVlm {
    model: String,
    replies: Mutex<VecDeque<ScriptedReply>>,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedVlm {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::from_replies(replies.into_iter().map(|s| ScriptedReply::Content(s.into())))
    }

    pub fn from_replies<I: IntoIterator<Item = ScriptedReply>>(replies: I) -> Self {
        Self {
            model: "scripted".into(),
            replies: Mutex::new(replies.into_iter().collect()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn from_transcript(lines: &[TranscriptLine]) -> Result<Self> {
        let mut replies = Vec::new();
        for (i, l) in lines.iter().enumerate().filter(|(_, l)| l.kind == "vlm") {
            replies.push(match (&l.content, &l.error) {
                (Some(c), None) => ScriptedReply::Content(c.clone()),
                (None, Some(e)) => ScriptedReply::TransportError(e.clone()),
                _ => {
                    return Err(Error::Config(format!(
                        "transcript entry {}: vlm lines need exactly one of content or error",
                        i + 1
                    )))
                }
            });
        }
        Ok(Self::from_replies(replies))
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().expect("poisoned").clone()
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().expect("poisoned").len()
    }
}

impl VlmClient for ScriptedVlm {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        self.requests.lock().expect("poisoned").push(request.clone());
        match self.replies.lock().expect("poisoned").pop_front() {
            Some(ScriptedReply::Content(c)) => Ok(c),
            Some(ScriptedReply::TransportError(e)) => Err(Error::Transport(e)),
            None => Err(Error::Transport("scripted transcript exhausted".into())),
        }
    }
}

type Rule = dyn Fn(&ChatRequest) -> Result<String> + Send + Sync;

/// Answers each request through a closure; useful when the reply depends on
/// request content (e.g. the prompt inside a decision question).
pub struct RuleVlm {
    model: String,
    rule: Box<Rule>,
    requests: Mutex<Vec<ChatRequest>>,
}

impl RuleVlm {
    pub fn new<F>(rule: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String> + Send + Sync + 'static,
    {
        Self {
            model: "rule".into(),
            rule: Box::new(rule),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().expect("poisoned").clone()
    }
}

impl VlmClient for RuleVlm {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        self.requests.lock().expect("poisoned").push(request.clone());
        (self.rule)(request)
    }
}
