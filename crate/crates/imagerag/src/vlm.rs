//! The step-by-step VLM protocol: match decision, missing concepts, retrieval
//! captions, with the rising-temperature retry loop and prompt fallback.

use imagerag_core::parse::{self, ConceptCaption};
use imagerag_core::prompts;
use imagerag_core::{Attempt, AttemptOutcome, ImageRef, RetryPolicy, RetryState};
use serde::{Deserialize, Serialize};

use crate::chat::{ChatMessage, ChatRequest, Role, VlmClient};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub matches: bool,
    pub raw_response: String,
}

fn require_prompt(prompt: &str) -> Result<()> {
    if prompt.trim().is_empty() {
        return Err(Error::Precondition("prompt is empty".into()));
    }
    Ok(())
}

fn request(vlm: &dyn VlmClient, temperature: f64, messages: Vec<ChatMessage>) -> ChatRequest {
    ChatRequest {
        model: vlm.model_name().to_string(),
        temperature,
        messages,
    }
}

pub fn decide_match(vlm: &dyn VlmClient, prompt: &str, image: &ImageRef, temperature: f64) -> Result<MatchDecision> {
    require_prompt(prompt)?;
    let req = request(
        vlm,
        temperature,
        vec![ChatMessage::user_with_image(image.as_str(), prompts::decision(prompt))],
    );
    let raw = vlm.complete(&req)?;
    match parse::parse_yes_no(&raw) {
        Some(matches) => Ok(MatchDecision {
            matches,
            raw_response: raw,
        }),
        None => Err(Error::UnparseableDecision { raw }),
    }
}

/// Conversation up to and including the missing-concepts question.
fn concepts_conversation(prompt: &str, image: &ImageRef) -> Vec<ChatMessage> {
    vec![
        ChatMessage::user_with_image(image.as_str(), prompts::decision(prompt)),
        ChatMessage::text(Role::Assistant, prompts::DECISION_NEGATIVE),
        ChatMessage::text(Role::User, prompts::MISSING_CONCEPTS),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptReply {
    pub concepts: Vec<String>,
    pub raw: String,
    pub refused: bool,
}

pub fn missing_concepts(
    vlm: &dyn VlmClient,
    prompt: &str,
    image: &ImageRef,
    temperature: f64,
    max_concepts: usize,
) -> Result<ConceptReply> {
    require_prompt(prompt)?;
    let req = request(vlm, temperature, concepts_conversation(prompt, image));
    let raw = vlm.complete(&req)?;
    Ok(ConceptReply {
        concepts: parse::parse_concepts(&raw, max_concepts),
        refused: parse::is_refusal(&raw),
        raw,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionReply {
    pub captions: Vec<ConceptCaption>,
    pub raw: String,
    pub count_mismatch: bool,
}

/// Asks for one stand-alone caption per concept, continuing the
/// missing-concepts conversation.
pub fn captions_for_concepts(
    vlm: &dyn VlmClient,
    prompt: &str,
    image: &ImageRef,
    concepts: &[String],
    temperature: f64,
) -> Result<CaptionReply> {
    if concepts.is_empty() {
        return Err(Error::Precondition("no concepts to caption".into()));
    }
    let mut messages = concepts_conversation(prompt, image);
    messages.push(ChatMessage::text(Role::Assistant, concepts.join("\n")));
    messages.push(ChatMessage::text(Role::User, prompts::CAPTION_GENERATION));
    let raw = vlm.complete(&request(vlm, temperature, messages))?;
    let pairing = parse::pair_captions(concepts, &raw);
    if pairing.pairs.is_empty() {
        return Err(Error::NoCaptions);
    }
    Ok(CaptionReply {
        captions: pairing.pairs,
        raw,
        count_mismatch: pairing.count_mismatch,
    })
}

/// What the retry loop should produce per concept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    /// Generated stand-alone captions (the full method).
    #[default]
    Captions,
    /// The concept phrases themselves, no caption round.
    Concepts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionGeneration {
    pub captions: Vec<ConceptCaption>,
    pub fallback_used: bool,
    pub attempts: Vec<Attempt>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Runs missing-concepts and caption requests under the retry schedule,
/// falling back to the prompt as the single retrieval caption.
///
/// Transport failures abort; refusals and empty replies advance the schedule.
pub fn retrieval_caption_generation(
    vlm: &dyn VlmClient,
    prompt: &str,
    image: &ImageRef,
    policy: &RetryPolicy,
    max_concepts: usize,
    mode: QueryMode,
) -> Result<CaptionGeneration> {
    require_prompt(prompt)?;
    if max_concepts == 0 {
        return Err(Error::Config("max_concepts must be at least 1".into()));
    }
    let mut state = RetryState::new(policy)?;
    let mut warnings = Vec::new();
    while let Some(t) = state.next_temperature() {
        let reply = missing_concepts(vlm, prompt, image, t, max_concepts)?;
        if reply.refused {
            state.record(AttemptOutcome::Refused);
            continue;
        }
        if reply.concepts.is_empty() {
            state.record(AttemptOutcome::NoConcepts);
            continue;
        }
        let captions = match mode {
            QueryMode::Concepts => reply
                .concepts
                .iter()
                .map(|c| ConceptCaption {
                    concept: c.clone(),
                    caption: c.clone(),
                })
                .collect(),
            QueryMode::Captions => match captions_for_concepts(vlm, prompt, image, &reply.concepts, t) {
                Ok(c) => {
                    if c.count_mismatch {
                        warnings.push(format!(
                            "caption count mismatch at temperature {t}: {} concepts, {} captions kept",
                            reply.concepts.len(),
                            c.captions.len()
                        ));
                    }
                    c.captions
                }
                Err(Error::NoCaptions) => {
                    state.record(AttemptOutcome::NoCaptions);
                    continue;
                }
                Err(e) => return Err(e),
            },
        };
        state.record(AttemptOutcome::Success);
        return Ok(CaptionGeneration {
            captions,
            fallback_used: false,
            attempts: state.into_attempts(),
            warnings,
        });
    }
    Ok(CaptionGeneration {
        captions: vec![ConceptCaption {
            concept: prompt.to_string(),
            caption: prompt.to_string(),
        }],
        fallback_used: true,
        attempts: state.into_attempts(),
        warnings,
    })
}

/// The rephrase ablation: returns the model's prompt, trimmed.
pub fn rephrase_prompt(vlm: &dyn VlmClient, prompt: &str, image: &ImageRef, temperature: f64) -> Result<String> {
    require_prompt(prompt)?;
    let req = request(
        vlm,
        temperature,
        vec![ChatMessage::user_with_image(image.as_str(), prompts::rephrase(prompt))],
    );
    let out = vlm.complete(&req)?.trim().to_string();
    if out.is_empty() {
        return Err(Error::Protocol("empty rephrased prompt".into()));
    }
    Ok(out)
}
