//! Reference-augmented prompt rendering.
//!
//! `According to these examples of <c_1>:<img1>, <img2>, <c_2>:<img3>, generate <p>`
//!
//! Placeholders are numbered 1-based in attachment order, so the text and the
//! attachment list always line up one to one.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::BackendCapabilities;
use crate::error::{Error, Result};

/// Opaque reference to an image: a URI, a local path, or a data URI.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for ImageRef {
    fn from(s: &str) -> Self {
        Self(s.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlaceholderStyle {
    /// `<img1>`, `<img2>`, ...
    #[default]
    Indexed,
    /// OmniGen's native `<img><|image_1|></img>`.
    Omnigen,
}

impl PlaceholderStyle {
    pub fn placeholder(self, index: usize) -> String {
        match self {
            PlaceholderStyle::Indexed => format!("<img{index}>"),
            PlaceholderStyle::Omnigen => format!("<img><|image_{index}|></img>"),
        }
    }

    /// 1-based placeholder indices in the order they occur in `text`.
    pub fn scan(self, text: &str) -> Vec<usize> {
        let (open, close) = match self {
            PlaceholderStyle::Indexed => ("<img", ">"),
            PlaceholderStyle::Omnigen => ("<img><|image_", "|></img>"),
        };
        let mut found = Vec::new();
        let mut rest = text;
        while let Some(at) = rest.find(open) {
            rest = &rest[at + open.len()..];
            let digits = rest.chars().take_while(char::is_ascii_digit).count();
            if digits > 0 && rest[digits..].starts_with(close) {
                if let Ok(n) = rest[..digits].parse() {
                    found.push(n);
                }
                rest = &rest[digits + close.len()..];
            }
        }
        found
    }
}

/// One retrieval caption with the images retrieved for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptGroup {
    pub caption: String,
    pub images: Vec<ImageRef>,
}

impl ConceptGroup {
    pub fn new(caption: impl Into<String>, images: Vec<ImageRef>) -> Self {
        Self {
            caption: caption.into(),
            images,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedPrompt {
    pub text: String,
    /// Attachments in placeholder order (subject first when present).
    pub images: Vec<ImageRef>,
    pub groups: Vec<ConceptGroup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<ImageRef>,
}

fn check_groups(groups: &[ConceptGroup]) -> Result<usize> {
    if groups.is_empty() {
        return Err(Error::Empty("concept groups"));
    }
    let mut total = 0;
    for g in groups {
        if g.images.is_empty() {
            return Err(Error::EmptyGroup(g.caption.clone()));
        }
        total += g.images.len();
    }
    Ok(total)
}

fn examples_clause(groups: &[ConceptGroup], style: PlaceholderStyle, first_index: usize) -> String {
    let mut next = first_index;
    let parts: Vec<String> = groups
        .iter()
        .map(|g| {
            let imgs: Vec<String> = g
                .images
                .iter()
                .map(|_| {
                    let p = style.placeholder(next);
                    next += 1;
                    p
                })
                .collect();
            format!("{}:{}", g.caption, imgs.join(", "))
        })
        .collect();
    parts.join(", ")
}

/// Renders the reference template; fails when the groups carry more than `cap` images.
pub fn render_template(
    prompt: &str,
    groups: &[ConceptGroup],
    style: PlaceholderStyle,
    cap: usize,
) -> Result<AugmentedPrompt> {
    let count = check_groups(groups)?;
    if count > cap {
        return Err(Error::OverCap { count, cap });
    }
    let text = format!(
        "According to these examples of {}, generate {}",
        examples_clause(groups, style, 1),
        prompt
    );
    Ok(AugmentedPrompt {
        text,
        images: groups.iter().flat_map(|g| g.images.iter().cloned()).collect(),
        groups: groups.to_vec(),
        subject: None,
    })
}

/// Text sent for the initial personalized generation, before any references.
pub fn personalized_base(prompt: &str, style: PlaceholderStyle) -> String {
    format!("The subject is {}. {}", style.placeholder(1), prompt)
}

/// Renders the template with a personal subject image as the first attachment.
///
/// Needs at least one concept reference and room for `1 + references` images.
pub fn render_personalized(
    prompt: &str,
    subject: &ImageRef,
    groups: &[ConceptGroup],
    style: PlaceholderStyle,
    caps: &BackendCapabilities,
) -> Result<AugmentedPrompt> {
    if !caps.supports_personal_subject {
        return Err(Error::InvalidParam("backend does not support a personal subject image"));
    }
    let refs = check_groups(groups)?;
    let count = 1 + refs;
    if count > caps.max_reference_images {
        return Err(Error::OverCap {
            count,
            cap: caps.max_reference_images,
        });
    }
    let text = format!(
        "The subject is {}. According to these examples of {}, generate {}",
        style.placeholder(1),
        examples_clause(groups, style, 2),
        prompt
    );
    let mut images = Vec::with_capacity(count);
    images.push(subject.clone());
    images.extend(groups.iter().flat_map(|g| g.images.iter().cloned()));
    Ok(AugmentedPrompt {
        text,
        images,
        groups: groups.to_vec(),
        subject: Some(subject.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn scans_both_styles() {
        assert_eq!(PlaceholderStyle::Indexed.scan("x <img2> y <img10>, <imgx>"), [2, 10]);
        assert_eq!(
            PlaceholderStyle::Omnigen.scan("a <img><|image_1|></img> b <img><|image_2|></img>"),
            [1, 2]
        );
    }

    #[test]
    fn multi_image_group() {
        let groups = vec![
            ConceptGroup::new("c1", vec!["a".into(), "b".into()]),
            ConceptGroup::new("c2", vec!["c".into()]),
        ];
        let out = render_template("p", &groups, PlaceholderStyle::Indexed, 3).unwrap();
        assert_eq!(out.text, "According to these examples of c1:<img1>, <img2>, c2:<img3>, generate p");
    }

    #[test]
    fn empty_inputs_rejected() {
        assert_eq!(
            render_template("p", &[], PlaceholderStyle::Indexed, 3).unwrap_err(),
            Error::Empty("concept groups")
        );
        assert_eq!(
            render_template("p", &[ConceptGroup::new("c", vec![])], PlaceholderStyle::Indexed, 3).unwrap_err(),
            Error::EmptyGroup("c".into())
        );
    }
}
