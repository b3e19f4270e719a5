//! Fixed VLM instruction texts.
//!
//! The decision, missing-concepts, caption and rephrase texts must reach the
//! model byte-for-byte; only the `{prompt}` slot is substituted.

use alloc::format;
use alloc::string::String;

const SLOT: &str = "{prompt}";

pub const DECISION_TEMPLATE: &str =
    "Does this image match the prompt \"{prompt}\"? Consider both content and style aspects. Only answer yes or no.";

pub const MISSING_CONCEPTS: &str = "What are the differences between this image and the required prompt? \
In your answer only provide missing concepts in terms of content and style, each in a separate line. \
For example, if the prompt is \"An oil painting of a sheep and a car\" and the image is a painting of a car \
but not an oil painting, the missing concepts will be:\noil painting style\na sheep";

pub const CAPTION_GENERATION: &str = "For each concept you suggested above, please suggest an image caption \
describing an image that explains this concept only. The captions should be stand-alone description of the \
images, assuming no knowledge of the given images and prompt, that I can use to lookup images with \
automatically. In your answer only provide the image captions, each in a new line with nothing else other \
than the caption.";

pub const REPHRASE_TEMPLATE: &str = "Please rephrase the following prompt to make it easier and clearer for the \
text-to-image generation model that generated the above image for this prompt. The goal is to generate an \
image that matches the given text prompt. If the prompt is already clear, return it as it is. Simplify and \
shorten long descriptions of known objects/entities but DO NOT change the original meaning of the text prompt. \
If the prompt contains rare words, change those words to a description of their meaning. In your answer only \
provide the prompt and nothing else. The prompt to be rephrased: \"{prompt}\".";

/// Assistant turn standing in for the decision answer when the missing-concepts
/// question is asked (the decision exchange carries the prompt into context).
pub const DECISION_NEGATIVE: &str = "no";

fn fill(template: &str, prompt: &str) -> String {
    template.replacen(SLOT, prompt, 1)
}

pub fn decision(prompt: &str) -> String {
    fill(DECISION_TEMPLATE, prompt)
}

pub fn rephrase(prompt: &str) -> String {
    fill(REPHRASE_TEMPLATE, prompt)
}

/// Re-rank request listing numbered candidate descriptions.
pub fn rerank<'a, I>(query: &str, candidates: I) -> String
where
    I: IntoIterator<Item = &'a str>,
{
    let mut text = format!(
        "Rank the following candidate images by how well each one matches the image caption \"{query}\".\n"
    );
    for (i, c) in candidates.into_iter().enumerate() {
        text.push_str(&format!("{}. {}\n", i + 1, c));
    }
    text.push_str(
        "In your answer only provide the candidate numbers ordered from best to worst match, separated by commas.",
    );
    text
}
