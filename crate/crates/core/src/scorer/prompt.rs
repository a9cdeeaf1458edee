//! Metric prompt templates and prompt assembly.

use serde::{Deserialize, Serialize};

use crate::domain::{ImageTextPair, Metric};
use crate::error::{Error, Result};

/// Ordering of score and explanation in the model's answer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    /// Score on the first line, explanation after. Allows early stopping.
    #[default]
    Rationalization,
    /// Reasoning first, score on the final line.
    Cot,
}

/// How the image reaches the model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherPath {
    /// The model sees the image itself.
    #[default]
    Vision,
    /// The image is replaced by its dense caption.
    TextOnly,
}

pub const DENSE_CAPTION_PROMPT: &str =
    "Please generate a dense caption in 4-6 sentences for describing the image in detail as much as you can";

pub const RATIONALIZATION_SUFFIX: &str = "Please first output a single line containing the value indicating the scores. In the subsequent line, please provide a comprehensive explanation of your evaluation, avoiding any potential bias.";

pub const COT_SUFFIX: &str = "Please think step by step to first output your reasons to give such a score. In the subsequent line, please output a single line containing the value indicating the scores.";

const ITM_BODY: &str = "Please evaluate if the provided text caption accurately represents the main features and objects of the image. The caption doesn't need to detail every aspect of the image, but it should capture its primary theme. Rate the overall quality of the text caption's match to the image on a scale of 1-100, considering the criteria mentioned.";

const ODF_BODY: &str = "Please evaluate the text caption to determine if it provides detailed descriptions of objects that align with the image description. Specifically, assess if the caption sufficiently describes the color, size, position, shape, material, etc., of the objects. Afterward, rate the caption's overall accuracy in capturing object details from the image on a scale of 1-100, based on the criteria provided.";

const CTQ_BODY: &str = "Please evaluate the text caption based on the following criteria: Grammatical Correctness, Diversity of Vocabulary (e.g., the range and uniqueness of words used), Fluency (e.g., smoothness and natural flow of sentences), Readability, Length, and Structure. Assign an overall quality score on a scale of 1-100.";

const SU_BODY: &str = r#"Please evaluate the given text caption in relation to its corresponding image description. Your goal is to determine if the text caption provides additional semantic information that isn't readily apparent just from the image itself.

For example:

1. If the image description mentions "a man" but the caption elaborates he is a "homeless man" or a "businessman," then the caption is enriching the semantic context.

2. If the caption introduces concepts like the mathematical tangent function, which require in-depth knowledge to deduce, it is imparting external semantics.

3. Captions revealing specific location addresses, festival details, or other nuanced data not easy to infer from the image also provide external semantic information.

4. Directly identifying specific entities in the image such as buildings, people, bird species, animal breeds, car models, engines, etc., in the caption introduces additional insights.

5. Should the image act as a contextual backdrop and the caption describes elements not explicitly showcased in the image, it has semantic depth.

6. Lastly, if the caption depicts relationships between the subjects in the image, which need commonsense knowledge to understand, it should be considered semantically rich.

Please assess and determine the extent of semantic enrichment the caption provides over the image description. Rate the text caption's semantic depth on a scale from 1 to 100."#;

/// Template text for one metric under one prompting mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub metric: Metric,
    pub body: &'static str,
    pub mode: PromptMode,
    pub suffix: &'static str,
}

impl PromptTemplate {
    pub fn new(metric: Metric, mode: PromptMode) -> Self {
        let body = match metric {
            Metric::Itm => ITM_BODY,
            Metric::Odf => ODF_BODY,
            Metric::Ctq => CTQ_BODY,
            Metric::Su => SU_BODY,
        };
        PromptTemplate {
            metric,
            body,
            mode,
            suffix: mode.suffix(),
        }
    }

    /// Lays out the prompt. `description` is the dense caption on the
    /// text-only path.
    pub fn render(&self, caption: &str, description: Option<&str>) -> String {
        let mut out = String::with_capacity(self.body.len() + caption.len() + self.suffix.len() + 64);
        out.push_str(self.body);
        out.push_str("\n\n");
        if let Some(d) = description {
            out.push_str("Image Description: ");
            out.push_str(d);
            out.push_str("\n\n");
        }
        out.push_str("Caption: ");
        out.push_str(caption);
        out.push_str("\n\n");
        out.push_str(self.suffix);
        out
    }
}

impl PromptMode {
    pub fn suffix(self) -> &'static str {
        match self {
            PromptMode::Rationalization => RATIONALIZATION_SUFFIX,
            PromptMode::Cot => COT_SUFFIX,
        }
    }
}

/// Builds the prompt sent to a scorer or teacher for one pair and metric.
pub fn assemble_prompt(metric: Metric, pair: &ImageTextPair, mode: PromptMode, path: TeacherPath) -> Result<String> {
    let template = PromptTemplate::new(metric, mode);
    let description = match path {
        TeacherPath::Vision => None,
        TeacherPath::TextOnly => Some(
            pair.dense_caption
                .as_deref()
                .ok_or_else(|| Error::MissingDenseCaption(pair.id.clone()))?,
        ),
    };
    Ok(template.render(&pair.caption, description))
}
