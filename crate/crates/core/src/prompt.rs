//! Instruction prompt rendering: zero-shot, few-shot and the reflection
//! confirmation turn.
//!
//! Every builder is a pure function. The instruction is sent as a system
//! message, each Knowledge/Question scaffold as a user message, and gold or
//! prior judgments as assistant messages. [`PromptBundle::render_flat`]
//! joins them back into the single-block layout an annotator would read.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{KnowledgeConcept, Label, LabeledPair};
use crate::llm::{flatten_messages, ChatMessage};

/// Goal sentences shared by both variants.
pub const GOAL_INSTRUCTION: &str = "You are a knowledge concept annotator. \
Your job is to judge whether the given Knowledge is matching the Question.";

/// Output-format, reason and exclusivity requests added by V2.
pub const REFINEMENT_INSTRUCTION: &str = "Your answer should start with 'Yes' or 'No'. \
You should also provide your reason for your judgement. \
If Question covers other Knowledge, your answer should be 'No'.";

pub const REFLECTION_INSTRUCTION: &str =
    "Check the knowledge and question and confirm whether the prior answer is correct or wrong.";

const INSTRUCTION_LABEL: &str = "Instruction: ";
const KNOWLEDGE_LABEL: &str = "Knowledge: ";
const QUESTION_LABEL: &str = "Question: ";
const JUDGEMENT_SLOT: &str = "Judgement:";
const CONFIRMATION_SLOT: &str = "Confirmation:";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("{0} text must not be empty")]
    EmptyInput(&'static str),
    #[error("concept `{0}` has no definition to interpret")]
    MissingDefinition(String),
    #[error("few-shot prompt needs at least one demonstration")]
    NoDemonstrations,
    #[error("demonstration judgment must start with `Yes` or `No`: {0:?}")]
    InvalidDemonstration(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptVariant {
    V1,
    V2,
}

impl PromptVariant {
    pub fn instruction(self) -> String {
        match self {
            PromptVariant::V1 => GOAL_INSTRUCTION.to_string(),
            PromptVariant::V2 => format!("{GOAL_INSTRUCTION} {REFINEMENT_INSTRUCTION}"),
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptVariant::V1 => "v1",
            PromptVariant::V2 => "v2",
        })
    }
}

impl FromStr for PromptVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(PromptVariant::V1),
            "v2" => Ok(PromptVariant::V2),
            other => Err(format!("unknown prompt variant `{other}` (expected v1 or v2)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnowledgeRendering {
    /// The concept term as-is.
    NameOnly,
    /// Definition followed by the coverage boundary.
    Interpreted,
}

impl fmt::Display for KnowledgeRendering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KnowledgeRendering::NameOnly => "name",
            KnowledgeRendering::Interpreted => "interpreted",
        })
    }
}

impl FromStr for KnowledgeRendering {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "name" | "nameonly" | "name-only" => Ok(KnowledgeRendering::NameOnly),
            "interpreted" | "interpretation" => Ok(KnowledgeRendering::Interpreted),
            other => Err(format!("unknown knowledge rendering `{other}` (expected name or interpreted)")),
        }
    }
}

pub fn render_knowledge(
    concept: &KnowledgeConcept,
    rendering: KnowledgeRendering,
) -> Result<String, PromptError> {
    match rendering {
        KnowledgeRendering::NameOnly => Ok(concept.name.clone()),
        KnowledgeRendering::Interpreted => {
            let definition = concept.definition.trim();
            if definition.is_empty() {
                return Err(PromptError::MissingDefinition(concept.id.clone()));
            }
            let boundary = concept.boundary.trim();
            if boundary.is_empty() {
                Ok(definition.to_string())
            } else {
                Ok(format!("{definition} {boundary}"))
            }
        }
    }
}

/// A solved example shown before the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub knowledge_text: String,
    pub question_text: String,
    pub judgment_text: String,
}

impl Demonstration {
    pub fn new(
        knowledge_text: impl Into<String>,
        question_text: impl Into<String>,
        judgment_text: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let demo = Self {
            knowledge_text: knowledge_text.into(),
            question_text: question_text.into(),
            judgment_text: judgment_text.into(),
        };
        demo.validate()?;
        Ok(demo)
    }

    /// Renders a gold pair as a demonstration: "Yes." / "No." plus the
    /// pair's explanation when it has one.
    pub fn from_pair(
        concept: &KnowledgeConcept,
        question_text: &str,
        pair: &LabeledPair,
        rendering: KnowledgeRendering,
    ) -> Result<Self, PromptError> {
        Self::new(
            render_knowledge(concept, rendering)?,
            question_text,
            gold_judgment(pair.label, pair.explanation.as_deref()),
        )
    }

    fn validate(&self) -> Result<(), PromptError> {
        if self.knowledge_text.trim().is_empty() {
            return Err(PromptError::EmptyInput("demonstration knowledge"));
        }
        if self.question_text.trim().is_empty() {
            return Err(PromptError::EmptyInput("demonstration question"));
        }
        if !(self.judgment_text.starts_with("Yes") || self.judgment_text.starts_with("No")) {
            return Err(PromptError::InvalidDemonstration(self.judgment_text.clone()));
        }
        Ok(())
    }
}

pub fn gold_judgment(label: Label, explanation: Option<&str>) -> String {
    let head = match label {
        Label::Match => "Yes.",
        Label::Mismatch => "No.",
    };
    match explanation.map(str::trim).filter(|e| !e.is_empty()) {
        Some(e) => format!("{head} {e}"),
        None => head.to_string(),
    }
}

/// An ordered chat transcript plus its content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    messages: Vec<ChatMessage>,
    fingerprint: String,
}

impl PromptBundle {
    fn from_messages(messages: Vec<ChatMessage>) -> Self {
        let fingerprint = fingerprint(&messages);
        Self { messages, fingerprint }
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    /// Lowercase hex SHA-256 over the role/content sequence.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Single-block rendering. Assistant turns continue the preceding slot
    /// line ("Judgement: Yes, ..."); every other message starts a new line.
    pub fn render_flat(&self) -> String {
        flatten_messages(&self.messages)
    }
}

pub fn fingerprint(messages: &[ChatMessage]) -> String {
    let mut h = Sha256::new();
    for m in messages {
        h.update(m.role.as_str().as_bytes());
        h.update([0u8]);
        h.update((m.content.len() as u64).to_le_bytes());
        h.update(m.content.as_bytes());
    }
    hex::encode(h.finalize())
}

fn scaffold(knowledge: &str, question: &str) -> String {
    format!("{KNOWLEDGE_LABEL}{knowledge}\n{QUESTION_LABEL}{question}\n{JUDGEMENT_SLOT}")
}

fn instruction_message(variant: PromptVariant) -> ChatMessage {
    ChatMessage::system(format!("{INSTRUCTION_LABEL}{}", variant.instruction()))
}

fn require(text: &str, what: &'static str) -> Result<(), PromptError> {
    if text.trim().is_empty() {
        Err(PromptError::EmptyInput(what))
    } else {
        Ok(())
    }
}

pub fn build_zero_shot(
    variant: PromptVariant,
    knowledge: &str,
    question: &str,
) -> Result<PromptBundle, PromptError> {
    require(knowledge, "knowledge")?;
    require(question, "question")?;
    Ok(PromptBundle::from_messages(vec![
        instruction_message(variant),
        ChatMessage::user(scaffold(knowledge, question)),
    ]))
}

pub fn build_few_shot(
    variant: PromptVariant,
    demos: &[Demonstration],
    knowledge: &str,
    question: &str,
) -> Result<PromptBundle, PromptError> {
    if demos.is_empty() {
        return Err(PromptError::NoDemonstrations);
    }
    require(knowledge, "knowledge")?;
    require(question, "question")?;
    let mut messages = Vec::with_capacity(2 * demos.len() + 2);
    messages.push(instruction_message(variant));
    for d in demos {
        d.validate()?;
        messages.push(ChatMessage::user(scaffold(&d.knowledge_text, &d.question_text)));
        messages.push(ChatMessage::assistant(d.judgment_text.clone()));
    }
    messages.push(ChatMessage::user(scaffold(knowledge, question)));
    Ok(PromptBundle::from_messages(messages))
}

/// Appends the prior judgment and the neutral confirmation request.
pub fn build_reflection(first: &PromptBundle, first_judgment_raw: &str) -> Result<PromptBundle, PromptError> {
    require(first_judgment_raw, "prior judgment")?;
    let mut messages = first.messages.clone();
    messages.push(ChatMessage::assistant(first_judgment_raw));
    messages
        .push(ChatMessage::user(format!("{INSTRUCTION_LABEL}{REFLECTION_INSTRUCTION}\n{CONFIRMATION_SLOT}")));
    Ok(PromptBundle::from_messages(messages))
}
