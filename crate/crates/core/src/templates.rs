//! Versioned prompt and fixed-span lists.
//!
//! The default set is compiled in from `resources/templates.toml`; a
//! replacement file with the same schema can be loaded at runtime.

use std::path::Path;
use std::sync::OnceLock;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{QaType, Side};

const BUNDLED: &str = include_str!("../resources/templates.toml");

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("cannot read template file: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad template file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("template file has an empty `{0}` list")]
    Empty(&'static str),
}

#[derive(Debug, Clone, Deserialize)]
pub struct FixedSpan {
    pub text: String,
    #[serde(default)]
    pub types: Vec<QaType>,
    pub sides: Vec<Side>,
}

impl FixedSpan {
    fn applies(&self, qa_type: QaType, side: Side) -> bool {
        (self.types.is_empty() || self.types.contains(&qa_type)) && self.sides.contains(&side)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSet {
    pub version: u32,
    pub system_prompt: String,
    /// Prompts asking for a question-answer pair given only the image.
    pub generate_pair: Vec<String>,
    /// Prompts asking for the question given the image and answer.
    pub question_from_answer: Vec<String>,
    #[serde(default)]
    pub fixed_span: Vec<FixedSpan>,
}

impl TemplateSet {
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut set: TemplateSet = toml::from_str(text)?;
        if set.generate_pair.is_empty() {
            return Err(TemplateError::Empty("generate_pair"));
        }
        if set.question_from_answer.is_empty() {
            return Err(TemplateError::Empty("question_from_answer"));
        }
        // longest first, so a span never shadows a longer one containing it
        set.fixed_span.sort_by(|a, b| b.text.len().cmp(&a.text.len()));
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The compiled-in set.
    pub fn bundled() -> &'static TemplateSet {
        static SET: OnceLock<TemplateSet> = OnceLock::new();
        SET.get_or_init(|| TemplateSet::parse(BUNDLED).expect("bundled templates parse"))
    }

    /// Remove every fixed instruction span that applies to this category and
    /// side, then trim. Text containing no span is returned unchanged.
    pub fn strip(&self, text: &str, qa_type: QaType, side: Side) -> String {
        let spans: Vec<&str> = self
            .fixed_span
            .iter()
            .filter(|s| s.applies(qa_type, side))
            .map(|s| s.text.as_str())
            .collect();
        if !spans.iter().any(|s| text.contains(s)) {
            return text.to_string();
        }
        let mut out = text.to_string();
        // removal can splice a new occurrence together; repeat to a fixpoint
        while let Some(span) = spans.iter().find(|s| out.contains(*s)) {
            out = out.replace(span, "");
        }
        out.trim().to_string()
    }

    pub fn pick_generate_pair(&self, key: &str, seed: u64) -> &str {
        &self.generate_pair[pick(key, seed, "generate_pair", self.generate_pair.len())]
    }

    pub fn pick_question_from_answer(&self, key: &str, seed: u64) -> &str {
        &self.question_from_answer[pick(key, seed, "question_from_answer", self.question_from_answer.len())]
    }
}

/// Deterministic index in `0..n` from `(key, seed)`, stable across platforms
/// and toolchains.
fn pick(key: &str, seed: u64, family: &str, n: usize) -> usize {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(family.as_bytes());
    hasher.update([0u8]);
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(word) % n as u64) as usize
}

/// [`TemplateSet::strip`] with the bundled set.
pub fn strip_template(text: &str, qa_type: QaType, side: Side) -> String {
    TemplateSet::bundled().strip(text, qa_type, side)
}
