//! Multi-task record construction from seed triplets.
//!
//! Each seed triplet becomes exactly one training record. Its task is drawn
//! from an exact-count partition of the dataset: image→QA, image+answer→Q,
//! and the remainder image+question→A (the original pair unchanged).

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::data::{read_jsonl, DataError, QaType, TaskKind, TaskRecord, Triplet};
use crate::templates::TemplateSet;
use crate::util::floor_count;

pub const INSTRUCTION_MARKER: &str = "Instruction:";
pub const ANSWER_MARKER: &str = "Answer:";

const RATIO_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum TaskgenError {
    #[error("invalid mask ratios: {0}")]
    InvalidRatios(String),
    #[error("output has no instruction or answer marker: {0:?}")]
    UnparseableOutput(String),
    #[error("conversation {0:?} has no complete question/answer turn")]
    EmptyConversation(String),
}

/// Shares of the corpus rendered as image→QA, image+answer→Q and
/// image+question→A.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskRatios {
    pub p_both: f64,
    pub p_q: f64,
    pub p_a: f64,
}

impl MaskRatios {
    pub const DEFAULT: MaskRatios = MaskRatios { p_both: 0.5, p_q: 0.2, p_a: 0.3 };

    pub fn new(p_both: f64, p_q: f64, p_a: f64) -> Result<Self, TaskgenError> {
        let r = MaskRatios { p_both, p_q, p_a };
        for (name, p) in [("both", p_both), ("question", p_q), ("answer", p_a)] {
            if !p.is_finite() || p < 0.0 {
                return Err(TaskgenError::InvalidRatios(format!("{name} share {p} is negative or not finite")));
            }
        }
        let sum = p_both + p_q + p_a;
        if (sum - 1.0).abs() > RATIO_TOLERANCE {
            return Err(TaskgenError::InvalidRatios(format!("shares sum to {sum}, not 1")));
        }
        Ok(r)
    }
}

impl Default for MaskRatios {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl fmt::Display for MaskRatios {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.p_both, self.p_q, self.p_a)
    }
}

fn parse_share(s: &str) -> Result<f64, TaskgenError> {
    let bad = || TaskgenError::InvalidRatios(format!("cannot parse share {s:?}"));
    match s.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().map_err(|_| bad())?;
            let den: f64 = den.trim().parse().map_err(|_| bad())?;
            Ok(num / den)
        }
        None => s.trim().parse().map_err(|_| bad()),
    }
}

/// `"0.5,0.2,0.3"`; shares may also be written as fractions (`"1/3,1/3,1/3"`).
impl FromStr for MaskRatios {
    type Err = TaskgenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 3 {
            return Err(TaskgenError::InvalidRatios(format!("expected three comma-separated shares, got {s:?}")));
        }
        MaskRatios::new(parse_share(parts[0])?, parse_share(parts[1])?, parse_share(parts[2])?)
    }
}

/// Exactly `⌊p_both·n⌋` image→QA and `⌊p_q·n⌋` image+answer→Q tasks, the
/// rest image+question→A, in a seeded random order.
pub fn assign_masks(n: usize, ratios: MaskRatios, seed: u64) -> Vec<TaskKind> {
    let both = floor_count(ratios.p_both, n);
    let q = floor_count(ratios.p_q, n).min(n - both);
    let mut kinds = Vec::with_capacity(n);
    kinds.extend(std::iter::repeat_n(TaskKind::I2Qa, both));
    kinds.extend(std::iter::repeat_n(TaskKind::Ia2Q, q));
    kinds.extend(std::iter::repeat_n(TaskKind::Iq2A, n - both - q));
    kinds.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    kinds
}

pub fn render_record(t: &Triplet, kind: TaskKind, templates: &TemplateSet, seed: u64) -> TaskRecord {
    let (user_prompt, target) = match kind {
        TaskKind::Iq2A => (t.question.clone(), t.answer.clone()),
        TaskKind::I2Qa => (
            templates.pick_generate_pair(&t.id, seed).to_string(),
            format!("{INSTRUCTION_MARKER} {} {ANSWER_MARKER} {}", t.question, t.answer),
        ),
        TaskKind::Ia2Q => (
            format!("{} {ANSWER_MARKER} {}", templates.pick_question_from_answer(&t.id, seed), t.answer),
            format!("{INSTRUCTION_MARKER} {}", t.question),
        ),
    };
    TaskRecord {
        id: t.id.clone(),
        image_ref: t.image_ref.clone(),
        task_kind: kind,
        system_prompt: templates.system_prompt.clone(),
        user_prompt,
        target,
    }
}

/// Render a whole seed set. A pure function of `(seeds, ratios, seed)`.
pub fn build_corpus(seeds: &[Triplet], ratios: MaskRatios, templates: &TemplateSet, seed: u64) -> Vec<TaskRecord> {
    let kinds = assign_masks(seeds.len(), ratios, seed);
    seeds.iter().zip(kinds).map(|(t, k)| render_record(t, k, templates, seed)).collect()
}

/// Question and/or answer recovered from marker-formatted text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PartialPair {
    pub question: Option<String>,
    pub answer: Option<String>,
}

fn non_empty(s: &str) -> Option<String> {
    let s = s.trim();
    (!s.is_empty()).then(|| s.to_string())
}

/// Split `Instruction: … Answer: …` text. The answer marker is the last one
/// after the instruction marker, so questions quoting "Answer:" survive as
/// long as the answer itself does not.
pub fn invert_output(text: &str) -> Result<PartialPair, TaskgenError> {
    let unparseable = || TaskgenError::UnparseableOutput(text.to_string());
    let (after_instr, has_instr) = match text.find(INSTRUCTION_MARKER) {
        Some(i) => (&text[i + INSTRUCTION_MARKER.len()..], true),
        None => (text, false),
    };
    let pair = match after_instr.rfind(ANSWER_MARKER) {
        Some(j) => PartialPair {
            question: if has_instr { non_empty(&after_instr[..j]) } else { None },
            answer: non_empty(&after_instr[j + ANSWER_MARKER.len()..]),
        },
        None if has_instr => PartialPair { question: non_empty(after_instr), answer: None },
        None => return Err(unparseable()),
    };
    if pair.question.is_none() && pair.answer.is_none() {
        return Err(unparseable());
    }
    Ok(pair)
}

/// Recover the masked sides of a rendered record from its target; the
/// image+question→A passthrough yields its prompt and target directly.
pub fn invert_record(rec: &TaskRecord) -> Result<PartialPair, TaskgenError> {
    match rec.task_kind {
        TaskKind::Iq2A => Ok(PartialPair { question: Some(rec.user_prompt.clone()), answer: Some(rec.target.clone()) }),
        TaskKind::I2Qa | TaskKind::Ia2Q => invert_output(&rec.target),
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct Turn {
    pub from: String,
    pub value: String,
}

/// Seed record in the multi-turn `conversations` layout.
#[derive(Debug, Clone, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub image: String,
    #[serde(rename = "type", default)]
    pub qa_type: Option<QaType>,
    pub conversations: Vec<Turn>,
}

const IMAGE_TOKEN: &str = "<image>";

fn is_user(from: &str) -> bool {
    matches!(from, "human" | "user")
}

/// Keep only the first user turn and the reply that follows it.
pub fn flatten_conversation(c: &Conversation) -> Result<Triplet, TaskgenError> {
    let empty = || TaskgenError::EmptyConversation(c.id.clone());
    let at = c.conversations.iter().position(|t| is_user(&t.from)).ok_or_else(empty)?;
    let reply = c.conversations.get(at + 1).filter(|t| !is_user(&t.from)).ok_or_else(empty)?;
    let question = c.conversations[at].value.replace(IMAGE_TOKEN, "").trim().to_string();
    let answer = reply.value.trim().to_string();
    if question.is_empty() || answer.is_empty() {
        return Err(empty());
    }
    Ok(Triplet::new(&c.id, &c.image, c.qa_type.unwrap_or(QaType::VisualChat), question, answer))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SeedLine {
    Conversation(Conversation),
    Triplet(Triplet),
}

/// Read seed records given either as flat triplets or in the multi-turn
/// layout (flattened with [`flatten_conversation`]).
pub fn read_seed<R: BufRead>(reader: R) -> Result<Vec<Triplet>, DataError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, rec) in read_jsonl::<SeedLine, _>(reader)? {
        let t = match rec {
            SeedLine::Triplet(t) => t,
            SeedLine::Conversation(c) => {
                flatten_conversation(&c).map_err(|e| DataError::Malformed { line, reason: e.to_string() })?
            }
        };
        t.validate().map_err(|reason| DataError::Malformed { line, reason })?;
        if !seen.insert(t.id.clone()) {
            return Err(DataError::DuplicateId { line, id: t.id });
        }
        out.push(t);
    }
    Ok(out)
}
