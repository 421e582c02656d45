//! Record types and line-delimited JSON I/O.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoxError {
    #[error("no bracketed list of four numbers")]
    NoBox,
    #[error("more than one bracketed box")]
    AmbiguousBox,
    #[error("box {0:?} violates 0 <= x1 <= x2 <= 1, 0 <= y1 <= y2 <= 1")]
    InvalidBox([f64; 4]),
}

/// Question-answer category. Region covers both expression and recognition;
/// Choice covers multiple-choice and true/false.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaType {
    Vqa,
    VisualChat,
    Region,
    Caption,
    Choice,
}

impl QaType {
    pub const ALL: [QaType; 5] = [QaType::Vqa, QaType::VisualChat, QaType::Region, QaType::Caption, QaType::Choice];

    pub fn as_str(self) -> &'static str {
        match self {
            QaType::Vqa => "vqa",
            QaType::VisualChat => "visual_chat",
            QaType::Region => "region",
            QaType::Caption => "caption",
            QaType::Choice => "choice",
        }
    }
}

impl fmt::Display for QaType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QaType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        QaType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown qa type {s:?}"))
    }
}

/// Which half of a question-answer pair a piece of text came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Question,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub id: String,
    #[serde(rename = "image")]
    pub image_ref: String,
    #[serde(rename = "type")]
    pub qa_type: QaType,
    pub question: String,
    pub answer: String,
}

impl Triplet {
    pub fn new(id: impl Into<String>, image_ref: impl Into<String>, qa_type: QaType, question: impl Into<String>, answer: impl Into<String>) -> Self {
        Self { id: id.into(), image_ref: image_ref.into(), qa_type, question: question.into(), answer: answer.into() }
    }

    /// Check the per-record invariants (id uniqueness is a dataset property).
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        if self.answer.trim().is_empty() {
            return Err("empty answer".into());
        }
        if self.qa_type == QaType::Region {
            let q = parse_bbox(&self.question).is_ok();
            let a = parse_bbox(&self.answer).is_ok();
            if q == a {
                return Err("region record needs a box on exactly one side".into());
            }
        }
        Ok(())
    }

    pub fn side(&self, side: Side) -> &str {
        match side {
            Side::Question => &self.question,
            Side::Answer => &self.answer,
        }
    }
}

/// Axis-aligned box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, BoxError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if unit(x1) && unit(y1) && unit(x2) && unit(y2) && x1 <= x2 && y1 <= y2 {
            Ok(Self { x1, y1, x2, y2 })
        } else {
            Err(BoxError::InvalidBox([x1, y1, x2, y2]))
        }
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

fn box_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let num = r"([-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?)";
        Regex::new(&format!(r"\[\s*{num}\s*,\s*{num}\s*,\s*{num}\s*,\s*{num}\s*\]")).expect("valid pattern")
    })
}

/// Find the single bracketed quadruple in `text` and validate it as a
/// normalized box. Surrounding prose is ignored; pixel coordinates are
/// rejected rather than rescaled.
pub fn parse_bbox(text: &str) -> Result<BoundingBox, BoxError> {
    let mut found = box_pattern().captures_iter(text);
    let caps = found.next().ok_or(BoxError::NoBox)?;
    if found.next().is_some() {
        return Err(BoxError::AmbiguousBox);
    }
    let mut v = [0.0; 4];
    for (slot, m) in v.iter_mut().zip(caps.iter().skip(1)) {
        *slot = m.expect("four groups").as_str().parse().map_err(|_| BoxError::NoBox)?;
    }
    BoundingBox::new(v[0], v[1], v[2], v[3])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    /// image → question and answer
    #[serde(rename = "i2qa")]
    I2Qa,
    /// image + question → answer
    #[serde(rename = "iq2a")]
    Iq2A,
    /// image + answer → question
    #[serde(rename = "ia2q")]
    Ia2Q,
}

/// One rendered multi-task training example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    #[serde(rename = "image")]
    pub image_ref: String,
    #[serde(rename = "task")]
    pub task_kind: TaskKind,
    #[serde(rename = "system")]
    pub system_prompt: String,
    #[serde(rename = "prompt")]
    pub user_prompt: String,
    pub target: String,
}

/// Parse one JSON value per non-blank line, tagging failures with their
/// 1-based line number.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<(usize, T)>, DataError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let number = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| DataError::Malformed { line: number, reason: e.to_string() })?;
        out.push((number, value));
    }
    Ok(out)
}

/// Write one compact JSON object per line.
pub fn write_jsonl<'a, T: Serialize + 'a, W: Write>(records: impl IntoIterator<Item = &'a T>, mut writer: W) -> Result<(), DataError> {
    for record in records {
        serde_json::to_writer(&mut writer, record).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Read and validate a triplet file: every record must pass
/// [`Triplet::validate`] and ids must be unique.
pub fn read_triplets<R: BufRead>(reader: R) -> Result<Vec<Triplet>, DataError> {
    let rows: Vec<(usize, Triplet)> = read_jsonl(reader)?;
    let mut seen = HashSet::with_capacity(rows.len());
    let mut out = Vec::with_capacity(rows.len());
    for (line, t) in rows {
        t.validate().map_err(|reason| DataError::Malformed { line, reason })?;
        if !seen.insert(t.id.clone()) {
            return Err(DataError::DuplicateId { line, id: t.id });
        }
        out.push(t);
    }
    Ok(out)
}

pub fn write_triplets<W: Write>(records: &[Triplet], writer: W) -> Result<(), DataError> {
    write_jsonl(records, writer)
}
