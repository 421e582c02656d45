use std::collections::HashMap;
use std::io::BufRead;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{read_jsonl, DataError, QaType};
use crate::taskgen::invert_output;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("model unreachable: {0}")]
    Unavailable(String),
    #[error("model has no entry for image {0:?}")]
    UnknownImage(String),
    #[error("malformed model response: {0}")]
    BadResponse(String),
}

/// A question-answer pair produced from an image alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedQa {
    pub question: String,
    pub answer: String,
    /// Category the model declared, if any.
    pub qa_type: Option<QaType>,
}

/// The three capabilities the curation loop needs from a vision-language
/// model. Implementations must be deterministic for a fixed input when used
/// in tests; failures are reported, never papered over with empty text.
pub trait ModelInterface: Send + Sync {
    /// Produce a pair from the image, given an image→QA prompt.
    fn generate_qa(&self, image: &str, prompt: &str) -> Result<GeneratedQa, ModelError>;

    /// Answer `question` about the image.
    fn answer(&self, image: &str, question: &str) -> Result<String, ModelError>;

    /// Produce the question that `answer` responds to. `prompt` is the full
    /// rendered image+answer→Q prompt; `answer` is passed separately for
    /// models that key on it.
    fn question(&self, image: &str, answer: &str, prompt: &str) -> Result<String, ModelError>;

    fn concurrent(&self) -> bool {
        true
    }
}

/// One row of a [`TableModel`] file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub image: String,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub qa_type: Option<QaType>,
    pub question: String,
    pub answer: String,
    /// What the model says when asked for the question; defaults to `question`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_prime: Option<String>,
    /// What the model says when asked for the answer; defaults to `answer`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_prime: Option<String>,
}

/// Deterministic model backed by a per-image lookup table.
#[derive(Debug, Clone, Default)]
pub struct TableModel {
    entries: HashMap<String, TableEntry>,
}

impl TableModel {
    pub fn new(entries: impl IntoIterator<Item = TableEntry>) -> Result<Self, DataError> {
        let mut map = HashMap::new();
        for (i, e) in entries.into_iter().enumerate() {
            let image = e.image.clone();
            if map.insert(image.clone(), e).is_some() {
                return Err(DataError::DuplicateId { line: i + 1, id: image });
            }
        }
        Ok(Self { entries: map })
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, DataError> {
        let rows: Vec<(usize, TableEntry)> = read_jsonl(reader)?;
        let mut map = HashMap::new();
        for (line, e) in rows {
            let image = e.image.clone();
            if map.insert(image.clone(), e).is_some() {
                return Err(DataError::DuplicateId { line, id: image });
            }
        }
        Ok(Self { entries: map })
    }

    fn entry(&self, image: &str) -> Result<&TableEntry, ModelError> {
        self.entries.get(image).ok_or_else(|| ModelError::UnknownImage(image.to_string()))
    }
}

impl ModelInterface for TableModel {
    fn generate_qa(&self, image: &str, _prompt: &str) -> Result<GeneratedQa, ModelError> {
        let e = self.entry(image)?;
        Ok(GeneratedQa { question: e.question.clone(), answer: e.answer.clone(), qa_type: e.qa_type })
    }

    fn answer(&self, image: &str, _question: &str) -> Result<String, ModelError> {
        let e = self.entry(image)?;
        Ok(e.a_prime.clone().unwrap_or_else(|| e.answer.clone()))
    }

    fn question(&self, image: &str, _answer: &str, _prompt: &str) -> Result<String, ModelError> {
        let e = self.entry(image)?;
        Ok(e.q_prime.clone().unwrap_or_else(|| e.question.clone()))
    }
}

#[derive(Serialize)]
struct ModelRequest<'a> {
    image: &'a str,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct ModelResponse {
    text: String,
}

/// Retry schedule for [`HttpModel`]: `retries` further attempts after the
/// first, waiting `backoff · 2^k` before attempt `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { retries: 3, backoff: Duration::from_millis(200) }
    }
}

/// Client for a model server speaking `POST /generate`, `/answer` and
/// `/question` with `{"image","prompt"}` bodies and `{"text"}` replies.
pub struct HttpModel {
    base: String,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl HttpModel {
    pub fn new(base_url: &str) -> Result<Self, ModelError> {
        Self::with_policy(base_url, RetryPolicy::default(), Duration::from_secs(120))
    }

    pub fn with_policy(base_url: &str, retry: RetryPolicy, timeout: Duration) -> Result<Self, ModelError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ModelError::Unavailable(e.to_string()))?;
        Ok(Self { base: base_url.trim_end_matches('/').to_string(), client, retry })
    }

    fn once(&self, url: &str, image: &str, prompt: &str) -> Result<String, (ModelError, bool)> {
        let response = self
            .client
            .post(url)
            .json(&ModelRequest { image, prompt })
            .send()
            .map_err(|e| (ModelError::Unavailable(e.to_string()), true))?;
        let status = response.status();
        if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            return Err((ModelError::Unavailable(format!("HTTP {status}")), true));
        }
        if !status.is_success() {
            return Err((ModelError::BadResponse(format!("HTTP {status}")), false));
        }
        let body: ModelResponse = response.json().map_err(|e| (ModelError::BadResponse(e.to_string()), false))?;
        Ok(body.text)
    }

    fn call(&self, route: &str, image: &str, prompt: &str) -> Result<String, ModelError> {
        let url = format!("{}/{route}", self.base);
        let mut attempt = 0;
        loop {
            match self.once(&url, image, prompt) {
                Ok(text) => return Ok(text),
                Err((err, retryable)) if retryable && attempt < self.retry.retries => {
                    log::debug!("{route} {image}: {err}; retrying");
                    thread::sleep(self.retry.backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
                Err((err, _)) => return Err(err),
            }
        }
    }
}

impl ModelInterface for HttpModel {
    fn generate_qa(&self, image: &str, prompt: &str) -> Result<GeneratedQa, ModelError> {
        let text = self.call("generate", image, prompt)?;
        let pair = invert_output(&text).map_err(|e| ModelError::BadResponse(e.to_string()))?;
        match (pair.question, pair.answer) {
            (Some(question), Some(answer)) => Ok(GeneratedQa { question, answer, qa_type: None }),
            _ => Err(ModelError::BadResponse(format!("incomplete pair in {text:?}"))),
        }
    }

    fn answer(&self, image: &str, question: &str) -> Result<String, ModelError> {
        self.call("answer", image, question)
    }

    fn question(&self, image: &str, _answer: &str, prompt: &str) -> Result<String, ModelError> {
        let text = self.call("question", image, prompt)?;
        // models trained on the marker format answer "Instruction: …"
        Ok(match invert_output(&text) {
            Ok(p) if p.answer.is_none() => p.question.unwrap_or(text),
            _ => text.trim().to_string(),
        })
    }
}
