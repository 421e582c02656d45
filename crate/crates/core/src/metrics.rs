//! Corpus diagnostics: lexical diversity and category mix.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::data::{QaType, Triplet};
use crate::similarity::tokenize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("corpus has no tokens")]
    EmptyCorpus,
    #[error("no text has at least {0} tokens")]
    NoNgrams(usize),
}

/// Unique tokens over total tokens, across the whole corpus.
pub fn ttr<S: AsRef<str>>(texts: &[S]) -> Result<f64, MetricsError> {
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for text in texts {
        for tok in tokenize(text.as_ref()) {
            total += 1;
            seen.insert(tok);
        }
    }
    if total == 0 {
        return Err(MetricsError::EmptyCorpus);
    }
    Ok(seen.len() as f64 / total as f64)
}

/// Unique n-grams over total n-grams. N-grams never span two texts.
pub fn distinct_n<S: AsRef<str>>(texts: &[S], n: usize) -> Result<f64, MetricsError> {
    assert!(n > 0, "n-gram order must be positive");
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut total = 0usize;
    for text in texts {
        let toks = tokenize(text.as_ref());
        for gram in toks.windows(n) {
            total += 1;
            seen.insert(gram.to_vec());
        }
    }
    if total == 0 {
        return Err(MetricsError::NoNgrams(n));
    }
    Ok(seen.len() as f64 / total as f64)
}

pub fn type_histogram(triplets: &[Triplet]) -> BTreeMap<QaType, usize> {
    let mut h = BTreeMap::new();
    for t in triplets {
        *h.entry(t.qa_type).or_insert(0) += 1;
    }
    h
}

pub fn type_distribution(triplets: &[Triplet]) -> Result<BTreeMap<QaType, f64>, MetricsError> {
    if triplets.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let n = triplets.len() as f64;
    Ok(type_histogram(triplets).into_iter().map(|(k, c)| (k, c as f64 / n)).collect())
}

/// Which triplet text feeds the diversity measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Field {
    Question,
    Answer,
    #[default]
    Both,
}

impl FromStr for Field {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "question" => Ok(Field::Question),
            "answer" => Ok(Field::Answer),
            "both" => Ok(Field::Both),
            other => Err(format!("unknown field {other:?} (expected question, answer or both)")),
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::Question => "question",
            Field::Answer => "answer",
            Field::Both => "both",
        })
    }
}

pub fn field_texts(triplets: &[Triplet], field: Field) -> Vec<&str> {
    let mut out = Vec::new();
    for t in triplets {
        if field != Field::Answer {
            out.push(t.question.as_str());
        }
        if field != Field::Question {
            out.push(t.answer.as_str());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversityReport {
    pub ttr: f64,
    pub distinct_2: f64,
    pub token_count: usize,
    pub type_histogram: BTreeMap<QaType, usize>,
}

impl DiversityReport {
    pub fn compute(triplets: &[Triplet], field: Field) -> Result<Self, MetricsError> {
        let texts = field_texts(triplets, field);
        Ok(DiversityReport {
            ttr: ttr(&texts)?,
            distinct_2: distinct_n(&texts, 2)?,
            token_count: texts.iter().map(|t| tokenize(t).len()).sum(),
            type_histogram: type_histogram(triplets),
        })
    }
}
