//! Triangular consistency scoring and top-fraction filtering.
//!
//! A synthetic triplet is reconstructed twice by the model that produced it:
//! the answer from the image and question (`A′`), and the question from the
//! image and answer (`Q′`). Each side is compared with a measure chosen by
//! the triplet's category and the two similarities are combined by their
//! geometric mean. Categories that compare only answers score that single
//! component.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{parse_bbox, BoundingBox, QaType, Side, Triplet};
use crate::similarity::{exact_match, iou, Similarity, SimilarityError, TextBackend};
use crate::templates::TemplateSet;
use crate::util::ceil_count;

#[derive(Debug, Error)]
pub enum ConsistencyError {
    #[error("no similarity component to score")]
    NoComponents,
    #[error("filter fraction {0} is outside (0, 1]")]
    InvalidFraction(f64),
    #[error("reconstruction for {got:?} paired with triplet {expected:?}")]
    Mismatched { expected: String, got: String },
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error("cannot start scoring workers: {0}")]
    Workers(String),
}

/// The model's re-predictions of a triplet's masked sides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub triplet_id: String,
    /// Question predicted from image and answer.
    pub q_prime: String,
    /// Answer predicted from image and question.
    pub a_prime: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Components {
    pub sim_q: Option<Similarity>,
    pub sim_a: Option<Similarity>,
    /// A region reconstruction lacked a parseable box; that side scored 0.
    pub box_parse_failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTriplet {
    pub triplet: Triplet,
    pub reconstruction: Reconstruction,
    pub sim_q: Option<f64>,
    pub sim_a: Option<f64>,
    pub score: f64,
    pub box_parse_failed: bool,
}

/// Flat JSONL form of a [`ScoredTriplet`]: the triplet's fields followed by
/// the reconstruction and scores. Absent components serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub id: String,
    pub image: String,
    #[serde(rename = "type")]
    pub qa_type: QaType,
    pub question: String,
    pub answer: String,
    pub q_prime: String,
    pub a_prime: String,
    #[serde(default)]
    pub sim_q: Option<f64>,
    #[serde(default)]
    pub sim_a: Option<f64>,
    #[serde(default)]
    pub score: Option<f64>,
}

impl ScoredRecord {
    pub fn triplet(&self) -> Triplet {
        Triplet::new(&self.id, &self.image, self.qa_type, &self.question, &self.answer)
    }

    pub fn reconstruction(&self) -> Reconstruction {
        Reconstruction { triplet_id: self.id.clone(), q_prime: self.q_prime.clone(), a_prime: self.a_prime.clone() }
    }
}

impl From<&ScoredTriplet> for ScoredRecord {
    fn from(s: &ScoredTriplet) -> Self {
        let t = &s.triplet;
        ScoredRecord {
            id: t.id.clone(),
            image: t.image_ref.clone(),
            qa_type: t.qa_type,
            question: t.question.clone(),
            answer: t.answer.clone(),
            q_prime: s.reconstruction.q_prime.clone(),
            a_prime: s.reconstruction.a_prime.clone(),
            sim_q: s.sim_q,
            sim_a: s.sim_a,
            score: Some(s.score),
        }
    }
}

/// Prompts that ask the model for `A′` and `Q′`.
///
/// The answer prompt is the question verbatim. The question prompt is an
/// image+answer→question template, picked deterministically from the
/// triplet id and seed, followed by `Answer: {A}`.
pub fn reconstruction_prompts(t: &Triplet, templates: &TemplateSet, seed: u64) -> (String, String) {
    let template = templates.pick_question_from_answer(&t.id, seed);
    (t.question.clone(), format!("{template} Answer: {}", t.answer))
}

fn box_similarity(original: &str, reconstructed: &str) -> (Similarity, bool) {
    match (parse_bbox(original), parse_bbox(reconstructed)) {
        (Ok(a), Ok(b)) => (iou(&a, &b), false),
        _ => (Similarity::ZERO, true),
    }
}

fn box_side(question: &str) -> Side {
    match parse_bbox(question) {
        Ok(BoundingBox { .. }) => Side::Question,
        Err(_) => Side::Answer,
    }
}

/// Per-category dispatch of the question and answer similarities. All text
/// passes through template stripping first.
pub fn component_similarities(
    t: &Triplet,
    r: &Reconstruction,
    backend: &TextBackend,
    templates: &TemplateSet,
) -> Result<Components, SimilarityError> {
    let kind = t.qa_type;
    let q = templates.strip(&t.question, kind, Side::Question);
    let q2 = templates.strip(&r.q_prime, kind, Side::Question);
    let a = templates.strip(&t.answer, kind, Side::Answer);
    let a2 = templates.strip(&r.a_prime, kind, Side::Answer);

    let mut box_parse_failed = false;
    let (sim_q, sim_a) = match kind {
        QaType::Vqa => (Some(backend.short(&q, &q2)?), Some(backend.short(&a, &a2)?)),
        QaType::VisualChat => (Some(backend.short(&q, &q2)?), Some(backend.long(&a, &a2)?)),
        QaType::Region => match box_side(&q) {
            Side::Question => {
                let (sq, failed) = box_similarity(&q, &q2);
                box_parse_failed = failed;
                (Some(sq), Some(backend.short(&a, &a2)?))
            }
            Side::Answer => {
                let (sa, failed) = box_similarity(&a, &a2);
                box_parse_failed = failed;
                (Some(backend.short(&q, &q2)?), Some(sa))
            }
        },
        QaType::Caption => (None, Some(backend.long(&a, &a2)?)),
        QaType::Choice => (None, Some(exact_match(&a, &a2))),
    };
    Ok(Components { sim_q, sim_a, box_parse_failed })
}

/// Geometric mean of the available components.
pub fn consistency_score(sim_q: Option<f64>, sim_a: Option<f64>) -> Result<f64, ConsistencyError> {
    match (sim_q, sim_a) {
        (Some(q), Some(a)) => Ok((q * a).sqrt()),
        (Some(only), None) | (None, Some(only)) => Ok(only),
        (None, None) => Err(ConsistencyError::NoComponents),
    }
}

pub fn score_triplet(
    t: &Triplet,
    r: &Reconstruction,
    backend: &TextBackend,
    templates: &TemplateSet,
) -> Result<ScoredTriplet, ConsistencyError> {
    if t.id != r.triplet_id {
        return Err(ConsistencyError::Mismatched { expected: t.id.clone(), got: r.triplet_id.clone() });
    }
    let c = component_similarities(t, r, backend, templates)?;
    let sim_q = c.sim_q.map(Similarity::value);
    let sim_a = c.sim_a.map(Similarity::value);
    let score = consistency_score(sim_q, sim_a)?;
    if c.box_parse_failed {
        log::warn!("{}: reconstruction has no parseable box", t.id);
    }
    Ok(ScoredTriplet {
        triplet: t.clone(),
        reconstruction: r.clone(),
        sim_q,
        sim_a,
        score,
        box_parse_failed: c.box_parse_failed,
    })
}

/// Score every pair on `workers` threads. Output follows input order
/// regardless of worker count.
pub fn score_all(
    pairs: &[(Triplet, Reconstruction)],
    backend: &TextBackend,
    templates: &TemplateSet,
    workers: usize,
) -> Result<Vec<ScoredTriplet>, ConsistencyError> {
    let workers = if backend.concurrent() { workers.max(1) } else { 1 };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ConsistencyError::Workers(e.to_string()))?;
    pool.install(|| {
        pairs
            .par_iter()
            .map(|(t, r)| score_triplet(t, r, backend, templates))
            .collect()
    })
}

/// Indices into the scored input, each list in canonical order: category,
/// then descending score, then input position.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Partition {
    pub retained: Vec<usize>,
    pub excluded: Vec<usize>,
}

fn by_score_then_position(keys: &[(QaType, f64)]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&i, &j| keys[j].1.total_cmp(&keys[i].1).then(i.cmp(&j))
}

fn canonical(keys: &[(QaType, f64)], indices: &mut [usize]) {
    let rank = by_score_then_position(keys);
    indices.sort_by(|i, j| keys[*i].0.cmp(&keys[*j].0).then_with(|| rank(i, j)));
}

/// Keep the `⌈p·n⌉` best-scoring records of each category (or of the whole
/// set when `per_type` is false). Ties go to the earlier input position.
pub fn filter_top_keys(keys: &[(QaType, f64)], fraction: f64, per_type: bool) -> Result<Partition, ConsistencyError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ConsistencyError::InvalidFraction(fraction));
    }
    let pools: Vec<Vec<usize>> = if per_type {
        QaType::ALL
            .iter()
            .map(|t| (0..keys.len()).filter(|&i| keys[i].0 == *t).collect())
            .collect()
    } else {
        vec![(0..keys.len()).collect()]
    };

    let mut keep = vec![false; keys.len()];
    for mut pool in pools {
        let quota = ceil_count(fraction, pool.len());
        pool.sort_by(by_score_then_position(keys));
        for &i in &pool[..quota] {
            keep[i] = true;
        }
    }
    let (mut retained, mut excluded): (Vec<usize>, Vec<usize>) = (0..keys.len()).partition(|&i| keep[i]);
    canonical(keys, &mut retained);
    canonical(keys, &mut excluded);
    Ok(Partition { retained, excluded })
}

pub fn filter_top(scored: &[ScoredTriplet], fraction: f64, per_type: bool) -> Result<Partition, ConsistencyError> {
    let keys: Vec<(QaType, f64)> = scored.iter().map(|s| (s.triplet.qa_type, s.score)).collect();
    filter_top_keys(&keys, fraction, per_type)
}

/// Keep only records whose reconstructions reproduce both the question and
/// the answer after template stripping and answer normalization.
pub fn filter_exact(scored: &[ScoredTriplet], templates: &TemplateSet) -> Partition {
    let keys: Vec<(QaType, f64)> = scored.iter().map(|s| (s.triplet.qa_type, s.score)).collect();
    let (mut retained, mut excluded): (Vec<usize>, Vec<usize>) = (0..scored.len()).partition(|&i| {
        let s = &scored[i];
        let kind = s.triplet.qa_type;
        let same = |orig: &str, recon: &str, side| {
            exact_match(&templates.strip(orig, kind, side), &templates.strip(recon, kind, side)) == Similarity::ONE
        };
        same(&s.triplet.question, &s.reconstruction.q_prime, Side::Question)
            && same(&s.triplet.answer, &s.reconstruction.a_prime, Side::Answer)
    });
    canonical(&keys, &mut retained);
    canonical(&keys, &mut excluded);
    Partition { retained, excluded }
}
