//! Generate → reconstruct → score → filter → merge, for one or more rounds.

mod model;

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use model::{GeneratedQa, HttpModel, ModelError, ModelInterface, RetryPolicy, TableEntry, TableModel};

use crate::consistency::{filter_exact, filter_top, reconstruction_prompts, score_all, ConsistencyError, Partition, Reconstruction, ScoredTriplet};
use crate::data::{parse_bbox, QaType, Triplet};
use crate::similarity::{tokenize, TextBackend, LONG_TEXT_TOKENS};
use crate::templates::TemplateSet;

/// Default bound on concurrent model requests.
pub const DEFAULT_IN_FLIGHT: usize = 8;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("invalid loop configuration: {0}")]
    Config(String),
    #[error("seed dataset: {0}")]
    SeedDataset(String),
    #[error("duplicate id {0:?} while merging")]
    DuplicateId(String),
    #[error(transparent)]
    Consistency(#[from] ConsistencyError),
    #[error("cannot start model workers: {0}")]
    Workers(String),
    #[error("{0}")]
    Sink(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub rounds: usize,
    pub filter_fraction: f64,
    pub per_type: bool,
    /// Keep only exact reconstructions instead of the top fraction.
    pub exact: bool,
    pub seed: u64,
    /// Concurrent model requests; scoring uses the same count.
    pub workers: usize,
    pub unlabeled_manifest: PathBuf,
    pub seed_dataset: PathBuf,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            rounds: 1,
            filter_fraction: 0.2,
            per_type: true,
            exact: false,
            seed: 42,
            workers: DEFAULT_IN_FLIGHT,
            unlabeled_manifest: PathBuf::new(),
            seed_dataset: PathBuf::new(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        if self.rounds == 0 {
            return Err(RefineError::Config("rounds must be at least 1".into()));
        }
        if !(self.filter_fraction > 0.0 && self.filter_fraction <= 1.0) {
            return Err(RefineError::Config(format!("filter fraction {} is outside (0, 1]", self.filter_fraction)));
        }
        if self.workers == 0 {
            return Err(RefineError::Config("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// Read an unlabeled-image manifest: one image per line, `#` comments and
/// blank lines ignored, `---` lines separating per-round sections.
pub fn read_manifest<R: BufRead>(reader: R) -> std::io::Result<Vec<Vec<String>>> {
    let mut sections = vec![Vec::new()];
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if line == "---" {
            sections.push(Vec::new());
        } else if !line.is_empty() && !line.starts_with('#') {
            sections.last_mut().expect("never empty").push(line.to_string());
        }
    }
    Ok(sections)
}

/// One image list per round. A single section is cut into `rounds`
/// contiguous chunks, the first ones one image larger when sizes differ.
pub fn partition_manifest(sections: Vec<Vec<String>>, rounds: usize) -> Result<Vec<Vec<String>>, RefineError> {
    if rounds == 0 {
        return Err(RefineError::Config("rounds must be at least 1".into()));
    }
    if sections.len() == rounds {
        return Ok(sections);
    }
    if sections.len() != 1 {
        return Err(RefineError::Config(format!("manifest has {} sections for {rounds} rounds", sections.len())));
    }
    let all = sections.into_iter().next().expect("one section");
    let (base, extra) = (all.len() / rounds, all.len() % rounds);
    let mut it = all.into_iter();
    Ok((0..rounds).map(|k| it.by_ref().take(base + usize::from(k < extra)).collect()).collect())
}

/// Best-effort category for a pair whose generator declared none.
pub fn classify(question: &str, answer: &str, templates: &TemplateSet) -> QaType {
    if parse_bbox(question).is_ok() != parse_bbox(answer).is_ok() {
        return QaType::Region;
    }
    let a = answer.trim().trim_end_matches('.').to_lowercase();
    let single_letter = a.len() == 1 && a.chars().all(|c| c.is_ascii_alphabetic());
    if single_letter || matches!(a.as_str(), "yes" | "no" | "true" | "false") {
        return QaType::Choice;
    }
    let caption_span = templates
        .fixed_span
        .iter()
        .any(|s| s.types == [QaType::Caption] && question.contains(s.text.as_str()));
    if caption_span {
        return QaType::Caption;
    }
    if tokenize(answer).len() > LONG_TEXT_TOKENS {
        return QaType::VisualChat;
    }
    QaType::Vqa
}

fn model_pool(workers: usize, model: &dyn ModelInterface) -> Result<rayon::ThreadPool, RefineError> {
    let n = if model.concurrent() { workers.max(1) } else { 1 };
    rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| RefineError::Workers(e.to_string()))
}

pub fn synthetic_id(round: usize, index: usize) -> String {
    format!("syn-r{round}-{index:06}")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Generation {
    pub triplets: Vec<Triplet>,
    /// Images the model failed on, with the reason.
    pub failures: Vec<(String, String)>,
    /// Ids whose category came from [`classify`].
    pub heuristic_ids: Vec<String>,
}

/// One triplet per image, in manifest order. Ids are `syn-r{round}-{index}`
/// where `index` is the image's manifest position.
pub fn generate_synthetic(
    model: &dyn ModelInterface,
    images: &[String],
    templates: &TemplateSet,
    seed: u64,
    round: usize,
    workers: usize,
) -> Result<Generation, RefineError> {
    let pool = model_pool(workers, model)?;
    let results: Vec<Result<GeneratedQa, ModelError>> = pool.install(|| {
        images
            .par_iter()
            .enumerate()
            .map(|(i, image)| model.generate_qa(image, templates.pick_generate_pair(&synthetic_id(round, i), seed)))
            .collect()
    });
    let mut out = Generation::default();
    for (i, (image, result)) in images.iter().zip(results).enumerate() {
        let qa = match result {
            Ok(qa) => qa,
            Err(e) => {
                log::warn!("generation failed for {image}: {e}");
                out.failures.push((image.clone(), e.to_string()));
                continue;
            }
        };
        let id = synthetic_id(round, i);
        let qa_type = qa.qa_type.unwrap_or_else(|| {
            out.heuristic_ids.push(id.clone());
            classify(&qa.question, &qa.answer, templates)
        });
        let t = Triplet::new(id, image, qa_type, qa.question.trim(), qa.answer.trim());
        if let Err(reason) = t.validate() {
            log::warn!("generation for {image} unusable: {reason}");
            out.heuristic_ids.retain(|h| h != &t.id);
            out.failures.push((image.clone(), reason));
            continue;
        }
        out.triplets.push(t);
    }
    Ok(out)
}

/// A reconstruction plus which sides the model failed to produce. Failed
/// sides hold empty text, which scores 0 against any non-empty original.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconOutcome {
    pub reconstruction: Reconstruction,
    pub question_failed: bool,
    pub answer_failed: bool,
}

impl ReconOutcome {
    pub fn failed(&self) -> bool {
        self.question_failed && self.answer_failed
    }
}

pub fn reconstruct(
    model: &dyn ModelInterface,
    triplets: &[Triplet],
    templates: &TemplateSet,
    seed: u64,
    workers: usize,
) -> Result<Vec<ReconOutcome>, RefineError> {
    let pool = model_pool(workers, model)?;
    Ok(pool.install(|| {
        triplets
            .par_iter()
            .map(|t| {
                let (a_prompt, q_prompt) = reconstruction_prompts(t, templates, seed);
                let a = model.answer(&t.image_ref, &a_prompt);
                let q = model.question(&t.image_ref, &t.answer, &q_prompt);
                for e in [a.as_ref().err(), q.as_ref().err()].into_iter().flatten() {
                    log::warn!("reconstruction failed for {}: {e}", t.id);
                }
                ReconOutcome {
                    question_failed: q.is_err(),
                    answer_failed: a.is_err(),
                    reconstruction: Reconstruction {
                        triplet_id: t.id.clone(),
                        q_prime: q.unwrap_or_default(),
                        a_prime: a.unwrap_or_default(),
                    },
                }
            })
            .collect()
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: usize,
    pub images: usize,
    pub generated: usize,
    pub generation_failures: usize,
    pub heuristic_types: usize,
    /// Records with neither side reconstructed; never eligible for retention.
    pub reconstruction_failures: usize,
    pub scored: usize,
    pub retained: usize,
    pub retained_per_type: BTreeMap<QaType, usize>,
    pub score_min: Option<f64>,
    pub score_median: Option<f64>,
    pub score_max: Option<f64>,
    pub merged: usize,
}

#[derive(Debug, Clone)]
pub struct RoundOutput {
    pub generation: Generation,
    /// Scored records in generation order.
    pub scored: Vec<ScoredTriplet>,
    /// Indices into `scored`, canonically ordered.
    pub partition: Partition,
    pub filtered: Vec<Triplet>,
    pub merged: Vec<Triplet>,
    pub report: RoundReport,
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

/// Seed records first, then the retained synthetic ones in canonical order.
pub fn merge(seed_set: &[Triplet], filtered: &[Triplet]) -> Result<Vec<Triplet>, RefineError> {
    let mut ids = HashSet::new();
    let mut merged = Vec::with_capacity(seed_set.len() + filtered.len());
    for t in seed_set.iter().chain(filtered) {
        if !ids.insert(t.id.as_str()) {
            return Err(RefineError::DuplicateId(t.id.clone()));
        }
        merged.push(t.clone());
    }
    Ok(merged)
}

/// Curation steps shared by every round, fixed for the whole run.
pub struct Curator<'a> {
    pub backend: &'a TextBackend,
    pub templates: &'a TemplateSet,
    pub config: &'a LoopConfig,
}

impl Curator<'_> {
    pub fn run_round(
        &self,
        model: &dyn ModelInterface,
        seed_set: &[Triplet],
        images: &[String],
        round: usize,
    ) -> Result<RoundOutput, RefineError> {
        let cfg = self.config;
        cfg.validate()?;
        let mut seen = HashSet::new();
        for t in seed_set {
            t.validate().map_err(|r| RefineError::SeedDataset(format!("{}: {r}", t.id)))?;
            if !seen.insert(&t.id) {
                return Err(RefineError::SeedDataset(format!("duplicate id {:?}", t.id)));
            }
        }

        let generation = generate_synthetic(model, images, self.templates, cfg.seed, round, cfg.workers)?;
        let outcomes = reconstruct(model, &generation.triplets, self.templates, cfg.seed, cfg.workers)?;
        let pairs: Vec<(Triplet, Reconstruction)> = generation
            .triplets
            .iter()
            .zip(&outcomes)
            .filter(|(_, o)| !o.failed())
            .map(|(t, o)| (t.clone(), o.reconstruction.clone()))
            .collect();
        let failures = outcomes.len() - pairs.len();

        let scored = score_all(&pairs, self.backend, self.templates, cfg.workers)?;
        let partition = if cfg.exact {
            filter_exact(&scored, self.templates)
        } else {
            filter_top(&scored, cfg.filter_fraction, cfg.per_type)?
        };
        let filtered: Vec<Triplet> = partition.retained.iter().map(|&i| scored[i].triplet.clone()).collect();
        let merged = merge(seed_set, &filtered)?;

        let mut scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
        scores.sort_by(f64::total_cmp);
        let mut retained_per_type = BTreeMap::new();
        for t in &filtered {
            *retained_per_type.entry(t.qa_type).or_insert(0) += 1;
        }
        let report = RoundReport {
            round,
            images: images.len(),
            generated: generation.triplets.len(),
            generation_failures: generation.failures.len(),
            heuristic_types: generation.heuristic_ids.len(),
            reconstruction_failures: failures,
            scored: scored.len(),
            retained: filtered.len(),
            retained_per_type,
            score_min: scores.first().copied(),
            score_median: median(&scores),
            score_max: scores.last().copied(),
            merged: merged.len(),
        };
        Ok(RoundOutput { generation, scored, partition, filtered, merged, report })
    }

    /// Run `partitions.len()` rounds. Round `k` asks `factory(k)` for its
    /// model, generates from `partitions[k-1]` and uses the previous round's
    /// merged set as its seed set. `sink` sees every round's output before
    /// the next round starts.
    pub fn iterate<F, S>(
        &self,
        mut factory: F,
        seed_set: Vec<Triplet>,
        partitions: &[Vec<String>],
        mut sink: S,
    ) -> Result<Vec<RoundReport>, RefineError>
    where
        F: FnMut(usize) -> Result<Box<dyn ModelInterface>, RefineError>,
        S: FnMut(&RoundOutput) -> Result<(), RefineError>,
    {
        if partitions.len() != self.config.rounds {
            return Err(RefineError::Config(format!(
                "{} image partitions for {} rounds",
                partitions.len(),
                self.config.rounds
            )));
        }
        let mut current = seed_set;
        let mut reports = Vec::with_capacity(partitions.len());
        for (k, images) in partitions.iter().enumerate() {
            let round = k + 1;
            let model = factory(round)?;
            let out = self.run_round(model.as_ref(), &current, images, round)?;
            log::info!("round {round}: {} generated, {} retained", out.report.generated, out.report.retained);
            sink(&out)?;
            reports.push(out.report.clone());
            current = out.merged;
        }
        Ok(reports)
    }
}
