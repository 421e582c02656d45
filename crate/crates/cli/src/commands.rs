use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;
use tricon_core::consistency::{filter_exact, filter_top, score_all, ConsistencyError, Reconstruction, ScoredRecord};
use tricon_core::data::{read_jsonl, read_triplets, write_jsonl, write_triplets, DataError};
use tricon_core::metrics::{DiversityReport, MetricsError};
use tricon_core::refine::{
    partition_manifest, read_manifest, reconstruct, Curator, HttpModel, LoopConfig, ModelInterface, RefineError, RoundOutput,
    TableModel,
};
use tricon_core::similarity::{HttpEmbeddingProvider, SimilarityError};
use tricon_core::taskgen::{build_corpus, read_seed};
use tricon_core::templates::TemplateError;
use tricon_core::{TemplateSet, TextBackend, Triplet};
use tricon_synth::{self_refine, SynthConfig, SynthError};

use crate::{Backend, Cli, Command, ModelArgs, Scope, SynthArgs, SynthCommand};

const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Io(_) => 1,
        }
    }
}

fn in_file(path: &Path) -> impl FnOnce(DataError) -> CliError + '_ {
    move |e| match e {
        DataError::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
        other => CliError::Invalid(format!("{}: {other}", path.display())),
    }
}

impl From<SimilarityError> for CliError {
    fn from(e: SimilarityError) -> Self {
        match e {
            SimilarityError::ProviderUnavailable(_) => CliError::Io(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<ConsistencyError> for CliError {
    fn from(e: ConsistencyError) -> Self {
        match e {
            ConsistencyError::Similarity(s) => s.into(),
            ConsistencyError::Workers(w) => CliError::Io(w),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<RefineError> for CliError {
    fn from(e: RefineError) -> Self {
        match e {
            RefineError::Consistency(c) => c.into(),
            RefineError::Workers(w) | RefineError::Sink(w) => CliError::Io(w),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn finish(mut w: impl Write, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_records<T: serde::Serialize>(records: &[T], path: &Path) -> Result<(), CliError> {
    let mut w = create(path)?;
    write_jsonl(records, &mut w).map_err(in_file(path))?;
    finish(w, path)
}

fn write_triplet_file(records: &[Triplet], path: &Path) -> Result<(), CliError> {
    let mut w = create(path)?;
    write_triplets(records, &mut w).map_err(in_file(path))?;
    finish(w, path)
}

fn write_json_line<T: serde::Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    let line = serde_json::to_string(value).map_err(|e| CliError::Invalid(e.to_string()))?;
    writeln!(out, "{line}").map_err(|e| CliError::Io(e.to_string()))
}

struct Context {
    seed: u64,
    workers: usize,
    backend: TextBackend,
    templates: TemplateSet,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self, CliError> {
        let templates = match &cli.templates {
            Some(path) => TemplateSet::load(path).map_err(|e| match e {
                TemplateError::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
                other => CliError::Invalid(format!("{}: {other}", path.display())),
            })?,
            None => TemplateSet::bundled().clone(),
        };
        let backend = match cli.text_backend {
            Backend::Lexical => TextBackend::Lexical,
            Backend::Service => {
                let url = cli.service_url.as_deref().ok_or_else(|| {
                    CliError::Invalid("--text-backend service needs --service-url or TRICON_EMBED_URL".into())
                })?;
                TextBackend::Embedding(Arc::new(HttpEmbeddingProvider::new(url)?))
            }
        };
        Ok(Self { seed: cli.seed.unwrap_or(DEFAULT_SEED), workers: cli.workers as usize, backend, templates })
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Command::Synth { command: SynthCommand::Run(args) } = &cli.command {
        return synth_run(args, cli.seed);
    }
    let ctx = Context::new(cli)?;
    match &cli.command {
        Command::Transform { input, output, ratios } => {
            let seeds = read_seed(open(input)?).map_err(in_file(input))?;
            let records = build_corpus(&seeds, *ratios, &ctx.templates, ctx.seed);
            write_records(&records, output)?;
            log::info!("transform: {} records", records.len());
            Ok(())
        }
        Command::Score { input, output, model } => score(&ctx, input, output, model),
        Command::Filter { input, output, top, scope, exact, excluded } => {
            filter(&ctx, input, output, *top, scope, *exact, excluded.as_deref())
        }
        Command::Stats { input, field, output } => {
            let triplets = read_triplets(open(input)?).map_err(in_file(input))?;
            let report = DiversityReport::compute(&triplets, *field)?;
            match output {
                Some(path) => {
                    let mut w = create(path)?;
                    write_json_line(&mut w, &report)?;
                    finish(w, path)
                }
                None => write_json_line(&mut std::io::stdout().lock(), &report),
            }
        }
        Command::Loop { seed_dataset, manifest, rounds, top, scope, exact, ratios, out_dir, model } => {
            let config = LoopConfig {
                rounds: *rounds,
                filter_fraction: *top,
                per_type: !scope.global,
                exact: *exact,
                seed: ctx.seed,
                workers: ctx.workers,
                unlabeled_manifest: manifest.clone(),
                seed_dataset: seed_dataset.clone(),
            };
            run_loop(&ctx, &config, *ratios, out_dir, model)
        }
        Command::Synth { .. } => unreachable!("handled above"),
    }
}

fn load_model(model: &ModelArgs, round: usize) -> Result<Option<Box<dyn ModelInterface>>, CliError> {
    if let Some(url) = &model.model_url {
        let url = url.replace("{round}", &round.to_string());
        let m = HttpModel::new(&url).map_err(|e| CliError::Io(e.to_string()))?;
        return Ok(Some(Box::new(m)));
    }
    if model.model_table.is_empty() {
        return Ok(None);
    }
    let path = &model.model_table[(round - 1).min(model.model_table.len() - 1)];
    let table = TableModel::from_reader(open(path)?).map_err(in_file(path))?;
    Ok(Some(Box::new(table)))
}

fn score(ctx: &Context, input: &Path, output: &Path, model: &ModelArgs) -> Result<(), CliError> {
    let pairs: Vec<(Triplet, Reconstruction)> = match load_model(model, 1)? {
        Some(m) => {
            let triplets = read_triplets(open(input)?).map_err(in_file(input))?;
            let outcomes = reconstruct(m.as_ref(), &triplets, &ctx.templates, ctx.seed, ctx.workers)?;
            triplets.into_iter().zip(outcomes).map(|(t, o)| (t, o.reconstruction)).collect()
        }
        None => {
            let rows: Vec<(usize, ScoredRecord)> = read_jsonl(open(input)?).map_err(in_file(input))?;
            let mut seen = std::collections::HashSet::new();
            let mut pairs = Vec::with_capacity(rows.len());
            for (line, r) in rows {
                let t = r.triplet();
                t.validate()
                    .map_err(|reason| CliError::Invalid(format!("{}: line {line}: {reason}", input.display())))?;
                if !seen.insert(t.id.clone()) {
                    return Err(CliError::Invalid(format!("{}: line {line}: duplicate id {:?}", input.display(), t.id)));
                }
                pairs.push((t, r.reconstruction()));
            }
            pairs
        }
    };
    let scored = score_all(&pairs, &ctx.backend, &ctx.templates, ctx.workers)?;
    let records: Vec<ScoredRecord> = scored.iter().map(ScoredRecord::from).collect();
    write_records(&records, output)?;
    log::info!("score: {} records", records.len());
    Ok(())
}

fn filter(
    ctx: &Context,
    input: &Path,
    output: &Path,
    top: f64,
    scope: &Scope,
    exact: bool,
    excluded: Option<&Path>,
) -> Result<(), CliError> {
    let rows: Vec<(usize, ScoredRecord)> = read_jsonl(open(input)?).map_err(in_file(input))?;
    let mut scored = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        let score = match r.score {
            Some(s) if s.is_finite() => s,
            _ if exact => 0.0,
            _ => return Err(CliError::Invalid(format!("{}: line {line}: missing score", input.display()))),
        };
        scored.push(tricon_core::ScoredTriplet {
            triplet: r.triplet(),
            reconstruction: r.reconstruction(),
            sim_q: r.sim_q,
            sim_a: r.sim_a,
            score,
            box_parse_failed: false,
        });
    }
    let partition = if exact {
        filter_exact(&scored, &ctx.templates)
    } else {
        filter_top(&scored, top, !scope.global)?
    };
    let pick = |idx: &[usize]| idx.iter().map(|&i| ScoredRecord::from(&scored[i])).collect::<Vec<_>>();
    write_records(&pick(&partition.retained), output)?;
    if let Some(path) = excluded {
        write_records(&pick(&partition.excluded), path)?;
    }
    log::info!("filter: kept {} of {}", partition.retained.len(), scored.len());
    Ok(())
}

fn run_loop(
    ctx: &Context,
    config: &LoopConfig,
    ratios: tricon_core::taskgen::MaskRatios,
    out_dir: &Path,
    model: &ModelArgs,
) -> Result<(), CliError> {
    config.validate()?;
    if model.model_url.is_none() && model.model_table.is_empty() {
        return Err(CliError::Invalid("loop needs --model-table or --model-url".into()));
    }
    let seeds = read_seed(open(&config.seed_dataset)?).map_err(in_file(&config.seed_dataset))?;
    let sections = read_manifest(open(&config.unlabeled_manifest)?)
        .map_err(|e| CliError::Io(format!("{}: {e}", config.unlabeled_manifest.display())))?;
    let partitions = partition_manifest(sections, config.rounds)?;
    // load every model up front so bad paths fail before any output is written
    let mut models = Vec::with_capacity(config.rounds);
    for round in 1..=config.rounds {
        models.push(load_model(model, round)?.expect("model source checked above"));
    }
    let mut models = models.into_iter();

    let curator = Curator { backend: &ctx.backend, templates: &ctx.templates, config };
    let mut stdout = std::io::stdout().lock();
    let mut sink = |out: &RoundOutput| -> Result<(), RefineError> {
        write_round(ctx, ratios, out_dir, out, &mut stdout).map_err(|e| RefineError::Sink(e.to_string()))
    };
    curator.iterate(|_| Ok(models.next().expect("one model per round")), seeds, &partitions, &mut sink)?;
    Ok(())
}

fn write_round(
    ctx: &Context,
    ratios: tricon_core::taskgen::MaskRatios,
    out_dir: &Path,
    out: &RoundOutput,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let dir: PathBuf = out_dir.join(format!("round-{}", out.report.round));
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let scored: Vec<ScoredRecord> = out.scored.iter().map(ScoredRecord::from).collect();
    write_records(&scored, &dir.join("scored.jsonl"))?;
    write_triplet_file(&out.filtered, &dir.join("filtered.jsonl"))?;
    write_triplet_file(&out.merged, &dir.join("merged.jsonl"))?;
    let tasks = build_corpus(&out.merged, ratios, &ctx.templates, ctx.seed);
    write_records(&tasks, &dir.join("tasks.jsonl"))?;
    let report_path = dir.join("report.json");
    let mut w = create(&report_path)?;
    write_json_line(&mut w, &out.report)?;
    finish(w, &report_path)?;
    write_json_line(stdout, &out.report)
}

fn synth_run(args: &SynthArgs, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let parsed = if path.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).map_err(|e| e.to_string())
            } else {
                toml::from_str(&text).map_err(|e| e.to_string())
            };
            parsed.map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?
        }
        None => SynthConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = args.$field.clone() {
                cfg.$field = v;
            }
        )*};
    }
    set!(d, n_lab, n_unl, n_test, x_scale, noise_scale, hidden, lr, batch, epochs, keep_frac, rounds);
    if let Some(r) = args.nll_reduction {
        cfg.nll_reduction = r.into();
    }
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    cfg.relabel |= args.relabel;
    cfg.warm_start |= args.warm_start;
    cfg.validate()?;

    let rows = self_refine(&cfg)?;
    let mut sink: Box<dyn Write> = match &args.output {
        Some(path) => Box::new(create(path)?),
        None => Box::new(std::io::stdout().lock()),
    };
    for (round, m) in rows.iter().enumerate() {
        write_json_line(&mut sink, &serde_json::json!({"round": round, "nll": m.nll, "mse": m.mse, "r2": m.r2}))?;
    }
    sink.flush().map_err(|e| CliError::Io(e.to_string()))
}
