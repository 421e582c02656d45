//! `tricon`: curation pipeline and synthetic self-training lab.
//!
//! Exit codes: 0 on success, 1 on I/O or service failures, 2 on invalid
//! input or flags. Diagnostics go to stderr only.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tricon_core::metrics::Field;
use tricon_core::taskgen::MaskRatios;
use tricon_synth::NllReduction;

#[derive(Parser, Debug)]
#[command(name = "tricon", version, about = "Consistency-based curation of image-question-answer data")]
pub struct Cli {
    /// Seed for every random or template choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Parallel scoring workers and in-flight model requests. Output does not
    /// depend on this value.
    #[arg(long, global = true, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: u64,

    /// Text similarity backend.
    #[arg(long, global = true, value_enum, default_value_t = Backend::Lexical)]
    pub text_backend: Backend,

    /// Base URL of the embedding service (for `--text-backend service`).
    #[arg(long, global = true, env = "TRICON_EMBED_URL")]
    pub service_url: Option<String>,

    /// Template file replacing the bundled prompt templates.
    #[arg(long, global = true)]
    pub templates: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    /// Token-overlap measures; no network.
    Lexical,
    /// Remote sentence/token encoder.
    Service,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render seed triplets as multi-task training records.
    Transform {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Shares of image→QA, image+answer→Q and image+question→A records.
        #[arg(long, default_value = "0.5,0.2,0.3")]
        ratios: MaskRatios,
    },
    /// Score reconstructed triplets by triangular consistency.
    Score {
        /// Triplets with `q_prime`/`a_prime`, or plain triplets when a model is given.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Keep the most consistent records.
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Fraction to keep.
        #[arg(long, default_value_t = 0.2)]
        top: f64,
        #[command(flatten)]
        scope: Scope,
        /// Keep only records reconstructed exactly on both sides.
        #[arg(long, conflicts_with = "top")]
        exact: bool,
        /// Also write the dropped records here.
        #[arg(long)]
        excluded: Option<PathBuf>,
    },
    /// Lexical diversity and category histogram of a triplet file.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "both")]
        field: Field,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Synthetic self-training lab.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
    /// Generate, reconstruct, score, filter and merge for several rounds.
    Loop {
        #[arg(long)]
        seed_dataset: PathBuf,
        /// Unlabeled images, one per line; `---` separates rounds.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        #[arg(long, default_value_t = 0.2)]
        top: f64,
        #[command(flatten)]
        scope: Scope,
        #[arg(long, conflicts_with = "top")]
        exact: bool,
        /// Ratios for the multi-task records written for the next round.
        #[arg(long, default_value = "0.5,0.2,0.3")]
        ratios: MaskRatios,
        /// Directory receiving one `round-K` directory per round.
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
}

#[derive(Args, Debug, Default)]
#[group(multiple = false)]
pub struct Scope {
    /// Apply the fraction within each category (default).
    #[arg(long)]
    pub per_type: bool,
    /// Apply the fraction to the whole set.
    #[arg(long)]
    pub global: bool,
}

#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    /// Table-backed model file; repeat once per round to vary it.
    #[arg(long, conflicts_with = "model_url")]
    pub model_table: Vec<PathBuf>,
    /// Model server base URL; `{round}` is replaced by the round number.
    #[arg(long)]
    pub model_url: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum SynthCommand {
    /// Train the baseline and the refinement rounds; one JSON line per row.
    Run(SynthArgs),
}

#[derive(Args, Debug, Default)]
pub struct SynthArgs {
    /// TOML or JSON file with configuration fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n_lab: Option<usize>,
    #[arg(long)]
    pub n_unl: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub x_scale: Option<f64>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    /// Hidden widths, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub keep_frac: Option<f64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long, value_enum)]
    pub nll_reduction: Option<Reduction>,
    /// Re-select from the whole unlabeled pool every round.
    #[arg(long)]
    pub relabel: bool,
    /// Start each round from the previous round's weights.
    #[arg(long)]
    pub warm_start: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

impl From<Reduction> for NllReduction {
    fn from(r: Reduction) -> Self {
        match r {
            Reduction::Mean => NllReduction::Mean,
            Reduction::Sum => NllReduction::Sum,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tricon: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
