//! `vulforge` command-line front end. Each subcommand reads earlier
//! artifacts from the output directory and writes its own, recording every
//! file with its config hash in `manifest.json`.

pub mod commands;
pub mod config;
pub mod error;
pub mod workspace;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use vulforge::ensembles::{BoostVote, Routing, VoteMode};
use vulforge::ingest::{Schema, Split};
use vulforge::metamodels::MetaKind;
use vulforge::metrics::TieRule;

pub use config::ExperimentConfig;
pub use error::{exit, CliError, EXIT_CODES_HELP};

#[derive(Debug, Parser)]
#[command(
    name = "vulforge",
    version,
    about = "Train and evaluate bagging, boosting, stacking and gated-stacking ensembles over vulnerability classifiers",
    after_help = EXIT_CODES_HELP
)]
pub struct Cli {
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// TOML experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Exchange directory for externally trained models.
    #[arg(long, global = true)]
    pub external: Option<PathBuf>,
    /// Dataset JSONL (overrides the config file).
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// binary or multiclass.
    #[arg(long, global = true)]
    pub schema: Option<Schema>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic C-function corpus to <out>/dataset.jsonl.
    Synth {
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long)]
        positive_rate: Option<f64>,
        #[arg(long)]
        cwes: Option<usize>,
        #[arg(long)]
        label_noise: Option<f64>,
        /// Give every vulnerable function a fixed twin (1:1 balance).
        #[arg(long)]
        paired: bool,
        /// Label vulnerable functions by CWE.
        #[arg(long)]
        multiclass: bool,
    },
    /// Stratified 8:1:1 split -> splits.json.
    Split,
    /// Hashed n-gram features -> features.jsonl.
    Featurize,
    /// Train the built-in learner (or import external predictions) ->
    /// preds/<id>/<split>.jsonl.
    TrainBase {
        #[arg(long, default_value = "base")]
        model_id: String,
    },
    /// Bagging over stratified bootstrap draws.
    Bag {
        /// hard or soft.
        #[arg(long)]
        mode: Option<VoteMode>,
        /// Number of members M.
        #[arg(long)]
        members: Option<usize>,
        /// Member ids are <base-id>.m<j>.
        #[arg(long, default_value = "base")]
        base_id: String,
    },
    /// AdaBoost (binary) or SAMME (multi-class).
    Boost {
        /// Maximum rounds T.
        #[arg(long)]
        rounds: Option<usize>,
        /// labels or score_sum.
        #[arg(long)]
        vote: Option<BoostVote>,
        /// Round ids are <base-id>.r<t>.
        #[arg(long, default_value = "base")]
        base_id: String,
    },
    /// Stacking: meta-model trained on validation predictions.
    Stack {
        #[arg(long, value_delimiter = ',', required = true)]
        bases: Vec<String>,
        /// lr, rf, svm or knn.
        #[arg(long)]
        meta: Option<MetaKind>,
    },
    /// Gated stacking: a gate over code features and base outputs picks an
    /// expert per sample.
    Dgs {
        #[arg(long, value_delimiter = ',', required = true)]
        bases: Vec<String>,
        /// hard or soft.
        #[arg(long)]
        routing: Option<Routing>,
    },
    /// Metrics for prediction sets -> report.json, report.csv.
    Eval {
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<String>,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Average ranks from a long-format score CSV
    /// (instance,method,<metric>...) -> ranks.csv.
    Rank {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value = "average")]
        tie: TieRule,
    },
    /// Venn regions of correctly predicted ids -> overlap.csv.
    Overlap {
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<String>,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Ids where members disagree and who gets them right -> divergence.csv.
    Divergence {
        #[arg(long, value_delimiter = ',', required = true)]
        members: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Paired 1:1 subsets for the most frequent CWEs -> cwe/<CWE>/dataset.jsonl.
    CweSubsets {
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Recompute config hashes and file digests recorded in manifest.json.
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Split => "split",
            Command::Featurize => "featurize",
            Command::TrainBase { .. } => "train-base",
            Command::Bag { .. } => "bag",
            Command::Boost { .. } => "boost",
            Command::Stack { .. } => "stack",
            Command::Dgs { .. } => "dgs",
            Command::Eval { .. } => "eval",
            Command::Rank { .. } => "rank",
            Command::Overlap { .. } => "overlap",
            Command::Divergence { .. } => "divergence",
            Command::CweSubsets { .. } => "cwe-subsets",
            Command::Verify => "verify",
        }
    }
}

/// Effective config: file, then global flags, then command flags.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(s) = cli.schema {
        cfg.schema = s;
    }
    if let Some(e) = &cli.external {
        cfg.external = Some(e.clone());
    }
    match &cli.command {
        Command::Bag { mode, members, .. } => {
            if let Some(m) = mode {
                cfg.vote = *m;
            }
            if let Some(m) = members {
                cfg.members = *m;
            }
        }
        Command::Boost { rounds, vote, .. } => {
            if let Some(r) = rounds {
                cfg.rounds = *r;
            }
            if let Some(v) = vote {
                cfg.boost_vote = *v;
            }
        }
        Command::Stack { meta: Some(m), .. } => cfg.meta = *m,
        Command::Dgs { routing: Some(r), .. } => cfg.routing = *r,
        _ => {}
    }
    cfg.finalize()
}

/// Runs one subcommand to completion.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(cli))
        }
        None => dispatch(cli),
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    if let Command::Verify = cli.command {
        let n = workspace::verify(&cli.out)?;
        println!("verified {n} files in {}", cli.out.display());
        return Ok(());
    }
    let cfg = resolve_config(cli)?;
    let mut ws = workspace::Workspace::open(&cli.out, cfg, cli.command.name())?;
    commands::execute(&mut ws, &cli.command)?;
    ws.finish()
}
