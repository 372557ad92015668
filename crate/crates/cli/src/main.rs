//! Command-line front end tying ingestion, training, evaluation, prediction
//! and explanation into reproducible runs.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use balse::synth::SynthConfig;
use balse::Error;
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "balse",
    version,
    about = "Blended recommender: matrix factorization plus tag regression behind a learned popularity gate"
)]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Paths, config file and per-hyperparameter overrides shared by the
/// commands that fit models. Flags override config-file values.
#[derive(Args)]
struct RunArgs {
    /// Ratings CSV: user,item,rating (labels) or user,item,value (numeric).
    #[arg(long)]
    ratings: Option<PathBuf>,
    /// Tags CSV: item,tag,weight with weight in [0,1].
    #[arg(long)]
    tags: Option<PathBuf>,
    /// Output directory for reports or model artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    als_rank: Option<usize>,
    #[arg(long)]
    als_lambda: Option<f64>,
    #[arg(long)]
    als_sweeps: Option<usize>,
    /// Early-stop tolerance on relative loss change (off by default).
    #[arg(long)]
    als_tol: Option<f64>,
    #[arg(long)]
    lasso_alpha: Option<f64>,
    #[arg(long)]
    lasso_max_passes: Option<usize>,
    #[arg(long)]
    lasso_tol: Option<f64>,
    #[arg(long)]
    gate_iters: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    valid_fraction: Option<f64>,
    /// Items with fewer train+valid ratings than this are little-known.
    #[arg(long)]
    cohort_threshold: Option<usize>,
}

impl RunArgs {
    fn resolve(&self, threads: Option<usize>) -> Result<RunConfig, Error> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.ratings {
            c.ratings = Some(p.clone());
        }
        if let Some(p) = &self.tags {
            c.tags = Some(p.clone());
        }
        if let Some(p) = &self.out {
            c.out = Some(p.clone());
        }
        if let Some(t) = threads {
            c.threads = t;
        }
        let e = &mut c.experiment;
        if let Some(v) = self.seed {
            e.seed = v;
        }
        if let Some(v) = self.als_rank {
            e.als.rank = v;
        }
        if let Some(v) = self.als_lambda {
            e.als.lambda = v;
        }
        if let Some(v) = self.als_sweeps {
            e.als.sweeps = v;
        }
        if let Some(v) = self.als_tol {
            e.als.tol = Some(v);
        }
        if let Some(v) = self.lasso_alpha {
            e.lasso.alpha = v;
        }
        if let Some(v) = self.lasso_max_passes {
            e.lasso.max_passes = v;
        }
        if let Some(v) = self.lasso_tol {
            e.lasso.tol = v;
        }
        if let Some(v) = self.gate_iters {
            e.gate_iters = v;
        }
        if let Some(v) = self.folds {
            e.k_folds = v;
        }
        if let Some(v) = self.valid_fraction {
            e.valid_fraction = v;
        }
        if let Some(v) = self.cohort_threshold {
            e.cohort_threshold = v;
        }
        Ok(c)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for ratings.csv, tags.csv and truth.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    users: usize,
    #[arg(long, default_value_t = 150)]
    items: usize,
    #[arg(long = "tags-count", default_value_t = 20)]
    tags_count: usize,
    #[arg(long, default_value_t = 5)]
    rank: usize,
    #[arg(long, default_value_t = 0.05)]
    density: f64,
    #[arg(long, default_value_t = 0.1)]
    cold_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    tag_signal: f64,
    #[arg(long, default_value_t = 0.3)]
    noise_sd: f64,
    /// Snap observed values onto the six categorical rating levels.
    #[arg(long, default_value_t = false)]
    quantize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate rating and tag files, reporting their shape.
    Ingest(RunArgs),
    /// Fit all three models and persist them for predict/explain.
    Train(RunArgs),
    /// Run the cross-validated cohort evaluation and write reports.
    Evaluate(RunArgs),
    /// Predict one user/item rating from trained artifacts.
    Predict {
        /// Directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(long)]
        item: String,
    },
    /// Show a taste profile, or explain one item's prediction.
    Explain {
        /// Directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(long)]
        item: Option<String>,
    },
    /// Generate planted-model synthetic data in the standard CSV formats.
    Synth(SynthArgs),
}

fn apply_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Ingest(args) => {
            let config = args.resolve(cli.threads)?;
            apply_threads(Some(config.threads).filter(|&t| t > 0));
            commands::ingest(&config)
        }
        Command::Train(args) => {
            let config = args.resolve(cli.threads)?;
            apply_threads(Some(config.threads).filter(|&t| t > 0));
            commands::train(&config)
        }
        Command::Evaluate(args) => {
            let config = args.resolve(cli.threads)?;
            apply_threads(Some(config.threads).filter(|&t| t > 0));
            commands::evaluate(&config)
        }
        Command::Predict { model, user, item } => {
            apply_threads(cli.threads);
            commands::predict(&model, &user, &item)
        }
        Command::Explain { model, user, item } => {
            apply_threads(cli.threads);
            commands::explain(&model, &user, item.as_deref())
        }
        Command::Synth(args) => {
            apply_threads(cli.threads);
            let config = SynthConfig {
                n_users: args.users,
                n_items: args.items,
                n_tags: args.tags_count,
                rank: args.rank,
                density: args.density,
                cold_fraction: args.cold_fraction,
                tag_signal: args.tag_signal,
                noise_sd: args.noise_sd,
                quantize: args.quantize,
                seed: args.seed,
            };
            commands::synth(&config, &args.out)
        }
    }
}

fn exit_code(error: &Error) -> u8 {
    match error {
        Error::NonFinite { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    // Die quietly when a downstream pipe closes (e.g. `balse evaluate | head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
