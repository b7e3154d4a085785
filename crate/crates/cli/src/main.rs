mod commands;
mod config;
mod svg;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use acvae_core::dataio::DataError;
use acvae_core::evaluation::EvalError;
use acvae_core::models::Variant;
use acvae_core::training::TrainError;
use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;

// Training allocates and frees hundreds of megabytes per batch; keeping freed
// pages mapped avoids paying the page-fault cost again on every iteration.
#[global_allocator]
static GLOBAL: tikv_jemallocator::Jemalloc = tikv_jemallocator::Jemalloc;

#[allow(non_upper_case_globals)]
#[export_name = "_rjem_malloc_conf"]
pub static malloc_conf: &[u8] = b"dirty_decay_ms:-1,muzzy_decay_ms:-1\0";

/// Bad invocation or configuration (exit 1).
#[derive(Debug)]
pub struct UsageError(pub String);

/// Missing or malformed input data (exit 2).
#[derive(Debug)]
pub struct DataProblem(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for DataProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for DataProblem {}

#[derive(Parser)]
#[command(name = "acvae", version, about = "Subject-invariant EEG representations: prepare data, train, evaluate, compare")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration (flat JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// 10 training subjects, 3 held-out subjects, 10 + 5 epochs.
    #[arg(long)]
    smoke: bool,
}

impl ConfigArgs {
    fn resolve(&self, variant: Option<Variant>) -> anyhow::Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(v) = variant {
            overrides.insert(0, format!("variant={}", v.as_str()));
        }
        ExperimentConfig::resolve(self.config.as_deref(), self.smoke, &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse, screen, epoch, split and normalize the corpus into the cache.
    Prepare {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train one variant and write checkpoints and histories to a run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// ACVAE, CVAE, AVAE or CNN (overrides the configured variant).
        #[arg(long)]
        variant: Option<Variant>,
        /// Defaults to `<output_dir>/<variant>-s<train_seed>-i<init_seed>`.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Skip the evaluation that normally follows training.
        #[arg(long)]
        no_eval: bool,
    },
    /// Evaluate a trained run and write report.json and report.csv.
    Eval {
        run_dir: PathBuf,
    },
    /// Compare evaluated runs: comparison table plus box-plot figure.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Write a synthetic corpus in the PhysioNet file layout.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        /// Number of regular subjects; omit for the 109-subject layout with
        /// six irregular subjects.
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Prepare { config } => commands::prepare(&config.resolve(None)?),
        Command::Train { config, variant, run_dir, no_eval } => {
            let cfg = config.resolve(variant)?;
            let dir = commands::run_dir(&cfg, run_dir);
            commands::train(&cfg, &dir)?;
            if !no_eval {
                commands::evaluate(&dir)?;
            }
            Ok(())
        }
        Command::Eval { run_dir } => commands::evaluate(&run_dir).map(|_| ()),
        Command::Report { run_dirs, out } => commands::report(&run_dirs, &out),
        Command::SynthCorpus { out, subjects, seed } => commands::synth_corpus(&out, subjects, seed),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<DataProblem>() || cause.is::<DataError>() {
            return 2;
        }
        match cause.downcast_ref::<EvalError>() {
            Some(EvalError::Data(_) | EvalError::SubjectIndex { .. } | EvalError::Empty(_)) => return 2,
            Some(_) => return 3,
            None => {}
        }
        if let Some(TrainError::Data(_)) = cause.downcast_ref::<TrainError>() {
            return 2;
        }
    }
    3
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp_secs().init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
