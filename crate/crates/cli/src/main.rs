//! `lepa`: command-line front end for the self-training data pipeline.
//!
//! Exit codes: 0 success, 2 configuration or input errors, 3 backend
//! unavailable, 4 trainer hook failure, 1 anything else.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lepa_core::{
    evaluate, iteration_dir, read_dataset, read_problems, run_iteration, ensure_valid_problem_set,
    write_dataset, write_export, write_manifest, AppConfig, BackendKind, Error, LoopRunner,
    LoopStatus, RunState, Strategy, TrainingManifest, DATASET_FILE, EXPORT_FILE, MANIFEST_FILE,
    REPORT_FILE, SCHEMA_VERSION, STATE_FILE,
};

#[derive(Parser)]
#[command(
    name = "lepa",
    version,
    about = "Generate verified fine-tuning data from a chat-completion backend"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate one iteration's dataset (no training, no evaluation).
    Generate {
        #[command(flatten)]
        common: Common,
        /// Iteration index to generate (affects sampling seeds and paths).
        #[arg(long, default_value_t = 0)]
        iteration: u32,
    },
    /// Run the full generate / export / train / evaluate loop.
    Loop {
        #[command(flatten)]
        common: Common,
        /// Continue from the run directory's saved state.
        #[arg(long)]
        resume: bool,
        /// Stop after this many completed iterations (resumable later).
        #[arg(long)]
        stop_after: Option<u32>,
    },
    /// Evaluate a checkpoint on the held-out test set.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to query; defaults to the configured initial one.
        #[arg(long)]
        checkpoint: Option<String>,
        /// Iteration index used for sampling-seed derivation.
        #[arg(long, default_value_t = 0)]
        iteration: u32,
    },
    /// Convert a dataset file into trainer inputs (train.jsonl, manifest).
    Export {
        #[command(flatten)]
        common: Common,
        /// Dataset file produced by `generate` or `loop`.
        #[arg(long)]
        dataset: PathBuf,
        /// Directory to write train.jsonl and manifest.json into.
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint the trainer should start from; defaults to the
        /// configured initial checkpoint.
        #[arg(long)]
        base_checkpoint: Option<String>,
    },
    /// Print a run directory's learning curves as CSV.
    Curves {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, short)]
    config: PathBuf,
    /// Override run.strategy.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Override run.iterations.
    #[arg(long)]
    iterations: Option<u32>,
    /// Override run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override run.concurrency_limit.
    #[arg(long)]
    concurrency: Option<usize>,
    /// Override backend.kind (mock or http).
    #[arg(long)]
    backend: Option<String>,
    /// Override backend.script (mock backend).
    #[arg(long)]
    script: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> lepa_core::Result<AppConfig> {
        let mut config = AppConfig::load(&self.config)?;
        if let Some(strategy) = self.strategy {
            config.run.strategy = strategy;
        }
        if let Some(iterations) = self.iterations {
            config.run.iterations = iterations;
        }
        if let Some(seed) = self.seed {
            config.run.seed = seed;
        }
        if let Some(concurrency) = self.concurrency {
            config.run.concurrency_limit = concurrency;
        }
        if let Some(kind) = &self.backend {
            config.backend.kind = match kind.as_str() {
                "mock" => BackendKind::Mock,
                "http" => BackendKind::Http,
                other => {
                    return Err(Error::Config(format!(
                        "unknown backend kind '{other}' (expected mock or http)"
                    )))
                }
            };
        }
        if let Some(script) = &self.script {
            config.backend.script = Some(script.clone());
        }
        config.validate()?;
        Ok(config)
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::TemplateMissing { .. }
        | Error::SchemaMismatch { .. }
        | Error::Parse { .. }
        | Error::EmptyTestSet
        | Error::MissingProblem { .. }
        | Error::MissingGoldAnswer { .. } => 2,
        Error::BackendUnavailable { .. } | Error::Http(_) | Error::BackendExhausted => 3,
        Error::TrainerHookFailed { .. } => 4,
        _ => 1,
    }
}

fn run(cli: Cli) -> lepa_core::Result<()> {
    match cli.command {
        Cmd::Generate { common, iteration } => generate(&common.load()?, iteration),
        Cmd::Loop {
            common,
            resume,
            stop_after,
        } => run_loop(common.load()?, resume, stop_after),
        Cmd::Eval {
            common,
            checkpoint,
            iteration,
        } => eval(&common.load()?, checkpoint, iteration),
        Cmd::Export {
            common,
            dataset,
            out,
            base_checkpoint,
        } => export(&common.load()?, &dataset, &out, base_checkpoint),
        Cmd::Curves { common } => curves(&common.load()?),
    }
}

fn generate(config: &AppConfig, iteration: u32) -> lepa_core::Result<()> {
    fs::create_dir_all(&config.paths.run_dir)?;
    let templates = config.load_templates()?;
    let problems = read_problems(&config.paths.problems)?;
    ensure_valid_problem_set(&problems)?;
    let backend = config.make_backend(None)?;
    let (dataset, report) = run_iteration(
        backend.as_ref(),
        &templates,
        &config.run,
        iteration,
        &problems,
    )?;
    let iter_dir = iteration_dir(&config.paths.run_dir, iteration);
    fs::create_dir_all(&iter_dir)?;
    write_dataset(&iter_dir.join(DATASET_FILE), &dataset)?;
    let mut report_text = serde_json::to_string_pretty(&report)?;
    report_text.push('\n');
    fs::write(iter_dir.join(REPORT_FILE), report_text)?;
    println!(
        "iteration {iteration}: {} tuples from {} problems \
         ({} solved, {} skipped, {} errored) -> {}",
        report.tuples_stored,
        report.problems_total,
        report.problems_solved,
        report.problems_skipped,
        report.problems_errored,
        iter_dir.join(DATASET_FILE).display()
    );
    Ok(())
}

fn run_loop(config: AppConfig, resume: bool, stop_after: Option<u32>) -> lepa_core::Result<()> {
    let mut runner = if resume {
        LoopRunner::resume(config)?
    } else {
        LoopRunner::new(config)?
    };
    let status = runner.run(stop_after)?;
    match status {
        LoopStatus::Complete => println!(
            "loop complete: {} iterations in {}",
            runner.state().iterations.len(),
            runner.run_dir().display()
        ),
        LoopStatus::Stopped { completed } => println!(
            "loop stopped after {completed} iteration(s); resume with --resume"
        ),
        LoopStatus::EarlyStopped { completed } => println!(
            "loop early-stopped after {completed} iteration(s): accuracy stopped improving"
        ),
    }
    Ok(())
}

fn eval(
    config: &AppConfig,
    checkpoint: Option<String>,
    iteration: u32,
) -> lepa_core::Result<()> {
    let test_path = config.paths.test_set.as_ref().ok_or_else(|| {
        Error::Config("eval requires paths.test_set in the configuration".into())
    })?;
    let test_problems = read_problems(test_path)?;
    ensure_valid_problem_set(&test_problems)?;
    fs::create_dir_all(&config.paths.run_dir)?;
    let templates = config.load_templates()?;
    let checkpoint = checkpoint.unwrap_or_else(|| config.trainer.initial_checkpoint.clone());
    let backend = config.make_backend(Some(&checkpoint))?;
    let report = evaluate(
        backend.as_ref(),
        &templates,
        &config.run,
        iteration,
        &checkpoint,
        &test_problems,
    )?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn export(
    config: &AppConfig,
    dataset_path: &std::path::Path,
    out: &std::path::Path,
    base_checkpoint: Option<String>,
) -> lepa_core::Result<()> {
    let dataset = read_dataset(dataset_path)?;
    let problems = read_problems(&config.paths.problems)?;
    ensure_valid_problem_set(&problems)?;
    let templates = config.load_templates()?;
    let base =
        base_checkpoint.unwrap_or_else(|| config.trainer.initial_checkpoint.clone());
    fs::create_dir_all(out)?;
    write_export(
        &out.join(EXPORT_FILE),
        &dataset,
        &problems,
        &templates,
        &config.run,
        &base,
    )?;
    let manifest = TrainingManifest {
        version: SCHEMA_VERSION.to_string(),
        iteration: dataset.iteration,
        strategy: config.run.strategy.as_str().to_string(),
        base_checkpoint: base,
        dataset_path: EXPORT_FILE.to_string(),
        learning_rate: config.run.learning_rate,
        epochs: config.run.epochs,
    };
    write_manifest(&out.join(MANIFEST_FILE), &manifest)?;
    println!(
        "exported {} records to {}",
        dataset.tuples.len(),
        out.join(EXPORT_FILE).display()
    );
    Ok(())
}

fn curves(config: &AppConfig) -> lepa_core::Result<()> {
    let state_path = config.paths.run_dir.join(STATE_FILE);
    let text = fs::read_to_string(&state_path).map_err(|_| {
        Error::Config(format!(
            "no run state at {}; run `lepa loop` first",
            state_path.display()
        ))
    })?;
    let state: RunState = serde_json::from_str(&text)?;
    print!("{}", lepa_core::curves_csv(&state));
    Ok(())
}
