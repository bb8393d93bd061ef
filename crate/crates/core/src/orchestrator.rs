//! The iteration engine: runs a strategy over a problem set with a worker
//! pool, exports the verified dataset for training, invokes the trainer
//! hook, evaluates the resulting checkpoint, and persists enough state to
//! resume after an interruption without repeating completed phases.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backend::ChatBackend;
use crate::config::AppConfig;
use crate::error::{Error, Result};
use crate::genstrat::Generator;
use crate::model::{
    ensure_valid_problem_set, read_problems, IterationDataset, Problem, Provenance, RunConfig,
};
use crate::prompts::TemplateSet;
use crate::scoring::f_cor;
use crate::trainer_io::{
    lineage_base, read_dataset, write_dataset, write_export, write_manifest, TrainingManifest,
    SCHEMA_VERSION,
};

/// File names inside each iteration directory and the run directory.
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const EXPORT_FILE: &str = "train.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";
pub const STATE_FILE: &str = "state.json";
pub const CURVES_FILE: &str = "curves.csv";

/// Directory holding iteration `t`'s artifacts, under the run directory.
pub fn iteration_dir(run_dir: &Path, iteration: u32) -> PathBuf {
    run_dir.join(format!("iter_{iteration:03}"))
}

/// Evaluation results for one checkpoint on the held-out test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Checkpoint the responses came from.
    pub checkpoint: String,
    pub test_problems: usize,
    pub solved: usize,
    /// Fraction of test problems answered correctly; failed calls score 0.
    pub accuracy: f64,
    /// Mean completion tokens per successful response (0 when none).
    pub mean_response_tokens: f64,
    /// True when any token figure fell back to whitespace counting.
    pub token_counts_estimated: bool,
    /// Backend calls that failed and were scored as incorrect.
    pub eval_failures: usize,
}

/// Everything measured while generating one iteration's dataset, plus the
/// evaluation of the checkpoint trained on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u32,
    pub strategy: String,
    pub problems_total: usize,
    /// Problems actually run (not skipped for a missing gold answer and not
    /// lost to backend errors).
    pub problems_attempted: usize,
    pub problems_skipped: usize,
    pub problems_errored: usize,
    /// Attempted problems with at least one correct attempt or sample.
    pub problems_solved: usize,
    pub tuples_stored: usize,
    pub plan_calls: u32,
    pub solution_calls: u32,
    pub reflection_calls: u32,
    pub leak_rejections: u32,
    pub degenerate_plans: u32,
    /// For chain strategies: retries used per attempted problem (0 means
    /// solved on the first attempt); counts sum to `problems_attempted`.
    /// Empty for sampling strategies, which have no retry chain.
    pub reflection_histogram: BTreeMap<u32, usize>,
    /// `problem_id: message`, sorted, for problems lost to backend errors.
    pub errors: Vec<String>,
    pub eval: Option<EvalReport>,
}

/// Runs `f` over the problems with `concurrency` workers. Results come back
/// in input order regardless of scheduling, keyed by slot index.
fn run_pool<T, F>(concurrency: usize, problems: &[&Problem], f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(&Problem) -> Result<T> + Sync,
{
    let n = problems.len();
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = concurrency.max(1).min(n.max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let result = f(problems[i]);
                slots.lock().unwrap()[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every slot filled"))
        .collect()
}

/// Generates one iteration's dataset. Problems are processed in id order;
/// the dataset and report depend only on the inputs, never on the worker
/// count. Backend-unavailable failures on individual problems are recorded
/// and tolerated, but if every attempted problem fails that way the whole
/// iteration fails with `BackendExhausted`. Any other error aborts
/// immediately.
pub fn run_iteration(
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    config: &RunConfig,
    iteration: u32,
    problems: &[Problem],
) -> Result<(IterationDataset, IterationReport)> {
    let mut sorted: Vec<&Problem> = problems.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let generator = Generator::new(backend, templates, config, iteration);
    let results = run_pool(config.concurrency_limit, &sorted, |p| {
        generator.run_problem(p)
    });

    let mut report = IterationReport {
        iteration,
        strategy: config.strategy.as_str().to_string(),
        problems_total: problems.len(),
        problems_attempted: 0,
        problems_skipped: 0,
        problems_errored: 0,
        problems_solved: 0,
        tuples_stored: 0,
        plan_calls: 0,
        solution_calls: 0,
        reflection_calls: 0,
        leak_rejections: 0,
        degenerate_plans: 0,
        reflection_histogram: BTreeMap::new(),
        errors: Vec::new(),
        eval: None,
    };
    let mut tuples = Vec::new();
    let mut backend_failures = 0usize;

    for (problem, result) in sorted.iter().zip(results) {
        match result {
            Ok(outcome) => {
                if outcome.skipped {
                    report.problems_skipped += 1;
                    continue;
                }
                report.problems_attempted += 1;
                if outcome.solved {
                    report.problems_solved += 1;
                }
                report.plan_calls += outcome.calls.plan_calls;
                report.solution_calls += outcome.calls.solution_calls;
                report.reflection_calls += outcome.calls.reflection_calls;
                report.leak_rejections += outcome.leak_rejections;
                report.degenerate_plans += outcome.degenerate_plans;
                if let Some(trace) = &outcome.trace {
                    let retries = (trace.attempts.len() as u32).saturating_sub(1);
                    *report.reflection_histogram.entry(retries).or_insert(0) += 1;
                }
                tuples.extend(outcome.tuples);
            }
            Err(e) if e.is_backend_unavailable() => {
                backend_failures += 1;
                report.problems_errored += 1;
                report.errors.push(format!("{}: {e}", problem.id));
            }
            Err(e) => return Err(e),
        }
    }
    if backend_failures > 0 && report.problems_attempted == 0 {
        return Err(Error::BackendExhausted);
    }
    report.errors.sort();
    report.tuples_stored = tuples.len();

    let dataset = IterationDataset {
        iteration,
        tuples,
        provenance: Provenance {
            config_hash: config.semantic_hash(),
            backend_id: backend.id(),
            seed: config.seed,
        },
    };
    Ok((dataset, report))
}

/// Scores `checkpoint` on the test set. Plan-first strategies answer in two
/// rounds (plan, then solve with it); the rest answer directly. Every test
/// problem must carry a gold answer. Per-problem backend failures score 0
/// and are counted; if every problem fails that way the evaluation fails
/// with `BackendExhausted`.
pub fn evaluate(
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    config: &RunConfig,
    iteration: u32,
    checkpoint: &str,
    test_problems: &[Problem],
) -> Result<EvalReport> {
    if test_problems.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    for problem in test_problems {
        if problem.gold_answer.is_none() {
            return Err(Error::MissingGoldAnswer {
                problem_id: problem.id.clone(),
            });
        }
    }
    let mut sorted: Vec<&Problem> = test_problems.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let evaluator = Generator::evaluator(backend, templates, config, iteration);
    let results = run_pool(config.concurrency_limit, &sorted, |p| {
        evaluator.generate_eval_response(p)
    });

    let mut solved = 0usize;
    let mut failures = 0usize;
    let mut token_total = 0u64;
    let mut token_samples = 0usize;
    let mut estimated = false;
    for (problem, result) in sorted.iter().zip(results) {
        match result {
            Ok(response) => {
                solved += f_cor(problem, &response.solution)?.score as usize;
                token_total += u64::from(response.response_tokens);
                token_samples += 1;
                estimated |= response.tokens_estimated;
            }
            Err(e) if e.is_backend_unavailable() => {
                log::warn!("evaluation call for '{}' failed: {e}", problem.id);
                failures += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if failures == sorted.len() {
        return Err(Error::BackendExhausted);
    }
    Ok(EvalReport {
        checkpoint: checkpoint.to_string(),
        test_problems: sorted.len(),
        solved,
        accuracy: solved as f64 / sorted.len() as f64,
        mean_response_tokens: if token_samples == 0 {
            0.0
        } else {
            token_total as f64 / token_samples as f64
        },
        token_counts_estimated: estimated,
        eval_failures: failures,
    })
}

/// Runs the trainer hook with `{manifest}` expanded to the manifest path.
/// The last non-empty stdout line names the checkpoint it produced.
pub fn run_trainer_hook(hook: &str, manifest_path: &Path) -> Result<String> {
    let command = hook.replace("{manifest}", &manifest_path.display().to_string());
    let output = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .output()
        .map_err(|e| Error::TrainerHookFailed {
            status: -1,
            detail: format!("failed to spawn: {e}"),
        })?;
    let status = output.status.code().unwrap_or(-1);
    if !output.status.success() {
        let mut detail = String::from_utf8_lossy(&output.stderr).trim().to_string();
        if detail.is_empty() {
            detail = String::from_utf8_lossy(&output.stdout).trim().to_string();
        }
        return Err(Error::TrainerHookFailed { status, detail });
    }
    let stdout = String::from_utf8_lossy(&output.stdout);
    let checkpoint = stdout
        .lines()
        .map(str::trim)
        .rfind(|l| !l.is_empty())
        .unwrap_or("")
        .to_string();
    if checkpoint.is_empty() {
        return Err(Error::TrainerHookFailed {
            status,
            detail: "hook printed no checkpoint name on stdout".into(),
        });
    }
    Ok(checkpoint)
}

/// Name used for iteration `t`'s checkpoint when no trainer hook is
/// configured, so lineage stays observable in manifests and reports.
pub fn synthetic_checkpoint(initial: &str, iteration: u32) -> String {
    format!("{initial}-it{}", iteration + 1)
}

/// Progress of one iteration through its four phases.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    pub generated: bool,
    pub exported: bool,
    /// Checkpoint produced by training on this iteration's data.
    pub next_checkpoint: Option<String>,
    pub evaluated: bool,
    pub report: Option<IterationReport>,
}

/// Durable loop state, saved after every completed phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub version: String,
    /// Semantic hash of the run configuration; resuming under a different
    /// configuration is refused.
    pub config_hash: String,
    pub initial_checkpoint: String,
    pub iterations: Vec<IterationState>,
}

/// How a loop run ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoopStatus {
    /// All configured iterations finished.
    Complete,
    /// Stopped by `stop_after` with this many iterations finished.
    Stopped { completed: u32 },
    /// Early-stopped after this many iterations without improvement.
    EarlyStopped { completed: u32 },
}

/// Drives the generate / export / train / evaluate loop and owns its state.
pub struct LoopRunner {
    config: AppConfig,
    templates: TemplateSet,
    problems: Vec<Problem>,
    test_problems: Option<Vec<Problem>>,
    state: RunState,
}

impl LoopRunner {
    /// Starts a fresh run. Refuses to clobber an existing `state.json`.
    pub fn new(config: AppConfig) -> Result<Self> {
        let state_path = config.paths.run_dir.join(STATE_FILE);
        if state_path.exists() {
            return Err(Error::Config(format!(
                "{} already exists; pass --resume to continue it",
                state_path.display()
            )));
        }
        Self::build(config, None)
    }

    /// Continues a run from its saved state, or starts fresh if none exists.
    /// The saved configuration hash must match the current configuration.
    pub fn resume(config: AppConfig) -> Result<Self> {
        let state_path = config.paths.run_dir.join(STATE_FILE);
        let state = if state_path.exists() {
            let text = fs::read_to_string(&state_path)?;
            let state: RunState = serde_json::from_str(&text)?;
            if state.version != SCHEMA_VERSION {
                return Err(Error::SchemaMismatch {
                    found: state.version,
                    supported: SCHEMA_VERSION.to_string(),
                });
            }
            if state.config_hash != config.run.semantic_hash() {
                return Err(Error::Config(
                    "saved state was produced by a different configuration; \
                     refusing to resume"
                        .into(),
                ));
            }
            Some(state)
        } else {
            None
        };
        Self::build(config, state)
    }

    fn build(config: AppConfig, state: Option<RunState>) -> Result<Self> {
        fs::create_dir_all(&config.paths.run_dir)?;
        let templates = config.load_templates()?;
        let problems = read_problems(&config.paths.problems)?;
        ensure_valid_problem_set(&problems)?;
        let test_problems = match &config.paths.test_set {
            Some(path) => {
                let problems = read_problems(path)?;
                ensure_valid_problem_set(&problems)?;
                Some(problems)
            }
            None => None,
        };
        let state = state.unwrap_or_else(|| RunState {
            version: SCHEMA_VERSION.to_string(),
            config_hash: config.run.semantic_hash(),
            initial_checkpoint: config.trainer.initial_checkpoint.clone(),
            iterations: Vec::new(),
        });
        Ok(LoopRunner {
            config,
            templates,
            problems,
            test_problems,
            state,
        })
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn run_dir(&self) -> &Path {
        &self.config.paths.run_dir
    }

    fn save_state(&self) -> Result<()> {
        let path = self.config.paths.run_dir.join(STATE_FILE);
        let tmp = self.config.paths.run_dir.join(format!("{STATE_FILE}.tmp"));
        let mut text = serde_json::to_string_pretty(&self.state)?;
        text.push('\n');
        fs::write(&tmp, text)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    /// The checkpoint iteration `t` generates from: the initial checkpoint
    /// for the first iteration, afterwards whatever the previous iteration's
    /// training produced.
    fn checkpoint_before(&self, iteration: usize) -> String {
        if iteration == 0 {
            self.state.initial_checkpoint.clone()
        } else {
            self.state.iterations[iteration - 1]
                .next_checkpoint
                .clone()
                .expect("previous iteration completed training")
        }
    }

    /// Rebinds the backend to `checkpoint` only when a real trainer exists;
    /// synthetic checkpoint names do not correspond to live models.
    fn backend_for(&self, checkpoint: &str) -> Result<Box<dyn ChatBackend>> {
        let rebind = self.config.trainer.hook.is_some();
        self.config
            .make_backend(rebind.then_some(checkpoint))
    }

    /// Runs iterations until done, early-stopped, or `stop_after` completed
    /// iterations are on disk. Already-completed phases are skipped, so the
    /// same call safely resumes interrupted runs.
    pub fn run(&mut self, stop_after: Option<u32>) -> Result<LoopStatus> {
        let total = self.config.run.iterations as usize;
        for t in 0..total {
            if self.state.iterations.len() <= t {
                self.state.iterations.push(IterationState::default());
            }
            self.run_single_iteration(t)?;
            self.emit_curves()?;

            if self.early_stop_reached() {
                return Ok(LoopStatus::EarlyStopped {
                    completed: (t + 1) as u32,
                });
            }
            if let Some(limit) = stop_after {
                if (t + 1) as u32 >= limit && t + 1 < total {
                    return Ok(LoopStatus::Stopped {
                        completed: (t + 1) as u32,
                    });
                }
            }
        }
        Ok(LoopStatus::Complete)
    }

    fn run_single_iteration(&mut self, t: usize) -> Result<()> {
        let iteration = t as u32;
        let iter_dir = iteration_dir(&self.config.paths.run_dir, iteration);
        fs::create_dir_all(&iter_dir)?;
        let generating_from = self.checkpoint_before(t);

        if !self.state.iterations[t].generated {
            let backend = self.backend_for(&generating_from)?;
            let (dataset, report) = run_iteration(
                backend.as_ref(),
                &self.templates,
                &self.config.run,
                iteration,
                &self.problems,
            )?;
            write_dataset(&iter_dir.join(DATASET_FILE), &dataset)?;
            let entry = &mut self.state.iterations[t];
            entry.report = Some(report);
            entry.generated = true;
            self.save_state()?;
        }

        if !self.state.iterations[t].exported {
            let dataset = read_dataset(&iter_dir.join(DATASET_FILE))?;
            let base = lineage_base(
                &self.config.run,
                &self.state.initial_checkpoint,
                &generating_from,
            );
            write_export(
                &iter_dir.join(EXPORT_FILE),
                &dataset,
                &self.problems,
                &self.templates,
                &self.config.run,
                &base,
            )?;
            let manifest = TrainingManifest {
                version: SCHEMA_VERSION.to_string(),
                iteration,
                strategy: self.config.run.strategy.as_str().to_string(),
                base_checkpoint: base,
                dataset_path: EXPORT_FILE.to_string(),
                learning_rate: self.config.run.learning_rate,
                epochs: self.config.run.epochs,
            };
            write_manifest(&iter_dir.join(MANIFEST_FILE), &manifest)?;
            self.state.iterations[t].exported = true;
            self.save_state()?;
        }

        if self.state.iterations[t].next_checkpoint.is_none() {
            let checkpoint = match &self.config.trainer.hook {
                Some(hook) => run_trainer_hook(hook, &iter_dir.join(MANIFEST_FILE))?,
                None => synthetic_checkpoint(&self.state.initial_checkpoint, iteration),
            };
            self.state.iterations[t].next_checkpoint = Some(checkpoint);
            self.save_state()?;
        }

        if !self.state.iterations[t].evaluated {
            let checkpoint = self.state.iterations[t]
                .next_checkpoint
                .clone()
                .expect("just set");
            if let Some(test_problems) = &self.test_problems {
                let backend = self.backend_for(&checkpoint)?;
                let eval = evaluate(
                    backend.as_ref(),
                    &self.templates,
                    &self.config.run,
                    iteration,
                    &checkpoint,
                    test_problems,
                )?;
                if let Some(report) = &mut self.state.iterations[t].report {
                    report.eval = Some(eval);
                }
            }
            if let Some(report) = &self.state.iterations[t].report {
                let mut text = serde_json::to_string_pretty(report)?;
                text.push('\n');
                fs::write(iter_dir.join(REPORT_FILE), text)?;
            }
            self.state.iterations[t].evaluated = true;
            self.save_state()?;
        }
        Ok(())
    }

    /// True when `early_stop_patience` is set and that many consecutive
    /// evaluations have failed to beat the best accuracy before them.
    fn early_stop_reached(&self) -> bool {
        let patience = self.config.run.early_stop_patience;
        if patience == 0 {
            return false;
        }
        let mut best = f64::NEG_INFINITY;
        let mut stale = 0u32;
        for entry in &self.state.iterations {
            let Some(accuracy) = entry
                .report
                .as_ref()
                .and_then(|r| r.eval.as_ref())
                .map(|e| e.accuracy)
            else {
                continue;
            };
            if accuracy > best {
                best = accuracy;
                stale = 0;
            } else {
                stale += 1;
            }
        }
        stale >= patience
    }

    /// Rewrites `curves.csv` from the iteration reports completed so far.
    pub fn emit_curves(&self) -> Result<()> {
        let text = curves_csv(&self.state);
        fs::write(self.config.paths.run_dir.join(CURVES_FILE), text)?;
        Ok(())
    }
}

/// Renders learning curves as CSV. Cells without a value (no evaluation,
/// or no attempted problems) are left empty.
pub fn curves_csv(state: &RunState) -> String {
    let mut out = String::from("iteration,accuracy,solve_rate,tuples,mean_tokens\n");
    for entry in &state.iterations {
        let Some(report) = &entry.report else {
            continue;
        };
        let accuracy = report
            .eval
            .as_ref()
            .map(|e| e.accuracy.to_string())
            .unwrap_or_default();
        let mean_tokens = report
            .eval
            .as_ref()
            .map(|e| e.mean_response_tokens.to_string())
            .unwrap_or_default();
        let solve_rate = if report.problems_attempted == 0 {
            String::new()
        } else {
            (report.problems_solved as f64 / report.problems_attempted as f64).to_string()
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            report.iteration, accuracy, solve_rate, report.tuples_stored, mean_tokens
        ));
    }
    out
}

/// One parsed row of `curves.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub iteration: u32,
    pub accuracy: Option<f64>,
    pub solve_rate: Option<f64>,
    pub tuples: usize,
    pub mean_tokens: Option<f64>,
}

/// Parses a `curves.csv` file back into rows.
pub fn parse_curves(text: &str) -> Result<Vec<CurveRow>> {
    let mut rows = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if index == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                path: CURVES_FILE.into(),
                line: index + 1,
                detail: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>().map(Some).map_err(|e| Error::Parse {
                path: CURVES_FILE.into(),
                line: index + 1,
                detail: e.to_string(),
            })
        };
        rows.push(CurveRow {
            iteration: fields[0].parse().map_err(|e| Error::Parse {
                path: CURVES_FILE.into(),
                line: index + 1,
                detail: format!("{e}"),
            })?,
            accuracy: parse_opt(fields[1])?,
            solve_rate: parse_opt(fields[2])?,
            tuples: fields[3].parse().map_err(|e| Error::Parse {
                path: CURVES_FILE.into(),
                line: index + 1,
                detail: format!("{e}"),
            })?,
            mean_tokens: parse_opt(fields[4])?,
        });
    }
    Ok(rows)
}
