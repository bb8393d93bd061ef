//! Domain types shared across the pipeline: problems, plans, solutions,
//! reflection traces, training tuples, datasets, and the run configuration.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// What kind of answer a problem expects, which drives answer extraction
/// and grading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Free-form mathematical answer (number, fraction, expression).
    FreeFormMath,
    /// One answer out of an explicit list of choices.
    MultipleChoice,
    /// Yes/no question.
    Boolean,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::FreeFormMath => "free_form_math",
            TaskKind::MultipleChoice => "multiple_choice",
            TaskKind::Boolean => "boolean",
        }
    }
}

/// A single task instance: the statement shown to the model plus grading data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    /// Unique id within a problem set.
    pub id: String,
    /// The problem text presented to the model.
    pub statement: String,
    /// Reference answer used for grading and (where the strategy allows it)
    /// for reflection prompts. Absent for unlabeled corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
    /// Answer options for multiple-choice tasks, in presentation order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<String>,
    pub task_kind: TaskKind,
}

/// An anticipatory plan: high-level meta-knowledge produced before solving.
///
/// Plans are meant to transfer across similar problems, so prompt templates
/// instruct the model to keep them free of problem-specific work, and
/// [`crate::scoring::answer_leak_check`] guards against plans that smuggle in
/// the gold answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnticipatoryPlan {
    pub text: String,
}

/// A generated solution together with its extracted final answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub text: String,
    /// The answer substring designated by the extraction convention, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted_answer: Option<String>,
    /// Backend-reported completion tokens when available, else a whitespace
    /// token count of the text.
    pub token_count: u32,
}

/// One trial inside a generation loop: an optional plan, the solution that
/// followed it, and the binary correctness score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    /// Present for plan-first strategies; absent for direct-solution ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<AnticipatoryPlan>,
    pub solution: Solution,
    /// Binary correctness: 1 = correct, 0 = incorrect.
    pub score: u8,
    /// Set when the plan failed the answer-leak check. Under the default
    /// reject policy this forces the score to 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub plan_leaked: bool,
}

/// Terminal state of a reflection chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceOutcome {
    /// The last attempt scored 1.
    Solved,
    /// The attempt budget ran out with every attempt scoring 0.
    Exhausted,
}

/// The ordered attempts a chain strategy made on one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionTrace {
    pub problem_id: String,
    pub attempts: Vec<Attempt>,
    pub outcome: TraceOutcome,
}

impl ReflectionTrace {
    /// Checks the structural invariants every well-formed trace satisfies:
    /// between 1 and `1 + max_reflections` attempts, a solved trace scores 1
    /// exactly once and on its last attempt, and an exhausted trace used the
    /// full budget with every attempt scoring 0.
    pub fn check_invariants(&self, max_reflections: u32) -> std::result::Result<(), String> {
        let n = self.attempts.len();
        let cap = 1 + max_reflections as usize;
        if n == 0 || n > cap {
            return Err(format!("trace has {n} attempts, expected 1..={cap}"));
        }
        let ones = self.attempts.iter().filter(|a| a.score == 1).count();
        match self.outcome {
            TraceOutcome::Solved => {
                if ones != 1 || self.attempts.last().map(|a| a.score) != Some(1) {
                    return Err("solved trace must score 1 exactly once, on its last attempt".into());
                }
            }
            TraceOutcome::Exhausted => {
                if ones != 0 {
                    return Err("exhausted trace must contain no scoring attempt".into());
                }
                if n != cap {
                    return Err(format!(
                        "exhausted trace used {n} attempts, expected the full budget of {cap}"
                    ));
                }
            }
        }
        if let Some(bad) = self.attempts.iter().find(|a| a.score > 1) {
            return Err(format!("attempt score {} outside {{0, 1}}", bad.score));
        }
        Ok(())
    }
}

/// One training example as stored in an iteration dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTuple {
    pub problem_id: String,
    /// Present for plan-first strategies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_text: Option<String>,
    pub solution_text: String,
    /// `+1` / `-1` for reward-based strategies; absent for supervised ones,
    /// in which case the recorded solution scored 1 at emission time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<i8>,
    /// Which strategy produced the tuple, e.g. `"lepa"` or `"rest_em"`.
    pub strategy_tag: String,
    /// Index of the trial (attempt or sample) the tuple came from.
    pub trial_index: u32,
}

/// Where an iteration's data came from, for reproducibility audits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Hash of the semantic run parameters (see [`RunConfig::semantic_hash`]).
    pub config_hash: String,
    /// Identity string of the backend that produced the generations.
    pub backend_id: String,
    /// Base random seed of the run.
    pub seed: u64,
}

/// The tuples collected in one generation iteration. Rebuilt from scratch
/// every iteration; never appended to across iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDataset {
    pub iteration: u32,
    pub tuples: Vec<TrainingTuple>,
    pub provenance: Provenance,
}

/// Data-generation strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Plan first, solve, then self-reflect on failures (the main method).
    Lepa,
    /// Rejection sampling over direct solutions; retrain from the previous
    /// checkpoint each iteration.
    Rest,
    /// Rejection sampling; retrain from the initial checkpoint each iteration.
    RestEm,
    /// Direct solution, then gold-guided modification rounds on failure.
    Star,
    /// Ablation: the reflection loop applied to bare solutions, no plans.
    NoPlan,
    /// Ablation: plan + solution rejection sampling, no reflection.
    NoSelfReflection,
    /// Variant: rejection sampling, then filler-token markers inserted
    /// between solution steps.
    SilenceTokens,
    /// Variant: wrong sample + bridge sentence + correct sample.
    Correction,
    /// Variant: rejection sampling with a prompt requesting long solutions.
    LongSolution,
    /// LEPA generation that keeps every attempt, labeled with +1/-1 rewards.
    LepaReinforce,
}

impl Strategy {
    pub const ALL: [Strategy; 10] = [
        Strategy::Lepa,
        Strategy::Rest,
        Strategy::RestEm,
        Strategy::Star,
        Strategy::NoPlan,
        Strategy::NoSelfReflection,
        Strategy::SilenceTokens,
        Strategy::Correction,
        Strategy::LongSolution,
        Strategy::LepaReinforce,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Lepa => "lepa",
            Strategy::Rest => "rest",
            Strategy::RestEm => "rest_em",
            Strategy::Star => "star",
            Strategy::NoPlan => "no_plan",
            Strategy::NoSelfReflection => "no_self_reflection",
            Strategy::SilenceTokens => "silence_tokens",
            Strategy::Correction => "correction",
            Strategy::LongSolution => "long_solution",
            Strategy::LepaReinforce => "lepa_reinforce",
        }
    }

    /// Strategies whose records pair a plan request with a plan turn.
    pub fn uses_plans(&self) -> bool {
        matches!(
            self,
            Strategy::Lepa | Strategy::LepaReinforce | Strategy::NoSelfReflection
        )
    }

    /// Strategies that keep failed attempts and label tuples with rewards.
    pub fn rewarded(&self) -> bool {
        matches!(self, Strategy::LepaReinforce)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Strategy::ALL.iter().map(|v| v.as_str()).collect();
                Error::Config(format!(
                    "unknown strategy '{s}' (expected one of: {})",
                    names.join(", ")
                ))
            })
    }
}

/// What to do when a plan fails the answer-leak check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LeakPolicy {
    /// Treat the attempt as failed (score 0); the retry consumes budget.
    #[default]
    Reject,
    /// Record the leak in metrics but score the attempt normally.
    Warn,
}

/// What to do with problems that carry no gold answer during generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GoldlessPolicy {
    /// Skip the problem and tally it in the iteration report.
    #[default]
    Skip,
    /// Abort the run: unlabeled data is a configuration mistake.
    Error,
}

/// Which checkpoint the next fine-tuning round starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Lineage {
    /// Continue from the previous iteration's output checkpoint.
    #[default]
    Previous,
    /// Restart from the initial checkpoint every iteration.
    Initial,
}

/// How strictly the final answer is located inside a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMode {
    /// Boxed marker, else a trailing `Final Answer:` line, else the last
    /// non-empty line.
    #[default]
    Lenient,
    /// Markers only; no last-line fallback.
    Strict,
}

fn default_iterations() -> u32 {
    1
}
fn default_max_reflections() -> u32 {
    4
}
fn default_samples() -> u32 {
    5
}
fn default_gen_temperature() -> f64 {
    0.5
}
fn default_eval_temperature() -> f64 {
    0.0005
}
fn default_learning_rate() -> f64 {
    3e-7
}
fn default_epochs() -> u32 {
    1
}
fn default_concurrency() -> usize {
    4
}
fn default_max_output_tokens() -> u32 {
    2048
}

/// Generation-loop parameters. Defaults mirror the reference experimental
/// setup: a budget of five trials per problem per iteration for every
/// strategy (one initial attempt plus `max_reflections` retries for chain
/// strategies, `samples_per_problem` draws for sampling strategies).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub strategy: Strategy,
    /// Number of generate-train-evaluate iterations in a loop run.
    pub iterations: u32,
    /// Maximum self-reflection (or modification) rounds after the first
    /// attempt.
    pub max_reflections: u32,
    /// Samples drawn per problem by rejection-sampling strategies.
    pub samples_per_problem: u32,
    /// Sampling temperature during data generation.
    pub gen_temperature: f64,
    /// Sampling temperature during evaluation.
    pub eval_temperature: f64,
    /// Learning rate forwarded to the external trainer via the manifest.
    pub learning_rate: f64,
    /// Training epochs forwarded to the external trainer via the manifest.
    pub epochs: u32,
    /// Worker-pool width for per-problem generation. Execution knob only:
    /// outputs are byte-identical for any value >= 1.
    pub concurrency_limit: usize,
    /// Base seed from which all per-call sampling seeds are derived.
    pub seed: u64,
    /// Completion-length cap sent to the backend.
    pub max_output_tokens: u32,
    pub leak_policy: LeakPolicy,
    pub goldless: GoldlessPolicy,
    /// Checkpoint lineage for the LEPA-family strategies (fixed for the
    /// baselines: rest-style retrains from the previous checkpoint, rest_em
    /// and star from the initial one).
    pub lepa_lineage: Lineage,
    pub extraction: ExtractionMode,
    /// Stop the loop after this many consecutive evaluations without an
    /// accuracy improvement. 0 disables early stopping.
    pub early_stop_patience: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            strategy: Strategy::Lepa,
            iterations: default_iterations(),
            max_reflections: default_max_reflections(),
            samples_per_problem: default_samples(),
            gen_temperature: default_gen_temperature(),
            eval_temperature: default_eval_temperature(),
            learning_rate: default_learning_rate(),
            epochs: default_epochs(),
            concurrency_limit: default_concurrency(),
            seed: 0,
            max_output_tokens: default_max_output_tokens(),
            leak_policy: LeakPolicy::default(),
            goldless: GoldlessPolicy::default(),
            lepa_lineage: Lineage::default(),
            extraction: ExtractionMode::default(),
            early_stop_patience: 0,
        }
    }
}

impl RunConfig {
    /// Per-problem trial budget: the hard cap on solution-generation calls
    /// any strategy may spend on one problem in one iteration.
    pub fn trial_budget(&self) -> u32 {
        match self.strategy {
            Strategy::Lepa
            | Strategy::LepaReinforce
            | Strategy::Star
            | Strategy::NoPlan => 1 + self.max_reflections,
            _ => self.samples_per_problem,
        }
    }

    /// Rejects parameter combinations the pipeline cannot run.
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if self.samples_per_problem == 0 {
            return Err(Error::Config("samples_per_problem must be >= 1".into()));
        }
        if self.concurrency_limit == 0 {
            return Err(Error::Config("concurrency_limit must be >= 1".into()));
        }
        for (name, v) in [
            ("gen_temperature", self.gen_temperature),
            ("eval_temperature", self.eval_temperature),
            ("learning_rate", self.learning_rate),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(Error::Config("max_output_tokens must be >= 1".into()));
        }
        Ok(())
    }

    /// Hash of every parameter that can change generated bytes. Excludes
    /// `concurrency_limit`, which only changes how fast the same bytes are
    /// produced; resumed runs check this hash before continuing.
    pub fn semantic_hash(&self) -> String {
        let v = serde_json::json!({
            "strategy": self.strategy.as_str(),
            "iterations": self.iterations,
            "max_reflections": self.max_reflections,
            "samples_per_problem": self.samples_per_problem,
            "gen_temperature": self.gen_temperature,
            "eval_temperature": self.eval_temperature,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "seed": self.seed,
            "max_output_tokens": self.max_output_tokens,
            "leak_policy": self.leak_policy,
            "goldless": self.goldless,
            "lepa_lineage": self.lepa_lineage,
            "extraction": self.extraction,
            "early_stop_patience": self.early_stop_patience,
        });
        let mut hasher = Sha256::new();
        hasher.update(v.to_string().as_bytes());
        hex::encode(hasher.finalize())
    }
}

/// Validates a single problem record, returning one message per violation.
/// An empty vector means the problem is usable.
pub fn validate_problem(problem: &Problem) -> Vec<String> {
    let mut violations = Vec::new();
    if problem.id.trim().is_empty() {
        violations.push("problem id is empty".to_string());
    }
    if problem.statement.trim().is_empty() {
        violations.push(format!("problem '{}' has an empty statement", problem.id));
    }
    match problem.task_kind {
        TaskKind::MultipleChoice => {
            if problem.choices.is_empty() {
                violations.push(format!(
                    "multiple-choice problem '{}' has no choices",
                    problem.id
                ));
            } else if let Some(gold) = &problem.gold_answer {
                if crate::scoring::identify_choice(gold, &problem.choices).is_none() {
                    violations.push(format!(
                        "gold answer '{}' of problem '{}' does not identify exactly one choice",
                        gold, problem.id
                    ));
                }
            }
        }
        TaskKind::Boolean => {
            if let Some(gold) = &problem.gold_answer {
                if crate::scoring::normalize_boolean(gold).is_none() {
                    violations.push(format!(
                        "gold answer '{}' of problem '{}' is not a yes/no value",
                        gold, problem.id
                    ));
                }
            }
        }
        TaskKind::FreeFormMath => {}
    }
    violations
}

/// Validates a whole problem set: per-problem checks plus id uniqueness.
pub fn validate_problem_set(problems: &[Problem]) -> Vec<String> {
    let mut violations: Vec<String> = problems.iter().flat_map(validate_problem).collect();
    let mut seen = BTreeSet::new();
    for p in problems {
        if !seen.insert(p.id.as_str()) {
            violations.push(format!("duplicate problem id '{}'", p.id));
        }
    }
    violations
}

/// [`validate_problem_set`] as a hard gate: any violation is an error.
pub fn ensure_valid_problem_set(problems: &[Problem]) -> Result<()> {
    let violations = validate_problem_set(problems);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(violations.join("; ")))
    }
}

/// Reads a line-delimited problem set. Each line is one JSON record with the
/// fields of [`Problem`]; blank lines are ignored. Parse failures report the
/// offending line number.
pub fn read_problems(path: &Path) -> Result<Vec<Problem>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut problems = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let problem: Problem = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            detail: e.to_string(),
        })?;
        problems.push(problem);
    }
    Ok(problems)
}
