//! Self-training data generation for math reasoning models.
//!
//! The pipeline turns a problem set and a chat-completion backend into
//! verified fine-tuning data, iteratively: generate candidate solutions
//! under a configurable strategy, keep only what a deterministic grader
//! verifies, export the survivors as training conversations, hand them to an
//! external trainer, and evaluate the checkpoint that comes back.
//!
//! The flagship strategy generates an anticipatory plan before each
//! solution and revises the plan through self-reflection when the solution
//! grades wrong; baselines (rejection sampling, gold-guided modification)
//! and ablation variants run under the same per-problem trial budget so
//! their datasets are comparable.
//!
//! Module map:
//! - [`model`]: problems, plans, solutions, attempts, tuples, run config.
//! - [`scoring`]: answer extraction, exact-rational grading, leak checks.
//! - [`backend`]: the chat trait plus http, mock, cache, transcript layers.
//! - [`prompts`]: template loading and prompt assembly.
//! - [`genstrat`]: the generation strategies themselves.
//! - [`trainer_io`]: dataset/export/manifest files for the trainer.
//! - [`orchestrator`]: the iteration loop, evaluation, state, resume.
//! - [`config`]: TOML application config and the backend builder.

pub mod backend;
pub mod config;
pub mod error;
pub mod genstrat;
pub mod model;
pub mod orchestrator;
pub mod prompts;
pub mod scoring;
pub mod trainer_io;

pub use backend::{
    derive_seed, route_key, CachedBackend, ChatBackend, ChatMessage, ChatRequest, Completion,
    HttpBackend, MockBackend, Role, SamplingParams, Stage, TranscriptBackend,
};
pub use config::{AppConfig, BackendConfig, BackendKind, PathsConfig, TrainerConfig};
pub use error::{Error, Result};
pub use genstrat::{
    insert_silence_markers, CallCounts, EvalResponse, Generator, ProblemOutcome,
    CORRECTION_BRIDGE, SILENCE_MARKER,
};
pub use model::{
    ensure_valid_problem_set, read_problems, validate_problem, validate_problem_set,
    AnticipatoryPlan, Attempt,
    ExtractionMode, GoldlessPolicy, IterationDataset, LeakPolicy, Lineage, Problem, Provenance,
    ReflectionTrace, RunConfig, Solution, Strategy, TaskKind, TraceOutcome, TrainingTuple,
};
pub use orchestrator::{
    curves_csv, evaluate, iteration_dir, parse_curves, run_iteration, run_trainer_hook,
    synthetic_checkpoint, CurveRow, EvalReport, IterationReport, IterationState, LoopRunner,
    LoopStatus, RunState, CURVES_FILE, DATASET_FILE, EXPORT_FILE, MANIFEST_FILE, REPORT_FILE,
    STATE_FILE,
};
pub use prompts::{PromptTemplate, TemplateSet};
pub use scoring::{
    answer_leak_check, extract_final_answer, f_cor, identify_choice, normalize_math,
    score_solution_text, NormalizedAnswer, ScoreOutcome,
};
pub use trainer_io::{
    lineage_base, read_dataset, read_export, read_manifest, to_export_record, to_sft_record,
    write_dataset, write_export, write_manifest, ExportHeader, ExportRecord, SftRecord,
    TrainingManifest, DATASET_KIND, SCHEMA_VERSION,
};
