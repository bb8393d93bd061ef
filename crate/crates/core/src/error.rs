//! Crate-wide error type and result alias.

use thiserror::Error;

/// All failure modes surfaced by the pipeline.
///
/// Per-problem generation failures are recorded in iteration reports rather
/// than aborting a run; the variants here become fatal only at the points
/// documented on each orchestrator entry point.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration, problem data, or CLI usage.
    #[error("configuration error: {0}")]
    Config(String),

    /// A template file was not found in the configured template directory.
    #[error("template '{name}' not found in template directory")]
    TemplateMissing { name: String },

    /// The scripted mock backend has no entry for a requested route key.
    /// Almost always a test-authoring bug: the script is missing a line.
    #[error("mock script has no entry for route key '{key}'")]
    ScriptMiss { key: String },

    /// The HTTP backend gave up after exhausting its retry budget.
    #[error("backend unavailable after {attempts} attempt(s): {detail}")]
    BackendUnavailable { attempts: u32, detail: String },

    /// The backend answered, but the body was not a chat completion we can use.
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),

    /// A cached response failed its integrity check on read.
    #[error("response cache corrupt at {path}: {detail}")]
    CacheCorrupt { path: String, detail: String },

    /// Scoring was asked to grade a problem that carries no gold answer.
    #[error("problem '{problem_id}' has no gold answer")]
    MissingGoldAnswer { problem_id: String },

    /// A training tuple references a problem id absent from the problem set.
    #[error("no problem with id '{problem_id}' in the problem set")]
    MissingProblem { problem_id: String },

    /// Evaluation was invoked with an empty test set.
    #[error("test set is empty")]
    EmptyTestSet,

    /// The external trainer hook exited non-zero. The run state on disk
    /// remains resumable; rerunning with `--resume` retries the hook.
    #[error("trainer hook failed with exit status {status}: {detail}")]
    TrainerHookFailed { status: i32, detail: String },

    /// A dataset or export file declares a schema version we do not support.
    #[error("unsupported schema version '{found}' (supported: {supported})")]
    SchemaMismatch { found: String, supported: String },

    /// A line-delimited input file could not be parsed.
    #[error("parse error at {path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    /// Every attempted problem in an iteration failed with a backend error,
    /// so continuing would only burn the retry budget again.
    #[error("backend exhausted: every attempted problem failed with a backend error")]
    BackendExhausted,

    /// A rewarded tuple reached a supervised-only export path.
    #[error("tuple for problem '{0}' carries a reward; expected a supervised tuple")]
    UnexpectedReward(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    /// Transport-level HTTP failure (connection refused, timeout, ...).
    #[error("http transport error: {0}")]
    Http(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures that indicate the backend itself is unreachable or
    /// broken, as opposed to a script gap or a data problem.
    pub fn is_backend_unavailable(&self) -> bool {
        matches!(
            self,
            Error::BackendUnavailable { .. } | Error::Http(_) | Error::BackendExhausted
        )
    }
}
