//! Application configuration: TOML file layout, environment overrides, and
//! the backend builder that assembles the transcript/cache/base stack.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use crate::backend::{CachedBackend, ChatBackend, HttpBackend, MockBackend, TranscriptBackend};
use crate::error::{Error, Result};
use crate::model::RunConfig;
use crate::prompts::TemplateSet;

/// Environment variable that overrides `backend.url`.
pub const ENV_BACKEND_URL: &str = "LEPA_BACKEND_URL";
/// Environment variable that overrides `backend.model`.
pub const ENV_MODEL: &str = "LEPA_MODEL";
/// Default environment variable consulted for the API key.
pub const DEFAULT_API_KEY_ENV: &str = "LEPA_API_KEY";

/// Top-level configuration file: `[run]`, `[backend]`, `[paths]`, `[trainer]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    #[serde(default)]
    pub run: RunConfig,
    pub backend: BackendConfig,
    pub paths: PathsConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
}

/// Which backend to talk to and how.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Full chat-completion endpoint URL (http backend).
    #[serde(default)]
    pub url: Option<String>,
    /// Model name sent with each request (http backend).
    #[serde(default)]
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    /// Scripted responses, one JSON object per line (mock backend).
    #[serde(default)]
    pub script: Option<PathBuf>,
    /// Sleep before each retry of a retryable failure, in milliseconds.
    /// The number of entries is the number of retries.
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: Vec<u64>,
    /// Persist responses under `<run_dir>/cache` and reuse them.
    #[serde(default = "default_cache")]
    pub cache: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
}

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

fn default_backoff() -> Vec<u64> {
    vec![1000, 2000, 4000]
}

fn default_cache() -> bool {
    true
}

/// Input and output locations.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Training problems, one JSON object per line.
    pub problems: PathBuf,
    /// Held-out problems evaluated after each iteration.
    #[serde(default)]
    pub test_set: Option<PathBuf>,
    /// Directory of prompt template files; built-in templates when absent.
    #[serde(default)]
    pub templates: Option<PathBuf>,
    /// Where iteration artifacts, cache, transcript, and state live.
    pub run_dir: PathBuf,
}

/// Fine-tuning integration. Without a hook, training is skipped and
/// checkpoint names are advanced synthetically so the loop stays testable.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    /// Shell command run after each export; `{manifest}` expands to the
    /// manifest path, and the last stdout line names the new checkpoint.
    #[serde(default)]
    pub hook: Option<String>,
    /// Checkpoint the first iteration generates from.
    #[serde(default = "default_initial_checkpoint")]
    pub initial_checkpoint: String,
}

fn default_initial_checkpoint() -> String {
    "initial".to_string()
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            hook: None,
            initial_checkpoint: default_initial_checkpoint(),
        }
    }
}

impl AppConfig {
    /// Loads and validates a TOML config file, then applies environment
    /// overrides (`LEPA_BACKEND_URL`, `LEPA_MODEL`).
    pub fn load(path: &Path) -> Result<AppConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config: AppConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.apply_env_overrides();
        config.validate()?;
        Ok(config)
    }

    /// Re-checks the whole configuration; call after mutating a loaded one.
    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        self.validate_backend()
    }

    fn apply_env_overrides(&mut self) {
        if let Ok(url) = env::var(ENV_BACKEND_URL) {
            self.backend.url = Some(url);
        }
        if let Ok(model) = env::var(ENV_MODEL) {
            self.backend.model = Some(model);
        }
    }

    fn validate_backend(&self) -> Result<()> {
        match self.backend.kind {
            BackendKind::Mock => {
                if self.backend.script.is_none() {
                    return Err(Error::Config(
                        "backend.kind = \"mock\" requires backend.script".into(),
                    ));
                }
            }
            BackendKind::Http => {
                if self.backend.url.is_none() {
                    return Err(Error::Config(
                        "backend.kind = \"http\" requires backend.url".into(),
                    ));
                }
                if self.backend.model.is_none() {
                    return Err(Error::Config(
                        "backend.kind = \"http\" requires backend.model".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// The API key from the configured environment variable, if set.
    pub fn api_key(&self) -> Option<String> {
        env::var(&self.backend.api_key_env).ok()
    }

    /// Templates from `paths.templates`, or the built-in set.
    pub fn load_templates(&self) -> Result<TemplateSet> {
        match &self.paths.templates {
            Some(dir) => TemplateSet::load_dir(dir),
            None => Ok(TemplateSet::builtin()),
        }
    }

    /// Builds the backend stack: transcript logging wraps the cache, which
    /// wraps the base backend. `model_override` rebinds the http backend to
    /// a different checkpoint (used to evaluate freshly trained models); the
    /// mock backend ignores it.
    pub fn make_backend(&self, model_override: Option<&str>) -> Result<Box<dyn ChatBackend>> {
        let base: Box<dyn ChatBackend> = match self.backend.kind {
            BackendKind::Mock => {
                let script = self.backend.script.as_ref().expect("validated");
                Box::new(MockBackend::from_script_path(script)?)
            }
            BackendKind::Http => {
                let url = self.backend.url.as_ref().expect("validated");
                let model = model_override
                    .map(str::to_string)
                    .or_else(|| self.backend.model.clone())
                    .expect("validated");
                let backoff = self
                    .backend
                    .retry_backoff_ms
                    .iter()
                    .map(|ms| Duration::from_millis(*ms))
                    .collect();
                Box::new(
                    HttpBackend::new(url, model)
                        .with_api_key(self.api_key())
                        .with_backoff(backoff),
                )
            }
        };
        let cached: Box<dyn ChatBackend> = if self.backend.cache {
            Box::new(CachedBackend::new(base, &self.paths.run_dir.join("cache"))?)
        } else {
            base
        };
        let transcript =
            TranscriptBackend::new(cached, &self.paths.run_dir.join("transcript.jsonl"))?;
        Ok(Box::new(transcript))
    }
}
