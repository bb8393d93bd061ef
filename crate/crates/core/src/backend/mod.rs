//! Chat-completion backends: the blocking request/response contract, route
//! keys for deterministic scripting, request hashing, and seed derivation.
//!
//! Call stacking order is `transcript(cache(base))`: the transcript sees
//! every logical request (cache hits included), the cache sees only misses.

mod cache;
mod http;
mod mock;
mod transcript;

pub use cache::CachedBackend;
pub use http::HttpBackend;
pub use mock::MockBackend;
pub use transcript::{read_transcript, TranscriptBackend, TranscriptRecord};

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Speaker of a chat message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One turn of a chat conversation, in the common chat-completions shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Sampling controls forwarded with every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Per-call seed derived from the run seed (see [`derive_seed`]); also
    /// what keeps otherwise-identical sampling requests distinct in the
    /// response cache.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// A backend's answer to one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Completion tokens as reported by the backend, when it reports usage.
    pub reported_token_count: Option<u32>,
    pub backend_id: String,
    pub latency_ms: u64,
}

impl Completion {
    /// Reported token count when available, else a whitespace-token count of
    /// the text. The boolean is true when the fallback was used.
    pub fn token_count(&self) -> (u32, bool) {
        match self.reported_token_count {
            Some(n) => (n, false),
            None => (whitespace_token_count(&self.text), true),
        }
    }
}

/// Crude token estimate used when the backend reports no usage.
pub fn whitespace_token_count(text: &str) -> u32 {
    text.split_whitespace().count() as u32
}

/// Which kind of generation a request belongs to; part of the route key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Plan,
    Solution,
    Reflection,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Plan => "plan",
            Stage::Solution => "solution",
            Stage::Reflection => "reflection",
        }
    }
}

/// Deterministic address of one logical request: which problem, which stage,
/// which attempt. The scripted mock routes on it; the transcript records it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RouteKey {
    pub problem_id: String,
    pub stage: Stage,
    pub attempt: u32,
}

impl fmt::Display for RouteKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.problem_id, self.stage.as_str(), self.attempt)
    }
}

/// Builds the route key for a (problem, stage, attempt) triple.
pub fn route_key(problem_id: &str, stage: Stage, attempt: u32) -> RouteKey {
    RouteKey {
        problem_id: problem_id.to_string(),
        stage,
        attempt,
    }
}

/// One request as seen by a backend.
#[derive(Debug)]
pub struct ChatRequest<'a> {
    pub messages: &'a [ChatMessage],
    pub params: &'a SamplingParams,
    pub route: &'a RouteKey,
}

/// The blocking request/response contract every backend implements.
/// Implementations must be shareable across the generation worker pool.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion>;

    /// Stable identity string: `"mock"`, `"http:<model>"`, ... Scopes the
    /// response cache and is recorded in dataset provenance.
    fn id(&self) -> String;
}

/// Content hash of a request: everything that determines the response of a
/// well-behaved backend (messages and sampling parameters), nothing that
/// doesn't (route keys, timestamps). The response cache keys on it and the
/// transcript records it.
pub fn request_hash(messages: &[ChatMessage], params: &SamplingParams) -> String {
    let canonical = serde_json::json!({
        "messages": messages,
        "params": params,
    });
    let mut hasher = Sha256::new();
    hasher.update(canonical.to_string().as_bytes());
    hex::encode(hasher.finalize())
}

/// Derives the per-call sampling seed from the run seed and the call's
/// logical address. Distinct calls get distinct seeds, so the five
/// rejection-sampling draws stay independent even though the response cache
/// collapses byte-identical requests.
pub fn derive_seed(
    base_seed: u64,
    iteration: u32,
    problem_id: &str,
    stage: Stage,
    attempt: u32,
) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base_seed.to_le_bytes());
    hasher.update(iteration.to_le_bytes());
    hasher.update(problem_id.as_bytes());
    hasher.update(stage.as_str().as_bytes());
    hasher.update(attempt.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SamplingParams {
        SamplingParams {
            temperature: 0.5,
            max_output_tokens: 2048,
            seed: Some(1),
        }
    }

    #[test]
    fn route_keys_render_as_problem_stage_attempt() {
        let key = route_key("p1", Stage::Plan, 0);
        assert_eq!(key.to_string(), "p1/plan/0");
        assert_eq!(route_key("p1", Stage::Reflection, 3).to_string(), "p1/reflection/3");
    }

    #[test]
    fn request_hash_tracks_content_not_route() {
        let m1 = vec![ChatMessage::user("hello")];
        let m2 = vec![ChatMessage::user("hello!")];
        let p = params();
        assert_eq!(request_hash(&m1, &p), request_hash(&m1, &p));
        assert_ne!(request_hash(&m1, &p), request_hash(&m2, &p));
        let reseeded = SamplingParams {
            seed: Some(2),
            ..p.clone()
        };
        assert_ne!(request_hash(&m1, &p), request_hash(&m1, &reseeded));
    }

    #[test]
    fn derived_seeds_differ_across_every_component() {
        let base = derive_seed(0, 0, "p1", Stage::Solution, 0);
        assert_eq!(base, derive_seed(0, 0, "p1", Stage::Solution, 0));
        assert_ne!(base, derive_seed(1, 0, "p1", Stage::Solution, 0));
        assert_ne!(base, derive_seed(0, 1, "p1", Stage::Solution, 0));
        assert_ne!(base, derive_seed(0, 0, "p2", Stage::Solution, 0));
        assert_ne!(base, derive_seed(0, 0, "p1", Stage::Plan, 0));
        assert_ne!(base, derive_seed(0, 0, "p1", Stage::Solution, 1));
    }

    #[test]
    fn token_count_prefers_reported_and_falls_back_to_whitespace() {
        let mut c = Completion {
            text: "one two three".into(),
            reported_token_count: Some(7),
            backend_id: "mock".into(),
            latency_ms: 0,
        };
        assert_eq!(c.token_count(), (7, false));
        c.reported_token_count = None;
        assert_eq!(c.token_count(), (3, true));
    }
}
