//! Scripted mock backend for deterministic offline runs and tests.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{whitespace_token_count, ChatBackend, ChatRequest, Completion};
use crate::error::{Error, Result};

/// One line of a mock script file.
#[derive(Debug, Serialize, Deserialize)]
struct ScriptLine {
    route_key: String,
    response_text: String,
}

/// A backend that answers from a fixed route-key -> response map and fails
/// loudly on any unscripted request. Requesting a missing key is almost
/// always a test-authoring bug, so the error names the key.
#[derive(Debug, Default)]
pub struct MockBackend {
    responses: HashMap<String, String>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a response; chainable for test setup.
    pub fn with(mut self, route_key: &str, response_text: &str) -> Self {
        self.insert(route_key, response_text);
        self
    }

    pub fn insert(&mut self, route_key: &str, response_text: &str) {
        self.responses
            .insert(route_key.to_string(), response_text.to_string());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Loads a script: one JSON record per line with fields `route_key` and
    /// `response_text`. Blank lines are ignored; later lines win on
    /// duplicate keys.
    pub fn from_script_path(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        Self::from_script_reader(BufReader::new(file), &path.display().to_string())
    }

    /// Parses script content from a string; used by tests.
    pub fn from_script_str(content: &str) -> Result<Self> {
        Self::from_script_reader(BufReader::new(content.as_bytes()), "<inline script>")
    }

    fn from_script_reader(reader: impl BufRead, origin: &str) -> Result<Self> {
        let mut backend = MockBackend::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ScriptLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: origin.to_string(),
                line: idx + 1,
                detail: e.to_string(),
            })?;
            backend.insert(&parsed.route_key, &parsed.response_text);
        }
        Ok(backend)
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion> {
        let key = request.route.to_string();
        let text = self
            .responses
            .get(&key)
            .ok_or(Error::ScriptMiss { key })?;
        Ok(Completion {
            text: text.clone(),
            reported_token_count: Some(whitespace_token_count(text)),
            backend_id: self.id(),
            latency_ms: 0,
        })
    }

    fn id(&self) -> String {
        "mock".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{route_key, ChatMessage, SamplingParams, Stage};

    fn request<'a>(
        messages: &'a [ChatMessage],
        params: &'a SamplingParams,
        route: &'a super::super::RouteKey,
    ) -> ChatRequest<'a> {
        ChatRequest {
            messages,
            params,
            route,
        }
    }

    #[test]
    fn scripted_keys_answer_and_missing_keys_fail_with_the_key_name() {
        let backend = MockBackend::new().with("p1/plan/0", "think first");
        let messages = vec![ChatMessage::user("hi")];
        let params = SamplingParams {
            temperature: 0.5,
            max_output_tokens: 64,
            seed: None,
        };

        let hit = route_key("p1", Stage::Plan, 0);
        let completion = backend.complete(&request(&messages, &params, &hit)).unwrap();
        assert_eq!(completion.text, "think first");
        assert_eq!(completion.reported_token_count, Some(2));

        let miss = route_key("p1", Stage::Solution, 0);
        match backend.complete(&request(&messages, &params, &miss)) {
            Err(Error::ScriptMiss { key }) => assert_eq!(key, "p1/solution/0"),
            other => panic!("expected ScriptMiss, got {other:?}"),
        }
    }

    #[test]
    fn scripts_parse_from_line_delimited_json() {
        let script = concat!(
            "{\"route_key\":\"a/plan/0\",\"response_text\":\"one\"}\n",
            "\n",
            "{\"route_key\":\"a/solution/0\",\"response_text\":\"two words\"}\n",
        );
        let backend = MockBackend::from_script_str(script).unwrap();
        assert_eq!(backend.len(), 2);
    }

    #[test]
    fn malformed_script_lines_report_their_line_number() {
        let err = MockBackend::from_script_str("{\"route_key\":\"a\"}\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
