//! Optional external subject counter.
//!
//! The service receives `{"instruction": ..., "prompt": ...}` and must answer
//! with a body holding a single integer. Anything else counts as a failure,
//! and [`SubjectCounter::count`] falls back to the rule-based parser.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use mpgen_core::textcond::{clamp_subject_count, subject_count, SUBJECT_COUNT_INSTRUCTION};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LlmConfig {
    pub endpoint: String,
    /// Environment variable holding the bearer token; unset means no token.
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub timeout: Duration,
}

impl LlmConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key_env: "MPGEN_LLM_API_KEY".into(),
            max_in_flight: 4,
            timeout: Duration::from_secs(30),
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(limit: usize) -> Self {
        Self {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            limit: limit.max(1),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Strict response schema: optional surrounding whitespace around one
/// base-10 integer.
pub fn parse_count(body: &str) -> Result<i64> {
    let t = body.trim();
    let digits = t.strip_prefix(['-', '+']).unwrap_or(t);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(CliError::Llm(format!("response is not a single integer: {body:?}")));
    }
    t.parse::<i64>()
        .map_err(|_| CliError::Llm(format!("integer out of range: {body:?}")))
}

#[derive(Debug)]
pub struct SubjectCounter {
    config: LlmConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl SubjectCounter {
    pub fn new(config: LlmConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        let gate = Gate::new(config.max_in_flight);
        Self { config, agent, gate }
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    /// One request; the answer is clamped to the supported range.
    pub fn query(&self, prompt: &str) -> Result<usize> {
        let _permit = self.gate.acquire();
        let body = serde_json::json!({
            "instruction": SUBJECT_COUNT_INSTRUCTION,
            "prompt": prompt,
        });
        let mut request = self.agent.post(&self.config.endpoint);
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            if !key.is_empty() {
                request = request.header("Authorization", &format!("Bearer {key}"));
            }
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| CliError::Llm(e.to_string()))?;
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| CliError::Llm(e.to_string()))?;
        Ok(clamp_subject_count(parse_count(&text)?))
    }

    /// [`Self::query`], or the rule-based count when the service fails.
    pub fn count(&self, prompt: &str) -> usize {
        self.query(prompt).unwrap_or_else(|_| subject_count(prompt))
    }
}
