//! Chat-completion client boundary.
//!
//! Two backends sit behind [`ChatBackend`]: a chat-completions style HTTP
//! endpoint on the local network and a scripted mock that answers from a
//! fixture file keyed by a content hash of the request. [`Gateway`] wraps
//! either one with request validation, an in-flight limit and output-size
//! enforcement.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{self, CorpusError};

pub const DEFAULT_EXTRACTION_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_VERIFIER_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_OUTPUT_CHARS: usize = 32_768;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_content: String,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub max_output_chars: usize,
}

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, user_content: impl Into<String>) -> Self {
        ChatRequest {
            system_prompt: system_prompt.into(),
            user_content: user_content.into(),
            temperature: DEFAULT_EXTRACTION_TEMPERATURE,
            seed: None,
            max_output_chars: DEFAULT_MAX_OUTPUT_CHARS,
        }
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.system_prompt.is_empty() || self.user_content.is_empty() {
            return Err(GatewayError::InvalidRequest("system prompt and user content must be non-empty".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest(format!("temperature {} is not a non-negative real", self.temperature)));
        }
        if self.max_output_chars == 0 {
            return Err(GatewayError::InvalidRequest("max_output_chars must be positive".into()));
        }
        Ok(())
    }

    /// Content hash used to key scripted-mock fixtures.
    pub fn fixture_key(&self) -> String {
        fixture_key(&self.system_prompt, &self.user_content)
    }
}

/// SHA-256 over the length-prefixed system prompt followed by the user content.
pub fn fixture_key(system_prompt: &str, user_content: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update((system_prompt.len() as u64).to_le_bytes());
    hasher.update(system_prompt.as_bytes());
    hasher.update(user_content.as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub text: String,
    pub backend_id: String,
    pub latency: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpEndpoint,
    ScriptedMock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_path: Option<PathBuf>,
    pub timeout_ms: u64,
    pub retries: u32,
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
}

impl BackendConfig {
    pub fn http(endpoint_url: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::HttpEndpoint,
            endpoint_url: Some(endpoint_url.into()),
            model_name: None,
            fixture_path: None,
            timeout_ms: 120_000,
            retries: 2,
            backoff_base_ms: 250,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }

    pub fn scripted_mock(fixture_path: impl Into<PathBuf>) -> Self {
        BackendConfig {
            kind: BackendKind::ScriptedMock,
            endpoint_url: None,
            model_name: None,
            fixture_path: Some(fixture_path.into()),
            timeout_ms: 1_000,
            retries: 0,
            backoff_base_ms: 0,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.kind {
            BackendKind::HttpEndpoint if self.endpoint_url.as_deref().is_none_or(str::is_empty) => {
                Err(GatewayError::InvalidConfig("http_endpoint requires endpoint_url".into()))
            }
            BackendKind::ScriptedMock if self.fixture_path.is_none() => {
                Err(GatewayError::InvalidConfig("scripted_mock requires fixture_path".into()))
            }
            _ if self.max_in_flight == 0 => Err(GatewayError::InvalidConfig("max_in_flight must be positive".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport failure after {attempts} attempt(s): {last}")]
    TransportFailure { attempts: u32, last: String },
    #[error("backend returned an unusable response: {0}")]
    BadResponse(String),
    #[error("scripted mock has no fixture for key {key} (seed {seed:?})")]
    MissingFixture { key: String, seed: Option<u64> },
    #[error("fixture file: {0}")]
    Fixture(String),
    #[error("completion has {len} chars, over the limit of {max}")]
    OversizeOutput { len: usize, max: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub trait ChatBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError>;
}

/// One line of a mock fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub key: String,
    pub response: String,
    /// Restricts the entry to requests carrying this seed. Entries without a
    /// seed answer any request with the same key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl FixtureEntry {
    pub fn new(request: &ChatRequest, response: impl Into<String>) -> Self {
        FixtureEntry {
            key: request.fixture_key(),
            response: response.into(),
            seed: None,
        }
    }

    /// Entry that only answers the request's exact seed.
    pub fn seeded(request: &ChatRequest, response: impl Into<String>) -> Self {
        FixtureEntry {
            seed: request.seed,
            ..FixtureEntry::new(request, response)
        }
    }
}

/// Offline backend answering from a fixture table.
#[derive(Debug, Clone, Default)]
pub struct ScriptedMock {
    table: HashMap<(String, Option<u64>), String>,
    backend_id: String,
}

impl ScriptedMock {
    pub fn from_entries(entries: impl IntoIterator<Item = FixtureEntry>) -> Result<Self, GatewayError> {
        let mut table = HashMap::new();
        for e in entries {
            let slot = (e.key, e.seed);
            if table.contains_key(&slot) {
                return Err(GatewayError::Fixture(format!("duplicate fixture for key {} seed {:?}", slot.0, slot.1)));
            }
            table.insert(slot, e.response);
        }
        Ok(ScriptedMock {
            table,
            backend_id: "scripted_mock".to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        Self::from_entries(corpus::read_jsonl::<FixtureEntry>(path)?)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl ChatBackend for ScriptedMock {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let key = request.fixture_key();
        self.table
            .get(&(key.clone(), request.seed))
            .or_else(|| self.table.get(&(key.clone(), None)))
            .cloned()
            .ok_or(GatewayError::MissingFixture { key, seed: request.seed })
    }
}

pub fn write_fixtures(path: &Path, entries: &[FixtureEntry]) -> Result<(), GatewayError> {
    Ok(corpus::write_jsonl(path, entries)?)
}

/// Chat-completions client for a local inference server.
pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    model: Option<String>,
    retries: u32,
    backoff_base: Duration,
    backend_id: String,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let url = config.endpoint_url.clone().unwrap_or_default();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        let backend_id = match &config.model_name {
            Some(m) => format!("http:{url}#{m}"),
            None => format!("http:{url}"),
        };
        Ok(HttpBackend {
            agent,
            url,
            model: config.model_name.clone(),
            retries: config.retries,
            backoff_base: Duration::from_millis(config.backoff_base_ms),
            backend_id,
        })
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.model.as_deref().unwrap_or("default"),
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_content},
            ],
            "temperature": request.temperature,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

enum Attempt {
    Done(Result<String, GatewayError>),
    Retry { timed_out: bool, message: String },
}

impl HttpBackend {
    fn attempt(&self, body: &Value) -> Attempt {
        match self.agent.post(&self.url).send_json(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                if status >= 500 {
                    return Attempt::Retry {
                        timed_out: false,
                        message: format!("HTTP {status}"),
                    };
                }
                if status >= 400 {
                    return Attempt::Done(Err(GatewayError::BadResponse(format!("HTTP {status}"))));
                }
                let parsed = resp
                    .body_mut()
                    .read_json::<Value>()
                    .map_err(|e| GatewayError::BadResponse(e.to_string()))
                    .and_then(|v| {
                        v.pointer("/choices/0/message/content")
                            .and_then(Value::as_str)
                            .map(str::to_string)
                            .ok_or_else(|| GatewayError::BadResponse("missing choices[0].message.content".into()))
                    });
                Attempt::Done(parsed)
            }
            Err(ureq::Error::Timeout(t)) => Attempt::Retry {
                timed_out: true,
                message: format!("timeout ({t})"),
            },
            Err(e) => Attempt::Retry {
                timed_out: false,
                message: e.to_string(),
            },
        }
    }
}

impl ChatBackend for HttpBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let body = self.body(request);
        let attempts = self.retries + 1;
        let mut last = String::new();
        let mut all_timeouts = true;
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.backoff_base * 2u32.saturating_pow(attempt - 1));
            }
            match self.attempt(&body) {
                Attempt::Done(result) => return result,
                Attempt::Retry { timed_out, message } => {
                    log::warn!("{}: attempt {} failed: {message}", self.backend_id, attempt + 1);
                    all_timeouts &= timed_out;
                    last = message;
                }
            }
        }
        if all_timeouts {
            Err(GatewayError::Timeout { attempts })
        } else {
            Err(GatewayError::TransportFailure { attempts, last })
        }
    }
}

#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct PermitGuard<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Permits {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        PermitGuard(self)
    }
}

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// A backend plus the limits every call goes through. Cheap to clone and
/// safe to share across worker threads.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    permits: Arc<Permits>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, max_in_flight: usize) -> Self {
        Gateway {
            backend,
            permits: Arc::new(Permits::new(max_in_flight.max(1))),
        }
    }

    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let backend: Arc<dyn ChatBackend> = match config.kind {
            BackendKind::HttpEndpoint => Arc::new(HttpBackend::new(config)?),
            BackendKind::ScriptedMock => {
                let path = config.fixture_path.as_deref().expect("validated");
                Arc::new(ScriptedMock::load(path)?)
            }
        };
        Ok(Gateway::new(backend, config.max_in_flight))
    }

    pub fn backend_id(&self) -> &str {
        self.backend.backend_id()
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let started = Instant::now();
        let text = {
            let _permit = self.permits.acquire();
            self.backend.complete(request)?
        };
        let len = text.chars().count();
        if len > request.max_output_chars {
            return Err(GatewayError::OversizeOutput {
                len,
                max: request.max_output_chars,
            });
        }
        Ok(ChatResponse {
            text,
            backend_id: self.backend.backend_id().to_string(),
            latency: started.elapsed(),
        })
    }
}

/// One-shot completion against a backend built from `config`.
pub fn complete(request: &ChatRequest, config: &BackendConfig) -> Result<ChatResponse, GatewayError> {
    Gateway::from_config(config)?.complete(request)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("narrative text is empty")]
    EmptyNarrative,
    #[error("candidate {index} in {list} is an empty string")]
    EmptyCandidateString { list: &'static str, index: usize },
}

pub const EXTRACTION_SYSTEM_PROMPT: &str = "\
Role: You are an expert linguist specializing in detecting personally identifiable information (PII) in crash narratives.

Context: Your task is to find and tag any Personally Identifiable Information (PII) using the special identifiers below, based on the PII category. If no PII is found, return the input text unchanged.

PII categories and tagging rules:
- Name: tag with @@@Text@@@
  Example: @@@John Smith@@@
- Phone Number: tag with &&&Text&&&
  Example: &&&608-733-8366&&&
- Home Address: tag with $$$Text$$$
  Example: $$$123 Elm Street$$$
  Do not tag crash-location addresses. Only tag home addresses based on context.
- Email Address: tag with %%%Text%%%
  Example: %%%jsmith@gmail.com%%%
- Alphanumeric Identifiers, including driver's license, SSN, and license plate number: tag with ^^^Text^^^
  Example: ^^^ABC1234^^^

The input is:";

pub const VERIFIER_SYSTEM_PROMPT: &str = "\
Role: You are a strict PII extraction verifier for crash narratives.

Context: You will be given:
- the raw narrative;
- extracted candidates for HOME ADDRESS and ALPHANUMERIC IDENTIFIERS.

Your job is to decide for each provided candidate: KEEP, DROP, or UNCERTAIN.

Critical output format rules (must follow exactly):
- home_address_reviews must contain exactly one review per item in home_address_candidates, in the same order.
- For each i, home_address_reviews[i].text must equal home_address_candidates[i] exactly (character-for-character).
- If home_address_candidates is empty, home_address_reviews must be an empty list [].
- alphanumeric_reviews must contain exactly one review per item in alphanumeric_candidates, in the same order.
- For each i, alphanumeric_reviews[i].text must equal alphanumeric_candidates[i] exactly.
- If alphanumeric_candidates is empty, alphanumeric_reviews must be [].
- Do not add extra reviews. Do not repeat a candidate. Do not output reviews for text that is not in the candidate lists.
- Never output an empty string as a candidate text.

Hard rules:
- Do not invent any text not present in the narrative.
- For KEEP or DROP, you must include evidence copied verbatim from the narrative (short snippet).
- If you cannot find supporting evidence, mark UNCERTAIN and set evidence to \"\".

Guidance:
- HOME ADDRESS: keep only the true residence or mailing address of a person. Drop crash-location addresses such as intersections, highways, mile markers, and scene locations.
- ALPHANUMERIC IDENTIFIERS: keep only personal identifiers such as license plates, driver's license or ID numbers, and SSNs. Drop roadway IDs (e.g., I-94, US-12), report or case numbers, incident IDs, tag numbers, and unit numbers unless clearly tied to a personal identifier.

Output JSON only, matching the schema exactly.";

const VERIFIER_SCHEMA_LINE: &str = "Schema: {\"home_address_reviews\": [{\"text\": string, \"decision\": \"KEEP\"|\"DROP\"|\"UNCERTAIN\", \"reason\": string, \"evidence\": string}], \"alphanumeric_reviews\": [same shape]}";

pub fn build_extraction_prompt(narrative_text: &str) -> Result<ChatRequest, PromptError> {
    if narrative_text.is_empty() {
        return Err(PromptError::EmptyNarrative);
    }
    Ok(ChatRequest::new(EXTRACTION_SYSTEM_PROMPT, narrative_text))
}

fn push_candidates(out: &mut String, label: &'static str, candidates: &[String]) -> Result<(), PromptError> {
    out.push_str(&format!("{label} ({}):\n", candidates.len()));
    if candidates.is_empty() {
        out.push_str("[]\n");
    }
    for (index, c) in candidates.iter().enumerate() {
        if c.is_empty() {
            return Err(PromptError::EmptyCandidateString { list: label, index });
        }
        let quoted = serde_json::to_string(c).expect("string serialization is infallible");
        out.push_str(&format!("[{index}] {quoted}\n"));
    }
    Ok(())
}

/// Verifier request. Candidates are listed one per line with their index and
/// JSON-quoted text; the raw narrative follows last and runs to the end.
pub fn build_verifier_prompt(
    narrative_text: &str,
    home_candidates: &[String],
    alnum_candidates: &[String],
) -> Result<ChatRequest, PromptError> {
    let mut user = String::new();
    user.push_str(VERIFIER_SCHEMA_LINE);
    user.push_str("\n\n");
    push_candidates(&mut user, "home_address_candidates", home_candidates)?;
    push_candidates(&mut user, "alphanumeric_candidates", alnum_candidates)?;
    user.push_str("\nnarrative:\n");
    user.push_str(narrative_text);
    Ok(ChatRequest::new(VERIFIER_SYSTEM_PROMPT, user).with_temperature(DEFAULT_VERIFIER_TEMPERATURE))
}

/// Appends validator feedback to a verifier request for another attempt.
pub fn with_repair_feedback(request: &ChatRequest, attempt: usize, error: &str) -> ChatRequest {
    let mut repaired = request.clone();
    repaired.user_content.push_str(&format!(
        "\n\nAttempt {attempt} was rejected by the validator: {error}\nOutput JSON only, matching the schema exactly."
    ));
    repaired
}
