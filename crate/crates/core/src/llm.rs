//! Chat-completion clients: an HTTP client for OpenAI-style endpoints and
//! scripted mocks for offline runs.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("request to {endpoint} timed out after {attempts} attempt(s)")]
    Timeout { endpoint: String, attempts: u32 },
    #[error("{endpoint} answered with status {status}: {body}")]
    Status { endpoint: String, status: u16, body: String },
    #[error("malformed reply from {endpoint}: {reason}")]
    Malformed { endpoint: String, reason: String },
    #[error("transport failure talking to {endpoint}: {reason}")]
    Transport { endpoint: String, reason: String },
    #[error("scripted model ran out of replies")]
    ScriptExhausted,
    #[error("no scripted reply matches the prompt")]
    NoScriptMatch,
    #[error("model configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub max_tokens: u32,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            max_tokens: 256,
            temperature: 0.0,
            seed: None,
        }
    }
}

pub trait LanguageModelClient: Send + Sync {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, LlmError>;
    fn model_name(&self) -> &str;
}

/// Endpoint settings shared by the chat client and the remote embedder.
#[derive(Clone, Debug)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub token: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub retries: u32,
    /// First backoff delay; doubled after each failed attempt.
    pub backoff: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            token: None,
            model: model.into(),
            timeout: Duration::from_secs(60),
            retries: 2,
            backoff: Duration::from_millis(500),
        }
    }

    /// Reads `<PREFIX>_ENDPOINT`, `_TOKEN`, `_MODEL`, `_TIMEOUT` (seconds)
    /// and `_RETRIES`. Only the endpoint is required.
    pub fn from_env(prefix: &str) -> Result<Self, LlmError> {
        let var = |key: &str| std::env::var(format!("{prefix}_{key}")).ok().filter(|v| !v.is_empty());
        let endpoint = var("ENDPOINT").ok_or_else(|| LlmError::Config(format!("{prefix}_ENDPOINT is not set")))?;
        let mut config = Self::new(endpoint, var("MODEL").unwrap_or_else(|| "default".into()));
        config.token = var("TOKEN");
        if let Some(t) = var("TIMEOUT") {
            let secs: f64 = t
                .parse()
                .ok()
                .filter(|s: &f64| *s > 0.0)
                .ok_or_else(|| LlmError::Config(format!("{prefix}_TIMEOUT must be a positive number, got {t:?}")))?;
            config.timeout = Duration::from_secs_f64(secs);
        }
        if let Some(r) = var("RETRIES") {
            config.retries = r
                .parse()
                .map_err(|_| LlmError::Config(format!("{prefix}_RETRIES must be a count, got {r:?}")))?;
        }
        Ok(config)
    }
}

pub const LLM_ENV_PREFIX: &str = "PROBTAB_LLM";
pub const EMBED_ENV_PREFIX: &str = "PROBTAB_EMBED";

enum Attempt {
    Retry(LlmError),
    Fail(LlmError),
}

/// POSTs a JSON body, retrying timeouts, connection failures, 429 and 5xx
/// with exponential backoff. Returns the parsed reply body.
pub(crate) fn post_json(http: &reqwest::blocking::Client, config: &RemoteConfig, body: &Value) -> Result<Value, LlmError> {
    let endpoint = &config.endpoint;
    let mut delay = config.backoff;
    let mut attempt = 0;
    loop {
        attempt += 1;
        let mut request = http.post(endpoint).json(body);
        if let Some(token) = &config.token {
            request = request.bearer_auth(token);
        }
        let outcome = match request.send() {
            Err(e) if e.is_timeout() => Attempt::Retry(LlmError::Timeout {
                endpoint: endpoint.clone(),
                attempts: attempt,
            }),
            Err(e) if e.is_connect() || e.is_request() => Attempt::Retry(LlmError::Transport {
                endpoint: endpoint.clone(),
                reason: e.to_string(),
            }),
            Err(e) => Attempt::Fail(LlmError::Transport {
                endpoint: endpoint.clone(),
                reason: e.to_string(),
            }),
            Ok(resp) => {
                let status = resp.status();
                match resp.text() {
                    Err(e) if e.is_timeout() => Attempt::Retry(LlmError::Timeout {
                        endpoint: endpoint.clone(),
                        attempts: attempt,
                    }),
                    Err(e) => Attempt::Retry(LlmError::Transport {
                        endpoint: endpoint.clone(),
                        reason: e.to_string(),
                    }),
                    Ok(text) if status.is_success() => {
                        return serde_json::from_str(&text).map_err(|e| LlmError::Malformed {
                            endpoint: endpoint.clone(),
                            reason: e.to_string(),
                        })
                    }
                    Ok(text) => {
                        let err = LlmError::Status {
                            endpoint: endpoint.clone(),
                            status: status.as_u16(),
                            body: text.chars().take(200).collect(),
                        };
                        if status.is_server_error() || status.as_u16() == 429 {
                            Attempt::Retry(err)
                        } else {
                            Attempt::Fail(err)
                        }
                    }
                }
            }
        };
        match outcome {
            Attempt::Fail(e) => return Err(e),
            Attempt::Retry(e) if attempt > config.retries => return Err(e),
            Attempt::Retry(e) => {
                log::warn!("attempt {attempt} failed ({e}); retrying in {delay:?}");
                thread::sleep(delay);
                delay *= 2;
            }
        }
    }
}

pub(crate) fn http_client(config: &RemoteConfig) -> Result<reqwest::blocking::Client, LlmError> {
    reqwest::blocking::Client::builder()
        .timeout(config.timeout)
        .build()
        .map_err(|e| LlmError::Config(e.to_string()))
}

pub struct RemoteClient {
    config: RemoteConfig,
    http: reqwest::blocking::Client,
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Result<Self, LlmError> {
        let http = http_client(&config)?;
        Ok(Self { config, http })
    }

    pub fn from_env() -> Result<Self, LlmError> {
        Self::new(RemoteConfig::from_env(LLM_ENV_PREFIX)?)
    }
}

impl LanguageModelClient for RemoteClient {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, LlmError> {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }
        let reply = post_json(&self.http, &self.config, &body)?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::Malformed {
                endpoint: self.config.endpoint.clone(),
                reason: "no choices[0].message.content string".into(),
            })
    }

    fn model_name(&self) -> &str {
        &self.config.model
    }
}

enum Script {
    Keyed(Vec<(String, String)>),
    Sequence(Mutex<VecDeque<String>>),
    Constant(String),
}

/// Deterministic stand-in for a model.
///
/// Keyed scripts answer with the reply whose key is the longest substring of
/// the prompt (earliest entry wins a tie). Sequence scripts hand out replies
/// in order and fail once exhausted.
pub struct ScriptedMock {
    script: Script,
    name: String,
}

impl ScriptedMock {
    pub fn keyed<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Self {
        Self {
            script: Script::Keyed(pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect()),
            name: "mock-keyed".into(),
        }
    }

    pub fn sequence<V: Into<String>>(replies: impl IntoIterator<Item = V>) -> Self {
        Self {
            script: Script::Sequence(Mutex::new(replies.into_iter().map(Into::into).collect())),
            name: "mock-sequence".into(),
        }
    }

    pub fn constant(reply: impl Into<String>) -> Self {
        Self {
            script: Script::Constant(reply.into()),
            name: "mock-constant".into(),
        }
    }

    /// JSON object → keyed script, JSON array of strings → sequence.
    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        let bad = |reason: &str| LlmError::Config(format!("script: {reason}"));
        match serde_json::from_str::<Value>(text).map_err(|e| bad(&e.to_string()))? {
            Value::Object(map) => {
                let pairs = map
                    .into_iter()
                    .map(|(k, v)| v.as_str().map(|s| (k, s.to_string())).ok_or_else(|| bad("replies must be strings")))
                    .collect::<Result<Vec<_>, _>>()?;
                if pairs.is_empty() {
                    return Err(bad("empty script"));
                }
                Ok(Self::keyed(pairs))
            }
            Value::Array(items) => {
                let replies = items
                    .into_iter()
                    .map(|v| v.as_str().map(str::to_string).ok_or_else(|| bad("replies must be strings")))
                    .collect::<Result<Vec<_>, _>>()?;
                if replies.is_empty() {
                    return Err(bad("empty script"));
                }
                Ok(Self::sequence(replies))
            }
            _ => Err(bad("expected an object or an array")),
        }
    }
}

impl LanguageModelClient for ScriptedMock {
    fn complete(&self, prompt: &str, _params: &CompletionParams) -> Result<String, LlmError> {
        match &self.script {
            Script::Constant(reply) => Ok(reply.clone()),
            Script::Sequence(queue) => queue
                .lock()
                .expect("script lock poisoned")
                .pop_front()
                .ok_or(LlmError::ScriptExhausted),
            Script::Keyed(pairs) => pairs
                .iter()
                .filter(|(k, _)| prompt.contains(k.as_str()))
                .fold(None::<&(String, String)>, |best, pair| match best {
                    Some(b) if b.0.len() >= pair.0.len() => Some(b),
                    _ => Some(pair),
                })
                .map(|(_, v)| v.clone())
                .ok_or(LlmError::NoScriptMatch),
        }
    }

    fn model_name(&self) -> &str {
        &self.name
    }
}
