//! Text-generation backends. The decoder and bench harness only see
//! [`TextBackend`]; concrete implementations are a scripted mock, a closure
//! backend, a replay store of recorded fixtures, a recorder wrapping any other
//! backend, and an HTTP client for chat-completion style servers.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("no replay fixture for key {key}")]
    FixtureMissing { key: String },
    #[error("mock script exhausted")]
    ScriptExhausted,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed backend response: {0}")]
    InvalidResponse(String),
    #[error("fixture io at {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub context: String,
    pub stop: Vec<String>,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl GenerationRequest {
    pub fn new(context: impl Into<String>) -> Result<Self, BackendError> {
        let context = context.into();
        if context.is_empty() {
            return Err(BackendError::InvalidRequest("empty context".into()));
        }
        Ok(Self {
            context,
            stop: vec!["\n".to_string(), ")".to_string()],
            max_tokens: 32,
            temperature: 0.0,
        })
    }

    pub fn with_stop(mut self, stop: Vec<String>) -> Self {
        self.stop = stop;
        self
    }

    pub fn with_max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t.max(0.0);
        self
    }

    /// Stable fixture key: hex SHA-256 over a canonical serialization of
    /// context, temperature and max_tokens.
    pub fn key(&self) -> String {
        let canonical = json!({
            "context": self.context,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
        });
        let digest = Sha256::digest(canonical.to_string().as_bytes());
        hex::encode(digest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub completion: String,
    pub backend_id: String,
    pub latency_ms: u64,
}

pub trait TextBackend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError>;
}

impl<T: TextBackend + ?Sized> TextBackend for &T {
    fn id(&self) -> String {
        (**self).id()
    }
    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).complete(req)
    }
}

impl<T: TextBackend + ?Sized> TextBackend for Box<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).complete(req)
    }
}

impl<T: TextBackend + ?Sized> TextBackend for Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).complete(req)
    }
}

/// Returns scripted completions in order, one per call.
#[derive(Debug, Default)]
pub struct MockBackend {
    script: Mutex<VecDeque<String>>,
}

impl MockBackend {
    pub fn new<I, S>(script: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            script: Mutex::new(script.into_iter().map(Into::into).collect()),
        }
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().expect("mock lock").len()
    }
}

impl TextBackend for MockBackend {
    fn id(&self) -> String {
        "mock".into()
    }

    fn complete(&self, _req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let next = self
            .script
            .lock()
            .expect("mock lock")
            .pop_front()
            .ok_or(BackendError::ScriptExhausted)?;
        Ok(GenerationResponse {
            completion: next,
            backend_id: self.id(),
            latency_ms: 0,
        })
    }
}

/// Backend whose completion is computed from the request by a closure.
pub struct FnBackend<F> {
    id: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&GenerationRequest) -> String + Send + Sync,
{
    pub fn new(id: impl Into<String>, f: F) -> Self {
        Self { id: id.into(), f }
    }
}

impl<F> TextBackend for FnBackend<F>
where
    F: Fn(&GenerationRequest) -> String + Send + Sync,
{
    fn id(&self) -> String {
        self.id.clone()
    }

    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        Ok(GenerationResponse {
            completion: (self.f)(req),
            backend_id: self.id.clone(),
            latency_ms: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub key: String,
    pub request: GenerationRequest,
    pub response: GenerationResponse,
}

/// Directory of `<key>.json` fixtures. Writes are serialized per store and
/// land through a temp file + rename.
#[derive(Debug)]
pub struct ReplayStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ReplayStore {
    pub fn open(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            write_lock: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn load(&self, req: &GenerationRequest) -> Result<Fixture, BackendError> {
        let key = req.key();
        let path = self.path_for(&key);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(BackendError::FixtureMissing { key })
            }
            Err(source) => return Err(BackendError::Io { path, source }),
        };
        serde_json::from_str(&text)
            .map_err(|e| BackendError::InvalidResponse(format!("{}: {e}", path.display())))
    }

    /// Persists `response` under the request key, overwriting (with a
    /// warning) any existing fixture.
    pub fn record(
        &self,
        req: &GenerationRequest,
        response: &GenerationResponse,
    ) -> Result<String, BackendError> {
        let key = req.key();
        let fixture = Fixture {
            key: key.clone(),
            request: req.clone(),
            response: response.clone(),
        };
        let path = self.path_for(&key);
        let io = |source| BackendError::Io {
            path: path.clone(),
            source,
        };
        let _guard = self.write_lock.lock().expect("store lock");
        fs::create_dir_all(&self.dir).map_err(io)?;
        if path.exists() {
            log::warn!("overwriting replay fixture {key}");
        }
        let body = serde_json::to_string_pretty(&fixture).expect("fixture serializes") + "\n";
        let tmp = self.dir.join(format!(".{key}.{}.tmp", std::process::id()));
        fs::write(&tmp, body).map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)?;
        Ok(key)
    }
}

/// Answers strictly from recorded fixtures. A missing key is an error.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    store: Arc<ReplayStore>,
}

impl ReplayBackend {
    pub fn new(store: Arc<ReplayStore>) -> Self {
        Self { store }
    }

    pub fn open(dir: impl Into<PathBuf>) -> Self {
        Self::new(Arc::new(ReplayStore::open(dir)))
    }
}

impl TextBackend for ReplayBackend {
    fn id(&self) -> String {
        format!("replay:{}", self.store.dir().display())
    }

    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        Ok(self.store.load(req)?.response)
    }
}

/// Forwards to `inner` and records every successful response.
pub struct RecordingBackend<B> {
    inner: B,
    store: Arc<ReplayStore>,
}

impl<B: TextBackend> RecordingBackend<B> {
    pub fn new(inner: B, store: Arc<ReplayStore>) -> Self {
        Self { inner, store }
    }
}

impl<B: TextBackend> TextBackend for RecordingBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let resp = self.inner.complete(req)?;
        self.store.record(req, &resp)?;
        Ok(resp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemoteProtocol {
    /// `messages` in, `choices[0].message.content` out.
    #[default]
    Chat,
    /// `prompt` in, `choices[0].text` out; continues the context verbatim.
    Completions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub protocol: RemoteProtocol,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub retries: u32,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "qwen3-8b".into(),
            protocol: RemoteProtocol::Chat,
            api_key_env: "LAYOUTKIT_API_KEY".into(),
            timeout_secs: 60.0,
            retries: 1,
        }
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs.max(0.001))))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            config,
            api_key,
            agent,
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn body(&self, req: &GenerationRequest) -> serde_json::Value {
        let mut body = json!({
            "model": self.config.model,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
            "stop": req.stop,
        });
        match self.config.protocol {
            RemoteProtocol::Chat => {
                body["messages"] = json!([{ "role": "user", "content": req.context }]);
            }
            RemoteProtocol::Completions => body["prompt"] = json!(req.context),
        }
        body
    }

    fn round_trip(&self, body: &serde_json::Value) -> Result<String, BackendError> {
        let mut call = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(body)
            .map_err(|e| BackendError::Unavailable(format!("{}: {e}", self.config.endpoint)))?;
        let value: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        extract_completion(&value, self.config.protocol)
    }
}

/// Pulls the first choice's text out of a chat or completions response.
pub fn extract_completion(
    value: &serde_json::Value,
    protocol: RemoteProtocol,
) -> Result<String, BackendError> {
    let choice = &value["choices"][0];
    let text = match protocol {
        RemoteProtocol::Chat => choice["message"]["content"].as_str(),
        RemoteProtocol::Completions => choice["text"].as_str(),
    };
    text.map(str::to_string)
        .ok_or_else(|| BackendError::InvalidResponse(format!("no completion text in {value}")))
}

impl TextBackend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}", self.config.model)
    }

    fn complete(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let body = self.body(req);
        let start = Instant::now();
        let mut attempt = 0;
        loop {
            match self.round_trip(&body) {
                Ok(completion) => {
                    return Ok(GenerationResponse {
                        completion,
                        backend_id: self.id(),
                        latency_ms: start.elapsed().as_millis() as u64,
                    })
                }
                Err(BackendError::Unavailable(msg)) if attempt < self.config.retries => {
                    attempt += 1;
                    let jitter = rand::rng().random_range(100..400);
                    log::warn!("remote call failed ({msg}); retrying in {jitter} ms");
                    std::thread::sleep(Duration::from_millis(jitter));
                }
                Err(e) => return Err(e),
            }
        }
    }
}
