use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use log::warn;
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::cache::{cache_key, PotentialCache};
use super::prompt::{parse_severity, render_prompt, PromptSpec};
use super::{PotentialProvider, ScoreSource, SeverityScore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    /// Server root; requests go to `{base_url}/v1/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token. Unset or empty means no auth header.
    pub api_key_env: Option<String>,
    pub max_tokens: u32,
    /// Extra attempts after the first failure.
    pub retries: u32,
    /// First backoff delay; doubles on each retry.
    pub backoff_ms: u64,
    pub timeout_ms: u64,
    pub concurrency: usize,
    /// JSON-lines cache loaded at start and written by [`LlmPotential::persist`].
    pub cache_path: Option<PathBuf>,
    pub prompt: PromptSpec,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            model: "llama-3.2-3b-instruct".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            max_tokens: 32,
            retries: 3,
            backoff_ms: 250,
            timeout_ms: 30_000,
            concurrency: 4,
            cache_path: None,
            prompt: PromptSpec::default(),
        }
    }
}

/// Potential backed by a chat-completions endpoint, with caching, retries and a 0.5 fallback.
#[derive(Debug)]
pub struct LlmPotential {
    cfg: LlmConfig,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
    cache: PotentialCache,
    requests: AtomicU64,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(String),
}

impl LlmPotential {
    pub fn new(cfg: LlmConfig) -> Result<Self> {
        cfg.prompt.validate().map_err(Error::Config)?;
        let api_key = cfg
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| Error::Network(e.to_string()))?;
        let cache = match &cfg.cache_path {
            Some(p) => PotentialCache::load(p)?,
            None => PotentialCache::new(),
        };
        Ok(Self { cfg, api_key, http, cache, requests: AtomicU64::new(0) })
    }

    pub fn cache(&self) -> &PotentialCache {
        &self.cache
    }

    /// HTTP requests issued so far, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.cfg.base_url.trim_end_matches('/'))
    }

    pub fn request_body(&self, window: ArrayView2<'_, f64>) -> Value {
        json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": self.cfg.prompt.system},
                {"role": "user", "content": render_prompt(window, &self.cfg.prompt)},
            ],
            "temperature": 0,
            "max_tokens": self.cfg.max_tokens,
        })
    }

    fn attempt(&self, body: &Value) -> Attempt {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut req = self.http.post(self.endpoint()).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Attempt::Retry(format!("HTTP {status}"));
        }
        if !status.is_success() {
            return Attempt::Fatal(format!("HTTP {status}"));
        }
        match resp.json::<Value>() {
            Ok(v) => match v.pointer("/choices/0/message/content").and_then(Value::as_str) {
                Some(content) => Attempt::Done(content.to_string()),
                None => Attempt::Fatal("reply has no choices[0].message.content".into()),
            },
            Err(e) => Attempt::Fatal(format!("unreadable reply: {e}")),
        }
    }

    /// Sends one chat request, retrying transport errors, 5xx and 429 with exponential backoff.
    pub fn complete(&self, window: ArrayView2<'_, f64>) -> Result<String> {
        let body = self.request_body(window);
        let mut delay = Duration::from_millis(self.cfg.backoff_ms);
        let mut last = String::new();
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(&body) {
                Attempt::Done(content) => return Ok(content),
                Attempt::Retry(msg) => last = msg,
                Attempt::Fatal(msg) => return Err(Error::Network(msg)),
            }
        }
        Err(Error::Network(format!("gave up after {} attempts: {last}", self.cfg.retries + 1)))
    }

    pub fn persist(&self) -> Result<()> {
        match &self.cfg.cache_path {
            Some(p) => self.cache.save(p),
            None => Ok(()),
        }
    }
}

impl PotentialProvider for LlmPotential {
    fn potential(&self, window: ArrayView2<'_, f64>) -> SeverityScore {
        let key = cache_key(window);
        if let Some(hit) = self.cache.get(&key) {
            return SeverityScore { value: hit.value, source: ScoreSource::Cache };
        }
        match self.complete(window) {
            Ok(reply) => {
                let score = parse_severity(&reply);
                if score.source == ScoreSource::Fallback {
                    warn!("unparseable severity reply: {reply:?}");
                } else {
                    self.cache.insert(key, score);
                }
                score
            }
            Err(e) => {
                warn!("severity request failed, using fallback: {e}");
                SeverityScore::FALLBACK
            }
        }
    }

    fn concurrency(&self) -> usize {
        self.cfg.concurrency.max(1)
    }
}
