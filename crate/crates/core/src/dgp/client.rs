//! Chat-completion clients: the trait, an on-disk response cache, retries,
//! and an HTTP client for OpenAI-compatible endpoints.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const API_KEY_VAR: &str = "COMPL_LLM_API_KEY";
pub const BASE_URL_VAR: &str = "COMPL_LLM_BASE_URL";

/// One completion per `(prompt, temperature, sample_index)`.
pub trait ChatClient: Send + Sync {
    fn complete(&self, prompt: &str, temperature: f64, sample_index: u32) -> Result<String>;
}

impl<T: ChatClient + ?Sized> ChatClient for &T {
    fn complete(&self, prompt: &str, temperature: f64, sample_index: u32) -> Result<String> {
        (**self).complete(prompt, temperature, sample_index)
    }
}

impl<T: ChatClient + ?Sized> ChatClient for Box<T> {
    fn complete(&self, prompt: &str, temperature: f64, sample_index: u32) -> Result<String> {
        (**self).complete(prompt, temperature, sample_index)
    }
}

/// Adapts a closure into a client.
pub struct FnClient<F>(pub F);

impl<F> ChatClient for FnClient<F>
where
    F: Fn(&str, f64, u32) -> Result<String> + Send + Sync,
{
    fn complete(&self, prompt: &str, temperature: f64, sample_index: u32) -> Result<String> {
        (self.0)(prompt, temperature, sample_index)
    }
}

/// Hex SHA-256 over the prompt, the temperature bits and the sample index.
pub fn cache_key(prompt: &str, temperature: f64, sample_index: u32) -> String {
    let mut h = Sha256::new();
    h.update((prompt.len() as u64).to_le_bytes());
    h.update(prompt.as_bytes());
    h.update(temperature.to_bits().to_le_bytes());
    h.update(sample_index.to_le_bytes());
    hex::encode(h.finalize())
}

/// Replays completions from a directory of one file per request, filling misses from `inner`.
pub struct CachedClient<C> {
    inner: C,
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl<C: ChatClient> CachedClient<C> {
    pub fn new(inner: C, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            inner,
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.txt"))
    }

    fn store(&self, path: &Path, text: &str) -> Result<()> {
        let _guard = self.write_lock.lock().expect("cache lock poisoned");
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

impl<C: ChatClient> ChatClient for CachedClient<C> {
    fn complete(&self, prompt: &str, temperature: f64, sample_index: u32) -> Result<String> {
        let path = self.path(&cache_key(prompt, temperature, sample_index));
        match std::fs::read_to_string(&path) {
            Ok(text) => return Ok(text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(Error::io(&path, e)),
        }
        let text = self.inner.complete(prompt, temperature, sample_index)?;
        self.store(&path, &text)?;
        Ok(text)
    }
}

/// Retries failed requests with exponential backoff.
pub struct RetryClient<C> {
    inner: C,
    attempts: u32,
    base_delay: Duration,
}

impl<C: ChatClient> RetryClient<C> {
    pub fn new(inner: C, attempts: u32, base_delay: Duration) -> Self {
        Self {
            inner,
            attempts: attempts.max(1),
            base_delay,
        }
    }
}

impl<C: ChatClient> ChatClient for RetryClient<C> {
    fn complete(&self, prompt: &str, temperature: f64, sample_index: u32) -> Result<String> {
        let mut last = None;
        for attempt in 0..self.attempts {
            match self.inner.complete(prompt, temperature, sample_index) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("request failed (attempt {}/{}): {e}", attempt + 1, self.attempts);
                    last = Some(e);
                    if attempt + 1 < self.attempts {
                        std::thread::sleep(self.base_delay * 2u32.pow(attempt));
                    }
                }
            }
        }
        Err(Error::Pipeline(format!(
            "request failed after {} attempts: {}",
            self.attempts,
            last.expect("at least one attempt")
        )))
    }
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
#[derive(Debug, Clone)]
pub struct OpenAiClient {
    base_url: String,
    api_key: Option<String>,
    model: String,
    agent: ureq::Agent,
}

impl OpenAiClient {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, model: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            model: model.into(),
            agent,
        }
    }

    /// Reads the base URL and key from the environment.
    pub fn from_env(model: impl Into<String>, timeout: Duration) -> Result<Self> {
        let base = std::env::var(BASE_URL_VAR)
            .map_err(|_| Error::Client(format!("{BASE_URL_VAR} is not set")))?;
        Ok(Self::new(base, std::env::var(API_KEY_VAR).ok(), model, timeout))
    }
}

impl ChatClient for OpenAiClient {
    fn complete(&self, prompt: &str, temperature: f64, sample_index: u32) -> Result<String> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": temperature,
            "n": 1,
            "seed": sample_index,
        });
        let mut req = self
            .agent
            .post(format!("{}/chat/completions", self.base_url))
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body.to_string())
            .map_err(|e| Error::Client(e.to_string()))?;
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Client(e.to_string()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::json("chat completion response", e))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::Client("response has no choices[0].message.content".into()))
    }
}
