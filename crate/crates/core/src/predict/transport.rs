//! Transport contract for the vision-language model plus the content-addressed response cache.

use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::predict::prompt::PROMPT_VERSION;

/// Environment variable read for the bearer token.
pub const API_KEY_ENV: &str = "SPLATPROP_VLM_API_KEY";

/// One blocking request: text prompt plus a PNG-encoded image, returning the reply text.
pub trait Transport {
    fn complete(&self, prompt: &str, image_png: &[u8]) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VlmConfig {
    /// Chat-completion endpoint URL; empty disables network access.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub cache_dir: Option<PathBuf>,
    /// Serve from cache only.
    pub offline: bool,
}

impl Default for VlmConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: "gpt-4o".into(),
            temperature: 0.0,
            timeout_secs: 120,
            cache_dir: None,
            offline: false,
        }
    }
}

/// OpenAI-style chat-completion client: one user message with text and a base64 data-URL image.
pub struct HttpTransport {
    endpoint: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(config: &VlmConfig) -> Result<Self> {
        if config.endpoint.is_empty() {
            return Err(Error::Config("vlm.endpoint is not set".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            endpoint: config.endpoint.clone(),
            model: config.model.clone(),
            temperature: config.temperature,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            agent,
        })
    }
}

impl Transport for HttpTransport {
    fn complete(&self, prompt: &str, image_png: &[u8]) -> Result<String> {
        let data_url = format!(
            "data:image/png;base64,{}",
            base64::engine::general_purpose::STANDARD.encode(image_png)
        );
        let body = json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": prompt},
                    {"type": "image_url", "image_url": {"url": data_url}}
                ]
            }]
        });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| Error::Transport(format!("{}: {e}", self.endpoint)))?;
        let reply: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Transport(format!("{}: unreadable body: {e}", self.endpoint)))?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| Error::Response {
                message: "reply has no choices[0].message.content".into(),
                raw: reply.to_string(),
            })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    prompt_version: String,
    prompt_sha256: String,
    image_sha256: String,
    response: String,
}

/// Replies stored as JSON files named by the hashes of prompt and image.
#[derive(Debug, Clone, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
}

impl ResponseCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self { dir }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn key(prompt: &str, image_png: &[u8]) -> String {
        format!("{}-{}", sha256_hex(prompt.as_bytes()), sha256_hex(image_png))
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    pub fn get(&self, prompt: &str, image_png: &[u8]) -> Result<Option<String>> {
        let Some(path) = self.path(&Self::key(prompt, image_png)) else {
            return Ok(None);
        };
        if !path.exists() {
            return Ok(None);
        }
        let rec: CacheRecord = crate::io_util::read_json(&path)?;
        Ok(Some(rec.response))
    }

    pub fn put(&self, prompt: &str, image_png: &[u8], response: &str) -> Result<()> {
        let Some(path) = self.path(&Self::key(prompt, image_png)) else {
            return Ok(());
        };
        let rec = CacheRecord {
            prompt_version: PROMPT_VERSION.into(),
            prompt_sha256: sha256_hex(prompt.as_bytes()),
            image_sha256: sha256_hex(image_png),
            response: response.into(),
        };
        crate::io_util::write_json(&path, &rec)
    }
}
