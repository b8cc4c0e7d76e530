//! Client for OpenAI-compatible `/embeddings` and `/chat/completions`
//! endpoints (e.g. vLLM).

use serde::Deserialize;
use serde_json::json;

use super::{Encoder, EncoderEndpointConfig, EndpointError};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct OpenAiClient {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f32>,
    #[serde(default)]
    index: Option<usize>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

impl OpenAiClient {
    pub fn new(base_url: &str, timeout: std::time::Duration, api_key_env: Option<&str>) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        let api_key = api_key_env.and_then(|var| std::env::var(var).ok());
        OpenAiClient {
            agent,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
        }
    }

    fn post(&self, path: &str, body: serde_json::Value) -> std::result::Result<ureq::Response, EndpointError> {
        let mut req = self
            .agent
            .post(&format!("{}{path}", self.base_url))
            .set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        req.send_json(body).map_err(|e| match e {
            ureq::Error::Status(code, resp) => {
                let text = resp.into_string().unwrap_or_default();
                let msg = format!("HTTP {code}: {}", text.chars().take(200).collect::<String>());
                if code == 429 || code >= 500 {
                    EndpointError::Transient(msg)
                } else {
                    EndpointError::Fatal(msg)
                }
            }
            ureq::Error::Transport(t) => EndpointError::Transient(t.to_string()),
        })
    }

    pub fn embeddings(&self, model: &str, inputs: &[String]) -> std::result::Result<Vec<Vec<f32>>, EndpointError> {
        let resp = self.post("/embeddings", json!({ "model": model, "input": inputs }))?;
        let mut parsed: EmbeddingResponse = resp
            .into_json()
            .map_err(|e| EndpointError::Fatal(format!("malformed embeddings response: {e}")))?;
        if parsed.data.iter().all(|d| d.index.is_some()) {
            parsed.data.sort_by_key(|d| d.index);
        }
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }

    /// Single-turn chat completion; returns the first choice's text.
    pub fn chat(
        &self,
        model: &str,
        prompt: &str,
        temperature: f64,
        max_tokens: usize,
        seed: Option<u64>,
    ) -> std::result::Result<String, EndpointError> {
        let mut body = json!({
            "model": model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": temperature,
            "max_tokens": max_tokens,
        });
        if let Some(seed) = seed {
            body["seed"] = json!(seed);
        }
        let resp = self.post("/chat/completions", body)?;
        let parsed: ChatResponse = resp
            .into_json()
            .map_err(|e| EndpointError::Fatal(format!("malformed chat response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| EndpointError::Fatal("chat response without choices".into()))
    }
}

/// An [`Encoder`] backed by an HTTP endpoint.
pub struct HttpEncoder {
    client: OpenAiClient,
    model_id: String,
}

impl HttpEncoder {
    pub fn new(cfg: &EncoderEndpointConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(HttpEncoder {
            client: OpenAiClient::new(&cfg.base_url, cfg.timeout(), cfg.api_key_env.as_deref()),
            model_id: cfg.model_id.clone(),
        })
    }
}

impl Encoder for HttpEncoder {
    fn embed(&self, inputs: &[String]) -> std::result::Result<Vec<Vec<f32>>, EndpointError> {
        self.client.embeddings(&self.model_id, inputs)
    }
}
