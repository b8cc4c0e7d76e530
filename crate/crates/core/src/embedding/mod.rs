//! Fused text embeddings from a stack of external encoders, with a
//! persistent cache keyed by record id and stack fingerprint.

pub mod cache;
pub mod http;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::EmbeddingCache;
pub use http::HttpEncoder;

use crate::error::{Error, Result};
use crate::record::Record;

/// Inputs sent per request.
pub const REQUEST_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderEndpointConfig {
    pub name: String,
    pub base_url: String,
    pub model_id: String,
    pub expected_dim: usize,
    pub timeout_secs: f64,
    pub max_in_flight: usize,
    /// Environment variable holding a bearer token, if the endpoint needs one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

impl EncoderEndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.expected_dim == 0 {
            return Err(Error::Config(format!(
                "encoder {}: expected_dim must be positive",
                self.name
            )));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config(format!(
                "encoder {}: max_in_flight must be at least 1",
                self.name
            )));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.0))
    }
}

/// The three-encoder stack, 1024 dims each.
pub fn default_stack() -> Vec<EncoderEndpointConfig> {
    [
        ("qwen3", "Qwen/Qwen3-Embedding-0.6B"),
        ("bge_m3", "BAAI/bge-m3"),
        ("e5_large", "intfloat/e5-large-v2"),
    ]
    .into_iter()
    .map(|(name, model)| EncoderEndpointConfig {
        name: name.into(),
        base_url: "http://localhost:8000/v1".into(),
        model_id: model.into(),
        expected_dim: 1024,
        timeout_secs: 60.0,
        max_in_flight: 4,
        api_key_env: None,
    })
    .collect()
}

/// SHA-256 over the ordered (name, model_id) pairs of a stack.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fingerprint(pub [u8; 32]);

impl Fingerprint {
    pub fn of_stack(stack: &[EncoderEndpointConfig]) -> Self {
        let mut h = Sha256::new();
        for e in stack {
            for part in [&e.name, &e.model_id] {
                h.update((part.len() as u64).to_le_bytes());
                h.update(part.as_bytes());
            }
        }
        Fingerprint(h.finalize().into())
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({})", hex::encode(&self.0[..8]))
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedEmbedding {
    pub record_id: String,
    pub vector: Vec<f32>,
    pub encoder_fingerprint: Fingerprint,
}

impl FusedEmbedding {
    pub fn to_f64(&self) -> Vec<f64> {
        self.vector.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Why an endpoint call failed. Transient failures are retried.
#[derive(Debug, Clone)]
pub enum EndpointError {
    Transient(String),
    Fatal(String),
}

/// One embedding endpoint.
pub trait Encoder: Send + Sync {
    /// One vector per input, in input order.
    fn embed(&self, inputs: &[String]) -> std::result::Result<Vec<Vec<f32>>, EndpointError>;
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: usize,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

/// Encoder stack plus cache.
pub struct EmbeddingGateway {
    stack: Vec<(EncoderEndpointConfig, Box<dyn Encoder>)>,
    cache: EmbeddingCache,
    fingerprint: Fingerprint,
    retry: RetryPolicy,
}

impl EmbeddingGateway {
    pub fn new(
        stack: Vec<(EncoderEndpointConfig, Box<dyn Encoder>)>,
        cache_path: impl Into<std::path::PathBuf>,
    ) -> Result<Self> {
        if stack.is_empty() {
            return Err(Error::Config("empty encoder stack".into()));
        }
        for (cfg, _) in &stack {
            cfg.validate()?;
        }
        let configs: Vec<EncoderEndpointConfig> = stack.iter().map(|(c, _)| c.clone()).collect();
        let fingerprint = Fingerprint::of_stack(&configs);
        let dim = configs.iter().map(|c| c.expected_dim).sum();
        let cache = EmbeddingCache::open(cache_path, fingerprint, dim)?;
        Ok(EmbeddingGateway {
            stack,
            cache,
            fingerprint,
            retry: RetryPolicy::default(),
        })
    }

    /// Gateway over OpenAI-compatible HTTP endpoints.
    pub fn http(stack: &[EncoderEndpointConfig], cache_path: impl Into<std::path::PathBuf>) -> Result<Self> {
        let encoders = stack
            .iter()
            .map(|c| Ok((c.clone(), Box::new(HttpEncoder::new(c)?) as Box<dyn Encoder>)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(encoders, cache_path)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn dim(&self) -> usize {
        self.cache.dim()
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    pub fn cache_lookup(&self, record_id: &str, fingerprint: &Fingerprint) -> Option<FusedEmbedding> {
        self.cache.lookup(record_id, fingerprint)
    }

    /// One fused vector per record, concatenated in stack order. Cached rows
    /// are served directly; misses are fetched and appended in record order.
    pub fn embed_batch(&mut self, records: &[Record]) -> Result<Vec<FusedEmbedding>> {
        if records.is_empty() {
            return Err(Error::Config("embed_batch needs at least one record".into()));
        }
        let mut misses: Vec<&Record> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for r in records {
            if self.cache.get(&r.id).is_none() && seen.insert(r.id.as_str()) {
                misses.push(r);
            }
        }
        if !misses.is_empty() {
            let fetched = self.fetch(&misses)?;
            self.cache.append(&fetched)?;
        }
        records
            .iter()
            .map(|r| {
                self.cache
                    .lookup(&r.id, &self.fingerprint)
                    .ok_or_else(|| Error::Cache(format!("record {} missing after fetch", r.id)))
            })
            .collect()
    }

    fn fetch(&self, records: &[&Record]) -> Result<Vec<FusedEmbedding>> {
        let inputs: Vec<String> = records.iter().map(|r| r.encoder_input()).collect();
        let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
        let per_encoder: Vec<Result<Vec<Vec<f32>>>> = std::thread::scope(|s| {
            let handles: Vec<_> = self
                .stack
                .iter()
                .map(|(cfg, enc)| {
                    let inputs = &inputs;
                    let ids = &ids;
                    let retry = &self.retry;
                    s.spawn(move || run_encoder(cfg, enc.as_ref(), inputs, ids, retry))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("encoder thread panicked"))
                .collect()
        });

        let mut blocks = Vec::with_capacity(per_encoder.len());
        let mut failed: Vec<String> = Vec::new();
        let mut messages = Vec::new();
        for res in per_encoder {
            match res {
                Ok(b) => blocks.push(b),
                Err(Error::Batch { ids, message }) => {
                    failed.extend(ids);
                    messages.push(message);
                }
                Err(other) => return Err(other),
            }
        }
        if !failed.is_empty() {
            failed.sort();
            failed.dedup();
            return Err(Error::Batch {
                ids: failed,
                message: messages.join("; "),
            });
        }

        Ok((0..records.len())
            .map(|i| FusedEmbedding {
                record_id: ids[i].clone(),
                vector: blocks.iter().flat_map(|b| b[i].iter().copied()).collect(),
                encoder_fingerprint: self.fingerprint,
            })
            .collect())
    }
}

/// Sends `inputs` in chunks with at most `max_in_flight` concurrent requests.
fn run_encoder(
    cfg: &EncoderEndpointConfig,
    enc: &dyn Encoder,
    inputs: &[String],
    ids: &[String],
    retry: &RetryPolicy,
) -> Result<Vec<Vec<f32>>> {
    let chunks: Vec<std::ops::Range<usize>> = (0..inputs.len())
        .step_by(REQUEST_CHUNK)
        .map(|start| start..(start + REQUEST_CHUNK).min(inputs.len()))
        .collect();
    let results: Mutex<Vec<Option<std::result::Result<Vec<Vec<f32>>, EndpointError>>>> =
        Mutex::new(vec![None; chunks.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..cfg.max_in_flight.min(chunks.len()) {
            s.spawn(|| loop {
                let c = next.fetch_add(1, Ordering::SeqCst);
                if c >= chunks.len() {
                    break;
                }
                let out = call_with_retry(enc, &inputs[chunks[c].clone()], retry);
                results.lock().unwrap()[c] = Some(out);
            });
        }
    });

    let mut out = Vec::with_capacity(inputs.len());
    let mut failed = Vec::new();
    let mut last_error = String::new();
    for (c, res) in results.into_inner().unwrap().into_iter().enumerate() {
        let range = chunks[c].clone();
        match res.expect("every chunk processed") {
            Ok(vectors) => {
                if vectors.len() != range.len() {
                    return Err(Error::Encoder {
                        encoder: cfg.name.clone(),
                        message: format!("returned {} vectors for {} inputs", vectors.len(), range.len()),
                    });
                }
                for v in vectors {
                    if v.len() != cfg.expected_dim {
                        return Err(Error::Encoder {
                            encoder: cfg.name.clone(),
                            message: format!("wrong dimension: expected {}, got {}", cfg.expected_dim, v.len()),
                        });
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Encoder {
                            encoder: cfg.name.clone(),
                            message: "non-finite component in response".into(),
                        });
                    }
                    out.push(v);
                }
            }
            Err(EndpointError::Fatal(message)) => {
                return Err(Error::Encoder {
                    encoder: cfg.name.clone(),
                    message,
                })
            }
            Err(EndpointError::Transient(message)) => {
                failed.extend(ids[range].iter().cloned());
                last_error = message;
            }
        }
    }
    if !failed.is_empty() {
        return Err(Error::Batch {
            ids: failed,
            message: format!("encoder {} unreachable after retries: {last_error}", cfg.name),
        });
    }
    Ok(out)
}

fn call_with_retry(
    enc: &dyn Encoder,
    inputs: &[String],
    retry: &RetryPolicy,
) -> std::result::Result<Vec<Vec<f32>>, EndpointError> {
    with_retry(retry, || enc.embed(inputs))
}

/// Runs `call`, retrying transient failures with exponential backoff.
pub fn with_retry<T>(
    retry: &RetryPolicy,
    mut call: impl FnMut() -> std::result::Result<T, EndpointError>,
) -> std::result::Result<T, EndpointError> {
    let mut attempt = 0;
    loop {
        match call() {
            Err(EndpointError::Transient(msg)) if attempt + 1 < retry.attempts => {
                log::warn!("endpoint call failed (attempt {}): {msg}", attempt + 1);
                std::thread::sleep(retry.base_delay * 2u32.pow(attempt as u32));
                attempt += 1;
            }
            other => return other,
        }
    }
}
