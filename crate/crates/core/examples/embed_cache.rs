//! Embed records through a two-encoder stack with an on-disk cache. The
//! encoders here are local hashing encoders; `EmbeddingGateway::http` wires
//! OpenAI-compatible endpoints instead.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use qiguard::embedding::{EmbeddingGateway, Encoder, EncoderEndpointConfig, EndpointError};
use qiguard::record::{Domain, Label, Record};
use sha2::{Digest, Sha256};

/// Bag of hashed words, normalized to unit length.
struct Hashing {
    dim: usize,
    calls: Arc<AtomicUsize>,
}

impl Encoder for Hashing {
    fn embed(&self, inputs: &[String]) -> Result<Vec<Vec<f32>>, EndpointError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(inputs
            .iter()
            .map(|text| {
                let mut v = vec![0f32; self.dim];
                for w in text.split_whitespace() {
                    let h = Sha256::digest(w.to_lowercase().as_bytes());
                    v[h[0] as usize % self.dim] += if h[1] & 1 == 0 { 1.0 } else { -1.0 };
                }
                let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(1e-6);
                v.iter().map(|x| x / norm).collect()
            })
            .collect())
    }
}

fn endpoint(name: &str, dim: usize) -> EncoderEndpointConfig {
    EncoderEndpointConfig {
        name: name.into(),
        base_url: "local".into(),
        model_id: name.into(),
        expected_dim: dim,
        timeout_secs: 1.0,
        max_in_flight: 2,
        api_key_env: None,
    }
}

fn main() -> qiguard::Result<()> {
    let records: Vec<Record> = (0..40)
        .map(|i| Record {
            id: format!("r{i}"),
            domain: Domain::Medical,
            question: format!("Question {i} about sleep"),
            answer: "Keep a regular schedule and limit late caffeine.".into(),
            label: Label::Safe,
            generator: None,
            axes: None,
            subtype: None,
            source: "example".into(),
            extra: BTreeMap::new(),
        })
        .collect();
    let dir = tempfile::tempdir().expect("temp dir");
    let cache = dir.path().join("vectors.bin");
    let calls = Arc::new(AtomicUsize::new(0));
    let stack = || -> Vec<(EncoderEndpointConfig, Box<dyn Encoder>)> {
        vec![
            (
                endpoint("a", 32),
                Box::new(Hashing {
                    dim: 32,
                    calls: Arc::clone(&calls),
                }),
            ),
            (
                endpoint("b", 16),
                Box::new(Hashing {
                    dim: 16,
                    calls: Arc::clone(&calls),
                }),
            ),
        ]
    };

    let mut gw = EmbeddingGateway::new(stack(), &cache)?;
    let fused = gw.embed_batch(&records)?;
    println!(
        "{} vectors of dim {}, {} encoder calls",
        fused.len(),
        gw.dim(),
        calls.load(Ordering::Relaxed)
    );

    // A fresh gateway on the same file answers from the cache.
    let before = calls.load(Ordering::Relaxed);
    let mut warm = EmbeddingGateway::new(stack(), &cache)?;
    let again = warm.embed_batch(&records)?;
    println!(
        "warm run: {} encoder calls, identical: {}",
        calls.load(Ordering::Relaxed) - before,
        again == fused
    );
    Ok(())
}
