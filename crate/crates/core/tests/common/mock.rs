//! Minimal OpenAI-compatible HTTP endpoint for offline tests.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub type Handler = dyn Fn(&str, &Value) -> (u16, Value) + Send + Sync;

pub struct MockServer {
    pub base_url: String,
    /// (path, body) of every request, in arrival order.
    pub requests: Arc<Mutex<Vec<(String, Value)>>>,
}

impl MockServer {
    pub fn start(handler: Arc<Handler>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}/v1", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let (handler, log) = (Arc::clone(&handler), Arc::clone(&log));
                std::thread::spawn(move || serve(stream, &*handler, &log));
            }
        });
        MockServer { base_url, requests }
    }

    pub fn count(&self, path: &str) -> usize {
        self.requests
            .lock()
            .unwrap()
            .iter()
            .filter(|(p, _)| p.ends_with(path))
            .count()
    }
}

fn serve(stream: TcpStream, handler: &Handler, log: &Mutex<Vec<(String, Value)>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    loop {
        let mut request_line = String::new();
        if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
            return;
        }
        let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
        let mut len = 0usize;
        loop {
            let mut h = String::new();
            if reader.read_line(&mut h).unwrap_or(0) == 0 {
                return;
            }
            let h = h.trim_end();
            if h.is_empty() {
                break;
            }
            if let Some((k, v)) = h.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
        }
        let mut body = vec![0u8; len];
        if reader.read_exact(&mut body).is_err() {
            return;
        }
        let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
        log.lock().unwrap().push((path.clone(), body.clone()));
        let (status, reply) = handler(&path, &body);
        let text = reply.to_string();
        let head = format!(
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n",
            text.len()
        );
        if writer
            .write_all(head.as_bytes())
            .and_then(|_| writer.write_all(text.as_bytes()))
            .is_err()
        {
            return;
        }
    }
}

/// Deterministic pseudo-embedding of `text` under `model`.
pub fn fake_vector(model: &str, text: &str, dim: usize) -> Vec<f32> {
    let digest = Sha256::digest(format!("{model}\u{0}{text}").as_bytes());
    let mut rng = ChaCha8Rng::from_seed(digest.into());
    // Shift "unsafe-looking" texts so detectors have something to learn.
    let shift = if text.contains("works the night shift") {
        1.5
    } else {
        0.0
    };
    (0..dim)
        .map(|i| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (z + if i < 4 { shift } else { 0.0 }) as f32
        })
        .collect()
}

pub fn embeddings_reply(body: &Value, dim: usize) -> Value {
    let model = body["model"].as_str().unwrap_or("");
    let data: Vec<Value> = body["input"]
        .as_array()
        .unwrap()
        .iter()
        .enumerate()
        .rev() // out of order on purpose; the client sorts by index
        .map(|(i, t)| json!({ "index": i, "embedding": fake_vector(model, t.as_str().unwrap(), dim) }))
        .collect();
    json!({ "object": "list", "data": data })
}

/// Generator text keyed on the request seed. Roughly one seed in four
/// leaks a social security number so the validators have work to do.
pub fn chat_text(body: &Value) -> String {
    let seed = body["seed"].as_u64().unwrap_or(0);
    let prompt = body["messages"][0]["content"].as_str().unwrap_or("");
    let borderline = prompt.contains("must not describe any individual person");
    let mut text = if borderline {
        "Current guidance recommends reviewing the care plan with a specialist before any change.".to_string()
    } else {
        "The person I am asking about works the night shift at a small coastal firm and wants to know the next step."
            .to_string()
    };
    if seed % 4 == 0 {
        text.push_str(" Reference 123-45-6789.");
    }
    text
}

pub fn chat_reply(text: &str) -> Value {
    json!({ "choices": [{ "index": 0, "message": { "role": "assistant", "content": text } }] })
}

/// Handler serving both routes with the fakes above.
pub fn standard_handler(dim: usize) -> Arc<Handler> {
    Arc::new(move |path: &str, body: &Value| {
        if path.ends_with("/embeddings") {
            (200, embeddings_reply(body, dim))
        } else if path.ends_with("/chat/completions") {
            (200, chat_reply(&chat_text(body)))
        } else {
            (404, json!({ "error": "not found" }))
        }
    })
}
