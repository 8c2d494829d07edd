use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedItem>,
}

#[derive(Deserialize)]
struct EmbedItem {
    index: usize,
    embedding: Vec<f64>,
}

/// Counting semaphore bounding in-flight requests.
struct Permits {
    free: Mutex<usize>,
    cond: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cond.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cond.notify_one();
    }
}

fn post_embeddings(
    client: &reqwest::blocking::Client,
    endpoint: &str,
    model: &str,
    texts: &[String],
) -> Result<Vec<Vec<f64>>> {
    let response = client
        .post(endpoint)
        .json(&EmbedRequest { model, input: texts })
        .send()
        .and_then(|r| r.error_for_status())
        .map_err(|e| Error::ProviderUnavailable(e.to_string()))?;
    let body: EmbedResponse = response
        .json()
        .map_err(|e| Error::ProviderContractViolation(format!("malformed response: {e}")))?;

    let mut slots: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
    for item in body.data {
        let slot = slots.get_mut(item.index).ok_or_else(|| {
            Error::ProviderContractViolation(format!("index {} out of range", item.index))
        })?;
        *slot = Some(item.embedding);
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            s.ok_or_else(|| Error::ProviderContractViolation(format!("no embedding for input {i}")))
        })
        .collect()
}

/// One-shot request to an embedding service. Returns vectors in input order
/// (the response is re-ordered by its `index` field). No request is sent for
/// an empty `texts`.
pub fn remote_embed(endpoint: &str, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let client = reqwest::blocking::Client::new();
    post_embeddings(&client, endpoint, model, texts)
}

/// HTTP embedding provider with a declared output dimension.
pub struct RemoteEmbedder {
    endpoint: String,
    model: String,
    dim: usize,
    name: String,
    client: reqwest::blocking::Client,
    permits: Permits,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, dim: usize) -> Result<Self> {
        let model = model.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::ProviderUnavailable(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            name: format!("remote:{model}"),
            model,
            dim,
            client,
            permits: Permits::new(4),
        })
    }

    /// Maximum number of concurrent requests (default 4).
    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.permits = Permits::new(n);
        self
    }

    fn check_dims(&self, vectors: &[Vec<f64>]) -> Result<()> {
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != self.dim {
                return Err(Error::ProviderContractViolation(format!(
                    "input {i}: expected dim {}, got {}",
                    self.dim,
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::ProviderContractViolation(format!(
                    "input {i}: non-finite component"
                )));
            }
        }
        Ok(())
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut out = self.embed_batch(&[text.to_owned()])?;
        Ok(out.remove(0))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let vectors = {
            let _permit = self.permits.acquire();
            post_embeddings(&self.client, &self.endpoint, &self.model, texts)?
        };
        self.check_dims(&vectors)?;
        Ok(vectors)
    }
}
