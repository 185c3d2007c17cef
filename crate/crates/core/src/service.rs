//! HTTP client for a remote encoder service.
//!
//! Wire protocol (JSON over HTTP/1.1):
//!
//! - `GET /health` returns `{"model": str, "dim": int}`.
//! - `POST /embed` takes `{"sentences": [str], "mode": "plain"|"mc_dropout"|"augment",
//!   "n": int, "seed": int, "pooling": "first_last_avg"|"cls"}` and returns
//!   `{"dim": int, "embeddings": [[[float]]]}`, one list of `n` vectors per sentence.
//!
//! Seeds are forwarded verbatim; reproducibility is up to the server.

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::encoder::Pooling;
use crate::error::{Error, Result};
use crate::model::{SampleMode, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireMode {
    Plain,
    McDropout,
    Augment,
}

impl WireMode {
    pub fn sample_mode(self) -> SampleMode {
        match self {
            WireMode::Plain => SampleMode::Plain,
            WireMode::McDropout => SampleMode::Model,
            WireMode::Augment => SampleMode::Data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub sentences: Vec<String>,
    pub mode: WireMode,
    pub n: usize,
    pub seed: u64,
    pub pooling: Pooling,
}

impl EmbedRequest {
    pub fn validate(&self) -> Result<()> {
        if self.sentences.is_empty() {
            return Err(Error::Argument("embed request without sentences".into()));
        }
        if self.n == 0 {
            return Err(Error::Argument("embed request needs n >= 1".into()));
        }
        if self.mode == WireMode::Plain && self.n != 1 {
            return Err(Error::Argument(
                "plain mode takes exactly one sample".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub embeddings: Vec<Vec<Vec<f64>>>,
}

impl EmbedResponse {
    /// Checks the response shape against the request that produced it.
    pub fn validate(&self, req: &EmbedRequest) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Protocol("response dim is 0".into()));
        }
        if self.embeddings.len() != req.sentences.len() {
            return Err(Error::Protocol(format!(
                "expected embeddings for {} sentences, got {}",
                req.sentences.len(),
                self.embeddings.len()
            )));
        }
        for (i, per_sentence) in self.embeddings.iter().enumerate() {
            if per_sentence.len() != req.n {
                return Err(Error::Protocol(format!(
                    "sentence {i}: expected {} samples, got {}",
                    req.n,
                    per_sentence.len()
                )));
            }
            if let Some((j, v)) = per_sentence
                .iter()
                .enumerate()
                .find(|(_, v)| v.len() != self.dim)
            {
                return Err(Error::Protocol(format!(
                    "sentence {i} sample {j}: vector length {} but dim is {}",
                    v.len(),
                    self.dim
                )));
            }
            if per_sentence.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::Protocol(format!("sentence {i}: non-finite values")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthInfo {
    pub model: String,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub timeout: Duration,
    pub batch_size: usize,
    pub max_in_flight: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            timeout: Duration::from_secs(60),
            batch_size: 32,
            max_in_flight: 4,
        }
    }
}

/// Blocking client; safe to share across threads.
#[derive(Debug)]
pub struct ServiceClient {
    endpoint: String,
    agent: ureq::Agent,
    config: ClientConfig,
    dim: Mutex<Option<usize>>,
}

const BODY_EXCERPT: usize = 200;

impl ServiceClient {
    pub fn new(endpoint: impl Into<String>, config: ClientConfig) -> Self {
        let endpoint = endpoint.into().trim_end_matches('/').to_owned();
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        ServiceClient {
            endpoint,
            agent,
            config,
            dim: Mutex::new(None),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Dimension reported by the last successful health check, if any.
    pub fn known_dim(&self) -> Option<usize> {
        *self.dim.lock().unwrap()
    }

    fn transport(&self, e: impl std::fmt::Display) -> Error {
        Error::Transport {
            endpoint: self.endpoint.clone(),
            message: e.to_string(),
        }
    }

    /// Runs `call` and retries once if it failed at the transport level.
    fn with_retry(
        &self,
        call: impl Fn() -> Result<ureq::Response, ureq::Error>,
    ) -> Result<ureq::Response> {
        let outcome = match call() {
            Err(ureq::Error::Transport(t)) => {
                log::warn!("transport error from {}: {t}; retrying once", self.endpoint);
                call()
            }
            other => other,
        };
        match outcome {
            Ok(resp) => Ok(resp),
            Err(ureq::Error::Status(status, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                Err(Error::Service {
                    status,
                    body: body.chars().take(BODY_EXCERPT).collect(),
                })
            }
            Err(ureq::Error::Transport(t)) => Err(self.transport(t)),
        }
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, resp: ureq::Response) -> Result<T> {
        if resp.content_type() != "application/json" {
            return Err(Error::Protocol(format!(
                "expected application/json, got {:?}",
                resp.content_type()
            )));
        }
        let text = resp.into_string().map_err(|e| self.transport(e))?;
        serde_json::from_str(&text).map_err(|e| Error::Protocol(format!("malformed response: {e}")))
    }

    // ureq's error type is large; it never leaves this module.
    #[allow(clippy::result_large_err)]
    pub fn health_check(&self) -> Result<HealthInfo> {
        let url = format!("{}/health", self.endpoint);
        let resp = self.with_retry(|| self.agent.get(&url).call())?;
        let info: HealthInfo = self.read_json(resp)?;
        if info.dim == 0 {
            return Err(Error::Protocol("service reports dim 0".into()));
        }
        *self.dim.lock().unwrap() = Some(info.dim);
        Ok(info)
    }

    /// One POST for one batch; the response is validated against the request.
    #[allow(clippy::result_large_err)]
    pub fn embed_batch(&self, req: &EmbedRequest) -> Result<EmbedResponse> {
        req.validate()?;
        let url = format!("{}/embed", self.endpoint);
        let body = serde_json::to_value(req).expect("request serializes");
        let resp = self.with_retry(|| self.agent.post(&url).send_json(body.clone()))?;
        let parsed: EmbedResponse = self.read_json(resp)?;
        parsed.validate(req)?;
        if let Some(dim) = self.known_dim() {
            if dim != parsed.dim {
                return Err(Error::Protocol(format!(
                    "service reported dim {dim} at health check but returned {}",
                    parsed.dim
                )));
            }
        }
        Ok(parsed)
    }

    /// Splits the request into batches, posts them with bounded concurrency
    /// and returns one sample set per sentence, ids being request positions.
    pub fn fetch_samples(&self, req: &EmbedRequest) -> Result<Vec<SampleSet>> {
        req.validate()?;
        let batch = self.config.batch_size.max(1);
        let batches: Vec<EmbedRequest> = req
            .sentences
            .chunks(batch)
            .map(|chunk| EmbedRequest {
                sentences: chunk.to_vec(),
                ..req.clone()
            })
            .collect();
        let mut responses = Vec::with_capacity(batches.len());
        for wave in batches.chunks(self.config.max_in_flight.max(1)) {
            let results: Vec<Result<EmbedResponse>> = std::thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|b| s.spawn(|| self.embed_batch(b)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embed worker panicked"))
                    .collect()
            });
            for r in results {
                responses.push(r?);
            }
        }
        let dim = responses[0].dim;
        if let Some(bad) = responses.iter().find(|r| r.dim != dim) {
            return Err(Error::Validation(format!(
                "dimension changed between batches: {dim} vs {}",
                bad.dim
            )));
        }
        let mode = req.mode.sample_mode();
        responses
            .into_iter()
            .flat_map(|r| r.embeddings)
            .enumerate()
            .map(|(i, samples)| SampleSet::with_dim(i.to_string(), mode, dim, samples))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(n: usize, sentences: usize) -> EmbedRequest {
        EmbedRequest {
            sentences: (0..sentences).map(|i| format!("s{i}")).collect(),
            mode: WireMode::McDropout,
            n,
            seed: 1,
            pooling: Pooling::FirstLastAvg,
        }
    }

    #[test]
    fn wire_names() {
        let text = serde_json::to_string(&req(2, 1)).unwrap();
        assert!(text.contains("\"mode\":\"mc_dropout\""));
        assert!(text.contains("\"pooling\":\"first_last_avg\""));
    }

    #[test]
    fn response_shape_checks() {
        let r = req(2, 1);
        let ok = EmbedResponse {
            dim: 3,
            embeddings: vec![vec![vec![0.0; 3]; 2]],
        };
        assert!(ok.validate(&r).is_ok());
        let short = EmbedResponse {
            dim: 3,
            embeddings: vec![vec![vec![0.0; 3], vec![0.0; 2]]],
        };
        assert!(matches!(short.validate(&r), Err(Error::Protocol(_))));
        let few = EmbedResponse {
            dim: 3,
            embeddings: vec![vec![vec![0.0; 3]]],
        };
        assert!(matches!(few.validate(&r), Err(Error::Protocol(_))));
        let missing = EmbedResponse {
            dim: 3,
            embeddings: vec![],
        };
        assert!(matches!(missing.validate(&r), Err(Error::Protocol(_))));
    }

    #[test]
    fn request_checks() {
        assert!(req(0, 1).validate().is_err());
        assert!(req(1, 0).validate().is_err());
        let mut plain = req(2, 1);
        plain.mode = WireMode::Plain;
        assert!(plain.validate().is_err());
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        // Port 9 (discard) on localhost is essentially never listening.
        let client = ServiceClient::new(
            "http://127.0.0.1:9",
            ClientConfig {
                timeout: Duration::from_secs(2),
                ..Default::default()
            },
        );
        let err = client.health_check().unwrap_err();
        assert!(matches!(err, Error::Transport { .. }), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
}
