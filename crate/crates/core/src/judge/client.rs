//! HTTP clients for the judge, embedder, and generation routes.
//!
//! Every client enforces the endpoint's `max_in_flight` bound with a
//! counting gate and retries transient failures (timeouts, transport
//! errors, and 5xx responses) with exponential backoff plus jitter. 4xx
//! responses and malformed bodies are permanent.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use super::http::{parse_url, post_json, HttpError, ParsedUrl};
use super::{
    EmbedRequest, EmbedResponse, ErrorsRequest, GenerateRequest, Generation, JudgeError,
    JudgeVerdict, ReportJudge, ServiceEndpoint, TemporalCategory, TemporalRequest,
    TemporalResponse, TextBackend,
};
use crate::corpus::PromptInstance;
use crate::metrics::{EmbedderError, TokenEmbedder};
use crate::rng;

/// Counting gate bounding concurrent outstanding requests.
struct Gate {
    capacity: usize,
    in_flight: Mutex<usize>,
    released: Condvar,
}

impl Gate {
    fn new(capacity: usize) -> Self {
        Gate {
            capacity: capacity.max(1),
            in_flight: Mutex::new(0),
            released: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut count = self.in_flight.lock().unwrap();
        while *count >= self.capacity {
            count = self.released.wait(count).unwrap();
        }
        *count += 1;
        GatePermit { gate: self }
    }
}

struct GatePermit<'a> {
    gate: &'a Gate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut count = self.gate.in_flight.lock().unwrap();
        *count -= 1;
        self.gate.released.notify_one();
    }
}

/// Shared transport: gate, retries, and JSON decode.
struct RouteClient {
    endpoint: ServiceEndpoint,
    url: ParsedUrl,
    gate: Gate,
    jitter: Mutex<rng::Rng>,
}

impl RouteClient {
    fn new(endpoint: ServiceEndpoint) -> Result<Self, JudgeError> {
        let url = parse_url(&endpoint.base_url)
            .map_err(|e| JudgeError::Backend(format!("bad endpoint: {e}")))?;
        let gate = Gate::new(endpoint.effective_in_flight());
        let jitter = Mutex::new(rng::seeded(rng::fnv1a(endpoint.base_url.as_bytes())));
        Ok(RouteClient {
            endpoint,
            url,
            gate,
            jitter,
        })
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.endpoint.backoff_base_ms.max(1);
        let exp = base.saturating_mul(1u64 << attempt.min(8));
        let jitter = {
            let mut rng = self.jitter.lock().unwrap();
            (rng::uniform(&mut rng) * base as f64 / 2.0) as u64
        };
        Duration::from_millis(exp + jitter)
    }

    fn post(&self, path: &str, body: serde_json::Value) -> Result<serde_json::Value, JudgeError> {
        let _permit = self.gate.acquire();
        let mut attempt: u32 = 0;
        loop {
            let outcome = post_json(
                &self.url,
                path,
                &body,
                self.endpoint.timeout(),
                self.endpoint.bearer_token.as_deref(),
            );
            let transient = match outcome {
                Ok((status, value)) if (200..300).contains(&status) => return Ok(value),
                Ok((status, value)) if (400..500).contains(&status) => {
                    return Err(JudgeError::Permanent {
                        status,
                        message: value.to_string(),
                    })
                }
                Ok((status, value)) => format!("status {status}: {value}"),
                Err(HttpError::Timeout) => "timeout".to_string(),
                Err(HttpError::Transport(m)) => m,
                Err(e @ (HttpError::BadUrl(_) | HttpError::Malformed(_))) => {
                    return Err(JudgeError::MalformedResponse(e.to_string()))
                }
            };
            if attempt >= self.endpoint.max_retries {
                return Err(JudgeError::Exhausted {
                    attempts: attempt + 1,
                    message: transient,
                });
            }
            std::thread::sleep(self.backoff(attempt));
            attempt += 1;
        }
    }
}

fn decode<T: serde::de::DeserializeOwned>(value: serde_json::Value) -> Result<T, JudgeError> {
    serde_json::from_value(value).map_err(|e| JudgeError::MalformedResponse(e.to_string()))
}

/// Remote judge speaking `/judge/errors` and `/judge/temporal`.
pub struct HttpJudge {
    client: RouteClient,
}

impl HttpJudge {
    pub fn new(endpoint: ServiceEndpoint) -> Result<Self, JudgeError> {
        Ok(HttpJudge {
            client: RouteClient::new(endpoint)?,
        })
    }
}

impl ReportJudge for HttpJudge {
    fn count_errors(&self, candidate: &str, reference: &str) -> Result<JudgeVerdict, JudgeError> {
        if reference.trim().is_empty() {
            return Err(JudgeError::EmptyReference);
        }
        let request = ErrorsRequest {
            candidate: candidate.to_string(),
            reference: reference.to_string(),
            instruction: self.client.endpoint.instruction.clone(),
        };
        let value = self
            .client
            .post("/judge/errors", serde_json::to_value(request).unwrap())?;
        // Guard against a non-integer count before decoding the full shape.
        match value.get("error_count") {
            Some(v) if v.is_u64() => {}
            other => {
                return Err(JudgeError::MalformedResponse(format!(
                    "error_count is not a non-negative integer: {other:?}"
                )))
            }
        }
        decode(value)
    }

    fn label_temporal(
        &self,
        current: &str,
        prior: Option<&str>,
    ) -> Result<TemporalCategory, JudgeError> {
        let Some(prior) = prior else {
            return Ok(TemporalCategory::FirstStudy);
        };
        let request = TemporalRequest {
            current: current.to_string(),
            prior: prior.to_string(),
        };
        let value = self
            .client
            .post("/judge/temporal", serde_json::to_value(request).unwrap())?;
        let response: TemporalResponse = decode(value)?;
        match TemporalCategory::from_label(&response.category) {
            Some(TemporalCategory::FirstStudy) | None => Err(JudgeError::MalformedResponse(
                format!("unknown temporal category {:?}", response.category),
            )),
            Some(category) => Ok(category),
        }
    }
}

/// Remote embedder speaking `/embed`.
pub struct HttpEmbedder {
    client: RouteClient,
}

impl HttpEmbedder {
    pub fn new(endpoint: ServiceEndpoint) -> Result<Self, JudgeError> {
        Ok(HttpEmbedder {
            client: RouteClient::new(endpoint)?,
        })
    }
}

impl TokenEmbedder for HttpEmbedder {
    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, EmbedderError> {
        let request = EmbedRequest {
            tokens: tokens.to_vec(),
        };
        let value = self
            .client
            .post("/embed", serde_json::to_value(request).unwrap())
            .map_err(|e| EmbedderError(e.to_string()))?;
        let response: EmbedResponse =
            serde_json::from_value(value).map_err(|e| EmbedderError(e.to_string()))?;
        if response.vectors.len() != tokens.len() {
            return Err(EmbedderError(format!(
                "expected {} vectors, got {}",
                tokens.len(),
                response.vectors.len()
            )));
        }
        Ok(response.vectors)
    }
}

/// Remote generation backend speaking `/generate`.
pub struct HttpBackend {
    client: RouteClient,
}

impl HttpBackend {
    pub fn new(endpoint: ServiceEndpoint) -> Result<Self, JudgeError> {
        Ok(HttpBackend {
            client: RouteClient::new(endpoint)?,
        })
    }
}

impl TextBackend for HttpBackend {
    fn generate(
        &self,
        prompt: &PromptInstance,
        temperature: f64,
        seed: Option<u64>,
        max_tokens: usize,
    ) -> Result<Generation, JudgeError> {
        if temperature > 0.0 && seed.is_none() {
            return Err(JudgeError::MissingSeed { temperature });
        }
        let request = GenerateRequest {
            prompt: prompt.text.clone(),
            images: prompt
                .current_images
                .iter()
                .map(|i| i.uri.clone())
                .collect(),
            temperature,
            seed,
            max_tokens,
        };
        let value = self
            .client
            .post("/generate", serde_json::to_value(request).unwrap())?;
        decode(value)
    }
}
