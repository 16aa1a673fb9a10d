//! Blocking JSON-over-HTTP client for the model backends.
//!
//! One [`HttpBackend`] talks to one endpoint of one [`BackendKind`] and
//! implements the matching backend trait from `agfsync_core::backend`.
//! Calling a route of another kind fails with [`BackendError::WrongKind`]
//! without touching the network.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use agfsync_core::backend::{
    AestheticBackend, BackendError, BackendKind, EmbedBackend, EmbedPayload, Embedding, JudgeBackend, LlmBackend,
    T2iBackend, VqaBackend,
};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub mod wire;

use wire::*;

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_max_retries() -> u32 {
    3
}

fn default_max_in_flight() -> usize {
    8
}

fn default_backoff_ms() -> u64 {
    250
}

/// Where and how to reach one backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub kind: BackendKind,
    pub base_url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
    /// Name recorded as the source model of LLM output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Retries after the first attempt, for transport and 5xx failures only.
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Base delay of the exponential backoff.
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
}

impl EndpointConfig {
    pub fn new(kind: BackendKind, base_url: impl Into<String>) -> Self {
        EndpointConfig {
            kind,
            base_url: base_url.into(),
            auth_token: None,
            model: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            max_in_flight: default_max_in_flight(),
            backoff_base_ms: default_backoff_ms(),
        }
    }

    pub fn url(&self) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), self.kind.route())
    }
}

/// Counting semaphore bounding in-flight requests.
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    endpoint: EndpointConfig,
    agent: ureq::Agent,
    limiter: Limiter,
}

impl HttpBackend {
    pub fn new(endpoint: EndpointConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = Limiter::new(endpoint.max_in_flight);
        HttpBackend { endpoint, agent, limiter }
    }

    pub fn endpoint(&self) -> &EndpointConfig {
        &self.endpoint
    }

    fn backoff(&self, retry: u32) -> Duration {
        let cap = self.endpoint.backoff_base_ms.saturating_mul(1u64 << retry.min(20));
        if cap == 0 {
            return Duration::ZERO;
        }
        Duration::from_millis(rand::rng().random_range(0..=cap))
    }

    fn attempt(&self, url: &str, body: &[u8]) -> Result<String, BackendError> {
        let _permit = self.limiter.acquire();
        let mut req = self.agent.post(url).header("content-type", "application/json");
        if let Some(token) = &self.endpoint.auth_token {
            req = req.header("authorization", format!("Bearer {token}"));
        }
        let mut resp = req
            .send(body)
            .map_err(|e| BackendError::Transport { attempts: 1, message: e.to_string() })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport { attempts: 1, message: e.to_string() })?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Rejected { status, body: text });
        }
        Ok(text)
    }

    /// POST `request` to the route of `kind`, retrying retryable failures.
    fn call<Req: Serialize, Resp: DeserializeOwned>(&self, kind: BackendKind, request: &Req) -> Result<Resp, BackendError> {
        if kind != self.endpoint.kind {
            return Err(BackendError::WrongKind { expected: kind, actual: self.endpoint.kind });
        }
        let url = self.endpoint.url();
        let body = serde_json::to_vec(request).map_err(|e| BackendError::InvalidInput(e.to_string()))?;
        let attempts = self.endpoint.max_retries + 1;
        let mut last = None;
        for attempt in 1..=attempts {
            if attempt > 1 {
                thread::sleep(self.backoff(attempt - 2));
            }
            match self.attempt(&url, &body) {
                Ok(text) => {
                    return serde_json::from_str(&text)
                        .map_err(|e| BackendError::Contract(format!("{kind} reply: {e}")));
                }
                Err(e) if e.is_retryable() => {
                    log::debug!("{url}: attempt {attempt}/{attempts} failed: {e}");
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(match last {
            Some(BackendError::Transport { message, .. }) => BackendError::Transport { attempts, message },
            Some(other) => other,
            None => BackendError::Transport { attempts, message: "no attempt made".into() },
        })
    }
}

impl LlmBackend for HttpBackend {
    fn id(&self) -> String {
        self.endpoint.model.clone().unwrap_or_else(|| format!("llm@{}", self.endpoint.base_url))
    }

    fn complete(&self, instruction: &str, seed: u64) -> Result<String, BackendError> {
        let request_id = request_id(BackendKind::Llm.route(), &[instruction.as_bytes(), &seed.to_le_bytes()]);
        let resp: CompleteResponse =
            self.call(BackendKind::Llm, &CompleteRequest { request_id, instruction: instruction.into(), seed })?;
        Ok(resp.text)
    }
}

impl T2iBackend for HttpBackend {
    fn generate(&self, condition: &Embedding, latent_seed: u64) -> Result<Vec<u8>, BackendError> {
        let cond_bytes: Vec<u8> = condition.values().iter().flat_map(|v| v.to_le_bytes()).collect();
        let request_id = request_id(BackendKind::T2i.route(), &[&cond_bytes, &latent_seed.to_le_bytes()]);
        let resp: GenerateResponse = self.call(
            BackendKind::T2i,
            &GenerateRequest { request_id, condition: condition.values().to_vec(), latent_seed },
        )?;
        decode_bytes(&resp.image_b64).map_err(|e| BackendError::Contract(format!("image payload: {e}")))
    }
}

impl VqaBackend for HttpBackend {
    fn answer(&self, image: &[u8], question: &str) -> Result<String, BackendError> {
        let request_id = request_id(BackendKind::Vqa.route(), &[image, question.as_bytes()]);
        let resp: VqaResponse = self.call(
            BackendKind::Vqa,
            &VqaRequest { request_id, image_b64: encode_bytes(image), question: question.into() },
        )?;
        Ok(resp.answer)
    }
}

impl EmbedBackend for HttpBackend {
    fn embed(&self, payload: EmbedPayload<'_>) -> Result<Embedding, BackendError> {
        let request = match payload {
            EmbedPayload::Text(text) => EmbedRequest {
                request_id: request_id(BackendKind::Embed.route(), &[b"text", text.as_bytes()]),
                text: Some(text.into()),
                image_b64: None,
            },
            EmbedPayload::Image(bytes) => EmbedRequest {
                request_id: request_id(BackendKind::Embed.route(), &[b"image", bytes]),
                text: None,
                image_b64: Some(encode_bytes(bytes)),
            },
        };
        let resp: EmbedResponse = self.call(BackendKind::Embed, &request)?;
        if resp.dim != resp.embedding.len() {
            return Err(BackendError::Contract(format!(
                "declared dim {} but {} values",
                resp.dim,
                resp.embedding.len()
            )));
        }
        Embedding::new(resp.embedding)
    }
}

impl AestheticBackend for HttpBackend {
    fn rate(&self, image: &[u8]) -> Result<f64, BackendError> {
        let request_id = request_id(BackendKind::Aesthetic.route(), &[image]);
        let resp: AestheticResponse =
            self.call(BackendKind::Aesthetic, &AestheticRequest { request_id, image_b64: encode_bytes(image) })?;
        Ok(resp.score)
    }
}

impl JudgeBackend for HttpBackend {
    fn judge(&self, instruction: &str, image_a: &[u8], image_b: &[u8]) -> Result<String, BackendError> {
        let request_id = request_id(BackendKind::Judge.route(), &[instruction.as_bytes(), image_a, image_b]);
        let resp: JudgeResponse = self.call(
            BackendKind::Judge,
            &JudgeRequest {
                request_id,
                instruction: instruction.into(),
                image_a_b64: encode_bytes(image_a),
                image_b_b64: encode_bytes(image_b),
            },
        )?;
        Ok(resp.reply)
    }
}
