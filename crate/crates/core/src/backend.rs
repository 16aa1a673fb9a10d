//! Backend contracts for the external models (LLM, text-to-image, VQA,
//! embedder, aesthetic predictor, pairwise judge).
//!
//! Implementations live elsewhere: the HTTP gateway crate talks to real or
//! mock servers, the testkit crate provides in-process mocks. The checked
//! free functions in this module enforce the response contracts regardless of
//! which implementation is plugged in.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::ImageRef;
use crate::store::BlobStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Llm,
    T2i,
    Vqa,
    Embed,
    Aesthetic,
    Judge,
}

impl BackendKind {
    pub const ALL: [BackendKind; 6] = [
        BackendKind::Llm,
        BackendKind::T2i,
        BackendKind::Vqa,
        BackendKind::Embed,
        BackendKind::Aesthetic,
        BackendKind::Judge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Llm => "llm",
            BackendKind::T2i => "t2i",
            BackendKind::Vqa => "vqa",
            BackendKind::Embed => "embed",
            BackendKind::Aesthetic => "aesthetic",
            BackendKind::Judge => "judge",
        }
    }

    /// HTTP route served for this kind.
    pub fn route(self) -> &'static str {
        match self {
            BackendKind::Llm => "/v1/complete",
            BackendKind::T2i => "/v1/generate",
            BackendKind::Vqa => "/v1/vqa",
            BackendKind::Embed => "/v1/embed",
            BackendKind::Aesthetic => "/v1/aesthetic",
            BackendKind::Judge => "/v1/judge",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend rejected request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("backend returned an empty reply")]
    EmptyReply,
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("aesthetic score {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("invalid request: {0}")]
    InvalidInput(String),
    #[error("endpoint of kind {actual} cannot serve {expected} requests")]
    WrongKind { expected: BackendKind, actual: BackendKind },
    #[error("image {0} not found in store")]
    MissingImage(ImageRef),
    #[error("no {0} backend configured")]
    NotConfigured(BackendKind),
}

impl BackendError {
    /// Transport and 5xx-class failures are worth retrying; validation
    /// failures are not.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport { .. } => true,
            BackendError::Rejected { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// A dense embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EmbeddingWire", into = "EmbeddingWire")]
pub struct Embedding {
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingWire {
    values: Vec<f64>,
    dim: usize,
}

impl TryFrom<EmbeddingWire> for Embedding {
    type Error = BackendError;

    fn try_from(wire: EmbeddingWire) -> Result<Self, Self::Error> {
        if wire.dim != wire.values.len() {
            return Err(BackendError::Contract(format!(
                "declared dim {} but {} values",
                wire.dim,
                wire.values.len()
            )));
        }
        Embedding::new(wire.values)
    }
}

impl From<Embedding> for EmbeddingWire {
    fn from(e: Embedding) -> Self {
        EmbeddingWire { dim: e.values.len(), values: e.values }
    }
}

impl Embedding {
    /// Nonempty and finite, or a contract error.
    pub fn new(values: Vec<f64>) -> Result<Self, BackendError> {
        if values.is_empty() {
            return Err(BackendError::Contract("embedding has zero length".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(BackendError::InvalidInput(format!("embedding value {i} is not finite")));
        }
        Ok(Embedding { values })
    }

    /// Skips validation; callers must guarantee finiteness.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Embedding { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum EmbedPayload<'a> {
    Text(&'a str),
    Image(&'a [u8]),
}

pub trait LlmBackend: Send + Sync {
    /// Identifier recorded as `source_model` on generated records.
    fn id(&self) -> String;

    /// Raw completion for `instruction`. `seed` is the sampling seed; the same
    /// `(instruction, seed)` must give the same reply from deterministic
    /// backends.
    fn complete(&self, instruction: &str, seed: u64) -> Result<String, BackendError>;

    /// How many times a caller may re-ask after an unparseable reply.
    fn retry_budget(&self) -> u32 {
        2
    }
}

pub trait T2iBackend: Send + Sync {
    fn generate(&self, condition: &Embedding, latent_seed: u64) -> Result<Vec<u8>, BackendError>;
}

pub trait VqaBackend: Send + Sync {
    fn answer(&self, image: &[u8], question: &str) -> Result<String, BackendError>;
}

pub trait EmbedBackend: Send + Sync {
    fn embed(&self, payload: EmbedPayload<'_>) -> Result<Embedding, BackendError>;
}

pub trait AestheticBackend: Send + Sync {
    /// Raw score in `[0, 1]`.
    fn rate(&self, image: &[u8]) -> Result<f64, BackendError>;
}

pub trait JudgeBackend: Send + Sync {
    /// Raw judge reply for a two-image comparison.
    fn judge(&self, instruction: &str, image_a: &[u8], image_b: &[u8]) -> Result<String, BackendError>;
}

/// The set of backends a pipeline run talks to.
#[derive(Clone)]
pub struct Backends {
    pub llm: Arc<dyn LlmBackend>,
    pub t2i: Arc<dyn T2iBackend>,
    pub vqa: Arc<dyn VqaBackend>,
    pub embed: Arc<dyn EmbedBackend>,
    pub aesthetic: Arc<dyn AestheticBackend>,
    pub judge: Arc<dyn JudgeBackend>,
}

/// Completion that must be nonempty.
pub fn complete_text(llm: &dyn LlmBackend, instruction: &str, seed: u64) -> Result<String, BackendError> {
    let reply = llm.complete(instruction, seed)?;
    if reply.trim().is_empty() {
        return Err(BackendError::EmptyReply);
    }
    Ok(reply)
}

/// Generate from a finite condition; the reply must be a nonempty payload.
pub fn generate_image(t2i: &dyn T2iBackend, condition: &Embedding, latent_seed: u64) -> Result<Vec<u8>, BackendError> {
    if let Some(i) = condition.values().iter().position(|v| !v.is_finite()) {
        return Err(BackendError::InvalidInput(format!("condition value {i} is not finite")));
    }
    let bytes = t2i.generate(condition, latent_seed)?;
    if bytes.is_empty() {
        return Err(BackendError::Contract("empty image payload".into()));
    }
    Ok(bytes)
}

/// Ask the VQA model about a stored image.
pub fn answer_question(
    vqa: &dyn VqaBackend,
    store: &BlobStore,
    image: &ImageRef,
    question: &str,
) -> Result<String, BackendError> {
    let bytes = load_image(store, image)?;
    vqa.answer(&bytes, question)
}

/// Embedding with finite values; when `expected_dim` is given the reply must
/// match it.
pub fn embed(
    backend: &dyn EmbedBackend,
    payload: EmbedPayload<'_>,
    expected_dim: Option<usize>,
) -> Result<Embedding, BackendError> {
    let e = backend.embed(payload)?;
    if let Some(i) = e.values().iter().position(|v| !v.is_finite()) {
        return Err(BackendError::Contract(format!("embedding value {i} is not finite")));
    }
    if let Some(dim) = expected_dim {
        if e.dim() != dim {
            return Err(BackendError::Contract(format!("expected dim {dim}, backend returned {}", e.dim())));
        }
    }
    Ok(e)
}

/// Raw aesthetic score, checked to lie in `[0, 1]`.
pub fn rate_aesthetics(backend: &dyn AestheticBackend, image: &[u8]) -> Result<f64, BackendError> {
    let raw = backend.rate(image)?;
    if !(0.0..=1.0).contains(&raw) {
        return Err(BackendError::OutOfRange(raw));
    }
    Ok(raw)
}

pub fn load_image(store: &BlobStore, image: &ImageRef) -> Result<Vec<u8>, BackendError> {
    store.get(image).map_err(|_| BackendError::MissingImage(image.clone()))
}
