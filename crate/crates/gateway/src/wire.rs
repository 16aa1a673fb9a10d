//! Request and response bodies for the six backend routes.
//!
//! Every request carries a `request_id` derived from its other fields, so a
//! retried request is recognisably the same request. Binary payloads are
//! standard base64 with padding.

use agfsync_core::hashing::sha256_hex;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteRequest {
    pub request_id: String,
    pub instruction: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub request_id: String,
    pub condition: Vec<f64>,
    pub latent_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub image_b64: String,
    pub content_type: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaRequest {
    pub request_id: String,
    pub image_b64: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaResponse {
    pub answer: String,
}

/// Exactly one of `text` and `image_b64` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub request_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_b64: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub embedding: Vec<f64>,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AestheticRequest {
    pub request_id: String,
    pub image_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AestheticResponse {
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub request_id: String,
    pub instruction: String,
    pub image_a_b64: String,
    pub image_b_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub reply: String,
}

/// Error body returned by servers for rejected requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

pub fn encode_bytes(bytes: &[u8]) -> String {
    B64.encode(bytes)
}

pub fn decode_bytes(s: &str) -> Result<Vec<u8>, base64::DecodeError> {
    B64.decode(s)
}

/// First 32 hex digits of SHA-256 over the route and the request's
/// identifying fields.
pub fn request_id(route: &str, fields: &[&[u8]]) -> String {
    let mut buf = Vec::new();
    for part in std::iter::once(route.as_bytes()).chain(fields.iter().copied()) {
        buf.extend_from_slice(&(part.len() as u64).to_le_bytes());
        buf.extend_from_slice(part);
    }
    sha256_hex(&buf)[..32].to_string()
}
