//! Parsing helpers shared by the LLM and judge reply parsers.

use serde_json::Value;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplyError {
    #[error("reply is not valid JSON: {0}")]
    NotJson(String),
    #[error("expected a JSON {expected}")]
    WrongShape { expected: &'static str },
    #[error("missing key `{0}`")]
    MissingKey(&'static str),
    #[error("`{0}` is empty")]
    EmptyList(&'static str),
    #[error("entry {0} is not a string")]
    NonString(usize),
    #[error("entry {0} is an empty string")]
    EmptyEntry(usize),
    #[error("invalid choice `{0}`, expected A or B")]
    InvalidChoice(String),
}

/// Remove a surrounding Markdown code fence (with optional language tag).
pub fn strip_code_fences(reply: &str) -> &str {
    let trimmed = reply.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    // drop the info string, e.g. ```json
    let body = match rest.find('\n') {
        Some(nl) => &rest[nl + 1..],
        None => rest,
    };
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

pub fn parse_json(reply: &str) -> Result<Value, ReplyError> {
    serde_json::from_str(strip_code_fences(reply)).map_err(|e| ReplyError::NotJson(e.to_string()))
}
