//! Deterministic mock backends, an HTTP server for them, and fixtures for
//! running the pipeline offline.

use std::sync::Arc;

use agfsync_core::backend::{BackendKind, Backends};
use agfsync_gateway::{EndpointConfig, HttpBackend};

pub mod fixtures;
pub mod mocks;
pub mod server;

pub use mocks::JudgeMode;
pub use server::{MockServer, MockState};

/// In-process mock backends.
pub fn mock_backends(judge: JudgeMode) -> Backends {
    let s = MockState::with_judge(judge);
    Backends {
        llm: Arc::new(s.llm),
        t2i: Arc::new(s.t2i),
        vqa: Arc::new(s.vqa),
        embed: Arc::new(s.embed),
        aesthetic: Arc::new(s.aesthetic),
        judge: Arc::new(s.judge),
    }
}

/// HTTP backends that all point at one server, e.g. a [`MockServer`].
pub fn http_backends(base_url: &str) -> Backends {
    let b = |kind| {
        let mut cfg = EndpointConfig::new(kind, base_url);
        cfg.backoff_base_ms = 10;
        if kind == BackendKind::Llm {
            cfg.model = Some(mocks::MOCK_LLM_ID.into());
        }
        Arc::new(HttpBackend::new(cfg))
    };
    Backends {
        llm: b(BackendKind::Llm),
        t2i: b(BackendKind::T2i),
        vqa: b(BackendKind::Vqa),
        embed: b(BackendKind::Embed),
        aesthetic: b(BackendKind::Aesthetic),
        judge: b(BackendKind::Judge),
    }
}
