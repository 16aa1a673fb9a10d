//! HTTP front end serving the mocks on the gateway's wire format.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread;

use agfsync_core::backend::{
    AestheticBackend, BackendError, BackendKind, EmbedBackend, EmbedPayload, Embedding, JudgeBackend, LlmBackend, T2iBackend,
    VqaBackend,
};
use agfsync_gateway::wire::*;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use tokio::sync::oneshot;

use crate::mocks::{JudgeMode, MockAesthetic, MockEmbed, MockJudge, MockLlm, MockT2i, MockVqa};

#[derive(Debug, Clone, Copy, Default)]
pub struct MockState {
    pub llm: MockLlm,
    pub t2i: MockT2i,
    pub vqa: MockVqa,
    pub embed: MockEmbed,
    pub aesthetic: MockAesthetic,
    pub judge: MockJudge,
}

impl MockState {
    pub fn with_judge(mode: JudgeMode) -> Self {
        MockState { judge: MockJudge { mode }, ..MockState::default() }
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorResponse { error: self.1 })).into_response()
    }
}

impl From<BackendError> for ApiError {
    fn from(e: BackendError) -> Self {
        ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

fn unprocessable(msg: impl ToString) -> ApiError {
    ApiError(StatusCode::UNPROCESSABLE_ENTITY, msg.to_string())
}

fn image(b64: &str) -> Result<Vec<u8>, ApiError> {
    decode_bytes(b64).map_err(|e| unprocessable(format!("bad base64: {e}")))
}

type Shared = State<Arc<MockState>>;

async fn complete(State(s): Shared, Json(r): Json<CompleteRequest>) -> Result<Json<CompleteResponse>, ApiError> {
    Ok(Json(CompleteResponse { text: s.llm.complete(&r.instruction, r.seed)? }))
}

async fn generate(State(s): Shared, Json(r): Json<GenerateRequest>) -> Result<Json<GenerateResponse>, ApiError> {
    let cond = Embedding::new(r.condition).map_err(unprocessable)?;
    let png = s.t2i.generate(&cond, r.latent_seed)?;
    Ok(Json(GenerateResponse { image_b64: encode_bytes(&png), content_type: "image/png".into() }))
}

async fn vqa(State(s): Shared, Json(r): Json<VqaRequest>) -> Result<Json<VqaResponse>, ApiError> {
    Ok(Json(VqaResponse { answer: s.vqa.answer(&image(&r.image_b64)?, &r.question)? }))
}

async fn embed(State(s): Shared, Json(r): Json<EmbedRequest>) -> Result<Json<EmbedResponse>, ApiError> {
    let e = match (r.text, r.image_b64) {
        (Some(text), None) => s.embed.embed(EmbedPayload::Text(&text))?,
        (None, Some(b64)) => s.embed.embed(EmbedPayload::Image(&image(&b64)?))?,
        _ => return Err(unprocessable("exactly one of text and image_b64 is required")),
    };
    Ok(Json(EmbedResponse { dim: e.dim(), embedding: e.into_values() }))
}

async fn aesthetic(State(s): Shared, Json(r): Json<AestheticRequest>) -> Result<Json<AestheticResponse>, ApiError> {
    Ok(Json(AestheticResponse { score: s.aesthetic.rate(&image(&r.image_b64)?)? }))
}

async fn judge(State(s): Shared, Json(r): Json<JudgeRequest>) -> Result<Json<JudgeResponse>, ApiError> {
    let reply = s.judge.judge(&r.instruction, &image(&r.image_a_b64)?, &image(&r.image_b_b64)?)?;
    Ok(Json(JudgeResponse { reply }))
}

pub fn router(state: MockState) -> Router {
    Router::new()
        .route(BackendKind::Llm.route(), post(complete))
        .route(BackendKind::T2i.route(), post(generate))
        .route(BackendKind::Vqa.route(), post(vqa))
        .route(BackendKind::Embed.route(), post(embed))
        .route(BackendKind::Aesthetic.route(), post(aesthetic))
        .route(BackendKind::Judge.route(), post(judge))
        .with_state(Arc::new(state))
}

/// A mock server on a background thread, stopped when dropped.
pub struct MockServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    handle: Option<thread::JoinHandle<()>>,
}

impl MockServer {
    /// Bind an ephemeral port on 127.0.0.1 and start serving.
    pub fn start(state: MockState) -> std::io::Result<Self> {
        let listener = std::net::TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let (tx, rx) = oneshot::channel();
        let handle = thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener registration");
                let stop = async {
                    let _ = rx.await;
                };
                if let Err(e) = axum::serve(listener, router(state)).with_graceful_shutdown(stop).await {
                    log::error!("mock server: {e}");
                }
            });
        });
        Ok(MockServer { addr, shutdown: Some(tx), handle: Some(handle) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
