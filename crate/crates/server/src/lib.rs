//! HTTP front end for the model protocol.
//!
//! Serves `POST /v1/sample`, `/v1/rank` and `/v1/embed` from any
//! [`PolicyClient`], [`TeacherClient`] and [`EmbedClient`]. With the
//! deterministic mocks behind it this is a stand-in model server for
//! integration tests and offline runs.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use forge_evolve::clients::{
    self, ClientError, EmbedClient, EmbedRequest, EmbedResponse, ErrorBody, PolicyClient,
    RankRequest, RankResponse, SampleRequest, SampleResponse, TeacherClient, EMBED_PATH, RANK_PATH,
    SAMPLE_PATH,
};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

#[derive(Clone)]
pub struct AppState {
    pub policy: Arc<dyn PolicyClient>,
    pub teacher: Arc<dyn TeacherClient>,
    pub embedder: Arc<dyn EmbedClient>,
}

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(ErrorBody {
                error: self.message,
            }),
        )
            .into_response()
    }
}

impl From<ClientError> for ApiError {
    fn from(e: ClientError) -> Self {
        let status = match &e {
            ClientError::InvalidRequest(_) | ClientError::EmptyText { .. } => {
                StatusCode::BAD_REQUEST
            }
            ClientError::Timeout => StatusCode::GATEWAY_TIMEOUT,
            ClientError::Server { status, .. } => {
                StatusCode::from_u16(*status).unwrap_or(StatusCode::BAD_GATEWAY)
            }
            _ => StatusCode::BAD_GATEWAY,
        };
        ApiError {
            status,
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError {
            status: e.status(),
            message: e.body_text(),
        }
    }
}

/// Backends may block (e.g. when they proxy to another HTTP server).
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ClientError> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(result) => result.map_err(ApiError::from),
        Err(e) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: e.to_string(),
        }),
    }
}

async fn sample(
    State(state): State<AppState>,
    body: Result<Json<SampleRequest>, JsonRejection>,
) -> Result<Json<SampleResponse>, ApiError> {
    let Json(request) = body?;
    let candidates =
        blocking(move || clients::policy_sample(state.policy.as_ref(), &request)).await?;
    Ok(Json(SampleResponse { candidates }))
}

async fn rank(
    State(state): State<AppState>,
    body: Result<Json<RankRequest>, JsonRejection>,
) -> Result<Json<RankResponse>, ApiError> {
    let Json(request) = body?;
    Ok(Json(
        blocking(move || clients::teacher_rank(state.teacher.as_ref(), &request)).await?,
    ))
}

async fn embed(
    State(state): State<AppState>,
    body: Result<Json<EmbedRequest>, JsonRejection>,
) -> Result<Json<EmbedResponse>, ApiError> {
    let Json(request) = body?;
    let vectors = blocking(move || clients::embed(state.embedder.as_ref(), &request.texts)).await?;
    Ok(Json(EmbedResponse {
        vectors: vectors.into_iter().map(|v| v.into_inner()).collect(),
    }))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route(SAMPLE_PATH, post(sample))
        .route(RANK_PATH, post(rank))
        .route(EMBED_PATH, post(embed))
        .with_state(state)
}

/// A server running on its own thread and runtime; stops when dropped.
pub struct BackgroundServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl BackgroundServer {
    /// Binds `127.0.0.1` on an ephemeral port.
    pub fn start(router: Router) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let listener = runtime.block_on(TcpListener::bind("127.0.0.1:0"))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let shutdown = async {
                    let _ = rx.await;
                };
                if let Err(e) = axum::serve(listener, router)
                    .with_graceful_shutdown(shutdown)
                    .await
                {
                    tracing::error!(error = %e, "server stopped");
                }
            });
        });
        Ok(BackgroundServer {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}
