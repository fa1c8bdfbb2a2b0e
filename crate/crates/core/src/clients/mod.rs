//! Clients for the external models: policy sampler, teacher ranker and text embedder.
//!
//! Every backend speaks the same JSON protocol (see [`SampleRequest`],
//! [`RankRequest`], [`EmbedRequest`]). Endpoints are either `http(s)://`
//! URLs or `mock:<name>[=<arg>]` specifiers resolved to the in-process mocks.

mod http;
mod mock;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::reward::Embedding;

pub use http::{HttpModelClient, REQUEST_ID_HEADER};
pub use mock::{
    CosineTeacher, HashingEmbedder, ScriptedPolicy, DEFAULT_EMBED_DIM, DEFAULT_POLICY_POOL,
    DEFAULT_TEACHER_TARGET,
};

/// The standard query sent to the policy.
pub const STANDARD_PROMPT: &str = "Does the image look fake?";

pub const SAMPLE_PATH: &str = "/v1/sample";
pub const RANK_PATH: &str = "/v1/rank";
pub const EMBED_PATH: &str = "/v1/embed";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ClientError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("expected {expected} candidates, got {got}")]
    ShortResponse { expected: usize, got: usize },
    #[error("malformed ranking: {0}")]
    MalformedRanking(String),
    #[error("text {index} is empty")]
    EmptyText { index: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("server returned {status}: {message}")]
    Server { status: u16, message: String },
    #[error("could not decode response: {0}")]
    Decode(String),
    #[error("bad client configuration: {0}")]
    Config(String),
}

impl ClientError {
    /// Whether a retry can plausibly succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            ClientError::Timeout | ClientError::Transport(_) => true,
            ClientError::Server { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub prompt: String,
    pub image_ref: String,
    #[serde(default)]
    pub extra_info_ref: Option<String>,
    pub previous_answer: String,
    pub n: usize,
    /// Round seed; lets deterministic backends vary their draws across rounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Base64 image bytes, only when inlining is enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_data: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResponse {
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRequest {
    pub image_ref: String,
    pub items: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_data: Option<String>,
}

/// `order[0]` is the index of the best item. `scores`, when a backend reports
/// them, are indexed like the request items and let callers detect ties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResponse {
    pub order: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub trait PolicyClient: Send + Sync {
    fn sample(&self, request: &SampleRequest) -> Result<SampleResponse, ClientError>;
}

pub trait TeacherClient: Send + Sync {
    fn rank(&self, request: &RankRequest) -> Result<RankResponse, ClientError>;
}

pub trait EmbedClient: Send + Sync {
    fn embed(&self, request: &EmbedRequest) -> Result<EmbedResponse, ClientError>;
}

/// Samples exactly `request.n` candidates, enforcing the protocol contract.
pub fn policy_sample(
    client: &dyn PolicyClient,
    request: &SampleRequest,
) -> Result<Vec<String>, ClientError> {
    if request.n == 0 {
        return Err(ClientError::InvalidRequest("n must be at least 1".into()));
    }
    let mut candidates = client.sample(request)?.candidates;
    if candidates.len() < request.n {
        return Err(ClientError::ShortResponse {
            expected: request.n,
            got: candidates.len(),
        });
    }
    candidates.truncate(request.n);
    Ok(candidates)
}

/// Ranks at least two items and checks the answer is a permutation.
pub fn teacher_rank(
    client: &dyn TeacherClient,
    request: &RankRequest,
) -> Result<RankResponse, ClientError> {
    if request.items.len() < 2 {
        return Err(ClientError::InvalidRequest(
            "ranking needs at least two items".into(),
        ));
    }
    let response = client.rank(request)?;
    check_permutation(&response.order, request.items.len())?;
    if let Some(scores) = &response.scores {
        if scores.len() != request.items.len() {
            return Err(ClientError::MalformedRanking(format!(
                "{} scores for {} items",
                scores.len(),
                request.items.len()
            )));
        }
    }
    Ok(response)
}

pub fn check_permutation(order: &[usize], len: usize) -> Result<(), ClientError> {
    if order.len() != len {
        return Err(ClientError::MalformedRanking(format!(
            "order has {} entries for {} items",
            order.len(),
            len
        )));
    }
    let mut seen = vec![false; len];
    for &i in order {
        if i >= len || seen[i] {
            return Err(ClientError::MalformedRanking(format!(
                "{order:?} is not a permutation of 0..{len}"
            )));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Embeds non-empty texts into equal-length vectors.
pub fn embed(client: &dyn EmbedClient, texts: &[String]) -> Result<Vec<Embedding>, ClientError> {
    if texts.is_empty() {
        return Err(ClientError::InvalidRequest("nothing to embed".into()));
    }
    if let Some(index) = texts.iter().position(|t| t.is_empty()) {
        return Err(ClientError::EmptyText { index });
    }
    let request = EmbedRequest {
        texts: texts.to_vec(),
    };
    let vectors = client.embed(&request)?.vectors;
    if vectors.len() != texts.len() {
        return Err(ClientError::Decode(format!(
            "{} vectors for {} texts",
            vectors.len(),
            texts.len()
        )));
    }
    let dim = vectors[0].len();
    if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
        return Err(ClientError::Decode(
            "vectors have unequal or zero length".into(),
        ));
    }
    Ok(vectors.into_iter().map(Embedding::new).collect())
}

/// Where a client points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Http(String),
    Mock { name: String, arg: Option<String> },
}

impl Endpoint {
    pub fn parse(spec: &str) -> Result<Self, ClientError> {
        if let Some(rest) = spec.strip_prefix("mock:") {
            let (name, arg) = match rest.split_once('=') {
                Some((n, a)) => (n, Some(a.to_string())),
                None => (rest, None),
            };
            if name.is_empty() {
                return Err(ClientError::Config(format!("empty mock name in {spec:?}")));
            }
            Ok(Endpoint::Mock {
                name: name.to_string(),
                arg,
            })
        } else if spec.starts_with("http://") || spec.starts_with("https://") {
            Ok(Endpoint::Http(spec.trim_end_matches('/').to_string()))
        } else {
            Err(ClientError::Config(format!(
                "endpoint {spec:?} is neither a URL nor a mock: specifier"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    pub endpoint: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Only used by mocks.
    pub seed: u64,
    pub bearer_token: Option<String>,
    /// Send image bytes inline as base64 instead of by path.
    pub inline_images: bool,
}

impl ClientConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        ClientConfig {
            endpoint: endpoint.into(),
            timeout_ms: 30_000,
            max_retries: 2,
            seed: 0,
            bearer_token: None,
            inline_images: false,
        }
    }

    pub fn validate(&self) -> Result<Endpoint, ClientError> {
        if self.timeout_ms == 0 {
            return Err(ClientError::Config("timeout must be positive".into()));
        }
        Endpoint::parse(&self.endpoint)
    }
}

fn read_arg_file(arg: &str) -> Result<String, ClientError> {
    std::fs::read_to_string(PathBuf::from(arg))
        .map_err(|e| ClientError::Config(format!("cannot read {arg}: {e}")))
}

fn unknown_mock(kind: &str, name: &str) -> ClientError {
    ClientError::Config(format!("unknown {kind} mock {name:?}"))
}

/// `mock:scripted[=pool.json]` or an HTTP endpoint.
pub fn build_policy(config: &ClientConfig) -> Result<Arc<dyn PolicyClient>, ClientError> {
    match config.validate()? {
        Endpoint::Http(_) => Ok(Arc::new(HttpModelClient::new(config)?)),
        Endpoint::Mock { name, arg } => match name.as_str() {
            "scripted" => {
                let pool = match arg {
                    Some(path) => serde_json::from_str::<Vec<String>>(&read_arg_file(&path)?)
                        .map_err(|e| ClientError::Config(format!("bad pool file {path}: {e}")))?,
                    None => DEFAULT_POLICY_POOL.iter().map(|s| s.to_string()).collect(),
                };
                Ok(Arc::new(ScriptedPolicy::new(pool, config.seed)?))
            }
            other => Err(unknown_mock("policy", other)),
        },
    }
}

/// `mock:cosine-to-target[=target.txt]` or an HTTP endpoint.
pub fn build_teacher(config: &ClientConfig) -> Result<Arc<dyn TeacherClient>, ClientError> {
    match config.validate()? {
        Endpoint::Http(_) => Ok(Arc::new(HttpModelClient::new(config)?)),
        Endpoint::Mock { name, arg } => match name.as_str() {
            "cosine-to-target" => {
                let target = match arg {
                    Some(path) => read_arg_file(&path)?,
                    None => DEFAULT_TEACHER_TARGET.to_string(),
                };
                Ok(Arc::new(CosineTeacher::new(
                    target,
                    HashingEmbedder::default(),
                )))
            }
            other => Err(unknown_mock("teacher", other)),
        },
    }
}

/// `mock:hashing[=dim]` or an HTTP endpoint.
pub fn build_embedder(config: &ClientConfig) -> Result<Arc<dyn EmbedClient>, ClientError> {
    match config.validate()? {
        Endpoint::Http(_) => Ok(Arc::new(HttpModelClient::new(config)?)),
        Endpoint::Mock { name, arg } => match name.as_str() {
            "hashing" => {
                let dim = match arg {
                    Some(d) => d
                        .parse::<usize>()
                        .ok()
                        .filter(|&d| d > 0)
                        .ok_or_else(|| ClientError::Config(format!("bad dimension {d:?}")))?,
                    None => DEFAULT_EMBED_DIM,
                };
                Ok(Arc::new(HashingEmbedder::new(dim)))
            }
            other => Err(unknown_mock("embedder", other)),
        },
    }
}

/// Stable 64-bit digest of a sequence of byte strings.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 output is 32 bytes"))
}
