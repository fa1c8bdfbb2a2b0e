use std::time::Duration;

use base64::Engine;
use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{
    stable_hash, ClientConfig, ClientError, EmbedClient, EmbedRequest, EmbedResponse, Endpoint,
    ErrorBody, PolicyClient, RankRequest, RankResponse, SampleRequest, SampleResponse,
    TeacherClient, EMBED_PATH, RANK_PATH, SAMPLE_PATH,
};

pub const REQUEST_ID_HEADER: &str = "x-request-id";

/// Blocking JSON client for the `/v1` protocol.
///
/// Must not be called from inside an async runtime.
#[derive(Debug, Clone)]
pub struct HttpModelClient {
    base: String,
    client: Client,
    max_retries: u32,
    bearer_token: Option<String>,
    inline_images: bool,
}

impl HttpModelClient {
    pub fn new(config: &ClientConfig) -> Result<Self, ClientError> {
        let base = match config.validate()? {
            Endpoint::Http(base) => base,
            Endpoint::Mock { .. } => {
                return Err(ClientError::Config(format!(
                    "{} is not an HTTP endpoint",
                    config.endpoint
                )))
            }
        };
        let client = Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        Ok(HttpModelClient {
            base,
            client,
            max_retries: config.max_retries,
            bearer_token: config.bearer_token.clone(),
            inline_images: config.inline_images,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn post<B: Serialize, R: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<R, ClientError> {
        let payload =
            serde_json::to_vec(body).map_err(|e| ClientError::InvalidRequest(e.to_string()))?;
        // Same body, same id: retries are recognisable as the same call.
        let request_id = format!("{:016x}", stable_hash(&[path.as_bytes(), &payload]));
        let url = format!("{}{}", self.base, path);
        let mut attempt = 0;
        loop {
            match self.post_once(&url, &payload, &request_id) {
                Err(e) if e.is_transient() && attempt < self.max_retries => {
                    attempt += 1;
                    tracing::debug!(%url, attempt, error = %e, "retrying");
                }
                other => return other,
            }
        }
    }

    fn post_once<R: DeserializeOwned>(
        &self,
        url: &str,
        payload: &[u8],
        request_id: &str,
    ) -> Result<R, ClientError> {
        let mut request = self
            .client
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .header(REQUEST_ID_HEADER, request_id)
            .body(payload.to_vec());
        if let Some(token) = &self.bearer_token {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(map_transport)?;
        let status = response.status();
        let bytes = response.bytes().map_err(map_transport)?;
        if !status.is_success() {
            let message = serde_json::from_slice::<ErrorBody>(&bytes)
                .map(|b| b.error)
                .unwrap_or_else(|_| String::from_utf8_lossy(&bytes).into_owned());
            return Err(ClientError::Server {
                status: status.as_u16(),
                message,
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    fn inline(&self, image_ref: &str) -> Result<Option<String>, ClientError> {
        if !self.inline_images {
            return Ok(None);
        }
        let bytes = std::fs::read(image_ref)
            .map_err(|e| ClientError::InvalidRequest(format!("cannot inline {image_ref}: {e}")))?;
        Ok(Some(
            base64::engine::general_purpose::STANDARD.encode(bytes),
        ))
    }
}

fn map_transport(e: reqwest::Error) -> ClientError {
    if e.is_timeout() {
        ClientError::Timeout
    } else {
        ClientError::Transport(e.to_string())
    }
}

impl PolicyClient for HttpModelClient {
    fn sample(&self, request: &SampleRequest) -> Result<SampleResponse, ClientError> {
        match self.inline(&request.image_ref)? {
            Some(data) => {
                let mut request = request.clone();
                request.image_data = Some(data);
                self.post(SAMPLE_PATH, &request)
            }
            None => self.post(SAMPLE_PATH, request),
        }
    }
}

impl TeacherClient for HttpModelClient {
    fn rank(&self, request: &RankRequest) -> Result<RankResponse, ClientError> {
        match self.inline(&request.image_ref)? {
            Some(data) => {
                let mut request = request.clone();
                request.image_data = Some(data);
                self.post(RANK_PATH, &request)
            }
            None => self.post(RANK_PATH, request),
        }
    }
}

impl EmbedClient for HttpModelClient {
    fn embed(&self, request: &EmbedRequest) -> Result<EmbedResponse, ClientError> {
        self.post(EMBED_PATH, request)
    }
}
