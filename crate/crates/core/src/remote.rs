//! Blocking JSON-over-HTTP client shared by the remote embedder, reranker and
//! generator.
//!
//! Wire protocols:
//!
//! | endpoint          | request                                   | response                  |
//! |-------------------|-------------------------------------------|---------------------------|
//! | `POST /embed`     | `{"texts": [str]}`                        | `{"vectors": [[f32]]}`    |
//! | `POST /score`     | `{"query": str, "passages": [str]}`       | `{"scores": [f64]}`       |
//! | `POST /generate`  | `{"prompt": str, "max_tokens": int}`      | `{"text": str}`           |
//!
//! A non-200 status, an unreachable host, or a reply missing its key is an
//! [`Error::Transport`].

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Serialize)]
pub struct EmbedRequest<'a> {
    pub texts: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f32>>,
}

#[derive(Debug, Serialize)]
pub struct ScoreRequest<'a> {
    pub query: &'a str,
    pub passages: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct GenerateRequest<'a> {
    pub prompt: &'a str,
    pub max_tokens: usize,
}

#[derive(Debug, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

/// Thread-safe; one client may be shared by concurrent callers.
#[derive(Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    base: String,
}

impl std::fmt::Debug for JsonClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonClient").field("base", &self.base).finish()
    }
}

impl JsonClient {
    pub fn new(endpoint: &str) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(10))
            .timeout(Duration::from_secs(300))
            .build();
        JsonClient {
            agent,
            base: endpoint.trim_end_matches('/').to_string(),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    /// Full URL of `path` below the endpoint.
    pub fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base, path.trim_start_matches('/'))
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp> {
        let url = self.url(path);
        let body = serde_json::to_string(body)?;
        let response = self
            .agent
            .post(&url)
            .set("Content-Type", "application/json")
            .send_string(&body);
        let response = match response {
            Ok(r) => r,
            Err(ureq::Error::Status(code, _)) => {
                return Err(Error::transport(&url, format!("HTTP status {code}")))
            }
            Err(e) => return Err(Error::transport(&url, e)),
        };
        if response.status() != 200 {
            return Err(Error::transport(
                &url,
                format!("HTTP status {}", response.status()),
            ));
        }
        let text = response
            .into_string()
            .map_err(|e| Error::transport(&url, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::transport(&url, format!("malformed reply: {e}")))
    }
}
