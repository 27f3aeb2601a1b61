//! Client for an HTTP retrieval service.
//!
//! The service accepts `POST {"query": "...", "topk": N}` and replies with
//! `{"hits": [{"id", "title", "text", "score"}, ...]}`, best first. Hits are
//! passed through in server order; no client-side re-ranking.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Retriever, RetrieverError, ScoredPassage};

#[derive(Debug, Clone)]
pub struct RemoteRetrieverConfig {
    /// Full URL of the search route, e.g. `http://host:8001/retrieve`.
    pub endpoint: String,
    pub timeout: Duration,
}

impl RemoteRetrieverConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteRetrieverConfig {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(30),
        }
    }
}

pub struct RemoteRetriever {
    config: RemoteRetrieverConfig,
    client: reqwest::blocking::Client,
}

impl RemoteRetriever {
    pub fn new(config: RemoteRetrieverConfig) -> Result<Self, RetrieverError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| RetrieverError::RemoteTransport(format!("cannot build HTTP client: {e}")))?;
        Ok(RemoteRetriever { config, client })
    }
}

#[derive(Serialize)]
struct SearchRequest<'a> {
    query: &'a str,
    topk: usize,
}

#[derive(Deserialize)]
struct SearchResponse {
    hits: Vec<Hit>,
}

#[derive(Deserialize)]
struct Hit {
    id: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    text: String,
    #[serde(default)]
    score: f64,
}

impl Retriever for RemoteRetriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<ScoredPassage>, RetrieverError> {
        let response = self
            .client
            .post(&self.config.endpoint)
            .json(&SearchRequest { query, topk: k })
            .send()
            .map_err(|e| RetrieverError::RemoteTransport(e.to_string()))?;

        let status = response.status();
        if !status.is_success() {
            return Err(RetrieverError::RemoteStatus {
                status: status.as_u16(),
                body: response.text().unwrap_or_default().chars().take(200).collect(),
            });
        }

        let parsed: SearchResponse = response
            .json()
            .map_err(|e| RetrieverError::RemoteDecode(e.to_string()))?;

        Ok(parsed
            .hits
            .into_iter()
            .take(k)
            .map(|h| ScoredPassage {
                doc_id: h.id,
                title: h.title,
                text: h.text,
                score: h.score,
            })
            .collect())
    }
}
