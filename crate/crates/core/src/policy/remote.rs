//! Client for OpenAI-compatible `/v1/completions` endpoints.
//!
//! Transport failures and 5xx responses are retried with exponential backoff
//! (3 attempts by default); 4xx responses fail immediately carrying the
//! status and a body excerpt.
//!
//! Most servers strip the stop sequence from the returned text. The rollout
//! contract wants it *included*, so when a chunk finishes with `stop` and no
//! configured stop sequence ends the text, the client re-appends the one
//! whose opening tag was left unclosed (stops here are close tags like
//! `</search>`). If no stop can be inferred the text is passed through
//! unchanged and downstream parsing treats the segment as malformed.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{FinishReason, GenerationChunk, GenerationRequest, Policy, PolicyError, PolicySession};

#[derive(Debug, Clone)]
pub struct RemotePolicyConfig {
    /// Full URL of the completions route, e.g. `http://host:8000/v1/completions`.
    pub endpoint: String,
    pub model: String,
    /// Bearer token, if the endpoint wants one.
    pub api_token: Option<String>,
    pub timeout: Duration,
    /// Total attempts for retryable failures (transport errors and 5xx).
    pub max_attempts: u32,
    /// First backoff delay; doubles per retry.
    pub backoff: Duration,
    /// Ask the server for per-token logprobs (0 = chosen token only).
    pub logprobs: Option<u32>,
}

impl RemotePolicyConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        RemotePolicyConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_token: None,
            timeout: Duration::from_secs(60),
            max_attempts: 3,
            backoff: Duration::from_millis(250),
            logprobs: None,
        }
    }
}

pub struct RemotePolicy {
    config: RemotePolicyConfig,
    client: reqwest::blocking::Client,
}

impl RemotePolicy {
    pub fn new(config: RemotePolicyConfig) -> Result<Self, PolicyError> {
        if config.max_attempts == 0 {
            return Err(PolicyError::Config("max_attempts must be at least 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| PolicyError::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(RemotePolicy { config, client })
    }
}

impl Policy for RemotePolicy {
    fn session(&self) -> Box<dyn PolicySession + '_> {
        // The endpoint holds no per-episode state; a session is a plain
        // handle.
        Box::new(RemoteSession { policy: self })
    }
}

struct RemoteSession<'a> {
    policy: &'a RemotePolicy,
}

impl PolicySession for RemoteSession<'_> {
    fn generate(&mut self, request: &GenerationRequest) -> Result<GenerationChunk, PolicyError> {
        self.policy.generate(request)
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    top_p: f64,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<u32>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    logprobs: Option<LogprobBlock>,
}

#[derive(Deserialize)]
struct LogprobBlock {
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    token_logprobs: Option<Vec<Option<f64>>>,
}

enum Attempt {
    Success(GenerationChunk),
    Retryable(PolicyError),
    Fatal(PolicyError),
}

impl RemotePolicy {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationChunk, PolicyError> {
        let mut delay = self.config.backoff;
        let mut last_error = None;
        for attempt in 1..=self.config.max_attempts {
            match self.try_once(request) {
                Attempt::Success(chunk) => return Ok(chunk),
                Attempt::Fatal(err) => return Err(err),
                Attempt::Retryable(err) => {
                    last_error = Some(err);
                    if attempt < self.config.max_attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(match last_error {
            Some(PolicyError::Status { status, body }) => PolicyError::Status { status, body },
            Some(PolicyError::Transport { message, .. }) | Some(PolicyError::Decode(message)) => {
                PolicyError::Transport {
                    attempts: self.config.max_attempts,
                    message,
                }
            }
            Some(other) => other,
            None => PolicyError::Transport {
                attempts: self.config.max_attempts,
                message: "no attempt made".into(),
            },
        })
    }

    fn try_once(&self, request: &GenerationRequest) -> Attempt {
        let body = CompletionRequest {
            model: &self.config.model,
            prompt: &request.prompt,
            max_tokens: request.max_tokens,
            temperature: request.temperature,
            top_p: request.top_p,
            stop: &request.stop_sequences,
            logprobs: self.config.logprobs,
        };
        let mut builder = self.client.post(&self.config.endpoint).json(&body);
        if let Some(token) = &self.config.api_token {
            builder = builder.bearer_auth(token);
        }
        let response = match builder.send() {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retryable(PolicyError::Transport {
                    attempts: 1,
                    message: e.to_string(),
                })
            }
        };

        let status = response.status();
        if !status.is_success() {
            let body = excerpt(&response.text().unwrap_or_default());
            let err = PolicyError::Status {
                status: status.as_u16(),
                body,
            };
            return if status.is_server_error() {
                Attempt::Retryable(err)
            } else {
                Attempt::Fatal(err)
            };
        }

        let parsed: CompletionResponse = match response.json() {
            Ok(p) => p,
            Err(e) => return Attempt::Fatal(PolicyError::Decode(e.to_string())),
        };
        let Some(choice) = parsed.choices.into_iter().next() else {
            return Attempt::Fatal(PolicyError::Decode("response carried no choices".into()));
        };

        let finish_reason = match choice.finish_reason.as_deref() {
            Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            _ => FinishReason::End,
        };

        let mut text = choice.text;
        if finish_reason == FinishReason::Stop
            && !ends_with_any(&text, &request.stop_sequences)
        {
            if let Some(stop) = infer_stripped_stop(&text, &request.stop_sequences) {
                text.push_str(stop);
            }
        }

        let token_logprobs = choice.logprobs.and_then(|block| {
            let tokens = block.tokens?;
            let logprobs = block.token_logprobs.unwrap_or_default();
            Some(
                tokens
                    .into_iter()
                    .zip(logprobs.into_iter().chain(std::iter::repeat(None)))
                    .map(|(token, lp)| (token, lp.unwrap_or(0.0)))
                    .collect(),
            )
        });

        Attempt::Success(GenerationChunk {
            text,
            finish_reason,
            token_logprobs,
        })
    }
}

fn excerpt(body: &str) -> String {
    const LIMIT: usize = 200;
    if body.len() <= LIMIT {
        body.to_string()
    } else {
        let mut end = LIMIT;
        while !body.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &body[..end])
    }
}

fn ends_with_any(text: &str, stops: &[String]) -> bool {
    stops.iter().any(|s| !s.is_empty() && text.ends_with(s.as_str()))
}

/// Picks which stop sequence the server consumed: among stops shaped like
/// `</name>`, the one whose `<name>` is most recently opened without a close.
fn infer_stripped_stop<'a>(text: &str, stops: &'a [String]) -> Option<&'a str> {
    let mut best: Option<(usize, &'a str)> = None;
    for stop in stops {
        let Some(name) = stop.strip_prefix("</").and_then(|s| s.strip_suffix('>')) else {
            continue;
        };
        let open = format!("<{name}>");
        let Some(open_pos) = text.rfind(&open) else {
            continue;
        };
        let closed_after = text.rfind(stop.as_str()).is_some_and(|c| c > open_pos);
        if closed_after {
            continue;
        }
        if best.map_or(true, |(pos, _)| open_pos > pos) {
            best = Some((open_pos, stop.as_str()));
        }
    }
    best.map(|(_, stop)| stop)
}
