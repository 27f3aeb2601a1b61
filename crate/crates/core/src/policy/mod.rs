//! The generation seam. A [`Policy`] is anything that continues a prompt:
//! a scripted fixture, or a remote OpenAI-compatible completions endpoint.
//!
//! Policies are shared across concurrently running episodes, so per-episode
//! generation state (a scripted policy's step cursor) lives in the
//! [`PolicySession`] an episode opens for itself.
//!
//! This module also hosts the *frozen generator* role: after an episode, the
//! accumulated passage set is formatted into a fixed answer prompt and a
//! (frozen) policy produces the short answer that rewards are computed on.

mod remote;
mod scripted;

pub use remote::{RemotePolicy, RemotePolicyConfig};
pub use scripted::{ScriptSpec, ScriptedPolicy};

use crate::protocol::{render_passage_list, Passage};

/// Per-segment generation cap used by rollout requests.
pub const DEFAULT_MAX_RESPONSE_TOKENS: usize = 512;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_TOP_P: f64 = 1.0;

/// Version tag for the frozen-generator answer prompt below. Bump when the
/// template changes; scored results are only comparable within one version.
pub const ANSWER_PROMPT_VERSION: &str = "1";

/// Token cap for the frozen generator's short answer.
const ANSWER_MAX_TOKENS: usize = 64;

/// One generation call.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt: String,
    /// Generation halts at the earliest occurrence of any of these; the
    /// matched stop sequence is *included* in the returned text.
    pub stop_sequences: Vec<String>,
    pub max_tokens: usize,
    pub temperature: f64,
    pub top_p: f64,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            stop_sequences: Vec::new(),
            max_tokens: DEFAULT_MAX_RESPONSE_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
        }
    }

    /// Request shape used for every rollout segment: stop at the end of a
    /// search or answer block.
    pub fn for_rollout(prompt: impl Into<String>) -> Self {
        let mut request = Self::new(prompt);
        request.stop_sequences = vec!["</search>".to_string(), "</answer>".to_string()];
        request
    }
}

/// Why generation ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    /// A stop sequence fired; the chunk text ends with it.
    Stop,
    /// The per-call token cap truncated the output.
    Length,
    /// Natural end of generation (end-of-sequence, or a scripted step
    /// without a stop sequence; an exhausted script yields an empty `End`
    /// chunk).
    End,
}

/// One generated continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationChunk {
    pub text: String,
    pub finish_reason: FinishReason,
    /// Per-token logprobs when the backend reports them, in generation
    /// order.
    pub token_logprobs: Option<Vec<(String, f64)>>,
}

impl GenerationChunk {
    /// Token count for budget accounting: the backend-reported count when
    /// available, else the whitespace estimate.
    pub fn token_count(&self) -> usize {
        match &self.token_logprobs {
            Some(tokens) => tokens.len(),
            None => estimate_tokens(&self.text),
        }
    }
}

/// Crude token estimate for text without backend-reported counts:
/// whitespace-separated words times 1.3, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    (text.split_whitespace().count() as f64 * 1.3).ceil() as usize
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("cannot decode completion response: {0}")]
    Decode(String),
    #[error("cannot read script file {path}: {source}")]
    ScriptIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("script file {path}: {reason}")]
    ScriptParse { path: String, reason: String },
    #[error("invalid policy configuration: {0}")]
    Config(String),
}

/// A shareable generation backend. Opening a [`PolicySession`] gives an
/// episode its own generation state, so concurrent episodes never interleave.
pub trait Policy: Send + Sync {
    fn session(&self) -> Box<dyn PolicySession + '_>;
}

/// Per-episode generation handle.
pub trait PolicySession {
    fn generate(&mut self, request: &GenerationRequest) -> Result<GenerationChunk, PolicyError>;
}

/// Marker inserted into the answer prompt when no passages were retrieved;
/// the generator still answers, closed-book.
pub const NO_PASSAGES_MARKER: &str = "(no passages retrieved)";

/// Builds the fixed answer prompt the frozen generator completes
/// (version [`ANSWER_PROMPT_VERSION`]).
pub fn answer_prompt(question: &str, passages: &[Passage]) -> String {
    let body = if passages.is_empty() {
        NO_PASSAGES_MARKER.to_string()
    } else {
        render_passage_list(passages)
    };
    format!(
        "Answer the question using the provided passages. Answer with a few \
         short words and no explanation.\n\nPassages:\n{body}\n\nQuestion: {question}\nAnswer:"
    )
}

/// Runs the frozen generator: formats `passages` and `question` into the
/// answer prompt, generates deterministically (temperature 0), and returns
/// the trimmed single-line answer.
pub fn frozen_generate(
    generator: &dyn Policy,
    question: &str,
    passages: &[Passage],
) -> Result<String, PolicyError> {
    let mut request = GenerationRequest::new(answer_prompt(question, passages));
    request.stop_sequences = vec!["\n".to_string()];
    request.max_tokens = ANSWER_MAX_TOKENS;
    request.temperature = 0.0;
    let chunk = generator.session().generate(&request)?;
    Ok(chunk.text.trim().to_string())
}
