//! Deterministic scripted policies for tests, fixtures, and offline runs.
//!
//! A script file is a JSON object selected by `"mode"`:
//!
//! ```json
//! {"mode": "sequence", "steps": ["<plan>p</plan><search>...</search>", "..."]}
//! {"mode": "keyed_steps", "episodes": {"Which year ...?": ["step1", "step2"]}}
//! {"mode": "keyed_answer", "answers": {"Which year ...?": "1969"}, "default": "unknown"}
//! {"mode": "extractive", "targets": ["Paris", "Isaac Newton"], "default": "unknown"}
//! ```
//!
//! `sequence` plays its steps in order, one per generate call, with a cursor
//! per session so concurrent episodes never interleave. `keyed_steps` binds a
//! session to the step list whose key occurs in the first prompt (episodes
//! embed the question in the prompt). `keyed_answer` is a stateless
//! single-shot completion keyed the same way. `extractive` answers with the
//! first passage sentence containing one of its targets — pointed at the
//! frozen-generator prompt, it extracts from whatever was retrieved.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FinishReason, GenerationChunk, GenerationRequest, Policy, PolicyError, PolicySession};

fn default_answer() -> String {
    "unknown".to_string()
}

/// Declarative behavior of a [`ScriptedPolicy`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ScriptSpec {
    Sequence {
        steps: Vec<String>,
    },
    KeyedSteps {
        episodes: BTreeMap<String, Vec<String>>,
    },
    KeyedAnswer {
        answers: BTreeMap<String, String>,
        #[serde(default = "default_answer")]
        default: String,
    },
    Extractive {
        targets: Vec<String>,
        #[serde(default = "default_answer")]
        default: String,
    },
}

/// A policy that follows a [`ScriptSpec`]. Cheap to share; all state lives
/// in sessions.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    spec: ScriptSpec,
}

impl ScriptedPolicy {
    pub fn new(spec: ScriptSpec) -> Self {
        ScriptedPolicy { spec }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PolicyError::ScriptIo {
            path: path.display().to_string(),
            source,
        })?;
        let spec: ScriptSpec =
            serde_json::from_str(&text).map_err(|e| PolicyError::ScriptParse {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        Ok(ScriptedPolicy { spec })
    }

    /// Sequence script from string literals; test convenience.
    pub fn sequence<S: Into<String>>(steps: impl IntoIterator<Item = S>) -> Self {
        ScriptedPolicy::new(ScriptSpec::Sequence {
            steps: steps.into_iter().map(Into::into).collect(),
        })
    }

    /// Keyed-answer script from pairs; test convenience.
    pub fn keyed_answers(
        answers: impl IntoIterator<Item = (String, String)>,
        default: &str,
    ) -> Self {
        ScriptedPolicy::new(ScriptSpec::KeyedAnswer {
            answers: answers.into_iter().collect(),
            default: default.to_string(),
        })
    }

    pub fn spec(&self) -> &ScriptSpec {
        &self.spec
    }
}

impl Policy for ScriptedPolicy {
    fn session(&self) -> Box<dyn PolicySession + '_> {
        Box::new(ScriptedSession {
            spec: &self.spec,
            cursor: 0,
            bound_steps: None,
        })
    }
}

struct ScriptedSession<'a> {
    spec: &'a ScriptSpec,
    cursor: usize,
    /// For `keyed_steps`: the episode step list chosen on the first call.
    bound_steps: Option<&'a [String]>,
}

impl PolicySession for ScriptedSession<'_> {
    fn generate(&mut self, request: &GenerationRequest) -> Result<GenerationChunk, PolicyError> {
        match self.spec {
            ScriptSpec::Sequence { steps } => Ok(self.play(steps, request)),
            ScriptSpec::KeyedSteps { episodes } => {
                if self.bound_steps.is_none() {
                    self.bound_steps = best_key_match(episodes.keys(), &request.prompt)
                        .map(|key| episodes[key].as_slice());
                }
                match self.bound_steps {
                    Some(steps) => Ok(play_steps(steps, &mut self.cursor, request)),
                    None => Ok(exhausted()),
                }
            }
            ScriptSpec::KeyedAnswer { answers, default } => {
                let text = best_key_match(answers.keys(), &request.prompt)
                    .map(|key| answers[key].clone())
                    .unwrap_or_else(|| default.clone());
                Ok(apply_stops(text, request))
            }
            ScriptSpec::Extractive { targets, default } => {
                let text = extract_sentence(&request.prompt, targets)
                    .unwrap_or_else(|| default.clone());
                Ok(apply_stops(text, request))
            }
        }
    }
}

impl ScriptedSession<'_> {
    fn play(&mut self, steps: &[String], request: &GenerationRequest) -> GenerationChunk {
        play_steps(steps, &mut self.cursor, request)
    }
}

fn play_steps(steps: &[String], cursor: &mut usize, request: &GenerationRequest) -> GenerationChunk {
    match steps.get(*cursor) {
        Some(step) => {
            *cursor += 1;
            apply_stops(step.clone(), request)
        }
        None => exhausted(),
    }
}

fn exhausted() -> GenerationChunk {
    GenerationChunk {
        text: String::new(),
        finish_reason: FinishReason::End,
        token_logprobs: None,
    }
}

/// Longest key contained in the prompt wins; ties keep the first in sorted
/// key order so matching stays deterministic.
fn best_key_match<'a>(
    keys: impl Iterator<Item = &'a String>,
    prompt: &str,
) -> Option<&'a String> {
    let mut best: Option<&'a String> = None;
    for key in keys {
        if !key.is_empty() && !prompt.contains(key.as_str()) {
            continue;
        }
        match best {
            Some(current) if current.len() >= key.len() => {}
            _ => best = Some(key),
        }
    }
    best
}

/// Truncates scripted text at the earliest stop sequence, stop included
/// (mirroring the remote contract). Text after the stop is discarded —
/// sequence scripts are written one segment per step. No stop means the step
/// ends naturally.
fn apply_stops(text: String, request: &GenerationRequest) -> GenerationChunk {
    let mut earliest: Option<(usize, usize)> = None; // (position, stop length)
    for stop in &request.stop_sequences {
        if stop.is_empty() {
            continue;
        }
        if let Some(pos) = text.find(stop.as_str()) {
            if earliest.map_or(true, |(best, _)| pos < best) {
                earliest = Some((pos, stop.len()));
            }
        }
    }
    match earliest {
        Some((pos, len)) => GenerationChunk {
            text: text[..pos + len].to_string(),
            finish_reason: FinishReason::Stop,
            token_logprobs: None,
        },
        None => GenerationChunk {
            text,
            finish_reason: FinishReason::End,
            token_logprobs: None,
        },
    }
}

/// First sentence of the prompt's passage section containing any target
/// (case-insensitive). Sentences split on `.`, `?`, `!`, and newlines;
/// `Doc k (Title: "…")` header lines are skipped so titles never match.
fn extract_sentence(prompt: &str, targets: &[String]) -> Option<String> {
    let section = passage_section(prompt);
    let lowered_targets: Vec<String> = targets.iter().map(|t| t.to_lowercase()).collect();
    for line in section.lines() {
        if is_doc_header(line) {
            continue;
        }
        for sentence in line.split(['.', '?', '!']) {
            let sentence = sentence.trim();
            if sentence.is_empty() {
                continue;
            }
            let lowered = sentence.to_lowercase();
            if lowered_targets
                .iter()
                .any(|t| !t.is_empty() && lowered.contains(t))
            {
                return Some(sentence.to_string());
            }
        }
    }
    None
}

/// Narrows the scan to the text between `Passages:` and `Question:` when the
/// prompt has the frozen-generator shape; otherwise scans everything.
fn passage_section(prompt: &str) -> &str {
    let start = match prompt.find("Passages:\n") {
        Some(i) => i + "Passages:\n".len(),
        None => 0,
    };
    let section = &prompt[start..];
    match section.find("\nQuestion:") {
        Some(end) => &section[..end],
        None => section,
    }
}

fn is_doc_header(line: &str) -> bool {
    line.starts_with("Doc ") && line.contains("(Title: \"") && line.ends_with("\")")
}
