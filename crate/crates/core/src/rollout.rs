//! The episode loop: alternating policy generation and retrieval until an
//! answer, a budget, or the policy itself ends the episode.
//!
//! Byte layout of a transcript is part of the contract. The episode text is
//! exactly:
//!
//! ```text
//! {initial prompt}{segment}(\n{injected block}\n{segment})*
//! ```
//!
//! where an injected block is a rendered `<information>` element after a
//! search segment, or the retry prompt after a malformed one. Nothing else is
//! ever inserted, so trained and replayed transcripts agree byte for byte.

use serde::{Deserialize, Serialize};

use crate::policy::{
    estimate_tokens, frozen_generate, GenerationRequest, Policy, PolicyError,
};
use crate::protocol::{
    first_closed_interior, parse_doc_set, parse_segment, render_information, AgentAction,
    InformationBlock, Passage, TagName,
};
use crate::retriever::{Retriever, RetrieverError};

/// Injected after a segment that parsed as neither a search nor an answer.
pub const RETRY_PROMPT: &str = "Your previous output had invalid format. \
Continue, using <search>...</search> or <answer>...</answer>.";

/// The fixed instruction prefix for an episode. Everything after it is the
/// transcript: policy segments interleaved with engine-injected blocks.
pub fn initial_prompt(question: &str) -> String {
    format!(
        "Answer the question by searching a document corpus.\n\
         \n\
         Protocol for each round:\n\
         - Think inside <plan>...</plan>, then issue <search> holding one to three \
         <query>...</query> items, ending with </search>.\n\
         - Retrieved passages arrive inside <information>...</information>.\n\
         - Comment on them inside <reflection>...</reflection> before your next plan.\n\
         - Once certain, stop searching and give a short final answer inside \
         <answer>...</answer>.\n\
         \n\
         Question: {question}\n"
    )
}

// ----- configuration -----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    /// Maximum action rounds (search, answer, or malformed each count one).
    pub max_turns: usize,
    /// Passages fetched per query before deduplication.
    pub passages_per_query: usize,
    /// Text injected after a malformed segment.
    pub retry_prompt: String,
    /// Episode-wide token budget: estimated prompt and injected-block tokens
    /// plus reported generation tokens.
    pub max_total_tokens: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            max_turns: 4,
            passages_per_query: 1,
            retry_prompt: RETRY_PROMPT.to_string(),
            max_total_tokens: 8192,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_turns == 0 {
            return Err("max_turns must be at least 1".into());
        }
        if self.passages_per_query == 0 {
            return Err("passages_per_query must be at least 1".into());
        }
        if self.max_total_tokens == 0 {
            return Err("max_total_tokens must be at least 1".into());
        }
        Ok(())
    }
}

// ----- episode records -----

/// Why an episode stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The policy produced a closed `<answer>` block.
    Answered,
    /// The action-round budget ran out first.
    BudgetExhausted,
    /// The token budget ran out first.
    TokenLimit,
    /// The policy returned an empty segment (script exhausted, or the model
    /// emitted end-of-sequence).
    PolicyEnd,
}

/// One action round as the engine recorded it.
///
/// `reflection_text` holds the policy's comment on this turn's retrieval
/// results; textually that comment opens the *next* segment, and the engine
/// re-attaches it here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    /// The policy segment verbatim, including its stop sequence.
    pub raw_segment: String,
    pub plan_text: Option<String>,
    pub search_queries: Vec<String>,
    pub information: Option<InformationBlock>,
    pub reflection_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub question: String,
    pub turns: Vec<Turn>,
    /// Trimmed interior of the final `<answer>` block, when one was reached.
    pub agent_answer: Option<String>,
    /// Union of retrieved passages across turns, first-occurrence order,
    /// deduplicated by normalized text.
    pub info_set: Vec<Passage>,
    /// Initial prompt plus every segment and injected block, byte exact.
    pub full_text: String,
    pub termination: Termination,
}

impl Trajectory {
    /// The transcript: everything after the initial prompt. Format checks
    /// run on this region so instruction text mentioning tags is not
    /// mistaken for protocol traffic.
    pub fn transcript(&self) -> &str {
        self.full_text
            .strip_prefix(&initial_prompt(&self.question))
            .unwrap_or(&self.full_text)
    }
}

// ----- errors -----

/// A retrieval error together with the query that triggered it.
#[derive(Debug)]
pub struct RetrievalFailure {
    pub query: String,
    pub source: RetrieverError,
}

#[derive(Debug, thiserror::Error)]
pub enum EpisodeError {
    #[error("invalid rollout configuration: {0}")]
    Config(String),
    /// Generation failed mid-episode; `partial` holds everything recorded up
    /// to the failure, terminated as `policy_end`.
    #[error("policy generation failed: {source}")]
    Policy {
        source: PolicyError,
        partial: Box<Trajectory>,
    },
    /// Retrieval failed mid-episode; `partial` as above.
    #[error("retrieval failed for query {query:?}: {source}")]
    Retrieval {
        query: String,
        source: RetrieverError,
        partial: Box<Trajectory>,
    },
}

// ----- retrieval aggregation -----

/// Runs every query, pools the hits in query order, and deduplicates by
/// normalized passage text. Titles and texts are stored trimmed, matching how
/// they are rendered.
pub fn aggregate_context(
    queries: &[String],
    retriever: &dyn Retriever,
    passages_per_query: usize,
) -> Result<InformationBlock, RetrievalFailure> {
    let mut passages = Vec::new();
    for query in queries {
        let hits = retriever
            .retrieve(query, passages_per_query)
            .map_err(|source| RetrievalFailure {
                query: query.clone(),
                source,
            })?;
        for hit in hits {
            passages.push(Passage {
                doc_id: hit.doc_id,
                title: hit.title.trim().to_string(),
                text: hit.text.trim().to_string(),
            });
        }
    }
    Ok(InformationBlock::from_passages(passages, queries.to_vec()))
}

// ----- the episode loop -----

/// Runs one episode to completion.
///
/// Per round: generate until a stop sequence, classify the segment, then
/// either record the answer, retrieve and inject an information block, or
/// inject the retry prompt. An empty segment ends the episode without
/// consuming a round. After each round the token budget is checked before
/// the round budget, and a produced answer outranks both.
pub fn run_episode(
    question: &str,
    policy: &dyn Policy,
    retriever: &dyn Retriever,
    config: &RolloutConfig,
) -> Result<Trajectory, EpisodeError> {
    config.validate().map_err(EpisodeError::Config)?;

    let mut session = policy.session();
    let prompt = initial_prompt(question);
    let mut full_text = prompt.clone();
    let mut used_tokens = estimate_tokens(&prompt);
    let mut turns: Vec<Turn> = Vec::new();
    let mut agent_answer: Option<String> = None;
    let mut rounds = 0usize;

    let termination = loop {
        let request = GenerationRequest::for_rollout(full_text.as_str());
        let chunk = match session.generate(&request) {
            Ok(chunk) => chunk,
            Err(source) => {
                return Err(EpisodeError::Policy {
                    source,
                    partial: partial_trajectory(question, turns, full_text),
                })
            }
        };
        if chunk.text.is_empty() {
            break Termination::PolicyEnd;
        }
        used_tokens += chunk.token_count();
        full_text.push_str(&chunk.text);
        rounds += 1;

        let mut turn = Turn {
            raw_segment: chunk.text.clone(),
            plan_text: closed_interior_trimmed(&chunk.text, TagName::Plan),
            search_queries: Vec::new(),
            information: None,
            reflection_text: None,
        };
        bind_reflection(&mut turns, &mut turn, &chunk.text);

        match parse_segment(&chunk.text) {
            AgentAction::Answer(answer) => {
                turns.push(turn);
                agent_answer = Some(answer);
                break Termination::Answered;
            }
            AgentAction::Search(queries) => {
                let block =
                    match aggregate_context(&queries, retriever, config.passages_per_query) {
                        Ok(block) => block,
                        Err(failure) => {
                            turn.search_queries = queries;
                            turns.push(turn);
                            return Err(EpisodeError::Retrieval {
                                query: failure.query,
                                source: failure.source,
                                partial: partial_trajectory(question, turns, full_text),
                            });
                        }
                    };
                let injected = format!("\n{}\n", render_information(&block));
                used_tokens += estimate_tokens(&injected);
                full_text.push_str(&injected);
                turn.search_queries = queries;
                turn.information = Some(block);
                turns.push(turn);
            }
            AgentAction::Malformed(_) => {
                let injected = format!("\n{}\n", config.retry_prompt);
                used_tokens += estimate_tokens(&injected);
                full_text.push_str(&injected);
                turns.push(turn);
            }
        }

        if used_tokens >= config.max_total_tokens {
            break Termination::TokenLimit;
        }
        if rounds >= config.max_turns {
            break Termination::BudgetExhausted;
        }
    };

    let info_set = collect_info_set(&turns);
    Ok(Trajectory {
        question: question.to_string(),
        turns,
        agent_answer,
        info_set,
        full_text,
        termination,
    })
}

/// Answers from the accumulated passage set with the frozen generator
/// settings, independent of how the episode went.
pub fn finalize_with_generator(
    trajectory: &Trajectory,
    generator: &dyn Policy,
) -> Result<String, PolicyError> {
    frozen_generate(generator, &trajectory.question, &trajectory.info_set)
}

fn collect_info_set(turns: &[Turn]) -> Vec<Passage> {
    parse_doc_set(turns.iter().filter_map(|t| t.information.as_ref()))
}

fn partial_trajectory(question: &str, turns: Vec<Turn>, full_text: String) -> Box<Trajectory> {
    let info_set = collect_info_set(&turns);
    Box::new(Trajectory {
        question: question.to_string(),
        turns,
        agent_answer: None,
        info_set,
        full_text,
        termination: Termination::PolicyEnd,
    })
}

fn closed_interior_trimmed(segment: &str, tag: TagName) -> Option<String> {
    let text = first_closed_interior(segment, tag)?.trim();
    (!text.is_empty()).then(|| text.to_string())
}

/// A reflection opening a segment comments on the results shown just before
/// it, so it is stored on the turn that retrieved them. It stays on the
/// current turn only when no previous turn is waiting for one.
fn bind_reflection(turns: &mut [Turn], current: &mut Turn, segment: &str) {
    let Some(text) = closed_interior_trimmed(segment, TagName::Reflection) else {
        return;
    };
    if let Some(previous) = turns.last_mut() {
        if previous.information.is_some() && previous.reflection_text.is_none() {
            previous.reflection_text = Some(text);
            return;
        }
    }
    current.reflection_text = Some(text);
}
