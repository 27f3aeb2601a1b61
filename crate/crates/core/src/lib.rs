//! Engine for multi-turn, retrieval-augmented question answering rollouts.
//!
//! An episode alternates between a language-model policy and a passage
//! retriever.  The policy emits tag-structured segments (`<plan>`,
//! `<search>`/`<query>`, `<answer>`), the engine executes searches and feeds
//! results back as `<information>` blocks, and the accumulated passage set is
//! finally handed to a frozen generator that produces the scored answer.
//! Companion modules score trajectories (exact match, token F1, hit), and
//! evaluate the clipped group-relative policy objective over token traces
//! produced by external training stacks.
//!
//! Module map:
//!
//! - [`corpus`]: passage collections and their line-delimited file format
//! - [`retriever`]: Okapi BM25 index, the `Retriever` seam, remote retrieval
//! - [`protocol`]: tag grammar — segment parsing, rendering, format validation
//! - [`policy`]: the `Policy` seam, scripted and OpenAI-compatible backends,
//!   and the frozen answer generator
//! - [`rollout`]: the episode loop and trajectory type
//! - [`rewards`]: answer normalization, EM/F1/hit, staged reward shaping
//! - [`grpo`]: group advantages, information masking, clipped objective, KL
//! - [`trace`]: trajectory trace records (JSONL)
//! - [`eval`]: dataset loading, batch evaluation, report emission

pub mod corpus;
pub mod eval;
pub mod grpo;
pub mod policy;
pub mod protocol;
pub mod retriever;
pub mod rewards;
pub mod rollout;
pub mod trace;

pub use corpus::{Corpus, Document};
pub use policy::{GenerationChunk, GenerationRequest, FinishReason, Policy, PolicySession};
pub use protocol::{AgentAction, InformationBlock, Passage};
pub use retriever::{Bm25Index, Bm25Params, Retriever, ScoredPassage};
pub use rewards::{GoldAnswerSet, RewardBreakdown};
pub use rollout::{RolloutConfig, Termination, Trajectory, Turn};
