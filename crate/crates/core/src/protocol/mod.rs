//! The tag grammar spoken between engine and policy.
//!
//! A rollout is plain text interleaved with six lowercase tags:
//! `<plan>`, `<search>` (holding `<query>` children), `<information>`,
//! `<reflection>`, and `<answer>`. This module parses policy segments into
//! actions, renders retrieval results into `<information>` blocks, validates
//! whole transcripts against the protocol rules, and extracts the
//! deduplicated passage set a transcript accumulated.

mod parse;
mod render;
mod scan;
mod validate;

pub use parse::{extract_queries, parse_information, parse_segment, QueryExtraction};
pub(crate) use parse::first_closed_interior;
pub use render::{render_information, render_passage_list, NO_RESULTS_SENTINEL};
pub use scan::TagName;
pub use validate::{information_spans, validate_format, FormatReport, FormatRule, Violation};

use serde::{Deserialize, Serialize};

/// Maximum number of queries honored per `<search>` block; extras are
/// dropped with a recorded violation.
pub const MAX_QUERIES_PER_SEARCH: usize = 3;

/// What a policy segment asked the engine to do.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentAction {
    /// A closed `<search>` block with 1..=3 usable queries.
    Search(Vec<String>),
    /// A closed `<answer>` block; payload is the trimmed interior.
    Answer(String),
    /// Neither of the above; payload is a short diagnostic reason.
    Malformed(String),
}

/// A retrieved passage as it appears inside an information block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub doc_id: String,
    pub title: String,
    pub text: String,
}

/// One round of retrieval results: the passages shown to the policy and the
/// queries that produced them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InformationBlock {
    pub passages: Vec<Passage>,
    pub source_queries: Vec<String>,
}

impl InformationBlock {
    /// Builds a block, dropping passages whose normalized text duplicates an
    /// earlier one (first occurrence wins).
    pub fn from_passages(passages: Vec<Passage>, source_queries: Vec<String>) -> Self {
        let mut seen = std::collections::HashSet::new();
        let mut kept = Vec::new();
        for passage in passages {
            if seen.insert(normalize_for_dedup(&passage.text)) {
                kept.push(passage);
            }
        }
        InformationBlock {
            passages: kept,
            source_queries,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("search block contains no usable <query> elements")]
    EmptySearch,
    #[error("malformed information block: {0}")]
    MalformedInformation(String),
}

/// Canonical key for passage deduplication: whitespace collapsed to single
/// spaces, then case-folded. Formatting differences between otherwise
/// identical passages do not defeat dedup.
pub fn normalize_for_dedup(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Union of the passages across a sequence of information blocks, in first
/// occurrence order, deduplicated by normalized text. This is the set `K`
/// handed to the frozen generator at the end of an episode.
pub fn parse_doc_set<'a>(blocks: impl IntoIterator<Item = &'a InformationBlock>) -> Vec<Passage> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for block in blocks {
        for passage in &block.passages {
            if seen.insert(normalize_for_dedup(&passage.text)) {
                out.push(passage.clone());
            }
        }
    }
    out
}
