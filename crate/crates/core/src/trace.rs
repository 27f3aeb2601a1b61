//! On-disk episode records: one JSON object per line, append-friendly.
//!
//! A record captures everything needed to audit an episode after the fact:
//! the transcript, the structured turns, the answers, and optionally the
//! reward breakdown. [`validate_record`] re-derives the redundant parts and
//! reports any disagreement, which catches hand-edited or truncated files.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::protocol::{parse_doc_set, Passage, MAX_QUERIES_PER_SEARCH};
use crate::rewards::RewardBreakdown;
use crate::rollout::{Termination, Trajectory, Turn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub question: String,
    pub termination: Termination,
    pub agent_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_answer: Option<String>,
    pub info_set: Vec<Passage>,
    pub turns: Vec<Turn>,
    pub full_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardBreakdown>,
}

impl TraceRecord {
    pub fn from_trajectory(
        trajectory: &Trajectory,
        generator_answer: Option<String>,
        reward: Option<RewardBreakdown>,
    ) -> Self {
        TraceRecord {
            question: trajectory.question.clone(),
            termination: trajectory.termination,
            agent_answer: trajectory.agent_answer.clone(),
            generator_answer,
            info_set: trajectory.info_set.clone(),
            turns: trajectory.turns.clone(),
            full_text: trajectory.full_text.clone(),
            reward,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("trace line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Appends one record to a JSONL trace file, creating it if needed.
pub fn append_trace(path: &Path, record: &TraceRecord) -> Result<(), TraceError> {
    let io_err = |source| TraceError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err)?;
    let line = serde_json::to_string(record).expect("trace records serialize");
    writeln!(file, "{line}").map_err(io_err)
}

/// Reads every record from a JSONL trace file; blank lines are skipped.
pub fn read_traces(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    let file = std::fs::File::open(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
            line: index + 1,
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Checks the internal invariants of one record, returning one message per
/// failure (empty means consistent).
pub fn validate_record(record: &TraceRecord) -> Vec<String> {
    let mut problems = Vec::new();

    let answered = record.termination == Termination::Answered;
    if answered && record.agent_answer.is_none() {
        problems.push("terminated as answered but carries no agent answer".to_string());
    }
    if !answered && record.agent_answer.is_some() {
        problems.push(format!(
            "carries an agent answer but terminated as {}",
            termination_name(record.termination)
        ));
    }

    let derived = parse_doc_set(record.turns.iter().filter_map(|t| t.information.as_ref()));
    if derived != record.info_set {
        problems.push(format!(
            "info_set does not match the turns: recorded {} passages, derived {}",
            record.info_set.len(),
            derived.len()
        ));
    }

    for (i, turn) in record.turns.iter().enumerate() {
        if !turn.search_queries.is_empty() && turn.information.is_none() {
            problems.push(format!("turn {i} searched but recorded no information block"));
        }
        if turn.search_queries.len() > MAX_QUERIES_PER_SEARCH {
            problems.push(format!(
                "turn {i} records {} queries, over the cap of {MAX_QUERIES_PER_SEARCH}",
                turn.search_queries.len()
            ));
        }
    }

    problems
}

fn termination_name(termination: Termination) -> &'static str {
    match termination {
        Termination::Answered => "answered",
        Termination::BudgetExhausted => "budget_exhausted",
        Termination::TokenLimit => "token_limit",
        Termination::PolicyEnd => "policy_end",
    }
}
