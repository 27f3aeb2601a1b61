//! Answer scoring and episode rewards.
//!
//! All string metrics run on normalized text: lowercased, ASCII punctuation
//! deleted, and the articles `a`, `an`, `the` dropped. Two reward stages are
//! built from them:
//!
//! - stage 1 gates a strict exact match on format validity, scoring the
//!   policy's own final answer;
//! - stage 2 scores a frozen generator's answer with containment EM plus a
//!   half-credit bonus when any gold answer appears anywhere in the
//!   transcript.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::protocol::validate_format;
use crate::rollout::Trajectory;

// ----- gold answers -----

/// Non-empty set of acceptable gold answers with precomputed normal forms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldAnswerSet {
    golds: Vec<String>,
    normalized: Vec<String>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RewardError {
    #[error("gold answer set is empty")]
    EmptyGoldSet,
    #[error("gold answer {0:?} normalizes to nothing")]
    BlankGold(String),
}

impl GoldAnswerSet {
    pub fn new(golds: Vec<String>) -> Result<Self, RewardError> {
        if golds.is_empty() {
            return Err(RewardError::EmptyGoldSet);
        }
        let mut normalized = Vec::with_capacity(golds.len());
        for gold in &golds {
            let norm = normalize_answer(gold);
            if norm.is_empty() {
                return Err(RewardError::BlankGold(gold.clone()));
            }
            normalized.push(norm);
        }
        Ok(GoldAnswerSet { golds, normalized })
    }

    pub fn golds(&self) -> &[String] {
        &self.golds
    }

    fn normalized(&self) -> &[String] {
        &self.normalized
    }
}

// ----- normalization -----

/// Canonical answer form: lowercase, ASCII punctuation deleted (no
/// replacement), articles removed, whitespace collapsed to single spaces.
/// Idempotent.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let stripped: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    stripped
        .split_whitespace()
        .filter(|token| !matches!(*token, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

// ----- string metrics -----

/// Strict exact match: the normalized prediction equals some normalized gold.
pub fn em_strict(prediction: &str, gold: &GoldAnswerSet) -> bool {
    let p = normalize_answer(prediction);
    gold.normalized().iter().any(|g| *g == p)
}

/// Containment exact match: some normalized gold is a substring of the
/// normalized prediction.
pub fn em_contains(prediction: &str, gold: &GoldAnswerSet) -> bool {
    let p = normalize_answer(prediction);
    gold.normalized().iter().any(|g| p.contains(g.as_str()))
}

/// Token-level F1 against the best-matching gold, with clipped token counts.
pub fn token_f1(prediction: &str, gold: &GoldAnswerSet) -> f64 {
    let p = normalize_answer(prediction);
    gold.normalized()
        .iter()
        .map(|g| f1_between(&p, g))
        .fold(0.0, f64::max)
}

fn f1_between(pred: &str, gold: &str) -> f64 {
    let pred_tokens: Vec<&str> = pred.split_whitespace().collect();
    let gold_tokens: Vec<&str> = gold.split_whitespace().collect();
    if pred_tokens.is_empty() || gold_tokens.is_empty() {
        return if pred_tokens.is_empty() && gold_tokens.is_empty() {
            1.0
        } else {
            0.0
        };
    }
    let mut budget: HashMap<&str, usize> = HashMap::new();
    for token in &gold_tokens {
        *budget.entry(token).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for token in &pred_tokens {
        if let Some(count) = budget.get_mut(token) {
            if *count > 0 {
                *count -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred_tokens.len() as f64;
    let recall = overlap as f64 / gold_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Whether some normalized gold appears inside the normalized `text`.
pub fn hit_text(text: &str, gold: &GoldAnswerSet) -> bool {
    let t = normalize_answer(text);
    gold.normalized().iter().any(|g| t.contains(g.as_str()))
}

/// Whether the transcript (segments plus injected blocks, instruction prefix
/// excluded) contains a gold answer anywhere.
pub fn hit(trajectory: &Trajectory, gold: &GoldAnswerSet) -> bool {
    hit_text(trajectory.transcript(), gold)
}

// ----- staged rewards -----

/// Strict match gated on a clean transcript: 1.0 or 0.0.
pub fn stage1_reward(format_valid: bool, strict_match: bool) -> f64 {
    if format_valid && strict_match {
        1.0
    } else {
        0.0
    }
}

/// Containment match on the generator answer plus half credit for a
/// transcript hit: one of 0.0, 0.5, 1.0, 1.5.
pub fn stage2_reward(relaxed_match: bool, trajectory_hit: bool) -> f64 {
    (relaxed_match as u8 as f64) + 0.5 * (trajectory_hit as u8 as f64)
}

// ----- per-episode scoring -----

/// Everything computed when scoring one episode.
///
/// `em_strict` always refers to the policy's own answer. `em_contains` and
/// `f1` refer to the generator answer when one was produced, otherwise they
/// fall back to the policy's answer; `stage2`'s match component never falls
/// back, since that reward is defined over generator output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format_ok: bool,
    pub em_strict: bool,
    pub em_contains: bool,
    pub f1: f64,
    pub hit: bool,
    pub stage1: f64,
    pub stage2: f64,
}

pub fn score_trajectory(
    trajectory: &Trajectory,
    generator_answer: Option<&str>,
    gold: &GoldAnswerSet,
) -> RewardBreakdown {
    let format_ok = validate_format(trajectory.transcript()).valid;
    let agent = trajectory.agent_answer.as_deref().unwrap_or("");
    let strict = em_strict(agent, gold);
    let relaxed_target = generator_answer.unwrap_or(agent);
    let contains = em_contains(relaxed_target, gold);
    let f1 = token_f1(relaxed_target, gold);
    let hit_flag = hit(trajectory, gold);
    let stage2_match = generator_answer.is_some_and(|a| em_contains(a, gold));
    RewardBreakdown {
        format_ok,
        em_strict: strict,
        em_contains: contains,
        f1,
        hit: hit_flag,
        stage1: stage1_reward(format_ok, strict),
        stage2: stage2_reward(stage2_match, hit_flag),
    }
}
