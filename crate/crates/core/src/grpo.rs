//! Group-relative policy objective over recorded token traces.
//!
//! This module does not train anything. It evaluates the clipped surrogate
//! objective and its diagnostics over groups of rollouts sampled for the
//! same question, which is enough to check a training setup end to end:
//! group-normalized advantages, ratio clipping, masking of injected tokens,
//! and the low-variance KL estimate against a reference model.
//!
//! Conventions: `mask[i] == true` means token `i` participates in the loss.
//! Tokens injected by the engine (information blocks) are the ones a trainer
//! excludes, since the policy never produced them.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::protocol::information_spans;

// ----- parameters -----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoParams {
    /// Clip half-width for the probability ratio.
    pub epsilon: f64,
    /// Weight of the KL penalty term.
    pub beta: f64,
    /// Reward spreads below this count as degenerate; advantages become 0.
    pub advantage_floor: f64,
}

impl Default for GrpoParams {
    fn default() -> Self {
        GrpoParams {
            epsilon: 0.2,
            beta: 0.001,
            advantage_floor: 1e-8,
        }
    }
}

// ----- errors -----

#[derive(Debug, thiserror::Error)]
pub enum GrpoError {
    #[error("need at least two rollouts in a group, got {0}")]
    GroupTooSmall(usize),
    #[error("rollout vectors disagree: {0}")]
    LengthMismatch(String),
    #[error("advantage count {advantages} does not match rollout count {rollouts}")]
    AdvantageCount { advantages: usize, rollouts: usize },
    #[error("no reference log-probabilities on this trace")]
    MissingReference,
    #[error("token offsets do not tile the text: {0}")]
    Offsets(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("group trace record {line}: {reason}")]
    Record { line: usize, reason: String },
}

// ----- traces -----

/// Per-token data for one rollout: log-probabilities under the new, old, and
/// (optionally) reference policies, a participation mask, and the scalar
/// reward the rollout earned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTrace {
    pub tokens: Vec<String>,
    pub logp_new: Vec<f64>,
    pub logp_old: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp_ref: Option<Vec<f64>>,
    #[serde(deserialize_with = "mask_bits")]
    pub mask: Vec<bool>,
    pub reward: f64,
}

/// Accepts masks written as booleans or as 0/1 integers.
fn mask_bits<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<bool>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Bit {
        Bool(bool),
        Int(u8),
    }
    let bits = Vec::<Bit>::deserialize(deserializer)?;
    bits.into_iter()
        .map(|bit| match bit {
            Bit::Bool(b) => Ok(b),
            Bit::Int(0) => Ok(false),
            Bit::Int(1) => Ok(true),
            Bit::Int(other) => Err(serde::de::Error::custom(format!(
                "mask entries must be 0 or 1, got {other}"
            ))),
        })
        .collect()
}

impl TokenTrace {
    pub fn new(
        tokens: Vec<String>,
        logp_new: Vec<f64>,
        logp_old: Vec<f64>,
        logp_ref: Option<Vec<f64>>,
        mask: Vec<bool>,
        reward: f64,
    ) -> Result<Self, GrpoError> {
        let trace = TokenTrace {
            tokens,
            logp_new,
            logp_old,
            logp_ref,
            mask,
            reward,
        };
        trace.validate().map_err(GrpoError::LengthMismatch)?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.tokens.len();
        if self.logp_new.len() != n || self.logp_old.len() != n || self.mask.len() != n {
            return Err(format!(
                "tokens={}, logp_new={}, logp_old={}, mask={}",
                n,
                self.logp_new.len(),
                self.logp_old.len(),
                self.mask.len()
            ));
        }
        if let Some(r) = &self.logp_ref {
            if r.len() != n {
                return Err(format!("tokens={}, logp_ref={}", n, r.len()));
            }
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.logp_new)
            || !finite(&self.logp_old)
            || !self.logp_ref.as_deref().map_or(true, finite)
            || !self.reward.is_finite()
        {
            return Err("log-probabilities and reward must be finite".into());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Rollouts that share a question and are normalized against each other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTrace {
    pub question_id: String,
    pub rollouts: Vec<TokenTrace>,
}

impl GroupTrace {
    pub fn new(question_id: impl Into<String>, rollouts: Vec<TokenTrace>) -> Result<Self, GrpoError> {
        if rollouts.len() < 2 {
            return Err(GrpoError::GroupTooSmall(rollouts.len()));
        }
        Ok(GroupTrace {
            question_id: question_id.into(),
            rollouts,
        })
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.rollouts.iter().map(|r| r.reward).collect()
    }
}

// ----- advantages -----

/// Group-normalized advantages: `(r - mean) / std` with the population
/// standard deviation. A spread below `floor` yields all-zero advantages
/// rather than amplified noise.
pub fn group_advantages(rewards: &[f64], floor: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let variance = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = variance.sqrt();
    if std < floor {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

// ----- objective -----

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrpoDiagnostics {
    /// Participating tokens across the whole group.
    pub unmasked_tokens: usize,
    /// Fraction of participating tokens whose ratio left the clip band.
    pub clip_fraction: f64,
    /// Mean probability ratio over participating tokens.
    pub mean_ratio: f64,
    /// Mean KL estimate over participating tokens of rollouts that carry
    /// reference log-probabilities; `None` when no rollout does.
    pub kl: Option<f64>,
}

/// Evaluates the clipped surrogate objective for one group.
///
/// Advantages come from [`group_advantages`] over the rollout rewards and
/// are broadcast to each rollout's tokens. Per participating token the
/// contribution is `min(ratio * A, clamp(ratio, 1-eps, 1+eps) * A)`; the
/// objective is the token-level mean minus `beta` times the mean KL
/// estimate. A fully masked group scores 0.0.
pub fn grpo_objective(
    group: &GroupTrace,
    params: &GrpoParams,
) -> Result<(f64, GrpoDiagnostics), GrpoError> {
    let advantages = group_advantages(&group.rewards(), params.advantage_floor)?;
    grpo_objective_with_advantages(group, &advantages, params)
}

/// Same as [`grpo_objective`] but with caller-supplied advantages, one per
/// rollout.
pub fn grpo_objective_with_advantages(
    group: &GroupTrace,
    advantages: &[f64],
    params: &GrpoParams,
) -> Result<(f64, GrpoDiagnostics), GrpoError> {
    if advantages.len() != group.rollouts.len() {
        return Err(GrpoError::AdvantageCount {
            advantages: advantages.len(),
            rollouts: group.rollouts.len(),
        });
    }
    for rollout in &group.rollouts {
        rollout.validate().map_err(GrpoError::LengthMismatch)?;
    }

    let mut surrogate_sum = 0.0;
    let mut ratio_sum = 0.0;
    let mut clipped = 0usize;
    let mut unmasked = 0usize;
    let mut kl_sum = 0.0;
    let mut kl_tokens = 0usize;
    let low = 1.0 - params.epsilon;
    let high = 1.0 + params.epsilon;

    for (rollout, &advantage) in group.rollouts.iter().zip(advantages) {
        for i in 0..rollout.len() {
            if !rollout.mask[i] {
                continue;
            }
            unmasked += 1;
            let ratio = (rollout.logp_new[i] - rollout.logp_old[i]).exp();
            ratio_sum += ratio;
            if ratio < low || ratio > high {
                clipped += 1;
            }
            surrogate_sum += (ratio * advantage).min(ratio.clamp(low, high) * advantage);
            if let Some(reference) = &rollout.logp_ref {
                kl_sum += k3(reference[i] - rollout.logp_new[i]);
                kl_tokens += 1;
            }
        }
    }

    if unmasked == 0 {
        return Ok((
            0.0,
            GrpoDiagnostics {
                unmasked_tokens: 0,
                clip_fraction: 0.0,
                mean_ratio: 0.0,
                kl: None,
            },
        ));
    }

    let kl = (kl_tokens > 0).then(|| kl_sum / kl_tokens as f64);
    let objective = surrogate_sum / unmasked as f64 - params.beta * kl.unwrap_or(0.0);
    Ok((
        objective,
        GrpoDiagnostics {
            unmasked_tokens: unmasked,
            clip_fraction: clipped as f64 / unmasked as f64,
            mean_ratio: ratio_sum / unmasked as f64,
            kl,
        },
    ))
}

// ----- KL estimate -----

/// `exp(d) - d - 1` with `d = logp_ref - logp_new`: non-negative, zero only
/// when the policies agree on the token.
fn k3(d: f64) -> f64 {
    d.exp() - d - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlEstimate {
    pub value: f64,
    pub unmasked_tokens: usize,
}

/// Mean per-token KL estimate against the reference, over participating
/// tokens of one rollout.
pub fn kl_estimate(trace: &TokenTrace) -> Result<KlEstimate, GrpoError> {
    trace.validate().map_err(GrpoError::LengthMismatch)?;
    let reference = trace.logp_ref.as_ref().ok_or(GrpoError::MissingReference)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..trace.len() {
        if trace.mask[i] {
            sum += k3(reference[i] - trace.logp_new[i]);
            count += 1;
        }
    }
    Ok(KlEstimate {
        value: if count == 0 { 0.0 } else { sum / count as f64 },
        unmasked_tokens: count,
    })
}

// ----- masking -----

/// Builds a participation mask for tokens over `full_text`: `false` for
/// tokens lying entirely inside a well-formed top-level `<information>`
/// element (tags included), `true` elsewhere. `offsets` are byte ranges that
/// must tile `full_text` contiguously from start to end.
pub fn information_mask(
    full_text: &str,
    offsets: &[(usize, usize)],
) -> Result<Vec<bool>, GrpoError> {
    let mut expected = 0usize;
    for (i, &(start, end)) in offsets.iter().enumerate() {
        if start != expected {
            return Err(GrpoError::Offsets(format!(
                "token {i} starts at {start}, expected {expected}"
            )));
        }
        if end < start {
            return Err(GrpoError::Offsets(format!(
                "token {i} has end {end} before start {start}"
            )));
        }
        expected = end;
    }
    if expected != full_text.len() {
        return Err(GrpoError::Offsets(format!(
            "tokens cover {expected} bytes of {}",
            full_text.len()
        )));
    }

    let spans = information_spans(full_text);
    Ok(offsets
        .iter()
        .map(|&(start, end)| {
            !spans
                .iter()
                .any(|&(span_start, span_end)| span_start <= start && end <= span_end)
        })
        .collect())
}

// ----- file format -----

/// Reads groups from a JSONL file, one group object per line.
pub fn load_groups(path: &Path) -> Result<Vec<GroupTrace>, GrpoError> {
    let file = File::open(path).map_err(|source| GrpoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut groups = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(|source| GrpoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let group: GroupTrace = serde_json::from_str(&line).map_err(|e| GrpoError::Record {
            line: line_no,
            reason: e.to_string(),
        })?;
        if group.rollouts.len() < 2 {
            return Err(GrpoError::Record {
                line: line_no,
                reason: format!(
                    "need at least two rollouts in a group, got {}",
                    group.rollouts.len()
                ),
            });
        }
        for (i, rollout) in group.rollouts.iter().enumerate() {
            rollout.validate().map_err(|reason| GrpoError::Record {
                line: line_no,
                reason: format!("rollout {i}: {reason}"),
            })?;
        }
        groups.push(group);
    }
    Ok(groups)
}

pub fn save_groups(path: &Path, groups: &[GroupTrace]) -> Result<(), GrpoError> {
    let io_err = |source| GrpoError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    for group in groups {
        let line = serde_json::to_string(group).expect("group traces serialize");
        writeln!(writer, "{line}").map_err(io_err)?;
    }
    writer.flush().map_err(io_err)
}
