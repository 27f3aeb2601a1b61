//! Batch evaluation: run episodes over QA datasets and report EM/F1.
//!
//! Two modes share one pipeline. `end_to_end` scores the policy's own final
//! answers and never touches a generator. `submodule` scores what a frozen
//! generator produces from each episode's retrieved passage set, measuring
//! the policy purely as a retrieval component.
//!
//! Examples are scored with containment EM and token F1, reported per
//! dataset as percentages, plus an unweighted average across datasets.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::policy::Policy;
use crate::retriever::Retriever;
use crate::rewards::{em_contains, token_f1, GoldAnswerSet};
use crate::rollout::{finalize_with_generator, run_episode, RolloutConfig};

// ----- datasets -----

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalExample {
    pub id: String,
    pub question: String,
    pub golden_answers: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("dataset line {line} (example {id:?}): {reason}")]
    BadGold {
        line: usize,
        id: String,
        reason: String,
    },
    #[error("example {example_id:?} in dataset {dataset:?}: {reason}")]
    BadExample {
        dataset: String,
        example_id: String,
        reason: String,
    },
    #[error("submodule evaluation needs a generator")]
    MissingGenerator,
    #[error("episode for example {example_id:?} in dataset {dataset:?} failed: {message}")]
    Episode {
        dataset: String,
        example_id: String,
        message: String,
    },
}

/// Loads a JSONL dataset of `{"id", "question", "golden_answers"}` rows.
/// Gold answers are validated up front so scoring cannot fail later.
pub fn load_dataset(path: &Path) -> Result<Vec<EvalExample>, EvalError> {
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut examples: Vec<EvalExample> = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    for (index, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let example: EvalExample =
            serde_json::from_str(&line).map_err(|e| EvalError::Parse {
                line: line_no,
                reason: e.to_string(),
            })?;
        if example.question.trim().is_empty() {
            return Err(EvalError::Parse {
                line: line_no,
                reason: format!("example {:?} has an empty question", example.id),
            });
        }
        if let Err(e) = GoldAnswerSet::new(example.golden_answers.clone()) {
            return Err(EvalError::BadGold {
                line: line_no,
                id: example.id.clone(),
                reason: e.to_string(),
            });
        }
        if !seen_ids.insert(example.id.clone()) {
            log::warn!(
                "{}: duplicate example id {:?} on line {line_no}",
                path.display(),
                example.id
            );
        }
        examples.push(example);
    }
    if examples.is_empty() {
        log::warn!("{}: dataset is empty", path.display());
    }
    Ok(examples)
}

// ----- options -----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Score the policy's own final answers.
    EndToEnd,
    /// Score a frozen generator's answers from the retrieved passage sets.
    Submodule,
}

impl EvalMode {
    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "end-to-end" | "end_to_end" => Some(EvalMode::EndToEnd),
            "submodule" => Some(EvalMode::Submodule),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::EndToEnd => "end_to_end",
            EvalMode::Submodule => "submodule",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub mode: EvalMode,
    /// Worker threads running episodes.
    pub concurrency: usize,
    /// When true, a failed episode scores zero and is counted in `errors`;
    /// when false, the first failure aborts the evaluation.
    pub fail_open: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: EvalMode::EndToEnd,
            concurrency: 8,
            fail_open: true,
        }
    }
}

// ----- reports -----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    /// Containment exact match, percent, averaged over all examples
    /// (failed ones count as zero).
    pub em: f64,
    /// Token F1, percent, averaged the same way.
    pub f1: f64,
    pub examples: usize,
    pub scored: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: EvalMode,
    pub per_dataset: BTreeMap<String, DatasetMetrics>,
    /// Unweighted mean of the per-dataset percentages; counts are summed.
    pub average: DatasetMetrics,
}

// ----- evaluation -----

struct Outcome {
    job: usize,
    dataset: usize,
    example_id: String,
    em: f64,
    f1: f64,
    error: Option<String>,
}

/// Evaluates `datasets` (name, examples) and aggregates metrics.
///
/// Episodes run on `options.concurrency` worker threads pulling from a
/// shared queue; results are order-independent. `generator` is required for
/// submodule mode and ignored otherwise.
pub fn evaluate(
    datasets: &[(String, Vec<EvalExample>)],
    policy: &dyn Policy,
    retriever: &dyn Retriever,
    generator: Option<&dyn Policy>,
    rollout_config: &RolloutConfig,
    options: &EvalOptions,
) -> Result<MetricsReport, EvalError> {
    if options.mode == EvalMode::Submodule && generator.is_none() {
        return Err(EvalError::MissingGenerator);
    }

    struct Job<'a> {
        dataset: usize,
        example: &'a EvalExample,
        gold: GoldAnswerSet,
    }
    let mut jobs = Vec::new();
    for (dataset_index, (name, examples)) in datasets.iter().enumerate() {
        for example in examples {
            let gold = GoldAnswerSet::new(example.golden_answers.clone()).map_err(|e| {
                EvalError::BadExample {
                    dataset: name.clone(),
                    example_id: example.id.clone(),
                    reason: e.to_string(),
                }
            })?;
            jobs.push(Job {
                dataset: dataset_index,
                example,
                gold,
            });
        }
    }

    let next = AtomicUsize::new(0);
    let outcomes: Mutex<Vec<Outcome>> = Mutex::new(Vec::with_capacity(jobs.len()));
    let workers = options.concurrency.max(1).min(jobs.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(index) else { break };
                let outcome = run_one(
                    index,
                    job.dataset,
                    job.example,
                    &job.gold,
                    policy,
                    retriever,
                    generator,
                    rollout_config,
                    options.mode,
                );
                outcomes.lock().unwrap().push(outcome);
            });
        }
    });

    let mut outcomes = outcomes.into_inner().unwrap();
    outcomes.sort_by_key(|o| o.job);

    if !options.fail_open {
        if let Some(failed) = outcomes.iter().find(|o| o.error.is_some()) {
            return Err(EvalError::Episode {
                dataset: datasets[failed.dataset].0.clone(),
                example_id: failed.example_id.clone(),
                message: failed.error.clone().unwrap(),
            });
        }
    }

    let mut per_dataset = BTreeMap::new();
    for (dataset_index, (name, examples)) in datasets.iter().enumerate() {
        let mine: Vec<&Outcome> = outcomes
            .iter()
            .filter(|o| o.dataset == dataset_index)
            .collect();
        let examples_count = examples.len();
        let errors = mine.iter().filter(|o| o.error.is_some()).count();
        let em_sum: f64 = mine.iter().map(|o| o.em).sum();
        let f1_sum: f64 = mine.iter().map(|o| o.f1).sum();
        let scale = if examples_count == 0 {
            0.0
        } else {
            100.0 / examples_count as f64
        };
        per_dataset.insert(
            name.clone(),
            DatasetMetrics {
                em: em_sum * scale,
                f1: f1_sum * scale,
                examples: examples_count,
                scored: examples_count - errors,
                errors,
            },
        );
    }

    let count = per_dataset.len();
    let average = DatasetMetrics {
        em: mean(per_dataset.values().map(|m| m.em), count),
        f1: mean(per_dataset.values().map(|m| m.f1), count),
        examples: per_dataset.values().map(|m| m.examples).sum(),
        scored: per_dataset.values().map(|m| m.scored).sum(),
        errors: per_dataset.values().map(|m| m.errors).sum(),
    };

    Ok(MetricsReport {
        mode: options.mode,
        per_dataset,
        average,
    })
}

fn mean(values: impl Iterator<Item = f64>, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        values.sum::<f64>() / count as f64
    }
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    job: usize,
    dataset: usize,
    example: &EvalExample,
    gold: &GoldAnswerSet,
    policy: &dyn Policy,
    retriever: &dyn Retriever,
    generator: Option<&dyn Policy>,
    rollout_config: &RolloutConfig,
    mode: EvalMode,
) -> Outcome {
    let failed = |message: String| Outcome {
        job,
        dataset,
        example_id: example.id.clone(),
        em: 0.0,
        f1: 0.0,
        error: Some(message),
    };

    let trajectory = match run_episode(&example.question, policy, retriever, rollout_config) {
        Ok(t) => t,
        Err(e) => return failed(e.to_string()),
    };
    let prediction = match mode {
        EvalMode::EndToEnd => trajectory.agent_answer.clone().unwrap_or_default(),
        EvalMode::Submodule => {
            let generator = generator.expect("checked before spawning workers");
            match finalize_with_generator(&trajectory, generator) {
                Ok(answer) => answer,
                Err(e) => return failed(e.to_string()),
            }
        }
    };

    Outcome {
        job,
        dataset,
        example_id: example.id.clone(),
        em: em_contains(&prediction, gold) as u8 as f64,
        f1: token_f1(&prediction, gold),
        error: None,
    }
}

// ----- report emission -----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Fixed-width columns, one 16-character group per dataset.
    TableText,
    /// Comma-separated rows, one per dataset plus the average.
    Delimited,
    /// Pretty JSON of the full report.
    Structured,
}

impl ReportFormat {
    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "table-text" | "table_text" => Some(ReportFormat::TableText),
            "delimited" => Some(ReportFormat::Delimited),
            "structured" => Some(ReportFormat::Structured),
            _ => None,
        }
    }
}

pub fn emit_report(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::TableText => table_text(report),
        ReportFormat::Delimited => delimited(report),
        ReportFormat::Structured => {
            serde_json::to_string_pretty(report).expect("reports serialize")
        }
    }
}

fn table_text(report: &MetricsReport) -> String {
    let mut groups: Vec<(String, f64, f64)> = report
        .per_dataset
        .iter()
        .map(|(name, m)| (truncate_name(name), m.em, m.f1))
        .collect();
    groups.push(("Average".to_string(), report.average.em, report.average.f1));

    let names = groups
        .iter()
        .map(|(name, _, _)| format!("{name:<16}"))
        .collect::<Vec<_>>()
        .join("  ");
    let heads = groups
        .iter()
        .map(|_| format!("{:<8}{:<8}", "EM", "F1"))
        .collect::<Vec<_>>()
        .join("  ");
    let values = groups
        .iter()
        .map(|(_, em, f1)| format!("{em:<8.2}{f1:<8.2}"))
        .collect::<Vec<_>>()
        .join("  ");
    format!(
        "{}\n{}\n{}",
        names.trim_end(),
        heads.trim_end(),
        values.trim_end()
    )
}

fn truncate_name(name: &str) -> String {
    name.chars().take(16).collect()
}

fn delimited(report: &MetricsReport) -> String {
    let mut lines = vec!["dataset,em,f1,examples,errors".to_string()];
    for (name, m) in &report.per_dataset {
        lines.push(format!(
            "{name},{:.2},{:.2},{},{}",
            m.em, m.f1, m.examples, m.errors
        ));
    }
    let a = &report.average;
    lines.push(format!(
        "Average,{:.2},{:.2},{},{}",
        a.em, a.f1, a.examples, a.errors
    ));
    lines.join("\n")
}
