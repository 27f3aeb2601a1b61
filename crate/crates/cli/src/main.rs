//! `queryloop`: command-line front end for the rollout engine.
//!
//! Subcommands:
//!
//! - `index` — build the BM25 index for a corpus and save it
//! - `run` — run one question through the rollout loop and print the
//!   trajectory (optionally scored against gold answers)
//! - `eval` — score whole datasets and emit an EM/F1 report
//! - `grpo-check` — evaluate the group objective over a token-trace file
//! - `trace-validate` — check the invariants of a trajectory trace file
//!
//! Exit codes: 0 success, 1 runtime failure (failed episode, invariant
//! violation, bad trace record), 2 unreadable or invalid resource (config,
//! corpus, script, dataset), 64 usage error (bad flags or flag values).

mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use queryloop_core::corpus::{load_corpus, Corpus, CorpusError};
use queryloop_core::eval::{
    emit_report, evaluate, load_dataset, EvalError, EvalMode, EvalOptions, ReportFormat,
};
use queryloop_core::grpo::{
    group_advantages, grpo_objective_with_advantages, load_groups, GrpoError, GrpoParams,
};
use queryloop_core::policy::{PolicyError, RemotePolicy, RemotePolicyConfig, ScriptedPolicy};
use queryloop_core::protocol::validate_format;
use queryloop_core::retriever::{
    build_index, save_index, Bm25Retriever, RemoteRetriever, RemoteRetrieverConfig,
    RetrieverError,
};
use queryloop_core::rewards::{score_trajectory, GoldAnswerSet, RewardBreakdown};
use queryloop_core::rollout::{
    finalize_with_generator, initial_prompt, run_episode, EpisodeError,
};
use queryloop_core::trace::{append_trace, read_traces, validate_record, TraceError, TraceRecord};
use queryloop_core::{Bm25Params, Policy, Retriever, Termination, Trajectory};

use config::{BackendSection, ConfigError, LoadedConfig, RetrieverSection};

// ----- command line -----

#[derive(Parser)]
#[command(
    name = "queryloop",
    version,
    about = "Multi-turn retrieval-augmented QA rollout engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and save the BM25 index for the configured corpus
    Index(IndexArgs),
    /// Run one question through the rollout loop
    Run(RunArgs),
    /// Score datasets and emit an EM/F1 report
    Eval(EvalArgs),
    /// Evaluate the group objective over a token-trace JSONL file
    GrpoCheck(GrpoCheckArgs),
    /// Check the invariants of a trajectory trace JSONL file
    TraceValidate(TraceValidateArgs),
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output path (defaults to index_path from the config)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    question: String,
    /// Gold answer; may repeat. Enables the reward line.
    #[arg(long = "gold")]
    golds: Vec<String>,
    /// Append the trajectory record to this JSONL file (defaults to
    /// trace_path from the config; omit both to skip writing)
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    /// Dataset JSONL file; may repeat. Report rows use the file stem.
    #[arg(long = "dataset", required = true)]
    datasets: Vec<PathBuf>,
    /// end_to_end | submodule (overrides the config)
    #[arg(long)]
    mode: Option<String>,
    /// table-text | delimited | structured
    #[arg(long, default_value = "table-text")]
    format: String,
    /// Write the report to this file instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GrpoCheckArgs {
    /// Token-trace JSONL file (one rollout group per line)
    #[arg(long)]
    traces: PathBuf,
    /// Optional config supplying [grpo] parameters
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TraceValidateArgs {
    /// Trajectory trace JSONL file written by `run`
    #[arg(long)]
    traces: PathBuf,
}

// ----- errors and exit codes -----

#[derive(Debug)]
enum CliError {
    /// Bad flags or flag values: exit 64.
    Usage(String),
    /// Missing or unparseable configs, corpora, scripts, datasets: exit 2.
    Resource(String),
    /// Failures while actually running: exit 1.
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Resource(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 64,
            CliError::Resource(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Resource(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Resource(e.to_string())
    }
}

impl From<RetrieverError> for CliError {
    fn from(e: RetrieverError) -> Self {
        match e {
            RetrieverError::Io { .. } => CliError::Resource(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::ScriptIo { .. }
            | PolicyError::ScriptParse { .. }
            | PolicyError::Config(_) => CliError::Resource(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EpisodeError> for CliError {
    fn from(e: EpisodeError) -> Self {
        match e {
            EpisodeError::Config(reason) => {
                CliError::Resource(format!("invalid rollout configuration: {reason}"))
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Episode { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Resource(e.to_string()),
        }
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::Io { .. } => CliError::Resource(e.to_string()),
            TraceError::Parse { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<GrpoError> for CliError {
    fn from(e: GrpoError) -> Self {
        match e {
            GrpoError::Io { .. } => CliError::Resource(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

// ----- backend construction -----

fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    Ok(LoadedConfig::load(path)?)
}

fn load_configured_corpus(loaded: &LoadedConfig) -> Result<Corpus, CliError> {
    let path = loaded
        .config
        .corpus_path
        .as_ref()
        .ok_or_else(|| CliError::Resource("config does not set corpus_path".into()))?;
    Ok(load_corpus(loaded.resolve(path))?)
}

fn build_retriever(loaded: &LoadedConfig) -> Result<Box<dyn Retriever>, CliError> {
    match &loaded.config.retriever {
        RetrieverSection::Embedded => {
            let corpus = load_configured_corpus(loaded)?;
            let retriever = Bm25Retriever::from_corpus(corpus, Bm25Params::default())?;
            Ok(Box::new(retriever))
        }
        RetrieverSection::Remote { url } => {
            let retriever = RemoteRetriever::new(RemoteRetrieverConfig::new(url.clone()))?;
            Ok(Box::new(retriever))
        }
    }
}

/// Builds a policy or generator backend. For remote backends the
/// QUERYLOOP_API_TOKEN environment variable overrides any configured token.
fn build_backend(section: &BackendSection, loaded: &LoadedConfig) -> Result<Box<dyn Policy>, CliError> {
    match section {
        BackendSection::Scripted { script_path } => {
            let policy = ScriptedPolicy::from_file(loaded.resolve(script_path))?;
            Ok(Box::new(policy))
        }
        BackendSection::Remote {
            endpoint,
            model,
            api_token,
            logprobs,
        } => {
            let mut remote = RemotePolicyConfig::new(endpoint.clone(), model.clone());
            remote.api_token = std::env::var("QUERYLOOP_API_TOKEN")
                .ok()
                .filter(|t| !t.is_empty())
                .or_else(|| api_token.clone());
            remote.logprobs = *logprobs;
            Ok(Box::new(RemotePolicy::new(remote)?))
        }
    }
}

// ----- index -----

fn cmd_index(args: IndexArgs) -> Result<(), CliError> {
    let loaded = load_config(&args.config)?;
    let corpus = load_configured_corpus(&loaded)?;
    let index = build_index(&corpus, Bm25Params::default())?;

    let out = match (&args.out, &loaded.config.index_path) {
        (Some(path), _) => path.clone(),
        (None, Some(path)) => loaded.resolve(path),
        (None, None) => {
            return Err(CliError::Usage(
                "no output path: pass --out or set index_path in the config".into(),
            ))
        }
    };
    save_index(&index, &out)?;

    println!("indexed {} documents", index.doc_count());
    println!("avg_doc_length: {:.2}", index.avg_doc_length());
    println!("index: {}", out.display());
    Ok(())
}

// ----- run -----

fn termination_label(t: Termination) -> &'static str {
    match t {
        Termination::Answered => "answered",
        Termination::BudgetExhausted => "budget_exhausted",
        Termination::TokenLimit => "token_limit",
        Termination::PolicyEnd => "policy_end",
    }
}

fn reward_line(r: &RewardBreakdown) -> String {
    format!(
        "reward: format_ok={} em_strict={} em_contains={} f1={:.4} hit={} stage1={} stage2={}",
        r.format_ok,
        r.em_strict as u8,
        r.em_contains as u8,
        r.f1,
        r.hit as u8,
        r.stage1,
        r.stage2,
    )
}

fn print_run(
    trajectory: &Trajectory,
    generator_answer: Option<&str>,
    reward: Option<&RewardBreakdown>,
) {
    println!("question: {}", trajectory.question);
    println!("--- trajectory ---");
    println!("{}", trajectory.full_text);
    println!("--- end trajectory ---");
    println!("termination: {}", termination_label(trajectory.termination));
    println!(
        "agent_answer: {}",
        trajectory.agent_answer.as_deref().unwrap_or("(none)")
    );
    println!("generator_answer: {}", generator_answer.unwrap_or("(none)"));
    let ids: Vec<&str> = trajectory
        .info_set
        .iter()
        .map(|p| p.doc_id.as_str())
        .collect();
    println!(
        "info_set: {}",
        if ids.is_empty() {
            "(empty)".to_string()
        } else {
            ids.join(", ")
        }
    );
    if let Some(r) = reward {
        println!("{}", reward_line(r));
    }
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let loaded = load_config(&args.config)?;
    let policy_section = loaded
        .config
        .policy
        .as_ref()
        .ok_or_else(|| CliError::Resource("config does not set a [policy] section".into()))?;
    let policy = build_backend(policy_section, &loaded)?;
    let retriever = build_retriever(&loaded)?;

    let trajectory = run_episode(
        &args.question,
        policy.as_ref(),
        retriever.as_ref(),
        &loaded.config.rollout,
    )?;

    let generator_answer = match &loaded.config.generator {
        Some(section) => {
            let generator = build_backend(section, &loaded)?;
            Some(finalize_with_generator(&trajectory, generator.as_ref())?)
        }
        None => None,
    };

    let reward = if args.golds.is_empty() {
        None
    } else {
        let gold = GoldAnswerSet::new(args.golds.clone())
            .map_err(|e| CliError::Usage(format!("bad --gold value: {e}")))?;
        Some(score_trajectory(
            &trajectory,
            generator_answer.as_deref(),
            &gold,
        ))
    };

    print_run(&trajectory, generator_answer.as_deref(), reward.as_ref());

    let trace_path = args
        .trace
        .clone()
        .or_else(|| loaded.config.trace_path.as_ref().map(|p| loaded.resolve(p)));
    if let Some(path) = trace_path {
        let record = TraceRecord::from_trajectory(&trajectory, generator_answer, reward);
        append_trace(&path, &record)?;
        println!("trace: {}", path.display());
    }
    Ok(())
}

// ----- eval -----

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let loaded = load_config(&args.config)?;

    let mode_text = args
        .mode
        .clone()
        .or_else(|| loaded.config.eval.mode.clone());
    let mode = match mode_text {
        Some(text) => EvalMode::parse(&text).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown mode {text:?} (expected end_to_end or submodule)"
            ))
        })?,
        None => EvalMode::EndToEnd,
    };
    let format = ReportFormat::parse(&args.format).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown format {:?} (expected table-text, delimited, or structured)",
            args.format
        ))
    })?;

    let mut datasets = Vec::new();
    for path in &args.datasets {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| {
                CliError::Usage(format!("dataset path {:?} has no file name", path.display()))
            })?;
        let examples = load_dataset(path)?;
        datasets.push((name, examples));
    }

    let policy_section = loaded
        .config
        .policy
        .as_ref()
        .ok_or_else(|| CliError::Resource("config does not set a [policy] section".into()))?;
    let policy = build_backend(policy_section, &loaded)?;
    let retriever = build_retriever(&loaded)?;
    let generator = match &loaded.config.generator {
        Some(section) => Some(build_backend(section, &loaded)?),
        None => None,
    };

    let options = EvalOptions {
        mode,
        concurrency: loaded.config.eval.concurrency.unwrap_or(8).max(1),
        fail_open: loaded.config.eval.fail_open.unwrap_or(true),
    };
    let report = evaluate(
        &datasets,
        policy.as_ref(),
        retriever.as_ref(),
        generator.as_deref(),
        &loaded.config.rollout,
        &options,
    )?;

    let text = emit_report(&report, format);
    match &args.out {
        Some(path) => {
            std::fs::write(path, text.as_bytes() as &[u8]).map_err(|e| {
                CliError::Resource(format!("cannot write report {}: {e}", path.display()))
            })?;
            println!("report: {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

// ----- grpo-check -----

fn cmd_grpo_check(args: GrpoCheckArgs) -> Result<(), CliError> {
    let params = match &args.config {
        Some(path) => load_config(path)?.config.grpo,
        None => GrpoParams::default(),
    };
    let groups = load_groups(&args.traces)?;
    for group in &groups {
        let advantages = group_advantages(&group.rewards(), params.advantage_floor)
            .map_err(|e| CliError::Runtime(format!("group {}: {e}", group.question_id)))?;
        let (objective, diag) = grpo_objective_with_advantages(group, &advantages, &params)
            .map_err(|e| CliError::Runtime(format!("group {}: {e}", group.question_id)))?;

        let advantage_text = advantages
            .iter()
            .map(|a| format!("{a:.4}"))
            .collect::<Vec<_>>()
            .join(", ");
        let kl_text = diag
            .kl
            .map(|k| format!("{k:.6}"))
            .unwrap_or_else(|| "n/a".to_string());
        println!(
            "group {}: n={} advantages=[{}] objective={:.6} kl={} clip_fraction={:.4} mean_ratio={:.4} unmasked={}",
            group.question_id,
            group.rollouts.len(),
            advantage_text,
            objective,
            kl_text,
            diag.clip_fraction,
            diag.mean_ratio,
            diag.unmasked_tokens,
        );
    }
    println!("checked {} groups", groups.len());
    Ok(())
}

// ----- trace-validate -----

fn cmd_trace_validate(args: TraceValidateArgs) -> Result<(), CliError> {
    let records = read_traces(&args.traces)?;
    let mut invalid = 0usize;
    for (i, record) in records.iter().enumerate() {
        let transcript = record
            .full_text
            .strip_prefix(&initial_prompt(&record.question))
            .unwrap_or(&record.full_text);
        let format_valid = validate_format(transcript).valid;

        let problems = validate_record(record);
        if problems.is_empty() {
            println!("record {}: ok (format_valid={format_valid})", i + 1);
        } else {
            invalid += 1;
            println!("record {}: INVALID (format_valid={format_valid})", i + 1);
            for problem in &problems {
                println!("  - {problem}");
            }
        }
    }
    println!("checked {} records, {invalid} invalid", records.len());
    if invalid > 0 {
        return Err(CliError::Runtime(format!(
            "{invalid} of {} records failed invariants",
            records.len()
        )));
    }
    Ok(())
}

// ----- entry -----

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Index(args) => cmd_index(args),
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::GrpoCheck(args) => cmd_grpo_check(args),
        Command::TraceValidate(args) => cmd_trace_validate(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
