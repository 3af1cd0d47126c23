//! Coder agent runs and ensemble generation.

use crate::agent::{AgentLoop, Control, LoopEnd};
use crate::llm::{
    round_robin, MockProvider, ModelParams, Conversation, LlmClient, Message, ProviderError, ProviderSource, TokenBudget,
    GENERATION_TEMPERATURE, JUDGE_TEMPERATURE,
};
use crate::patch::{diff_trees, CandidatePatch, DiffOptions, FileTree, DEFAULT_PROFILE};
use crate::tools::{tool_specs, Limits, Sandbox, Toolbox};
use crate::trajectory::{AgentKind, Clock, Lakeview, Trajectory};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

const SYSTEM_PROMPT: &str = "\
You are an expert software engineer working inside a checked-out repository. \
Your job is to resolve the issue described by the user by editing the code.

Work through these steps:
1. Read the issue carefully and restate the problem it describes.
2. Explore the repository to find the files and functions involved.
3. Write a small script that reproduces the problem and run it to confirm the failure.
4. Inspect the relevant code until you understand the root cause.
5. Edit the source to fix the root cause. Keep the change minimal and in the style of the code base.
6. Run your reproduction script again, together with any related existing tests, to confirm the fix.
7. Delete any scratch files you created, then call `task_done` with a summary written like a commit message.

Use the `file_edit` tool to view and change files and the `bash` tool to run commands. \
All paths are relative to the repository root, which is the working directory of the shell. \
Use `sequential_thinking` to plan or revise your reasoning when the problem is not obvious. \
Do not modify existing tests unless the issue requires it.";

const NUDGE: &str = "Continue working on the issue using the tools. Call `task_done` when the fix is complete.";

/// One issue to resolve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueTask {
    pub issue_id: String,
    pub issue_text: String,
    pub codebase: PathBuf,
    #[serde(default = "default_profile")]
    pub language_profile: String,
}

fn default_profile() -> String {
    DEFAULT_PROFILE.to_string()
}

impl IssueTask {
    pub fn validate(&self) -> Result<(), CoderError> {
        if self.issue_id.trim().is_empty() {
            return Err(CoderError::InvalidTask("issue_id is empty".into()));
        }
        if self.issue_text.trim().is_empty() {
            return Err(CoderError::InvalidTask("issue text is empty".into()));
        }
        if !self.codebase.is_dir() {
            return Err(CoderError::InvalidTask(format!(
                "codebase `{}` is not a directory",
                self.codebase.display()
            )));
        }
        Ok(())
    }

    pub fn load_tree(&self) -> Result<FileTree, CoderError> {
        self.validate()?;
        FileTree::from_dir(&self.codebase).map_err(|e| CoderError::Sandbox(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub ensemble_size: usize,
    /// Provider names, assigned to runs round-robin.
    pub providers: Vec<String>,
    pub temperature: f64,
    pub max_steps: usize,
    pub token_budget: Option<u64>,
    pub seed: u64,
    /// Extra attempts for a failed run.
    pub run_retries: u32,
    /// Provider name for step summaries; off when absent.
    pub lakeview: Option<String>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            ensemble_size: 1,
            providers: vec!["mock".into()],
            temperature: GENERATION_TEMPERATURE,
            max_steps: 120,
            token_budget: None,
            seed: 0,
            run_retries: 0,
            lakeview: None,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<(), CoderError> {
        if self.ensemble_size == 0 {
            return Err(CoderError::InvalidConfig("ensemble_size must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(CoderError::InvalidConfig("max_steps must be at least 1".into()));
        }
        if self.providers.is_empty() {
            return Err(CoderError::InvalidConfig("providers list is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(CoderError::InvalidConfig(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        Ok(())
    }
}

/// Runtime knobs that are not part of the serialized configuration.
#[derive(Debug, Clone, Copy)]
pub struct Runtime {
    pub workers: usize,
    pub limits: Limits,
    pub clock: Clock,
}

impl Default for Runtime {
    fn default() -> Self {
        Runtime {
            workers: 4,
            limits: Limits::from_env(),
            clock: Clock::System,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "code", content = "detail", rename_all = "snake_case")]
pub enum CoderFailure {
    #[error("step or token budget exhausted after {0} steps")]
    BudgetExhausted(usize),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("sandbox error: {0}")]
    Sandbox(String),
}

#[derive(Debug, thiserror::Error)]
pub enum CoderError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid ensemble config: {0}")]
    InvalidConfig(String),
    #[error("sandbox error: {0}")]
    Sandbox(String),
    #[error("all {} coder runs failed", .0.len())]
    AllRunsFailed(Vec<CoderRun>),
}

/// Result of one coder run.
#[derive(Debug, Clone)]
pub struct CoderRun {
    pub run_index: usize,
    pub provider: String,
    pub steps: usize,
    pub summary: Option<String>,
    pub result: Result<CandidatePatch, CoderFailure>,
    pub trajectory: Trajectory,
}

pub struct CoderOptions {
    pub max_steps: usize,
    pub token_budget: Option<u64>,
    pub temperature: f64,
    pub limits: Limits,
    pub clock: Clock,
    pub lakeview: Option<LlmClient>,
}

fn initial_conversation(task: &IssueTask) -> Conversation {
    let mut c = Conversation::new();
    c.push(Message::system(SYSTEM_PROMPT));
    c.push(Message::user(format!(
        "Resolve the following issue in the repository.\n\n<issue>\n{}\n</issue>",
        task.issue_text.trim_end()
    )));
    c
}

/// Drives one coder run on a fresh sandbox of `original`.
///
/// The candidate patch is the diff between `original` and the sandbox tree
/// at the end of the run.
pub fn run_coder_agent(
    task: &IssueTask,
    original: &FileTree,
    client: &LlmClient,
    opts: &CoderOptions,
    run_index: usize,
) -> CoderRun {
    let run_id = format!("{}-run{}", task.issue_id, run_index);
    let mut trajectory = Trajectory::with_clock(&run_id, AgentKind::Coder, opts.clock);
    trajectory.metadata.insert("issue_id".into(), json!(task.issue_id));
    trajectory.metadata.insert("run_index".into(), json!(run_index));
    trajectory.metadata.insert("provider".into(), json!(client.provider_name()));
    trajectory.metadata.insert("model".into(), json!(client.params.model));
    trajectory.metadata.insert("temperature".into(), json!(client.params.temperature));
    trajectory.metadata.insert("max_steps".into(), json!(opts.max_steps));
    trajectory.metadata.insert("token_budget".into(), json!(opts.token_budget));
    let fail = |trajectory, failure, steps| CoderRun {
        run_index,
        provider: client.provider_name().to_string(),
        steps,
        summary: None,
        result: Err(failure),
        trajectory,
    };

    let sandbox = match Sandbox::from_tree(original, opts.limits) {
        Ok(s) => s,
        Err(e) => return fail(trajectory, CoderFailure::Sandbox(e.to_string()), 0),
    };
    let mut toolbox = Toolbox::new(sandbox);
    let lakeview = match &opts.lakeview {
        Some(c) => Lakeview::spawn(c.clone()),
        None => Lakeview::disabled(),
    };
    let specs = tool_specs();
    let agent = AgentLoop {
        client,
        tools: &specs,
        max_steps: opts.max_steps,
        nudge: NUDGE,
    };
    let mut budget = TokenBudget::new(opts.token_budget);
    let outcome = agent.run(
        initial_conversation(task),
        &mut toolbox,
        &mut trajectory,
        &mut budget,
        &lakeview,
        &mut |_, _| Control::Continue,
    );
    lakeview.finish(&mut trajectory);

    let summary = match outcome.end {
        LoopEnd::TaskDone(s) | LoopEnd::Stopped(s) => s,
        LoopEnd::StepLimit | LoopEnd::BudgetExhausted => {
            return fail(trajectory, CoderFailure::BudgetExhausted(outcome.steps), outcome.steps)
        }
        LoopEnd::Provider(e) => return fail(trajectory, CoderFailure::Provider(e.to_string()), outcome.steps),
    };

    let final_tree = match toolbox.sandbox().snapshot() {
        Ok(t) => t,
        Err(e) => return fail(trajectory, CoderFailure::Sandbox(e.to_string()), outcome.steps),
    };
    let (patch, skipped) = diff_trees(original, &final_tree, &DiffOptions::default());
    if !skipped.is_empty() {
        trajectory.metadata.insert("skipped_non_text".into(), json!(skipped));
    }
    let mut candidate = CandidatePatch::new(run_id, patch.to_unified(), run_index);
    candidate.generator = client.provider_name().to_string();
    candidate.temperature = client.params.temperature;
    candidate.empty = patch.is_empty();
    CoderRun {
        run_index,
        provider: client.provider_name().to_string(),
        steps: outcome.steps,
        summary: Some(summary),
        result: Ok(candidate),
        trajectory,
    }
}

pub fn client_for(
    source: &dyn ProviderSource,
    role: AgentKind,
    name: &str,
    index: usize,
    temperature: f64,
    seed: Option<u64>,
) -> Result<LlmClient, ProviderError> {
    let provider = source.provider(role, name, index)?;
    let mut params = source.params(name)?;
    params.temperature = temperature;
    params.seed = seed;
    Ok(LlmClient::new(provider, params))
}

fn run_one(
    task: &IssueTask,
    original: &FileTree,
    config: &EnsembleConfig,
    runtime: &Runtime,
    source: &dyn ProviderSource,
    k: usize,
) -> CoderRun {
    let name = round_robin(&config.providers, k).expect("validated non-empty").clone();
    let mut last = None;
    for _attempt in 0..=config.run_retries {
        let client = client_for(
            source,
            AgentKind::Coder,
            &name,
            k,
            config.temperature,
            Some(config.seed.wrapping_add(k as u64)),
        );
        let client = match client {
            Ok(c) => c,
            Err(e) => {
                let mut t = Trajectory::with_clock(format!("{}-run{k}", task.issue_id), AgentKind::Coder, runtime.clock);
                t.record(
                    crate::trajectory::EventKind::Error,
                    json!({ "source": "provider_setup", "code": e.code(), "message": e.to_string() }),
                );
                last = Some(CoderRun {
                    run_index: k,
                    provider: name.clone(),
                    steps: 0,
                    summary: None,
                    result: Err(CoderFailure::Provider(e.to_string())),
                    trajectory: t,
                });
                continue;
            }
        };
        let lakeview = config
            .lakeview
            .as_ref()
            .and_then(|lv| client_for(source, AgentKind::Lakeview, lv, k, JUDGE_TEMPERATURE, None).ok());
        let opts = CoderOptions {
            max_steps: config.max_steps,
            token_budget: config.token_budget,
            temperature: config.temperature,
            limits: runtime.limits,
            clock: runtime.clock,
            lakeview,
        };
        let run = run_coder_agent(task, original, &client, &opts, k);
        let ok = run.result.is_ok();
        last = Some(run);
        if ok {
            break;
        }
    }
    last.expect("at least one attempt")
}

/// Output of [`generate_ensemble`]: all runs in run order, and the patches
/// of the successful ones.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub patches: Vec<CandidatePatch>,
    pub runs: Vec<CoderRun>,
}

/// Runs `ensemble_size` independent coder runs on up to `runtime.workers`
/// threads. Run `k` uses provider `providers[k % len]`.
pub fn generate_ensemble(
    task: &IssueTask,
    config: &EnsembleConfig,
    runtime: &Runtime,
    source: &dyn ProviderSource,
) -> Result<Ensemble, CoderError> {
    config.validate()?;
    let original = task.load_tree()?;
    let n = config.ensemble_size;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<CoderRun>>> = Mutex::new(vec![None; n]);
    std::thread::scope(|s| {
        for _ in 0..runtime.workers.clamp(1, n) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= n {
                    break;
                }
                let run = run_one(task, &original, config, runtime, source, k);
                slots.lock().expect("slots")[k] = Some(run);
            });
        }
    });
    let runs: Vec<CoderRun> = slots
        .into_inner()
        .expect("slots")
        .into_iter()
        .map(|r| r.expect("every run index is filled"))
        .collect();
    let patches: Vec<CandidatePatch> = runs.iter().filter_map(|r| r.result.clone().ok()).collect();
    if patches.is_empty() {
        return Err(CoderError::AllRunsFailed(runs));
    }
    Ok(Ensemble { patches, runs })
}

/// Re-runs a recorded coder trajectory on `original`, serving the recorded
/// model responses in order. Tool calls are executed again, so the patch is
/// rebuilt from the sandbox rather than copied from the recording.
pub fn replay_coder_run(task: &IssueTask, original: &FileTree, recorded: &Trajectory, limits: Limits) -> CoderRun {
    let meta = |k: &str| recorded.metadata.get(k);
    let name = meta("provider").and_then(|v| v.as_str()).unwrap_or("replay");
    let model = meta("model").and_then(|v| v.as_str()).unwrap_or(name);
    let temperature = meta("temperature").and_then(|v| v.as_f64()).unwrap_or(GENERATION_TEMPERATURE);
    let run_index = meta("run_index").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
    let opts = CoderOptions {
        max_steps: meta("max_steps").and_then(|v| v.as_u64()).map_or(120, |n| n as usize),
        token_budget: meta("token_budget").and_then(|v| v.as_u64()),
        temperature,
        limits,
        clock: Clock::epoch(),
        lakeview: None,
    };
    let provider = Arc::new(MockProvider::from_trajectory(name, recorded));
    let client = LlmClient::new(provider, ModelParams::new(name, model, temperature));
    run_coder_agent(task, original, &client, &opts, run_index)
}
