//! End-to-end runs: generate, deduplicate, regression-prune, select.
//!
//! Each stage writes its output to `<out_dir>/<stage>.json` and the run
//! manifest is rewritten after every stage. A rerun with the same inputs
//! reuses every stage whose input hash and output file still match.

mod config;

pub use config::{Ablation, Paths, PipelineConfig, Pruning, RegressionStageConfig, TaskConfig};

use crate::coder::{client_for, generate_ensemble, CoderError, CoderFailure, IssueTask, Runtime};
use crate::llm::{ProviderSource, JUDGE_TEMPERATURE};
use crate::patch::{deduplicate, CandidatePatch, DedupReport, FileTree};
use crate::regression::{
    discover_initial_tests, prune_by_regression, refine_regression_tests, RegressionReport, Refinement,
};
use crate::selector::{majority_vote, AgentVoter, SelectionResult};
use crate::trajectory::{AgentKind, EventKind, Trajectory, FILE_SUFFIX};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const MANIFEST_FORMAT: &str = "patchvote-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{stage} stage failed: {message}")]
    StageFailed { stage: Stage, message: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generate,
    Dedup,
    Regression,
    Select,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Generate, Stage::Dedup, Stage::Regression, Stage::Select];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Dedup => "dedup",
            Stage::Regression => "regression",
            Stage::Select => "select",
        }
    }

    pub fn output_file(self) -> String {
        format!("{}.json", self.as_str())
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Pending,
    Done,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub input_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_file: Option<String>,
    /// Candidate ids handed to the next stage.
    pub forwarded: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StageRecord {
    fn pending(stage: Stage) -> Self {
        StageRecord {
            stage,
            status: StageStatus::Pending,
            input_hash: String::new(),
            output_hash: None,
            output_file: None,
            forwarded: Vec::new(),
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_index: usize,
    pub provider: String,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<CoderFailure>,
    pub trajectory: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateOutput {
    pub patches: Vec<CandidatePatch>,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionOutput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement: Option<Refinement>,
    pub report: RegressionReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tester_trajectory: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoterSummary {
    pub voter_index: usize,
    pub provider: String,
    pub order: Vec<String>,
    /// Files the voter wrote, saved under `selection/voter_K/`.
    pub generated: Vec<String>,
    pub trajectory: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectOutput {
    pub result: SelectionResult,
    pub voters: Vec<VoterSummary>,
}

/// Effective configuration recorded in the manifest; paths and worker
/// counts are left out so manifests compare across machines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub seed: u64,
    pub ablation: Ablation,
    pub issue_id: String,
    pub issue_text: String,
    pub language_profile: String,
    pub ensemble: crate::coder::EnsembleConfig,
    pub pruning: Pruning,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionStageConfig>,
    pub selector: crate::selector::SelectorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub issue_id: String,
    pub ablation: Ablation,
    pub config: ConfigSnapshot,
    pub codebase_hash: String,
    pub stages: Vec<StageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerateOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dedup: Option<DedupReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<String>,
}

impl RunManifest {
    pub fn record(&self, stage: Stage) -> &StageRecord {
        self.stages.iter().find(|r| r.stage == stage).expect("every stage has a record")
    }

    fn record_mut(&mut self, stage: Stage) -> &mut StageRecord {
        self.stages.iter_mut().find(|r| r.stage == stage).expect("every stage has a record")
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| PipelineError::Manifest(e.to_string()))?;
        if m.format != MANIFEST_FORMAT {
            return Err(PipelineError::Manifest(format!("unsupported format `{}`", m.format)));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    /// Checks that every stage forwards only ids it received.
    pub fn check_lineage(&self) -> Result<(), String> {
        let mut upstream: Option<&[String]> = None;
        for r in &self.stages {
            if let Some(up) = upstream {
                if let Some(bad) = r.forwarded.iter().find(|id| !up.contains(id)) {
                    return Err(format!("{} forwards `{bad}` which is not upstream", r.stage));
                }
            }
            if matches!(r.status, StageStatus::Done | StageStatus::Skipped) && r.stage != Stage::Select {
                upstream = Some(&r.forwarded);
            }
        }
        if let (Some(sel), Some(input)) = (&self.selected, upstream) {
            if !input.contains(sel) {
                return Err(format!("selected `{sel}` was not a selector candidate"));
            }
        }
        Ok(())
    }
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_json<T: Serialize + ?Sized>(value: &T) -> String {
    sha_hex(&serde_json::to_vec(value).expect("stage data serializes"))
}

/// Hash over the paths and contents of `tree`.
pub fn tree_hash(tree: &FileTree) -> String {
    let mut h = Sha256::new();
    for (path, bytes) in tree.iter() {
        h.update((path.len() as u64).to_le_bytes());
        h.update(path.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}

fn write_atomic(path: &Path, text: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(tmp, path)
}

fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

struct Run<'a> {
    out_dir: &'a Path,
    manifest: RunManifest,
    previous: Option<RunManifest>,
}

impl Run<'_> {
    fn persist(&self) -> Result<(), PipelineError> {
        write_atomic(&self.out_dir.join(MANIFEST_FILE), &self.manifest.to_json())?;
        Ok(())
    }

    /// Output of `stage` from the previous manifest, if its input hash
    /// matches and its output file is intact.
    fn reuse<T: DeserializeOwned + Serialize>(&self, stage: Stage, input_hash: &str) -> Option<(T, StageRecord)> {
        let prev = self.previous.as_ref()?.record(stage);
        if prev.status != StageStatus::Done || prev.input_hash != input_hash {
            return None;
        }
        let text = std::fs::read_to_string(self.out_dir.join(prev.output_file.as_ref()?)).ok()?;
        let value: T = serde_json::from_str(&text).ok()?;
        (Some(hash_json(&value)) == prev.output_hash).then(|| (value, prev.clone()))
    }

    fn done<T: Serialize>(&mut self, stage: Stage, input_hash: String, output: &T, forwarded: Vec<String>) -> Result<(), PipelineError> {
        let file = stage.output_file();
        write_atomic(
            &self.out_dir.join(&file),
            &(serde_json::to_string_pretty(output).expect("stage output serializes") + "\n"),
        )?;
        *self.manifest.record_mut(stage) = StageRecord {
            stage,
            status: StageStatus::Done,
            input_hash,
            output_hash: Some(hash_json(output)),
            output_file: Some(file),
            forwarded,
            error: None,
        };
        Ok(())
    }

    fn skipped(&mut self, stage: Stage, input_hash: String, forwarded: Vec<String>) -> Result<(), PipelineError> {
        let _ = std::fs::remove_file(self.out_dir.join(stage.output_file()));
        *self.manifest.record_mut(stage) = StageRecord {
            stage,
            status: StageStatus::Skipped,
            input_hash,
            output_hash: Some(hash_json(&forwarded)),
            output_file: None,
            forwarded,
            error: None,
        };
        self.persist()
    }

    fn fail(&mut self, stage: Stage, input_hash: String, message: String) -> PipelineError {
        *self.manifest.record_mut(stage) = StageRecord {
            stage,
            status: StageStatus::Failed,
            input_hash,
            output_hash: None,
            output_file: None,
            forwarded: Vec::new(),
            error: Some(message.clone()),
        };
        if let Err(e) = self.persist() {
            return e;
        }
        PipelineError::StageFailed { stage, message }
    }
}

fn save_trajectory(out_dir: &Path, rel: &str, t: &Trajectory) -> Result<(), PipelineError> {
    let path = out_dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    t.persist(&path).map_err(|e| PipelineError::Manifest(e.to_string()))
}

/// Runs the coder ensemble and writes patches and trajectories under
/// `out_dir`.
pub fn stage_generate(
    task: &IssueTask,
    config: &PipelineConfig,
    runtime: &Runtime,
    source: &dyn ProviderSource,
    out_dir: &Path,
) -> Result<GenerateOutput, String> {
    let (patches, runs) = match generate_ensemble(task, &config.ensemble, runtime, source) {
        Ok(e) => (e.patches, e.runs),
        Err(CoderError::AllRunsFailed(runs)) => {
            for r in &runs {
                let _ = save_trajectory(out_dir, &coder_trajectory_path(&r.trajectory), &r.trajectory);
            }
            let reasons: Vec<String> = runs
                .iter()
                .map(|r| format!("run {}: {}", r.run_index, r.result.as_ref().err().map_or(String::new(), |e| e.to_string())))
                .collect();
            return Err(format!("all coder runs failed ({})", reasons.join("; ")));
        }
        Err(e) => return Err(e.to_string()),
    };
    let mut summaries = Vec::new();
    for r in &runs {
        let rel = coder_trajectory_path(&r.trajectory);
        save_trajectory(out_dir, &rel, &r.trajectory).map_err(|e| e.to_string())?;
        summaries.push(RunSummary {
            run_index: r.run_index,
            provider: r.provider.clone(),
            steps: r.steps,
            summary: r.summary.clone(),
            patch_id: r.result.as_ref().ok().map(|p| p.id.clone()),
            failure: r.result.as_ref().err().cloned(),
            trajectory: rel,
        });
    }
    for p in &patches {
        write_atomic(&out_dir.join("patches").join(format!("{}.diff", safe_name(&p.id))), &p.raw_text)
            .map_err(|e| e.to_string())?;
    }
    Ok(GenerateOutput { patches, runs: summaries })
}

fn coder_trajectory_path(t: &Trajectory) -> String {
    format!("trajectories/coder/{}{FILE_SUFFIX}", safe_name(&t.run_id))
}

/// Regression stage over `candidates`: discover, refine, prune.
pub fn stage_regression(
    task: &IssueTask,
    tree: &FileTree,
    candidates: &[CandidatePatch],
    config: &PipelineConfig,
    runtime: &Runtime,
    source: &dyn ProviderSource,
    out_dir: &Path,
) -> Result<RegressionOutput, String> {
    let rc = config.regression.as_ref().ok_or("no regression runner configured")?;
    let initial = match &rc.initial_tests {
        Some(t) => t.clone(),
        None => discover_initial_tests(tree, &rc.runner).map_err(|e| e.to_string())?,
    };
    let (refined, refinement, tester_trajectory) = if rc.refine {
        let mut t = Trajectory::with_clock(format!("{}-tester", task.issue_id), AgentKind::Tester, runtime.clock);
        let refinement = match client_for(source, AgentKind::Tester, &rc.tester, 0, JUDGE_TEMPERATURE, Some(config.seed)) {
            Ok(client) => refine_regression_tests(&initial, &task.issue_text, &client, Some(tree), &rc.refine_options, &mut t),
            Err(e) => {
                t.record(EventKind::Error, json!({ "source": "provider_setup", "code": e.code(), "message": e.to_string() }));
                Refinement { refined: initial.clone(), fallback: true, dropped: Vec::new() }
            }
        };
        let rel = format!("trajectories/{}{FILE_SUFFIX}", safe_name(&t.run_id));
        save_trajectory(out_dir, &rel, &t).map_err(|e| e.to_string())?;
        (refinement.refined.clone(), Some(refinement), Some(rel))
    } else {
        (initial.clone(), None, None)
    };
    let report =
        prune_by_regression(&initial, &refined, candidates, tree, &rc.runner, runtime.workers).map_err(|e| e.to_string())?;
    Ok(RegressionOutput { refinement, report, tester_trajectory })
}

/// Majority vote over `candidates`, saving voter trajectories and the files
/// voters generated.
pub fn stage_select(
    task: &IssueTask,
    tree: &FileTree,
    candidates: &[CandidatePatch],
    config: &PipelineConfig,
    runtime: &Runtime,
    source: &dyn ProviderSource,
    out_dir: &Path,
) -> Result<SelectOutput, String> {
    let ids: Vec<String> = candidates.iter().map(|c| c.id.clone()).collect();
    let n_voters = config.selector.voters.unwrap_or(candidates.len()).max(1);
    let voter = AgentVoter::new(task, tree, candidates, source, &config.selector, runtime.limits, runtime.clock);
    let result = majority_vote(&ids, n_voters, config.selector.seed, &voter, runtime.workers);
    let records = voter.into_records();
    let mut voters = Vec::new();
    for r in &records {
        let rel = format!("trajectories/selector/{}{FILE_SUFFIX}", safe_name(&r.trajectory.run_id));
        save_trajectory(out_dir, &rel, &r.trajectory).map_err(|e| e.to_string())?;
        for (path, text) in &r.generated {
            write_atomic(&out_dir.join(format!("selection/voter_{}", r.voter_index)).join(path), text)
                .map_err(|e| e.to_string())?;
        }
        voters.push(VoterSummary {
            voter_index: r.voter_index,
            provider: r.provider.clone(),
            order: r.order.clone(),
            generated: r.generated.keys().cloned().collect(),
            trajectory: rel,
        });
    }
    let result = result.map_err(|e| match e {
        crate::selector::SelectorError::NoVotes(errs) => format!(
            "every voter failed: {}",
            errs.iter().map(|(i, m)| format!("voter {i}: {m}")).collect::<Vec<_>>().join("; ")
        ),
        other => other.to_string(),
    })?;
    Ok(SelectOutput { result, voters })
}

pub struct PipelineOptions {
    /// Reuse stage outputs from an existing manifest in `out_dir`.
    pub resume: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions { resume: true }
    }
}

/// Runs all stages for `task` and returns the final manifest, which is also
/// written to `out_dir/manifest.json`.
pub fn run_pipeline(
    task: &IssueTask,
    config: &PipelineConfig,
    runtime: &Runtime,
    source: &dyn ProviderSource,
    out_dir: &Path,
    options: &PipelineOptions,
) -> Result<RunManifest, PipelineError> {
    config.validate()?;
    let cfg = config.effective();
    task.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let tree = task.load_tree().map_err(|e| PipelineError::Config(e.to_string()))?;
    std::fs::create_dir_all(out_dir)?;

    let snapshot = ConfigSnapshot {
        seed: cfg.seed,
        ablation: cfg.ablation,
        issue_id: task.issue_id.clone(),
        issue_text: task.issue_text.clone(),
        language_profile: task.language_profile.clone(),
        ensemble: cfg.ensemble.clone(),
        pruning: cfg.pruning,
        regression: cfg.regression.clone(),
        selector: cfg.selector.clone(),
    };
    let codebase_hash = tree_hash(&tree);
    let previous = if options.resume {
        RunManifest::load(&out_dir.join(MANIFEST_FILE)).ok()
    } else {
        None
    };
    let mut run = Run {
        out_dir,
        previous,
        manifest: RunManifest {
            format: MANIFEST_FORMAT.into(),
            issue_id: task.issue_id.clone(),
            ablation: cfg.ablation,
            config: snapshot,
            codebase_hash: codebase_hash.clone(),
            stages: Stage::ALL.iter().map(|&s| StageRecord::pending(s)).collect(),
            generate: None,
            dedup: None,
            regression: None,
            selection: None,
            selected: None,
        },
    };
    run.persist()?;
    let base = (&codebase_hash, &task.issue_text, &task.language_profile);

    // generate
    let input = hash_json(&("generate", base, &cfg.ensemble));
    let generated = match run.reuse::<GenerateOutput>(Stage::Generate, &input) {
        Some((g, _)) => g,
        None => match stage_generate(task, &cfg, runtime, source, out_dir) {
            Ok(g) => g,
            Err(msg) => return Err(run.fail(Stage::Generate, input, msg)),
        },
    };
    let ids: Vec<String> = generated.patches.iter().map(|p| p.id.clone()).collect();
    run.done(Stage::Generate, input, &generated, ids.clone())?;
    let by_id: BTreeMap<String, CandidatePatch> = generated.patches.iter().map(|p| (p.id.clone(), p.clone())).collect();
    run.manifest.generate = Some(generated);
    run.persist()?;
    let mut upstream = run.manifest.record(Stage::Generate).output_hash.clone();

    // dedup
    let input = hash_json(&("dedup", &upstream, cfg.pruning.dedup, &task.language_profile));
    let forwarded = if cfg.pruning.dedup {
        let report = match run.reuse::<DedupReport>(Stage::Dedup, &input) {
            Some((r, _)) => r,
            None => {
                let patches: Vec<CandidatePatch> = ids.iter().map(|i| by_id[i].clone()).collect();
                match deduplicate(&patches, &task.language_profile) {
                    Ok(r) => r,
                    Err(e) => return Err(run.fail(Stage::Dedup, input, e.to_string())),
                }
            }
        };
        let reps: Vec<String> = report.representatives().map(str::to_string).collect();
        if reps.is_empty() {
            return Err(run.fail(Stage::Dedup, input, "no valid non-empty patch to forward".into()));
        }
        run.done(Stage::Dedup, input, &report, reps.clone())?;
        run.manifest.dedup = Some(report);
        run.persist()?;
        reps
    } else {
        run.skipped(Stage::Dedup, input, ids.clone())?;
        ids
    };
    upstream = run.manifest.record(Stage::Dedup).output_hash.clone();

    // regression
    let candidates: Vec<CandidatePatch> = forwarded.iter().map(|i| by_id[i].clone()).collect();
    let input = hash_json(&("regression", base, &upstream, cfg.pruning.regression, &cfg.regression, cfg.seed));
    let forwarded = if cfg.pruning.regression {
        let out = match run.reuse::<RegressionOutput>(Stage::Regression, &input) {
            Some((o, _)) => o,
            None => match stage_regression(task, &tree, &candidates, &cfg, runtime, source, out_dir) {
                Ok(o) => o,
                Err(msg) => return Err(run.fail(Stage::Regression, input, msg)),
            },
        };
        let survivors = out.report.survivors.clone();
        run.done(Stage::Regression, input, &out, survivors.clone())?;
        run.manifest.regression = Some(out);
        run.persist()?;
        survivors
    } else {
        run.skipped(Stage::Regression, input, forwarded.clone())?;
        forwarded
    };
    upstream = run.manifest.record(Stage::Regression).output_hash.clone();

    // select
    let candidates: Vec<CandidatePatch> = forwarded.iter().map(|i| by_id[i].clone()).collect();
    let input = hash_json(&("select", base, &upstream, &cfg.selector));
    let out = match run.reuse::<SelectOutput>(Stage::Select, &input) {
        Some((o, _)) => o,
        None => match stage_select(task, &tree, &candidates, &cfg, runtime, source, out_dir) {
            Ok(o) => o,
            Err(msg) => return Err(run.fail(Stage::Select, input, msg)),
        },
    };
    let selected = out.result.selected.clone();
    run.done(Stage::Select, input, &out, vec![selected.clone()])?;
    run.manifest.selection = Some(out);
    run.manifest.selected = Some(selected);
    run.persist()?;
    Ok(run.manifest)
}

/// Checks that `variant` differs from `full` only where its ablation
/// switches a stage off. Stages upstream of the switch must be identical,
/// the switched stage must pass its input through, and downstream results
/// must agree with `full` wherever both judged the same candidate.
pub fn ablation_consistency(full: &RunManifest, variant: &RunManifest) -> Result<(), String> {
    if full.ablation != Ablation::Full {
        return Err("reference manifest is not a full run".into());
    }
    let same = |s: Stage| -> Result<(), String> {
        let (a, b) = (full.record(s), variant.record(s));
        if a != b {
            return Err(format!("{s} differs between full and {}", variant.ablation.as_str()));
        }
        Ok(())
    };
    let skipped = |s: Stage, input: &[String]| -> Result<(), String> {
        let r = variant.record(s);
        if r.status != StageStatus::Skipped || r.forwarded != input {
            return Err(format!("{s} should be skipped and pass its input through"));
        }
        if full.record(s).status != StageStatus::Done {
            return Err(format!("{s} did not run in the full pipeline"));
        }
        Ok(())
    };
    let gen_ids = &variant.record(Stage::Generate).forwarded;
    same(Stage::Generate)?;
    for m in [full, variant] {
        m.check_lineage()?;
        if m.record(Stage::Select).status != StageStatus::Done {
            return Err(format!("select did not finish in {}", m.ablation.as_str()));
        }
    }
    let full_reg = full.regression.as_ref().map(|r| &r.report);
    let class_of = |id: &str| -> Option<String> {
        full.dedup.as_ref().and_then(|d| d.class_of(id)).map(|c| c.representative.clone())
    };
    // a candidate's regression verdict is the same whichever run judged it
    let outcomes_agree = |report: &RegressionReport| -> Result<(), String> {
        let Some(full_reg) = full_reg else { return Ok(()) };
        for (id, o) in &report.outcomes {
            let key = if full_reg.outcomes.contains_key(id) { Some(id.clone()) } else { class_of(id) };
            if let Some(f) = key.and_then(|k| full_reg.outcomes.get(&k)) {
                if f.clean() != o.clean() {
                    return Err(format!("regression verdict for `{id}` differs from the full run"));
                }
            }
        }
        Ok(())
    };
    let sel_input = |m: &RunManifest| m.record(Stage::Regression).forwarded.clone();

    match variant.ablation {
        Ablation::Full => {
            for s in Stage::ALL {
                same(s)?;
            }
        }
        Ablation::WoD => {
            skipped(Stage::Dedup, gen_ids)?;
            let reg = variant.regression.as_ref().ok_or("woD regression did not run")?;
            outcomes_agree(&reg.report)?;
            if reg.report.fallback_triggered != full_reg.is_some_and(|r| r.fallback_triggered) {
                return Err("fallback differs between full and woD".into());
            }
        }
        Ablation::WoR => {
            same(Stage::Dedup)?;
            skipped(Stage::Regression, &full.record(Stage::Dedup).forwarded)?;
        }
        Ablation::WoP => {
            skipped(Stage::Dedup, gen_ids)?;
            skipped(Stage::Regression, gen_ids)?;
        }
        Ablation::WoM => {
            same(Stage::Dedup)?;
            same(Stage::Regression)?;
            let sel = &variant.selection.as_ref().ok_or("woM selection missing")?.result;
            if sel.votes.len() != 1 || sel.voters_planned != 1 {
                return Err(format!("woM cast {} votes", sel.votes.len()));
            }
        }
    }
    if variant.ablation != Ablation::WoM && variant.config.selector.voters.is_none() {
        let sel = &variant.selection.as_ref().ok_or("selection missing")?.result;
        if sel.voters_planned != sel_input(variant).len().max(1) {
            return Err("voter count does not follow the candidate count".into());
        }
    }
    Ok(())
}

/// Candidate patches of a finished generate stage, by id.
pub fn patches_by_id(m: &RunManifest) -> BTreeMap<String, CandidatePatch> {
    m.generate
        .iter()
        .flat_map(|g| g.patches.iter())
        .map(|p| (p.id.clone(), p.clone()))
        .collect()
}

/// Output directory for a config: `paths.out_dir`, else `./patchvote-out/<issue>`.
pub fn default_out_dir(config: &PipelineConfig, issue_id: &str) -> PathBuf {
    config
        .paths
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("patchvote-out").join(safe_name(issue_id)))
}
