use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use patchvote::coder::{client_for, generate_ensemble, replay_coder_run, CoderError, EnsembleConfig, IssueTask, Runtime};
use patchvote::eval::{
    confusion_metrics, correlations, ensemble_bounds, format_opt_pct, format_pct, metrics_report, pass_at_1,
    wilcoxon_signed_rank, CorrectnessMatrix, Selection,
};
use patchvote::fixtures::{self, FIXTURE_NAMES};
use patchvote::llm::{ConfiguredProviders, ProviderSource, TranscriptProviders, JUDGE_TEMPERATURE};
use patchvote::patch::{deduplicate, CandidatePatch, FileTree, DEFAULT_PROFILE};
use patchvote::pipeline::{
    default_out_dir, run_pipeline, stage_regression, stage_select, Ablation, PipelineConfig, PipelineOptions,
    RegressionStageConfig, RunSummary,
};
use patchvote::regression::RunnerConfig;
use patchvote::selector::SelectorConfig;
use patchvote::tools::Limits;
use patchvote::trajectory::{lakeview_summarize, AgentKind, Clock, Trajectory, FILE_SUFFIX};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Ensemble issue resolution: generate candidate patches, prune them, and
/// pick one by majority vote.
///
/// Exit codes: 0 success, 1 failure, 2 invalid usage.
#[derive(Parser)]
#[command(name = "patchvote", version)]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Upper bound on concurrent agent runs and test processes.
    #[arg(long, global = true, default_value_t = 4)]
    workers: usize,
    /// Stamp every trajectory event with a fixed time, for reproducible output.
    #[arg(long, global = true)]
    frozen_clock: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an ensemble of candidate patches.
    Resolve(ResolveArgs),
    /// Deduplicate candidate patches and prune them with regression tests.
    Prune(PruneArgs),
    /// Pick one patch by majority vote of selector agents.
    Select(SelectArgs),
    /// Offline metrics over correctness matrices and paired samples.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Inspect, replay and summarize trajectory files.
    #[command(subcommand)]
    Traj(TrajCommand),
    /// Run every stage end to end.
    Pipeline(PipelineArgs),
    /// Bundled toy issues.
    #[command(subcommand)]
    Fixture(FixtureCommand),
}

#[derive(Args)]
struct SourceArgs {
    /// Directory of scripted transcripts (coder/run_K.json, tester.json, selector/voter_K.json).
    #[arg(long, conflicts_with = "providers_file")]
    transcripts: Option<PathBuf>,
    /// Provider configuration file for live or mock models.
    #[arg(long)]
    providers_file: Option<PathBuf>,
}

impl SourceArgs {
    fn source(&self) -> Result<Option<Box<dyn ProviderSource>>> {
        Ok(match (&self.transcripts, &self.providers_file) {
            (Some(dir), _) => {
                if !dir.is_dir() {
                    bail!("transcript directory `{}` does not exist", dir.display());
                }
                Some(Box::new(TranscriptProviders::new(dir)))
            }
            (None, Some(f)) => Some(Box::new(ConfiguredProviders::load(f)?)),
            (None, None) => None,
        })
    }

    fn require(&self) -> Result<Box<dyn ProviderSource>> {
        self.source()?.ok_or_else(|| anyhow!("no models configured: pass --transcripts or --providers-file"))
    }
}

#[derive(Args)]
struct IssueArgs {
    /// File holding the issue description.
    #[arg(long)]
    issue: PathBuf,
    /// Issue identifier; defaults to the issue file's stem.
    #[arg(long)]
    issue_id: Option<String>,
    /// Repository to patch.
    #[arg(long)]
    codebase: PathBuf,
    /// Normalization profile for deduplication.
    #[arg(long, default_value = DEFAULT_PROFILE)]
    profile: String,
}

impl IssueArgs {
    fn task(&self) -> Result<IssueTask> {
        let issue_text = std::fs::read_to_string(&self.issue)
            .with_context(|| format!("cannot read issue file `{}`", self.issue.display()))?;
        let issue_id = match &self.issue_id {
            Some(id) => id.clone(),
            None => self.issue.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        };
        let task = IssueTask {
            issue_id,
            issue_text,
            codebase: self.codebase.clone(),
            language_profile: self.profile.clone(),
        };
        task.validate()?;
        Ok(task)
    }
}

#[derive(Args)]
struct ResolveArgs {
    #[command(flatten)]
    issue: IssueArgs,
    /// Ensemble size.
    #[arg(long, default_value_t = 1)]
    n: usize,
    /// Provider names, assigned to runs round-robin.
    #[arg(long, value_delimiter = ',', default_value = "mock")]
    providers: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 120)]
    max_steps: usize,
    #[arg(long)]
    token_budget: Option<u64>,
    #[command(flatten)]
    source: SourceArgs,
    /// Output directory for patches, trajectories and ensemble.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PruneArgs {
    #[command(flatten)]
    issue: IssueArgs,
    /// Directory of `.patch`/`.diff` files; the file stem is the patch id.
    #[arg(long)]
    patches: PathBuf,
    /// Test runner configuration (TOML or JSON).
    #[arg(long)]
    runner: Option<PathBuf>,
    #[arg(long)]
    no_dedup: bool,
    #[arg(long)]
    no_regression: bool,
    /// Use every discovered test without asking the tester model.
    #[arg(long)]
    no_refine: bool,
    #[arg(long, default_value = "mock")]
    tester: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    source: SourceArgs,
    /// Output directory for prune.json and the tester trajectory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    issue: IssueArgs,
    /// Directory of `.patch`/`.diff` candidate files.
    #[arg(long)]
    patches: PathBuf,
    /// Number of voters; defaults to the number of candidates.
    #[arg(long)]
    voters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = patchvote::selector::MAX_ROUNDS)]
    max_rounds: usize,
    /// Provider names, assigned to voters round-robin.
    #[arg(long, value_delimiter = ',', default_value = "mock")]
    providers: Vec<String>,
    #[command(flatten)]
    source: SourceArgs,
    /// Where to write the selection result.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Oracle, adversary and average over a correctness matrix.
    Bounds {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Pass@1 of a selection file (issue id to column index or patch id).
    Passat1 {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        selections: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Every matrix metric, plus Pass@1 when selections are given.
    Report {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        selections: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Accuracy, precision, recall and F1 from confusion counts.
    Confusion {
        #[arg(long)]
        tp: u64,
        #[arg(long)]
        tn: u64,
        #[arg(long)]
        fp: u64,
        #[arg(long = "fn")]
        fn_: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Two-sided Wilcoxon signed-rank test on paired samples.
    Wilcoxon {
        #[command(flatten)]
        pairs: PairArgs,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Pearson, Spearman and Kendall tau-b correlations.
    Corr {
        #[command(flatten)]
        pairs: PairArgs,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PairArgs {
    /// JSON `{"x": [...], "y": [...]}` or CSV with columns x,y.
    #[arg(long, conflicts_with_all = ["x", "y"])]
    pairs: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', requires = "y", allow_negative_numbers = true)]
    x: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', requires = "x", allow_negative_numbers = true)]
    y: Option<Vec<f64>>,
}

impl PairArgs {
    fn load(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if let (Some(x), Some(y)) = (&self.x, &self.y) {
            return Ok((x.clone(), y.clone()));
        }
        let path = self.pairs.as_ref().ok_or_else(|| anyhow!("pass --pairs or both --x and --y"))?;
        if path.extension().is_some_and(|e| e == "csv") {
            let mut r = csv::Reader::from_path(path)?;
            let (mut x, mut y) = (Vec::new(), Vec::new());
            for row in r.deserialize() {
                let (a, b): (f64, f64) = row?;
                x.push(a);
                y.push(b);
            }
            return Ok((x, y));
        }
        #[derive(serde::Deserialize)]
        struct Pairs {
            x: Vec<f64>,
            y: Vec<f64>,
        }
        let p: Pairs = read_json(path)?;
        Ok((p.x, p.y))
    }
}

#[derive(Subcommand)]
enum TrajCommand {
    /// Print a trajectory's header and, optionally, its events.
    Show {
        file: PathBuf,
        #[arg(long)]
        events: bool,
    },
    /// Re-run a coder trajectory through a mock serving its recorded responses.
    Replay {
        file: PathBuf,
        /// Repository the run started from.
        #[arg(long)]
        codebase: PathBuf,
        /// Write the rebuilt patch here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fail unless the rebuilt patch equals this file.
        #[arg(long)]
        expect: Option<PathBuf>,
    },
    /// Append per-step summaries from a summarizer model.
    Summarize {
        file: PathBuf,
        #[arg(long, default_value = "mock")]
        provider: String,
        #[command(flatten)]
        source: SourceArgs,
        /// Where to write the annotated trajectory; defaults to the input file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PipelineArgs {
    /// Pipeline configuration (TOML or JSON).
    #[arg(long, required_unless_present = "issues_dir")]
    config: Option<PathBuf>,
    /// Run every `<dir>/*/pipeline.toml` in turn.
    #[arg(long, conflicts_with = "config")]
    issues_dir: Option<PathBuf>,
    /// Override the configured ablation.
    #[arg(long)]
    ablation: Option<Ablation>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ignore finished stages from an earlier run.
    #[arg(long)]
    no_resume: bool,
    #[command(flatten)]
    source: SourceArgs,
}

#[derive(Subcommand)]
enum FixtureCommand {
    /// List bundled fixtures.
    List,
    /// Check fixtures against their checksums.
    Verify {
        /// Fixture names or directories; all bundled fixtures when empty.
        targets: Vec<String>,
    },
    /// Rewrite the checksums of a fixture directory.
    Seal { dir: PathBuf },
    /// Copy a fixture out with a ready-to-run pipeline.toml.
    Materialize {
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read `{}`", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid JSON in `{}`", path.display()))
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if path.extension().is_some_and(|e| e == "json") {
        return read_json(path);
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read `{}`", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid TOML in `{}`", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("cannot write `{}`", path.display()))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Null => out.push((prefix.to_string(), String::new())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// One header row and one value row, nested keys joined with dots.
fn write_csv(path: &Path, value: &Value) -> Result<()> {
    let mut cells = Vec::new();
    flatten("", value, &mut cells);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(cells.iter().map(|(k, _)| k))?;
    w.write_record(cells.iter().map(|(_, v)| v))?;
    w.flush()?;
    Ok(())
}

fn emit_eval(value: Value, csv: Option<&Path>) -> Result<()> {
    if let Some(p) = csv {
        write_csv(p, &value)?;
    }
    print_json(&value)
}

/// Reads `*.patch` and `*.diff` files in name order.
fn read_patches(dir: &Path) -> Result<Vec<CandidatePatch>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read patch directory `{}`", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "patch" || e == "diff"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .patch or .diff files in `{}`", dir.display());
    }
    files
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let id = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let text = std::fs::read_to_string(f).with_context(|| format!("cannot read `{}`", f.display()))?;
            Ok(CandidatePatch::new(id, text, i))
        })
        .collect()
}

struct Ctx {
    json: bool,
    runtime: Runtime,
}

fn resolve(ctx: &Ctx, a: &ResolveArgs) -> Result<()> {
    let task = a.issue.task()?;
    let source = a.source.require()?;
    let config = EnsembleConfig {
        ensemble_size: a.n,
        providers: a.providers.clone(),
        max_steps: a.max_steps,
        token_budget: a.token_budget,
        seed: a.seed,
        ..Default::default()
    };
    let (ensemble, failed) = match generate_ensemble(&task, &config, &ctx.runtime, source.as_ref()) {
        Ok(e) => (e.runs, false),
        Err(CoderError::AllRunsFailed(runs)) => (runs, true),
        Err(e) => return Err(e.into()),
    };
    std::fs::create_dir_all(&a.out)?;
    let mut runs = Vec::new();
    for r in &ensemble {
        let rel = format!("trajectories/{}{FILE_SUFFIX}", r.trajectory.run_id);
        r.trajectory.persist(&a.out.join(&rel))?;
        if let Ok(p) = &r.result {
            std::fs::write(a.out.join(format!("{}.patch", p.id)), &p.raw_text)?;
        }
        runs.push(RunSummary {
            run_index: r.run_index,
            provider: r.provider.clone(),
            steps: r.steps,
            summary: r.summary.clone(),
            patch_id: r.result.as_ref().ok().map(|p| p.id.clone()),
            failure: r.result.as_ref().err().cloned(),
            trajectory: rel,
        });
    }
    let report = json!({ "issue_id": task.issue_id, "config": config, "runs": runs });
    write_json(&a.out.join("ensemble.json"), &report)?;
    if ctx.json {
        print_json(&report)?;
    } else {
        let ok = runs.iter().filter(|r| r.patch_id.is_some()).count();
        println!("{ok} of {} runs produced a patch; written to {}", runs.len(), a.out.display());
    }
    if failed {
        bail!("all {} coder runs failed", runs.len());
    }
    Ok(())
}

fn prune(ctx: &Ctx, a: &PruneArgs) -> Result<()> {
    let task = a.issue.task()?;
    let tree = FileTree::from_dir(&task.codebase)?;
    let patches = read_patches(&a.patches)?;
    let by_id: BTreeMap<&str, &CandidatePatch> = patches.iter().map(|p| (p.id.as_str(), p)).collect();
    std::fs::create_dir_all(&a.out)?;

    let mut forwarded: Vec<String> = patches.iter().map(|p| p.id.clone()).collect();
    let dedup = if a.no_dedup {
        None
    } else {
        let r = deduplicate(&patches, &task.language_profile)?;
        forwarded = r.representatives().map(str::to_string).collect();
        Some(r)
    };
    let regression = if a.no_regression {
        None
    } else {
        let runner_path = a.runner.as_ref().ok_or_else(|| anyhow!("regression pruning needs --runner (or pass --no-regression)"))?;
        let runner: RunnerConfig = read_config(runner_path)?;
        let source: Box<dyn ProviderSource> = match a.source.source()? {
            Some(s) => s,
            None if a.no_refine => Box::new(TranscriptProviders::new(&a.out)),
            None => bail!("test refinement needs --transcripts or --providers-file (or pass --no-refine)"),
        };
        let cfg = PipelineConfig {
            seed: a.seed,
            regression: Some(RegressionStageConfig {
                runner,
                refine: !a.no_refine,
                tester: a.tester.clone(),
                refine_options: Default::default(),
                initial_tests: None,
            }),
            ..Default::default()
        };
        let candidates: Vec<CandidatePatch> = forwarded.iter().map(|id| by_id[id.as_str()].clone()).collect();
        let out = stage_regression(&task, &tree, &candidates, &cfg, &ctx.runtime, source.as_ref(), &a.out)
            .map_err(|e| anyhow!("regression pruning failed: {e}"))?;
        forwarded = out.report.survivors.clone();
        Some(out)
    };
    let report = json!({ "dedup": dedup, "regression": regression, "survivors": forwarded });
    write_json(&a.out.join("prune.json"), &report)?;
    if ctx.json {
        print_json(&report)?;
    } else {
        println!("{} of {} patches survive: {}", forwarded.len(), patches.len(), forwarded.join(", "));
    }
    Ok(())
}

fn select(ctx: &Ctx, a: &SelectArgs) -> Result<()> {
    let task = a.issue.task()?;
    let tree = FileTree::from_dir(&task.codebase)?;
    let candidates = read_patches(&a.patches)?;
    let source = a.source.require()?;
    let cfg = PipelineConfig {
        seed: a.seed,
        selector: SelectorConfig {
            voters: a.voters,
            seed: a.seed,
            max_rounds: a.max_rounds,
            providers: a.providers.clone(),
            ..Default::default()
        },
        ..Default::default()
    };
    if cfg.selector.voters == Some(0) {
        bail!("--voters must be at least 1");
    }
    let artifacts = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    let out = stage_select(&task, &tree, &candidates, &cfg, &ctx.runtime, source.as_ref(), &artifacts)
        .map_err(|e| anyhow!("selection failed: {e}"))?;
    write_json(&a.out, &out)?;
    if ctx.json {
        print_json(&out)?;
    } else {
        let r = &out.result;
        println!(
            "selected {} ({} of {} voters invoked{})",
            r.selected,
            r.voters_invoked,
            r.voters_planned,
            if r.early_stopped { ", early stop" } else { "" }
        );
    }
    Ok(())
}

fn eval(cmd: &EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Bounds { matrix, csv } => {
            let m = CorrectnessMatrix::load(matrix)?;
            emit_eval(serde_json::to_value(ensemble_bounds(&m)?)?, csv.as_deref())
        }
        EvalCommand::Passat1 { matrix, selections, csv } => {
            let m = CorrectnessMatrix::load(matrix)?;
            let s: BTreeMap<String, Selection> = read_json(selections)?;
            let p = pass_at_1(&s, &m)?;
            emit_eval(json!({ "pass_at_1": p, "percent": format_pct(p) }), csv.as_deref())
        }
        EvalCommand::Report { matrix, selections, csv } => {
            let m = CorrectnessMatrix::load(matrix)?;
            let s: Option<BTreeMap<String, Selection>> = selections.as_deref().map(read_json).transpose()?;
            emit_eval(serde_json::to_value(metrics_report(&m, s.as_ref())?)?, csv.as_deref())
        }
        EvalCommand::Confusion { tp, tn, fp, fn_, csv } => {
            let c = confusion_metrics(*tp, *tn, *fp, *fn_)?;
            let v = json!({
                "accuracy": c.accuracy,
                "precision": c.precision,
                "recall": c.recall,
                "f1": c.f1,
                "percent": {
                    "accuracy": format_pct(c.accuracy),
                    "precision": format_opt_pct(c.precision),
                    "recall": format_opt_pct(c.recall),
                    "f1": format_opt_pct(c.f1),
                },
            });
            emit_eval(v, csv.as_deref())
        }
        EvalCommand::Wilcoxon { pairs, csv } => {
            let (x, y) = pairs.load()?;
            emit_eval(serde_json::to_value(wilcoxon_signed_rank(&x, &y)?)?, csv.as_deref())
        }
        EvalCommand::Corr { pairs, csv } => {
            let (x, y) = pairs.load()?;
            emit_eval(serde_json::to_value(correlations(&x, &y)?)?, csv.as_deref())
        }
    }
}

fn traj(ctx: &Ctx, cmd: &TrajCommand) -> Result<()> {
    match cmd {
        TrajCommand::Show { file, events } => {
            let t = Trajectory::load(file)?;
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for e in t.events() {
                *counts.entry(serde_json::to_value(e.kind)?.as_str().unwrap_or("?").to_string()).or_default() += 1;
            }
            let warnings = t.integrity_warnings().count();
            if ctx.json {
                let mut v = json!({
                    "run_id": t.run_id,
                    "agent_kind": t.agent_kind,
                    "metadata": t.metadata,
                    "totals": t.totals(),
                    "event_counts": counts,
                    "integrity_warnings": warnings,
                });
                if *events {
                    v["events"] = serde_json::to_value(t.events())?;
                }
                return print_json(&v);
            }
            let totals = t.totals();
            println!("run {} ({}), {} events", t.run_id, t.agent_kind, t.len());
            println!(
                "tokens: {} prompt, {} completion; wall clock {} ms",
                totals.prompt_tokens, totals.completion_tokens, totals.wall_clock_ms
            );
            let parts: Vec<String> = counts.iter().map(|(k, n)| format!("{k} {n}")).collect();
            println!("events: {}", parts.join(", "));
            if warnings > 0 {
                println!("integrity warnings: {warnings}");
            }
            if *events {
                for e in t.events() {
                    let mut body = e.body.to_string();
                    if body.len() > 160 {
                        let cut = (0..=157).rev().find(|&i| body.is_char_boundary(i)).unwrap_or(0);
                        body = format!("{}...", &body[..cut]);
                    }
                    println!("{:>4} {:<12} {body}", e.index, serde_json::to_value(e.kind)?.as_str().unwrap_or("?"));
                }
            }
            Ok(())
        }
        TrajCommand::Replay { file, codebase, out, expect } => {
            let recorded = Trajectory::load(file)?;
            if recorded.agent_kind != AgentKind::Coder {
                bail!("only coder trajectories can be replayed, not {}", recorded.agent_kind);
            }
            let issue_id = recorded.metadata.get("issue_id").and_then(|v| v.as_str()).unwrap_or("replay");
            let task = IssueTask {
                issue_id: issue_id.to_string(),
                issue_text: "replay".into(),
                codebase: codebase.clone(),
                language_profile: DEFAULT_PROFILE.into(),
            };
            let tree = task.load_tree()?;
            let run = replay_coder_run(&task, &tree, &recorded, ctx.runtime.limits);
            let patch = run.result.map_err(|e| anyhow!("replayed run failed: {e}"))?;
            if let Some(p) = out {
                std::fs::write(p, &patch.raw_text)?;
            }
            let matches = expect
                .as_ref()
                .map(|p| std::fs::read_to_string(p).map(|e| e == patch.raw_text))
                .transpose()?;
            if ctx.json {
                print_json(&json!({ "run_id": recorded.run_id, "steps": run.steps, "patch": patch.raw_text, "matches_expected": matches }))?;
            } else if out.is_none() {
                print!("{}", patch.raw_text);
            }
            if matches == Some(false) {
                bail!("replayed patch differs from `{}`", expect.as_ref().unwrap().display());
            }
            Ok(())
        }
        TrajCommand::Summarize { file, provider, source, out } => {
            let mut t = Trajectory::load(file)?;
            let source = source.require()?;
            let client = client_for(source.as_ref(), AgentKind::Lakeview, provider, 0, JUDGE_TEMPERATURE, None)?;
            let summaries = lakeview_summarize(&mut t, Some(&client));
            t.persist(out.as_deref().unwrap_or(file))?;
            if ctx.json {
                print_json(&summaries)?;
            } else {
                for s in &summaries {
                    println!("[{}-{}] {}", s.event_range[0], s.event_range[1], s.summary);
                }
            }
            Ok(())
        }
    }
}

fn pipeline_one(ctx: &Ctx, config_path: &Path, a: &PipelineArgs, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = PipelineConfig::load(config_path)?;
    if let Some(ab) = a.ablation {
        cfg.ablation = ab;
    }
    let task = cfg.task()?;
    let source: Box<dyn ProviderSource> = match a.source.source()? {
        Some(s) => s,
        None => match (&cfg.paths.transcripts, &cfg.paths.providers) {
            (Some(dir), _) => Box::new(TranscriptProviders::new(dir)),
            (None, Some(f)) => Box::new(ConfiguredProviders::load(f)?),
            (None, None) => bail!("no models configured: set paths.transcripts or paths.providers"),
        },
    };
    let out_dir = out.unwrap_or_else(|| default_out_dir(&cfg, &task.issue_id));
    let opts = PipelineOptions { resume: !a.no_resume };
    let m = run_pipeline(&task, &cfg, &ctx.runtime, source.as_ref(), &out_dir, &opts)?;
    if ctx.json {
        print_json(&m)?;
    } else {
        println!(
            "{}: selected {} ({} ablation); manifest at {}",
            m.issue_id,
            m.selected.as_deref().unwrap_or("nothing"),
            m.ablation.as_str(),
            out_dir.join(patchvote::pipeline::MANIFEST_FILE).display()
        );
    }
    Ok(())
}

fn pipeline(ctx: &Ctx, a: &PipelineArgs) -> Result<()> {
    if let Some(config) = &a.config {
        return pipeline_one(ctx, config, a, a.out.clone());
    }
    let dir = a.issues_dir.as_ref().expect("clap requires one of --config and --issues-dir");
    let mut configs: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read `{}`", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path().join("pipeline.toml")))
        .filter(|p| p.is_file())
        .collect();
    configs.sort();
    if configs.is_empty() {
        bail!("no */pipeline.toml under `{}`", dir.display());
    }
    let mut failures = 0;
    for c in &configs {
        let name = c.parent().and_then(|p| p.file_name()).unwrap_or_default();
        let out = a.out.as_ref().map(|o| o.join(name));
        if let Err(e) = pipeline_one(ctx, c, a, out) {
            eprintln!("error: {}: {e:#}", c.display());
            failures += 1;
        }
    }
    if failures > 0 {
        bail!("{failures} of {} issues failed", configs.len());
    }
    Ok(())
}

fn fixture(ctx: &Ctx, cmd: &FixtureCommand) -> Result<()> {
    match cmd {
        FixtureCommand::List => {
            let mut rows = Vec::new();
            for name in FIXTURE_NAMES {
                let fx = fixtures::load_fixture(name)?;
                rows.push(json!({ "name": name, "description": fx.meta.description, "ensemble_size": fx.meta.ensemble_size }));
                if !ctx.json {
                    println!("{name:<12} {}", fx.meta.description);
                }
            }
            if ctx.json {
                print_json(&rows)?;
            }
            Ok(())
        }
        FixtureCommand::Verify { targets } => {
            let dirs: Vec<PathBuf> = if targets.is_empty() {
                FIXTURE_NAMES.iter().map(|n| fixtures::fixtures_dir().join(n)).collect()
            } else {
                targets
                    .iter()
                    .map(|t| if Path::new(t).is_dir() { PathBuf::from(t) } else { fixtures::fixtures_dir().join(t) })
                    .collect()
            };
            let mut bad = 0;
            for d in &dirs {
                match fixtures::verify(d) {
                    Ok(()) => println!("ok      {}", d.display()),
                    Err(e) => {
                        println!("FAILED  {}: {e}", d.display());
                        bad += 1;
                    }
                }
            }
            if bad > 0 {
                bail!("{bad} fixture(s) failed verification");
            }
            Ok(())
        }
        FixtureCommand::Seal { dir } => {
            fixtures::seal(dir)?;
            println!("sealed {}", dir.display());
            Ok(())
        }
        FixtureCommand::Materialize { name, out } => {
            let fx = fixtures::load_fixture(name)?;
            FileTree::from_dir(fx.dir())?.write_to(out)?;
            std::fs::write(out.join("issue.md"), &fx.meta.issue_text)?;
            let cfg = json!({
                "seed": 0,
                "task": { "issue_id": fx.meta.issue_id, "issue_file": "issue.md", "codebase": "repo" },
                "ensemble": { "ensemble_size": fx.meta.ensemble_size },
                "regression": { "runner": fx.meta.runner },
                "paths": { "out_dir": "out", "transcripts": "transcripts" },
            });
            let toml_text = toml::to_string(&cfg)?;
            std::fs::write(out.join("pipeline.toml"), toml_text)?;
            println!("{}", out.join("pipeline.toml").display());
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        json: cli.json,
        runtime: Runtime {
            workers: cli.workers.max(1),
            limits: Limits::from_env(),
            clock: if cli.frozen_clock { Clock::epoch() } else { Clock::System },
        },
    };
    match &cli.command {
        Command::Resolve(a) => resolve(&ctx, a),
        Command::Prune(a) => prune(&ctx, a),
        Command::Select(a) => select(&ctx, a),
        Command::Eval(c) => eval(c),
        Command::Traj(c) => traj(&ctx, c),
        Command::Pipeline(a) => pipeline(&ctx, a),
        Command::Fixture(c) => fixture(&ctx, c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
