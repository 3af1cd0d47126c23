use super::{SelectorConfig, SelectorError, Vote, Voter};
use crate::agent::{AgentLoop, Control, LoopEnd};
use crate::coder::{client_for, IssueTask};
use crate::llm::{round_robin, Conversation, LlmClient, Message, ProviderSource, TokenBudget};
use crate::patch::{apply_patch, parse_patch, CandidatePatch, FileTree};
use crate::tools::{tool_specs, Limits, Sandbox, Toolbox};
use crate::trajectory::{AgentKind, Clock, Lakeview, Trajectory};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::collections::BTreeMap;
use std::sync::Mutex;

/// Directory inside the voter sandbox holding the candidate diffs.
const CANDIDATE_DIR: &str = ".candidates";
const RATIONALE_CAP: usize = 4000;

const SYSTEM_PROMPT: &str = "\
You review candidate patches for an issue and pick the one that resolves it correctly. \
The repository is checked out unpatched in your working directory. Each candidate diff \
is also saved as .candidates/<label>.diff.

Approach:
1. Read the issue and the code it concerns, then read every candidate and the functions it touches.
2. Compare how each candidate changes behaviour, including edge cases and callers.
3. Where reading is not enough, write a small test, apply a candidate with \
`patch -p1 < .candidates/<label>.diff`, run the test, and revert with `patch -R -p1 < .candidates/<label>.diff`.

When you have decided, reply with the label of the best candidate as \
<selected_patch>patch-N</selected_patch>, followed by a short justification. \
You may also give your current order of preference at any time as \
<ranking>patch-2, patch-1, ...</ranking>.";

const NUDGE: &str = "Keep investigating with the tools, or give your answer as <selected_patch>patch-N</selected_patch>.";

/// Order in which voter `voter_index` sees `n` candidates.
pub fn presentation_order(n: usize, seed: u64, voter_index: usize, randomize: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if randomize {
        let mix = seed ^ (voter_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix));
    }
    order
}

fn tag<'t>(text: &'t str, name: &str) -> Option<&'t str> {
    let open = format!("<{name}>");
    let close = format!("</{name}>");
    let start = text.rfind(&open)? + open.len();
    let end = text[start..].find(&close)? + start;
    Some(text[start..end].trim())
}

fn resolve(token: &str, labels: &[(String, String)]) -> Option<String> {
    let t = token.trim().trim_matches(|c| c == '`' || c == '"' || c == '\'' || c == '[' || c == ']');
    let lower = t.to_ascii_lowercase();
    let num = lower.strip_prefix("patch-").or(lower.strip_prefix("patch ")).unwrap_or(&lower);
    if let Ok(k) = num.trim().parse::<usize>() {
        if let Some((_, id)) = k.checked_sub(1).and_then(|i| labels.get(i)) {
            return Some(id.clone());
        }
    }
    labels.iter().find(|(_, id)| id == t).map(|(_, id)| id.clone())
}

/// Candidate id named in a `<selected_patch>` tag, by label, number or id.
/// `labels` pairs each presented label with its candidate id.
pub fn parse_choice(text: &str, labels: &[(String, String)]) -> Option<String> {
    resolve(tag(text, "selected_patch")?, labels)
}

/// Top-ranked candidate id in a `<ranking>` tag.
pub fn parse_ranking(text: &str, labels: &[(String, String)]) -> Option<String> {
    tag(text, "ranking")?
        .split([',', '\n', '>'])
        .find_map(|t| resolve(t, labels))
}

fn rationale(text: &str) -> String {
    let mut s = text.to_string();
    for name in ["selected_patch", "ranking"] {
        while let (Some(a), Some(b)) = (s.find(&format!("<{name}>")), s.find(&format!("</{name}>"))) {
            if b < a {
                break;
            }
            s.replace_range(a..b + name.len() + 3, "");
        }
    }
    let s = s.trim();
    match s.char_indices().nth(RATIONALE_CAP) {
        Some((i, _)) => s[..i].to_string(),
        None => s.to_string(),
    }
}

fn user_prompt(task: &IssueTask, original: &FileTree, presented: &[&CandidatePatch]) -> String {
    let mut p = format!("<issue>\n{}\n</issue>\n\n", task.issue_text.trim_end());
    p.push_str(&format!("There are {} candidate patches.\n", presented.len()));
    for (i, c) in presented.iter().enumerate() {
        let applies = parse_patch(&c.raw_text)
            .map_err(|e| e.to_string())
            .and_then(|s| apply_patch(original, &s).map_err(|e| e.to_string()));
        p.push_str(&format!("\n## patch-{} (id: {})\n", i + 1, c.id));
        if let Err(e) = applies {
            p.push_str(&format!("Note: this patch does not apply cleanly ({e}).\n"));
        }
        p.push_str(&format!("```diff\n{}```\n", c.raw_text));
    }
    p
}

/// Everything one selector run leaves behind.
#[derive(Debug, Clone)]
pub struct VoterRecord {
    pub voter_index: usize,
    pub provider: String,
    /// Candidate ids in the order this voter saw them.
    pub order: Vec<String>,
    /// Files the voter created in its sandbox, by path.
    pub generated: BTreeMap<String, String>,
    pub trajectory: Trajectory,
}

pub struct SelectorRunOptions {
    pub max_rounds: usize,
    pub order_seed: u64,
    pub randomize_order: bool,
    pub limits: Limits,
    pub clock: Clock,
}

/// One selector run over `candidates` on a sandbox of the unpatched tree.
///
/// If the round cap is reached, or the run ends without a readable choice,
/// the vote goes to the most recent top of a `<ranking>`, else to
/// `candidates[0]`, and is marked forced.
pub fn run_selector_once(
    task: &IssueTask,
    original: &FileTree,
    candidates: &[CandidatePatch],
    client: &LlmClient,
    opts: &SelectorRunOptions,
    voter_index: usize,
) -> (Result<Vote, SelectorError>, VoterRecord) {
    let run_id = format!("{}-voter{}", task.issue_id, voter_index);
    let mut trajectory = Trajectory::with_clock(&run_id, AgentKind::Selector, opts.clock);
    trajectory.metadata.insert("issue_id".into(), json!(task.issue_id));
    trajectory.metadata.insert("voter_index".into(), json!(voter_index));
    trajectory.metadata.insert("provider".into(), json!(client.provider_name()));
    let order = presentation_order(candidates.len(), opts.order_seed, voter_index, opts.randomize_order);
    let presented: Vec<&CandidatePatch> = order.iter().map(|&i| &candidates[i]).collect();
    trajectory
        .metadata
        .insert("order".into(), json!(presented.iter().map(|c| &c.id).collect::<Vec<_>>()));
    let mut record = VoterRecord {
        voter_index,
        provider: client.provider_name().to_string(),
        order: presented.iter().map(|c| c.id.clone()).collect(),
        generated: BTreeMap::new(),
        trajectory: Trajectory::new("", AgentKind::Selector),
    };
    let finish = |mut record: VoterRecord, trajectory, vote| {
        record.trajectory = trajectory;
        (vote, record)
    };

    let Some(first) = candidates.first() else {
        return finish(record, trajectory, Err(SelectorError::NoCandidates));
    };
    if candidates.len() == 1 {
        let vote = Vote {
            voter_index,
            chosen: first.id.clone(),
            rationale: "only one candidate".into(),
            rounds_used: 0,
            generated_tests: Vec::new(),
            forced: false,
        };
        return finish(record, trajectory, Ok(vote));
    }

    let labels: Vec<(String, String)> = presented
        .iter()
        .enumerate()
        .map(|(i, c)| (format!("patch-{}", i + 1), c.id.clone()))
        .collect();
    let mut workspace = original.clone();
    for ((label, _), c) in labels.iter().zip(&presented) {
        workspace.insert(format!("{CANDIDATE_DIR}/{label}.diff"), c.raw_text.clone());
    }
    let sandbox = match Sandbox::from_tree(&workspace, opts.limits) {
        Ok(s) => s,
        Err(e) => return finish(record, trajectory, Err(SelectorError::Voter(format!("sandbox: {e}")))),
    };
    let mut toolbox = Toolbox::new(sandbox);

    let mut conv = Conversation::new();
    conv.push(Message::system(SYSTEM_PROMPT));
    conv.push(Message::user(user_prompt(task, original, &presented)));
    let specs = tool_specs();
    let agent = AgentLoop {
        client,
        tools: &specs,
        max_steps: opts.max_rounds.max(1),
        nudge: NUDGE,
    };
    let mut ranked_top: Option<String> = None;
    let outcome = agent.run(
        conv,
        &mut toolbox,
        &mut trajectory,
        &mut TokenBudget::unlimited(),
        &Lakeview::disabled(),
        &mut |response, _| {
            if let Some(top) = parse_ranking(&response.content, &labels) {
                ranked_top = Some(top);
            }
            match parse_choice(&response.content, &labels) {
                Some(_) => Control::Stop(response.content.clone()),
                None => Control::Continue,
            }
        },
    );

    if let Ok(after) = toolbox.sandbox().snapshot() {
        for (path, _) in after.iter() {
            if workspace.get(path).is_none() {
                if let Some(text) = after.get_text(path) {
                    record.generated.insert(path.to_string(), text.to_string());
                }
            }
        }
    }
    let steps = outcome.steps;
    let (chosen, text, forced) = match outcome.end {
        LoopEnd::Provider(e) => return finish(record, trajectory, Err(SelectorError::Voter(e.to_string()))),
        LoopEnd::Stopped(text) | LoopEnd::TaskDone(text) => match parse_choice(&text, &labels) {
            Some(id) => (id, text, false),
            None => (ranked_top.clone().unwrap_or_else(|| first.id.clone()), text, true),
        },
        LoopEnd::StepLimit | LoopEnd::BudgetExhausted => {
            (ranked_top.clone().unwrap_or_else(|| first.id.clone()), String::new(), true)
        }
    };
    if forced {
        trajectory.metadata.insert("forced".into(), json!(true));
    }
    let vote = Vote {
        voter_index,
        chosen,
        rationale: rationale(&text),
        rounds_used: steps.clamp(1, opts.max_rounds.max(1)),
        generated_tests: record.generated.keys().cloned().collect(),
        forced,
    };
    finish(record, trajectory, Ok(vote))
}

/// [`Voter`] backed by selector agent runs. Keeps each run's record.
pub struct AgentVoter<'a> {
    pub task: &'a IssueTask,
    pub original: &'a FileTree,
    pub candidates: &'a [CandidatePatch],
    pub source: &'a dyn ProviderSource,
    pub config: &'a SelectorConfig,
    pub limits: Limits,
    pub clock: Clock,
    records: Mutex<BTreeMap<usize, VoterRecord>>,
}

impl<'a> AgentVoter<'a> {
    pub fn new(
        task: &'a IssueTask,
        original: &'a FileTree,
        candidates: &'a [CandidatePatch],
        source: &'a dyn ProviderSource,
        config: &'a SelectorConfig,
        limits: Limits,
        clock: Clock,
    ) -> Self {
        AgentVoter {
            task,
            original,
            candidates,
            source,
            config,
            limits,
            clock,
            records: Mutex::new(BTreeMap::new()),
        }
    }

    /// Records of the runs made so far, in voter order.
    pub fn into_records(self) -> Vec<VoterRecord> {
        self.records.into_inner().expect("records").into_values().collect()
    }
}

impl Voter for AgentVoter<'_> {
    fn vote(&self, voter_index: usize) -> Result<Vote, SelectorError> {
        let name = round_robin(&self.config.providers, voter_index)
            .map_err(|e| SelectorError::Voter(e.to_string()))?
            .clone();
        let client = client_for(
            self.source,
            AgentKind::Selector,
            &name,
            voter_index,
            self.config.temperature,
            Some(self.config.seed.wrapping_add(voter_index as u64)),
        )
        .map_err(|e| SelectorError::Voter(e.to_string()))?;
        let opts = SelectorRunOptions {
            max_rounds: self.config.max_rounds,
            order_seed: self.config.seed,
            randomize_order: self.config.randomize_order,
            limits: self.limits,
            clock: self.clock,
        };
        let (vote, record) = run_selector_once(self.task, self.original, self.candidates, &client, &opts, voter_index);
        self.records.lock().expect("records").insert(voter_index, record);
        vote
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockProvider, ModelParams, ModelResponse, RetryPolicy};
    use crate::tools::{ToolCall, BASH, FILE_EDIT};
    use std::sync::Arc;

    fn labels(ids: &[&str]) -> Vec<(String, String)> {
        ids.iter().enumerate().map(|(i, id)| (format!("patch-{}", i + 1), id.to_string())).collect()
    }

    #[test]
    fn choices_resolve_by_label_number_or_id() {
        let l = labels(&["x-run1", "x-run0"]);
        assert_eq!(parse_choice("ok <selected_patch>patch-2</selected_patch>", &l).as_deref(), Some("x-run0"));
        assert_eq!(parse_choice("<selected_patch> 1 </selected_patch>", &l).as_deref(), Some("x-run1"));
        assert_eq!(parse_choice("<selected_patch>x-run0</selected_patch>", &l).as_deref(), Some("x-run0"));
        assert_eq!(parse_choice("<selected_patch>patch-3</selected_patch>", &l), None);
        assert_eq!(parse_choice("no tag", &l), None);
        assert_eq!(parse_ranking("<ranking>patch-2 > patch-1</ranking>", &l).as_deref(), Some("x-run0"));
    }

    #[test]
    fn order_is_seeded_per_voter() {
        assert_eq!(presentation_order(5, 3, 0, false), [0, 1, 2, 3, 4]);
        assert_eq!(presentation_order(8, 3, 1, true), presentation_order(8, 3, 1, true));
        let distinct: std::collections::BTreeSet<Vec<usize>> =
            (0..20).map(|v| presentation_order(6, 3, v, true)).collect();
        assert!(distinct.len() > 10);
    }

    #[test]
    fn rationale_strips_tags() {
        assert_eq!(rationale("<selected_patch>patch-1</selected_patch>\nIt handles empty lists."), "It handles empty lists.");
    }

    fn setup() -> (tempfile::TempDir, IssueTask, FileTree, Vec<CandidatePatch>) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("m.py"), "def f():\n    return 1\n").unwrap();
        let task = IssueTask {
            issue_id: "iss".into(),
            issue_text: "f should return 2".into(),
            codebase: dir.path().to_path_buf(),
            language_profile: "python-like".into(),
        };
        let tree = task.load_tree().unwrap();
        let mk = |id: &str, v: &str, k| {
            CandidatePatch::new(
                id,
                format!("--- a/m.py\n+++ b/m.py\n@@ -1,2 +1,2 @@\n def f():\n-    return 1\n+    return {v}\n"),
                k,
            )
        };
        (dir, task, tree, vec![mk("iss-run0", "2", 0), mk("iss-run1", "3", 1)])
    }

    fn client(responses: Vec<ModelResponse>) -> LlmClient {
        LlmClient::new(Arc::new(MockProvider::sequence("sel", responses)), ModelParams::new("sel", "m", 0.2))
            .with_retry(RetryPolicy::immediate(1))
    }

    fn opts(max_rounds: usize) -> SelectorRunOptions {
        SelectorRunOptions {
            max_rounds,
            order_seed: 0,
            randomize_order: false,
            limits: Limits::default(),
            clock: Clock::epoch(),
        }
    }

    #[test]
    fn dynamic_check_then_choice() {
        let (_d, task, tree, cands) = setup();
        let script = vec![
            ModelResponse::calls(
                "",
                vec![ToolCall::new(
                    "w",
                    FILE_EDIT,
                    json!({"action": "create", "path": "check_f.py", "content": "import m\nassert m.f() == 2\n"}),
                )],
            ),
            ModelResponse::calls(
                "",
                vec![ToolCall::new(
                    "b",
                    BASH,
                    json!({"command": "patch -p1 < .candidates/patch-1.diff && python3 check_f.py && echo OK"}),
                )],
            ),
            ModelResponse::text("<selected_patch>patch-1</selected_patch> returns 2 as asked"),
        ];
        let (vote, record) = run_selector_once(&task, &tree, &cands, &client(script), &opts(30), 0);
        let vote = vote.unwrap();
        assert_eq!(vote.chosen, "iss-run0");
        assert_eq!(vote.rounds_used, 3);
        assert!(!vote.forced);
        assert_eq!(vote.generated_tests, ["check_f.py"]);
        assert!(record.generated["check_f.py"].contains("assert"));
        assert!(record.trajectory.to_jsonl().contains("OK"));
    }

    #[test]
    fn cap_forces_ranked_or_first() {
        let (_d, task, tree, cands) = setup();
        let looping = vec![ModelResponse::text("hmm <ranking>patch-2, patch-1</ranking>"); 4];
        let (vote, _) = run_selector_once(&task, &tree, &cands, &client(looping), &opts(3), 0);
        let vote = vote.unwrap();
        assert!(vote.forced);
        assert_eq!(vote.rounds_used, 3);
        assert_eq!(vote.chosen, "iss-run1");

        let silent = vec![ModelResponse::text("hmm"); 4];
        let (vote, _) = run_selector_once(&task, &tree, &cands, &client(silent), &opts(2), 0);
        assert_eq!(vote.unwrap().chosen, "iss-run0");
    }

    #[test]
    fn single_candidate_needs_no_model() {
        let (_d, task, tree, cands) = setup();
        let (vote, record) = run_selector_once(&task, &tree, &cands[..1], &client(vec![]), &opts(30), 2);
        assert_eq!(vote.unwrap().chosen, "iss-run0");
        assert!(record.trajectory.is_empty());
    }

    #[test]
    fn provider_failure_is_an_error() {
        let (_d, task, tree, cands) = setup();
        let (vote, _) = run_selector_once(&task, &tree, &cands, &client(vec![]), &opts(30), 0);
        assert!(matches!(vote, Err(SelectorError::Voter(_))));
    }
}
