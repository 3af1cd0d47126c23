//! Regression-test pruning of candidate patches.
//!
//! Tests that pass on the original codebase form the initial set; a model
//! narrows them to the likely true regression tests; each candidate is then
//! run against that subset and dropped if any test breaks.

mod refine;
mod runner;

pub use refine::{parse_selection, refine_regression_tests, RefineOptions, Refinement};
pub use runner::{parse_junit, parse_tap, ParserKind, RunnerConfig, RunnerError, Verdict};

use crate::patch::{apply_patch, parse_patch, CandidatePatch, FileTree};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Runs the full suite on the unpatched tree and returns the passing tests
/// in report order, without duplicates.
pub fn discover_initial_tests(codebase: &FileTree, runner: &RunnerConfig) -> Result<Vec<String>, RunnerError> {
    let dir = materialize(codebase)?;
    let results = runner.run_suite(dir.path())?;
    let failing: BTreeSet<&str> = results
        .iter()
        .filter(|(_, v)| *v != Verdict::Pass)
        .map(|(t, _)| t.as_str())
        .collect();
    let mut seen = BTreeSet::new();
    Ok(results
        .iter()
        .filter(|(t, v)| *v == Verdict::Pass && !failing.contains(t.as_str()) && !t.is_empty())
        .filter(|(t, _)| seen.insert(t.clone()))
        .map(|(t, _)| t.clone())
        .collect())
}

fn materialize(tree: &FileTree) -> std::io::Result<tempfile::TempDir> {
    let dir = tempfile::Builder::new().prefix("patchvote-reg-").tempdir()?;
    tree.write_to(dir.path())?;
    Ok(dir)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchOutcome {
    pub passed: Vec<String>,
    pub failed: Vec<String>,
    pub errored: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apply_error: Option<String>,
}

impl PatchOutcome {
    pub fn clean(&self) -> bool {
        self.failed.is_empty() && self.errored.is_empty() && self.apply_error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub initial: Vec<String>,
    /// Tests actually used for pruning, after flaky tests were removed.
    pub refined: Vec<String>,
    /// Refined tests that failed on the unpatched tree during pruning.
    pub flaky: Vec<String>,
    pub outcomes: BTreeMap<String, PatchOutcome>,
    pub survivors: Vec<String>,
    pub fallback_triggered: bool,
}

/// Applies each patch to a fresh copy of `codebase` and runs every refined
/// test on it. Patches run concurrently on up to `workers` threads.
pub fn prune_by_regression(
    initial: &[String],
    refined: &[String],
    patches: &[CandidatePatch],
    codebase: &FileTree,
    runner: &RunnerConfig,
    workers: usize,
) -> Result<RegressionReport, RunnerError> {
    // job 0 is the unpatched baseline used to spot flaky tests
    let jobs = patches.len() + 1;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<PatchOutcome, RunnerError>>>> = Mutex::new((0..jobs).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs) {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                if j >= jobs {
                    break;
                }
                let outcome = if j == 0 {
                    run_tests(codebase, refined, runner)
                } else {
                    evaluate_patch(&patches[j - 1], codebase, refined, runner)
                };
                results.lock().expect("results")[j] = Some(outcome);
            });
        }
    });
    let mut results = results.into_inner().expect("results").into_iter().map(|r| r.expect("filled"));
    let baseline = results.next().expect("baseline job")?;
    let flaky: BTreeSet<String> = baseline.failed.iter().chain(&baseline.errored).cloned().collect();

    let mut outcomes = BTreeMap::new();
    for (patch, outcome) in patches.iter().zip(results) {
        let mut outcome = outcome?;
        for list in [&mut outcome.passed, &mut outcome.failed, &mut outcome.errored] {
            list.retain(|t| !flaky.contains(t));
        }
        outcomes.insert(patch.id.clone(), outcome);
    }
    let mut survivors: Vec<String> = patches
        .iter()
        .filter(|p| outcomes[&p.id].clean())
        .map(|p| p.id.clone())
        .collect();
    let fallback_triggered = survivors.is_empty() && !patches.is_empty();
    if fallback_triggered {
        survivors = patches.iter().map(|p| p.id.clone()).collect();
    }
    Ok(RegressionReport {
        initial: initial.to_vec(),
        refined: refined.iter().filter(|t| !flaky.contains(*t)).cloned().collect(),
        flaky: refined.iter().filter(|t| flaky.contains(*t)).cloned().collect(),
        outcomes,
        survivors,
        fallback_triggered,
    })
}

/// Applies `patch` to `codebase` and runs `tests`. A patch that does not apply
/// counts every test as errored.
pub fn evaluate_patch(
    patch: &CandidatePatch,
    codebase: &FileTree,
    tests: &[String],
    runner: &RunnerConfig,
) -> Result<PatchOutcome, RunnerError> {
    let patched = parse_patch(&patch.raw_text).and_then(|p| apply_patch(codebase, &p));
    match patched {
        Ok(tree) => run_tests(&tree, tests, runner),
        Err(e) => Ok(PatchOutcome {
            errored: tests.to_vec(),
            apply_error: Some(e.to_string()),
            ..Default::default()
        }),
    }
}

fn run_tests(tree: &FileTree, tests: &[String], runner: &RunnerConfig) -> Result<PatchOutcome, RunnerError> {
    let verdicts: Vec<Verdict> = if runner.independent && tests.len() > 1 {
        let verdicts: Mutex<Vec<Option<Result<Verdict, RunnerError>>>> = Mutex::new((0..tests.len()).map(|_| None).collect());
        std::thread::scope(|s| {
            for (i, t) in tests.iter().enumerate() {
                let verdicts = &verdicts;
                s.spawn(move || {
                    let v = materialize(tree).map_err(RunnerError::from).and_then(|d| runner.run_one(d.path(), t));
                    verdicts.lock().expect("verdicts")[i] = Some(v);
                });
            }
        });
        verdicts
            .into_inner()
            .expect("verdicts")
            .into_iter()
            .map(|v| v.expect("filled"))
            .collect::<Result<_, _>>()?
    } else {
        let dir = materialize(tree)?;
        tests.iter().map(|t| runner.run_one(dir.path(), t)).collect::<Result<_, _>>()?
    };
    let mut out = PatchOutcome::default();
    for (t, v) in tests.iter().zip(verdicts) {
        match v {
            Verdict::Pass | Verdict::Skip => out.passed.push(t.clone()),
            Verdict::Fail => out.failed.push(t.clone()),
            Verdict::Error => out.errored.push(t.clone()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Tests are shell scripts under `t/`; a test passes when its script
    /// exits 0.
    fn repo(tests: &[(&str, &str)]) -> FileTree {
        let mut t = FileTree::new();
        t.insert("value.txt", "1\n");
        for (name, body) in tests {
            t.insert(format!("t/{name}.sh"), *body);
        }
        t
    }

    fn runner() -> RunnerConfig {
        RunnerConfig {
            discover_cmd: "for f in t/*.sh; do if bash $f >/dev/null 2>&1; then echo \"ok - $f\"; else echo \"not ok - $f\"; fi; done".into(),
            run_one_cmd: "if bash {test_id} >/dev/null 2>&1; then echo ok - {test_id}; else echo not ok - {test_id}; exit 1; fi".into(),
            parser: ParserKind::Tap,
            timeout_secs: 10.0,
            report_file: None,
            junit_id: "{name}".into(),
            independent: false,
        }
    }

    const NEEDS_ONE: &str = "grep -qx 1 value.txt\n";

    fn set_value(id: &str, run: usize, v: &str) -> CandidatePatch {
        CandidatePatch::new(id, format!("--- a/value.txt\n+++ b/value.txt\n@@ -1 +1 @@\n-1\n+{v}\n"), run)
    }

    fn add_file(id: &str, run: usize) -> CandidatePatch {
        CandidatePatch::new(id, "--- /dev/null\n+++ b/extra.txt\n@@ -0,0 +1 @@\n+x\n", run)
    }

    #[test]
    fn discover_keeps_passing() {
        let tree = repo(&[("t1", "exit 0\n"), ("t2", "exit 1\n")]);
        assert_eq!(discover_initial_tests(&tree, &runner()).unwrap(), ["t/t1.sh"]);
        let empty = repo(&[]);
        let cfg = RunnerConfig { discover_cmd: "echo 1..0".into(), ..runner() };
        assert!(discover_initial_tests(&empty, &cfg).unwrap().is_empty());
    }

    #[test]
    fn discover_matches_per_test_oracle() {
        let bodies = ["exit 0\n", "exit 1\n", NEEDS_ONE, "grep -qx 2 value.txt\n", "true\n"];
        let tests: Vec<(String, &str)> = bodies.iter().enumerate().map(|(i, b)| (format!("t{i}"), *b)).collect();
        let refs: Vec<(&str, &str)> = tests.iter().map(|(n, b)| (n.as_str(), *b)).collect();
        let tree = repo(&refs);
        let found = discover_initial_tests(&tree, &runner()).unwrap();
        let dir = materialize(&tree).unwrap();
        let oracle: Vec<String> = tests
            .iter()
            .map(|(n, _)| format!("t/{n}.sh"))
            .filter(|id| {
                std::process::Command::new("bash").arg(id).current_dir(dir.path()).status().unwrap().success()
            })
            .collect();
        assert_eq!(found, oracle);
        assert_eq!(found.len(), 3);
    }

    #[test]
    fn breaking_patch_is_dropped() {
        let tree = repo(&[("t1", NEEDS_ONE)]);
        let tests = vec!["t/t1.sh".to_string()];
        let patches = [add_file("good", 0), set_value("bad", 1, "2")];
        let r = prune_by_regression(&tests, &tests, &patches, &tree, &runner(), 2).unwrap();
        assert_eq!(r.survivors, ["good"]);
        assert!(!r.fallback_triggered);
        assert_eq!(r.outcomes["bad"].failed, tests);
    }

    #[test]
    fn all_failing_keeps_everything() {
        let tree = repo(&[("t1", NEEDS_ONE)]);
        let tests = vec!["t/t1.sh".to_string()];
        let patches = [set_value("a", 0, "2"), set_value("b", 1, "3")];
        let r = prune_by_regression(&tests, &tests, &patches, &tree, &runner(), 1).unwrap();
        assert!(r.fallback_triggered);
        assert_eq!(r.survivors, ["a", "b"]);
    }

    #[test]
    fn apply_failure_is_an_error() {
        let tree = repo(&[("t1", NEEDS_ONE)]);
        let tests = vec!["t/t1.sh".to_string()];
        let broken = CandidatePatch::new("broken", "--- a/value.txt\n+++ b/value.txt\n@@ -1 +1 @@\n-9\n+2\n", 1);
        let r = prune_by_regression(&tests, &tests, &[add_file("ok", 0), broken], &tree, &runner(), 2).unwrap();
        assert_eq!(r.survivors, ["ok"]);
        assert!(r.outcomes["broken"].apply_error.is_some());
        assert_eq!(r.outcomes["broken"].errored, tests);
    }

    #[test]
    fn flaky_tests_are_removed() {
        // t2 fails on the unpatched tree although it is in the refined set
        let tree = repo(&[("t1", NEEDS_ONE), ("t2", "exit 1\n")]);
        let tests = vec!["t/t1.sh".to_string(), "t/t2.sh".to_string()];
        let r = prune_by_regression(&tests, &tests, &[add_file("a", 0)], &tree, &runner(), 2).unwrap();
        assert_eq!(r.flaky, ["t/t2.sh"]);
        assert_eq!(r.refined, ["t/t1.sh"]);
        assert_eq!(r.survivors, ["a"]);
        assert!(!r.fallback_triggered);
    }

    #[test]
    fn independent_tests_run_in_parallel_dirs() {
        let tree = repo(&[("t1", NEEDS_ONE), ("t2", "exit 0\n")]);
        let tests = vec!["t/t1.sh".to_string(), "t/t2.sh".to_string()];
        let cfg = RunnerConfig { independent: true, ..runner() };
        let r = prune_by_regression(&tests, &tests, &[set_value("x", 0, "2")], &tree, &cfg, 1).unwrap();
        assert_eq!(r.outcomes["x"].failed, ["t/t1.sh"]);
        assert_eq!(r.outcomes["x"].passed, ["t/t2.sh"]);
    }
}
