use crate::llm::{Conversation, LlmClient, Message, TokenBudget};
use crate::patch::FileTree;
use crate::trajectory::{EventKind, Trajectory};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeSet;

const SYSTEM_PROMPT: &str = "\
You select regression tests for a bug fix. Some tests that pass today may \
legitimately change behaviour once the issue is fixed; leave those out. Keep \
every test that checks behaviour the fix must preserve.

Answer with a JSON array of test ids copied exactly from the list, for example \
[\"tests/test_a.py::test_one\", \"tests/test_b.py::test_two\"].";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineOptions {
    /// Send test bodies along with names and file paths.
    pub include_bodies: bool,
    /// Total characters of test bodies sent when `include_bodies` is set.
    pub body_char_cap: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            include_bodies: false,
            body_char_cap: 8000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Refinement {
    pub refined: Vec<String>,
    /// The model's answer was empty or unusable and `initial` was kept.
    pub fallback: bool,
    /// Ids the model returned that were not in `initial`.
    pub dropped: Vec<String>,
}

fn test_file(id: &str) -> Option<&str> {
    if let Some((file, _)) = id.split_once("::") {
        return Some(file);
    }
    (id.contains('/') || id.ends_with(".py") || id.ends_with(".sh")).then_some(id)
}

/// Source of the test named by `id`: the `def` block for `file::name`
/// ids, the whole file for path ids.
fn test_body(tree: &FileTree, id: &str) -> Option<String> {
    let file = test_file(id)?;
    let text = tree.get_text(file)?;
    let Some((_, rest)) = id.split_once("::") else {
        return Some(text.to_string());
    };
    let name = rest.rsplit("::").next().unwrap_or(rest);
    let lines: Vec<&str> = text.lines().collect();
    let start = lines
        .iter()
        .position(|l| l.trim_start().starts_with(&format!("def {name}(")))?;
    let indent = lines[start].len() - lines[start].trim_start().len();
    let end = lines[start + 1..]
        .iter()
        .position(|l| !l.trim().is_empty() && l.len() - l.trim_start().len() <= indent)
        .map_or(lines.len(), |p| start + 1 + p);
    Some(lines[start..end].join("\n"))
}

fn user_prompt(initial: &[String], issue_text: &str, codebase: Option<&FileTree>, opts: &RefineOptions) -> String {
    let mut p = format!("<issue>\n{}\n</issue>\n\nTests that currently pass:\n", issue_text.trim_end());
    for id in initial {
        match test_file(id) {
            Some(f) if f != id => p.push_str(&format!("- {id} (file: {f})\n")),
            _ => p.push_str(&format!("- {id}\n")),
        }
    }
    if let (true, Some(tree)) = (opts.include_bodies, codebase) {
        let mut budget = opts.body_char_cap;
        let mut section = String::new();
        for id in initial {
            let Some(body) = test_body(tree, id) else { continue };
            let entry = format!("### {id}\n{body}\n\n");
            if entry.len() > budget {
                break;
            }
            budget -= entry.len();
            section.push_str(&entry);
        }
        if !section.is_empty() {
            p.push_str("\nTest sources:\n\n");
            p.push_str(&section);
        }
    }
    p.push_str("\nWhich of these tests should every correct fix keep passing?");
    p
}

/// Extracts the chosen ids from a model answer: a JSON array of strings,
/// or else one id per line. Returns the known ids in `initial` order and
/// the unknown ones; `None` when nothing usable was found.
pub fn parse_selection(text: &str, initial: &[String]) -> Option<(Vec<String>, Vec<String>)> {
    let known: BTreeSet<&str> = initial.iter().map(String::as_str).collect();
    let mut picked: Vec<String> = Vec::new();
    if let (Some(a), Some(b)) = (text.find('['), text.rfind(']')) {
        if a < b {
            if let Ok(ids) = serde_json::from_str::<Vec<String>>(&text[a..=b]) {
                picked = ids;
            }
        }
    }
    if picked.is_empty() {
        for line in text.lines() {
            let mut l = line.trim();
            l = l.trim_start_matches(|c: char| c == '-' || c == '*' || c.is_ascii_digit() || c == '.' || c == ')');
            let l = l.trim().trim_end_matches(',').trim_matches(|c| c == '`' || c == '"' || c == '\'');
            if known.contains(l) {
                picked.push(l.to_string());
            }
        }
    }
    let chosen: BTreeSet<&str> = picked.iter().map(String::as_str).collect();
    let refined: Vec<String> = initial.iter().filter(|t| chosen.contains(t.as_str())).cloned().collect();
    let mut dropped: Vec<String> = picked.iter().filter(|t| !known.contains(t.as_str())).cloned().collect();
    dropped.dedup();
    (!refined.is_empty()).then_some((refined, dropped))
}

/// Asks the model which initial tests are true regression tests. Any
/// failure or unusable answer keeps `initial` unchanged.
pub fn refine_regression_tests(
    initial: &[String],
    issue_text: &str,
    client: &LlmClient,
    codebase: Option<&FileTree>,
    opts: &RefineOptions,
    trajectory: &mut Trajectory,
) -> Refinement {
    let keep = |dropped| Refinement {
        refined: initial.to_vec(),
        fallback: true,
        dropped,
    };
    if initial.is_empty() {
        return keep(Vec::new());
    }
    let mut conv = Conversation::new();
    conv.push(Message::system(SYSTEM_PROMPT));
    conv.push(Message::user(user_prompt(initial, issue_text, codebase, opts)));
    let response = match client.complete(&conv, &[], trajectory, &mut TokenBudget::unlimited()) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("test refinement failed, keeping all initial tests: {e}");
            return keep(Vec::new());
        }
    };
    match parse_selection(&response.content, initial) {
        Some((refined, dropped)) => Refinement {
            refined,
            fallback: false,
            dropped,
        },
        None => {
            trajectory.record(
                EventKind::Error,
                json!({ "source": "refine", "message": "unusable test selection; keeping initial tests" }),
            );
            keep(Vec::new())
        }
    }
}
