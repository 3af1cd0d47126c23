use crate::exec::{run_shell, shell_quote, CommandOutput};
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParserKind {
    /// JUnit XML read from stdout or from `report_file`.
    JunitXml,
    /// Test Anything Protocol on stdout.
    Tap,
    /// `discover_cmd` prints one test id per line; each test's verdict is
    /// the exit code of `run_one_cmd`.
    Exitcode,
}

/// How to run a repository's tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunnerConfig {
    pub discover_cmd: String,
    /// Command for a single test; `{test_id}` is replaced by the quoted id.
    pub run_one_cmd: String,
    pub parser: ParserKind,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Report path relative to the repository, for `junit-xml`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_file: Option<String>,
    /// Id template for `junit-xml` test cases; `{classname}` and `{name}`.
    #[serde(default = "default_junit_id")]
    pub junit_id: String,
    /// Tests of one patch may run concurrently.
    #[serde(default)]
    pub independent: bool,
}

fn default_timeout() -> f64 {
    120.0
}

fn default_junit_id() -> String {
    "{classname}::{name}".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Error,
    Skip,
}

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("test suite produced no parseable results: {0}")]
    SuiteCrash(String),
    #[error("runner i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl RunnerConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.001))
    }

    fn run(&self, cmd: &str, repo: &Path) -> Result<CommandOutput, RunnerError> {
        if let Some(report) = &self.report_file {
            let _ = std::fs::remove_file(repo.join(report));
        }
        Ok(run_shell(cmd, repo, self.timeout())?)
    }

    fn junit_text(&self, repo: &Path, out: &CommandOutput) -> String {
        match &self.report_file {
            Some(report) => std::fs::read_to_string(repo.join(report)).unwrap_or_default(),
            None => out.stdout.clone(),
        }
    }

    /// Runs the whole suite once and returns every reported test in
    /// report order.
    pub fn run_suite(&self, repo: &Path) -> Result<Vec<(String, Verdict)>, RunnerError> {
        let out = self.run(&self.discover_cmd, repo)?;
        if out.timed_out {
            return Err(RunnerError::SuiteCrash("discovery timed out".into()));
        }
        match self.parser {
            ParserKind::Tap => parse_tap(&out.stdout)
                .or_else(|| out.success().then(Vec::new))
                .ok_or_else(|| RunnerError::SuiteCrash(crash_detail(&out))),
            ParserKind::JunitXml => parse_junit(&self.junit_text(repo, &out), &self.junit_id)
                .ok_or_else(|| RunnerError::SuiteCrash(crash_detail(&out))),
            ParserKind::Exitcode => {
                if !out.success() {
                    return Err(RunnerError::SuiteCrash(crash_detail(&out)));
                }
                let ids: Vec<String> = out
                    .stdout
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(str::to_string)
                    .collect();
                let mut results = Vec::with_capacity(ids.len());
                for id in ids {
                    let v = self.run_one(repo, &id)?;
                    results.push((id, v));
                }
                Ok(results)
            }
        }
    }

    /// Runs a single test. Timeouts count as failures; a run whose output
    /// does not mention the test is an error unless the exit code decides.
    pub fn run_one(&self, repo: &Path, test_id: &str) -> Result<Verdict, RunnerError> {
        let cmd = self.run_one_cmd.replace("{test_id}", &shell_quote(test_id));
        let out = self.run(&cmd, repo)?;
        if out.timed_out {
            return Ok(Verdict::Fail);
        }
        let found = match self.parser {
            ParserKind::Exitcode => None,
            ParserKind::Tap => parse_tap(&out.stdout).map(|r| lookup(&r, test_id)),
            ParserKind::JunitXml => parse_junit(&self.junit_text(repo, &out), &self.junit_id).map(|r| lookup(&r, test_id)),
        };
        Ok(match found.flatten() {
            Some(v) => v,
            None => match out.exit_code {
                Some(0) => Verdict::Pass,
                Some(_) if self.parser == ParserKind::Exitcode => Verdict::Fail,
                _ => Verdict::Error,
            },
        })
    }
}

fn lookup(results: &[(String, Verdict)], id: &str) -> Option<Verdict> {
    let mut verdicts = results.iter().filter(|(t, _)| t == id).map(|(_, v)| *v);
    let first = verdicts.next()?;
    // a test reported more than once counts as its worst outcome
    Some(verdicts.fold(first, |a, b| if a == Verdict::Pass || a == Verdict::Skip { b } else { a }))
}

fn crash_detail(out: &CommandOutput) -> String {
    let tail: String = out.stderr.chars().rev().take(400).collect::<Vec<_>>().into_iter().rev().collect();
    format!("exit code {:?}; stderr tail: {}", out.exit_code, tail.trim())
}

/// Parses TAP test lines. Returns `None` when the text has neither a plan
/// nor any test line.
pub fn parse_tap(text: &str) -> Option<Vec<(String, Verdict)>> {
    let mut results = Vec::new();
    let mut saw_plan = false;
    for line in text.lines() {
        let line = line.trim_end();
        if line.starts_with("1..") {
            saw_plan = true;
            continue;
        }
        let (ok, rest) = if let Some(r) = line.strip_prefix("not ok") {
            (false, r)
        } else if let Some(r) = line.strip_prefix("ok") {
            (true, r)
        } else {
            continue;
        };
        if !(rest.is_empty() || rest.starts_with(' ')) {
            continue;
        }
        let rest = rest.trim_start();
        let rest = rest.trim_start_matches(|c: char| c.is_ascii_digit()).trim_start();
        let rest = rest.strip_prefix('-').unwrap_or(rest).trim_start();
        let (desc, directive) = match rest.find(" # ") {
            Some(i) => (&rest[..i], rest[i + 3..].trim().to_ascii_uppercase()),
            None => (rest, String::new()),
        };
        let verdict = if directive.starts_with("SKIP") || directive.starts_with("TODO") {
            Verdict::Skip
        } else if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        results.push((desc.trim().to_string(), verdict));
    }
    (saw_plan || !results.is_empty()).then_some(results)
}

/// Parses JUnit XML test cases. Returns `None` for malformed XML or a
/// document without any `testsuite`/`testsuites`/`testcase` element.
pub fn parse_junit(text: &str, id_template: &str) -> Option<Vec<(String, Verdict)>> {
    let mut reader = Reader::from_str(text);
    let mut results = Vec::new();
    let mut saw_suite = false;
    let mut current: Option<(String, Verdict)> = None;
    let attr = |e: &BytesStart, name: &[u8]| -> String {
        e.attributes()
            .flatten()
            .find(|a| a.key.as_ref() == name)
            .and_then(|a| a.unescape_value().ok().map(|v| v.into_owned()))
            .unwrap_or_default()
    };
    let case_id = |e: &BytesStart| -> String {
        let classname = attr(e, b"classname");
        let name = attr(e, b"name");
        if classname.is_empty() {
            name
        } else {
            id_template.replace("{classname}", &classname).replace("{name}", &name)
        }
    };
    let mark = |current: &mut Option<(String, Verdict)>, tag: &[u8]| {
        if let Some((_, v)) = current {
            *v = match tag {
                b"failure" => Verdict::Fail,
                b"error" if *v != Verdict::Fail => Verdict::Error,
                b"skipped" if *v == Verdict::Pass => Verdict::Skip,
                _ => *v,
            };
        }
    };
    loop {
        match reader.read_event() {
            Ok(Event::Start(e)) => match e.name().as_ref() {
                b"testsuite" | b"testsuites" => saw_suite = true,
                b"testcase" => current = Some((case_id(&e), Verdict::Pass)),
                tag => mark(&mut current, tag),
            },
            Ok(Event::Empty(e)) => match e.name().as_ref() {
                b"testsuite" | b"testsuites" => saw_suite = true,
                b"testcase" => results.push((case_id(&e), Verdict::Pass)),
                tag => mark(&mut current, tag),
            },
            Ok(Event::End(e)) if e.name().as_ref() == b"testcase" => {
                results.extend(current.take());
            }
            Ok(Event::Eof) => break,
            Ok(_) => {}
            Err(_) => return None,
        }
    }
    (saw_suite || !results.is_empty()).then_some(results)
}
