use super::{AgentKind, Clock, EventKind, Trajectory};
use crate::llm::{Conversation, LlmClient, Message, TokenBudget};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::HashMap;
use std::sync::mpsc::{self, Sender};
use std::thread::{self, JoinHandle};

const STEP_TEXT_LIMIT: usize = 4000;

const SYSTEM_PROMPT: &str = "You summarize one step of a software engineering agent. \
Reply with a single short sentence describing what the step did and what it found.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    /// Inclusive indices of the tool_call and tool_result events.
    pub event_range: [usize; 2],
    pub summary: String,
}

/// Index pairs (tool_call, tool_result) matched by call_id, in call order.
pub fn step_pairs(trajectory: &Trajectory) -> Vec<[usize; 2]> {
    let mut open: HashMap<&str, usize> = HashMap::new();
    let mut pairs = Vec::new();
    for e in trajectory.events() {
        let id = e.body["call_id"].as_str().unwrap_or_default();
        match e.kind {
            EventKind::ToolCall => {
                open.insert(id, e.index);
            }
            EventKind::ToolResult => {
                if let Some(start) = open.remove(id) {
                    pairs.push([start, e.index]);
                }
            }
            _ => {}
        }
    }
    pairs.sort();
    pairs
}

fn step_text(trajectory: &Trajectory, range: [usize; 2]) -> String {
    let ev = trajectory.events();
    let mut text = format!("Tool call: {}\nTool result: {}", ev[range[0]].body, ev[range[1]].body);
    if text.len() > STEP_TEXT_LIMIT {
        let mut cut = STEP_TEXT_LIMIT;
        while !text.is_char_boundary(cut) {
            cut -= 1;
        }
        text.truncate(cut);
        text.push_str(" [...]");
    }
    text
}

fn summarize_one(client: &LlmClient, run_id: &str, text: String) -> Result<String, String> {
    let mut conv = Conversation::new();
    conv.push(Message::system(SYSTEM_PROMPT));
    conv.push(Message::user(text));
    let mut scratch = Trajectory::with_clock(format!("{run_id}-lakeview"), AgentKind::Lakeview, Clock::epoch());
    client
        .complete(&conv, &[], &mut scratch, &mut TokenBudget::unlimited())
        .map(|r| r.content.trim().to_string())
        .map_err(|e| e.to_string())
}

fn append(trajectory: &mut Trajectory, range: [usize; 2], outcome: Result<String, String>) -> Option<StepSummary> {
    match outcome {
        Ok(summary) => {
            let s = StepSummary { event_range: range, summary };
            trajectory.record(EventKind::Summary, json!(s));
            Some(s)
        }
        Err(message) => {
            log::warn!("lakeview summary failed for events {range:?}: {message}");
            trajectory.record(
                EventKind::Error,
                json!({ "source": "lakeview", "event_range": range, "message": message }),
            );
            None
        }
    }
}

/// Summarizes every tool step synchronously and appends summary events.
/// With no client this is a no-op. Provider failures become error events.
pub fn lakeview_summarize(trajectory: &mut Trajectory, client: Option<&LlmClient>) -> Vec<StepSummary> {
    let Some(client) = client else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for range in step_pairs(trajectory) {
        let outcome = summarize_one(client, &trajectory.run_id, step_text(trajectory, range));
        out.extend(append(trajectory, range, outcome));
    }
    out
}

type Outcome = ([usize; 2], Result<String, String>);

/// Background summarizer. Steps are submitted without blocking; results are
/// appended to the trajectory by its owner in [`Lakeview::finish`].
pub struct Lakeview {
    tx: Option<Sender<(String, [usize; 2], String)>>,
    worker: Option<JoinHandle<Vec<Outcome>>>,
}

impl Lakeview {
    pub fn disabled() -> Self {
        Lakeview { tx: None, worker: None }
    }

    pub fn spawn(client: LlmClient) -> Self {
        let (tx, rx) = mpsc::channel::<(String, [usize; 2], String)>();
        let worker = thread::spawn(move || {
            rx.into_iter()
                .map(|(run_id, range, text)| (range, summarize_one(&client, &run_id, text)))
                .collect()
        });
        Lakeview { tx: Some(tx), worker: Some(worker) }
    }

    pub fn enabled(&self) -> bool {
        self.tx.is_some()
    }

    /// Queues the step made of events `range` for summarization.
    pub fn submit(&self, trajectory: &Trajectory, range: [usize; 2]) {
        if let Some(tx) = &self.tx {
            let _ = tx.send((trajectory.run_id.clone(), range, step_text(trajectory, range)));
        }
    }

    /// Waits for outstanding summaries and appends them in step order.
    pub fn finish(mut self, trajectory: &mut Trajectory) -> Vec<StepSummary> {
        drop(self.tx.take());
        let Some(worker) = self.worker.take() else {
            return Vec::new();
        };
        let outcomes = worker.join().unwrap_or_else(|_| {
            log::warn!("lakeview worker panicked");
            Vec::new()
        });
        outcomes
            .into_iter()
            .filter_map(|(range, outcome)| append(trajectory, range, outcome))
            .collect()
    }
}

impl Drop for Lakeview {
    fn drop(&mut self) {
        drop(self.tx.take());
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
