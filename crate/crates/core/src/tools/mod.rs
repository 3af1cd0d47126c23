//! Agent tools behind a JSON call/result protocol.
//!
//! Every call names a tool and carries a JSON object of arguments; every
//! result is a single JSON document with `call_id`, `status`, `payload` and
//! `elapsed_ms`. Failures never abort the caller: they come back as
//! `status = "error"` with a `reason` code in the payload so the model can
//! recover.

mod file_edit;
mod sandbox;
mod shell;

pub use sandbox::{Limits, Sandbox, SandboxError};

use crate::llm::ToolSpec;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::time::Instant;

pub const FILE_EDIT: &str = "file_edit";
pub const BASH: &str = "bash";
pub const SEQUENTIAL_THINKING: &str = "sequential_thinking";
pub const TASK_DONE: &str = "task_done";

pub const TOOL_NAMES: [&str; 4] = [FILE_EDIT, BASH, SEQUENTIAL_THINKING, TASK_DONE];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_id: String,
    pub tool_name: String,
    pub arguments: Value,
}

impl ToolCall {
    pub fn new(call_id: impl Into<String>, tool_name: impl Into<String>, arguments: Value) -> Self {
        ToolCall {
            call_id: call_id.into(),
            tool_name: tool_name.into(),
            arguments,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call_id: String,
    pub status: ToolStatus,
    pub payload: Value,
    pub elapsed_ms: u64,
}

impl ToolResult {
    pub fn ok(call_id: &str, payload: Value) -> Self {
        ToolResult {
            call_id: call_id.to_string(),
            status: ToolStatus::Ok,
            payload,
            elapsed_ms: 0,
        }
    }

    /// Error result; `extra` fields are merged next to `reason` and `message`.
    pub fn error(call_id: &str, reason: &str, message: impl Into<String>, extra: Value) -> Self {
        let mut payload = Map::new();
        payload.insert("reason".into(), Value::String(reason.to_string()));
        payload.insert("message".into(), Value::String(message.into()));
        if let Value::Object(map) = extra {
            payload.extend(map);
        }
        ToolResult {
            call_id: call_id.to_string(),
            status: ToolStatus::Error,
            payload: Value::Object(payload),
            elapsed_ms: 0,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ToolStatus::Ok
    }

    pub fn reason(&self) -> Option<&str> {
        self.payload.get("reason").and_then(Value::as_str)
    }

    /// Text handed back to the model as the tool message content.
    pub fn to_message_content(&self) -> String {
        serde_json::to_string(self).expect("tool results serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thought {
    pub thought: String,
    pub thought_number: u32,
    pub total_thoughts: u32,
    pub next_thought_needed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revises: Option<u32>,
}

/// The tools available to one agent run, bound to its sandbox.
pub struct Toolbox {
    sandbox: Sandbox,
    thoughts: Vec<Thought>,
    done: Option<String>,
}

impl Toolbox {
    pub fn new(sandbox: Sandbox) -> Self {
        Toolbox {
            sandbox,
            thoughts: Vec::new(),
            done: None,
        }
    }

    pub fn sandbox(&self) -> &Sandbox {
        &self.sandbox
    }

    pub fn sandbox_mut(&mut self) -> &mut Sandbox {
        &mut self.sandbox
    }

    pub fn into_sandbox(self) -> Sandbox {
        self.sandbox
    }

    pub fn thoughts(&self) -> &[Thought] {
        &self.thoughts
    }

    /// Summary passed to `task_done`, once it has been called.
    pub fn completion(&self) -> Option<&str> {
        self.done.as_deref()
    }

    /// Routes a call by tool name.
    pub fn dispatch(&mut self, call: &ToolCall) -> ToolResult {
        let started = Instant::now();
        let mut result = match call.tool_name.as_str() {
            FILE_EDIT => match parse_args(call) {
                Ok(args) => file_edit::run(&self.sandbox, &call.call_id, args),
                Err(r) => r,
            },
            BASH => match parse_args::<BashArgs>(call) {
                Ok(args) => self.bash(&call.call_id, &args.command),
                Err(r) => r,
            },
            SEQUENTIAL_THINKING => match parse_args(call) {
                Ok(args) => self.sequential_thinking(&call.call_id, args),
                Err(r) => r,
            },
            TASK_DONE => match parse_args::<TaskDoneArgs>(call) {
                Ok(args) => self.task_done(&call.call_id, args.summary),
                Err(r) => r,
            },
            other => ToolResult::error(
                &call.call_id,
                "unknown_tool",
                format!("no tool named `{other}`"),
                json!({ "available": TOOL_NAMES }),
            ),
        };
        result.elapsed_ms = started.elapsed().as_millis() as u64;
        result
    }

    pub fn bash(&mut self, call_id: &str, command: &str) -> ToolResult {
        if command.trim().is_empty() {
            return ToolResult::error(call_id, "bad_arguments", "command is empty", Value::Null);
        }
        self.sandbox.bash(call_id, command)
    }

    pub fn file_edit(&self, call_id: &str, args: Value) -> ToolResult {
        match serde_json::from_value(args) {
            Ok(args) => file_edit::run(&self.sandbox, call_id, args),
            Err(e) => ToolResult::error(call_id, "bad_arguments", e.to_string(), Value::Null),
        }
    }

    pub fn sequential_thinking(&mut self, call_id: &str, thought: Thought) -> ToolResult {
        if thought.thought_number == 0 {
            return ToolResult::error(
                call_id,
                "bad_arguments",
                "thought_number must be at least 1",
                Value::Null,
            );
        }
        if let Some(r) = thought.revises {
            if r == 0 || r >= thought.thought_number {
                return ToolResult::error(
                    call_id,
                    "bad_arguments",
                    "revises must name an earlier thought",
                    Value::Null,
                );
            }
        }
        let payload = json!({
            "thought_number": thought.thought_number,
            "total_thoughts": thought.total_thoughts.max(thought.thought_number),
            "next_thought_needed": thought.next_thought_needed,
            "revises": thought.revises,
            "history_length": self.thoughts.len() + 1,
        });
        self.thoughts.push(thought);
        ToolResult::ok(call_id, payload)
    }

    pub fn task_done(&mut self, call_id: &str, summary: String) -> ToolResult {
        if self.done.is_some() {
            return ToolResult::ok(
                call_id,
                json!({ "done": true, "warning": "task_already_done", "summary": self.done }),
            );
        }
        let payload = json!({ "done": true, "summary": summary });
        self.done = Some(summary);
        ToolResult::ok(call_id, payload)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BashArgs {
    command: String,
}

#[derive(Deserialize)]
struct TaskDoneArgs {
    #[serde(default)]
    summary: String,
}

fn parse_args<T: serde::de::DeserializeOwned>(call: &ToolCall) -> Result<T, ToolResult> {
    let args = match &call.arguments {
        Value::Object(_) => call.arguments.clone(),
        // some providers send arguments as a JSON-encoded string
        Value::String(s) => serde_json::from_str(s).map_err(|e| {
            ToolResult::error(&call.call_id, "bad_arguments", e.to_string(), Value::Null)
        })?,
        Value::Null => Value::Object(Map::new()),
        _ => {
            return Err(ToolResult::error(
                &call.call_id,
                "bad_arguments",
                "arguments must be a JSON object",
                Value::Null,
            ))
        }
    };
    serde_json::from_value(args)
        .map_err(|e| ToolResult::error(&call.call_id, "bad_arguments", e.to_string(), Value::Null))
}

/// JSON schemas advertised to the model for each tool.
pub fn tool_specs() -> Vec<ToolSpec> {
    vec![
        ToolSpec {
            name: FILE_EDIT.into(),
            description: "View files and directories, create files, or replace one exact occurrence of a string in a file. Paths are relative to the repository root.".into(),
            parameters: json!({
                "type": "object",
                "properties": {
                    "action": { "type": "string", "enum": ["view", "create", "str_replace"] },
                    "path": { "type": "string" },
                    "view_range": { "type": "array", "items": { "type": "integer" }, "minItems": 2, "maxItems": 2 },
                    "content": { "type": "string" },
                    "old_str": { "type": "string" },
                    "new_str": { "type": "string" }
                },
                "required": ["action", "path"]
            }),
        },
        ToolSpec {
            name: BASH.into(),
            description: "Run a command in a persistent bash session rooted at the repository. Working directory and environment persist between calls.".into(),
            parameters: json!({
                "type": "object",
                "properties": { "command": { "type": "string" } },
                "required": ["command"]
            }),
        },
        ToolSpec {
            name: SEQUENTIAL_THINKING.into(),
            description: "Record one step of structured reasoning. Thoughts may revise earlier thoughts.".into(),
            parameters: json!({
                "type": "object",
                "properties": {
                    "thought": { "type": "string" },
                    "thought_number": { "type": "integer", "minimum": 1 },
                    "total_thoughts": { "type": "integer", "minimum": 1 },
                    "next_thought_needed": { "type": "boolean" },
                    "revises": { "type": "integer", "minimum": 1 }
                },
                "required": ["thought", "thought_number", "total_thoughts", "next_thought_needed"]
            }),
        },
        ToolSpec {
            name: TASK_DONE.into(),
            description: "Signal that the task is complete and give a commit-message style summary.".into(),
            parameters: json!({
                "type": "object",
                "properties": { "summary": { "type": "string" } },
                "required": ["summary"]
            }),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toolbox() -> (tempfile::TempDir, Toolbox) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("two.txt"), "a\nb\n").unwrap();
        let sb = Sandbox::from_dir(dir.path(), Limits::default()).unwrap();
        (dir, Toolbox::new(sb))
    }

    #[test]
    fn unknown_tool_is_an_error_result() {
        let (_d, mut tb) = toolbox();
        let r = tb.dispatch(&ToolCall::new("c1", "webcam", json!({})));
        assert_eq!(r.status, ToolStatus::Error);
        assert_eq!(r.reason(), Some("unknown_tool"));
    }

    #[test]
    fn malformed_arguments() {
        let (_d, mut tb) = toolbox();
        let r = tb.dispatch(&ToolCall::new("c1", BASH, json!({ "cmd": "ls" })));
        assert_eq!(r.reason(), Some("bad_arguments"));
        let r = tb.dispatch(&ToolCall::new("c2", BASH, json!([1, 2])));
        assert_eq!(r.reason(), Some("bad_arguments"));
        let r = tb.dispatch(&ToolCall::new("c3", FILE_EDIT, Value::String("{oops".into())));
        assert_eq!(r.reason(), Some("bad_arguments"));
    }

    #[test]
    fn dispatch_matches_direct_call() {
        let (_d, mut tb) = toolbox();
        let via = tb.dispatch(&ToolCall::new("c1", BASH, json!({ "command": "echo same" })));
        let direct = tb.bash("c1", "echo same");
        assert_eq!(via.payload, direct.payload);
        assert_eq!(via.status, direct.status);
    }

    #[test]
    fn string_encoded_arguments_accepted() {
        let (_d, mut tb) = toolbox();
        let r = tb.dispatch(&ToolCall::new("c1", BASH, Value::String(r#"{"command":"echo hi"}"#.into())));
        assert!(r.is_ok());
        assert_eq!(r.payload["stdout"], "hi\n");
    }

    #[test]
    fn sequential_thinking_rules() {
        let (_d, mut tb) = toolbox();
        let first = tb.dispatch(&ToolCall::new(
            "t1",
            SEQUENTIAL_THINKING,
            json!({"thought": "look at f", "thought_number": 1, "total_thoughts": 3, "next_thought_needed": true}),
        ));
        assert!(first.is_ok());
        let rev = tb.dispatch(&ToolCall::new(
            "t2",
            SEQUENTIAL_THINKING,
            json!({"thought": "no, g", "thought_number": 3, "total_thoughts": 3, "next_thought_needed": false, "revises": 2}),
        ));
        assert!(rev.is_ok());
        assert_eq!(rev.payload["revises"], 2);
        assert_eq!(tb.thoughts()[1].revises, Some(2));
        let zero = tb.dispatch(&ToolCall::new(
            "t3",
            SEQUENTIAL_THINKING,
            json!({"thought": "x", "thought_number": 0, "total_thoughts": 1, "next_thought_needed": false}),
        ));
        assert_eq!(zero.reason(), Some("bad_arguments"));
        assert_eq!(tb.thoughts().len(), 2);
    }

    #[test]
    fn task_done_once() {
        let (_d, mut tb) = toolbox();
        let r = tb.dispatch(&ToolCall::new("d1", TASK_DONE, json!({"summary": "fixed off-by-one"})));
        assert!(r.is_ok());
        assert_eq!(tb.completion(), Some("fixed off-by-one"));
        let again = tb.dispatch(&ToolCall::new("d2", TASK_DONE, json!({"summary": "other"})));
        assert_eq!(again.payload["warning"], "task_already_done");
        assert_eq!(tb.completion(), Some("fixed off-by-one"));
    }

    #[test]
    fn empty_summary_ok() {
        let (_d, mut tb) = toolbox();
        let r = tb.dispatch(&ToolCall::new("d1", TASK_DONE, json!({"summary": ""})));
        assert!(r.is_ok());
        assert_eq!(tb.completion(), Some(""));
    }

    #[test]
    fn results_round_trip_json() {
        let (_d, mut tb) = toolbox();
        for call in [
            ToolCall::new("a", BASH, json!({"command": "printf 'x\\ty'"})),
            ToolCall::new("b", FILE_EDIT, json!({"action": "view", "path": "two.txt"})),
            ToolCall::new("c", "nope", json!({})),
        ] {
            let r = tb.dispatch(&call);
            let text = serde_json::to_string(&r).unwrap();
            let back: ToolResult = serde_json::from_str(&text).unwrap();
            assert_eq!(back, r);
            let v: Value = serde_json::from_str(&text).unwrap();
            for key in ["call_id", "status", "payload", "elapsed_ms"] {
                assert!(v.get(key).is_some(), "missing {key}");
            }
        }
    }
}
