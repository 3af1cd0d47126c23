//! Ordered, persisted record of one agent run.
//!
//! Files are JSON lines: a header object followed by one object per event.

mod lakeview;

pub use lakeview::{lakeview_summarize, step_pairs, Lakeview, StepSummary};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

pub const FORMAT: &str = "patchvote-trajectory/1";
pub const FILE_SUFFIX: &str = ".traj.jsonl";
const REDACTED: &str = "[REDACTED]";

const SECRET_KEYS: [&str; 8] = [
    "api_key",
    "apikey",
    "authorization",
    "x-api-key",
    "password",
    "secret",
    "access_token",
    "bearer",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Coder,
    Tester,
    Selector,
    Lakeview,
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AgentKind::Coder => "coder",
            AgentKind::Tester => "tester",
            AgentKind::Selector => "selector",
            AgentKind::Lakeview => "lakeview",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    LlmRequest,
    LlmResponse,
    ToolCall,
    ToolResult,
    Error,
    Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub index: usize,
    pub timestamp: String,
    pub kind: EventKind,
    pub body: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrity_warning: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_clock_ms: u64,
}

/// Source of event timestamps. A frozen clock makes files reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    System,
    Frozen(DateTime<Utc>),
}

impl Clock {
    /// A frozen clock at the Unix epoch.
    pub fn epoch() -> Self {
        Clock::Frozen(DateTime::<Utc>::UNIX_EPOCH)
    }

    fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Frozen(t) => *t,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryError {
    #[error("corrupt trajectory file at line {line}: {message}")]
    CorruptFile { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    run_id: String,
    agent_kind: AgentKind,
    event_count: usize,
    totals: Totals,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    metadata: Map<String, Value>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub run_id: String,
    pub agent_kind: AgentKind,
    pub metadata: Map<String, Value>,
    events: Vec<Event>,
    totals: Totals,
    clock: Clock,
    started: Instant,
    open_calls: HashSet<String>,
    pending_requests: usize,
    messages_recorded: usize,
}

impl PartialEq for Trajectory {
    fn eq(&self, other: &Self) -> bool {
        self.run_id == other.run_id
            && self.agent_kind == other.agent_kind
            && self.metadata == other.metadata
            && self.events == other.events
            && self.totals == other.totals
    }
}

impl Trajectory {
    pub fn new(run_id: impl Into<String>, agent_kind: AgentKind) -> Self {
        Self::with_clock(run_id, agent_kind, Clock::System)
    }

    pub fn with_clock(run_id: impl Into<String>, agent_kind: AgentKind, clock: Clock) -> Self {
        Trajectory {
            run_id: run_id.into(),
            agent_kind,
            metadata: Map::new(),
            events: Vec::new(),
            totals: Totals::default(),
            clock,
            started: Instant::now(),
            open_calls: HashSet::new(),
            pending_requests: 0,
            messages_recorded: 0,
        }
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn totals(&self) -> Totals {
        self.totals
    }

    /// Number of conversation messages already logged by request events.
    pub fn messages_recorded(&self) -> usize {
        self.messages_recorded
    }

    pub fn set_messages_recorded(&mut self, n: usize) {
        self.messages_recorded = n;
    }

    /// Appends an event and returns its index. Secrets in `body` are
    /// redacted; pairing violations are kept but flagged.
    pub fn record(&mut self, kind: EventKind, mut body: Value) -> usize {
        redact(&mut body);
        let warning = self.check(kind, &body);
        if kind == EventKind::LlmResponse {
            if let Some(u) = body.get("usage") {
                self.totals.prompt_tokens += u["prompt_tokens"].as_u64().unwrap_or(0);
                self.totals.completion_tokens += u["completion_tokens"].as_u64().unwrap_or(0);
            }
        }
        if self.clock == Clock::System {
            self.totals.wall_clock_ms = self.started.elapsed().as_millis() as u64;
        } else if kind == EventKind::ToolResult {
            // frozen clocks promise reproducible files
            if let Some(ms) = body.get_mut("elapsed_ms") {
                *ms = Value::from(0);
            }
        }
        let index = self.events.len();
        self.events.push(Event {
            index,
            timestamp: self.clock.now().to_rfc3339_opts(SecondsFormat::Millis, true),
            kind,
            body,
            integrity_warning: warning,
        });
        index
    }

    fn check(&mut self, kind: EventKind, body: &Value) -> Option<String> {
        match kind {
            EventKind::ToolCall => {
                let id = body["call_id"].as_str().unwrap_or_default().to_string();
                if !self.open_calls.insert(id.clone()) {
                    return Some(format!("duplicate call_id `{id}`"));
                }
                None
            }
            EventKind::ToolResult => {
                let id = body["call_id"].as_str().unwrap_or_default();
                (!self.open_calls.contains(id)).then(|| format!("tool_result for unknown call_id `{id}`"))
            }
            EventKind::LlmRequest => {
                self.pending_requests += 1;
                None
            }
            EventKind::LlmResponse => {
                if self.pending_requests == 0 {
                    return Some("llm_response without a preceding llm_request".into());
                }
                self.pending_requests -= 1;
                None
            }
            EventKind::Error | EventKind::Summary => None,
        }
    }

    pub fn integrity_warnings(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| e.integrity_warning.is_some())
    }

    /// Rebuilds the conversation by concatenating request deltas.
    pub fn messages(&self) -> Vec<Value> {
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::LlmRequest)
            .filter_map(|e| e.body["new_messages"].as_array())
            .flatten()
            .cloned()
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            format: FORMAT.into(),
            run_id: self.run_id.clone(),
            agent_kind: self.agent_kind,
            event_count: self.events.len(),
            totals: self.totals,
            metadata: self.metadata.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn persist(&self, path: &Path) -> Result<(), TrajectoryError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrajectoryError> {
        let f = std::fs::File::open(path)?;
        Self::from_reader(BufReader::new(f))
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TrajectoryError> {
        Self::from_reader(text.as_bytes())
    }

    fn from_reader(reader: impl BufRead) -> Result<Self, TrajectoryError> {
        let corrupt = |line: usize, message: String| TrajectoryError::CorruptFile { line, message };
        let mut lines = reader.lines().enumerate();
        let header: Header = match lines.next() {
            Some((_, l)) => serde_json::from_str(&l?).map_err(|e| corrupt(1, e.to_string()))?,
            None => return Err(corrupt(1, "missing header".into())),
        };
        if header.format != FORMAT {
            return Err(corrupt(1, format!("unsupported format `{}`", header.format)));
        }
        let mut t = Trajectory::with_clock(header.run_id, header.agent_kind, Clock::epoch());
        t.metadata = header.metadata;
        let mut last = 1;
        for (i, l) in lines {
            let line_no = i + 1;
            last = line_no;
            let l = l?;
            if l.trim().is_empty() {
                continue;
            }
            let event: Event = serde_json::from_str(&l).map_err(|e| corrupt(line_no, e.to_string()))?;
            if event.index != t.events.len() {
                return Err(corrupt(line_no, format!("expected event {}, found {}", t.events.len(), event.index)));
            }
            t.check(event.kind, &event.body);
            if event.kind == EventKind::LlmRequest {
                if let Some(n) = event.body["message_count"].as_u64() {
                    t.messages_recorded = n as usize;
                }
            }
            t.events.push(event);
        }
        if t.events.len() != header.event_count {
            return Err(corrupt(
                last + 1,
                format!("header declares {} events, file has {}", header.event_count, t.events.len()),
            ));
        }
        t.totals = header.totals;
        Ok(t)
    }
}

fn is_secret_key(key: &str) -> bool {
    let k = key.to_ascii_lowercase();
    SECRET_KEYS.contains(&k.as_str()) || k.ends_with("_api_key") || k.ends_with("_secret") || k.ends_with("_token")
}

/// Replaces the values of secret-looking keys, recursively.
pub fn redact(value: &mut Value) {
    match value {
        Value::Object(map) => {
            for (k, v) in map.iter_mut() {
                if is_secret_key(k) {
                    *v = Value::String(REDACTED.into());
                } else {
                    redact(v);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(redact),
        _ => {}
    }
}
