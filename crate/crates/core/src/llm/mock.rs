use super::{CompletionRequest, ModelResponse, Provider, ProviderError};
use crate::trajectory::{EventKind, Trajectory};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Responses are returned in transcript order.
    Sequence,
    /// Responses are looked up by [`request_key`] of the request.
    Keyed,
}

/// One transcript entry: a response, optionally tagged with the request key
/// it answers in keyed mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(flatten)]
    pub response: ModelResponse,
}

/// Hex SHA-256 of the newest user or tool message content.
pub fn request_key(request: &CompletionRequest<'_>) -> String {
    let input = request.conversation.last_input().unwrap_or_default();
    hex::encode(Sha256::digest(input.as_bytes()))
}

/// Deterministic scripted provider for tests and replay.
pub struct MockProvider {
    name: String,
    mode: MatchMode,
    queue: Mutex<VecDeque<ModelResponse>>,
    keyed: HashMap<String, ModelResponse>,
    served: AtomicUsize,
}

impl MockProvider {
    pub fn sequence(name: impl Into<String>, responses: Vec<ModelResponse>) -> Self {
        MockProvider {
            name: name.into(),
            mode: MatchMode::Sequence,
            queue: Mutex::new(responses.into()),
            keyed: HashMap::new(),
            served: AtomicUsize::new(0),
        }
    }

    /// Keyed responses given as (key, response) pairs.
    pub fn keyed(name: impl Into<String>, entries: Vec<(String, ModelResponse)>) -> Self {
        MockProvider {
            name: name.into(),
            mode: MatchMode::Keyed,
            queue: Mutex::new(VecDeque::new()),
            keyed: entries.into_iter().collect(),
            served: AtomicUsize::new(0),
        }
    }

    /// Like [`MockProvider::keyed`], hashing the literal request text.
    pub fn keyed_by_text(name: impl Into<String>, entries: Vec<(&str, ModelResponse)>) -> Self {
        let entries = entries
            .into_iter()
            .map(|(text, r)| (hex::encode(Sha256::digest(text.as_bytes())), r))
            .collect();
        Self::keyed(name, entries)
    }

    pub fn from_records(name: impl Into<String>, records: Vec<MockRecord>, mode: MatchMode) -> Result<Self, ProviderError> {
        match mode {
            MatchMode::Sequence => Ok(Self::sequence(name, records.into_iter().map(|r| r.response).collect())),
            MatchMode::Keyed => {
                let mut entries = Vec::with_capacity(records.len());
                for r in records {
                    let key = r
                        .key
                        .ok_or_else(|| ProviderError::InvalidRequest("keyed transcript entry without `key`".into()))?;
                    entries.push((key, r.response));
                }
                Ok(Self::keyed(name, entries))
            }
        }
    }

    /// Reads a transcript: a JSON array of response records.
    pub fn from_file(name: impl Into<String>, path: &Path, mode: MatchMode) -> Result<Self, ProviderError> {
        let records = load_transcript(path)?;
        Self::from_records(name, records, mode)
    }

    /// Replays the successful responses recorded in a trajectory, in order.
    pub fn from_trajectory(name: impl Into<String>, trajectory: &Trajectory) -> Self {
        let responses = trajectory
            .events()
            .iter()
            .filter(|e| e.kind == EventKind::LlmResponse)
            .filter_map(|e| e.body.get("response"))
            .filter_map(|v| serde_json::from_value(v.clone()).ok())
            .collect();
        Self::sequence(name, responses)
    }

    pub fn served(&self) -> usize {
        self.served.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> usize {
        match self.mode {
            MatchMode::Sequence => self.queue.lock().expect("mock lock").len(),
            MatchMode::Keyed => self.keyed.len(),
        }
    }
}

pub fn load_transcript(path: &Path) -> Result<Vec<MockRecord>, ProviderError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ProviderError::InvalidRequest(format!("cannot read transcript {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| ProviderError::InvalidRequest(format!("bad transcript {}: {e}", path.display())))
}

impl Provider for MockProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn send(&self, request: &CompletionRequest<'_>) -> Result<ModelResponse, ProviderError> {
        let response = match self.mode {
            MatchMode::Sequence => self
                .queue
                .lock()
                .expect("mock lock")
                .pop_front()
                .ok_or_else(|| ProviderError::ScriptExhausted(self.served()))?,
            MatchMode::Keyed => {
                let key = request_key(request);
                self.keyed.get(&key).cloned().ok_or(ProviderError::KeyMiss(key))?
            }
        };
        self.served.fetch_add(1, Ordering::SeqCst);
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Conversation, FinishReason, LlmClient, Message, ModelParams, TokenBudget};
    use super::*;
    use crate::tools::ToolCall;
    use crate::trajectory::AgentKind;
    use serde_json::json;
    use std::sync::Arc;

    fn ask(p: Arc<MockProvider>, text: &str) -> Result<ModelResponse, ProviderError> {
        let mut c = Conversation::new();
        c.push(Message::user(text));
        let client = LlmClient::new(p, ModelParams::new("mock", "m", 1.0));
        client.complete(&c, &[], &mut Trajectory::new("t", AgentKind::Coder), &mut TokenBudget::unlimited())
    }

    #[test]
    fn scripted_text() {
        let p = Arc::new(MockProvider::sequence("mock", vec![ModelResponse::text("PATCH_READY")]));
        let r = ask(p, "go").unwrap();
        assert_eq!(r.content, "PATCH_READY");
        assert_eq!(r.finish_reason, FinishReason::Stop);
    }

    #[test]
    fn scripted_tool_call() {
        let call = ToolCall::new("c1", "bash", json!({"command": "ls"}));
        let p = Arc::new(MockProvider::sequence("mock", vec![ModelResponse::calls("", vec![call])]));
        assert_eq!(ask(p, "go").unwrap().tool_calls.len(), 1);
    }

    #[test]
    fn sequence_order_and_exhaustion() {
        let p = Arc::new(MockProvider::sequence(
            "mock",
            vec![ModelResponse::text("1"), ModelResponse::text("2"), ModelResponse::text("3")],
        ));
        let got: Vec<_> = (0..3).map(|_| ask(p.clone(), "x").unwrap().content).collect();
        assert_eq!(got, ["1", "2", "3"]);
        assert_eq!(ask(p, "x").unwrap_err(), ProviderError::ScriptExhausted(3));
    }

    #[test]
    fn keyed_is_deterministic() {
        let p = Arc::new(MockProvider::keyed_by_text("mock", vec![("same", ModelResponse::text("A"))]));
        assert_eq!(ask(p.clone(), "same").unwrap().content, "A");
        assert_eq!(ask(p.clone(), "same").unwrap().content, "A");
        assert_eq!(ask(p, "other").unwrap_err().code(), "key_miss");
    }

    #[test]
    fn transcript_file_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        std::fs::write(
            &path,
            r#"[{"content": "hi", "finish_reason": "stop"},
                {"content": "", "tool_calls": [{"call_id": "1", "tool_name": "task_done", "arguments": {"summary": "s"}}],
                 "usage": {"prompt_tokens": 3, "completion_tokens": 4}, "finish_reason": "tool_call"}]"#,
        )
        .unwrap();
        let p = MockProvider::from_file("mock", &path, MatchMode::Sequence).unwrap();
        assert_eq!(p.remaining(), 2);
    }
}
