use super::{CompletionRequest, FinishReason, ModelResponse, Provider, ProviderError, Role, Usage};
use crate::tools::ToolCall;
use serde_json::{json, Map, Value};
use std::time::Duration;

const REQUEST_TIMEOUT: Duration = Duration::from_secs(600);

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(REQUEST_TIMEOUT))
        .http_status_as_error(false)
        .build()
        .into()
}

fn post(agent: &ureq::Agent, url: &str, headers: &[(&str, String)], body: &Value) -> Result<Value, ProviderError> {
    let mut req = agent.post(url).header("content-type", "application/json");
    for (k, v) in headers {
        req = req.header(*k, v.as_str());
    }
    let mut resp = req
        .send_json(body)
        .map_err(|e| ProviderError::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| ProviderError::Transport(e.to_string()))?;
    if !(200..300).contains(&status) {
        return Err(ProviderError::Status { status, body: text });
    }
    serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(e.to_string()))
}

/// Parses tool arguments the providers send as JSON text; unparseable text
/// is passed through as a string so the dispatcher can report it.
fn arguments_value(raw: &Value) -> Value {
    match raw {
        Value::String(s) => serde_json::from_str(s).unwrap_or_else(|_| raw.clone()),
        other => other.clone(),
    }
}

/// OpenAI chat-completions API, also used for Azure OpenAI deployments.
pub struct OpenAiProvider {
    name: String,
    base_url: String,
    api_key: String,
    azure_api_version: Option<String>,
    agent: ureq::Agent,
}

impl OpenAiProvider {
    pub fn openai(name: impl Into<String>, base_url: Option<String>, api_key: String) -> Self {
        OpenAiProvider {
            name: name.into(),
            base_url: base_url.unwrap_or_else(|| "https://api.openai.com/v1".into()),
            api_key,
            azure_api_version: None,
            agent: agent(),
        }
    }

    pub fn azure(name: impl Into<String>, base_url: String, api_key: String, api_version: String) -> Self {
        OpenAiProvider {
            name: name.into(),
            base_url,
            api_key,
            azure_api_version: Some(api_version),
            agent: agent(),
        }
    }

    fn url(&self, model: &str) -> String {
        let base = self.base_url.trim_end_matches('/');
        match &self.azure_api_version {
            Some(v) => format!("{base}/openai/deployments/{model}/chat/completions?api-version={v}"),
            None => format!("{base}/chat/completions"),
        }
    }

    pub fn request_body(request: &CompletionRequest<'_>) -> Value {
        let messages: Vec<Value> = request
            .conversation
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                    Role::Tool => "tool",
                };
                let mut msg = json!({ "role": role, "content": m.content });
                if !m.tool_calls.is_empty() {
                    msg["tool_calls"] = m
                        .tool_calls
                        .iter()
                        .map(|c| {
                            json!({
                                "id": c.call_id,
                                "type": "function",
                                "function": { "name": c.tool_name, "arguments": c.arguments.to_string() },
                            })
                        })
                        .collect();
                }
                if let Some(id) = &m.tool_call_id {
                    msg["tool_call_id"] = json!(id);
                }
                msg
            })
            .collect();
        let mut body = json!({
            "model": request.params.model,
            "messages": messages,
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_tokens,
        });
        if let Some(seed) = request.params.seed {
            body["seed"] = json!(seed);
        }
        if !request.tools.is_empty() {
            body["tools"] = request
                .tools
                .iter()
                .map(|t| {
                    json!({
                        "type": "function",
                        "function": { "name": t.name, "description": t.description, "parameters": t.parameters },
                    })
                })
                .collect();
        }
        body
    }

    pub fn parse_response(v: &Value) -> Result<ModelResponse, ProviderError> {
        let choice = v
            .pointer("/choices/0")
            .ok_or_else(|| ProviderError::Malformed("no choices".into()))?;
        let message = &choice["message"];
        let tool_calls: Vec<ToolCall> = message["tool_calls"]
            .as_array()
            .map(|calls| {
                calls
                    .iter()
                    .map(|c| ToolCall {
                        call_id: c["id"].as_str().unwrap_or_default().to_string(),
                        tool_name: c.pointer("/function/name").and_then(Value::as_str).unwrap_or_default().to_string(),
                        arguments: arguments_value(c.pointer("/function/arguments").unwrap_or(&Value::Null)),
                    })
                    .collect()
            })
            .unwrap_or_default();
        let finish_reason = match choice["finish_reason"].as_str() {
            Some("stop") => FinishReason::Stop,
            Some("tool_calls") | Some("function_call") => FinishReason::ToolCall,
            Some("length") => FinishReason::Length,
            _ if !tool_calls.is_empty() => FinishReason::ToolCall,
            _ => FinishReason::Error,
        };
        Ok(ModelResponse {
            content: message["content"].as_str().unwrap_or_default().to_string(),
            tool_calls,
            usage: Usage {
                prompt_tokens: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
                completion_tokens: v.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
            },
            finish_reason,
        })
    }
}

impl Provider for OpenAiProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn send(&self, request: &CompletionRequest<'_>) -> Result<ModelResponse, ProviderError> {
        let headers = match self.azure_api_version {
            Some(_) => vec![("api-key", self.api_key.clone())],
            None => vec![("authorization", format!("Bearer {}", self.api_key))],
        };
        let body = Self::request_body(request);
        let v = post(&self.agent, &self.url(&request.params.model), &headers, &body)?;
        Self::parse_response(&v)
    }
}

/// Anthropic messages API.
pub struct AnthropicProvider {
    name: String,
    base_url: String,
    api_key: String,
    agent: ureq::Agent,
}

impl AnthropicProvider {
    pub fn new(name: impl Into<String>, base_url: Option<String>, api_key: String) -> Self {
        AnthropicProvider {
            name: name.into(),
            base_url: base_url.unwrap_or_else(|| "https://api.anthropic.com".into()),
            api_key,
            agent: agent(),
        }
    }

    pub fn request_body(request: &CompletionRequest<'_>) -> Value {
        let mut system = Vec::new();
        let mut messages: Vec<Value> = Vec::new();
        for m in &request.conversation.messages {
            match m.role {
                Role::System => system.push(m.content.clone()),
                Role::User => messages.push(json!({
                    "role": "user",
                    "content": [{ "type": "text", "text": m.content }],
                })),
                Role::Assistant => {
                    let mut blocks = Vec::new();
                    if !m.content.is_empty() {
                        blocks.push(json!({ "type": "text", "text": m.content }));
                    }
                    for c in &m.tool_calls {
                        let input = match &c.arguments {
                            Value::Object(_) => c.arguments.clone(),
                            _ => Value::Object(Map::new()),
                        };
                        blocks.push(json!({ "type": "tool_use", "id": c.call_id, "name": c.tool_name, "input": input }));
                    }
                    messages.push(json!({ "role": "assistant", "content": blocks }));
                }
                Role::Tool => {
                    let block = json!({
                        "type": "tool_result",
                        "tool_use_id": m.tool_call_id.clone().unwrap_or_default(),
                        "content": m.content,
                    });
                    // consecutive tool results share one user turn
                    let merge = messages.last().is_some_and(|last| {
                        last["role"] == "user"
                            && last["content"]
                                .as_array()
                                .is_some_and(|b| b.iter().all(|x| x["type"] == "tool_result"))
                    });
                    if merge {
                        let last = messages.last_mut().expect("checked");
                        last["content"].as_array_mut().expect("array").push(block);
                    } else {
                        messages.push(json!({ "role": "user", "content": [block] }));
                    }
                }
            }
        }
        let mut body = json!({
            "model": request.params.model,
            "max_tokens": request.params.max_tokens,
            "temperature": request.params.temperature,
            "messages": messages,
        });
        if !system.is_empty() {
            body["system"] = json!(system.join("\n\n"));
        }
        if !request.tools.is_empty() {
            body["tools"] = request
                .tools
                .iter()
                .map(|t| json!({ "name": t.name, "description": t.description, "input_schema": t.parameters }))
                .collect();
        }
        body
    }

    pub fn parse_response(v: &Value) -> Result<ModelResponse, ProviderError> {
        let blocks = v["content"]
            .as_array()
            .ok_or_else(|| ProviderError::Malformed("no content blocks".into()))?;
        let mut content = String::new();
        let mut tool_calls = Vec::new();
        for b in blocks {
            match b["type"].as_str() {
                Some("text") => content.push_str(b["text"].as_str().unwrap_or_default()),
                Some("tool_use") => tool_calls.push(ToolCall {
                    call_id: b["id"].as_str().unwrap_or_default().to_string(),
                    tool_name: b["name"].as_str().unwrap_or_default().to_string(),
                    arguments: b["input"].clone(),
                }),
                _ => {}
            }
        }
        let finish_reason = match v["stop_reason"].as_str() {
            Some("end_turn") | Some("stop_sequence") => FinishReason::Stop,
            Some("tool_use") => FinishReason::ToolCall,
            Some("max_tokens") => FinishReason::Length,
            _ => FinishReason::Error,
        };
        Ok(ModelResponse {
            content,
            tool_calls,
            usage: Usage {
                prompt_tokens: v.pointer("/usage/input_tokens").and_then(Value::as_u64).unwrap_or(0),
                completion_tokens: v.pointer("/usage/output_tokens").and_then(Value::as_u64).unwrap_or(0),
            },
            finish_reason,
        })
    }
}

impl Provider for AnthropicProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn temperature_range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn send(&self, request: &CompletionRequest<'_>) -> Result<ModelResponse, ProviderError> {
        let url = format!("{}/v1/messages", self.base_url.trim_end_matches('/'));
        let headers = [
            ("x-api-key", self.api_key.clone()),
            ("anthropic-version", "2023-06-01".to_string()),
        ];
        let v = post(&self.agent, &url, &headers, &Self::request_body(request))?;
        Self::parse_response(&v)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Conversation, Message, ModelParams, ToolSpec};
    use super::*;

    fn sample() -> Conversation {
        let mut c = Conversation::new();
        c.push(Message::system("be careful"));
        c.push(Message::user("fix it"));
        c.push(Message::assistant(
            "looking",
            vec![
                ToolCall::new("c1", "bash", json!({"command": "ls"})),
                ToolCall::new("c2", "bash", json!({"command": "pwd"})),
            ],
        ));
        c.push(Message::tool("c1", "{\"stdout\":\"a\"}"));
        c.push(Message::tool("c2", "{\"stdout\":\"/r\"}"));
        c
    }

    fn tools() -> Vec<ToolSpec> {
        vec![ToolSpec {
            name: "bash".into(),
            description: "shell".into(),
            parameters: json!({"type": "object"}),
        }]
    }

    #[test]
    fn openai_body_shape() {
        let c = sample();
        let p = ModelParams { seed: Some(7), ..ModelParams::new("openai", "gpt", 1.0) };
        let t = tools();
        let body = OpenAiProvider::request_body(&CompletionRequest { conversation: &c, params: &p, tools: &t });
        assert_eq!(body["messages"][2]["tool_calls"][0]["function"]["arguments"], "{\"command\":\"ls\"}");
        assert_eq!(body["messages"][3]["tool_call_id"], "c1");
        assert_eq!(body["tools"][0]["function"]["name"], "bash");
        assert_eq!(body["seed"], 7);
    }

    #[test]
    fn openai_response_parsing() {
        let v = json!({
            "choices": [{ "message": { "content": null, "tool_calls": [
                { "id": "x", "type": "function", "function": { "name": "bash", "arguments": "{\"command\":\"ls\"}" } },
                { "id": "y", "type": "function", "function": { "name": "bash", "arguments": "{broken" } }
            ] }, "finish_reason": "tool_calls" }],
            "usage": { "prompt_tokens": 11, "completion_tokens": 3 }
        });
        let r = OpenAiProvider::parse_response(&v).unwrap();
        assert_eq!(r.finish_reason, FinishReason::ToolCall);
        assert_eq!(r.tool_calls[0].arguments, json!({"command": "ls"}));
        assert_eq!(r.tool_calls[1].arguments, json!("{broken"));
        assert_eq!(r.usage.prompt_tokens, 11);
    }

    #[test]
    fn anthropic_body_merges_tool_results() {
        let c = sample();
        let p = ModelParams::new("anthropic", "claude", 0.5);
        let t = tools();
        let body = AnthropicProvider::request_body(&CompletionRequest { conversation: &c, params: &p, tools: &t });
        assert_eq!(body["system"], "be careful");
        let msgs = body["messages"].as_array().unwrap();
        assert_eq!(msgs.len(), 3);
        assert_eq!(msgs[1]["content"][1]["type"], "tool_use");
        assert_eq!(msgs[2]["content"].as_array().unwrap().len(), 2);
        assert_eq!(body["tools"][0]["input_schema"]["type"], "object");
    }

    #[test]
    fn anthropic_response_parsing() {
        let v = json!({
            "content": [
                { "type": "text", "text": "ok " },
                { "type": "tool_use", "id": "t1", "name": "task_done", "input": { "summary": "done" } }
            ],
            "stop_reason": "tool_use",
            "usage": { "input_tokens": 5, "output_tokens": 2 }
        });
        let r = AnthropicProvider::parse_response(&v).unwrap();
        assert_eq!(r.content, "ok ");
        assert_eq!(r.tool_calls[0].tool_name, "task_done");
        assert_eq!(r.usage.completion_tokens, 2);
        assert!(AnthropicProvider::parse_response(&json!({})).is_err());
    }

    #[test]
    fn azure_url() {
        let p = OpenAiProvider::azure("az", "https://x.openai.azure.com/".into(), "k".into(), "2024-06-01".into());
        assert_eq!(
            p.url("dep"),
            "https://x.openai.azure.com/openai/deployments/dep/chat/completions?api-version=2024-06-01"
        );
    }
}
