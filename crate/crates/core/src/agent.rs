//! The shared model/tool loop driven by the coder and selector agents.

use crate::llm::{Conversation, LlmClient, Message, ModelResponse, ProviderError, TokenBudget, ToolSpec};
use crate::tools::{ToolCall, Toolbox, TASK_DONE};
use crate::trajectory::{Clock, EventKind, Lakeview, Trajectory};
use serde_json::json;
use std::collections::HashSet;

/// What a response inspector asks the loop to do next.
pub enum Control {
    Continue,
    /// Stop with the given final text.
    Stop(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoopEnd {
    /// `task_done` was called; carries its summary.
    TaskDone(String),
    /// The inspector stopped the loop.
    Stopped(String),
    StepLimit,
    BudgetExhausted,
    Provider(ProviderError),
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub end: LoopEnd,
    /// Model calls made.
    pub steps: usize,
    pub conversation: Conversation,
}

pub struct AgentLoop<'a> {
    pub client: &'a LlmClient,
    pub tools: &'a [ToolSpec],
    pub max_steps: usize,
    /// User message sent when the model answers without calling a tool.
    pub nudge: &'a str,
}

impl AgentLoop<'_> {
    /// Runs until `task_done`, an inspector stop, or a limit. The inspector
    /// sees every response before its tool calls are executed.
    pub fn run(
        &self,
        mut conversation: Conversation,
        toolbox: &mut Toolbox,
        trajectory: &mut Trajectory,
        budget: &mut TokenBudget,
        lakeview: &Lakeview,
        inspect: &mut dyn FnMut(&ModelResponse, &Toolbox) -> Control,
    ) -> LoopOutcome {
        let mut seen_ids: HashSet<String> = HashSet::new();
        let mut steps = 0;
        let end = loop {
            if steps >= self.max_steps {
                break LoopEnd::StepLimit;
            }
            if budget.exhausted() {
                break LoopEnd::BudgetExhausted;
            }
            let response = match self.client.complete(&conversation, self.tools, trajectory, budget) {
                Ok(r) => r,
                Err(ProviderError::BudgetExceeded { .. }) => break LoopEnd::BudgetExhausted,
                Err(e) => break LoopEnd::Provider(e),
            };
            steps += 1;

            let calls: Vec<ToolCall> = response
                .tool_calls
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let mut c = c.clone();
                    if c.call_id.is_empty() || seen_ids.contains(&c.call_id) {
                        c.call_id = format!("auto-{steps}-{i}");
                    }
                    seen_ids.insert(c.call_id.clone());
                    c
                })
                .collect();
            conversation.push(Message::assistant(response.content.clone(), calls.clone()));

            let control = inspect(&response, toolbox);

            let mut done = None;
            for call in &calls {
                let call_event = trajectory.record(EventKind::ToolCall, json!(call));
                let mut result = toolbox.dispatch(call);
                if trajectory.clock() != Clock::System {
                    // the model sees this too, so it must not vary between runs
                    result.elapsed_ms = 0;
                }
                if call.tool_name == TASK_DONE && result.is_ok() && done.is_none() {
                    done = toolbox.completion().map(str::to_string);
                }
                let result_event = trajectory.record(EventKind::ToolResult, json!(result));
                lakeview.submit(trajectory, [call_event, result_event]);
                conversation.push(Message::tool(call.call_id.clone(), result.to_message_content()));
            }

            if let Control::Stop(text) = control {
                break LoopEnd::Stopped(text);
            }
            if let Some(summary) = done {
                break LoopEnd::TaskDone(summary);
            }
            if calls.is_empty() {
                conversation.push(Message::user(self.nudge));
            }
        };
        LoopOutcome { end, steps, conversation }
    }
}
