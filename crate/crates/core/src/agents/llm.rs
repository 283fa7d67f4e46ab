//! Planner backend that asks a chat-completion endpoint for each action.
//!
//! Any transport error, malformed reply or invalid action yields the fixed
//! policy's action plus a `planner fallback` note.

use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::planner::{allowed_actions, deterministic_action, Planner, PlannerAction, PlannerReply, SessionView};
use super::AgentRole;

pub const ENDPOINT_VAR: &str = "OOC_LLM_ENDPOINT";
pub const API_KEY_VAR: &str = "OOC_LLM_API_KEY";
/// Optional model name sent with each request.
pub const MODEL_VAR: &str = "OOC_LLM_MODEL";
pub const REQUEST_TIMEOUT: Duration = Duration::from_secs(30);
/// Attempts after the first failed transport call.
pub const RETRIES: usize = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed reply: {0}")]
    Malformed(String),
    #[error("{0} is not set")]
    MissingEnv(&'static str),
}

/// Sends one chat-completion request body and returns the raw response body.
pub trait CompletionTransport: Send + Sync {
    fn send(&self, request: &Value) -> Result<String, LlmError>;
}

pub struct HttpTransport {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(REQUEST_TIMEOUT))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            api_key,
            agent,
        }
    }

    pub fn from_env() -> Result<Self, LlmError> {
        let endpoint = std::env::var(ENDPOINT_VAR).map_err(|_| LlmError::MissingEnv(ENDPOINT_VAR))?;
        let api_key = std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty());
        Ok(Self::new(endpoint, api_key))
    }
}

impl CompletionTransport for HttpTransport {
    fn send(&self, request: &Value) -> Result<String, LlmError> {
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send(request.to_string())
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        resp.body_mut()
            .read_to_string()
            .map_err(|e| LlmError::Transport(e.to_string()))
    }
}

pub struct LlmPlanner {
    transport: Box<dyn CompletionTransport>,
    model: String,
}

impl LlmPlanner {
    pub fn new(transport: Box<dyn CompletionTransport>, model: impl Into<String>) -> Self {
        Self {
            transport,
            model: model.into(),
        }
    }

    pub fn from_env() -> Result<Self, LlmError> {
        let model = std::env::var(MODEL_VAR).unwrap_or_else(|_| "default".into());
        Ok(Self::new(Box::new(HttpTransport::from_env()?), model))
    }

    fn request_body(&self, system: &str, user: String, schema: Value) -> Value {
        json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "response_format": {
                "type": "json_schema",
                "json_schema": {"name": "structured_reply", "strict": true, "schema": schema},
            },
        })
    }

    /// Sends with one retry on transport errors.
    fn exchange(&self, body: &Value) -> Result<Value, LlmError> {
        let mut last = LlmError::Transport("no attempt made".into());
        for attempt in 0..=RETRIES {
            match self.transport.send(body) {
                Ok(text) => return reply_content(&text),
                Err(e) => {
                    log::warn!("completion request attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(last)
    }

    fn propose(&self, role: AgentRole, view: &SessionView) -> Result<PlannerAction, LlmError> {
        let context = serde_json::to_string(view).map_err(|e| LlmError::Malformed(e.to_string()))?;
        let body = self.request_body(&role_prompt(role), context, action_schema(role));
        let content = self.exchange(&body)?;
        let action: PlannerAction =
            serde_json::from_value(content).map_err(|e| LlmError::Malformed(format!("not a planner action: {e}")))?;
        if !allowed_actions(role).contains(&action.name()) {
            return Err(LlmError::Malformed(format!(
                "action `{}` is not valid for role {role}",
                action.name()
            )));
        }
        Ok(action)
    }

    /// Turns a free-text request into a draft task object. The draft still
    /// has to pass task translation.
    pub fn draft_task(&self, text: &str) -> Result<Value, LlmError> {
        let body = self.request_body(DRAFT_PROMPT, text.to_string(), json!({"type": "object"}));
        let draft = self.exchange(&body)?;
        if draft.is_object() {
            Ok(draft)
        } else {
            Err(LlmError::Malformed("draft task is not an object".into()))
        }
    }
}

impl Planner for LlmPlanner {
    fn name(&self) -> &'static str {
        "llm"
    }

    fn complete(&self, role: AgentRole, view: &SessionView) -> PlannerReply {
        match self.propose(role, view) {
            Ok(action) => PlannerReply { action, notes: vec![] },
            Err(e) => PlannerReply {
                action: deterministic_action(role, view),
                notes: vec![format!("planner fallback: {e}")],
            },
        }
    }
}

/// Extracts and parses `choices[0].message.content` from a chat-completion
/// response body.
pub fn reply_content(body: &str) -> Result<Value, LlmError> {
    let resp: Value = serde_json::from_str(body).map_err(|e| LlmError::Malformed(format!("body is not JSON: {e}")))?;
    let content = resp
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::Malformed("missing choices[0].message.content".into()))?;
    serde_json::from_str(strip_fences(content))
        .map_err(|e| LlmError::Malformed(format!("content is not JSON: {e}")))
}

fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

const DRAFT_PROMPT: &str = "You convert a power-converter controller design request into a JSON task object \
with keys device (buck|boost|buck_boost), plant {v_in, inductance, capacitance, load_resistance, duty_min, duty_max}, \
v_ref, targets {max_steady_state_error, max_overshoot, max_settling_time, settling_band}, sim {dt, horizon}, \
optimizer {swarm_size, iterations, seed}, max_rounds. Use SI units and overshoot in percent. \
Omit anything the request does not state. Reply with the JSON object only.";

fn role_prompt(role: AgentRole) -> String {
    let duty = match role {
        AgentRole::ModelDesign => {
            "You are the model design agent. Choose the averaged model template for the converter. \
             Reply {\"action\":\"select_model\",\"model\":\"averaged-ccm/<device>\"}."
        }
        AgentRole::AlgorithmDesign => {
            "You are the algorithm design agent. Choose the control algorithm; the only registered one is PID. \
             Reply {\"action\":\"select_algorithm\",\"algorithm\":\"PID\"}."
        }
        AgentRole::Evaluator => {
            "You are the evaluator agent. Read the last performance report. If every indicator passes reply \
             {\"action\":\"accept\"}. Otherwise reply {\"action\":\"suggest\",\"adjustments\":[...],\"rationale\":\"...\"} \
             where each adjustment is one of {\"action\":\"WidenSearchSpace\",\"upper_bounds\":{\"kp\":..,\"ki\":..,\"kd\":..}}, \
             {\"action\":\"IncreaseBudget\",\"iterations\":n}, {\"action\":\"RelaxDerivative\",\"kd_upper\":x}, \
             {\"action\":\"ReseedOptimizer\",\"seed\":n}. Values are new settings. kd upper is capped at 0.01 \
             and iterations at 1000."
        }
        _ => "Reply {\"action\":\"accept\"}.",
    };
    format!(
        "{duty} The user message is the current session state as JSON. Reply with a single JSON object and nothing else."
    )
}

fn action_schema(role: AgentRole) -> Value {
    let names: Vec<&str> = allowed_actions(role).to_vec();
    json!({
        "type": "object",
        "required": ["action"],
        "properties": {"action": {"type": "string", "enum": names}},
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::planner::tests::{failing_report, view};
    use crate::agents::planner::Adjustment;
    use std::sync::Mutex;

    struct Canned {
        replies: Mutex<Vec<Result<String, LlmError>>>,
        calls: Mutex<usize>,
    }

    impl Canned {
        fn new(replies: Vec<Result<String, LlmError>>) -> Self {
            Self {
                replies: Mutex::new(replies),
                calls: Mutex::new(0),
            }
        }
    }

    impl CompletionTransport for &'static Canned {
        fn send(&self, _request: &Value) -> Result<String, LlmError> {
            *self.calls.lock().unwrap() += 1;
            let mut r = self.replies.lock().unwrap();
            if r.is_empty() {
                Err(LlmError::Transport("exhausted".into()))
            } else {
                r.remove(0)
            }
        }
    }

    fn chat(content: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    fn planner(replies: Vec<Result<String, LlmError>>) -> (LlmPlanner, &'static Canned) {
        let canned: &'static Canned = Box::leak(Box::new(Canned::new(replies)));
        (LlmPlanner::new(Box::new(canned), "test"), canned)
    }

    #[test]
    fn fenced_content_is_parsed() {
        let v = reply_content(&chat("```json\n{\"action\":\"accept\"}\n```")).unwrap();
        assert_eq!(v, json!({"action": "accept"}));
    }

    #[test]
    fn garbage_falls_back_with_note() {
        let v = view(1, Some(failing_report()));
        for body in ["<html>", "{}", &chat("not json"), &chat("{\"action\":\"select_model\",\"model\":\"x\"}")] {
            let (p, _) = planner(vec![Ok(body.to_string())]);
            let reply = p.complete(AgentRole::Evaluator, &v);
            assert_eq!(reply.action, deterministic_action(AgentRole::Evaluator, &v), "{body}");
            assert_eq!(reply.notes.len(), 1);
            assert!(reply.notes[0].starts_with("planner fallback"), "{}", reply.notes[0]);
        }
    }

    #[test]
    fn transport_error_is_retried_once() {
        let v = view(1, Some(failing_report()));
        let (p, canned) = planner(vec![
            Err(LlmError::Transport("reset".into())),
            Ok(chat(r#"{"action":"suggest","adjustments":[{"action":"IncreaseBudget","iterations":90}],"rationale":"slow"}"#)),
        ]);
        let reply = p.complete(AgentRole::Evaluator, &v);
        assert!(reply.notes.is_empty());
        let PlannerAction::Suggest(s) = reply.action else { panic!() };
        assert_eq!(s.adjustments, vec![Adjustment::IncreaseBudget { iterations: 90 }]);
        assert_eq!(*canned.calls.lock().unwrap(), 2);

        let (p, canned) = planner(vec![]);
        let reply = p.complete(AgentRole::ModelDesign, &v);
        assert_eq!(*canned.calls.lock().unwrap(), 2);
        assert!(reply.notes[0].contains("transport error"));
    }

    #[test]
    fn draft_task_requires_an_object() {
        let (p, _) = planner(vec![Ok(chat(r#"{"device":"boost"}"#)), Ok(chat("[1,2]"))]);
        assert_eq!(p.draft_task("boost 12 to 24").unwrap(), json!({"device": "boost"}));
        assert!(p.draft_task("again").is_err());
    }
}
