//! Typed messages exchanged between role agents, and the session transcript.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::planner::Suggestion;
use super::task::FilledDefault;
use super::AgentRole;
use crate::control::{ControllerSpec, PidGains};
use crate::converter_models::ConverterParams;
use crate::metrics::{IndicatorTargets, PerformanceReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    TranslateTask,
    DesignObjectives,
    DesignModel,
    DesignAlgorithm,
    DesignParameters,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageKind {
    Request,
    Result,
    Verdict,
    Suggestion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestPayload {
    pub operation: Operation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum ResultPayload {
    TaskTranslated {
        filled_defaults: Vec<FilledDefault>,
    },
    Rejected {
        operation: Operation,
        error: String,
    },
    Objectives {
        targets: IndicatorTargets,
        constraints: Vec<String>,
    },
    Model {
        /// Identity of the bound model template.
        model: String,
        params: ConverterParams,
    },
    Algorithm {
        spec: ControllerSpec,
    },
    Parameters {
        gains: PidGains,
        best_cost: f64,
        evaluations: usize,
        iterations: usize,
        seed: u64,
    },
    /// Manager's closing message.
    Summary {
        outcome: String,
        detail: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictPayload {
    pub all_pass: bool,
    /// Names of the failing indicators.
    pub failing: Vec<String>,
    pub report: PerformanceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "suggestion", rename_all = "snake_case")]
pub enum SuggestionPayload {
    Advice(Suggestion),
    /// Planner diagnostics: fallbacks, clamps, transport errors.
    PlannerNote { note: String },
}

/// Message body; the payload schema is fixed by the kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum MessageBody {
    Request(RequestPayload),
    Result(ResultPayload),
    Verdict(VerdictPayload),
    Suggestion(SuggestionPayload),
}

impl MessageBody {
    pub fn kind(&self) -> MessageKind {
        match self {
            MessageBody::Request(_) => MessageKind::Request,
            MessageBody::Result(_) => MessageKind::Result,
            MessageBody::Verdict(_) => MessageKind::Verdict,
            MessageBody::Suggestion(_) => MessageKind::Suggestion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub id: u64,
    pub round: u32,
    /// Logical clock: strictly increasing within a session.
    pub timestamp: u64,
    pub from: AgentRole,
    pub to: AgentRole,
    #[serde(flatten)]
    pub body: MessageBody,
}

impl AgentMessage {
    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }

    pub fn is_planner_note(&self) -> bool {
        matches!(self.body, MessageBody::Suggestion(SuggestionPayload::PlannerNote { .. }))
    }

    pub fn is_advice(&self) -> bool {
        matches!(self.body, MessageBody::Suggestion(SuggestionPayload::Advice(_)))
    }
}

/// Ordered message log of one session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    messages: Vec<AgentMessage>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, round: u32, from: AgentRole, to: AgentRole, body: MessageBody) -> u64 {
        let id = self.messages.len() as u64 + 1;
        self.messages.push(AgentMessage {
            id,
            round,
            timestamp: id,
            from,
            to,
            body,
        });
        id
    }

    pub fn messages(&self) -> &[AgentMessage] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn count(&self, kind: MessageKind) -> usize {
        self.messages.iter().filter(|m| m.kind() == kind).count()
    }

    /// Newline-delimited JSON, one message per line.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(&serde_json::to_string(m).expect("messages always serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> serde_json::Result<Self> {
        let messages = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<AgentMessage>, _>>()?;
        Ok(Self { messages })
    }

    /// A compact view for planner prompts: the last `n` messages as JSON.
    pub fn tail_json(&self, n: usize) -> Value {
        let start = self.messages.len().saturating_sub(n);
        serde_json::to_value(&self.messages[start..]).unwrap_or(Value::Null)
    }
}
