//! Role agents, their messages, the planner backends and the manager loop
//! that drives a design session.

pub mod llm;
pub mod message;
pub mod planner;
pub mod session;
pub mod task;

use serde::{Deserialize, Serialize};

pub use message::{AgentMessage, MessageBody, MessageKind, Transcript};
pub use planner::{Adjustment, DeterministicPlanner, Planner, PlannerAction, SessionView, Suggestion};
pub use session::{run_session, DesignSession, Outcome};
pub use task::{translate_task, TaskError, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Manager,
    ObjectiveDesign,
    ModelDesign,
    AlgorithmDesign,
    ParameterDesign,
    Verification,
    Evaluator,
}

impl AgentRole {
    pub const ALL: [AgentRole; 7] = [
        AgentRole::Manager,
        AgentRole::ObjectiveDesign,
        AgentRole::ModelDesign,
        AgentRole::AlgorithmDesign,
        AgentRole::ParameterDesign,
        AgentRole::Verification,
        AgentRole::Evaluator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Manager => "manager",
            AgentRole::ObjectiveDesign => "objective_design",
            AgentRole::ModelDesign => "model_design",
            AgentRole::AlgorithmDesign => "algorithm_design",
            AgentRole::ParameterDesign => "parameter_design",
            AgentRole::Verification => "verification",
            AgentRole::Evaluator => "evaluator",
        }
    }
}

impl std::fmt::Display for AgentRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
