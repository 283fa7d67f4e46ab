//! Planner backends decide each agent's next structured action. Whatever a
//! backend proposes goes through [`validate_action`] before the session acts
//! on it, so a misbehaving backend can only ever degrade to the fixed policy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::task::OptimizerSetup;
use super::AgentRole;
use crate::control::REGISTERED_ALGORITHMS;
use crate::converter_models::Topology;
use crate::metrics::{IndicatorTargets, PerformanceReport};
use crate::optimization::{check_gain_space, Dimension, SearchSpace};

/// Upper bound any search-space edit may give the derivative gain.
pub const KD_UPPER_CAP: f64 = 1e-2;
/// Upper bound for the proportional gain after any edit.
pub const KP_UPPER_CAP: f64 = 10.0;
/// Upper bound for the integral gain after any edit.
pub const KI_UPPER_CAP: f64 = 1e4;
/// Largest iteration budget a suggestion may request.
pub const MAX_ITERATIONS: usize = 1000;

/// One edit of the optimizer setup. Values are the new settings, not
/// increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", deny_unknown_fields)]
pub enum Adjustment {
    WidenSearchSpace { upper_bounds: BTreeMap<String, f64> },
    IncreaseBudget { iterations: usize },
    RelaxDerivative { kd_upper: f64 },
    ReseedOptimizer { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suggestion {
    pub adjustments: Vec<Adjustment>,
    pub rationale: String,
}

fn gain_cap(name: &str) -> f64 {
    match name {
        "kp" => KP_UPPER_CAP,
        "ki" => KI_UPPER_CAP,
        "kd" => KD_UPPER_CAP,
        _ => f64::INFINITY,
    }
}

impl Suggestion {
    /// Clamps every value into its allowed range and returns a note per
    /// clamp.
    pub fn clamp(&mut self) -> Vec<String> {
        let mut notes = Vec::new();
        fn clamp_gain(notes: &mut Vec<String>, name: &str, value: &mut f64) {
            let cap = gain_cap(name);
            if *value > cap {
                notes.push(format!("planner clamp: {name} upper {value} exceeds cap {cap}, clamped"));
                *value = cap;
            }
        }
        for adj in &mut self.adjustments {
            match adj {
                Adjustment::WidenSearchSpace { upper_bounds } => {
                    for (name, value) in upper_bounds.iter_mut() {
                        clamp_gain(&mut notes, name, value);
                    }
                }
                Adjustment::RelaxDerivative { kd_upper } => clamp_gain(&mut notes, "kd", kd_upper),
                Adjustment::IncreaseBudget { iterations } => {
                    if *iterations > MAX_ITERATIONS {
                        notes.push(format!(
                            "planner clamp: iterations {iterations} exceeds cap {MAX_ITERATIONS}, clamped"
                        ));
                        *iterations = MAX_ITERATIONS;
                    }
                }
                Adjustment::ReseedOptimizer { .. } => {}
            }
        }
        notes
    }

    /// The optimizer setup after all adjustments, or why it would be invalid.
    pub fn apply(&self, setup: &OptimizerSetup) -> Result<OptimizerSetup, String> {
        if self.adjustments.is_empty() {
            return Err("suggestion has no adjustments".into());
        }
        let mut pso = setup.pso;
        let mut dims: Vec<Dimension> = setup.space.dims().to_vec();
        let mut set_upper = |name: &str, value: f64| -> Result<(), String> {
            let dim = dims
                .iter_mut()
                .find(|d| d.name == name)
                .ok_or_else(|| format!("`{name}` is not in the search space"))?;
            if !value.is_finite() {
                return Err(format!("{name} upper bound must be finite"));
            }
            dim.upper = value;
            Ok(())
        };
        for adj in &self.adjustments {
            match adj {
                Adjustment::WidenSearchSpace { upper_bounds } => {
                    if upper_bounds.is_empty() {
                        return Err("WidenSearchSpace names no bounds".into());
                    }
                    for (name, value) in upper_bounds {
                        set_upper(name, *value)?;
                    }
                }
                Adjustment::RelaxDerivative { kd_upper } => set_upper("kd", *kd_upper)?,
                Adjustment::IncreaseBudget { iterations } => pso.iterations = *iterations,
                Adjustment::ReseedOptimizer { seed } => pso.seed = *seed,
            }
        }
        pso.validate().map_err(|e| e.to_string())?;
        let space = SearchSpace::new(dims).map_err(|e| e.to_string())?;
        check_gain_space(&space).map_err(|e| e.to_string())?;
        Ok(OptimizerSetup { pso, space })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum PlannerAction {
    SelectModel { model: String },
    SelectAlgorithm { algorithm: String },
    Suggest(Suggestion),
    Accept,
}

impl PlannerAction {
    pub fn name(&self) -> &'static str {
        match self {
            PlannerAction::SelectModel { .. } => "select_model",
            PlannerAction::SelectAlgorithm { .. } => "select_algorithm",
            PlannerAction::Suggest(_) => "suggest",
            PlannerAction::Accept => "accept",
        }
    }
}

/// Action names a role may answer with.
pub fn allowed_actions(role: AgentRole) -> &'static [&'static str] {
    match role {
        AgentRole::ModelDesign => &["select_model"],
        AgentRole::AlgorithmDesign => &["select_algorithm"],
        AgentRole::Evaluator => &["suggest", "accept"],
        _ => &["accept"],
    }
}

/// Identity of the averaged model template for a topology.
pub fn model_identity(device: Topology) -> String {
    format!("averaged-ccm/{}", device.as_str())
}

/// The slice of session state a planner gets to see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub device: Topology,
    pub v_ref: f64,
    pub round: u32,
    pub max_rounds: u32,
    pub targets: IndicatorTargets,
    pub optimizer: OptimizerSetup,
    pub last_report: Option<PerformanceReport>,
    pub failing: Vec<String>,
    pub recent_messages: Value,
}

impl SessionView {
    fn report_passes(&self) -> bool {
        self.last_report.as_ref().is_some_and(|r| r.all_pass())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerReply {
    pub action: PlannerAction,
    /// Diagnostics to record in the transcript.
    pub notes: Vec<String>,
}

pub trait Planner: Send + Sync {
    fn name(&self) -> &'static str;

    fn complete(&self, role: AgentRole, view: &SessionView) -> PlannerReply;
}

/// The fixed policy: bind the task's template, pick PID, and escalate on
/// failure by widening the box once, then doubling the budget with a new
/// seed.
pub fn deterministic_action(role: AgentRole, view: &SessionView) -> PlannerAction {
    match role {
        AgentRole::ModelDesign => PlannerAction::SelectModel {
            model: model_identity(view.device),
        },
        AgentRole::AlgorithmDesign => PlannerAction::SelectAlgorithm {
            algorithm: REGISTERED_ALGORITHMS[0].to_string(),
        },
        AgentRole::Evaluator if !view.report_passes() => PlannerAction::Suggest(policy_suggestion(view)),
        _ => PlannerAction::Accept,
    }
}

fn policy_suggestion(view: &SessionView) -> Suggestion {
    let failing = if view.failing.is_empty() {
        "the verification run".to_string()
    } else {
        view.failing.join(", ")
    };
    if view.round <= 1 {
        let upper_bounds = view
            .optimizer
            .space
            .dims()
            .iter()
            .map(|d| (d.name.clone(), (2.0 * d.upper).min(gain_cap(&d.name))))
            .collect();
        Suggestion {
            adjustments: vec![Adjustment::WidenSearchSpace { upper_bounds }],
            rationale: format!("{failing} failed in round {}; doubling every gain upper bound", view.round),
        }
    } else {
        let pso = &view.optimizer.pso;
        Suggestion {
            adjustments: vec![
                Adjustment::IncreaseBudget {
                    iterations: (2 * pso.iterations).min(MAX_ITERATIONS),
                },
                Adjustment::ReseedOptimizer {
                    seed: pso.seed.wrapping_add(1),
                },
            ],
            rationale: format!(
                "{failing} failed in round {}; doubling the iteration budget and reseeding",
                view.round
            ),
        }
    }
}

/// Checks a proposed action against the role and the session, clamping
/// values where possible and falling back to the fixed policy otherwise.
pub fn validate_action(role: AgentRole, view: &SessionView, proposed: PlannerAction) -> PlannerReply {
    let fallback = |reason: String| PlannerReply {
        action: deterministic_action(role, view),
        notes: vec![format!("planner fallback: {reason}")],
    };
    if !allowed_actions(role).contains(&proposed.name()) {
        return fallback(format!("action `{}` is not valid for role {role}", proposed.name()));
    }
    match proposed {
        PlannerAction::SelectModel { model } => {
            let expected = model_identity(view.device);
            if model == expected {
                PlannerReply {
                    action: PlannerAction::SelectModel { model },
                    notes: vec![],
                }
            } else {
                fallback(format!("model `{model}` does not match device, expected `{expected}`"))
            }
        }
        PlannerAction::SelectAlgorithm { algorithm } => {
            if REGISTERED_ALGORITHMS.contains(&algorithm.as_str()) {
                PlannerReply {
                    action: PlannerAction::SelectAlgorithm { algorithm },
                    notes: vec![],
                }
            } else {
                fallback(format!("unsupported algorithm `{algorithm}`"))
            }
        }
        PlannerAction::Accept => {
            if role == AgentRole::Evaluator && !view.report_passes() {
                fallback("accept proposed for a failing report".into())
            } else {
                PlannerReply {
                    action: PlannerAction::Accept,
                    notes: vec![],
                }
            }
        }
        PlannerAction::Suggest(mut suggestion) => {
            if view.report_passes() {
                return fallback("suggestion proposed for an all-pass report".into());
            }
            let notes = suggestion.clamp();
            match suggestion.apply(&view.optimizer) {
                Ok(_) => PlannerReply {
                    action: PlannerAction::Suggest(suggestion),
                    notes,
                },
                Err(reason) => {
                    let mut reply = fallback(format!("invalid suggestion: {reason}"));
                    reply.notes.splice(0..0, notes);
                    reply
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DeterministicPlanner;

impl Planner for DeterministicPlanner {
    fn name(&self) -> &'static str {
        "deterministic"
    }

    fn complete(&self, role: AgentRole, view: &SessionView) -> PlannerReply {
        PlannerReply {
            action: deterministic_action(role, view),
            notes: vec![],
        }
    }
}
