//! The manager loop: translate, design, tune, verify, evaluate, and repeat
//! with the evaluator's suggestion until the indicators pass or the round
//! budget runs out.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::message::{
    MessageBody, MessageKind, Operation, RequestPayload, ResultPayload, SuggestionPayload, Transcript, VerdictPayload,
};
use super::planner::{validate_action, Planner, PlannerAction, SessionView};
use super::task::{translate_task, OptimizerSetup, TaskSpec};
use super::AgentRole;
use crate::control::{make_controller, ControllerSpec, PidGains};
use crate::converter_models::ConverterParams;
use crate::metrics::{evaluate_run, failed_report, IndicatorTargets, PerformanceReport};
use crate::numfmt::sig9;
use crate::optimization::{seeded_template, tune_gains, OptimError, PsoResult};
use crate::simulation::{run_closed_loop, SimTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Succeeded,
    ExhaustedRounds,
    Infeasible,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Succeeded => "Succeeded",
            Outcome::ExhaustedRounds => "ExhaustedRounds",
            Outcome::Infeasible => "Infeasible",
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default)]
pub struct DesignSession {
    pub task: Option<TaskSpec>,
    pub transcript: Transcript,
    /// Identity of the bound model template.
    pub model_identity: Option<String>,
    pub model: Option<ConverterParams>,
    /// Controller spec carrying the latest tuned gains.
    pub controller: Option<ControllerSpec>,
    pub gains: Option<PidGains>,
    pub report: Option<PerformanceReport>,
    pub optimization: Option<PsoResult>,
    pub final_trace: Option<SimTrace>,
    /// Optimizer setup used in the latest round.
    pub optimizer: Option<OptimizerSetup>,
    pub round: u32,
    /// Closed-loop simulations run, optimizer evaluations included.
    pub simulations: usize,
    outcome: Option<Outcome>,
}

impl DesignSession {
    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    fn finish(&mut self, outcome: Outcome, detail: String) {
        assert!(self.outcome.is_none(), "session outcome set twice");
        self.outcome = Some(outcome);
        let round = self.round.max(1);
        self.transcript.push(
            round,
            AgentRole::Manager,
            AgentRole::Manager,
            MessageBody::Result(ResultPayload::Summary {
                outcome: outcome.to_string(),
                detail,
            }),
        );
    }

    fn request(&mut self, to: AgentRole, operation: Operation) {
        self.transcript.push(
            self.round,
            AgentRole::Manager,
            to,
            MessageBody::Request(RequestPayload { operation }),
        );
    }

    fn reply(&mut self, from: AgentRole, body: MessageBody) {
        self.transcript.push(self.round, from, AgentRole::Manager, body);
    }

    fn reject(&mut self, from: AgentRole, operation: Operation, error: String) {
        self.reply(from, MessageBody::Result(ResultPayload::Rejected { operation, error }));
    }

    fn view(&self, task: &TaskSpec) -> SessionView {
        let last_report = self.report.clone();
        let failing = last_report
            .as_ref()
            .map(|r| r.failing().iter().map(|i| i.name().to_string()).collect())
            .unwrap_or_default();
        SessionView {
            device: task.device,
            v_ref: task.v_ref,
            round: self.round,
            max_rounds: task.max_rounds,
            targets: task.targets,
            optimizer: self.optimizer.clone().unwrap_or_else(|| task.optimizer.clone()),
            last_report,
            failing,
            recent_messages: self.transcript.tail_json(6),
        }
    }

    /// Asks the planner for `role`'s action, validates it and records any
    /// notes in the transcript.
    fn consult(&mut self, planner: &dyn Planner, role: AgentRole, task: &TaskSpec) -> PlannerAction {
        let view = self.view(task);
        let reply = planner.complete(role, &view);
        let checked = validate_action(role, &view, reply.action);
        for note in reply.notes.into_iter().chain(checked.notes) {
            self.reply(role, MessageBody::Suggestion(SuggestionPayload::PlannerNote { note }));
        }
        checked.action
    }
}

/// Restates the targets as human-readable constraints in canonical units.
pub fn describe_constraints(targets: &IndicatorTargets) -> Vec<String> {
    vec![
        format!("steady_state_error <= {} V", sig9(targets.max_steady_state_error)),
        format!("overshoot <= {} %", sig9(targets.max_overshoot)),
        format!(
            "settling_time <= {} s within +/-{} % of v_ref",
            sig9(targets.max_settling_time),
            sig9(targets.settling_band * 100.0)
        ),
    ]
}

/// Runs one design session on raw task content.
pub fn run_session(raw: &Value, planner: &dyn Planner) -> DesignSession {
    let mut s = DesignSession {
        round: 1,
        ..Default::default()
    };

    s.request(AgentRole::ObjectiveDesign, Operation::TranslateTask);
    let task = match translate_task(raw) {
        Ok((task, filled_defaults)) => {
            s.reply(
                AgentRole::ObjectiveDesign,
                MessageBody::Result(ResultPayload::TaskTranslated { filled_defaults }),
            );
            task
        }
        Err(e) => {
            s.reject(AgentRole::ObjectiveDesign, Operation::TranslateTask, e.to_string());
            s.finish(Outcome::Infeasible, format!("task rejected: {e}"));
            return s;
        }
    };
    s.task = Some(task.clone());
    s.optimizer = Some(task.optimizer.clone());

    s.request(AgentRole::ObjectiveDesign, Operation::DesignObjectives);
    let targets = design_objectives(&task);
    s.reply(
        AgentRole::ObjectiveDesign,
        MessageBody::Result(ResultPayload::Objectives {
            targets,
            constraints: describe_constraints(&targets),
        }),
    );

    s.request(AgentRole::ModelDesign, Operation::DesignModel);
    let model = match s.consult(planner, AgentRole::ModelDesign, &task) {
        PlannerAction::SelectModel { model } => model,
        other => unreachable!("validated model action, got {other:?}"),
    };
    let params = design_model(&task);
    s.model_identity = Some(model.clone());
    s.model = Some(params);
    s.reply(
        AgentRole::ModelDesign,
        MessageBody::Result(ResultPayload::Model { model, params }),
    );

    s.request(AgentRole::AlgorithmDesign, Operation::DesignAlgorithm);
    let algorithm = match s.consult(planner, AgentRole::AlgorithmDesign, &task) {
        PlannerAction::SelectAlgorithm { algorithm } => algorithm,
        other => unreachable!("validated algorithm action, got {other:?}"),
    };
    let spec = match design_algorithm(&task, &algorithm) {
        Ok(spec) => spec,
        Err(e) => {
            s.reject(AgentRole::AlgorithmDesign, Operation::DesignAlgorithm, e.to_string());
            s.finish(Outcome::Infeasible, format!("no controller could be designed: {e}"));
            return s;
        }
    };
    s.controller = Some(spec.clone());
    s.reply(
        AgentRole::AlgorithmDesign,
        MessageBody::Result(ResultPayload::Algorithm { spec: spec.clone() }),
    );

    loop {
        let setup = s.optimizer.clone().expect("optimizer set after translation");

        s.request(AgentRole::ParameterDesign, Operation::DesignParameters);
        let (gains, result) = match design_parameters(&params, &spec, &targets, &task, &setup) {
            Ok(r) => r,
            Err(e) => {
                s.reject(AgentRole::ParameterDesign, Operation::DesignParameters, e.to_string());
                s.finish(Outcome::Infeasible, format!("gain tuning failed: {e}"));
                return s;
            }
        };
        s.simulations += result.evaluations;
        s.reply(
            AgentRole::ParameterDesign,
            MessageBody::Result(ResultPayload::Parameters {
                gains,
                best_cost: result.best_cost,
                evaluations: result.evaluations,
                iterations: setup.pso.iterations,
                seed: result.seed,
            }),
        );
        let tuned = spec.with_gains(gains);
        s.gains = Some(gains);
        s.controller = Some(tuned.clone());
        s.optimization = Some(result);

        s.request(AgentRole::Verification, Operation::Verify);
        let (report, trace) = verify(&params, &tuned, &task);
        s.simulations += 1;
        let failing: Vec<String> = report.failing().iter().map(|i| i.name().to_string()).collect();
        s.reply(
            AgentRole::Verification,
            MessageBody::Verdict(VerdictPayload {
                all_pass: report.all_pass(),
                failing: failing.clone(),
                report: report.clone(),
            }),
        );
        let passed = report.all_pass();
        s.report = Some(report);
        s.final_trace = Some(trace);

        if passed {
            s.finish(
                Outcome::Succeeded,
                format!("all indicators pass in round {} of {}", s.round, task.max_rounds),
            );
            return s;
        }
        if s.round >= task.max_rounds {
            s.finish(
                Outcome::ExhaustedRounds,
                format!("{} still failing after {} rounds", failing.join(", "), task.max_rounds),
            );
            return s;
        }

        let suggestion = match s.consult(planner, AgentRole::Evaluator, &task) {
            PlannerAction::Suggest(sug) => sug,
            other => unreachable!("validated evaluator action for a failing report, got {other:?}"),
        };
        let next = suggestion
            .apply(&setup)
            .expect("validated suggestions apply cleanly");
        s.reply(
            AgentRole::Evaluator,
            MessageBody::Suggestion(SuggestionPayload::Advice(suggestion)),
        );
        s.optimizer = Some(next);
        s.round += 1;
    }
}

/// The task's targets, unchanged.
pub fn design_objectives(task: &TaskSpec) -> IndicatorTargets {
    task.targets
}

/// Binds the task's plant values to the averaged template of its topology.
pub fn design_model(task: &TaskSpec) -> ConverterParams {
    ConverterParams {
        topology: task.device,
        ..task.plant
    }
}

/// A zero-gain controller of the chosen algorithm with its bias at the
/// feed-forward duty and its limits at the plant duty bounds.
pub fn design_algorithm(task: &TaskSpec, algorithm: &str) -> Result<ControllerSpec, OptimError> {
    let zero = PidGains {
        kp: 0.0,
        ki: 0.0,
        kd: 0.0,
        bias: 0.0,
        out_min: task.plant.duty_min,
        out_max: task.plant.duty_max,
    };
    let gains = seeded_template(&task.plant, &zero, task.v_ref)?;
    let spec = ControllerSpec {
        algorithm: algorithm.to_string(),
        gains,
        description: String::new(),
    };
    make_controller(&spec)?;
    Ok(spec.with_gains(gains))
}

pub fn design_parameters(
    params: &ConverterParams,
    spec: &ControllerSpec,
    targets: &IndicatorTargets,
    task: &TaskSpec,
    setup: &OptimizerSetup,
) -> Result<(PidGains, PsoResult), OptimError> {
    tune_gains(params, spec, targets, &task.sim, &setup.space, &setup.pso)
}

/// One closed-loop run with the final controller, judged against the
/// targets. Numeric faults give an all-fail report with the partial trace.
pub fn verify(params: &ConverterParams, spec: &ControllerSpec, task: &TaskSpec) -> (PerformanceReport, SimTrace) {
    let empty = SimTrace {
        times: vec![],
        states: vec![],
        duties: vec![],
        outputs: vec![],
    };
    let mut controller = match make_controller(spec) {
        Ok(c) => c,
        Err(_) => return (failed_report(&empty, task.v_ref, &task.targets), empty),
    };
    match run_closed_loop(params, controller.as_mut(), &task.sim) {
        Ok(run) => {
            let report = evaluate_run(&run, task.v_ref, &task.targets);
            let trace = match run {
                Ok(t) => t,
                Err(f) => f.partial,
            };
            (report, trace)
        }
        Err(_) => (failed_report(&empty, task.v_ref, &task.targets), empty),
    }
}

/// Checks that every Request is answered by exactly one Result or Verdict
/// from its addressee, in the same round, before the next Request.
pub fn check_request_pairing(transcript: &Transcript) -> Result<(), String> {
    let msgs = transcript.messages();
    let mut i = 0;
    while i < msgs.len() {
        let req = &msgs[i];
        if req.kind() != MessageKind::Request {
            i += 1;
            continue;
        }
        let end = msgs[i + 1..]
            .iter()
            .position(|m| m.kind() == MessageKind::Request)
            .map_or(msgs.len(), |p| i + 1 + p);
        let answers = msgs[i + 1..end]
            .iter()
            .filter(|m| {
                matches!(m.kind(), MessageKind::Result | MessageKind::Verdict)
                    && m.from == req.to
                    && m.to == req.from
                    && m.round == req.round
            })
            .count();
        if answers != 1 {
            return Err(format!("request {} has {answers} answers", req.id));
        }
        i = end;
    }
    Ok(())
}
