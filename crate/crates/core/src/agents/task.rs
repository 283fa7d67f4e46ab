//! Task file schema and its translation into a validated [`TaskSpec`].

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::converter_models::{
    duty_for_target, ConverterParams, ModelError, PlantState, Topology, UnknownTopology, DEFAULT_DUTY_MAX,
    DEFAULT_DUTY_MIN,
};
use crate::metrics::{IndicatorTargets, DEFAULT_SETTLING_BAND};
use crate::optimization::{check_gain_space, Dimension, PsoConfig, SearchSpace};
use crate::simulation::{LoadStep, SimConfig, DEFAULT_DT, DEFAULT_HORIZON};

pub const DEFAULT_MAX_ROUNDS: u32 = 3;
/// Default steady-state error limit as a fraction of the reference.
pub const DEFAULT_SSE_FRACTION: f64 = 0.01;
/// Default overshoot limit in percent.
pub const DEFAULT_MAX_OVERSHOOT: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("task field `{0}` is missing")]
    Missing(String),
    #[error("task field `{field}` is invalid: {reason}")]
    Invalid { field: String, reason: String },
    #[error("task does not match the schema: {0}")]
    Schema(String),
    #[error("v_ref {v_ref} V is unreachable for this converter; feasible range is [{min}, {max}] V")]
    UnreachableTarget { v_ref: f64, min: f64, max: f64 },
}

impl TaskError {
    /// The offending field path, when one is known.
    pub fn field(&self) -> Option<&str> {
        match self {
            TaskError::Missing(f) => Some(f),
            TaskError::Invalid { field, .. } => Some(field),
            TaskError::UnreachableTarget { .. } => Some("v_ref"),
            TaskError::Schema(_) => None,
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> TaskError {
    TaskError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

// Raw file schema. Every field is optional at this level so that missing
// fields can be reported by path; unknown keys are rejected.

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    pub device: Option<String>,
    pub plant: Option<PlantSection>,
    pub v_ref: Option<f64>,
    pub targets: Option<TargetsSection>,
    pub sim: Option<SimSection>,
    pub optimizer: Option<OptimizerSection>,
    pub max_rounds: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub v_in: Option<f64>,
    pub inductance: Option<f64>,
    pub capacitance: Option<f64>,
    pub load_resistance: Option<f64>,
    pub duty_min: Option<f64>,
    pub duty_max: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsSection {
    pub max_steady_state_error: Option<f64>,
    pub max_overshoot: Option<f64>,
    pub max_settling_time: Option<f64>,
    pub settling_band: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub initial_state: Option<InitialStateSection>,
    pub load_step: Option<LoadStepSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateSection {
    pub inductor_current: Option<f64>,
    pub capacitor_voltage: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadStepSection {
    pub time: Option<f64>,
    pub new_resistance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub swarm_size: Option<usize>,
    pub iterations: Option<usize>,
    pub inertia: Option<f64>,
    pub cognitive: Option<f64>,
    pub social: Option<f64>,
    pub velocity_cap: Option<f64>,
    pub seed: Option<u64>,
    pub space: Option<Vec<DimensionSection>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionSection {
    pub name: Option<String>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// Optimizer settings for the gain-tuning stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSetup {
    pub pso: PsoConfig,
    pub space: SearchSpace,
}

/// Validated design task with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub device: Topology,
    pub plant: ConverterParams,
    pub v_ref: f64,
    pub targets: IndicatorTargets,
    pub sim: SimConfig,
    pub optimizer: OptimizerSetup,
    pub max_rounds: u32,
}

/// A default that translation filled in, for the transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilledDefault {
    pub field: String,
    pub value: Value,
}

struct Defaults(Vec<FilledDefault>);

impl Defaults {
    fn take<T: Copy + Serialize>(&mut self, field: &str, given: Option<T>, default: T) -> T {
        given.unwrap_or_else(|| {
            self.0.push(FilledDefault {
                field: field.to_string(),
                value: serde_json::to_value(default).unwrap_or(Value::Null),
            });
            default
        })
    }
}

fn required<T: Copy>(field: &str, v: Option<T>) -> Result<T, TaskError> {
    v.ok_or_else(|| TaskError::Missing(field.to_string()))
}

/// Parses raw task content into a [`TaskFile`] without filling defaults.
pub fn parse_task_file(raw: &Value) -> Result<TaskFile, TaskError> {
    serde_json::from_value(raw.clone()).map_err(|e| TaskError::Schema(e.to_string()))
}

/// Validates a raw task, fills defaults and checks that the reference is
/// reachable. Returns the spec and the list of defaults applied.
pub fn translate_task(raw: &Value) -> Result<(TaskSpec, Vec<FilledDefault>), TaskError> {
    let file = parse_task_file(raw)?;
    let mut defaults = Defaults(Vec::new());

    let device_name = file.device.as_deref().ok_or_else(|| TaskError::Missing("device".into()))?;
    let device: Topology = device_name
        .parse()
        .map_err(|e: UnknownTopology| invalid("device", e.to_string()))?;

    let plant = file.plant.clone().ok_or_else(|| TaskError::Missing("plant".into()))?;
    let v_in = required("plant.v_in", plant.v_in)?;
    let inductance = required("plant.inductance", plant.inductance)?;
    let capacitance = required("plant.capacitance", plant.capacitance)?;
    let load_resistance = required("plant.load_resistance", plant.load_resistance)?;
    let duty_min = defaults.take("plant.duty_min", plant.duty_min, DEFAULT_DUTY_MIN);
    let duty_max = defaults.take("plant.duty_max", plant.duty_max, DEFAULT_DUTY_MAX);
    let params = ConverterParams {
        topology: device,
        v_in,
        inductance,
        capacitance,
        load_resistance,
        duty_min,
        duty_max,
    };
    params.validate().map_err(|e| match e {
        ModelError::InvalidParams { field, reason } => invalid(&format!("plant.{field}"), reason),
        other => invalid("plant", other.to_string()),
    })?;

    let v_ref = required("v_ref", file.v_ref)?;
    if !(v_ref.is_finite() && v_ref > 0.0) {
        return Err(invalid("v_ref", format!("must be > 0, got {v_ref}")));
    }

    let sim_file = file.sim.clone().unwrap_or_default();
    let dt = defaults.take("sim.dt", sim_file.dt, DEFAULT_DT);
    let horizon = defaults.take("sim.horizon", sim_file.horizon, DEFAULT_HORIZON);
    let init = sim_file.initial_state.clone().unwrap_or_default();
    let initial_state = PlantState::new(
        defaults.take("sim.initial_state.inductor_current", init.inductor_current, 0.0),
        defaults.take("sim.initial_state.capacitor_voltage", init.capacitor_voltage, 0.0),
    );
    let load_step = match &sim_file.load_step {
        None => None,
        Some(ls) => Some(LoadStep {
            time: required("sim.load_step.time", ls.time)?,
            new_resistance: required("sim.load_step.new_resistance", ls.new_resistance)?,
        }),
    };
    let sim = SimConfig {
        dt,
        horizon,
        initial_state,
        v_ref,
        load_step,
    };
    sim.validate().map_err(|e| invalid("sim", e.to_string()))?;

    let t = file.targets.clone().unwrap_or_default();
    let targets = IndicatorTargets {
        max_steady_state_error: defaults.take(
            "targets.max_steady_state_error",
            t.max_steady_state_error,
            DEFAULT_SSE_FRACTION * v_ref,
        ),
        max_overshoot: defaults.take("targets.max_overshoot", t.max_overshoot, DEFAULT_MAX_OVERSHOOT),
        max_settling_time: defaults.take("targets.max_settling_time", t.max_settling_time, horizon / 2.0),
        settling_band: defaults.take("targets.settling_band", t.settling_band, DEFAULT_SETTLING_BAND),
    };
    targets.validate(horizon).map_err(|reason| {
        let field = reason.split_whitespace().next().unwrap_or("targets");
        invalid(&format!("targets.{field}"), reason.clone())
    })?;

    let o = file.optimizer.clone().unwrap_or_default();
    let base = PsoConfig::default();
    let pso = PsoConfig {
        swarm_size: defaults.take("optimizer.swarm_size", o.swarm_size, base.swarm_size),
        iterations: defaults.take("optimizer.iterations", o.iterations, base.iterations),
        inertia: defaults.take("optimizer.inertia", o.inertia, base.inertia),
        cognitive: defaults.take("optimizer.cognitive", o.cognitive, base.cognitive),
        social: defaults.take("optimizer.social", o.social, base.social),
        velocity_cap: defaults.take("optimizer.velocity_cap", o.velocity_cap, base.velocity_cap),
        seed: defaults.take("optimizer.seed", o.seed, base.seed),
    };
    pso.validate().map_err(|e| invalid("optimizer", e.to_string()))?;
    let space = match &o.space {
        None => {
            let space = SearchSpace::default_gains();
            defaults.0.push(FilledDefault {
                field: "optimizer.space".into(),
                value: serde_json::to_value(&space).unwrap_or(Value::Null),
            });
            space
        }
        Some(dims) => {
            let mut out = Vec::with_capacity(dims.len());
            for (i, d) in dims.iter().enumerate() {
                let path = |k: &str| format!("optimizer.space[{i}].{k}");
                let name = d.name.clone().ok_or_else(|| TaskError::Missing(path("name")))?;
                let lower = d.lower.ok_or_else(|| TaskError::Missing(path("lower")))?;
                let upper = d.upper.ok_or_else(|| TaskError::Missing(path("upper")))?;
                if lower < 0.0 {
                    return Err(invalid(&path("lower"), "gains are non-negative"));
                }
                out.push(Dimension::new(name, lower, upper));
            }
            let space = SearchSpace::new(out).map_err(|e| invalid("optimizer.space", e.to_string()))?;
            check_gain_space(&space).map_err(|e| invalid("optimizer.space", e.to_string()))?;
            space
        }
    };

    let max_rounds = defaults.take("max_rounds", file.max_rounds, DEFAULT_MAX_ROUNDS);
    if max_rounds < 1 {
        return Err(invalid("max_rounds", "must be >= 1"));
    }

    duty_for_target(&params, v_ref).map_err(|e| match e {
        ModelError::UnreachableTarget { v_ref, min, max } => TaskError::UnreachableTarget { v_ref, min, max },
        other => invalid("v_ref", other.to_string()),
    })?;

    let spec = TaskSpec {
        device,
        plant: params,
        v_ref,
        targets,
        sim,
        optimizer: OptimizerSetup { pso, space },
        max_rounds,
    };
    Ok((spec, defaults.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal() -> Value {
        json!({
            "device": "boost",
            "plant": {"v_in": 12.0, "inductance": 1e-3, "capacitance": 1e-4, "load_resistance": 10.0},
            "v_ref": 24.0
        })
    }

    #[test]
    fn minimal_boost_task_gets_defaults() {
        let (spec, filled) = translate_task(&minimal()).unwrap();
        assert_eq!(spec.device, Topology::Boost);
        assert_eq!(spec.plant.duty_max, 0.9);
        assert_eq!(spec.sim.dt, 1e-5);
        assert_eq!(spec.sim.horizon, 0.1);
        assert_eq!(spec.sim.initial_state, PlantState::default());
        assert!((spec.targets.max_steady_state_error - 0.24).abs() < 1e-12);
        assert_eq!(spec.targets.max_overshoot, 10.0);
        assert_eq!(spec.targets.max_settling_time, 0.05);
        assert_eq!(spec.targets.settling_band, 0.02);
        assert_eq!(spec.optimizer.pso, PsoConfig::default());
        assert_eq!(spec.optimizer.space, SearchSpace::default_gains());
        assert_eq!(spec.max_rounds, 3);
        let names: Vec<&str> = filled.iter().map(|f| f.field.as_str()).collect();
        assert!(names.contains(&"targets.max_overshoot"));
        assert!(names.contains(&"optimizer.space"));
        assert!(!names.contains(&"plant.v_in"));
    }

    #[test]
    fn given_fields_are_not_reported_as_defaults() {
        let mut raw = minimal();
        raw["targets"] = json!({"max_steady_state_error": 0.24, "max_overshoot": 10.0, "max_settling_time": 0.05});
        let (spec, filled) = translate_task(&raw).unwrap();
        assert_eq!(spec.targets.max_settling_time, 0.05);
        let names: Vec<&str> = filled.iter().map(|f| f.field.as_str()).collect();
        assert!(!names.contains(&"targets.max_overshoot"));
        assert!(names.contains(&"targets.settling_band"));
    }

    #[test]
    fn unreachable_reference() {
        let mut raw = minimal();
        raw["v_ref"] = json!(6.0);
        assert!(matches!(translate_task(&raw), Err(TaskError::UnreachableTarget { .. })));
    }

    #[test]
    fn missing_capacitance_is_named() {
        let mut raw = minimal();
        raw["plant"].as_object_mut().unwrap().remove("capacitance");
        assert_eq!(translate_task(&raw).unwrap_err(), TaskError::Missing("plant.capacitance".into()));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut raw = minimal();
        raw["targets"] = json!({"max_overshot": 5.0});
        let err = translate_task(&raw).unwrap_err();
        assert!(matches!(&err, TaskError::Schema(m) if m.contains("max_overshot")), "{err}");
    }

    #[test]
    fn settling_limit_beyond_horizon_is_rejected() {
        let mut raw = minimal();
        raw["targets"] = json!({"max_settling_time": 0.5});
        let err = translate_task(&raw).unwrap_err();
        assert_eq!(err.field(), Some("targets.max_settling_time"));
    }

    #[test]
    fn unknown_device() {
        let mut raw = minimal();
        raw["device"] = json!("flyback");
        assert_eq!(translate_task(&raw).unwrap_err().field(), Some("device"));
    }

    #[test]
    fn foreign_search_dimension() {
        let mut raw = minimal();
        raw["optimizer"] = json!({"space": [{"name": "tau", "lower": 0.0, "upper": 1.0}]});
        assert_eq!(translate_task(&raw).unwrap_err().field(), Some("optimizer.space"));
    }
}
