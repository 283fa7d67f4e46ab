//! Particle swarm optimization over a bounded box, and gain tuning of a PID
//! controller against the closed-loop simulation cost.
//!
//! Fitness evaluations within an iteration run in parallel; the swarm update
//! is applied afterwards in particle order with a single seeded generator, so
//! results do not depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{make_controller, ControlError, ControllerSpec, PidGains};
use crate::converter_models::{duty_for_target, ConverterParams, ModelError};
use crate::metrics::{evaluate_run, IndicatorTargets, FAILURE_COST};
use crate::simulation::{run_closed_loop, SimConfig, SimError};

/// Names of the gains [`tune_gains`] can search over.
pub const GAIN_NAMES: [&str; 3] = ["kp", "ki", "kd"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("invalid PSO config: {0}")]
    InvalidConfig(String),
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Simulation(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Per-dimension velocity limit as a fraction of the bound range.
    pub velocity_cap: f64,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            swarm_size: 30,
            iterations: 60,
            inertia: 0.72,
            cognitive: 1.49,
            social: 1.49,
            velocity_cap: 0.2,
            seed: 0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: String| Err(OptimError::InvalidConfig(m));
        if self.swarm_size < 2 {
            return bad(format!("swarm_size must be >= 2, got {}", self.swarm_size));
        }
        if self.iterations < 1 {
            return bad("iterations must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.inertia) {
            return bad(format!("inertia must lie in [0, 1], got {}", self.inertia));
        }
        if !(self.cognitive.is_finite() && self.cognitive > 0.0) {
            return bad(format!("cognitive must be > 0, got {}", self.cognitive));
        }
        if !(self.social.is_finite() && self.social > 0.0) {
            return bad(format!("social must be > 0, got {}", self.social));
        }
        if !(self.velocity_cap > 0.0 && self.velocity_cap <= 1.0) {
            return bad(format!("velocity_cap must lie in (0, 1], got {}", self.velocity_cap));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

impl Dimension {
    pub fn new(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            lower,
            upper,
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Axis-aligned search box with named dimensions. A dimension may have zero
/// width, which pins that coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SearchSpace {
    dims: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self, OptimError> {
        let space = Self { dims };
        space.validate()?;
        Ok(space)
    }

    /// kp ∈ [0, 0.05], ki ∈ [0, 50], kd ∈ [0, 1e-3].
    pub fn default_gains() -> Self {
        Self {
            dims: vec![
                Dimension::new("kp", 0.0, 0.05),
                Dimension::new("ki", 0.0, 50.0),
                Dimension::new("kd", 0.0, 1e-3),
            ],
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        if self.dims.is_empty() {
            return Err(OptimError::InvalidSpace("no dimensions".into()));
        }
        for (i, d) in self.dims.iter().enumerate() {
            if !(d.lower.is_finite() && d.upper.is_finite() && d.lower <= d.upper) {
                return Err(OptimError::InvalidSpace(format!(
                    "dimension `{}` needs finite lower <= upper, got [{}, {}]",
                    d.name, d.lower, d.upper
                )));
            }
            if self.dims[..i].iter().any(|o| o.name == d.name) {
                return Err(OptimError::InvalidSpace(format!("duplicate dimension `{}`", d.name)));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Dimension> {
        self.dims.iter().find(|d| d.name == name)
    }

    pub fn contains(&self, position: &[f64]) -> bool {
        position.len() == self.dims.len()
            && self
                .dims
                .iter()
                .zip(position)
                .all(|(d, x)| *x >= d.lower && *x <= d.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoResult {
    pub best_position: Vec<f64>,
    pub best_cost: f64,
    /// Global best after initialization and after every iteration.
    pub cost_history: Vec<f64>,
    pub evaluations: usize,
    /// Evaluations whose cost was NaN or infinite (scored at the ceiling).
    pub invalid_evaluations: usize,
    pub seed: u64,
}

/// A bounded minimizer.
pub trait Minimizer {
    fn minimize(
        &self,
        objective: &(dyn Fn(&[f64]) -> f64 + Sync),
        space: &SearchSpace,
    ) -> Result<PsoResult, OptimError>;
}

/// Inertia-weight particle swarm.
#[derive(Debug, Clone, Copy, Default)]
pub struct ParticleSwarm {
    pub config: PsoConfig,
}

impl Minimizer for ParticleSwarm {
    fn minimize(
        &self,
        objective: &(dyn Fn(&[f64]) -> f64 + Sync),
        space: &SearchSpace,
    ) -> Result<PsoResult, OptimError> {
        pso_minimize(objective, space, &self.config)
    }
}

/// Minimizes `objective` over `space`.
///
/// Velocities start at zero; each iteration applies
/// `v = w*v + c1*r1*(pbest - x) + c2*r2*(gbest - x)`, caps each component at
/// `velocity_cap` times the dimension width, moves, and clamps positions to
/// the box (zeroing the velocity component at a wall).
pub fn pso_minimize<F>(objective: F, space: &SearchSpace, config: &PsoConfig) -> Result<PsoResult, OptimError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    config.validate()?;
    space.validate()?;
    let dims = space.dims();
    let n = config.swarm_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vmax: Vec<f64> = dims.iter().map(|d| config.velocity_cap * d.width()).collect();

    let mut positions: Vec<Vec<f64>> = (0..n)
        .map(|_| dims.iter().map(|d| d.lower + rng.gen::<f64>() * d.width()).collect())
        .collect();
    let mut velocities = vec![vec![0.0; dims.len()]; n];

    let mut invalid = 0usize;
    let mut evaluate = |positions: &[Vec<f64>]| -> Vec<f64> {
        let costs: Vec<f64> = positions.par_iter().map(|x| objective(x)).collect();
        costs
            .into_iter()
            .map(|c| {
                if c.is_finite() {
                    c
                } else {
                    invalid += 1;
                    FAILURE_COST
                }
            })
            .collect()
    };

    let costs = evaluate(&positions);
    let mut evaluations = n;
    let mut pbest = positions.clone();
    let mut pbest_cost = costs;
    let mut g = argmin(&pbest_cost);
    let mut gbest = pbest[g].clone();
    let mut gbest_cost = pbest_cost[g];
    let mut history = Vec::with_capacity(config.iterations + 1);
    history.push(gbest_cost);

    for _ in 0..config.iterations {
        for p in 0..n {
            for d in 0..dims.len() {
                let r1: f64 = rng.gen();
                let r2: f64 = rng.gen();
                let x = positions[p][d];
                let v = config.inertia * velocities[p][d]
                    + config.cognitive * r1 * (pbest[p][d] - x)
                    + config.social * r2 * (gbest[d] - x);
                let v = v.clamp(-vmax[d], vmax[d]);
                let moved = x + v;
                let clamped = moved.clamp(dims[d].lower, dims[d].upper);
                velocities[p][d] = if clamped == moved { v } else { 0.0 };
                positions[p][d] = clamped;
            }
        }
        let costs = evaluate(&positions);
        evaluations += n;
        for p in 0..n {
            if costs[p] < pbest_cost[p] {
                pbest_cost[p] = costs[p];
                pbest[p].clone_from(&positions[p]);
            }
        }
        g = argmin(&pbest_cost);
        if pbest_cost[g] < gbest_cost {
            gbest_cost = pbest_cost[g];
            gbest.clone_from(&pbest[g]);
        }
        history.push(gbest_cost);
    }

    if invalid > 0 {
        log::warn!("{invalid} of {evaluations} objective evaluations were not finite");
    }
    Ok(PsoResult {
        best_position: gbest,
        best_cost: gbest_cost,
        cost_history: history,
        evaluations,
        invalid_evaluations: invalid,
        seed: config.seed,
    })
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Rejects dimensions that are not PID gains.
pub fn check_gain_space(space: &SearchSpace) -> Result<(), OptimError> {
    space.validate()?;
    for d in space.dims() {
        if !GAIN_NAMES.contains(&d.name.as_str()) {
            return Err(OptimError::InvalidSpace(format!(
                "`{}` is not a tunable gain (expected kp, ki or kd)",
                d.name
            )));
        }
    }
    Ok(())
}

/// Template gains with the searched components overwritten by `position`.
pub fn gains_at(template: &PidGains, space: &SearchSpace, position: &[f64]) -> PidGains {
    let mut g = *template;
    for (d, x) in space.dims().iter().zip(position) {
        match d.name.as_str() {
            "kp" => g.kp = *x,
            "ki" => g.ki = *x,
            "kd" => g.kd = *x,
            _ => {}
        }
    }
    g
}

/// Template gains with the bias preset to the feed-forward duty and the
/// output limits set to the plant duty bounds.
pub fn seeded_template(params: &ConverterParams, template: &PidGains, v_ref: f64) -> Result<PidGains, OptimError> {
    let bias = duty_for_target(params, v_ref)?.clamp(params.duty_min, params.duty_max);
    Ok(PidGains {
        bias,
        out_min: params.duty_min,
        out_max: params.duty_max,
        ..*template
    })
}

/// Closed-loop cost of one gain set; failures score the ceiling.
pub fn closed_loop_cost(
    params: &ConverterParams,
    spec: &ControllerSpec,
    targets: &IndicatorTargets,
    sim: &SimConfig,
) -> f64 {
    let Ok(mut controller) = make_controller(spec) else {
        return FAILURE_COST;
    };
    match run_closed_loop(params, controller.as_mut(), sim) {
        Ok(run) => evaluate_run(&run, sim.v_ref, targets).cost,
        Err(_) => FAILURE_COST,
    }
}

/// Tunes the gains named in `space` with PSO, holding the others at the
/// template values.
pub fn tune_gains(
    params: &ConverterParams,
    spec_template: &ControllerSpec,
    targets: &IndicatorTargets,
    sim: &SimConfig,
    space: &SearchSpace,
    config: &PsoConfig,
) -> Result<(PidGains, PsoResult), OptimError> {
    let template = seeded_template(params, &spec_template.gains, sim.v_ref)?;
    check_gain_space(space)?;
    config.validate()?;
    params.validate()?;
    sim.validate()?;
    if spec_template.is_registered() {
        template.validate()?;
    } else {
        return Err(ControlError::UnsupportedAlgorithm(spec_template.algorithm.clone()).into());
    }

    let fitness = |x: &[f64]| {
        let spec = spec_template.with_gains(gains_at(&template, space, x));
        closed_loop_cost(params, &spec, targets, sim)
    };
    let result = pso_minimize(fitness, space, config)?;
    Ok((gains_at(&template, space, &result.best_position), result))
}
