//! PID control with output saturation and conditional-integration
//! anti-windup, plus the declarative [`ControllerSpec`] that the design
//! pipeline hands from the algorithm stage to the tuning stage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numfmt::sig9;

/// Name under which the PID law is registered.
pub const PID: &str = "PID";

/// Algorithms [`make_controller`] knows how to instantiate.
pub const REGISTERED_ALGORITHMS: &[&str] = &[PID];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("unsupported controller algorithm `{0}`")]
    UnsupportedAlgorithm(String),
    #[error("invalid gains: {0}")]
    InvalidGains(String),
    #[error("non-finite error signal {0}")]
    NonFiniteError(f64),
    #[error("time step must be > 0, got {0}")]
    InvalidTimeStep(f64),
}

/// A closed-loop controller mapping tracking error to a duty command.
pub trait Controller {
    fn update(&mut self, error: f64, dt: f64) -> f64;
}

impl<F> Controller for F
where
    F: FnMut(f64, f64) -> f64,
{
    fn update(&mut self, error: f64, dt: f64) -> f64 {
        self(error, dt)
    }
}

/// PID coefficients, feed-forward bias and output limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub bias: f64,
    pub out_min: f64,
    pub out_max: f64,
}

impl PidGains {
    pub fn validate(&self) -> Result<(), ControlError> {
        for (name, g) in [("kp", self.kp), ("ki", self.ki), ("kd", self.kd)] {
            if !(g.is_finite() && g >= 0.0) {
                return Err(ControlError::InvalidGains(format!(
                    "{name} must be finite and >= 0, got {g}"
                )));
            }
        }
        if !(self.bias.is_finite() && (0.0..1.0).contains(&self.bias)) {
            return Err(ControlError::InvalidGains(format!(
                "bias must lie in [0, 1), got {}",
                self.bias
            )));
        }
        if !(self.out_min.is_finite() && self.out_max.is_finite() && self.out_min < self.out_max) {
            return Err(ControlError::InvalidGains(format!(
                "output limits must satisfy out_min < out_max, got [{}, {}]",
                self.out_min, self.out_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    /// Accumulated error integral (V·s).
    pub integral: f64,
    pub prev_error: f64,
    pub initialized: bool,
}

/// One PID step.
///
/// The integral only accepts the new increment when the tentative output is
/// inside `[out_min, out_max]`, or when the error pushes it back toward the
/// band. `ki * integral` is additionally held inside
/// `[out_min - bias, out_max - bias]`.
pub fn pid_update(
    gains: &PidGains,
    state: &PidState,
    error: f64,
    dt: f64,
) -> Result<(f64, PidState), ControlError> {
    if !error.is_finite() {
        return Err(ControlError::NonFiniteError(error));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(ControlError::InvalidTimeStep(dt));
    }

    let derivative = if state.initialized {
        (error - state.prev_error) / dt
    } else {
        0.0
    };
    let fixed = gains.bias + gains.kp * error + gains.kd * derivative;

    let candidate = state.integral + error * dt;
    let tentative = fixed + gains.ki * candidate;
    let winding_up = (tentative > gains.out_max && error > 0.0)
        || (tentative < gains.out_min && error < 0.0);
    let mut integral = if winding_up { state.integral } else { candidate };
    if gains.ki > 0.0 {
        let lo = (gains.out_min - gains.bias) / gains.ki;
        let hi = (gains.out_max - gains.bias) / gains.ki;
        integral = integral.clamp(lo.min(hi), hi.max(lo));
    }

    let raw = fixed + gains.ki * integral;
    let duty = raw.clamp(gains.out_min, gains.out_max);
    let next = PidState {
        integral,
        prev_error: error,
        initialized: true,
    };
    Ok((duty, next))
}

/// Stateful PID instance.
#[derive(Debug, Clone)]
pub struct PidController {
    gains: PidGains,
    state: PidState,
}

impl PidController {
    pub fn new(gains: PidGains) -> Result<Self, ControlError> {
        gains.validate()?;
        Ok(Self {
            gains,
            state: PidState::default(),
        })
    }

    pub fn gains(&self) -> &PidGains {
        &self.gains
    }

    pub fn state(&self) -> &PidState {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state = PidState::default();
    }
}

impl Controller for PidController {
    /// A non-finite error or time step yields NaN, which the simulation
    /// environment reports as a numeric fault.
    fn update(&mut self, error: f64, dt: f64) -> f64 {
        match pid_update(&self.gains, &self.state, error, dt) {
            Ok((duty, next)) => {
                self.state = next;
                duty
            }
            Err(_) => f64::NAN,
        }
    }
}

/// Declarative controller design: which law, with which parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSpec {
    pub algorithm: String,
    pub gains: PidGains,
    pub description: String,
}

impl ControllerSpec {
    pub fn pid(gains: PidGains) -> Self {
        Self {
            algorithm: PID.to_string(),
            description: render_pid(&gains),
            gains,
        }
    }

    /// Same spec with new gains; the description is re-rendered.
    pub fn with_gains(&self, gains: PidGains) -> Self {
        let mut spec = self.clone();
        spec.gains = gains;
        spec.description = spec.render_description();
        spec
    }

    pub fn render_description(&self) -> String {
        if self.algorithm == PID {
            render_pid(&self.gains)
        } else {
            format!("{} (unregistered)", self.algorithm)
        }
    }

    pub fn is_registered(&self) -> bool {
        REGISTERED_ALGORITHMS.contains(&self.algorithm.as_str())
    }
}

fn render_pid(g: &PidGains) -> String {
    format!(
        "PID: duty = clamp({} + {}*e + {}*integral(e dt) + {}*de/dt, {}, {}); \
         derivative by backward difference, conditional-integration anti-windup",
        sig9(g.bias),
        sig9(g.kp),
        sig9(g.ki),
        sig9(g.kd),
        sig9(g.out_min),
        sig9(g.out_max),
    )
}

/// Instantiates the controller described by `spec`, starting from a fresh
/// state.
pub fn make_controller(spec: &ControllerSpec) -> Result<Box<dyn Controller + Send>, ControlError> {
    match spec.algorithm.as_str() {
        PID => Ok(Box::new(PidController::new(spec.gains)?)),
        other => Err(ControlError::UnsupportedAlgorithm(other.to_string())),
    }
}
