//! Averaged continuous-conduction-mode models of buck, boost and buck-boost
//! converters.
//!
//! The switch and diode are ideal, there is no ESR, and the inductor current
//! is allowed to go negative. The duty cycle enters as a continuous input, so
//! each topology is a smooth two-state ODE with a closed-form equilibrium.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DUTY_MIN: f64 = 0.0;
pub const DEFAULT_DUTY_MAX: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid converter parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("duty {duty} outside [{min}, {max}]")]
    DutyOutOfRange { duty: f64, min: f64, max: f64 },
    #[error("numeric fault: {0}")]
    NumericFault(String),
    #[error("target {v_ref} V unreachable; feasible output range is [{min}, {max}] V")]
    UnreachableTarget { v_ref: f64, min: f64, max: f64 },
}

/// Converter topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Buck,
    Boost,
    BuckBoost,
}

impl Topology {
    pub const ALL: [Topology; 3] = [Topology::Buck, Topology::Boost, Topology::BuckBoost];

    pub fn as_str(self) -> &'static str {
        match self {
            Topology::Buck => "buck",
            Topology::Boost => "boost",
            Topology::BuckBoost => "buck_boost",
        }
    }

    /// Ideal steady-state voltage gain `v_out / v_in` at duty `d`.
    pub fn gain(self, duty: f64) -> f64 {
        match self {
            Topology::Buck => duty,
            Topology::Boost => 1.0 / (1.0 - duty),
            Topology::BuckBoost => duty / (1.0 - duty),
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown topology `{0}` (expected buck, boost or buck_boost)")]
pub struct UnknownTopology(pub String);

impl FromStr for Topology {
    type Err = UnknownTopology;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized: String = s
            .trim()
            .chars()
            .filter(|c| !matches!(c, '_' | '-' | ' '))
            .collect::<String>()
            .to_ascii_lowercase();
        match normalized.as_str() {
            "buck" => Ok(Topology::Buck),
            "boost" => Ok(Topology::Boost),
            "buckboost" => Ok(Topology::BuckBoost),
            _ => Err(UnknownTopology(s.to_string())),
        }
    }
}

/// Plant topology plus electrical parameters and duty limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConverterParams {
    pub topology: Topology,
    /// Source voltage (V).
    pub v_in: f64,
    /// Inductance (H).
    pub inductance: f64,
    /// Output capacitance (F).
    pub capacitance: f64,
    /// Load resistance (Ω).
    pub load_resistance: f64,
    pub duty_min: f64,
    pub duty_max: f64,
}

impl ConverterParams {
    /// Builds and validates a parameter set with the default duty limits.
    pub fn new(
        topology: Topology,
        v_in: f64,
        inductance: f64,
        capacitance: f64,
        load_resistance: f64,
    ) -> Result<Self, ModelError> {
        let params = Self {
            topology,
            v_in,
            inductance,
            capacitance,
            load_resistance,
            duty_min: DEFAULT_DUTY_MIN,
            duty_max: DEFAULT_DUTY_MAX,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_duty_bounds(mut self, duty_min: f64, duty_max: f64) -> Result<Self, ModelError> {
        self.duty_min = duty_min;
        self.duty_max = duty_max;
        self.validate()?;
        Ok(self)
    }

    pub fn with_load_resistance(mut self, load_resistance: f64) -> Result<Self, ModelError> {
        self.load_resistance = load_resistance;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("v_in", self.v_in),
            ("inductance", self.inductance),
            ("capacitance", self.capacitance),
            ("load_resistance", self.load_resistance),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::InvalidParams {
                    field,
                    reason: format!("must be finite and > 0, got {value}"),
                });
            }
        }
        if !(self.duty_min.is_finite() && (0.0..1.0).contains(&self.duty_min)) {
            return Err(ModelError::InvalidParams {
                field: "duty_min",
                reason: format!("must lie in [0, 1), got {}", self.duty_min),
            });
        }
        if !(self.duty_max.is_finite() && self.duty_max > self.duty_min && self.duty_max < 1.0) {
            return Err(ModelError::InvalidParams {
                field: "duty_max",
                reason: format!(
                    "must lie in ({}, 1), got {}",
                    self.duty_min, self.duty_max
                ),
            });
        }
        Ok(())
    }

    /// Output voltage interval reachable at equilibrium within the duty bounds.
    pub fn feasible_output_range(&self) -> (f64, f64) {
        (
            self.v_in * self.topology.gain(self.duty_min),
            self.v_in * self.topology.gain(self.duty_max),
        )
    }

    fn check_duty(&self, duty: f64) -> Result<(), ModelError> {
        if duty.is_finite() && duty >= self.duty_min && duty <= self.duty_max {
            Ok(())
        } else {
            Err(ModelError::DutyOutOfRange {
                duty,
                min: self.duty_min,
                max: self.duty_max,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    pub inductor_current: f64,
    pub capacitor_voltage: f64,
}

impl PlantState {
    pub fn new(inductor_current: f64, capacitor_voltage: f64) -> Self {
        Self {
            inductor_current,
            capacitor_voltage,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.inductor_current.is_finite() && self.capacitor_voltage.is_finite()
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.inductor_current, self.capacitor_voltage]
    }

    pub fn from_array([i, v]: [f64; 2]) -> Self {
        Self::new(i, v)
    }
}

/// Time derivative of [`PlantState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantStateDerivative {
    /// d i_L / dt (A/s)
    pub inductor_current: f64,
    /// d v_C / dt (V/s)
    pub capacitor_voltage: f64,
}

/// Right-hand side of the averaged model.
///
/// Buck-boost uses the magnitude convention, so its output voltage is
/// reported positive.
pub fn derivatives(
    params: &ConverterParams,
    state: &PlantState,
    duty: f64,
) -> Result<PlantStateDerivative, ModelError> {
    params.check_duty(duty)?;
    if !state.is_finite() {
        return Err(ModelError::NumericFault(format!(
            "non-finite plant state (i_L={}, v_C={})",
            state.inductor_current, state.capacitor_voltage
        )));
    }
    let i_l = state.inductor_current;
    let v_c = state.capacitor_voltage;
    let l = params.inductance;
    let c = params.capacitance;
    let load_current = v_c / params.load_resistance;
    let off = 1.0 - duty;
    let (di, dv) = match params.topology {
        Topology::Boost => ((params.v_in - off * v_c) / l, (off * i_l - load_current) / c),
        Topology::Buck => ((duty * params.v_in - v_c) / l, (i_l - load_current) / c),
        Topology::BuckBoost => (
            (duty * params.v_in - off * v_c) / l,
            (off * i_l - load_current) / c,
        ),
    };
    Ok(PlantStateDerivative {
        inductor_current: di,
        capacitor_voltage: dv,
    })
}

/// Equilibrium of the averaged model at a fixed duty.
pub fn steady_state(params: &ConverterParams, duty: f64) -> Result<PlantState, ModelError> {
    params.check_duty(duty)?;
    let v_c = params.v_in * params.topology.gain(duty);
    let i_l = match params.topology {
        Topology::Buck => v_c / params.load_resistance,
        Topology::Boost | Topology::BuckBoost => v_c / ((1.0 - duty) * params.load_resistance),
    };
    Ok(PlantState::new(i_l, v_c))
}

/// Duty whose equilibrium output equals `v_ref`.
pub fn duty_for_target(params: &ConverterParams, v_ref: f64) -> Result<f64, ModelError> {
    let (min, max) = params.feasible_output_range();
    let unreachable = || ModelError::UnreachableTarget { v_ref, min, max };
    if !v_ref.is_finite() || v_ref < min || v_ref > max {
        return Err(unreachable());
    }
    let duty = match params.topology {
        Topology::Buck => v_ref / params.v_in,
        Topology::Boost => 1.0 - params.v_in / v_ref,
        Topology::BuckBoost => v_ref / (v_ref + params.v_in),
    };
    // the inversion can land an ulp outside the bounds at the interval ends
    Ok(duty.clamp(params.duty_min, params.duty_max))
}
