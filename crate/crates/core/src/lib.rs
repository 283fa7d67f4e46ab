//! Objective-oriented controller design for DC-DC converters.
//!
//! A design task (converter, reference voltage, performance limits) flows
//! through a fixed set of role agents: objectives, plant model, controller
//! structure, gain tuning by particle swarm against closed-loop simulation,
//! and verification. A manager loops on evaluator suggestions until the
//! limits are met or the round budget runs out.
//!
//! The numeric building blocks are usable on their own:
//!
//! - [`converter_models`]: averaged buck/boost/buck-boost ODEs and equilibria
//! - [`simulation`]: RK4, the reset/step environment, closed-loop runs
//! - [`control`]: PID with anti-windup, controller specs
//! - [`metrics`]: steady-state error, overshoot, settling time, cost
//! - [`optimization`]: particle swarm and gain tuning
//! - [`agents`]: task translation, role agents, planners, the design session

pub mod agents;
pub mod control;
pub mod converter_models;
pub mod metrics;
pub mod numfmt;
pub mod optimization;
pub mod simulation;

pub use control::{make_controller, Controller, ControllerSpec, PidGains};
pub use converter_models::{ConverterParams, PlantState, Topology};
pub use metrics::{IndicatorTargets, PerformanceReport, SettlingTime};
pub use optimization::{PsoConfig, PsoResult, SearchSpace};
pub use simulation::{SimConfig, SimTrace};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
