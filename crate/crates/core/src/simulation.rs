//! Fixed-step RK4 integration of the averaged converter models and an
//! episodic reset/step environment for closed-loop runs.
//!
//! The controller is sampled at every integration step and its duty command
//! is held constant across the step. Trace samples are uniformly spaced at
//! `dt`; `duties[i]` is the duty held from `times[i]` to `times[i + 1]` (the
//! final entry repeats the last command).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::Controller;
use crate::converter_models::{derivatives, ConverterParams, ModelError, PlantState};

pub const DEFAULT_DT: f64 = 1e-5;
pub const DEFAULT_HORIZON: f64 = 0.1;
/// Minimum number of integration steps per episode.
pub const MIN_STEPS: usize = 100;

/// Column order of the exported trace.
pub const TRACE_CSV_HEADER: [&str; 4] = ["time_s", "inductor_current_a", "capacitor_voltage_v", "duty"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    NumericFault(#[from] NumericFault),
    #[error("step called before reset")]
    NotReset,
    #[error("episode already finished; call reset")]
    EpisodeFinished,
}

/// Non-finite value encountered while integrating.
#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[error("numeric fault at step {step}: {detail}")]
pub struct NumericFault {
    pub step: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadStep {
    pub time: f64,
    pub new_resistance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub initial_state: PlantState,
    pub v_ref: f64,
    pub load_step: Option<LoadStep>,
}

impl SimConfig {
    /// Default step and horizon, cold start from (0 A, 0 V).
    pub fn new(v_ref: f64) -> Self {
        Self {
            dt: DEFAULT_DT,
            horizon: DEFAULT_HORIZON,
            initial_state: PlantState::default(),
            v_ref,
            load_step: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return bad(format!("horizon must be > 0, got {}", self.horizon));
        }
        if self.steps() < MIN_STEPS {
            return bad(format!(
                "horizon {} s must cover at least {MIN_STEPS} steps of {} s",
                self.horizon, self.dt
            ));
        }
        if !(self.v_ref.is_finite() && self.v_ref > 0.0) {
            return bad(format!("v_ref must be > 0, got {}", self.v_ref));
        }
        if !self.initial_state.is_finite() {
            return bad("initial_state must be finite".into());
        }
        if let Some(ls) = self.load_step {
            if !(ls.time.is_finite() && ls.time >= 0.0 && ls.time < self.horizon) {
                return bad(format!("load_step.time must lie in [0, horizon), got {}", ls.time));
            }
            if !(ls.new_resistance.is_finite() && ls.new_resistance > 0.0) {
                return bad(format!("load_step.new_resistance must be > 0, got {}", ls.new_resistance));
            }
        }
        Ok(())
    }

    /// Number of integration steps, `floor(horizon / dt)`.
    pub fn steps(&self) -> usize {
        // tolerate representation error when horizon is an exact multiple
        (self.horizon / self.dt * (1.0 + 1e-12)).floor() as usize
    }
}

/// Classical RK4 step of `dx/dt = f(x)` for a fixed-size state.
pub fn rk4<const N: usize, E>(
    f: impl Fn(&[f64; N]) -> Result<[f64; N], E>,
    x: &[f64; N],
    dt: f64,
) -> Result<[f64; N], E> {
    let offset = |base: &[f64; N], k: &[f64; N], h: f64| -> [f64; N] {
        std::array::from_fn(|i| base[i] + h * k[i])
    };
    let k1 = f(x)?;
    let k2 = f(&offset(x, &k1, dt / 2.0))?;
    let k3 = f(&offset(x, &k2, dt / 2.0))?;
    let k4 = f(&offset(x, &k3, dt))?;
    Ok(std::array::from_fn(|i| {
        x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    }))
}

/// Advances the plant one step with `duty` held constant.
pub fn rk4_step(
    params: &ConverterParams,
    state: &PlantState,
    duty: f64,
    dt: f64,
) -> Result<PlantState, ModelError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(ModelError::NumericFault(format!("time step must be > 0, got {dt}")));
    }
    let next = rk4(
        |x: &[f64; 2]| {
            derivatives(params, &PlantState::from_array(*x), duty)
                .map(|d| [d.inductor_current, d.capacitor_voltage])
        },
        &state.to_array(),
        dt,
    )?;
    let next = PlantState::from_array(next);
    if !next.is_finite() {
        return Err(ModelError::NumericFault(format!(
            "integration produced non-finite state (i_L={}, v_C={})",
            next.inductor_current, next.capacitor_voltage
        )));
    }
    Ok(next)
}

#[derive(Debug, Error)]
pub enum TraceCsvError {
    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace header mismatch in column {column}: expected `{expected}`, found `{found}`")]
    Header {
        column: usize,
        expected: &'static str,
        found: String,
    },
    #[error("trace row {row}, column `{column}`: {reason}")]
    Field {
        row: usize,
        column: &'static str,
        reason: String,
    },
    #[error("invalid trace: {0}")]
    Invalid(String),
}

/// Uniformly sampled closed-loop record.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimTrace {
    pub times: Vec<f64>,
    pub states: Vec<PlantState>,
    pub duties: Vec<f64>,
    pub outputs: Vec<f64>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Sample spacing, taken from the first interval.
    pub fn dt(&self) -> Option<f64> {
        (self.times.len() >= 2).then(|| self.times[1] - self.times[0])
    }

    /// Time covered by the trace.
    pub fn duration(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Checks the structural invariants: at least two samples, equal-length
    /// columns, strictly increasing uniformly spaced times.
    pub fn validate(&self) -> Result<(), TraceCsvError> {
        let n = self.times.len();
        if n < 2 {
            return Err(TraceCsvError::Invalid(format!("need at least 2 samples, got {n}")));
        }
        if self.states.len() != n || self.duties.len() != n || self.outputs.len() != n {
            return Err(TraceCsvError::Invalid("column lengths differ".into()));
        }
        let dt = self.times[1] - self.times[0];
        if !(dt > 0.0) {
            return Err(TraceCsvError::Invalid("times must be strictly increasing".into()));
        }
        for (i, w) in self.times.windows(2).enumerate() {
            let step = w[1] - w[0];
            if !(step > 0.0) || (step - dt).abs() > 1e-6 * dt {
                return Err(TraceCsvError::Invalid(format!(
                    "non-uniform spacing between samples {i} and {}",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// Writes the trace as CSV. Floats use the shortest representation that
    /// parses back to the same value.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TraceCsvError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TRACE_CSV_HEADER)?;
        for i in 0..self.len() {
            let s = &self.states[i];
            w.write_record(&[
                self.times[i].to_string(),
                s.inductor_current.to_string(),
                s.capacitor_voltage.to_string(),
                self.duties[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }

    /// Parses and validates a trace written by [`SimTrace::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, TraceCsvError> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = r.headers()?.clone();
        for (column, expected) in TRACE_CSV_HEADER.iter().enumerate() {
            let found = headers.get(column).unwrap_or("").trim();
            if found != *expected {
                return Err(TraceCsvError::Header {
                    column,
                    expected,
                    found: found.to_string(),
                });
            }
        }
        if headers.len() != TRACE_CSV_HEADER.len() {
            return Err(TraceCsvError::Header {
                column: TRACE_CSV_HEADER.len(),
                expected: "<end of header>",
                found: headers.get(TRACE_CSV_HEADER.len()).unwrap_or("").to_string(),
            });
        }
        let mut trace = SimTrace::default();
        for (idx, record) in r.records().enumerate() {
            // row 1 is the header
            let row = idx + 2;
            let record = record?;
            let mut values = [0.0; 4];
            for (c, column) in TRACE_CSV_HEADER.iter().enumerate() {
                let raw = record.get(c).ok_or_else(|| TraceCsvError::Field {
                    row,
                    column,
                    reason: "missing value".into(),
                })?;
                let v: f64 = raw.trim().parse().map_err(|_| TraceCsvError::Field {
                    row,
                    column,
                    reason: format!("`{raw}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(TraceCsvError::Field {
                        row,
                        column,
                        reason: "non-finite value".into(),
                    });
                }
                values[c] = v;
            }
            trace.times.push(values[0]);
            trace.states.push(PlantState::new(values[1], values[2]));
            trace.outputs.push(values[2]);
            trace.duties.push(values[3]);
        }
        trace.validate()?;
        Ok(trace)
    }
}

/// What the controller sees after each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub v_out: f64,
    /// `v_ref - v_out`
    pub error: f64,
}

/// Episodic closed-loop environment around one converter.
#[derive(Debug, Clone)]
pub struct ConverterEnv {
    base_params: ConverterParams,
    params: ConverterParams,
    config: SimConfig,
    state: PlantState,
    step_index: usize,
    total_steps: usize,
    ready: bool,
    times: Vec<f64>,
    states: Vec<PlantState>,
    duties: Vec<f64>,
}

impl ConverterEnv {
    pub fn new(params: ConverterParams, config: SimConfig) -> Result<Self, SimError> {
        params.validate()?;
        config.validate()?;
        let total_steps = config.steps();
        Ok(Self {
            base_params: params,
            params,
            config,
            state: config.initial_state,
            step_index: 0,
            total_steps,
            ready: false,
            times: Vec::with_capacity(total_steps + 1),
            states: Vec::with_capacity(total_steps + 1),
            duties: Vec::with_capacity(total_steps + 1),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Parameters currently in effect (after any load step).
    pub fn params(&self) -> &ConverterParams {
        &self.params
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.config.dt
    }

    pub fn steps_taken(&self) -> usize {
        self.step_index
    }

    pub fn is_done(&self) -> bool {
        self.ready && self.step_index >= self.total_steps
    }

    fn observe(&self) -> Observation {
        let v_out = self.state.capacitor_voltage;
        Observation {
            v_out,
            error: self.config.v_ref - v_out,
        }
    }

    pub fn reset(&mut self) -> Observation {
        self.params = self.base_params;
        self.state = self.config.initial_state;
        self.step_index = 0;
        self.ready = true;
        self.times.clear();
        self.states.clear();
        self.duties.clear();
        self.times.push(0.0);
        self.states.push(self.state);
        self.observe()
    }

    /// Clamps `duty` to the plant limits, integrates one step and records the
    /// new sample. Returns the observation and whether the horizon is reached.
    pub fn step(&mut self, duty: f64) -> Result<(Observation, bool), SimError> {
        if !self.ready {
            return Err(SimError::NotReset);
        }
        if self.is_done() {
            return Err(SimError::EpisodeFinished);
        }
        if duty.is_nan() {
            return Err(NumericFault {
                step: self.step_index,
                detail: "controller produced a NaN duty".into(),
            }
            .into());
        }
        let duty = duty.clamp(self.params.duty_min, self.params.duty_max);
        let next = rk4_step(&self.params, &self.state, duty, self.config.dt).map_err(|e| match e {
            ModelError::NumericFault(detail) => SimError::NumericFault(NumericFault {
                step: self.step_index,
                detail,
            }),
            other => SimError::Model(other),
        })?;
        self.duties.push(duty);
        self.state = next;
        self.step_index += 1;
        let t = self.time();
        self.times.push(t);
        self.states.push(next);

        if let Some(ls) = self.config.load_step {
            let previous = (self.step_index - 1) as f64 * self.config.dt;
            if previous < ls.time && t >= ls.time {
                self.params = self.params.with_load_resistance(ls.new_resistance)?;
            }
        }
        Ok((self.observe(), self.is_done()))
    }

    /// Snapshot of the samples recorded since the last reset.
    pub fn trace(&self) -> SimTrace {
        let mut duties = self.duties.clone();
        let hold = duties.last().copied().unwrap_or(self.params.duty_min);
        duties.resize(self.times.len(), hold);
        SimTrace {
            times: self.times.clone(),
            states: self.states.clone(),
            outputs: self.states.iter().map(|s| s.capacitor_voltage).collect(),
            duties,
        }
    }
}

/// A run aborted by a numeric fault, with the samples recorded up to it.
#[derive(Debug, Clone, PartialEq)]
pub struct FailedRun {
    pub fault: NumericFault,
    pub partial: SimTrace,
}

pub type RunResult = Result<SimTrace, FailedRun>;

/// Runs `controller` against the plant from reset until the horizon.
///
/// Configuration errors are reported through `Err(SimError)` before any
/// integration; numeric faults during the run come back as `Ok(Err(FailedRun))`.
pub fn run_closed_loop(
    params: &ConverterParams,
    controller: &mut dyn Controller,
    config: &SimConfig,
) -> Result<RunResult, SimError> {
    let mut env = ConverterEnv::new(*params, *config)?;
    let mut obs = env.reset();
    let dt = config.dt;
    loop {
        let duty = controller.update(obs.error, dt);
        match env.step(duty) {
            Ok((next, done)) => {
                obs = next;
                if done {
                    return Ok(Ok(env.trace()));
                }
            }
            Err(SimError::NumericFault(fault)) => {
                return Ok(Err(FailedRun {
                    fault,
                    partial: env.trace(),
                }))
            }
            Err(other) => return Err(other),
        }
    }
}
