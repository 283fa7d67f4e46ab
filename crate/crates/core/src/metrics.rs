//! Step-response indicators and the scalar cost the optimizer minimizes.
//!
//! Judged indicators are steady-state error, percent overshoot and settling
//! time. The 10–90 % rise time is reported for information only.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::simulation::{RunResult, SimTrace};

pub const DEFAULT_SETTLING_BAND: f64 = 0.02;
/// The steady-state error averages the final `1 / SSE_WINDOW_DIVISOR` of the
/// samples, rounded up.
pub const SSE_WINDOW_DIVISOR: usize = 10;
pub const PENALTY_WEIGHT: f64 = 10.0;
/// Cost of a failed simulation, and upper bound on every other cost.
pub const FAILURE_COST: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorTargets {
    /// Volts.
    pub max_steady_state_error: f64,
    /// Percent of the reference.
    pub max_overshoot: f64,
    /// Seconds.
    pub max_settling_time: f64,
    /// Fraction of the reference.
    pub settling_band: f64,
}

impl IndicatorTargets {
    pub fn validate(&self, horizon: f64) -> Result<(), String> {
        if !(self.max_steady_state_error.is_finite() && self.max_steady_state_error >= 0.0) {
            return Err(format!(
                "max_steady_state_error must be >= 0, got {}",
                self.max_steady_state_error
            ));
        }
        if !(self.max_overshoot.is_finite() && self.max_overshoot >= 0.0) {
            return Err(format!("max_overshoot must be >= 0, got {}", self.max_overshoot));
        }
        if !(self.max_settling_time.is_finite() && self.max_settling_time > 0.0) {
            return Err(format!("max_settling_time must be > 0, got {}", self.max_settling_time));
        }
        if self.max_settling_time > horizon {
            return Err(format!(
                "max_settling_time {} exceeds the simulation horizon {horizon}",
                self.max_settling_time
            ));
        }
        if !(self.settling_band > 0.0 && self.settling_band <= 0.2) {
            return Err(format!("settling_band must lie in (0, 0.2], got {}", self.settling_band));
        }
        Ok(())
    }
}

/// Settling time, or the absence of one.
///
/// Serializes as a number of seconds or the string `"unsettled"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SettlingTime {
    Settled(f64),
    Unsettled,
}

impl SettlingTime {
    pub fn seconds(self) -> Option<f64> {
        match self {
            SettlingTime::Settled(t) => Some(t),
            SettlingTime::Unsettled => None,
        }
    }
}

impl fmt::Display for SettlingTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SettlingTime::Settled(t) => write!(f, "{t}"),
            SettlingTime::Unsettled => f.write_str("unsettled"),
        }
    }
}

impl Serialize for SettlingTime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SettlingTime::Settled(t) => s.serialize_f64(*t),
            SettlingTime::Unsettled => s.serialize_str("unsettled"),
        }
    }
}

impl<'de> Deserialize<'de> for SettlingTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = SettlingTime;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number of seconds or \"unsettled\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<SettlingTime, E> {
                Ok(SettlingTime::Settled(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<SettlingTime, E> {
                Ok(SettlingTime::Settled(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<SettlingTime, E> {
                Ok(SettlingTime::Settled(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<SettlingTime, E> {
                if v == "unsettled" {
                    Ok(SettlingTime::Unsettled)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    SteadyStateError,
    Overshoot,
    SettlingTime,
}

impl Indicator {
    pub const ALL: [Indicator; 3] = [
        Indicator::SteadyStateError,
        Indicator::Overshoot,
        Indicator::SettlingTime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Indicator::SteadyStateError => "steady_state_error",
            Indicator::Overshoot => "overshoot",
            Indicator::SettlingTime => "settling_time",
        }
    }
}

/// Judgement of one indicator against its limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub indicator: Indicator,
    /// `None` when the indicator has no value (unsettled).
    pub value: Option<f64>,
    pub limit: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    /// Volts.
    pub steady_state_error: f64,
    /// Percent.
    pub overshoot: f64,
    pub settling_time: SettlingTime,
    /// 10–90 % rise time in seconds; informational, never judged.
    pub rise_time: Option<f64>,
    pub verdicts: Vec<Verdict>,
    pub cost: f64,
    pub simulation_failed: bool,
}

impl PerformanceReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn failing(&self) -> Vec<Indicator> {
        self.verdicts
            .iter()
            .filter(|v| !v.passed)
            .map(|v| v.indicator)
            .collect()
    }
}

/// `|mean(final 10 % of outputs) - v_ref|`.
pub fn steady_state_error(trace: &SimTrace, v_ref: f64) -> f64 {
    let n = trace.outputs.len();
    if n == 0 {
        return f64::INFINITY;
    }
    let window = sse_window(n);
    let tail = &trace.outputs[n - window..];
    let mean = tail.iter().sum::<f64>() / window as f64;
    (mean - v_ref).abs()
}

/// Number of trailing samples averaged by [`steady_state_error`].
pub fn sse_window(samples: usize) -> usize {
    samples.div_ceil(SSE_WINDOW_DIVISOR).max(1)
}

/// Peak excess over `v_ref` in percent, floored at zero.
pub fn overshoot(trace: &SimTrace, v_ref: f64) -> f64 {
    let peak = trace.outputs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ((peak - v_ref) / v_ref).max(0.0) * 100.0
}

/// Earliest sample time after which every output stays within
/// `band * v_ref` of the reference.
pub fn settling_time(trace: &SimTrace, v_ref: f64, band: f64) -> SettlingTime {
    let tol = band * v_ref;
    let inside = |v: f64| (v - v_ref).abs() <= tol;
    // scan backwards for the last sample outside the band
    let mut first_settled = trace.outputs.len();
    for (i, v) in trace.outputs.iter().enumerate().rev() {
        if inside(*v) {
            first_settled = i;
        } else {
            break;
        }
    }
    match trace.times.get(first_settled) {
        Some(t) => SettlingTime::Settled(*t - trace.times[0]),
        None => SettlingTime::Unsettled,
    }
}

/// Time between first reaching 10 % and first reaching 90 % of `v_ref`.
pub fn rise_time(trace: &SimTrace, v_ref: f64) -> Option<f64> {
    let first_at = |level: f64| {
        trace
            .outputs
            .iter()
            .position(|v| *v >= level * v_ref)
            .map(|i| trace.times[i])
    };
    Some(first_at(0.9)? - first_at(0.1)?)
}

/// Integral of time-weighted absolute error (trapezoidal), normalized by
/// `v_ref * T^2 / 2` so that a constant error `e` scores `e / v_ref`.
pub fn normalized_itae(trace: &SimTrace, v_ref: f64) -> f64 {
    let t0 = trace.times.first().copied().unwrap_or(0.0);
    let duration = trace.duration();
    if duration <= 0.0 {
        return 0.0;
    }
    let weighted = |i: usize| (trace.times[i] - t0) * (v_ref - trace.outputs[i]).abs();
    let integral: f64 = (1..trace.len())
        .map(|i| 0.5 * (trace.times[i] - trace.times[i - 1]) * (weighted(i - 1) + weighted(i)))
        .sum();
    integral / (v_ref * duration * duration / 2.0)
}

fn relative_excess(value: f64, limit: f64) -> f64 {
    if value <= limit {
        0.0
    } else {
        (value - limit) / limit.max(f64::MIN_POSITIVE)
    }
}

/// Sum of relative constraint violations (each `excess / limit`).
///
/// An unsettled response counts as settling at the end of the trace plus one
/// full limit, so it always scores worse than any settled response.
pub fn violation(
    sse: f64,
    overshoot_pct: f64,
    settling: SettlingTime,
    duration: f64,
    targets: &IndicatorTargets,
) -> f64 {
    let settle = match settling {
        SettlingTime::Settled(t) => relative_excess(t, targets.max_settling_time),
        SettlingTime::Unsettled => relative_excess(duration, targets.max_settling_time) + 1.0,
    };
    relative_excess(sse, targets.max_steady_state_error)
        + relative_excess(overshoot_pct, targets.max_overshoot)
        + settle
}

/// Normalized ITAE plus weighted constraint violations, capped at
/// [`FAILURE_COST`].
pub fn cost(trace: &SimTrace, v_ref: f64, targets: &IndicatorTargets) -> f64 {
    let sse = steady_state_error(trace, v_ref);
    let os = overshoot(trace, v_ref);
    let st = settling_time(trace, v_ref, targets.settling_band);
    combine_cost(trace, v_ref, sse, os, st, targets)
}

fn combine_cost(
    trace: &SimTrace,
    v_ref: f64,
    sse: f64,
    os: f64,
    st: SettlingTime,
    targets: &IndicatorTargets,
) -> f64 {
    let total = normalized_itae(trace, v_ref)
        + PENALTY_WEIGHT * violation(sse, os, st, trace.duration(), targets);
    if total.is_finite() {
        total.min(FAILURE_COST)
    } else {
        FAILURE_COST
    }
}

fn verdicts(sse: f64, os: f64, st: SettlingTime, targets: &IndicatorTargets, force_fail: bool) -> Vec<Verdict> {
    let settle_value = st.seconds();
    vec![
        Verdict {
            indicator: Indicator::SteadyStateError,
            value: Some(sse),
            limit: targets.max_steady_state_error,
            passed: !force_fail && sse <= targets.max_steady_state_error,
        },
        Verdict {
            indicator: Indicator::Overshoot,
            value: Some(os),
            limit: targets.max_overshoot,
            passed: !force_fail && os <= targets.max_overshoot,
        },
        Verdict {
            indicator: Indicator::SettlingTime,
            value: settle_value,
            limit: targets.max_settling_time,
            passed: !force_fail && settle_value.is_some_and(|t| t <= targets.max_settling_time),
        },
    ]
}

/// Computes and judges all indicators for a completed run.
pub fn evaluate(trace: &SimTrace, v_ref: f64, targets: &IndicatorTargets) -> PerformanceReport {
    let sse = steady_state_error(trace, v_ref);
    let os = overshoot(trace, v_ref);
    let st = settling_time(trace, v_ref, targets.settling_band);
    PerformanceReport {
        steady_state_error: sse,
        overshoot: os,
        settling_time: st,
        rise_time: rise_time(trace, v_ref),
        verdicts: verdicts(sse, os, st, targets, false),
        cost: combine_cost(trace, v_ref, sse, os, st, targets),
        simulation_failed: false,
    }
}

/// Report for a run that aborted: indicators of the partial trace, every
/// verdict failed, cost at the ceiling.
pub fn failed_report(partial: &SimTrace, v_ref: f64, targets: &IndicatorTargets) -> PerformanceReport {
    let finite = |x: f64| if x.is_finite() { x } else { f64::MAX };
    let sse = finite(steady_state_error(partial, v_ref));
    let os = finite(overshoot(partial, v_ref));
    let st = SettlingTime::Unsettled;
    PerformanceReport {
        steady_state_error: sse,
        overshoot: os,
        settling_time: st,
        rise_time: rise_time(partial, v_ref),
        verdicts: verdicts(sse, os, st, targets, true),
        cost: FAILURE_COST,
        simulation_failed: true,
    }
}

pub fn evaluate_run(run: &RunResult, v_ref: f64, targets: &IndicatorTargets) -> PerformanceReport {
    match run {
        Ok(trace) => evaluate(trace, v_ref, targets),
        Err(failed) => failed_report(&failed.partial, v_ref, targets),
    }
}
