//! The `ooc` command line: design sessions and the individual tools.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use ooc_core::agents::llm::LlmPlanner;
use ooc_core::agents::session::{run_session, DesignSession, Outcome};
use ooc_core::agents::task::translate_task;
use ooc_core::agents::{DeterministicPlanner, Planner};
use ooc_core::control::{make_controller, ControllerSpec, PidGains};
use ooc_core::converter_models::ConverterParams;
use ooc_core::metrics::{overshoot, rise_time, settling_time, steady_state_error, PerformanceReport};
use ooc_core::numfmt::to_canonical_json;
use ooc_core::optimization::{seeded_template, tune_gains};
use ooc_core::simulation::{run_closed_loop, SimTrace};

pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const TRANSCRIPT_FILE: &str = "transcript.ndjson";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_EXHAUSTED: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ooc", version, about = "Objective-oriented controller design for DC-DC converters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a full design session and write report, trace and transcript
    Design(DesignArgs),
    /// Simulate the closed loop once with the given gains
    Simulate(SimulateArgs),
    /// Tune the gains without verification or feedback rounds
    Optimize(OptimizeArgs),
    /// Recompute the indicators from a trace CSV
    Metrics(MetricsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlannerKind {
    Deterministic,
    Llm,
}

#[derive(Debug, clap::Args)]
pub struct DesignArgs {
    /// Task file (JSON)
    #[arg(required_unless_present = "prompt")]
    pub task: Option<PathBuf>,
    /// Free-text request, drafted into a task by the llm planner
    #[arg(long, conflicts_with = "task")]
    pub prompt: Option<String>,
    /// Output directory [default: ooc-out/<UTC timestamp>]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "deterministic")]
    pub planner: PlannerKind,
    /// Override the optimizer seed
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    pub task: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub kp: f64,
    #[arg(long, default_value_t = 0.0)]
    pub ki: f64,
    #[arg(long, default_value_t = 0.0)]
    pub kd: f64,
    /// Output directory [default: ooc-out/<UTC timestamp>]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct OptimizeArgs {
    pub task: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
pub struct MetricsArgs {
    pub trace: PathBuf,
    /// Reference voltage
    #[arg(long)]
    pub vref: f64,
    /// Settling band as a fraction of the reference
    #[arg(long, default_value_t = 0.02)]
    pub band: f64,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {reason}", path.display())]
    BadInput { path: PathBuf, reason: String },
    #[error("infeasible task: {0}")]
    Infeasible(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            _ => EXIT_ERROR,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn exit_code(outcome: Outcome) -> i32 {
    match outcome {
        Outcome::Succeeded => EXIT_OK,
        Outcome::ExhaustedRounds => EXIT_EXHAUSTED,
        Outcome::Infeasible => EXIT_INFEASIBLE,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub identity: String,
    pub params: ConverterParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationSummary {
    pub best_cost: f64,
    pub evaluations: usize,
    pub seed: u64,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    /// The validated task with defaults filled, or the raw task if it was
    /// rejected.
    pub task: Value,
    pub model: Option<ModelSection>,
    pub controller: Option<ControllerSpec>,
    pub performance: Option<PerformanceReport>,
    pub optimization: Option<OptimizationSummary>,
    pub outcome: Outcome,
    pub rounds: u32,
    pub simulations: usize,
    pub transcript: String,
    pub tool_versions: BTreeMap<String, String>,
}

impl DesignReport {
    pub fn from_session(raw: &Value, session: &DesignSession) -> Self {
        let task = session
            .task
            .as_ref()
            .and_then(|t| serde_json::to_value(t).ok())
            .unwrap_or_else(|| raw.clone());
        let model = match (&session.model_identity, &session.model) {
            (Some(identity), Some(params)) => Some(ModelSection {
                identity: identity.clone(),
                params: *params,
            }),
            _ => None,
        };
        let optimization = session.optimization.as_ref().map(|r| OptimizationSummary {
            best_cost: r.best_cost,
            evaluations: r.evaluations,
            seed: r.seed,
        });
        Self {
            task,
            model,
            controller: session.controller.clone(),
            performance: session.report.clone(),
            optimization,
            outcome: session.outcome().expect("finished session has an outcome"),
            rounds: session.round,
            simulations: session.simulations,
            transcript: TRANSCRIPT_FILE.to_string(),
            tool_versions: tool_versions(),
        }
    }

    pub fn to_json(&self) -> String {
        to_canonical_json(self).expect("reports always serialize")
    }
}

pub fn tool_versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("ooc".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("ooc-core".to_string(), ooc_core::VERSION.to_string()),
    ])
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("ooc-out").join(chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string())
}

fn read_task(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::BadInput {
        path: path.to_path_buf(),
        reason: format!("not valid JSON: {e}"),
    })
}

fn override_seed(raw: &mut Value, seed: Option<u64>) {
    let Some(seed) = seed else { return };
    if let Some(obj) = raw.as_object_mut() {
        let opt = obj
            .entry("optimizer")
            .or_insert_with(|| Value::Object(Default::default()));
        if let Some(opt) = opt.as_object_mut() {
            opt.insert("seed".into(), Value::from(seed));
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_trace(path: &Path, trace: &SimTrace) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    trace.write_csv(std::io::BufWriter::new(file)).map_err(|e| CliError::BadInput {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn print_report(out: &mut dyn Write, report: &PerformanceReport) -> std::io::Result<()> {
    writeln!(out, "steady_state_error={}", report.steady_state_error)?;
    writeln!(out, "overshoot={}", report.overshoot)?;
    writeln!(out, "settling_time={}", report.settling_time)?;
    Ok(())
}

pub fn cmd_design(args: &DesignArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let planner: Box<dyn Planner> = match args.planner {
        PlannerKind::Deterministic => {
            if args.prompt.is_some() {
                return Err(CliError::Usage("--prompt needs --planner llm".into()));
            }
            Box::new(DeterministicPlanner)
        }
        PlannerKind::Llm => Box::new(LlmPlanner::from_env().map_err(|e| CliError::Usage(e.to_string()))?),
    };
    let mut raw = match (&args.task, &args.prompt) {
        (Some(path), _) => read_task(path)?,
        (None, Some(text)) => {
            let llm = LlmPlanner::from_env().map_err(|e| CliError::Usage(e.to_string()))?;
            llm.draft_task(text)
                .map_err(|e| CliError::Usage(format!("could not draft a task from the prompt: {e}")))?
        }
        (None, None) => return Err(CliError::Usage("a task file or --prompt is required".into())),
    };
    override_seed(&mut raw, args.seed);

    let session = run_session(&raw, planner.as_ref());
    let dir = args.out.clone().unwrap_or_else(default_out_dir);
    create_dir(&dir)?;
    if args.prompt.is_some() {
        write_file(&dir.join("task.json"), &to_canonical_json(&raw).expect("JSON values serialize"))?;
    }
    let report = DesignReport::from_session(&raw, &session);
    write_file(&dir.join(REPORT_FILE), &report.to_json())?;
    write_file(&dir.join(TRANSCRIPT_FILE), &session.transcript.to_ndjson())?;
    if let Some(trace) = &session.final_trace {
        write_trace(&dir.join(TRACE_FILE), trace)?;
    }

    let outcome = report.outcome;
    let mut w = || -> std::io::Result<()> {
        writeln!(out, "outcome={outcome}")?;
        writeln!(out, "rounds={}", report.rounds)?;
        if let Some(g) = &session.gains {
            writeln!(out, "kp={}\nki={}\nkd={}", g.kp, g.ki, g.kd)?;
        }
        if let Some(r) = &report.performance {
            print_report(out, r)?;
        }
        writeln!(out, "out={}", dir.display())
    };
    w().map_err(io_err(Path::new("<stdout>")))?;
    Ok(exit_code(outcome))
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let raw = read_task(&args.task)?;
    let (task, _) = translate_task(&raw).map_err(|e| CliError::Infeasible(e.to_string()))?;
    let template = PidGains {
        kp: args.kp,
        ki: args.ki,
        kd: args.kd,
        bias: 0.0,
        out_min: task.plant.duty_min,
        out_max: task.plant.duty_max,
    };
    let gains = seeded_template(&task.plant, &template, task.v_ref).map_err(|e| CliError::Infeasible(e.to_string()))?;
    let spec = ControllerSpec::pid(gains);
    let mut controller = make_controller(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    let run = run_closed_loop(&task.plant, controller.as_mut(), &task.sim)
        .map_err(|e| CliError::Infeasible(e.to_string()))?;
    let report = ooc_core::metrics::evaluate_run(&run, task.v_ref, &task.targets);
    let (trace, fault) = match run {
        Ok(t) => (t, None),
        Err(f) => (f.partial, Some(f.fault)),
    };
    let dir = args.out.clone().unwrap_or_else(default_out_dir);
    create_dir(&dir)?;
    let path = dir.join(TRACE_FILE);
    write_trace(&path, &trace)?;

    let mut w = || -> std::io::Result<()> {
        print_report(out, &report)?;
        if let Some(f) = &fault {
            writeln!(out, "numeric_fault={f}")?;
        }
        writeln!(out, "trace={}", path.display())
    };
    w().map_err(io_err(Path::new("<stdout>")))?;
    Ok(EXIT_OK)
}

pub fn cmd_optimize(args: &OptimizeArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let mut raw = read_task(&args.task)?;
    override_seed(&mut raw, args.seed);
    let (task, _) = translate_task(&raw).map_err(|e| CliError::Infeasible(e.to_string()))?;
    let template = ControllerSpec::pid(PidGains {
        kp: 0.0,
        ki: 0.0,
        kd: 0.0,
        bias: 0.0,
        out_min: task.plant.duty_min,
        out_max: task.plant.duty_max,
    });
    let (gains, result) = tune_gains(
        &task.plant,
        &template,
        &task.targets,
        &task.sim,
        &task.optimizer.space,
        &task.optimizer.pso,
    )
    .map_err(|e| CliError::Infeasible(e.to_string()))?;
    let mut w = || -> std::io::Result<()> {
        writeln!(out, "kp={}\nki={}\nkd={}", gains.kp, gains.ki, gains.kd)?;
        writeln!(out, "bias={}", gains.bias)?;
        writeln!(out, "best_cost={}", result.best_cost)?;
        writeln!(out, "evaluations={}", result.evaluations)?;
        writeln!(out, "seed={}", result.seed)
    };
    w().map_err(io_err(Path::new("<stdout>")))?;
    Ok(EXIT_OK)
}

pub fn cmd_metrics(args: &MetricsArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    if !(args.vref.is_finite() && args.vref > 0.0) {
        return Err(CliError::Usage(format!("--vref must be > 0, got {}", args.vref)));
    }
    if !(args.band > 0.0 && args.band < 1.0) {
        return Err(CliError::Usage(format!("--band must lie in (0, 1), got {}", args.band)));
    }
    let file = fs::File::open(&args.trace).map_err(io_err(&args.trace))?;
    let trace = SimTrace::read_csv(file).map_err(|e| CliError::BadInput {
        path: args.trace.clone(),
        reason: e.to_string(),
    })?;
    let mut w = || -> std::io::Result<()> {
        writeln!(out, "steady_state_error={}", steady_state_error(&trace, args.vref))?;
        writeln!(out, "overshoot={}", overshoot(&trace, args.vref))?;
        writeln!(out, "settling_time={}", settling_time(&trace, args.vref, args.band))?;
        match rise_time(&trace, args.vref) {
            Some(t) => writeln!(out, "rise_time={t}"),
            None => writeln!(out, "rise_time=none"),
        }
    };
    w().map_err(io_err(Path::new("<stdout>")))?;
    Ok(EXIT_OK)
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_ERROR;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    let result = match &cli.command {
        Command::Design(a) => cmd_design(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Optimize(a) => cmd_optimize(a, out),
        Command::Metrics(a) => cmd_metrics(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
