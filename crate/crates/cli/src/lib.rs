//! Command-line front end for the whole-body controller.
//!
//! Exit codes: 0 success, 2 invalid input (bad arguments, unreadable or
//! malformed documents, out-of-limit configurations), 3 runtime failure
//! (solver errors, failed episodes, replay divergence, I/O on outputs).

use std::ffi::OsString;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use wholebody::collision::dump_constraints;
use wholebody::executor::ScriptedPolicy;
use wholebody::geometry::{Pose, Rotation};
use wholebody::harness::{self, EpisodeRecord, Scenario};
use wholebody::model::JointConfig;
use wholebody::wbc::{self, PARAMS_ENV};
use wholebody::{Error, RobotModel, WbcParams};
use wholebody_service::ServiceConfig;

#[derive(Debug, Parser)]
#[command(name = "wholebody", version, about = "Whole-body control for a holonomic mobile manipulator")]
pub struct Cli {
    /// Controller parameters (JSON). Falls back to the file named by
    /// HOMER_WBC_PARAMS, then to built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub params: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulated episode and print its outcome as JSON.
    RunSim {
        #[arg(long)]
        scenario: PathBuf,
        /// Scripted policy (JSON list of keypose / dense_chunk entries).
        /// Without one the episode is a single keypose to the scenario target.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the episode record (JSONL plus annotation sidecar).
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Run reach trials in parallel and write a JSON summary.
    Benchmark {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write one CSV row per trial.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Re-solve a recorded episode and report the deviation.
    Replay {
        #[arg(long)]
        episode: PathBuf,
        /// Model file; the built-in reference model by default.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Largest tolerated joint deviation.
        #[arg(long, default_value_t = 0.0)]
        tolerance: f64,
        /// Treat a model or parameter hash mismatch as an error.
        #[arg(long)]
        strict: bool,
    },
    /// Serve the WebSocket teleoperation endpoint until Ctrl-C.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Directory served under `/` (the browser cockpit).
        #[arg(long = "static", value_name = "DIR")]
        static_dir: Option<PathBuf>,
        #[arg(long, default_value = "recordings")]
        record_dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        tick_ms: u64,
    },
    /// Solve one control step and print the result as JSON.
    SolveIk {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Comma-separated configuration (3 base + arm joints). Defaults to
        /// the retract posture.
        #[arg(long)]
        q: Option<String>,
        /// `x,y,z,qw,qx,qy,qz`.
        #[arg(long, allow_hyphen_values = true)]
        target: String,
        /// Include every inner iteration.
        #[arg(long)]
        trace: bool,
        /// Write the first iteration's QP matrices to this file.
        #[arg(long, value_name = "FILE")]
        dump_qp: Option<PathBuf>,
        /// Print the first iteration's active damper constraints to stderr.
        #[arg(long)]
        dump_constraints: bool,
    },
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Failure { code: 3, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::validation(e.to_string())
        } else {
            Failure::runtime(e.to_string())
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Errors while reading inputs are input problems, whatever their kind.
fn input<T>(r: wholebody::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        Error::Io { .. } => Failure::validation(e.to_string()),
        e => e.into(),
    })
}

fn output_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::runtime(format!("{}: {e}", path.display()))
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let params = load_params(cli.params.as_deref())?;
    match cli.command {
        Command::RunSim { scenario, policy, seed, record } => {
            run_sim(&scenario, policy.as_deref(), seed, record.as_deref(), &params)
        }
        Command::Benchmark { scenario, trials, seed, out, csv } => {
            benchmark(&scenario, trials, seed, &out, csv.as_deref(), &params)
        }
        Command::Replay { episode, model, tolerance, strict } => {
            replay(&episode, model.as_deref(), tolerance, strict, &params)
        }
        Command::Serve { port, host, model, static_dir, record_dir, tick_ms } => {
            let mut config = ServiceConfig::new(load_model(model.as_deref())?, params);
            if tick_ms == 0 {
                return Err(Failure::validation("--tick-ms must be positive"));
            }
            config.tick_period = Duration::from_millis(tick_ms);
            config.record_dir = record_dir;
            config.static_dir = static_dir;
            serve(config, SocketAddr::new(host, port))
        }
        Command::SolveIk { model, q, target, trace, dump_qp, dump_constraints } => solve_ik(
            model.as_deref(),
            q.as_deref(),
            &target,
            trace,
            dump_qp.as_deref(),
            dump_constraints,
            &params,
        ),
    }
}

fn load_params(path: Option<&Path>) -> CliResult<WbcParams> {
    let p = match path {
        Some(p) => WbcParams::from_file(p),
        None => WbcParams::from_env().map_err(|e| match e {
            Error::Io { path, source } => Error::Io {
                path: format!("{} (from {PARAMS_ENV})", path.display()).into(),
                source,
            },
            e => e,
        }),
    };
    input(p)
}

fn load_model(path: Option<&Path>) -> CliResult<RobotModel> {
    match path {
        Some(p) => input(RobotModel::from_file(p)),
        None => Ok(RobotModel::reference()),
    }
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn print_json(v: &Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v).expect("JSON values serialize");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| output_err(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| output_err(path, e))
}

fn run_sim(scenario: &Path, policy: Option<&Path>, seed: u64, record: Option<&Path>, params: &WbcParams) -> CliResult<()> {
    let scenario = input(Scenario::from_file(scenario))?;
    let model = input(scenario.load_model())?;
    let outcome = match policy {
        Some(p) => {
            let mut policy = input(ScriptedPolicy::from_file(p))?;
            harness::run_episode(&model, &scenario, &mut policy, params, seed)?
        }
        None => harness::run_reach_episode(&model, &scenario, params, seed)?,
    };
    if let Some(path) = record {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| output_err(dir, e))?;
        }
        outcome.record.save(path).map_err(|e| Failure::runtime(e.to_string()))?;
    }
    let last = outcome.record.ticks.last();
    print_json(&json!({
        "episode_id": outcome.record.header.episode_id,
        "seed": seed,
        "success": outcome.success,
        "reason": outcome.reason,
        "ticks": outcome.ticks(),
        "target": outcome.target,
        "final_ee_pose": last.map(|t| t.ee_pose),
        "final_position_error": outcome.final_position_error,
        "final_orientation_error": outcome.final_orientation_error,
        "record": record,
    }));
    if outcome.success {
        Ok(())
    } else {
        Err(Failure::runtime(format!(
            "episode failed: {}",
            outcome.reason.as_deref().unwrap_or("final error outside tolerance")
        )))
    }
}

fn benchmark(scenario: &Path, trials: usize, seed: u64, out: &Path, csv: Option<&Path>, params: &WbcParams) -> CliResult<()> {
    if trials == 0 {
        return Err(Failure::validation("--trials must be at least 1"));
    }
    let scenario = input(Scenario::from_file(scenario))?;
    let model = input(scenario.load_model())?;
    let report = harness::benchmark(&model, &scenario, params, trials, seed)?;
    let doc = json!({ "summary": report.summary, "trials": report.trials });
    write_file(out, &serde_json::to_string_pretty(&doc).expect("JSON values serialize"))?;
    if let Some(csv) = csv {
        write_file(csv, &report.to_csv())?;
    }
    print_json(&serde_json::to_value(&report.summary).expect("summary serializes"));
    Ok(())
}

fn replay(episode: &Path, model: Option<&Path>, tolerance: f64, strict: bool, params: &WbcParams) -> CliResult<()> {
    if !(tolerance >= 0.0) {
        return Err(Failure::validation("--tolerance must be non-negative"));
    }
    let record = input(EpisodeRecord::load(episode))?;
    let model = load_model(model)?;
    let report = harness::replay(&record, &model, params)?;
    print_json(&serde_json::to_value(&report).expect("report serializes"));
    if strict && !(report.model_hash_match && report.params_hash_match) {
        return Err(Failure::validation(report.warnings.join("; ")));
    }
    if report.max_deviation > tolerance {
        return Err(Failure::runtime(format!(
            "replay diverged by {:e} (first at tick {})",
            report.max_deviation,
            report.first_divergent_tick.unwrap_or(0)
        )));
    }
    Ok(())
}

fn serve(config: ServiceConfig, addr: SocketAddr) -> CliResult<()> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::runtime(e.to_string()))?;
    eprintln!("serving on http://{addr} (WebSocket at /ws)");
    rt.block_on(wholebody_service::serve(config, addr)).map_err(|e| match e {
        Error::Io { .. } => Failure::runtime(e.to_string()),
        e => e.into(),
    })
}

/// `x,y,z,qw,qx,qy,qz`.
pub fn parse_target(s: &str) -> wholebody::Result<Pose> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Error::Domain(format!("target {s:?}: {e}")))?;
    if v.len() != 7 || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("target {s:?}: expected 7 finite numbers x,y,z,qw,qx,qy,qz")));
    }
    let rot = Rotation::from_wxyz(v[3], v[4], v[5], v[6])?;
    Ok(Pose::new([v[0], v[1], v[2]].into(), rot))
}

fn solve_ik(
    model: Option<&Path>,
    q: Option<&str>,
    target: &str,
    trace: bool,
    dump_qp: Option<&Path>,
    dump: bool,
    params: &WbcParams,
) -> CliResult<()> {
    let model = load_model(model)?;
    let q = match q {
        Some(s) => JointConfig::parse_csv(s)?,
        None => model.retract().clone(),
    };
    model.check_config(&q)?;
    let target = parse_target(target)?;
    if dump_qp.is_some() || dump {
        let step = wbc::assemble_step(&model, &q, &target, params)?;
        if let Some(path) = dump_qp {
            write_file(path, &step.problem.dump())?;
        }
        if dump {
            eprint!("{}", dump_constraints(&step.constraints));
        }
    }
    let result = if trace {
        wbc::solve_traced(&model, &q, &target, params)?
    } else {
        wbc::solve(&model, &q, &target, params)?
    };
    print_json(&serde_json::to_value(&result).expect("result serializes"));
    Ok(())
}
