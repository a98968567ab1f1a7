use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use rams_coord::net::TcpStoreClient;
use rams_coord::{run_agent, AgentConfig, SystemClock};
use rams_core::optimizer::{initial_solution, InitialMode};
use rams_core::robustness::estimate_robustness_with_workers;
use rams_core::tree::{evaluate_multistage_capped, multistage_tree, TreeOptions};
use rams_core::{
    deterministic_view, dispatch, exact_robustness, sample_scenario, CancelToken, DispatchProtocol,
    MissionModel, ModelFile, RobustnessEstimate, Schedule, SearchConfig,
};
use rams_service::gantt;
use rams_service::payloads::{OptimizeReport, RobustnessReport, TraceReport, TreeReport, ValidationReply};
use rams_service::ServiceConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::Format;

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))
}

fn parse<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<(ModelFile, MissionModel), CliError> {
    let file = ModelFile::from_json(&read(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let model = file.to_mission()?;
    Ok((file, model))
}

/// A schedule file holds either a full schedule or just the priority order.
#[derive(Deserialize)]
#[serde(untagged)]
enum ScheduleFile {
    Full(Schedule),
    Order(Vec<String>),
}

fn load_schedule(path: &Path) -> Result<Schedule, CliError> {
    Ok(match parse::<ScheduleFile>(path)? {
        ScheduleFile::Full(s) => s,
        ScheduleFile::Order(o) => Schedule::from_order(o),
    })
}

fn mission_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn emit<T: Serialize>(format: Format, report: &T, summary: &str) -> Result<(), CliError> {
    match format {
        Format::Machine => {
            let text = serde_json::to_string_pretty(report).map_err(|e| CliError::Internal(e.to_string()))?;
            println!("{text}");
            eprint!("{summary}");
        }
        Format::Text => print!("{summary}"),
    }
    Ok(())
}

/// Nominal infeasibility of `schedule`, as an error to return after the
/// report has been printed.
fn nominal_check(model: &MissionModel, schedule: &Schedule) -> Result<(), CliError> {
    let trace = deterministic_view(model, schedule)?;
    match trace.failure_reason {
        None => Ok(()),
        Some(f) => Err(CliError::Infeasible(format!(
            "the schedule fails even with nominal durations ({:?} at `{}`, minute {})",
            f.kind, f.element, f.at
        ))),
    }
}

fn describe(e: &RobustnessEstimate) -> String {
    format!(
        "p_hat {:.4} (se {:.4}, 95% CI [{:.4}, {:.4}]) over {} scenarios, {} successes\n",
        e.p_hat, e.std_error, e.ci95[0], e.ci95[1], e.n_samples, e.successes
    )
}

pub fn validate(format: Format, path: &Path) -> Result<(), CliError> {
    let file = ModelFile::from_json(&read(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let reply = ValidationReply::of(&file);
    let mut summary = String::new();
    if reply.valid {
        let _ = writeln!(summary, "valid: {} activities, {} constraints", reply.activities, reply.constraints);
    } else {
        let _ = writeln!(summary, "invalid: {} violation(s)", reply.violations.len());
        for v in &reply.violations {
            let _ = writeln!(summary, "  {:?} {}: {}", v.kind, v.element, v.message);
        }
    }
    emit(format, &reply, &summary)?;
    if reply.valid {
        Ok(())
    } else {
        Err(CliError::Invalid(format!("{} violation(s)", reply.violations.len())))
    }
}

pub fn robustness(
    format: Format,
    model_path: &Path,
    schedule_path: &Path,
    samples: usize,
    seed: u64,
    workers: usize,
    exact: bool,
) -> Result<(), CliError> {
    let (_, model) = load_model(model_path)?;
    let schedule = load_schedule(schedule_path)?;
    if samples == 0 && !exact {
        return Err(CliError::Invalid("--samples must be positive".into()));
    }
    let estimate = if exact {
        exact_robustness(&model, &schedule, DispatchProtocol::Asap)?
    } else {
        estimate_robustness_with_workers(&model, &schedule, DispatchProtocol::Asap, samples, seed, workers.max(1))?
    };
    let summary = describe(&estimate);
    let report = RobustnessReport {
        mission_id: mission_name(model_path),
        model_version: 0,
        state_version: None,
        conditional: false,
        estimate,
    };
    emit(format, &report, &summary)?;
    nominal_check(&model, &schedule)
}

pub fn optimize(
    format: Format,
    model_path: &Path,
    config_path: Option<&Path>,
    schedule_path: Option<&Path>,
    seed: Option<u64>,
    workers: Option<usize>,
    samples: Option<usize>,
) -> Result<(), CliError> {
    let (_, model) = load_model(model_path)?;
    let mut config: SearchConfig = match config_path {
        Some(p) => parse(p)?,
        None => SearchConfig::default(),
    };
    if let Some(s) = seed {
        config.master_seed = s;
    }
    if let Some(w) = workers {
        config.workers = Some(w.max(1));
    }
    if let Some(n) = samples {
        config.n_eval_scenarios = n;
    }
    let start = schedule_path.map(load_schedule).transpose()?;
    let result = rams_core::optimize(&model, start.as_ref(), &config, &CancelToken::new()).map_err(|e| match e {
        rams_core::optimizer::OptimizeError::Dispatch(d) => CliError::from(d),
        other => CliError::Invalid(other.to_string()),
    })?;
    let mut summary = format!(
        "{} iterations, {} accepted improvements\nbest order: {}\n",
        result.iterations_used,
        result.accepted_improvements,
        result.best_schedule.priority_order.join(" ")
    );
    summary.push_str(&describe(&result.best_estimate));
    let schedule = result.best_schedule.clone();
    emit(format, &OptimizeReport { result }, &summary)?;
    nominal_check(&model, &schedule)
}

pub fn simulate(format: Format, model_path: &Path, schedule_path: &Path, seed: Option<u64>, scenario: u64) -> Result<(), CliError> {
    let (_, model) = load_model(model_path)?;
    let schedule = load_schedule(schedule_path)?;
    let trace = match seed {
        Some(s) => dispatch(&model, &schedule, &sample_scenario(&model, s, scenario), DispatchProtocol::Asap)?,
        None => deterministic_view(&model, &schedule)?,
    };
    let mut summary = String::new();
    for e in &trace.entries {
        match (e.start, e.end) {
            (Some(s), Some(t)) => {
                let _ = writeln!(summary, "  {:<24} {:>6} .. {:>6}", e.activity_id, s, t);
            }
            _ => {
                let _ = writeln!(summary, "  {:<24} not started", e.activity_id);
            }
        }
    }
    match &trace.failure_reason {
        None => {
            let _ = writeln!(summary, "success, makespan {} min", trace.makespan);
        }
        Some(f) => {
            let _ = writeln!(summary, "failed: {:?} at `{}`, minute {}", f.kind, f.element, f.at);
        }
    }
    let report = TraceReport {
        mission_id: mission_name(model_path),
        model_version: 0,
        seed,
        scenario,
        gantt: gantt::from_trace(&model, &trace),
        trace,
    };
    emit(format, &report, &summary)
}

pub fn tree(
    format: Format,
    model_path: &Path,
    schedule_path: Option<&Path>,
    depth: Option<usize>,
    node_cap: usize,
    seed: u64,
) -> Result<(), CliError> {
    let (_, model) = load_model(model_path)?;
    let base = match schedule_path {
        Some(p) => load_schedule(p)?,
        None => initial_solution(&model, InitialMode::SerialSgs, seed),
    };
    let options = TreeOptions {
        fixed_order: false,
        stages: depth,
        node_cap,
    };
    let tree = multistage_tree(&model, &base, &options)?;
    let value = evaluate_multistage_capped(&tree, node_cap, None)?;
    let fixed_value = tree.sequence_value(&base.priority_order);
    let mut summary = format!("{} nodes, multistage value {:.6}\n", tree.len(), value.value);
    if let Some(f) = fixed_value {
        let _ = writeln!(summary, "base order value {f:.6}");
    }
    if let Some(d) = &value.root_decision {
        let _ = writeln!(summary, "first decision: {d}");
    }
    let report = TreeReport {
        nodes: tree.len(),
        value: value.value,
        root_decision: value.root_decision,
        fixed_value,
    };
    emit(format, &report, &summary)
}

pub struct AgentArgs {
    pub id: String,
    pub seed: u64,
    pub poll_ms: u64,
    pub iterations: u64,
    pub max_rounds: Option<u64>,
    pub workers: usize,
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))
}

pub fn agent(format: Format, store: &str, args: AgentArgs) -> Result<(), CliError> {
    let client = TcpStoreClient::new(store).map_err(|e| CliError::Invalid(e.to_string()))?;
    let mut config = AgentConfig {
        poll_interval_ms: args.poll_ms,
        iterations_per_round: args.iterations,
        max_rounds: args.max_rounds,
        ..AgentConfig::new(args.id, args.seed)
    };
    config.capabilities.max_parallel_evals = args.workers.max(1);
    let stop = CancelToken::new();
    let report = runtime()?.block_on(async {
        let token = stop.clone();
        let mut work = tokio::task::spawn_blocking(move || run_agent(&client, &SystemClock, &config, &token));
        tokio::select! {
            r = &mut work => r,
            _ = tokio::signal::ctrl_c() => {
                stop.cancel();
                work.await
            }
        }
    });
    let report = report.map_err(|e| CliError::Internal(e.to_string()))?;
    let summary = format!(
        "{}: {} rounds, {} one-shots, {} published, {} accepted, {} transient errors\n",
        report.agent_id, report.rounds, report.one_shots, report.published, report.accepted, report.transient_errors
    );
    emit(format, &report, &summary)
}

/// Service configuration file; every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ServeFile {
    bind: Option<SocketAddr>,
    store: Option<PathBuf>,
    agents: Option<usize>,
    agent_seed: Option<u64>,
    agent_poll_ms: Option<u64>,
    agent_iterations: Option<u64>,
    agent_bind: Option<SocketAddr>,
    stream_poll_ms: Option<u64>,
    lease_ms: Option<u64>,
    pool_size: Option<usize>,
    fsync: Option<bool>,
}

pub struct ServeOverrides {
    pub bind: Option<SocketAddr>,
    pub store: Option<PathBuf>,
    pub agents: Option<usize>,
    pub agent_bind: Option<SocketAddr>,
    pub seed: Option<u64>,
}

fn service_config(file: ServeFile, o: ServeOverrides) -> ServiceConfig {
    let mut c = ServiceConfig::default();
    c.bind = o.bind.or(file.bind).unwrap_or(c.bind);
    c.store_path = o.store.or(file.store);
    c.agents = o.agents.or(file.agents).unwrap_or(c.agents);
    c.agent_bind = o.agent_bind.or(file.agent_bind);
    c.agent_seed = o.seed.or(file.agent_seed).unwrap_or(c.agent_seed);
    c.agent_poll_ms = file.agent_poll_ms.unwrap_or(c.agent_poll_ms);
    c.agent_iterations = file.agent_iterations.unwrap_or(c.agent_iterations);
    c.stream_poll_ms = file.stream_poll_ms.unwrap_or(c.stream_poll_ms);
    c.store.lease_ms = file.lease_ms.unwrap_or(c.store.lease_ms);
    c.store.pool_size = file.pool_size.unwrap_or(c.store.pool_size);
    c.store.fsync = file.fsync.unwrap_or(c.store.fsync);
    c
}

pub fn serve(config_path: Option<&Path>, overrides: ServeOverrides) -> Result<(), CliError> {
    let file = match config_path {
        Some(p) => parse(p)?,
        None => ServeFile::default(),
    };
    let config = service_config(file, overrides);
    eprintln!("serving on http://{}", config.bind);
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    runtime()?
        .block_on(rams_service::serve(config, shutdown))
        .map_err(|e| CliError::Internal(e.to_string()))
}
