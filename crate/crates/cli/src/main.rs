//! `rams`: validate models, estimate robustness, optimize, simulate and
//! build decision trees from the command line, or run the service and
//! remote optimization agents.
//!
//! Reports go to standard output as JSON (the same types the HTTP API
//! returns); a short human summary goes to standard error. With
//! `--format text` the summary goes to standard output instead.
//!
//! Exit codes: 0 success, 1 internal error, 2 invalid input, 3 infeasible
//! or a size cap exceeded.

mod commands;
mod error;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Human-readable summary on standard output.
    Text,
    /// JSON report on standard output, summary on standard error.
    Machine,
}

#[derive(Debug, Parser)]
#[command(name = "rams", version, about = "Robust scheduling of surface mission activities")]
struct Cli {
    #[arg(long, value_enum, default_value = "machine", global = true)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a model file and list every violation.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Probability that a schedule executes without a constraint violation.
    Robustness {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Enumerate every scenario instead of sampling.
        #[arg(long)]
        exact: bool,
    },
    /// Search for a schedule of maximal robustness.
    Optimize {
        #[arg(long)]
        model: PathBuf,
        /// Search configuration (JSON); defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Starting schedule.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Overrides the configuration's master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides the configuration's scenario count.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Dispatch a schedule once: nominal durations, or sampled scenario
    /// `--scenario` of stream `--seed`.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        scenario: u64,
    },
    /// Build and solve the sequential decision tree.
    Tree {
        #[arg(long)]
        model: PathBuf,
        /// Base schedule; a serial schedule generation pass when omitted.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Decision stages before the base order takes over.
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long, default_value_t = rams_core::tree::DEFAULT_NODE_CAP)]
        node_cap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an optimization agent against a remote store.
    Agent {
        /// Address of the store, e.g. 127.0.0.1:7070.
        #[arg(long)]
        store: String,
        #[arg(long, default_value = "agent")]
        id: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        poll_ms: u64,
        #[arg(long, default_value_t = 200)]
        iterations: u64,
        /// Stop after this many search rounds.
        #[arg(long)]
        max_rounds: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Run the HTTP service.
    Serve {
        /// Service configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        bind: Option<SocketAddr>,
        /// Store log file; in memory when omitted.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Optimization agents inside the service.
        #[arg(long)]
        agents: Option<usize>,
        /// Expose the store to remote agents on this address.
        #[arg(long)]
        agent_bind: Option<SocketAddr>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let f = cli.format;
    match cli.command {
        Command::Validate { model } => commands::validate(f, &model),
        Command::Robustness {
            model,
            schedule,
            samples,
            seed,
            workers,
            exact,
        } => commands::robustness(f, &model, &schedule, samples, seed, workers, exact),
        Command::Optimize {
            model,
            config,
            schedule,
            seed,
            workers,
            samples,
        } => commands::optimize(f, &model, config.as_deref(), schedule.as_deref(), seed, workers, samples),
        Command::Simulate {
            model,
            schedule,
            seed,
            scenario,
        } => commands::simulate(f, &model, &schedule, seed, scenario),
        Command::Tree {
            model,
            schedule,
            depth,
            node_cap,
            seed,
        } => commands::tree(f, &model, schedule.as_deref(), depth, node_cap, seed),
        Command::Agent {
            store,
            id,
            seed,
            poll_ms,
            iterations,
            max_rounds,
            workers,
        } => commands::agent(
            f,
            &store,
            commands::AgentArgs {
                id,
                seed,
                poll_ms,
                iterations,
                max_rounds,
                workers,
            },
        ),
        Command::Serve {
            config,
            bind,
            store,
            agents,
            agent_bind,
            seed,
        } => commands::serve(
            config.as_deref(),
            commands::ServeOverrides {
                bind,
                store,
                agents,
                agent_bind,
                seed,
            },
        ),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
