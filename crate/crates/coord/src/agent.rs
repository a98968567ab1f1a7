//! Optimization agents: poll the store, claim one-shots, join running
//! optimizations seeded from the pool's best, publish results, heartbeat.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rams_core::durations::mix_seed;
use rams_core::mission::apply_edit;
use rams_core::optimizer::Budget;
use rams_core::{optimize, score_schedule, CancelToken, MissionModel, ModelEdit, Schedule, SearchConfig};
use serde::{Deserialize, Serialize};

use crate::api::StoreApi;
use crate::clock::{Clock, Millis};
use crate::records::{Capabilities, EntryOrigin, OneShotAction, OneShotResult, Problem, Publication, Rescored};
use crate::store::StoreError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentConfig {
    pub agent_id: String,
    /// Seeds every search round of this agent.
    pub seed: u64,
    pub poll_interval_ms: Millis,
    pub heartbeat_interval_ms: Millis,
    /// Search iterations between two publications.
    pub iterations_per_round: u64,
    pub capabilities: Capabilities,
    /// Stop after this many search rounds.
    pub max_rounds: Option<u64>,
    pub max_backoff_ms: Millis,
}

impl AgentConfig {
    pub fn new(agent_id: impl Into<String>, seed: u64) -> Self {
        Self {
            agent_id: agent_id.into(),
            seed,
            poll_interval_ms: 1_000,
            heartbeat_interval_ms: 10_000,
            iterations_per_round: 200,
            capabilities: Capabilities::default(),
            max_rounds: None,
            max_backoff_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub agent_id: String,
    pub registered_at: Option<Millis>,
    /// Store time of the first search round.
    pub joined_at: Option<Millis>,
    pub rounds: u64,
    pub one_shots: u64,
    pub published: u64,
    pub accepted: u64,
    pub transient_errors: u64,
    pub last_error: Option<String>,
}

/// Search configuration for one agent round: a single restart of
/// `iterations` moves with its own seed. Rerunning [`optimize`] with this
/// configuration and the recorded start reproduces a pool entry.
pub fn round_config(problem: &SearchConfig, iterations: u64, search_seed: u64, workers: usize) -> SearchConfig {
    SearchConfig {
        search_seed: Some(search_seed),
        restart_count: 1,
        budget: Budget {
            max_iterations: Some(iterations),
            max_seconds: problem.budget.max_seconds,
        },
        workers: Some(workers.max(1)),
        ..problem.clone()
    }
}

/// Seed of round `round` of an agent seeded with `seed`.
pub fn round_seed(seed: u64, round: u64) -> u64 {
    mix_seed(&[seed, round])
}

fn strip(schedule: &Schedule, activity_id: &str) -> Schedule {
    let mut s = schedule.clone();
    s.priority_order.retain(|x| x != activity_id);
    s.assignments.remove(activity_id);
    s.pinned_starts.remove(activity_id);
    s
}

/// Perform a one-shot action. Transport failures come back as `Err` of the
/// outer result so the caller can retry; action failures as the inner one.
pub fn execute_one_shot(
    api: &dyn StoreApi,
    action: &OneShotAction,
) -> Result<Result<OneShotResult, String>, StoreError> {
    let problem = api.fetch_model(action.problem_id())?;
    let model = match problem.model.to_mission() {
        Ok(m) => m,
        Err(e) => return Ok(Err(e.to_string())),
    };
    Ok(match action {
        OneShotAction::Evaluate { schedule, .. } => score_schedule(&model, schedule, &problem.config)
            .map(|(estimate, rank_key)| OneShotResult::Evaluated { estimate, rank_key })
            .map_err(|e| e.to_string()),
        OneShotAction::RemoveActivity { activity_id, .. } => {
            let pool = api.fetch_pool(&problem.problem_id)?;
            rescore_without(&problem, activity_id, pool.iter().map(|e| &e.schedule))
        }
    })
}

fn rescore_without<'a>(
    problem: &Problem,
    activity_id: &str,
    schedules: impl Iterator<Item = &'a Schedule>,
) -> Result<OneShotResult, String> {
    let edit = ModelEdit::RemoveActivity {
        activity_id: activity_id.into(),
    };
    let file = apply_edit(&problem.model, &edit).map_err(|e| e.to_string())?;
    let model = file.to_mission().map_err(|e| e.to_string())?;
    let mut entries = Vec::new();
    for s in schedules {
        let s = strip(s, activity_id);
        let (estimate, rank_key) = score_schedule(&model, &s, &problem.config).map_err(|e| e.to_string())?;
        entries.push(Rescored {
            schedule: s,
            estimate,
            rank_key,
        });
    }
    Ok(OneShotResult::Rescored {
        problem_id: None,
        entries,
    })
}

struct Agent<'a> {
    api: &'a dyn StoreApi,
    clock: &'a dyn Clock,
    config: &'a AgentConfig,
    stop: &'a CancelToken,
    report: AgentReport,
    problems: HashMap<String, (Problem, Arc<MissionModel>)>,
    assignment: &'a AtomicU64,
}

impl Agent<'_> {
    fn sleep(&self, ms: Millis) {
        // in slices so a stop request is noticed quickly
        let mut left = ms;
        while left > 0 && !self.stop.is_cancelled() {
            let step = left.min(self.config.poll_interval_ms.max(1));
            self.clock.sleep_ms(step);
            left -= step;
        }
    }

    /// Retry transient failures with exponential backoff.
    fn retry<T>(&mut self, mut f: impl FnMut(&dyn StoreApi) -> Result<T, StoreError>) -> Result<T, StoreError> {
        let mut backoff = (self.config.poll_interval_ms / 2).max(1);
        loop {
            match f(self.api) {
                Err(e) if e.is_transient() && !self.stop.is_cancelled() => {
                    self.report.transient_errors += 1;
                    self.report.last_error = Some(e.to_string());
                    tracing::debug!(agent = %self.config.agent_id, "store call failed: {e}");
                    self.sleep(backoff);
                    backoff = (backoff * 2).min(self.config.max_backoff_ms.max(1));
                }
                r => return r,
            }
        }
    }

    fn problem(&mut self, problem_id: &str) -> Result<(Problem, Arc<MissionModel>), StoreError> {
        if let Some(p) = self.problems.get(problem_id) {
            return Ok(p.clone());
        }
        let problem = self.retry(|api| api.fetch_model(problem_id))?;
        let model = Arc::new(problem.model.to_mission()?);
        self.problems.insert(problem_id.into(), (problem.clone(), model.clone()));
        Ok((problem, model))
    }

    fn one_shot(&mut self) -> Result<bool, StoreError> {
        let agent_id = self.config.agent_id.clone();
        let Some(request) = self.retry(|api| api.claim(&agent_id))? else {
            return Ok(false);
        };
        self.assignment.store(request.id, Ordering::Relaxed);
        let crate::records::RequestKind::OneShot { action } = &request.kind else {
            return Ok(false);
        };
        let outcome = self.retry(|api| execute_one_shot(api, action))?;
        self.retry(|api| api.complete(&agent_id, request.id, outcome.clone()))?;
        self.assignment.store(0, Ordering::Relaxed);
        self.report.one_shots += 1;
        Ok(true)
    }

    fn search_round(&mut self, request_id: u64, problem_id: &str, now: Millis) -> Result<(), StoreError> {
        let (problem, model) = self.problem(problem_id)?;
        self.assignment.store(request_id, Ordering::Relaxed);
        self.report.joined_at.get_or_insert(now);
        let pool = self.retry(|api| api.fetch_pool(problem_id))?;
        let start = pool.first().map(|e| e.schedule.clone());
        let seed = round_seed(self.config.seed, self.report.rounds);
        let iterations = self.config.iterations_per_round;
        let config = round_config(&problem.config, iterations, seed, self.config.capabilities.max_parallel_evals);
        self.report.rounds += 1;
        let result = match optimize(&model, start.as_ref(), &config, self.stop) {
            Ok(r) => r,
            Err(e) => {
                self.report.last_error = Some(e.to_string());
                return Ok(());
            }
        };
        if result.cancelled {
            return Ok(());
        }
        let publication = Publication {
            schedule: result.best_schedule,
            estimate: result.best_estimate,
            rank_key: result.best_objective,
            origin: Some(EntryOrigin {
                start,
                search_seed: seed,
                iterations,
            }),
        };
        let agent_id = self.config.agent_id.clone();
        match self.retry(|api| api.publish(&agent_id, problem_id, publication.clone())) {
            Ok(accepted) => {
                self.report.published += 1;
                self.report.accepted += u64::from(accepted);
            }
            Err(StoreError::StaleModel { .. }) => {
                self.problems.remove(problem_id);
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }

    fn run(&mut self) {
        let agent_id = self.config.agent_id.clone();
        let caps = self.config.capabilities;
        match self.retry(|api| api.register(&agent_id, caps)) {
            Ok(r) => self.report.registered_at = Some(r.last_heartbeat),
            Err(e) => {
                self.report.last_error = Some(e.to_string());
                return;
            }
        }
        while !self.stop.is_cancelled() {
            let poll = match self.retry(|api| api.poll(&agent_id)) {
                Ok(p) => p,
                Err(e) => {
                    self.report.last_error = Some(e.to_string());
                    self.sleep(self.config.poll_interval_ms);
                    continue;
                }
            };
            let mut worked = false;
            if poll.pending_one_shots > 0 {
                match self.one_shot() {
                    Ok(done) => worked = done,
                    Err(e) => self.report.last_error = Some(e.to_string()),
                }
            }
            // the round budget only limits searching; queued one-shots are
            // still served before leaving
            let spent = self.config.max_rounds.is_some_and(|m| self.report.rounds >= m);
            if spent && !worked {
                break;
            }
            if !worked && !poll.running.is_empty() {
                let (id, problem_id) = &poll.running[(self.report.rounds as usize) % poll.running.len()];
                match self.search_round(*id, problem_id, poll.now) {
                    Ok(()) => worked = true,
                    Err(e) => self.report.last_error = Some(e.to_string()),
                }
            }
            self.assignment.store(0, Ordering::Relaxed);
            if !worked {
                self.sleep(self.config.poll_interval_ms);
            }
        }
    }
}

/// Run an agent until `stop` is cancelled or its round budget is spent.
/// A background thread heartbeats every `heartbeat_interval_ms`.
pub fn run_agent(api: &dyn StoreApi, clock: &dyn Clock, config: &AgentConfig, stop: &CancelToken) -> AgentReport {
    let assignment = AtomicU64::new(0);
    let finished = CancelToken::new();
    std::thread::scope(|scope| {
        scope.spawn(|| {
            let mut since = 0;
            while !stop.is_cancelled() && !finished.is_cancelled() {
                let step = config.poll_interval_ms.clamp(1, config.heartbeat_interval_ms.max(1));
                clock.sleep_ms(step);
                since += step;
                if since >= config.heartbeat_interval_ms {
                    since = 0;
                    let a = assignment.load(Ordering::Relaxed);
                    if let Err(e) = api.heartbeat(&config.agent_id, (a != 0).then_some(a)) {
                        tracing::debug!(agent = %config.agent_id, "heartbeat failed: {e}");
                    }
                }
            }
        });
        let mut agent = Agent {
            api,
            clock,
            config,
            stop,
            report: AgentReport {
                agent_id: config.agent_id.clone(),
                ..Default::default()
            },
            problems: HashMap::new(),
            assignment: &assignment,
        };
        agent.run();
        finished.cancel();
        agent.report
    })
}
