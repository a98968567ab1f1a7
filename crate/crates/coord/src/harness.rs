//! Seeded multi-agent runs with injected faults, used by the test suites
//! and the `rams agent` smoke mode.
//!
//! A run puts one model into a store, opens one running optimize request
//! plus a batch of one-shots, and lets several in-process agents work on
//! them through [`Latency`] and [`Killable`] wrappers. A monitor samples the
//! pool's best rank key while the agents run. Afterwards the run reports
//! what the invariants need: per-agent reports, the sampled top-1 history,
//! one-shot effects and whether the log replays to the same state.

use std::path::PathBuf;
use std::sync::Arc;

use rams_core::{optimize, CancelToken, ModelFile, SearchConfig};

use crate::agent::{round_config, run_agent, AgentConfig, AgentReport};
use crate::api::StoreApi;
use crate::clock::{Clock, Millis, ScaledClock};
use crate::faults::{KillSwitch, Killable, Latency};
use crate::records::{OneShotAction, RequestKind, RequestStatus};
use crate::store::{Store, StoreConfig, StoreError, StoreState};

#[derive(Debug, Clone)]
pub struct HarnessConfig {
    pub seed: u64,
    pub agents: usize,
    pub rounds_per_agent: u64,
    pub iterations_per_round: u64,
    /// Kill this agent once store time passes `kill_at_ms`.
    pub kill: Option<(usize, Millis)>,
    /// The victim claims a one-shot before it starts, so its death leaves
    /// a lease behind.
    pub victim_holds_claim: bool,
    /// Start one more agent once store time passes this.
    pub late_agent_at_ms: Option<Millis>,
    pub latency_ms: Millis,
    /// Virtual time speed-up.
    pub clock_factor: f64,
    pub one_shots: usize,
    pub model: ModelFile,
    pub search: SearchConfig,
    /// Log file; the run reopens it to check crash recovery.
    pub log_path: Option<PathBuf>,
}

impl HarnessConfig {
    pub fn new(model: ModelFile, search: SearchConfig) -> Self {
        Self {
            seed: 0,
            agents: 3,
            rounds_per_agent: 4,
            iterations_per_round: 100,
            kill: None,
            victim_holds_claim: false,
            late_agent_at_ms: None,
            latency_ms: 0,
            clock_factor: 200.0,
            one_shots: 4,
            model,
            search,
            log_path: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HarnessOutcome {
    pub problem_id: String,
    pub reports: Vec<AgentReport>,
    /// Best rank key over time, one sample per monitor tick with a
    /// non-empty pool.
    pub top1_history: Vec<f64>,
    pub one_shot_ids: Vec<u64>,
    pub state: StoreState,
    /// State rebuilt from the log equals the live state (None without log).
    pub replay_matches: Option<bool>,
    /// Store time when the late agent was started.
    pub late_started_at: Option<Millis>,
}

impl HarnessOutcome {
    /// Every one-shot finished and its effect was applied exactly once.
    pub fn one_shots_exactly_once(&self) -> bool {
        self.one_shot_ids.iter().all(|id| {
            let done = matches!(self.state.requests[id].status, RequestStatus::Done { .. });
            let applied = self.state.applied_effects.iter().filter(|x| *x == id).count();
            done && applied == 1
        })
    }

    pub fn top1_never_worsens(&self) -> bool {
        self.top1_history.windows(2).all(|w| w[1] <= w[0])
    }

    pub fn best(&self) -> Option<f64> {
        self.state.pools.get(&self.problem_id).and_then(|p| p.first()).map(|e| e.rank_key)
    }
}

fn agent_config(cfg: &HarnessConfig, k: usize) -> AgentConfig {
    AgentConfig {
        max_rounds: Some(cfg.rounds_per_agent),
        iterations_per_round: cfg.iterations_per_round,
        ..AgentConfig::new(format!("agent{k}"), cfg.seed.wrapping_mul(1000).wrapping_add(k as u64))
    }
}

/// Run the scenario described by `cfg` to completion.
pub fn run_harness(cfg: &HarnessConfig) -> Result<HarnessOutcome, StoreError> {
    let clock: Arc<ScaledClock> = Arc::new(ScaledClock::new(cfg.clock_factor));
    let store_config = StoreConfig {
        claim_seed: cfg.seed,
        fsync: false,
        ..Default::default()
    };
    let store = Arc::new(match &cfg.log_path {
        Some(p) => Store::open(p, store_config.clone(), clock.clone())?,
        None => Store::in_memory(store_config.clone(), clock.clone()),
    });
    let mission = format!("m{}", cfg.seed);
    store.put_model(&mission, cfg.model.clone(), None)?;
    let version = store.model_version(&mission)?;
    let problem = store.define_problem(&mission, cfg.search.clone())?;
    let pid = problem.problem_id.clone();
    let model = problem.model.to_mission()?;
    store.submit(&mission, version, RequestKind::RunningOptimize { problem_id: pid.clone() }, None)?;
    let mut one_shot_ids = Vec::new();
    for k in 0..cfg.one_shots {
        let schedule = rams_core::optimizer::initial_solution(
            &model,
            rams_core::optimizer::InitialMode::RandomPermutation,
            cfg.seed ^ (k as u64 + 1),
        );
        let id = store.submit(
            &mission,
            version,
            RequestKind::OneShot {
                action: OneShotAction::Evaluate {
                    problem_id: pid.clone(),
                    schedule,
                },
            },
            Some(format!("eval-{k}")),
        )?;
        one_shot_ids.push(id);
    }
    if let (Some((victim, _)), true) = (cfg.kill, cfg.victim_holds_claim) {
        let id = agent_config(cfg, victim).agent_id;
        store.register(&id, Default::default())?;
        store.claim_one_shot(&id)?;
    }

    let start = clock.now_ms();
    let switches: Vec<KillSwitch> = (0..=cfg.agents).map(|_| KillSwitch::new()).collect();
    let stops: Vec<CancelToken> = (0..=cfg.agents).map(|_| CancelToken::new()).collect();
    let mut late_started_at = None;
    let mut top1_history = Vec::new();

    let reports = std::thread::scope(|scope| {
        let spawn = |k: usize| {
            let api = Killable::new(Latency::new(store.clone(), clock.clone(), cfg.latency_ms), switches[k].clone());
            let clock = clock.clone();
            let config = agent_config(cfg, k);
            let stop = stops[k].clone();
            scope.spawn(move || run_agent(&api, clock.as_ref(), &config, &stop))
        };
        let mut handles: Vec<_> = (0..cfg.agents).map(spawn).collect();
        let mut killed = false;
        let survivors_done = |hs: &[std::thread::ScopedJoinHandle<'_, AgentReport>], victim: Option<usize>| {
            hs.iter().enumerate().all(|(k, h)| Some(k) == victim || h.is_finished())
        };
        loop {
            let now = clock.now_ms() - start;
            if let Some((victim, at)) = cfg.kill {
                if !killed && now >= at {
                    switches[victim].kill();
                    killed = true;
                }
            }
            if let Some(at) = cfg.late_agent_at_ms {
                if late_started_at.is_none() && now >= at {
                    late_started_at = Some(clock.now_ms());
                    handles.push(spawn(cfg.agents));
                }
            }
            if let Some(best) = store.pool(&pid).ok().and_then(|p| p.first().map(|e| e.rank_key)) {
                top1_history.push(best);
            }
            let victim = cfg.kill.map(|k| k.0);
            let late_pending = cfg.late_agent_at_ms.is_some() && late_started_at.is_none();
            if !late_pending && survivors_done(&handles, victim) && (killed || victim.is_none()) {
                break;
            }
            clock.sleep_ms(250);
        }
        // sweep one-shots whose claimant died; leases run out on their own
        let sweeper = AgentConfig {
            max_rounds: Some(0),
            ..AgentConfig::new("sweeper", cfg.seed)
        };
        while one_shot_ids
            .iter()
            .any(|id| store.request(*id).map(|r| !r.status.is_final()).unwrap_or(false))
        {
            let api = Latency::new(store.clone(), clock.clone(), cfg.latency_ms);
            run_agent(&api, clock.as_ref(), &sweeper, &CancelToken::new());
            clock.sleep_ms(1_000);
        }
        if let Some(best) = store.pool(&pid).ok().and_then(|p| p.first().map(|e| e.rank_key)) {
            top1_history.push(best);
        }
        for s in &stops {
            s.cancel();
        }
        handles.into_iter().map(|h| h.join().expect("agent thread")).collect::<Vec<_>>()
    });

    let state = store.state();
    let replay_matches = match &cfg.log_path {
        Some(p) => {
            let again = Store::open(p, store_config, clock.clone())?;
            Some(again.state() == state)
        }
        None => None,
    };
    Ok(HarnessOutcome {
        problem_id: pid,
        reports,
        top1_history,
        one_shot_ids,
        state,
        replay_matches,
        late_started_at,
    })
}

/// Rerun the search behind every pool entry that records its origin and
/// check it reproduces the same schedule and rank key. Returns how many
/// entries were checked.
pub fn verify_provenance(state: &StoreState, problem_id: &str) -> Result<usize, String> {
    let problem = state.problems.get(problem_id).ok_or("unknown problem")?;
    let model = problem.model.to_mission().map_err(|e| e.to_string())?;
    let mut checked = 0;
    for e in state.pools.get(problem_id).into_iter().flatten() {
        let Some(o) = &e.origin else { continue };
        let config = round_config(&problem.config, o.iterations, o.search_seed, 1);
        let r = optimize(&model, o.start.as_ref(), &config, &CancelToken::new()).map_err(|e| e.to_string())?;
        if r.best_schedule != e.schedule || r.best_objective != e.rank_key {
            return Err(format!("entry from {} does not replay", e.producing_agent));
        }
        checked += 1;
    }
    Ok(checked)
}

/// Convenience for callers that only hold a [`StoreApi`].
pub fn best_rank(api: &dyn StoreApi, problem_id: &str) -> Result<Option<f64>, StoreError> {
    Ok(api.fetch_pool(problem_id)?.first().map(|e| e.rank_key))
}
