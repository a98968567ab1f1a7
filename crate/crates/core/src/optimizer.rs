//! Local search over schedules: start from an initial solution, apply a
//! random move, evaluate the neighbor on a fixed scenario set and accept or
//! reject it, until the budget runs out.
//!
//! Each restart owns one scenario set (common random numbers) and one
//! search stream, both derived from the configured seeds, so a run is
//! reproducible and independent of the worker count. The best schedule of
//! every restart is re-evaluated on a fresh set twice as large and the
//! winner is reported with that unbiased estimate.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{run_dispatch, Assignment, DispatchError, Plan, Schedule};
use crate::durations::{mix_seed, Realization};
use crate::model::{KpiWeights, MissionModel};
use crate::network::Network;
use crate::robustness::{default_workers, objective, outcomes, summarize, RobustnessEstimate, ScenarioSet};

#[derive(Debug, Error, PartialEq)]
pub enum OptimizeError {
    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
}

/// Shared cancellation flag, checked once per iteration.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    SwapAdjacent,
    Relocate,
    SwapAny,
    ReassignCrew,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MoveWeights {
    pub swap_adjacent: f64,
    pub relocate: f64,
    pub swap_any: f64,
    pub reassign_crew: f64,
}

impl Default for MoveWeights {
    fn default() -> Self {
        Self {
            swap_adjacent: 0.3,
            relocate: 0.3,
            swap_any: 0.3,
            reassign_crew: 0.1,
        }
    }
}

impl MoveWeights {
    fn table(&self) -> [(MoveKind, f64); 4] {
        [
            (MoveKind::SwapAdjacent, self.swap_adjacent),
            (MoveKind::Relocate, self.relocate),
            (MoveKind::SwapAny, self.swap_any),
            (MoveKind::ReassignCrew, self.reassign_crew),
        ]
    }

    fn validate(&self) -> Result<(), String> {
        let t = self.table();
        if t.iter().any(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return Err("move weights must be finite and nonnegative".into());
        }
        let sum: f64 = t.iter().map(|(_, w)| w).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("move weights sum to {sum}, expected 1"));
        }
        Ok(())
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> MoveKind {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let table = self.table();
        for (k, w) in table {
            acc += w;
            if u < acc {
                return k;
            }
        }
        table.iter().rev().find(|(_, w)| *w > 0.0).map_or(MoveKind::SwapAny, |t| t.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Acceptance {
    HillClimb,
    SimulatedAnnealing {
        /// Initial temperature; calibrated from sample moves when absent.
        #[serde(default)]
        t0: Option<f64>,
        #[serde(default = "default_cooling")]
        cooling: f64,
    },
}

fn default_cooling() -> f64 {
    0.995
}

impl Default for Acceptance {
    fn default() -> Self {
        Acceptance::SimulatedAnnealing {
            t0: None,
            cooling: default_cooling(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budget {
    pub max_iterations: Option<u64>,
    /// Wall-clock limit; runs stopped by it are not reproducible.
    pub max_seconds: Option<f64>,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_iterations: Some(2000),
            max_seconds: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialMode {
    RandomPermutation,
    #[default]
    SerialSgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub kpi_weights: KpiWeights,
    pub n_eval_scenarios: usize,
    pub master_seed: u64,
    /// Seed of the move stream; defaults to `master_seed`.
    pub search_seed: Option<u64>,
    pub move_weights: MoveWeights,
    pub acceptance: Acceptance,
    pub budget: Budget,
    pub restart_count: u32,
    pub initial: InitialMode,
    /// Screen candidates on a tenth of the scenarios before full evaluation.
    pub screening: bool,
    /// Added to the objective per failure of the nominal dispatch.
    pub infeasibility_penalty: f64,
    pub workers: Option<usize>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            kpi_weights: KpiWeights::success_only(),
            n_eval_scenarios: 1000,
            master_seed: 0,
            search_seed: None,
            move_weights: MoveWeights::default(),
            acceptance: Acceptance::default(),
            budget: Budget::default(),
            restart_count: 4,
            initial: InitialMode::SerialSgs,
            screening: true,
            infeasibility_penalty: 1.0,
            workers: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.kpi_weights.validate()?;
        self.move_weights.validate()?;
        if self.n_eval_scenarios == 0 {
            return Err("n_eval_scenarios must be positive".into());
        }
        if self.restart_count == 0 {
            return Err("restart_count must be positive".into());
        }
        if self.budget.max_iterations.is_none() && self.budget.max_seconds.is_none() {
            return Err("budget needs max_iterations or max_seconds".into());
        }
        if let Some(s) = self.budget.max_seconds {
            if !(s.is_finite() && s >= 0.0) {
                return Err("max_seconds must be finite and nonnegative".into());
            }
        }
        if let Acceptance::SimulatedAnnealing { t0, cooling } = &self.acceptance {
            if t0.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
                return Err("t0 must be positive".into());
            }
            if !(*cooling > 0.0 && *cooling <= 1.0) {
                return Err("cooling must be in (0, 1]".into());
            }
        }
        if !(self.infeasibility_penalty >= 0.0 && self.infeasibility_penalty.is_finite()) {
            return Err("infeasibility_penalty must be nonnegative".into());
        }
        Ok(())
    }

    /// Short stable hash of the configuration, for problem identifiers.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let words: Vec<u64> = text.bytes().map(u64::from).collect();
        format!("{:016x}", mix_seed(&words))
    }

    fn workers(&self) -> usize {
        self.workers.unwrap_or_else(default_workers).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub restart: u32,
    pub iteration: u64,
    pub current: f64,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_schedule: Schedule,
    /// Estimate on a fresh scenario set twice the search size.
    pub best_estimate: RobustnessEstimate,
    /// Estimate on the search's own scenario set.
    pub search_estimate: RobustnessEstimate,
    pub best_objective: f64,
    pub objective_trace: Vec<TracePoint>,
    pub iterations_used: u64,
    pub accepted_improvements: u64,
    pub seed: u64,
    pub cancelled: bool,
}

/// Progress notification emitted while searching.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgressEvent {
    pub restart: u32,
    pub iteration: u64,
    pub best_objective: f64,
    pub best_p_hat: f64,
    /// Set when this iteration produced a new best for the restart.
    pub improved: Option<Schedule>,
}

/// One structural change to a schedule. Positions index the priority order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Move {
    SwapAdjacent(usize),
    Relocate { from: usize, to: usize },
    SwapAny(usize, usize),
    ReassignCrew { activity: String, slot: usize, crew: String },
}

/// Apply a move, returning the new schedule. The input is left untouched.
pub fn apply_move(schedule: &Schedule, mv: &Move) -> Schedule {
    let mut s = schedule.clone();
    let order = &mut s.priority_order;
    match mv {
        Move::SwapAdjacent(i) => order.swap(*i, *i + 1),
        Move::Relocate { from, to } => {
            let a = order.remove(*from);
            order.insert(*to, a);
        }
        Move::SwapAny(i, j) => order.swap(*i, *j),
        Move::ReassignCrew { activity, slot, crew } => {
            if let Some(a) = s.assignments.get_mut(activity) {
                a.crew[*slot] = crew.clone();
            }
        }
    }
    s
}

/// Draw a random move of `kind`; `None` when the move cannot apply (for
/// example a relocation in a one-activity schedule).
pub fn draw_move<R: Rng>(model: &MissionModel, schedule: &Schedule, kind: MoveKind, rng: &mut R) -> Option<Move> {
    let n = schedule.priority_order.len();
    match kind {
        MoveKind::SwapAdjacent => (n >= 2).then(|| Move::SwapAdjacent(rng.random_range(0..n - 1))),
        MoveKind::Relocate => {
            if n < 2 {
                return None;
            }
            let from = rng.random_range(0..n);
            let mut to = rng.random_range(0..n - 1);
            if to >= from {
                to += 1;
            }
            Some(Move::Relocate { from, to })
        }
        MoveKind::SwapAny => {
            if n < 2 {
                return None;
            }
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            Some(Move::SwapAny(i.min(j), i.max(j)))
        }
        MoveKind::ReassignCrew => {
            let options: Vec<(&String, &Assignment, Vec<&String>)> = schedule
                .assignments
                .iter()
                .filter_map(|(id, a)| {
                    let act = model.activity(id)?;
                    let free: Vec<&String> = act.eligible_crew.iter().filter(|c| !a.crew.contains(c)).collect();
                    (!a.crew.is_empty() && !free.is_empty()).then_some((id, a, free))
                })
                .collect();
            if options.is_empty() {
                return None;
            }
            let (id, a, free) = &options[rng.random_range(0..options.len())];
            Some(Move::ReassignCrew {
                activity: (*id).clone(),
                slot: rng.random_range(0..a.crew.len()),
                crew: free[rng.random_range(0..free.len())].clone(),
            })
        }
    }
}

/// A random neighbor, or `None` when `kind` is inapplicable.
pub fn neighbor<R: Rng>(model: &MissionModel, schedule: &Schedule, kind: MoveKind, rng: &mut R) -> Option<Schedule> {
    draw_move(model, schedule, kind, rng).map(|m| apply_move(schedule, &m))
}

/// Crew members for activity `i`: the `crew_needed` eligible members with
/// the least load, ties by resource order.
fn greedy_crew(net: &Network, i: usize, load: &[i64]) -> Vec<usize> {
    let a = &net.acts[i];
    let mut eligible = a.eligible.clone();
    eligible.sort_by_key(|&r| (load[r], r));
    eligible.truncate(a.crew_needed as usize);
    eligible
}

fn schedule_from(net: &Network, order: &[usize], crew: &[Vec<usize>]) -> Schedule {
    let mut s = Schedule::from_order(order.iter().map(|&i| net.ids[i].clone()));
    for &i in order {
        if !crew[i].is_empty() {
            s.assignments.insert(
                net.ids[i].clone(),
                Assignment {
                    crew: crew[i].iter().map(|&r| net.resource_ids[r].clone()).collect(),
                },
            );
        }
    }
    s
}

fn partial_plan(net: &Network, order: Vec<usize>, crew: &[Vec<usize>]) -> Plan {
    let resources = (0..net.len())
        .map(|i| {
            let mut r = net.acts[i].static_reqs.clone();
            r.extend(crew[i].iter().map(|&c| (c, 1)));
            r
        })
        .collect();
    Plan {
        order,
        resources,
        crew: crew.to_vec(),
    }
}

/// A complete starting schedule. Pinned (already started) activities are
/// left out of the priority order.
pub fn initial_solution(model: &MissionModel, mode: InitialMode, seed: u64) -> Schedule {
    let net = &model.net;
    let free: Vec<usize> = (0..net.len()).filter(|&i| net.acts[i].fixed_start.is_none()).collect();
    let mut crew: Vec<Vec<usize>> = vec![Vec::new(); net.len()];
    let mut load = vec![0i64; net.capacities.len()];
    let nominal = Realization::nominal(net);
    match mode {
        InitialMode::RandomPermutation => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order = free;
            order.shuffle(&mut rng);
            for &i in &order {
                crew[i] = greedy_crew(net, i, &load);
                for &r in &crew[i] {
                    load[r] += nominal.durations[i];
                }
            }
            schedule_from(net, &order, &crew)
        }
        InitialMode::SerialSgs => {
            let mut seq: Vec<usize> = (0..net.len()).filter(|&i| net.acts[i].fixed_start.is_some()).collect();
            let mut placed = vec![false; net.len()];
            for &i in &seq {
                placed[i] = true;
            }
            let mut order = Vec::with_capacity(free.len());
            while order.len() < free.len() {
                let ready: Vec<usize> = free
                    .iter()
                    .copied()
                    .filter(|&i| !placed[i] && net.preds[i].iter().all(|&p| placed[p]))
                    .collect();
                let mut best: Option<(i64, usize, Vec<usize>)> = None;
                for &c in &ready {
                    let mut trial = crew.clone();
                    trial[c] = greedy_crew(net, c, &load);
                    let mut o = seq.clone();
                    o.push(c);
                    let run = run_dispatch(net, &partial_plan(net, o, &trial), &nominal, false);
                    let start = run.start[c].unwrap_or(i64::MAX);
                    if best.as_ref().is_none_or(|b| start < b.0) {
                        best = Some((start, c, trial[c].clone()));
                    }
                }
                let (_, c, chosen) = best.expect("acyclic network always has a ready activity");
                for &r in &chosen {
                    load[r] += nominal.durations[c];
                }
                crew[c] = chosen;
                placed[c] = true;
                seq.push(c);
                order.push(c);
            }
            schedule_from(net, &order, &crew)
        }
    }
}

#[derive(Debug, Clone)]
struct Eval {
    objective: f64,
    estimate: RobustnessEstimate,
}

struct Evaluator<'a> {
    model: &'a MissionModel,
    config: &'a SearchConfig,
    set: ScenarioSet,
    horizon: i64,
    workers: usize,
    screen: usize,
    full_cache: HashMap<(Vec<usize>, Vec<Vec<usize>>), Eval>,
}

impl<'a> Evaluator<'a> {
    fn new(model: &'a MissionModel, config: &'a SearchConfig, set_seed: u64, n: usize) -> Self {
        let screen = if config.screening && n / 10 >= 30 { n / 10 } else { 0 };
        Self {
            model,
            config,
            set: ScenarioSet::sample(model, set_seed, n),
            horizon: model.net.horizon_end,
            workers: config.workers(),
            screen,
            full_cache: HashMap::new(),
        }
    }

    fn penalty(&self, plan: &Plan) -> f64 {
        if self.config.infeasibility_penalty == 0.0 {
            return 0.0;
        }
        let net = &self.model.net;
        let run = run_dispatch(net, plan, &Realization::nominal(net), false);
        self.config.infeasibility_penalty * run.failures.len() as f64
    }

    fn score(&self, plan: &Plan, k: usize) -> Eval {
        let net = &self.model.net;
        let outs = outcomes(net, plan, &self.set.reals[..k], self.workers);
        let estimate = summarize(&outs, Some(self.set.master_seed()));
        let objective = objective(&estimate, &self.config.kpi_weights, self.horizon) + self.penalty(plan);
        Eval { objective, estimate }
    }

    fn full(&mut self, schedule: &Schedule) -> Result<Eval, DispatchError> {
        let plan = Plan::new(&self.model.net, schedule)?;
        let key = (plan.order.clone(), plan.crew.clone());
        if let Some(e) = self.full_cache.get(&key) {
            return Ok(e.clone());
        }
        let e = self.score(&plan, self.set.len());
        self.full_cache.insert(key, e.clone());
        Ok(e)
    }

    /// Full evaluation unless the screening prefix shows the candidate is
    /// clearly above `threshold` (two standard errors).
    fn screened(&mut self, schedule: &Schedule, threshold: f64) -> Result<Option<Eval>, DispatchError> {
        let plan = Plan::new(&self.model.net, schedule)?;
        let key = (plan.order.clone(), plan.crew.clone());
        if let Some(e) = self.full_cache.get(&key) {
            return Ok(Some(e.clone()));
        }
        if self.screen > 0 {
            let quick = self.score(&plan, self.screen);
            let m = self.screen as f64;
            let p = (quick.estimate.successes as f64 + 1.0) / (m + 2.0);
            let sigma = self.config.kpi_weights.w_success * (p * (1.0 - p) / m).sqrt();
            if quick.objective - 2.0 * sigma > threshold {
                return Ok(None);
            }
        }
        let e = self.score(&plan, self.set.len());
        self.full_cache.insert(key, e.clone());
        Ok(Some(e))
    }
}

fn calibrate_t0(
    eval: &mut Evaluator<'_>,
    start: &Schedule,
    start_obj: f64,
    weights: &MoveWeights,
    rng: &mut ChaCha8Rng,
) -> Result<f64, DispatchError> {
    let mut worse = Vec::new();
    let mut tries = 0;
    while tries < 30 {
        tries += 1;
        let kind = weights.draw(rng);
        let Some(cand) = neighbor(eval.model, start, kind, rng) else { continue };
        let e = eval.full(&cand)?;
        if e.objective > start_obj {
            worse.push(e.objective - start_obj);
        }
    }
    if worse.is_empty() {
        return Ok(1e-3);
    }
    let mean = worse.iter().sum::<f64>() / worse.len() as f64;
    Ok(-mean / 0.5f64.ln())
}

struct RestartOutcome {
    best: Schedule,
    estimate: RobustnessEstimate,
}

/// Run the search. Returns the start (or initial) schedule evaluated when
/// the budget is zero.
pub fn optimize(
    model: &MissionModel,
    start: Option<&Schedule>,
    config: &SearchConfig,
    cancel: &CancelToken,
) -> Result<SearchResult, OptimizeError> {
    optimize_with_progress(model, start, config, cancel, &mut |_| {})
}

pub fn optimize_with_progress(
    model: &MissionModel,
    start: Option<&Schedule>,
    config: &SearchConfig,
    cancel: &CancelToken,
    progress: &mut dyn FnMut(&ProgressEvent),
) -> Result<SearchResult, OptimizeError> {
    config.validate().map_err(OptimizeError::InvalidConfig)?;
    if let Some(s) = start {
        s.validate(model)?;
    }
    let began = Instant::now();
    let search_seed = config.search_seed.unwrap_or(config.master_seed);
    let n = config.n_eval_scenarios;
    let restarts = config.restart_count as u64;
    let total = config.budget.max_iterations.unwrap_or(u64::MAX);
    let out_of_time = || config.budget.max_seconds.is_some_and(|s| began.elapsed().as_secs_f64() >= s);

    let mut trace = Vec::new();
    let mut iterations_used = 0;
    let mut accepted_improvements = 0;
    let mut cancelled = false;
    let mut finished: Vec<RestartOutcome> = Vec::new();

    for r in 0..restarts {
        let share = if total == u64::MAX {
            u64::MAX
        } else {
            total / restarts + u64::from(r < total % restarts)
        };
        if r > 0 && (share == 0 || cancelled || out_of_time()) {
            continue;
        }
        let r32 = r as u32;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[search_seed, r]));
        let mut eval = Evaluator::new(model, config, mix_seed(&[config.master_seed, r]), n);
        let init = match (r, start) {
            (0, Some(s)) => s.clone(),
            (0, None) => initial_solution(model, config.initial, mix_seed(&[search_seed, r, 1])),
            _ => initial_solution(model, InitialMode::RandomPermutation, mix_seed(&[search_seed, r, 1])),
        };
        let first = eval.full(&init)?;
        let mut current = (init.clone(), first.objective);
        let mut best = (init, first);

        let mut temperature = match config.acceptance {
            Acceptance::HillClimb => 0.0,
            Acceptance::SimulatedAnnealing { t0: Some(t), .. } => t,
            Acceptance::SimulatedAnnealing { t0: None, .. } if share > 0 => {
                calibrate_t0(&mut eval, &current.0, current.1, &config.move_weights, &mut rng)?
            }
            Acceptance::SimulatedAnnealing { .. } => 0.0,
        };
        let cooling = match config.acceptance {
            Acceptance::SimulatedAnnealing { cooling, .. } => cooling,
            Acceptance::HillClimb => 1.0,
        };

        let mut it = 0;
        while it < share {
            if cancel.is_cancelled() {
                cancelled = true;
                break;
            }
            if out_of_time() {
                break;
            }
            let kind = config.move_weights.draw(&mut rng);
            let Some(cand) = neighbor(model, &current.0, kind, &mut rng) else {
                // a redraw still consumes the iteration so inapplicable
                // moves cannot loop forever
                it += 1;
                iterations_used += 1;
                continue;
            };
            it += 1;
            iterations_used += 1;
            let slack = if temperature > 0.0 { 3.0 * temperature } else { 0.0 };
            let evaluated = eval.screened(&cand, current.1 + slack)?;
            let mut improved = None;
            if let Some(e) = evaluated {
                let delta = e.objective - current.1;
                let accept = delta <= 0.0 || (temperature > 0.0 && rng.random::<f64>() < (-delta / temperature).exp());
                if accept {
                    if delta < 0.0 {
                        accepted_improvements += 1;
                    }
                    current = (cand.clone(), e.objective);
                    if e.objective < best.1.objective {
                        best = (cand, e);
                        improved = Some(best.0.clone());
                    }
                }
            }
            temperature *= cooling;
            trace.push(TracePoint {
                restart: r32,
                iteration: it,
                current: current.1,
                best: best.1.objective,
            });
            progress(&ProgressEvent {
                restart: r32,
                iteration: it,
                best_objective: best.1.objective,
                best_p_hat: best.1.estimate.p_hat,
                improved,
            });
        }
        finished.push(RestartOutcome {
            best: best.0,
            estimate: best.1.estimate,
        });
    }

    // re-evaluate every restart's best on one fresh, larger set
    let fresh_seed = mix_seed(&[config.master_seed, u64::from(u32::MAX), 0x5eed]);
    let mut judge = Evaluator::new(model, config, fresh_seed, 2 * n);
    let mut winner: Option<(usize, Eval)> = None;
    for (k, o) in finished.iter().enumerate() {
        let e = judge.full(&o.best)?;
        if winner.as_ref().is_none_or(|w| e.objective < w.1.objective) {
            winner = Some((k, e));
        }
    }
    let (k, fresh) = winner.expect("restart 0 always runs");
    let chosen = finished.swap_remove(k);
    Ok(SearchResult {
        best_schedule: chosen.best,
        best_objective: fresh.objective,
        best_estimate: fresh.estimate,
        search_estimate: chosen.estimate,
        objective_trace: trace,
        iterations_used,
        accepted_improvements,
        seed: search_seed,
        cancelled,
    })
}

/// Estimate and objective of `schedule` on the same fresh scenario set that
/// [`optimize`] uses to pick its final answer, so scores from independent
/// searches with one `master_seed` are directly comparable.
pub fn score_schedule(
    model: &MissionModel,
    schedule: &Schedule,
    config: &SearchConfig,
) -> Result<(RobustnessEstimate, f64), OptimizeError> {
    config.validate().map_err(OptimizeError::InvalidConfig)?;
    schedule.validate(model)?;
    let fresh_seed = mix_seed(&[config.master_seed, u64::from(u32::MAX), 0x5eed]);
    let mut judge = Evaluator::new(model, config, fresh_seed, 2 * config.n_eval_scenarios);
    let e = judge.full(schedule)?;
    Ok((e.estimate, e.objective))
}
