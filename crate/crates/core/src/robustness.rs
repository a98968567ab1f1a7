//! Success probability of a schedule (Monte Carlo and exact) and the
//! expected KPIs that go with it.
//!
//! Scenario `i` of a run is always drawn from stream `(master_seed, i)`, and
//! per-scenario outcomes are reduced in index order, so results depend only
//! on the seed and never on how many workers evaluated them.

use std::collections::BTreeMap;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{run_dispatch, DispatchError, DispatchProtocol, FailureKind, Plan, Schedule};
use crate::durations::{enumerate_realizations, Realization, ScenarioError, DEFAULT_SUPPORT_CAP};
use crate::model::{KpiWeights, MissionModel};
use crate::network::Network;

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error, PartialEq)]
pub enum RobustnessError {
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("at least one scenario is required")]
    NoSamples,
    #[error("at least two schedules are required for a comparison")]
    TooFewSchedules,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    MonteCarlo,
    Exact,
}

/// Mean and standard error of a KPI over successful scenarios; both are
/// `None` when no scenario succeeded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KpiStat {
    pub mean: Option<f64>,
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KpiSummary {
    /// Minutes from time zero to the last activity end.
    pub makespan: KpiStat,
    /// Sum of activity costs.
    pub cost: KpiStat,
    /// Standard deviation of busy minutes across crew members.
    pub workload_balance: KpiStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessEstimate {
    pub method: EstimateMethod,
    pub p_hat: f64,
    pub p_fail: f64,
    /// Sampled scenarios, or support size for exact results.
    #[serde(rename = "n")]
    pub n_samples: u64,
    pub successes: u64,
    pub std_error: f64,
    pub ci95: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    pub kpis: KpiSummary,
    /// Scenario counts by kind of the first failure found.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub failure_counts: BTreeMap<String, u64>,
}

impl RobustnessEstimate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("estimate serialization is infallible")
    }
}

/// 95% interval: normal approximation, Wilson score when `p` is 0 or 1.
pub fn ci95(p: f64, n: u64) -> [f64; 2] {
    let n = n as f64;
    if p <= 0.0 || p >= 1.0 {
        let z2 = Z95 * Z95;
        let denom = 1.0 + z2 / n;
        let center = (p + z2 / (2.0 * n)) / denom;
        let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
        // the observed edge is the exact bound on that side
        return if p <= 0.0 {
            [0.0, (center + half).min(1.0)]
        } else {
            [(center - half).max(0.0), 1.0]
        };
    }
    let half = Z95 * (p * (1.0 - p) / n).sqrt();
    [(p - half).clamp(0.0, 1.0), (p + half).clamp(0.0, 1.0)]
}

/// Result of dispatching one scenario.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Outcome {
    pub success: bool,
    pub makespan: i64,
    pub cost: f64,
    pub imbalance: f64,
    pub failure: Option<FailureKind>,
}

/// Evaluate one realization in fast mode.
pub(crate) fn outcome(net: &Network, plan: &Plan, real: &Realization) -> Outcome {
    let run = run_dispatch(net, plan, real, true);
    if !run.success() {
        return Outcome {
            success: false,
            makespan: 0,
            cost: 0.0,
            imbalance: 0.0,
            failure: run.failures.first().map(|f| f.kind),
        };
    }
    let cost = net.acts.iter().map(|a| a.cost).sum();
    let mut busy = vec![0i64; net.capacities.len()];
    for (i, res) in plan.resources.iter().enumerate() {
        for &(r, _) in res {
            if net.is_crew[r] {
                busy[r] += real.durations[i];
            }
        }
    }
    let crew: Vec<f64> = busy
        .iter()
        .zip(&net.is_crew)
        .filter(|(_, &c)| c)
        .map(|(&b, _)| b as f64)
        .collect();
    let imbalance = if crew.is_empty() {
        0.0
    } else {
        let m = crew.iter().sum::<f64>() / crew.len() as f64;
        (crew.iter().map(|b| (b - m) * (b - m)).sum::<f64>() / crew.len() as f64).sqrt()
    };
    Outcome {
        success: true,
        makespan: run.makespan(),
        cost,
        imbalance,
        failure: None,
    }
}

pub(crate) fn default_workers() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

/// Evaluate realizations in parallel, returning outcomes in input order.
pub(crate) fn outcomes(net: &Network, plan: &Plan, reals: &[Realization], workers: usize) -> Vec<Outcome> {
    let workers = workers.max(1).min(reals.len().max(1));
    if workers == 1 {
        return reals.iter().map(|r| outcome(net, plan, r)).collect();
    }
    let chunk = reals.len().div_ceil(workers);
    thread::scope(|s| {
        let handles: Vec<_> = reals
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|r| outcome(net, plan, r)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("scenario worker panicked"))
            .collect()
    })
}

fn failure_label(kind: FailureKind) -> String {
    serde_json::to_value(kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn kpi_stat(values: &[f64]) -> KpiStat {
    if values.is_empty() {
        return KpiStat::default();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let se = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    KpiStat {
        mean: Some(mean),
        std_error: Some(se),
    }
}

/// Reduce Monte Carlo outcomes, in index order.
pub(crate) fn summarize(outcomes: &[Outcome], master_seed: Option<u64>) -> RobustnessEstimate {
    let n = outcomes.len() as u64;
    let successes = outcomes.iter().filter(|o| o.success).count() as u64;
    let p = successes as f64 / n as f64;
    let ok: Vec<&Outcome> = outcomes.iter().filter(|o| o.success).collect();
    let mut failure_counts = BTreeMap::new();
    for o in outcomes {
        if let Some(k) = o.failure {
            *failure_counts.entry(failure_label(k)).or_insert(0) += 1;
        }
    }
    RobustnessEstimate {
        method: EstimateMethod::MonteCarlo,
        p_hat: p,
        p_fail: 1.0 - p,
        n_samples: n,
        successes,
        std_error: (p * (1.0 - p) / n as f64).sqrt(),
        ci95: ci95(p, n),
        master_seed,
        kpis: KpiSummary {
            makespan: kpi_stat(&ok.iter().map(|o| o.makespan as f64).collect::<Vec<_>>()),
            cost: kpi_stat(&ok.iter().map(|o| o.cost).collect::<Vec<_>>()),
            workload_balance: kpi_stat(&ok.iter().map(|o| o.imbalance).collect::<Vec<_>>()),
        },
        failure_counts,
    }
}

/// A fixed set of sampled scenarios shared by every schedule evaluated
/// against it (common random numbers).
#[derive(Debug, Clone)]
pub struct ScenarioSet {
    master_seed: u64,
    pub(crate) reals: Vec<Realization>,
}

impl ScenarioSet {
    pub fn sample(model: &MissionModel, master_seed: u64, n: usize) -> Self {
        Self::sample_net(&model.net, master_seed, n)
    }

    pub(crate) fn sample_net(net: &Network, master_seed: u64, n: usize) -> Self {
        Self {
            master_seed,
            reals: (0..n as u64).map(|i| Realization::sample(net, master_seed, i)).collect(),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn len(&self) -> usize {
        self.reals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reals.is_empty()
    }

    /// Estimate over the first `k` scenarios of the set.
    pub fn estimate_prefix(
        &self,
        model: &MissionModel,
        schedule: &Schedule,
        k: usize,
        workers: usize,
    ) -> Result<RobustnessEstimate, RobustnessError> {
        let k = k.min(self.reals.len());
        if k == 0 {
            return Err(RobustnessError::NoSamples);
        }
        let plan = Plan::new(&model.net, schedule)?;
        Ok(summarize(
            &outcomes(&model.net, &plan, &self.reals[..k], workers),
            Some(self.master_seed),
        ))
    }

    pub fn estimate(
        &self,
        model: &MissionModel,
        schedule: &Schedule,
        workers: usize,
    ) -> Result<RobustnessEstimate, RobustnessError> {
        self.estimate_prefix(model, schedule, self.reals.len(), workers)
    }

    /// Per-scenario success indicators, in index order.
    pub fn successes(&self, model: &MissionModel, schedule: &Schedule, workers: usize) -> Result<Vec<bool>, RobustnessError> {
        let plan = Plan::new(&model.net, schedule)?;
        Ok(outcomes(&model.net, &plan, &self.reals, workers)
            .into_iter()
            .map(|o| o.success)
            .collect())
    }
}

/// Monte Carlo estimate over scenarios `0..n` of stream family `master_seed`.
pub fn estimate_robustness(
    model: &MissionModel,
    schedule: &Schedule,
    protocol: DispatchProtocol,
    n: usize,
    master_seed: u64,
) -> Result<RobustnessEstimate, RobustnessError> {
    estimate_robustness_with_workers(model, schedule, protocol, n, master_seed, default_workers())
}

pub fn estimate_robustness_with_workers(
    model: &MissionModel,
    schedule: &Schedule,
    protocol: DispatchProtocol,
    n: usize,
    master_seed: u64,
    workers: usize,
) -> Result<RobustnessEstimate, RobustnessError> {
    let DispatchProtocol::Asap = protocol;
    if n == 0 {
        return Err(RobustnessError::NoSamples);
    }
    // validate before sampling
    Plan::new(&model.net, schedule)?;
    ScenarioSet::sample(model, master_seed, n).estimate(model, schedule, workers)
}

fn weighted_stat(values: &[(f64, f64)]) -> KpiStat {
    let total: f64 = values.iter().map(|v| v.1).sum();
    if values.is_empty() || total <= 0.0 {
        return KpiStat::default();
    }
    let mean = values.iter().map(|(v, p)| v * p).sum::<f64>() / total;
    KpiStat {
        mean: Some(mean),
        std_error: Some(0.0),
    }
}

/// Exact success probability over the full support of an all-discrete
/// model: the probability-weighted sum of success indicators, accumulated
/// in enumeration order. KPIs are conditional on success.
pub fn exact_robustness(
    model: &MissionModel,
    schedule: &Schedule,
    protocol: DispatchProtocol,
) -> Result<RobustnessEstimate, RobustnessError> {
    exact_robustness_capped(model, schedule, protocol, DEFAULT_SUPPORT_CAP)
}

pub fn exact_robustness_capped(
    model: &MissionModel,
    schedule: &Schedule,
    protocol: DispatchProtocol,
    cap: u64,
) -> Result<RobustnessEstimate, RobustnessError> {
    let DispatchProtocol::Asap = protocol;
    let net = &model.net;
    let plan = Plan::new(net, schedule)?;
    let support = enumerate_realizations(net, cap)?;
    exact_over(net, &plan, &support)
}

pub(crate) fn exact_over(
    net: &Network,
    plan: &Plan,
    support: &[(Realization, f64)],
) -> Result<RobustnessEstimate, RobustnessError> {
    let mut p = 0.0;
    let mut successes = 0;
    let mut mk = Vec::new();
    let mut cost = Vec::new();
    let mut bal = Vec::new();
    let mut failure_counts = BTreeMap::new();
    for (real, prob) in support {
        let o = outcome(net, plan, real);
        if o.success {
            p += prob;
            successes += 1;
            mk.push((o.makespan as f64, *prob));
            cost.push((o.cost, *prob));
            bal.push((o.imbalance, *prob));
        } else if let Some(k) = o.failure {
            *failure_counts.entry(failure_label(k)).or_insert(0) += 1;
        }
    }
    let p = p.clamp(0.0, 1.0);
    Ok(RobustnessEstimate {
        method: EstimateMethod::Exact,
        p_hat: p,
        p_fail: 1.0 - p,
        n_samples: support.len() as u64,
        successes,
        std_error: 0.0,
        ci95: [p, p],
        master_seed: None,
        kpis: KpiSummary {
            makespan: weighted_stat(&mk),
            cost: weighted_stat(&cost),
            workload_balance: weighted_stat(&bal),
        },
        failure_counts,
    })
}

/// Scalar objective, lower is better. Missing KPIs (no successful
/// scenario) count at their normalized worst of 1.
pub fn objective(estimate: &RobustnessEstimate, weights: &KpiWeights, horizon_minutes: i64) -> f64 {
    let h = horizon_minutes.max(1) as f64;
    let scale = if weights.cost_scale > 0.0 { weights.cost_scale } else { 1.0 };
    let k = &estimate.kpis;
    let term = |w: f64, v: Option<f64>, norm: f64| if w == 0.0 { 0.0 } else { w * v.map_or(1.0, |v| v / norm) };
    weights.w_success * (1.0 - estimate.p_hat)
        + term(weights.w_expected_makespan, k.makespan.mean, h)
        + term(weights.w_expected_cost, k.cost.mean, scale)
        + term(weights.w_workload_balance, k.workload_balance.mean, h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSchedule {
    /// Position in the input list.
    pub index: usize,
    pub rank: usize,
    pub estimate: RobustnessEstimate,
    /// Paired standard error of the difference to the best schedule.
    pub paired_std_error_vs_best: f64,
    pub diff_vs_best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub n: u64,
    pub master_seed: u64,
    pub ranking: Vec<RankedSchedule>,
}

impl Comparison {
    /// Paired standard error of `p_a - p_b` given success indicators on
    /// the same scenarios.
    pub fn paired_std_error(a: &[bool], b: &[bool]) -> f64 {
        let n = a.len().min(b.len());
        if n < 2 {
            return 0.0;
        }
        let d: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| f64::from(u8::from(x)) - f64::from(u8::from(y))).collect();
        let m = d.iter().sum::<f64>() / n as f64;
        let var = d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n as f64 - 1.0);
        (var / n as f64).sqrt()
    }
}

/// Rank schedules by success probability on one common scenario set.
/// Ties are broken by the serialized schedule, so the ranking does not
/// depend on input order.
pub fn compare_schedules(
    model: &MissionModel,
    schedules: &[Schedule],
    n: usize,
    master_seed: u64,
    workers: usize,
) -> Result<Comparison, RobustnessError> {
    if schedules.len() < 2 {
        return Err(RobustnessError::TooFewSchedules);
    }
    if n == 0 {
        return Err(RobustnessError::NoSamples);
    }
    for s in schedules {
        Plan::new(&model.net, s)?;
    }
    let set = ScenarioSet::sample(model, master_seed, n);
    let mut rows = Vec::with_capacity(schedules.len());
    for (i, s) in schedules.iter().enumerate() {
        let plan = Plan::new(&model.net, s)?;
        let outs = outcomes(&model.net, &plan, &set.reals, workers);
        let flags: Vec<bool> = outs.iter().map(|o| o.success).collect();
        rows.push((i, summarize(&outs, Some(master_seed)), flags, serde_json::to_string(s).unwrap_or_default()));
    }
    rows.sort_by(|a, b| b.1.p_hat.total_cmp(&a.1.p_hat).then_with(|| a.3.cmp(&b.3)));
    let best_flags = rows[0].2.clone();
    let best_p = rows[0].1.p_hat;
    let ranking = rows
        .into_iter()
        .enumerate()
        .map(|(rank, (index, estimate, flags, _))| RankedSchedule {
            index,
            rank,
            paired_std_error_vs_best: Comparison::paired_std_error(&best_flags, &flags),
            diff_vs_best: best_p - estimate.p_hat,
            estimate,
        })
        .collect();
    Ok(Comparison {
        n: n as u64,
        master_seed,
        ranking,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{four_task_model, four_task_order};
    use crate::model::{Activity, DurationModel, MissionCalendar, ModelFile, ProjectModel, WorkWindow};

    fn coin() -> MissionModel {
        four_task_model(DurationModel::uniform(&[60, 90])).to_mission().unwrap()
    }

    #[test]
    fn four_task_exact_values() {
        let m = coin();
        let abcd = exact_robustness(&m, &four_task_order("ABCD"), DispatchProtocol::Asap).unwrap();
        let acbd = exact_robustness(&m, &four_task_order("ACBD"), DispatchProtocol::Asap).unwrap();
        assert_eq!(abcd.p_hat, 0.5);
        assert_eq!(acbd.p_hat, 1.0);
        assert_eq!(abcd.n_samples, 2);
    }

    #[test]
    fn deterministic_feasible_gives_certainty() {
        let m = four_task_model(DurationModel::fixed(60)).to_mission().unwrap();
        let e = estimate_robustness(&m, &four_task_order("ABCD"), DispatchProtocol::Asap, 200, 3).unwrap();
        assert_eq!(e.p_hat, 1.0);
        assert_eq!(e.std_error, 0.0);
        assert!(e.ci95[0] > 0.97 && e.ci95[1] == 1.0);
    }

    #[test]
    fn single_activity_read_off() {
        let mut p = ProjectModel::new("p", "P");
        p.activities.push(Activity::new("a", DurationModel::discrete([(30, 0.9), (300, 0.1)])));
        let m = ModelFile::new(MissionCalendar::new(1, vec![WorkWindow(0, 60)]), vec![], vec![p])
            .to_mission()
            .unwrap();
        let e = exact_robustness(&m, &Schedule::from_order(["p/a"]), DispatchProtocol::Asap).unwrap();
        assert_eq!(e.p_hat, 0.9);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let m = coin();
        let s = four_task_order("ABCD");
        let one = estimate_robustness_with_workers(&m, &s, DispatchProtocol::Asap, 500, 11, 1).unwrap();
        for w in 2..=8 {
            let other = estimate_robustness_with_workers(&m, &s, DispatchProtocol::Asap, 500, 11, w).unwrap();
            assert_eq!(one, other);
        }
    }

    #[test]
    fn comparison_prefers_robust_order() {
        let m = coin();
        let c = compare_schedules(&m, &[four_task_order("ABCD"), four_task_order("ACBD")], 2000, 5, 2).unwrap();
        assert_eq!(c.ranking[0].index, 1);
        let swapped = compare_schedules(&m, &[four_task_order("ACBD"), four_task_order("ABCD")], 2000, 5, 2).unwrap();
        assert_eq!(swapped.ranking[0].estimate, c.ranking[0].estimate);
        assert_eq!(swapped.ranking[1].estimate, c.ranking[1].estimate);
    }

    #[test]
    fn duplicate_schedules_tie() {
        let m = coin();
        let c = compare_schedules(&m, &[four_task_order("ABCD"), four_task_order("ABCD")], 300, 9, 1).unwrap();
        assert_eq!(c.ranking[0].estimate.p_hat, c.ranking[1].estimate.p_hat);
        assert_eq!(c.ranking[1].paired_std_error_vs_best, 0.0);
    }

    #[test]
    fn objective_examples() {
        let mut e = exact_robustness(&coin(), &four_task_order("ACBD"), DispatchProtocol::Asap).unwrap();
        let w = KpiWeights::success_only();
        assert_eq!(objective(&e, &w, 2880), 0.0);
        e.p_hat = 0.862;
        assert!((objective(&e, &w, 2880) - 0.138).abs() < 1e-12);
        let full = KpiWeights {
            w_success: 1.0,
            w_expected_makespan: 0.5,
            w_expected_cost: 0.2,
            w_workload_balance: 0.1,
            cost_scale: 10.0,
        };
        let v = objective(&e, &full, 2880);
        assert!((objective(&e, &full.scaled(2.0), 2880) - 2.0 * v).abs() < 1e-12);
    }

    #[test]
    fn ci_is_clamped_and_wilson_at_edges() {
        let [lo, hi] = ci95(0.0, 100);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.05);
        let [lo, hi] = ci95(0.5, 100);
        assert!((hi - lo - 2.0 * Z95 * 0.05).abs() < 1e-12);
    }

    #[test]
    fn report_field_names() {
        let e = estimate_robustness(&coin(), &four_task_order("ABCD"), DispatchProtocol::Asap, 50, 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        for key in ["p_hat", "n", "std_error", "ci95", "kpis"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
