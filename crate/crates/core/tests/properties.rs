use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rams_core::durations::{mix_seed, stream_rng};
use rams_core::model::KpiWeights;
use rams_core::optimizer::{initial_solution, neighbor, Budget, InitialMode, MoveKind};
use rams_core::robustness::estimate_robustness_with_workers;
use rams_core::synth::{random_instance, InstanceParams};
use rams_core::{
    compare_schedules, dispatch, enumerate_scenarios, exact_robustness, optimize, sample_duration, sample_scenario,
    CancelToken, DispatchProtocol, DurationModel, MissionModel, ModelFile, Scenario, Schedule, SearchConfig,
};

const ASAP: DispatchProtocol = DispatchProtocol::Asap;

fn shuffled(m: &MissionModel, seed: u64) -> Schedule {
    let mut ids: Vec<String> = m.activities.iter().map(|a| a.id.clone()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Schedule::from_order(ids)
}

fn support(d: &DurationModel) -> Vec<i64> {
    d.support().unwrap().into_iter().map(|(v, _)| v).collect()
}

/// Every scenario reachable from `s` by raising one element to its next
/// larger support value.
fn one_step_up(m: &MissionModel, s: &Scenario) -> Vec<Scenario> {
    let mut out = Vec::new();
    for a in &m.activities {
        if let Some(&v) = s.realized.get(&a.id) {
            if let Some(&w) = support(&a.duration).iter().filter(|&&w| w > v).min() {
                let mut up = s.clone();
                up.realized.insert(a.id.clone(), w);
                out.push(up);
            }
        }
    }
    for c in &m.constraints {
        if let Some(&v) = s.realized_delays.get(&c.id) {
            if let Some(&w) = support(&c.min_delay.as_model()).iter().filter(|&&w| w > v).min() {
                let mut up = s.clone();
                up.realized_delays.insert(c.id.clone(), w);
                out.push(up);
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_json_round_trips(seed in any::<u64>(), ten in any::<bool>()) {
        let params = if ten { InstanceParams::ten_activities() } else { InstanceParams::small() };
        let file = random_instance(seed, &params);
        let text = file.to_canonical_json();
        let back = ModelFile::from_json(&text).unwrap();
        prop_assert_eq!(&back, &file);
        prop_assert_eq!(back.to_canonical_json(), text);
    }

    #[test]
    fn enumeration_is_a_distribution(seed in any::<u64>()) {
        let m = random_instance(seed, &InstanceParams::small()).to_mission().unwrap();
        let all = enumerate_scenarios(&m).unwrap();
        let mut size = 1usize;
        for a in m.activities.iter().filter(|a| a.duration.is_stochastic()) {
            size *= support(&a.duration).len();
        }
        for c in m.constraints.iter().filter(|c| c.min_delay.as_model().is_stochastic()) {
            size *= support(&c.min_delay.as_model()).len();
        }
        prop_assert_eq!(all.len(), size);
        prop_assert!(all.iter().all(|(_, p)| *p >= 0.0));
        let total: f64 = all.iter().map(|(_, p)| p).sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "total {}", total);
    }

    #[test]
    fn failure_persists_under_longer_durations(seed in any::<u64>(), order in any::<u64>()) {
        let m = random_instance(seed, &InstanceParams::monotone()).to_mission().unwrap();
        let s = shuffled(&m, order);
        for (xi, _) in enumerate_scenarios(&m).unwrap() {
            if dispatch(&m, &s, &xi, ASAP).unwrap().success {
                continue;
            }
            for up in one_step_up(&m, &xi) {
                prop_assert!(!dispatch(&m, &s, &up, ASAP).unwrap().success, "{:?} succeeds after {:?} failed", up, xi);
            }
        }
    }

    #[test]
    fn traces_respect_capacity_and_resource_order(seed in any::<u64>(), order in any::<u64>(), k in 0u64..1000) {
        let m = random_instance(seed, &InstanceParams::ten_activities()).to_mission().unwrap();
        let s = initial_solution(&m, InitialMode::RandomPermutation, order);
        let scenario = sample_scenario(&m, seed, k);
        let trace = dispatch(&m, &s, &scenario, ASAP).unwrap();
        prop_assert_eq!(&trace, &dispatch(&m, &s, &scenario, ASAP).unwrap());

        let capacity: BTreeMap<&str, u32> = m.resources.iter().map(|r| (r.id.as_str(), r.capacity)).collect();
        let uses = |id: &str| -> Vec<(String, u32)> {
            let mut r = m.activity(id).unwrap().requirements.clone();
            r.extend(trace.entry(id).unwrap().crew.iter().map(|c| (c.clone(), 1)));
            r
        };
        let mut load: BTreeMap<(String, i64), u32> = BTreeMap::new();
        for e in &trace.entries {
            if let (Some(a), Some(b)) = (e.start, e.end) {
                prop_assert_eq!(b - a, e.duration);
                for (r, q) in uses(&e.activity_id) {
                    for t in a..b {
                        *load.entry((r.clone(), t)).or_insert(0) += q;
                    }
                }
            }
        }
        for ((r, t), q) in &load {
            prop_assert!(*q <= capacity[r.as_str()], "{} holds {} at minute {}", r, q, t);
        }

        // activities sharing a resource start in dispatch-list order
        let list = s.dispatch_list(&m).unwrap();
        for (x, first) in list.iter().enumerate() {
            let held: BTreeSet<String> = uses(first).into_iter().map(|u| u.0).collect();
            for later in &list[x + 1..] {
                let shares = uses(later).iter().any(|u| held.contains(&u.0));
                let (a, b) = (trace.entry(first).unwrap().start, trace.entry(later).unwrap().start);
                if let (true, Some(a), Some(b)) = (shares, a, b) {
                    prop_assert!(a <= b, "{} at {} overtaken by {} at {}", first, a, later, b);
                }
            }
        }
    }

    #[test]
    fn estimates_are_probabilities(seed in any::<u64>(), n in 1usize..300) {
        let m = random_instance(seed, &InstanceParams::small()).to_mission().unwrap();
        let s = shuffled(&m, seed);
        for e in [
            estimate_robustness_with_workers(&m, &s, ASAP, n, seed, 2).unwrap(),
            exact_robustness(&m, &s, ASAP).unwrap(),
        ] {
            prop_assert!((0.0..=1.0).contains(&e.p_hat));
            prop_assert_eq!(e.p_hat + e.p_fail, 1.0);
            prop_assert!(0.0 <= e.ci95[0] && e.ci95[0] <= e.p_hat && e.p_hat <= e.ci95[1] && e.ci95[1] <= 1.0);
            prop_assert!(e.n_samples >= 1);
            prop_assert_eq!(e.kpis.makespan.mean.is_some(), e.successes > 0);
        }
    }

    #[test]
    fn comparison_ignores_list_order(seed in any::<u64>()) {
        let m = random_instance(seed, &InstanceParams::ten_activities()).to_mission().unwrap();
        let schedules: Vec<Schedule> =
            (0..4).map(|k| initial_solution(&m, InitialMode::RandomPermutation, seed + k)).collect();
        let mut reversed = schedules.clone();
        reversed.reverse();
        let a = compare_schedules(&m, &schedules, 200, seed, 1).unwrap();
        let b = compare_schedules(&m, &reversed, 200, seed, 1).unwrap();
        for (x, y) in a.ranking.iter().zip(&b.ranking) {
            prop_assert_eq!(&schedules[x.index], &reversed[y.index]);
            prop_assert_eq!(&x.estimate, &y.estimate);
            prop_assert_eq!(x.rank, y.rank);
        }
    }

    #[test]
    fn random_moves_keep_schedules_valid(seed in any::<u64>()) {
        let m = random_instance(seed, &InstanceParams::ten_activities()).to_mission().unwrap();
        let mut s = initial_solution(&m, InitialMode::SerialSgs, seed);
        let ids: BTreeSet<&str> = m.activities.iter().map(|a| a.id.as_str()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kinds = [MoveKind::SwapAdjacent, MoveKind::Relocate, MoveKind::SwapAny, MoveKind::ReassignCrew];
        for k in 0..1000 {
            if let Some(next) = neighbor(&m, &s, kinds[k % 4], &mut rng) {
                s = next;
            }
            prop_assert!(s.validate(&m).is_ok());
            let order: BTreeSet<&str> = s.priority_order.iter().map(String::as_str).collect();
            prop_assert_eq!(order.len(), s.priority_order.len());
            prop_assert_eq!(&order, &ids);
            for (id, a) in &s.assignments {
                let act = m.activity(id).unwrap();
                prop_assert_eq!(a.crew.len() as u32, act.crew_needed());
                prop_assert!(a.crew.iter().all(|c| act.eligible_crew.contains(c)));
            }
        }
    }
}

#[test]
fn saa_agrees_with_exact_in_most_trials() {
    let mut within = 0;
    for trial in 0..1000u64 {
        let m = random_instance(trial, &InstanceParams::small()).to_mission().unwrap();
        let s = shuffled(&m, trial);
        let p = exact_robustness(&m, &s, ASAP).unwrap().p_hat;
        let saa = estimate_robustness_with_workers(&m, &s, ASAP, 2000, trial, 1).unwrap();
        let sigma = (p * (1.0 - p) / 2000.0).sqrt();
        if (saa.p_hat - p).abs() <= 3.0 * sigma {
            within += 1;
        }
    }
    assert!(within >= 990, "{within} of 1000 trials within 3 sigma");
}

#[test]
fn consecutive_scenarios_are_uncorrelated() {
    let d = DurationModel::pert(30, 60, 120);
    let n = 20_000;
    let key = mix_seed(&[7]);
    let xs: Vec<f64> = (0..n).map(|i| sample_duration(&d, &mut stream_rng(11, i, key)) as f64).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    for lag in [1, 2, 7] {
        let cov: f64 = xs.windows(lag + 1).map(|w| (w[0] - mean) * (w[lag] - mean)).sum();
        let r = cov / var;
        assert!(r.abs() < 4.0 / (n as f64).sqrt(), "lag {lag}: correlation {r}");
    }
}

#[test]
fn pert_mean_error_shrinks_like_root_n() {
    let d = DurationModel::pert(10, 25, 100);
    let expected = (10.0 + 4.0 * 25.0 + 100.0) / 6.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // average absolute error over repeated batches at two sizes
    let err = |n: usize, rng: &mut ChaCha8Rng| -> f64 {
        (0..200)
            .map(|_| ((0..n).map(|_| sample_duration(&d, rng)).sum::<i64>() as f64 / n as f64 - expected).abs())
            .sum::<f64>()
            / 200.0
    };
    let small = err(100, &mut rng);
    let large = err(10_000, &mut rng);
    let ratio = small / large;
    assert!((5.0..20.0).contains(&ratio), "error ratio {ratio} for a 100-fold sample increase");
}

#[test]
fn optimizer_finds_a_feasible_order_when_one_exists() {
    let params = InstanceParams {
        max_values: 1,
        allow_random_delays: false,
        ..InstanceParams::small()
    };
    let mut feasible_instances = 0;
    for seed in 0..40 {
        let m = random_instance(seed, &params).to_mission().unwrap();
        let ids: Vec<String> = m.activities.iter().map(|a| a.id.clone()).collect();
        let any_feasible = permutations(&ids)
            .into_iter()
            .any(|p| exact_robustness(&m, &Schedule::from_order(p), ASAP).unwrap().p_hat == 1.0);
        if !any_feasible {
            continue;
        }
        feasible_instances += 1;
        let config = SearchConfig {
            kpi_weights: KpiWeights::success_only(),
            n_eval_scenarios: 10,
            master_seed: seed,
            budget: Budget {
                max_iterations: Some(5000),
                max_seconds: None,
            },
            workers: Some(1),
            ..SearchConfig::default()
        };
        let r = optimize(&m, None, &config, &CancelToken::new()).unwrap();
        assert_eq!(r.best_estimate.p_hat, 1.0, "seed {seed}: {:?}", r.best_schedule);
    }
    assert!(feasible_instances > 10);
}

#[test]
fn best_so_far_never_rises_within_a_restart() {
    for seed in 0..5 {
        let m = random_instance(seed, &InstanceParams::ten_activities()).to_mission().unwrap();
        let config = SearchConfig {
            n_eval_scenarios: 200,
            master_seed: seed,
            budget: Budget {
                max_iterations: Some(400),
                max_seconds: None,
            },
            ..SearchConfig::default()
        };
        let r = optimize(&m, None, &config, &CancelToken::new()).unwrap();
        for w in r.objective_trace.windows(2) {
            if w[0].restart == w[1].restart {
                assert!(w[1].best <= w[0].best, "seed {seed}: {w:?}");
            }
        }
    }
}

fn permutations(items: &[String]) -> Vec<Vec<String>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for k in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(k);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}
