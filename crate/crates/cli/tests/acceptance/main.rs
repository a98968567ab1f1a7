//! Acceptance suite. Each criterion prints one PASS or FAIL line; the run
//! fails if any criterion does.
//!
//! Run with `cargo test -p rams-cli --test acceptance`.

mod reference;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rams_coord::harness::{run_harness, verify_provenance, HarnessConfig, HarnessOutcome};
use rams_core::fixtures::{four_task_model, four_task_order};
use rams_core::mission::ActivityStatus;
use rams_core::optimizer::{initial_solution, optimize_with_progress, Budget, InitialMode};
use rams_core::robustness::estimate_robustness_with_workers;
use rams_core::synth::{random_instance, synthetic_mission, InstanceParams};
use rams_core::tree::{evaluate_multistage, multistage_tree, TreeOptions};
use rams_core::{
    dispatch, exact_robustness, optimize, sample_duration, sample_scenario, score_schedule, Activity, ActualEvent,
    CancelToken, DispatchProtocol, DurationModel, EventKind, MissionCommand, MissionJournal, MissionModel,
    MissionState, ModelEdit, ModelFile, Schedule, SearchConfig, TemporalConstraint,
};
use statrs::distribution::{Beta, ContinuousCDF};

use reference::Reference;

type Outcome = Result<String, String>;

trait OrFail<T> {
    fn or_fail(self) -> Result<T, String>;
}

impl<T, E: std::fmt::Display> OrFail<T> for Result<T, E> {
    fn or_fail(self) -> Result<T, String> {
        self.map_err(|e| e.to_string())
    }
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const ASAP: DispatchProtocol = DispatchProtocol::Asap;

fn exact(m: &MissionModel, s: &Schedule) -> Result<f64, String> {
    Ok(exact_robustness(m, s, ASAP).or_fail()?.p_hat)
}

fn activity_ids(file: &ModelFile) -> Vec<String> {
    file.projects
        .iter()
        .flat_map(|p| p.activities.iter().map(move |a| format!("{}/{}", p.id, a.id)))
        .collect()
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

/// The all-discrete suite: the four-task example plus 200 random instances.
fn discrete_suite() -> Vec<ModelFile> {
    let mut suite = vec![four_task_model(DurationModel::discrete([(60, 0.5), (90, 0.5)]))];
    suite.extend((0..200).map(|seed| random_instance(seed, &InstanceParams::small())));
    suite
}

fn four_task_example() -> Outcome {
    let t0 = Instant::now();
    let file = four_task_model(DurationModel::discrete([(60, 0.5), (90, 0.5)]));
    let m = file.to_mission().or_fail()?;
    let mut parts = Vec::new();
    for (letters, expected) in [("ABCD", 0.5), ("ACBD", 1.0)] {
        let s = four_task_order(letters);
        let p = exact(&m, &s)?;
        ensure!(p == expected, "{letters}: exact {p}, expected {expected}");
        let saa = estimate_robustness_with_workers(&m, &s, ASAP, 10_000, 0, 1).or_fail()?;
        ensure!(
            (saa.p_hat - p).abs() <= 3.0 * saa.std_error,
            "{letters}: SAA {} ± {} vs exact {p}",
            saa.p_hat,
            saa.std_error
        );
        parts.push(format!("{letters} exact {p} SAA {:.4}", saa.p_hat));
    }
    let elapsed = t0.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("{}, {:.0} ms", parts.join(", "), elapsed.as_secs_f64() * 1e3))
}

fn oracle_equivalence() -> Outcome {
    let suite = discrete_suite();
    let mut within = 0;
    let mut nontrivial = 0;
    for (k, file) in suite.iter().enumerate() {
        let m = file.to_mission().or_fail()?;
        let mut ids = activity_ids(file);
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(k as u64));
        let s = Schedule::from_order(ids.clone());
        let p = exact(&m, &s)?;
        let brute = Reference::new(file).probability(&ids);
        ensure!(p.to_bits() == brute.to_bits(), "instance {k}: exact {p:e} vs reference {brute:e}");
        let saa = estimate_robustness_with_workers(&m, &s, ASAP, 10_000, 1000 + k as u64, 1).or_fail()?;
        let sigma = (p * (1.0 - p) / 10_000.0).sqrt();
        if (saa.p_hat - p).abs() <= 3.0 * sigma {
            within += 1;
        }
        if p > 0.0 && p < 1.0 {
            nontrivial += 1;
        }
    }
    let share = within as f64 / suite.len() as f64;
    ensure!(share >= 0.99, "SAA within 3 sigma on {within}/{}", suite.len());
    Ok(format!(
        "{} instances ({nontrivial} with 0 < p < 1): bit-identical to reference, SAA within 3 sigma on {within}",
        suite.len()
    ))
}

fn multistage_dominance() -> Outcome {
    let mut slowest = Duration::ZERO;
    let mut timed = 0;
    let mut single_path = 0;
    let mut strict = 0;
    for (k, file) in discrete_suite().iter().enumerate() {
        let m = file.to_mission().or_fail()?;
        let ids = activity_ids(file);
        let base = Schedule::from_order(ids.clone());

        let t0 = Instant::now();
        let tree = multistage_tree(&m, &base, &TreeOptions::default()).or_fail()?;
        let value = evaluate_multistage(&tree).or_fail()?.value;
        let elapsed = t0.elapsed();
        if tree.len() <= 10_000 {
            timed += 1;
            slowest = slowest.max(elapsed);
        }

        let mut lists = Vec::new();
        let mut best_fixed: f64 = 0.0;
        for perm in permutations(&ids) {
            let s = Schedule::from_order(perm);
            let p = exact(&m, &s)?;
            ensure!(value >= p - 1e-12, "instance {k}: tree {value} below fixed {p} for {:?}", s.priority_order);
            best_fixed = best_fixed.max(p);
            let list = s.dispatch_list(&m).or_fail()?;
            if !lists.contains(&list) {
                lists.push(list);
            }
        }
        if value > best_fixed + 1e-12 {
            strict += 1;
        }

        let fixed = TreeOptions {
            fixed_order: true,
            ..TreeOptions::default()
        };
        let path = evaluate_multistage(&multistage_tree(&m, &base, &fixed).or_fail()?).or_fail()?.value;
        let p_base = exact(&m, &base)?;
        ensure!((path - p_base).abs() <= 1e-12, "instance {k}: single path {path} vs exact {p_base}");
        if lists.len() == 1 {
            single_path += 1;
            ensure!((value - p_base).abs() <= 1e-12, "instance {k}: chain tree {value} vs exact {p_base}");
        }
    }
    ensure!(slowest < Duration::from_secs(1), "slowest tree of at most 10^4 nodes took {slowest:?}");
    Ok(format!(
        "201 instances, {strict} with strict gain, {single_path} natural single-path; slowest of {timed} trees <= 10^4 nodes {:.1} ms",
        slowest.as_secs_f64() * 1e3
    ))
}

fn pert_sampler() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_ks: f64 = 0.0;
    let mut worst_fine_ks: f64 = 0.0;
    let mut worst_mean: f64 = 0.0;
    for triple in 0..10 {
        let min: i64 = rng.random_range(0..=60);
        let max = min + rng.random_range(2..=120);
        let mode = rng.random_range(min..=max);
        let lambda = [2.0, 3.0, 4.0, 5.0, 6.0][triple % 5];
        let range = (max - min) as f64;
        let alpha = 1.0 + lambda * (mode - min) as f64 / range;
        let beta = 1.0 + lambda * (max - mode) as f64 / range;
        let cdf = Beta::new(alpha, beta).or_fail()?;
        let pert = |min: i64, mode: i64, max: i64| DurationModel::ModifiedPert {
            min,
            mode,
            max,
            lambda,
            truncate_below: None,
        };
        let mut draws = ChaCha8Rng::seed_from_u64(triple as u64);

        // whole-minute output against the distribution of the rounded variate
        let d = pert(min, mode, max);
        let n = 100_000;
        let mut counts = vec![0u64; (max - min + 1) as usize];
        for _ in 0..n {
            let v = sample_duration(&d, &mut draws);
            ensure!((min..=max).contains(&v), "sample {v} outside [{min}, {max}]");
            counts[(v - min) as usize] += 1;
        }
        let mut seen = 0;
        let mut ks: f64 = 0.0;
        for v in min..=max {
            seen += counts[(v - min) as usize];
            let f = if v == max { 1.0 } else { cdf.cdf((v as f64 + 0.5 - min as f64) / range) };
            ks = ks.max((seen as f64 / n as f64 - f).abs());
        }
        ensure!(ks < 0.01, "triple ({min}, {mode}, {max}, {lambda}): KS {ks}");
        worst_ks = worst_ks.max(ks);

        // the same shape on a range fine enough to compare with the density
        let scale = (100_000.0 / range).ceil() as i64;
        let fine = pert(min * scale, mode * scale, max * scale);
        let fine_range = range * scale as f64;
        let mut xs: Vec<f64> = (0..n)
            .map(|_| (sample_duration(&fine, &mut draws) - min * scale) as f64 / fine_range)
            .collect();
        xs.sort_by(f64::total_cmp);
        let mut fine_ks: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let f = cdf.cdf(x);
            fine_ks = fine_ks.max((i + 1) as f64 / n as f64 - f).max(f - i as f64 / n as f64);
        }
        ensure!(fine_ks < 0.01, "triple ({min}, {mode}, {max}, {lambda}) scaled by {scale}: KS {fine_ks}");
        worst_fine_ks = worst_fine_ks.max(fine_ks);

        let m = 1_000_000;
        let sum: i64 = (0..m).map(|_| sample_duration(&d, &mut draws)).sum();
        let mean = sum as f64 / m as f64;
        let expected = (min as f64 + lambda * mode as f64 + max as f64) / (lambda + 2.0);
        ensure!((mean - expected).abs() < 0.1, "triple ({min}, {mode}, {max}, {lambda}): mean {mean} vs {expected}");
        worst_mean = worst_mean.max((mean - expected).abs());
    }
    Ok(format!(
        "10 triples: KS <= {worst_ks:.4} (minutes), <= {worst_fine_ks:.4} (fine range), mean error <= {worst_mean:.3}"
    ))
}

fn search_config(seed: u64, workers: usize) -> SearchConfig {
    SearchConfig {
        master_seed: seed,
        budget: Budget {
            max_iterations: Some(2000),
            max_seconds: None,
        },
        workers: Some(workers),
        ..SearchConfig::default()
    }
}

fn optimizer_efficacy() -> Outcome {
    let mut wins = 0;
    let mut nontrivial = 0;
    let mut losses = Vec::new();
    for seed in 0..20 {
        let m = random_instance(seed, &InstanceParams::ten_activities()).to_mission().or_fail()?;
        let config = search_config(seed, 4);
        let result = optimize(&m, None, &config, &CancelToken::new()).or_fail()?;
        let mut best_random: f64 = 0.0;
        for k in 0..100 {
            let s = initial_solution(&m, InitialMode::RandomPermutation, seed * 1000 + k);
            best_random = best_random.max(score_schedule(&m, &s, &config).or_fail()?.0.p_hat);
        }
        let p = result.best_estimate.p_hat;
        if p >= best_random {
            wins += 1;
        } else {
            losses.push(format!("seed {seed}: {p} < {best_random}"));
        }
        if p > 0.0 {
            nontrivial += 1;
        }
    }
    ensure!(wins >= 19, "optimizer matched the random baseline in {wins}/20 runs: {losses:?}");

    let m = random_instance(0, &InstanceParams::ten_activities()).to_mission().or_fail()?;
    let mut runs = Vec::new();
    for workers in [1, 2, 4, 8] {
        let r = optimize(&m, None, &search_config(7, workers), &CancelToken::new()).or_fail()?;
        runs.push(serde_json::to_string(&r).or_fail()?);
    }
    ensure!(runs.windows(2).all(|w| w[0] == w[1]), "results differ across worker counts");
    Ok(format!(
        "matched or beat 100 random schedules in {wins}/20 runs ({nontrivial} with p_hat > 0); identical on 1, 2, 4, 8 workers"
    ))
}

fn random_command(rng: &mut ChaCha8Rng, state: &MissionState, step: usize) -> MissionCommand {
    let now = state.now;
    let mut ids: Vec<String> = state.statuses().into_keys().collect();
    ids.push("p/ghost".into());
    let id = ids[rng.random_range(0..ids.len())].clone();
    match rng.random_range(0..10) {
        0..=4 => {
            let kind = match state.status(&id) {
                ActivityStatus::NotStarted if rng.random_bool(0.7) => EventKind::Started,
                ActivityStatus::InProgress { .. } if rng.random_bool(0.7) => {
                    [EventKind::Completed, EventKind::Failed][rng.random_range(0..2)]
                }
                _ => [EventKind::Started, EventKind::Completed, EventKind::Failed, EventKind::Cancelled]
                    [rng.random_range(0..4)],
            };
            let at = if rng.random_bool(0.9) {
                now - rng.random_range(0..=120)
            } else {
                now + rng.random_range(1..=60)
            };
            MissionCommand::RecordActual {
                event: ActualEvent::new(id, kind, at),
            }
        }
        5..=6 => MissionCommand::AdvanceClock {
            to: now + rng.random_range(-30..=240),
        },
        7 => {
            let mut order = state.future_schedule.priority_order.clone();
            order.shuffle(rng);
            if rng.random_bool(0.2) {
                order.push(id);
            }
            MissionCommand::ReplaceFuture {
                schedule: Schedule::from_order(order),
                estimate: None,
            }
        }
        _ => {
            let local = |s: &str| s.rsplit('/').next().unwrap_or(s).to_string();
            let other = ids[rng.random_range(0..ids.len())].clone();
            let edit = match rng.random_range(0..3) {
                0 => ModelEdit::RemoveActivity { activity_id: id },
                1 => ModelEdit::AddConstraint {
                    project_id: "p".into(),
                    constraint: TemporalConstraint::precedence(format!("f{step}"), local(&id), local(&other), 0),
                },
                _ => ModelEdit::ModifyActivity {
                    activity_id: id.clone(),
                    activity: Activity::new(local(&id), DurationModel::uniform(&[30, 45])),
                },
            };
            MissionCommand::EditModel { edit }
        }
    }
}

fn mission_fuzzing() -> Outcome {
    let sequences = 10_000u64;
    let (mut accepted, mut rejected) = (0u64, 0u64);
    for seq in 0..sequences {
        let mut rng = ChaCha8Rng::seed_from_u64(seq);
        let file = random_instance(seq % 500, &InstanceParams::small());
        let create = MissionCommand::Create {
            mission_id: format!("m{seq}"),
            model: file,
            schedule: None,
            now: 480,
        };
        let (mut journal, mut state) = MissionJournal::create(create).or_fail()?;
        for step in 0..rng.random_range(1..=20) {
            let cmd = random_command(&mut rng, &state, step);
            let prefix = state.history_json();
            let snapshot = state.to_snapshot_json();
            let logged = journal.len();
            match journal.apply(&state, cmd) {
                Ok(next) => {
                    let kept = next.history.get(..state.history.len()).map(serde_json::to_string);
                    ensure!(
                        matches!(&kept, Some(Ok(h)) if *h == prefix),
                        "sequence {seq} step {step}: history prefix changed"
                    );
                    state = next;
                    accepted += 1;
                }
                Err(_) => {
                    ensure!(journal.len() == logged, "sequence {seq} step {step}: rejected command was logged");
                    ensure!(state.to_snapshot_json() == snapshot, "sequence {seq} step {step}: state changed");
                    rejected += 1;
                }
            }
        }
        ensure!(journal.replay().or_fail()? == state, "sequence {seq}: replay differs");
        let reread = MissionJournal::from_lines(&journal.to_lines()).or_fail()?;
        ensure!(reread.replay().or_fail()? == state, "sequence {seq}: replay from lines differs");
        ensure!(
            MissionState::from_snapshot_json(&state.to_snapshot_json()).or_fail()? == state,
            "sequence {seq}: snapshot round trip differs"
        );
    }
    Ok(format!("{sequences} sequences, {accepted} commands accepted, {rejected} rejected"))
}

fn harness_search() -> SearchConfig {
    SearchConfig {
        n_eval_scenarios: 100,
        workers: Some(1),
        budget: Budget {
            max_iterations: Some(100),
            max_seconds: None,
        },
        ..SearchConfig::default()
    }
}

fn check_harness(label: &str, out: &HarnessOutcome) -> Result<(), String> {
    ensure!(out.one_shots_exactly_once(), "{label}: one-shot effects lost or repeated");
    ensure!(out.top1_never_worsens(), "{label}: pool top-1 worsened: {:?}", out.top1_history);
    ensure!(!out.top1_history.is_empty(), "{label}: pool stayed empty");
    verify_provenance(&out.state, &out.problem_id).map_err(|e| format!("{label}: {e}"))?;
    ensure!(out.replay_matches == Some(true), "{label}: store rebuilt from its log differs");
    Ok(())
}

fn coordination() -> Outcome {
    let dir = tempfile::tempdir().or_fail()?;
    let model = random_instance(3, &InstanceParams::ten_activities());
    let base = HarnessConfig {
        seed: 3,
        kill: Some((1, 5_000)),
        victim_holds_claim: true,
        rounds_per_agent: 8,
        iterations_per_round: 300,
        ..HarnessConfig::new(model, harness_search())
    };
    let killed = HarnessConfig {
        log_path: Some(dir.path().join("killed.log")),
        ..base.clone()
    };
    let out = run_harness(&killed).or_fail()?;
    check_harness("kill", &out)?;
    let victim = &out.reports[1];
    ensure!(victim.rounds < killed.rounds_per_agent, "the victim finished all rounds: {victim:?}");
    let reclaimed = out.one_shot_ids.iter().filter(|id| out.state.requests[id].claims > 1).count();
    ensure!(reclaimed >= 1, "the victim's lease was never taken over");

    let slow = HarnessConfig {
        latency_ms: 5_000,
        log_path: Some(dir.path().join("slow.log")),
        ..base
    };
    let out_slow = run_harness(&slow).or_fail()?;
    check_harness("latency", &out_slow)?;
    Ok(format!(
        "3 agents, agent 1 killed after {} of {} rounds; {} one-shots applied once ({reclaimed} after a lease takeover); log replay matches; same with 5 s latency",
        victim.rounds,
        killed.rounds_per_agent,
        out.one_shot_ids.len()
    ))
}

fn scale_smoke() -> Outcome {
    let file = synthetic_mission(1);
    let m = file.to_mission().or_fail()?;
    ensure!(m.len() == 162 && file.projects.len() == 8, "unexpected mission size");
    let schedule = initial_solution(&m, InitialMode::SerialSgs, 0);

    let mut slowest = Duration::ZERO;
    for i in 0..100 {
        let scenario = sample_scenario(&m, 7, i);
        let t0 = Instant::now();
        dispatch(&m, &schedule, &scenario, ASAP).or_fail()?;
        slowest = slowest.max(t0.elapsed());
    }
    ensure!(slowest < Duration::from_millis(100), "slowest dispatch {slowest:?}");

    let t0 = Instant::now();
    let saa = estimate_robustness_with_workers(&m, &schedule, ASAP, 1000, 7, 1).or_fail()?;
    let saa_time = t0.elapsed();
    ensure!(saa_time < Duration::from_secs(10), "SAA took {saa_time:?}");

    let config = SearchConfig {
        master_seed: 1,
        budget: Budget {
            max_iterations: None,
            max_seconds: Some(60.0),
        },
        ..SearchConfig::default()
    };
    let cancel = CancelToken::new();
    let t0 = Instant::now();
    let mut first = None;
    let result = optimize_with_progress(&m, Some(&schedule), &config, &cancel, &mut |e| {
        if e.improved.is_some() && first.is_none() {
            first = Some((t0.elapsed(), e.best_p_hat));
            cancel.cancel();
        }
    })
    .or_fail()?;
    let Some((at, p)) = first else {
        return Err(format!("no improvement in {:?} ({} iterations)", t0.elapsed(), result.iterations_used));
    };
    ensure!(result.accepted_improvements >= 1, "no accepted improvement recorded");
    ensure!(at < Duration::from_secs(60), "first improvement after {at:?}");
    Ok(format!(
        "dispatch <= {:.2} ms, SAA n=1000 {:.2} s (p_hat {:.3}), first improvement after {:.1} s (p_hat {p:.3})",
        slowest.as_secs_f64() * 1e3,
        saa_time.as_secs_f64(),
        saa.p_hat,
        at.as_secs_f64()
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("four-task example", four_task_example),
        ("oracle equivalence", oracle_equivalence),
        ("multistage dominance", multistage_dominance),
        ("PERT sampler", pert_sampler),
        ("optimizer efficacy", optimizer_efficacy),
        ("mission-state safety", mission_fuzzing),
        ("coordination fault tolerance", coordination),
        ("scale smoke test", scale_smoke),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail} [{secs:.1} s]", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}. {name}: {why} [{secs:.1} s]", k + 1);
            }
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
