use rams_coord::harness::{run_harness, verify_provenance, HarnessConfig, HarnessOutcome};
use rams_core::optimizer::Budget;
use rams_core::synth::{random_instance, InstanceParams};
use rams_core::SearchConfig;

fn search() -> SearchConfig {
    SearchConfig {
        n_eval_scenarios: 100,
        workers: Some(1),
        budget: Budget {
            max_iterations: Some(100),
            max_seconds: None,
        },
        ..Default::default()
    }
}

fn scenario(seed: u64) -> HarnessConfig {
    HarnessConfig {
        seed,
        ..HarnessConfig::new(random_instance(seed, &InstanceParams::ten_activities()), search())
    }
}

fn check_invariants(out: &HarnessOutcome) {
    assert!(out.one_shots_exactly_once(), "one-shot effects lost or repeated");
    assert!(out.top1_never_worsens(), "top-1 worsened: {:?}", out.top1_history);
    assert!(!out.top1_history.is_empty());
    assert!(verify_provenance(&out.state, &out.problem_id).unwrap() > 0);
}

#[test]
fn agents_share_a_running_optimize() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = HarnessConfig {
        log_path: Some(dir.path().join("store.log")),
        ..scenario(1)
    };
    let out = run_harness(&cfg).unwrap();
    check_invariants(&out);
    assert_eq!(out.replay_matches, Some(true));
    for r in &out.reports {
        assert_eq!(r.rounds, cfg.rounds_per_agent, "{r:?}");
        assert!(r.joined_at.is_some());
    }
    let published: u64 = out.reports.iter().map(|r| r.published).sum();
    assert_eq!(published, cfg.rounds_per_agent * cfg.agents as u64);
}

#[test]
fn late_agent_joins_within_one_poll() {
    let cfg = HarnessConfig {
        late_agent_at_ms: Some(5_000),
        // slower virtual time so thread start-up stays well below a poll
        clock_factor: 5.0,
        rounds_per_agent: 2,
        iterations_per_round: 40,
        one_shots: 0,
        ..scenario(2)
    };
    let out = run_harness(&cfg).unwrap();
    let late = out.reports.last().unwrap();
    assert_eq!(late.agent_id, format!("agent{}", cfg.agents));
    let registered = late.registered_at.unwrap();
    let joined = late.joined_at.unwrap();
    assert!(registered >= out.late_started_at.unwrap());
    assert!(joined - registered <= 1_000, "joined {joined} registered {registered}");
    assert!(late.rounds > 0);
}

#[test]
fn killed_agent_loses_no_one_shot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = HarnessConfig {
        // early enough that the victim is still mid-run
        kill: Some((1, 5_000)),
        victim_holds_claim: true,
        rounds_per_agent: 8,
        iterations_per_round: 300,
        log_path: Some(dir.path().join("store.log")),
        ..scenario(3)
    };
    let out = run_harness(&cfg).unwrap();
    assert!(out.reports[1].rounds < cfg.rounds_per_agent, "{:?}", out.reports[1]);
    check_invariants(&out);
    assert_eq!(out.replay_matches, Some(true));
    let reclaimed = out
        .one_shot_ids
        .iter()
        .filter(|id| out.state.requests[id].claims > 1)
        .count();
    assert!(reclaimed >= 1, "the victim's lease was never taken over");
    assert!(out.reports[1].transient_errors > 0);
}

#[test]
fn losing_one_of_three_agents_keeps_baseline_quality() {
    for seed in 4..12 {
        let base = HarnessConfig {
            iterations_per_round: 300,
            one_shots: 0,
            ..scenario(seed)
        };
        let baseline = run_harness(&HarnessConfig { agents: 1, ..base.clone() }).unwrap();
        let degraded = run_harness(&HarnessConfig {
            kill: Some((2, 10_000)),
            ..base
        })
        .unwrap();
        let (b, d) = (baseline.best().unwrap(), degraded.best().unwrap());
        assert!(d <= b, "seed {seed}: with a killed agent {d}, single agent {b}");
    }
}

#[test]
fn five_second_latency_keeps_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = HarnessConfig {
        kill: Some((1, 60_000)),
        victim_holds_claim: true,
        latency_ms: 5_000,
        log_path: Some(dir.path().join("store.log")),
        ..scenario(7)
    };
    let out = run_harness(&cfg).unwrap();
    check_invariants(&out);
    assert_eq!(out.replay_matches, Some(true));
    for r in out.reports.iter().filter(|r| r.agent_id != "agent1") {
        assert_eq!(r.rounds, cfg.rounds_per_agent);
    }
}
