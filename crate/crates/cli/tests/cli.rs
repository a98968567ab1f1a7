use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rams_coord::net::TcpServer;
use rams_coord::records::RequestKind;
use rams_coord::{AgentReport, Store, StoreConfig, SystemClock};
use rams_core::fixtures::{four_task_model, four_task_order};
use rams_core::model::ViolationKind;
use rams_core::optimizer::Budget;
use rams_core::{exact_robustness, DispatchProtocol, DurationModel, ModelFile, SearchConfig, TemporalConstraint};
use rams_service::payloads::{OptimizeReport, RobustnessReport, TraceReport, TreeReport, ValidationReply};
use serde::de::DeserializeOwned;

fn demo() -> ModelFile {
    four_task_model(DurationModel::discrete([(60, 0.5), (90, 0.5)]))
}

struct Files {
    dir: tempfile::TempDir,
}

impl Files {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn model(&self, name: &str, m: &ModelFile) -> PathBuf {
        self.write(name, &m.to_canonical_json())
    }

    fn order(&self, letters: &str) -> PathBuf {
        self.write(&format!("{letters}.json"), &serde_json::to_string(&four_task_order(letters)).unwrap())
    }
}

fn rams(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rams")).args(args).output().unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn report<T: DeserializeOwned>(out: &Output) -> T {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}\nstdout: {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

#[test]
fn validate_accepts_the_four_task_model() {
    let f = Files::new();
    let model = f.model("demo.json", &demo());
    let out = rams(&["validate", "--model", arg(&model)]);
    assert_eq!(out.status.code(), Some(0));
    let reply: ValidationReply = report(&out);
    assert!(reply.valid);
    assert_eq!((reply.activities, reply.constraints), (4, 4));
}

#[test]
fn validate_lists_a_cycle_and_exits_2() {
    let f = Files::new();
    let mut m = demo();
    m.projects[0].constraints.push(TemporalConstraint::precedence("DA", "D", "A", 0));
    let model = f.model("cyclic.json", &m);
    let out = rams(&["validate", "--model", arg(&model)]);
    assert_eq!(out.status.code(), Some(2));
    let reply: ValidationReply = report(&out);
    let cycle = reply.violations.iter().find(|v| v.kind == ViolationKind::Cycle).expect("cycle violation");
    for a in ["A", "B", "D"] {
        assert!(cycle.message.contains(a), "{}", cycle.message);
    }
    assert!(String::from_utf8_lossy(&out.stderr).contains("Cycle"));
}

#[test]
fn malformed_input_exits_2() {
    let f = Files::new();
    let model = f.write("bad.json", "{\"calendar\": ");
    assert_eq!(rams(&["validate", "--model", arg(&model)]).status.code(), Some(2));
    let good = f.model("demo.json", &demo());
    let order = f.write("short.json", r#"["demo/A"]"#);
    let out = rams(&["robustness", "--model", arg(&good), "--schedule", arg(&order)]);
    assert_eq!(out.status.code(), Some(2));
    let missing = f.dir.path().join("missing.json");
    assert_eq!(rams(&["validate", "--model", arg(&missing)]).status.code(), Some(2));
}

#[test]
fn robustness_matches_the_exact_oracle() {
    let f = Files::new();
    let model = f.model("demo.json", &demo());
    let mission = demo().to_mission().unwrap();
    for letters in ["ACBD", "ABCD"] {
        let schedule = f.order(letters);
        let out = rams(&[
            "robustness", "--model", arg(&model), "--schedule", arg(&schedule), "--samples", "10000", "--seed", "7",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let r: RobustnessReport = report(&out);
        let exact = exact_robustness(&mission, &four_task_order(letters), DispatchProtocol::Asap).unwrap().p_hat;
        let sigma = (exact * (1.0 - exact) / 10_000.0).sqrt();
        assert!((r.estimate.p_hat - exact).abs() <= 3.0 * sigma, "{letters}: {} vs {exact}", r.estimate.p_hat);
        assert!(r.estimate.ci95[0] <= r.estimate.p_hat && r.estimate.p_hat <= r.estimate.ci95[1]);
        assert_eq!(r.estimate.n_samples, 10_000);
    }
}

#[test]
fn workers_do_not_change_the_estimate() {
    let f = Files::new();
    let model = f.model("demo.json", &demo());
    let schedule = f.order("ABCD");
    let run = |w: &str| {
        let out = rams(&[
            "robustness", "--model", arg(&model), "--schedule", arg(&schedule), "--samples", "3000", "--seed", "5",
            "--workers", w,
        ]);
        report::<RobustnessReport>(&out).estimate
    };
    assert_eq!(run("1"), run("4"));
}

#[test]
fn nominally_infeasible_schedule_exits_3_with_a_report() {
    let f = Files::new();
    let model = f.model("slow.json", &four_task_model(DurationModel::fixed(90)));
    let schedule = f.order("ABCD");
    let out = rams(&["robustness", "--model", arg(&model), "--schedule", arg(&schedule), "--exact"]);
    assert_eq!(out.status.code(), Some(3));
    let r: RobustnessReport = report(&out);
    assert_eq!(r.estimate.p_hat, 0.0);
}

#[test]
fn simulate_is_reproducible() {
    let f = Files::new();
    let model = f.model("demo.json", &demo());
    let schedule = f.order("ABCD");
    let args = ["simulate", "--model", arg(&model), "--schedule", arg(&schedule), "--seed", "9", "--scenario", "4"];
    let a = rams(&args);
    let b = rams(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let t: TraceReport = report(&a);
    assert_eq!(t.trace.entries.len(), 4);
    assert_eq!(t.seed, Some(9));

    let text = rams(&["simulate", "--format", "text", "--model", arg(&model), "--schedule", arg(&schedule)]);
    let stdout = String::from_utf8_lossy(&text.stdout);
    assert!(stdout.contains("demo/A") && stdout.contains("success"), "{stdout}");
}

#[test]
fn tree_value_dominates_the_base_order() {
    let f = Files::new();
    let model = f.model("demo.json", &demo());
    let schedule = f.order("ABCD");
    let out = rams(&["tree", "--model", arg(&model), "--schedule", arg(&schedule)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let t: TreeReport = report(&out);
    assert_eq!(t.fixed_value, Some(0.5));
    assert_eq!(t.value, 1.0);

    let capped = rams(&["tree", "--model", arg(&model), "--schedule", arg(&schedule), "--node-cap", "5"]);
    assert_eq!(capped.status.code(), Some(3));
}

#[test]
fn optimize_finds_the_robust_order() {
    let f = Files::new();
    let model = f.model("demo.json", &demo());
    let config = SearchConfig {
        n_eval_scenarios: 200,
        budget: Budget {
            max_iterations: Some(200),
            max_seconds: None,
        },
        ..SearchConfig::default()
    };
    let config = f.write("search.json", &serde_json::to_string(&config).unwrap());
    let start = f.order("ABCD");
    let args = [
        "optimize", "--model", arg(&model), "--config", arg(&config), "--schedule", arg(&start), "--seed", "3",
    ];
    let out = rams(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r: OptimizeReport = report(&out);
    assert_eq!(r.result.best_estimate.p_hat, 1.0);
    assert_eq!(r.result.seed, 3);
    assert_eq!(rams(&args).stdout, out.stdout);
}

#[test]
fn agent_works_a_remote_store() {
    let store = Arc::new(Store::in_memory(
        StoreConfig {
            fsync: false,
            ..StoreConfig::default()
        },
        Arc::new(SystemClock),
    ));
    store.put_model("m1", demo(), None).unwrap();
    let config = SearchConfig {
        n_eval_scenarios: 50,
        ..SearchConfig::default()
    };
    let problem = store.define_problem("m1", config).unwrap();
    let kind = RequestKind::RunningOptimize {
        problem_id: problem.problem_id.clone(),
    };
    store.submit("m1", 1, kind, None).unwrap();
    let server = TcpServer::spawn(store.clone(), "127.0.0.1:0").unwrap();
    let addr = server.addr().to_string();

    let out = rams(&[
        "agent", "--store", &addr, "--id", "remote", "--seed", "4", "--poll-ms", "20", "--iterations", "20",
        "--max-rounds", "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r: AgentReport = report(&out);
    assert_eq!(r.agent_id, "remote");
    assert_eq!(r.rounds, 2);
    assert!(!store.pool(&problem.problem_id).unwrap().is_empty());
    server.shutdown();
}

fn http_get(addr: &str, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(addr).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").ok()?;
    let mut text = String::new();
    s.read_to_string(&mut text).ok()?;
    Some(text)
}

#[test]
fn serve_answers_health_checks() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut child = Command::new(env!("CARGO_BIN_EXE_rams"))
        .args(["serve", "--bind", &addr, "--agents", "0"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let t0 = Instant::now();
    let reply = loop {
        if let Some(r) = http_get(&addr, "/v1/health") {
            break r;
        }
        assert!(t0.elapsed() < Duration::from_secs(20), "service did not come up");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("\"status\":\"ok\""), "{reply}");
}
