//! Executing a schedule under one scenario.
//!
//! The as-soon-as-possible protocol works on the schedule's priority order,
//! first repaired into a list that respects every temporal constraint
//! (among activities whose predecessors are all listed, the one with the
//! smallest priority index goes next). Activities already started in the
//! past (`fixed_start`) lead the list at their recorded start.
//!
//! Walking the list, each activity starts at the earliest minute such that
//!
//! - every incoming constraint's realized minimum delay has elapsed,
//! - no earlier-listed activity sharing one of its resources is still
//!   waiting to start (the resource sequence is preserved),
//! - it fits entirely inside one work window of one sol, intersected with
//!   its own window restrictions (no preemption), and
//! - every resource it uses has spare capacity for its whole duration.
//!
//! Failures (missed deadlines, exceeded maximum delays, broken same-sol
//! constraints, activities that cannot start before the horizon) are
//! recorded with the minute at which they become certain; the earliest one
//! is reported.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::durations::{Realization, ScenarioError};
use crate::model::{Anchor, MissionModel};
use crate::network::Network;
use crate::durations::Scenario;
use crate::Minute;

#[derive(Debug, Error, PartialEq)]
pub enum DispatchError {
    #[error("priority order names unknown activity `{0}`")]
    UnknownActivity(String),
    #[error("activity `{0}` appears twice in the priority order")]
    DuplicateActivity(String),
    #[error("priority order is missing activity `{0}`")]
    MissingActivity(String),
    #[error("invalid crew assignment for `{activity}`: {message}")]
    InvalidAssignment { activity: String, message: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub crew: Vec<String>,
}

/// A priority order over activities plus crew assignments.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub priority_order: Vec<String>,
    #[serde(default)]
    pub assignments: BTreeMap<String, Assignment>,
    /// Planned starts for display; the dispatcher does not read them.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pinned_starts: BTreeMap<String, Minute>,
}

impl Schedule {
    pub fn from_order<I, S>(order: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            priority_order: order.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    pub fn assign<I, S>(mut self, activity: impl Into<String>, crew: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.assignments.insert(
            activity.into(),
            Assignment {
                crew: crew.into_iter().map(Into::into).collect(),
            },
        );
        self
    }

    /// Check the schedule against a model without running it.
    pub fn validate(&self, model: &MissionModel) -> Result<(), DispatchError> {
        Plan::new(&model.net, self).map(|_| ())
    }

    /// The constraint-respecting dispatch list this schedule induces.
    pub fn dispatch_list(&self, model: &MissionModel) -> Result<Vec<String>, DispatchError> {
        let plan = Plan::new(&model.net, self)?;
        Ok(plan.order.iter().map(|&i| model.net.ids[i].clone()).collect())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DispatchProtocol {
    #[default]
    Asap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// A maximum delay between two events was exceeded.
    MaxDelayExceeded,
    /// A minimum delay was not honoured (only possible for past events).
    MinDelayViolated,
    /// Two events required on the same sol landed on different sols.
    SameSolViolated,
    /// An activity required to fit in one sol straddles midnight.
    SameSolActivity,
    /// An activity ended after its latest allowed end.
    DeadlineMissed,
    /// An activity could not start before the mission horizon.
    Unscheduled,
    /// A pinned activity runs past the horizon.
    HorizonOverrun,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureReason {
    pub kind: FailureKind,
    /// Activity or constraint id.
    pub element: String,
    /// Minute at which the failure became certain.
    pub at: Minute,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub activity_id: String,
    /// `None` when the activity was never started.
    pub start: Option<Minute>,
    pub end: Option<Minute>,
    pub duration: Minute,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub crew: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    /// One entry per activity, in model order.
    pub entries: Vec<TraceEntry>,
    pub success: bool,
    pub failure_reason: Option<FailureReason>,
    /// Every failure, ordered by the minute it became certain.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FailureReason>,
    pub makespan: Minute,
}

impl ExecutionTrace {
    pub fn entry(&self, id: &str) -> Option<&TraceEntry> {
        self.entries.iter().find(|e| e.activity_id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serialization is infallible")
    }
}

/// Validated, index-based form of a schedule.
#[derive(Debug, Clone)]
pub(crate) struct Plan {
    pub order: Vec<usize>,
    pub resources: Vec<Vec<(usize, u32)>>,
    pub crew: Vec<Vec<usize>>,
}

impl Plan {
    pub fn new(net: &Network, schedule: &Schedule) -> Result<Self, DispatchError> {
        let n = net.len();
        const UNSET: usize = usize::MAX;
        let mut pos = vec![UNSET; n];
        for (k, id) in schedule.priority_order.iter().enumerate() {
            let &i = net
                .index
                .get(id)
                .ok_or_else(|| DispatchError::UnknownActivity(id.clone()))?;
            if pos[i] != UNSET {
                return Err(DispatchError::DuplicateActivity(id.clone()));
            }
            pos[i] = k;
        }
        for (i, a) in net.acts.iter().enumerate() {
            if pos[i] == UNSET && a.fixed_start.is_none() {
                return Err(DispatchError::MissingActivity(net.ids[i].clone()));
            }
        }

        for id in schedule.assignments.keys() {
            if !net.index.contains_key(id) {
                return Err(DispatchError::UnknownActivity(id.clone()));
            }
        }
        let mut crew = vec![Vec::new(); n];
        let mut resources = Vec::with_capacity(n);
        for (i, a) in net.acts.iter().enumerate() {
            let id = &net.ids[i];
            let invalid = |message: String| DispatchError::InvalidAssignment {
                activity: id.clone(),
                message,
            };
            let assigned: &[String] = schedule.assignments.get(id).map_or(&[], |a| &a.crew);
            if assigned.len() != a.crew_needed as usize {
                return Err(invalid(format!("needs {} crew, {} assigned", a.crew_needed, assigned.len())));
            }
            for c in assigned {
                let &r = net
                    .resource_index
                    .get(c)
                    .ok_or_else(|| invalid(format!("unknown crew member `{c}`")))?;
                if !a.eligible.contains(&r) {
                    return Err(invalid(format!("`{c}` is not eligible")));
                }
                if crew[i].contains(&r) {
                    return Err(invalid(format!("`{c}` assigned twice")));
                }
                crew[i].push(r);
            }
            let mut res = a.static_reqs.clone();
            res.extend(crew[i].iter().map(|&r| (r, 1)));
            resources.push(res);
        }

        let mut order: Vec<usize> = (0..n).filter(|&i| net.acts[i].fixed_start.is_some()).collect();
        order.sort_by_key(|&i| (net.acts[i].fixed_start, i));
        let mut indeg = vec![0usize; n];
        let mut succs = vec![Vec::new(); n];
        for i in 0..n {
            if net.acts[i].fixed_start.is_some() {
                continue;
            }
            for &p in &net.preds[i] {
                if net.acts[p].fixed_start.is_none() {
                    indeg[i] += 1;
                    succs[p].push(i);
                }
            }
        }
        let mut ready: BinaryHeap<Reverse<(usize, usize)>> = (0..n)
            .filter(|&i| net.acts[i].fixed_start.is_none() && indeg[i] == 0)
            .map(|i| Reverse((pos[i], i)))
            .collect();
        while let Some(Reverse((_, i))) = ready.pop() {
            order.push(i);
            for &s in &succs[i] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.push(Reverse((pos[s], s)));
                }
            }
        }
        debug_assert_eq!(order.len(), n, "constraint graph is validated acyclic");
        Ok(Self { order, resources, crew })
    }
}

/// Which constraint or activity a failure concerns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Subject {
    Activity(usize),
    Constraint(usize),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Failure {
    pub kind: FailureKind,
    pub subject: Subject,
    pub at: Minute,
}

#[derive(Debug)]
pub(crate) struct Run {
    pub start: Vec<Option<Minute>>,
    pub end: Vec<Option<Minute>>,
    pub failures: Vec<Failure>,
}

impl Run {
    pub fn success(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn makespan(&self) -> Minute {
        self.end.iter().flatten().copied().max().unwrap_or(0).max(0)
    }
}

struct Booking {
    start: Minute,
    end: Minute,
    qty: u32,
}

struct Dispatcher<'a> {
    net: &'a Network,
    plan: &'a Plan,
    real: &'a Realization,
    bookings: Vec<Vec<Booking>>,
    last_start: Vec<Minute>,
    run: Run,
}

impl<'a> Dispatcher<'a> {
    fn event_time(&self, i: usize, anchor: Anchor) -> Option<Minute> {
        match anchor {
            Anchor::Start => self.run.start[i],
            Anchor::End => self.run.end[i],
        }
    }

    fn event_sol(&self, i: usize, anchor: Anchor) -> Option<i64> {
        let t = self.event_time(i, anchor)?;
        let cal = &self.net.calendar;
        // an end exactly at midnight belongs to the sol it closes
        if anchor == Anchor::End && self.real.durations[i] > 0 {
            Some(cal.sol_of(t - 1))
        } else {
            Some(cal.sol_of(t))
        }
    }

    /// Earliest start `>= t` whose whole duration fits in one window.
    fn window_fit(&self, i: usize, t: Minute, d: Minute) -> Option<Minute> {
        let cal = &self.net.calendar;
        let act = &self.net.acts[i];
        let t = t.max(0);
        let mut sol = cal.sol_of(t);
        while sol < i64::from(cal.horizon_sols) {
            let base = cal.sol_start(sol);
            for (mut a, mut b) in cal.windows_of_sol(sol) {
                if let Some((da, db)) = act.daily {
                    a = a.max(base + da);
                    b = b.min(base + db);
                }
                if a > b || (a == b && d > 0) {
                    continue;
                }
                let s = t.max(a);
                if s + d <= b {
                    return Some(s);
                }
            }
            sol += 1;
        }
        None
    }

    /// `None` if all resources have room over `[t, t+d)`, otherwise the next
    /// minute worth trying.
    fn resource_conflict(&self, i: usize, t: Minute, d: Minute) -> Option<Minute> {
        if d == 0 {
            return None;
        }
        let end = t + d;
        let mut next: Option<Minute> = None;
        for &(r, q) in &self.plan.resources[i] {
            let cap = self.net.capacities[r];
            let overlapping = self.bookings[r].iter().filter(|b| b.start < end && t < b.end);
            let mut points = vec![t];
            let mut any = false;
            for b in overlapping.clone() {
                any = true;
                if b.start > t {
                    points.push(b.start);
                }
            }
            if !any {
                continue;
            }
            let blocked = points.iter().any(|&p| {
                let used: u32 = overlapping
                    .clone()
                    .filter(|b| b.start <= p && p < b.end)
                    .map(|b| b.qty)
                    .sum();
                used + q > cap
            });
            if blocked {
                let earliest_end = overlapping.map(|b| b.end).filter(|&e| e > t).min().unwrap_or(t + 1);
                next = Some(next.map_or(earliest_end, |n| n.min(earliest_end)));
            }
        }
        next
    }

    fn place(&mut self, i: usize) -> Result<(), ()> {
        let net = self.net;
        let act = &net.acts[i];
        let d = self.real.durations[i];
        let start = if let Some(fs) = act.fixed_start {
            fs
        } else {
            let mut release = act.earliest.unwrap_or(0).max(net.release);
            for &j in &net.incoming[i] {
                let c = &net.cons[j];
                let Some(t_from) = self.event_time(c.from, c.from_anchor) else {
                    // a predecessor never started; its failure is already recorded
                    return Ok(());
                };
                let mut bound = t_from + self.real.delays[j];
                if c.to_anchor == Anchor::End {
                    bound -= d;
                }
                release = release.max(bound);
            }
            for &(r, _) in &self.plan.resources[i] {
                release = release.max(self.last_start[r]);
            }
            let mut t = release;
            loop {
                let Some(fit) = self.window_fit(i, t, d) else {
                    return self.fail(FailureKind::Unscheduled, Subject::Activity(i), net.horizon_end);
                };
                match self.resource_conflict(i, fit, d) {
                    None => break fit,
                    Some(next) => t = next,
                }
            }
        };

        let end = start + d;
        self.run.start[i] = Some(start);
        self.run.end[i] = Some(end);
        for &(r, q) in &self.plan.resources[i] {
            if d > 0 {
                self.bookings[r].push(Booking { start, end, qty: q });
            }
            self.last_start[r] = self.last_start[r].max(start);
        }

        let cal = &net.calendar;
        if end > net.horizon_end {
            self.fail(FailureKind::HorizonOverrun, Subject::Activity(i), net.horizon_end)?;
        }
        if let Some(le) = act.latest_end {
            if end > le {
                self.fail(FailureKind::DeadlineMissed, Subject::Activity(i), le)?;
            }
        }
        if act.same_sol && d > 0 && cal.sol_of(start) != cal.sol_of(end - 1) {
            self.fail(
                FailureKind::SameSolActivity,
                Subject::Activity(i),
                cal.sol_start(cal.sol_of(start) + 1),
            )?;
        }
        for &j in &net.incoming[i] {
            self.check_constraint(j)?;
        }
        Ok(())
    }

    /// Check a constraint once both endpoints are placed.
    fn check_constraint(&mut self, j: usize) -> Result<(), ()> {
        let c = &self.net.cons[j];
        let (Some(tf), Some(tt)) = (self.event_time(c.from, c.from_anchor), self.event_time(c.to, c.to_anchor))
        else {
            return Ok(());
        };
        if tt < tf + self.real.delays[j] {
            self.fail(FailureKind::MinDelayViolated, Subject::Constraint(j), tt)?;
        }
        if let Some(max) = c.max_delay {
            if tt > tf + max {
                self.fail(FailureKind::MaxDelayExceeded, Subject::Constraint(j), tf + max)?;
            }
        }
        if c.same_sol {
            let sf = self.event_sol(c.from, c.from_anchor).expect("placed");
            let st = self.event_sol(c.to, c.to_anchor).expect("placed");
            if sf != st {
                let at = if st > sf { self.net.calendar.sol_start(sf + 1) } else { tf };
                self.fail(FailureKind::SameSolViolated, Subject::Constraint(j), at)?;
            }
        }
        Ok(())
    }

    fn fail(&mut self, kind: FailureKind, subject: Subject, at: Minute) -> Result<(), ()> {
        self.run.failures.push(Failure { kind, subject, at });
        Err(())
    }
}

/// Run the dispatcher. With `stop_at_first` the run ends at the first
/// failure found; otherwise every activity is placed where possible.
pub(crate) fn run_dispatch(net: &Network, plan: &Plan, real: &Realization, stop_at_first: bool) -> Run {
    let n = net.len();
    let mut d = Dispatcher {
        net,
        plan,
        real,
        bookings: (0..net.capacities.len()).map(|_| Vec::new()).collect(),
        last_start: vec![Minute::MIN; net.capacities.len()],
        run: Run {
            start: vec![None; n],
            end: vec![None; n],
            failures: Vec::new(),
        },
    };
    // constraints into fixed activities are checked once their source is placed
    let mut deferred: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (j, c) in net.cons.iter().enumerate() {
        if net.acts[c.to].fixed_start.is_some() && net.acts[c.from].fixed_start.is_none() {
            deferred[c.from].push(j);
        }
    }
    for &i in &plan.order {
        let mut outcome = d.place(i);
        if outcome.is_ok() || !stop_at_first {
            for &j in &deferred[i] {
                outcome = outcome.and(d.check_constraint(j));
                if outcome.is_err() && stop_at_first {
                    break;
                }
            }
        }
        if outcome.is_err() && stop_at_first {
            break;
        }
    }
    d.run
}

fn subject_id(net: &Network, s: Subject) -> String {
    match s {
        Subject::Activity(i) => net.ids[i].clone(),
        Subject::Constraint(j) => net.constraint_ids[j].clone(),
    }
}

pub(crate) fn build_trace(net: &Network, plan: &Plan, real: &Realization, run: Run) -> ExecutionTrace {
    let mut failures: Vec<FailureReason> = run
        .failures
        .iter()
        .map(|f| FailureReason {
            kind: f.kind,
            element: subject_id(net, f.subject),
            at: f.at,
        })
        .collect();
    // stable: equal minutes keep detection order
    failures.sort_by_key(|f| f.at);
    let entries = (0..net.len())
        .map(|i| TraceEntry {
            activity_id: net.ids[i].clone(),
            start: run.start[i],
            end: run.end[i],
            duration: real.durations[i],
            crew: plan.crew[i].iter().map(|&r| net.resource_ids[r].clone()).collect(),
        })
        .collect();
    ExecutionTrace {
        entries,
        success: failures.is_empty(),
        failure_reason: failures.first().cloned(),
        makespan: run.makespan(),
        failures,
    }
}

/// Execute `schedule` under `scenario`.
pub fn dispatch(
    model: &MissionModel,
    schedule: &Schedule,
    scenario: &Scenario,
    protocol: DispatchProtocol,
) -> Result<ExecutionTrace, DispatchError> {
    let DispatchProtocol::Asap = protocol;
    let net = &model.net;
    let plan = Plan::new(net, schedule)?;
    let real = Realization::from_scenario(net, scenario)?;
    let run = run_dispatch(net, &plan, &real, false);
    Ok(build_trace(net, &plan, &real, run))
}

/// Dispatch under the nominal scenario (modes and most likely values).
pub fn deterministic_view(model: &MissionModel, schedule: &Schedule) -> Result<ExecutionTrace, DispatchError> {
    let net = &model.net;
    let plan = Plan::new(net, schedule)?;
    let real = Realization::nominal(net);
    let run = run_dispatch(net, &plan, &real, false);
    Ok(build_trace(net, &plan, &real, run))
}

/// Planned starts from the deterministic view, for display.
pub fn pin_nominal_starts(model: &MissionModel, schedule: &Schedule) -> Result<Schedule, DispatchError> {
    let trace = deterministic_view(model, schedule)?;
    let mut out = schedule.clone();
    out.pinned_starts = trace
        .entries
        .iter()
        .filter(|e| model.activity(&e.activity_id).is_some_and(|a| a.fixed_start.is_none()))
        .filter_map(|e| e.start.map(|s| (e.activity_id.clone(), s)))
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::durations::nominal_scenario;
    use crate::fixtures::{self, four_task_order};
    use crate::model::{Activity, DurationModel, MissionCalendar, ModelFile, ProjectModel, Resource, WorkWindow};

    fn a_is(minutes: Minute) -> (MissionModel, Scenario) {
        let m = fixtures::four_task_model(DurationModel::uniform(&[60, 90, 180, 240]))
            .to_mission()
            .unwrap();
        let mut s = nominal_scenario(&m);
        s.realized.insert("demo/A".into(), minutes);
        (m, s)
    }

    #[test]
    fn abcd_with_nominal_a_finishes_on_first_sol() {
        let (m, s) = a_is(60);
        let t = dispatch(&m, &four_task_order("ABCD"), &s, DispatchProtocol::Asap).unwrap();
        assert!(t.success, "{t:?}");
        assert!(t.entries.iter().all(|e| e.end.unwrap() <= 840));
        assert_eq!(t.entry("demo/D").unwrap().start, Some(780));
    }

    #[test]
    fn abcd_with_long_a_fails_on_same_sol() {
        let (m, s) = a_is(90);
        let t = dispatch(&m, &four_task_order("ABCD"), &s, DispatchProtocol::Asap).unwrap();
        assert!(!t.success);
        let reason = t.failure_reason.clone().unwrap();
        assert_eq!(reason.kind, FailureKind::SameSolViolated);
        assert_eq!(reason.element, "demo/AC");
        assert_eq!(reason.at, 1440);
        assert_eq!(t.entry("demo/B").unwrap().start, Some(1440 + 540));
    }

    #[test]
    fn acbd_with_long_a_succeeds_on_second_sol() {
        let (m, s) = a_is(90);
        let t = dispatch(&m, &four_task_order("ACBD"), &s, DispatchProtocol::Asap).unwrap();
        assert!(t.success, "{t:?}");
        assert_eq!(t.entry("demo/C").unwrap().start, Some(690));
        let d = t.entry("demo/D").unwrap();
        assert_eq!(m.calendar.sol_of(d.start.unwrap()), 1);
    }

    #[test]
    fn acbd_breaks_only_when_a_is_very_long() {
        let (m, s) = a_is(180);
        assert!(dispatch(&m, &four_task_order("ACBD"), &s, DispatchProtocol::Asap).unwrap().success);
        let (m, s) = a_is(240);
        assert!(!dispatch(&m, &four_task_order("ACBD"), &s, DispatchProtocol::Asap).unwrap().success);
    }

    #[test]
    fn nominal_view_of_both_orders() {
        let m = fixtures::four_task_model(DurationModel::uniform(&[60, 90])).to_mission().unwrap();
        for order in ["ABCD", "ACBD"] {
            assert!(deterministic_view(&m, &four_task_order(order)).unwrap().success);
        }
        let acbd = deterministic_view(&m, &four_task_order("ACBD")).unwrap();
        assert!(acbd.makespan > 1440, "needs a second sol");
    }

    #[test]
    fn empty_model_succeeds() {
        let m = ModelFile::new(MissionCalendar::new(1, vec![WorkWindow(0, 60)]), vec![], vec![])
            .to_mission()
            .unwrap();
        let t = deterministic_view(&m, &Schedule::default()).unwrap();
        assert!(t.success && t.entries.is_empty());
    }

    #[test]
    fn priority_order_is_repaired_by_constraints() {
        let m = fixtures::four_task_model(DurationModel::fixed(60)).to_mission().unwrap();
        let list = four_task_order("DCAB").dispatch_list(&m).unwrap();
        assert_eq!(list, ["demo/A", "demo/C", "demo/B", "demo/D"]);
    }

    #[test]
    fn schedule_errors() {
        let m = fixtures::four_task_model(DurationModel::fixed(60)).to_mission().unwrap();
        let s = nominal_scenario(&m);
        let bad = Schedule::from_order(["demo/A", "demo/B", "demo/C", "demo/X"]);
        assert_eq!(
            dispatch(&m, &bad, &s, DispatchProtocol::Asap).unwrap_err(),
            DispatchError::UnknownActivity("demo/X".into())
        );
        let short = Schedule::from_order(["demo/A", "demo/B", "demo/C"]);
        assert_eq!(short.validate(&m).unwrap_err(), DispatchError::MissingActivity("demo/D".into()));
    }

    #[test]
    fn incomplete_scenario_is_an_error() {
        let m = fixtures::four_task_model(DurationModel::uniform(&[60, 90])).to_mission().unwrap();
        let mut s = nominal_scenario(&m);
        s.realized.clear();
        let err = dispatch(&m, &four_task_order("ABCD"), &s, DispatchProtocol::Asap).unwrap_err();
        assert!(matches!(err, DispatchError::Scenario(ScenarioError::Incomplete(_))));
    }

    fn laf_pair(window_end: u32) -> MissionModel {
        let cal = MissionCalendar::new(1, vec![WorkWindow(540, window_end)]);
        let mut p = ProjectModel::new("bact", "Bacteria");
        p.activities.push(Activity::new("prep", DurationModel::fixed(60)).requires("LAF", 1));
        let mut q = ProjectModel::new("bio", "Biofertilizers");
        q.activities.push(Activity::new("seed", DurationModel::fixed(60)).requires("LAF", 1));
        ModelFile::new(cal, vec![Resource::equipment("LAF", 1)], vec![p, q])
            .to_mission()
            .unwrap()
    }

    #[test]
    fn unit_laf_is_never_shared() {
        let m = laf_pair(660);
        let t = deterministic_view(&m, &Schedule::from_order(["bio/seed", "bact/prep"])).unwrap();
        assert!(t.success);
        assert_eq!(t.entry("bio/seed").unwrap().start, Some(540));
        assert_eq!(t.entry("bact/prep").unwrap().start, Some(600));
    }

    #[test]
    fn laf_contention_past_the_horizon_fails() {
        let m = laf_pair(630);
        let t = deterministic_view(&m, &Schedule::from_order(["bact/prep", "bio/seed"])).unwrap();
        assert!(!t.success);
        let reason = t.failure_reason.clone().unwrap();
        assert_eq!(reason.kind, FailureKind::Unscheduled);
        assert_eq!(reason.element, "bio/seed");
        assert_eq!(t.entry("bio/seed").unwrap().start, None);
    }

    #[test]
    fn crew_assignment_is_validated() {
        let cal = MissionCalendar::new(1, vec![WorkWindow(0, 600)]);
        let mut p = ProjectModel::new("p", "P");
        p.activities.push(Activity::new("eva", DurationModel::fixed(60)).crew(["ann", "bob", "cid"], 2));
        let file = ModelFile::new(
            cal,
            vec![Resource::crew("ann"), Resource::crew("bob"), Resource::crew("cid")],
            vec![p],
        );
        let m = file.to_mission().unwrap();
        let ok = Schedule::from_order(["p/eva"]).assign("p/eva", ["ann", "cid"]);
        let t = deterministic_view(&m, &ok).unwrap();
        assert_eq!(t.entries[0].crew, ["ann", "cid"]);
        let short = Schedule::from_order(["p/eva"]).assign("p/eva", ["ann"]);
        assert!(matches!(short.validate(&m), Err(DispatchError::InvalidAssignment { .. })));
    }

    #[test]
    fn fixed_activities_keep_their_start() {
        let mut file = fixtures::four_task_model(DurationModel::fixed(90));
        file.projects[0].activities[0].fixed_start = Some(545);
        let m = file.to_mission().unwrap();
        let sched = Schedule::from_order(["demo/C", "demo/B", "demo/D"]);
        let t = deterministic_view(&m, &sched).unwrap();
        assert_eq!(t.entry("demo/A").unwrap().start, Some(545));
        assert_eq!(t.entry("demo/C").unwrap().start, Some(545 + 90 + 60));
    }
}
