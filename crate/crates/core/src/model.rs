//! Mission domain types: calendar, resources, activities, temporal constraints
//! and projects, plus validation, merging into a single mission network and
//! the canonical JSON model file.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::Network;
use crate::Minute;

/// Current version of the model file format.
pub const FORMAT_VERSION: u32 = 1;

/// Separator between project id and local id in merged mission ids.
pub const NAMESPACE_SEP: char = '/';

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed model document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported format_version {0} (expected {FORMAT_VERSION})")]
    FormatVersion(u32),
    #[error("duplicate project id `{0}`")]
    DuplicateProject(String),
    #[error("constraint `{constraint}` references unknown activity `{activity}`")]
    DanglingEndpoint { constraint: String, activity: String },
    #[error("model is invalid:\n{0}")]
    Invalid(ValidationReport),
}

/// A work window `(start_minute, end_minute)` measured from sol midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkWindow(pub u32, pub u32);

impl WorkWindow {
    pub fn start(&self) -> u32 {
        self.0
    }

    pub fn end(&self) -> u32 {
        self.1
    }
}

fn default_minutes_per_sol() -> u32 {
    1440
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionCalendar {
    pub horizon_sols: u32,
    pub work_windows: Vec<WorkWindow>,
    #[serde(default = "default_minutes_per_sol")]
    pub minutes_per_sol: u32,
    /// No activity that has not started yet may start before this minute
    /// (set when the past is frozen).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub release: Option<Minute>,
}

impl MissionCalendar {
    pub fn new(horizon_sols: u32, work_windows: Vec<WorkWindow>) -> Self {
        Self {
            horizon_sols,
            work_windows,
            minutes_per_sol: default_minutes_per_sol(),
            release: None,
        }
    }

    pub fn minutes_per_sol(&self) -> Minute {
        Minute::from(self.minutes_per_sol)
    }

    /// First minute after the mission horizon.
    pub fn horizon_end(&self) -> Minute {
        Minute::from(self.horizon_sols) * self.minutes_per_sol()
    }

    pub fn sol_of(&self, t: Minute) -> i64 {
        t.div_euclid(self.minutes_per_sol())
    }

    pub fn minute_of_sol(&self, t: Minute) -> Minute {
        t.rem_euclid(self.minutes_per_sol())
    }

    pub fn sol_start(&self, sol: i64) -> Minute {
        sol * self.minutes_per_sol()
    }

    pub fn at(&self, sol: i64, minute: Minute) -> Minute {
        self.sol_start(sol) + minute
    }

    /// Absolute work windows of one sol.
    pub fn windows_of_sol(&self, sol: i64) -> impl Iterator<Item = (Minute, Minute)> + '_ {
        let base = self.sol_start(sol);
        self.work_windows
            .iter()
            .map(move |w| (base + Minute::from(w.0), base + Minute::from(w.1)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    CrewMember,
    Equipment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resource {
    pub id: String,
    pub kind: ResourceKind,
    pub capacity: u32,
}

impl Resource {
    pub fn crew(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: ResourceKind::CrewMember,
            capacity: 1,
        }
    }

    pub fn equipment(id: impl Into<String>, capacity: u32) -> Self {
        Self {
            id: id.into(),
            kind: ResourceKind::Equipment,
            capacity,
        }
    }
}

fn default_lambda() -> f64 {
    4.0
}

/// Duration (or delay) distribution in minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DurationModel {
    Deterministic {
        value: Minute,
    },
    /// Beta-shaped density on `[min, max]` with the given mode and shape.
    ///
    /// `truncate_below` conditions the distribution on `duration >= bound`;
    /// it is set when an in-progress activity has already run that long.
    ModifiedPert {
        min: Minute,
        mode: Minute,
        max: Minute,
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truncate_below: Option<Minute>,
    },
    /// Finite support as `(value, probability)` pairs.
    Discrete { outcomes: Vec<(Minute, f64)> },
}

impl DurationModel {
    pub fn fixed(value: Minute) -> Self {
        DurationModel::Deterministic { value }
    }

    pub fn pert(min: Minute, mode: Minute, max: Minute) -> Self {
        DurationModel::ModifiedPert {
            min,
            mode,
            max,
            lambda: default_lambda(),
            truncate_below: None,
        }
    }

    pub fn discrete(outcomes: impl IntoIterator<Item = (Minute, f64)>) -> Self {
        DurationModel::Discrete {
            outcomes: outcomes.into_iter().collect(),
        }
    }

    /// Uniform distribution over the given values.
    pub fn uniform(values: &[Minute]) -> Self {
        let p = 1.0 / values.len() as f64;
        Self::discrete(values.iter().map(|&v| (v, p)))
    }

    pub fn is_stochastic(&self) -> bool {
        !matches!(self, DurationModel::Deterministic { .. })
    }

    /// Finite support, if any. A degenerate PERT counts as a single point.
    pub fn support(&self) -> Option<Vec<(Minute, f64)>> {
        match self {
            DurationModel::Deterministic { value } => Some(vec![(*value, 1.0)]),
            DurationModel::ModifiedPert { min, max, .. } if min == max => Some(vec![(*min, 1.0)]),
            DurationModel::ModifiedPert { .. } => None,
            DurationModel::Discrete { outcomes } => Some(outcomes.clone()),
        }
    }

    /// Nominal value: the mode for PERT, the most likely value for discrete
    /// (ties go to the smallest value).
    pub fn nominal(&self) -> Minute {
        match self {
            DurationModel::Deterministic { value } => *value,
            DurationModel::ModifiedPert {
                mode,
                truncate_below,
                max,
                ..
            } => match truncate_below {
                Some(lb) => (*mode).max(*lb).min(*max),
                None => *mode,
            },
            DurationModel::Discrete { outcomes } => {
                let mut best: Option<(Minute, f64)> = None;
                for &(v, p) in outcomes {
                    best = match best {
                        None => Some((v, p)),
                        Some((bv, bp)) if p > bp || (p == bp && v < bv) => Some((v, p)),
                        keep => keep,
                    };
                }
                best.map(|b| b.0).unwrap_or(0)
            }
        }
    }

    pub fn min_value(&self) -> Minute {
        match self {
            DurationModel::Deterministic { value } => *value,
            DurationModel::ModifiedPert {
                min,
                truncate_below,
                ..
            } => truncate_below.map_or(*min, |lb| lb.max(*min)),
            DurationModel::Discrete { outcomes } => {
                outcomes.iter().map(|o| o.0).min().unwrap_or(0)
            }
        }
    }

    pub fn max_value(&self) -> Minute {
        match self {
            DurationModel::Deterministic { value } => *value,
            DurationModel::ModifiedPert { max, .. } => *max,
            DurationModel::Discrete { outcomes } => {
                outcomes.iter().map(|o| o.0).max().unwrap_or(0)
            }
        }
    }

    /// Mean of the untruncated continuous PERT, `(min + λ·mode + max)/(λ + 2)`.
    pub fn pert_mean(&self) -> Option<f64> {
        match self {
            DurationModel::ModifiedPert {
                min,
                mode,
                max,
                lambda,
                ..
            } => Some((*min as f64 + lambda * *mode as f64 + *max as f64) / (lambda + 2.0)),
            _ => None,
        }
    }

    /// Condition on `duration >= elapsed`.
    ///
    /// When no probability mass remains above `elapsed` the result is the
    /// deterministic value `elapsed`.
    pub fn conditioned_on_elapsed(&self, elapsed: Minute) -> DurationModel {
        match self {
            DurationModel::Deterministic { value } => DurationModel::fixed((*value).max(elapsed)),
            DurationModel::ModifiedPert {
                min,
                mode,
                max,
                lambda,
                truncate_below,
            } => {
                let bound = truncate_below.map_or(elapsed, |lb| lb.max(elapsed));
                if bound >= *max {
                    DurationModel::fixed(bound)
                } else if bound <= *min {
                    self.clone()
                } else {
                    DurationModel::ModifiedPert {
                        min: *min,
                        mode: *mode,
                        max: *max,
                        lambda: *lambda,
                        truncate_below: Some(bound),
                    }
                }
            }
            DurationModel::Discrete { outcomes } => {
                let kept: Vec<_> = outcomes.iter().copied().filter(|o| o.0 >= elapsed).collect();
                let mass: f64 = kept.iter().map(|o| o.1).sum();
                if kept.is_empty() || mass <= 0.0 {
                    DurationModel::fixed(elapsed)
                } else if kept.len() == 1 {
                    DurationModel::fixed(kept[0].0)
                } else {
                    DurationModel::discrete(kept.into_iter().map(|(v, p)| (v, p / mass)))
                }
            }
        }
    }

    fn check(&self, element: &str, report: &mut ValidationReport) {
        let mut bad = |msg: String| report.push(element, ViolationKind::InvalidDuration, msg);
        match self {
            DurationModel::Deterministic { value } => {
                if *value < 0 {
                    bad(format!("negative duration {value}"));
                }
            }
            DurationModel::ModifiedPert {
                min,
                mode,
                max,
                lambda,
                ..
            } => {
                if *min < 0 {
                    bad(format!("negative minimum {min}"));
                }
                if !(min <= mode && mode <= max) {
                    bad(format!("expected min <= mode <= max, got {min}/{mode}/{max}"));
                }
                if !(lambda.is_finite() && *lambda > 0.0) {
                    bad(format!("shape must be positive, got {lambda}"));
                }
            }
            DurationModel::Discrete { outcomes } => {
                if outcomes.is_empty() {
                    bad("empty discrete support".into());
                }
                let mut seen = HashSet::new();
                for &(v, p) in outcomes {
                    if v < 0 {
                        bad(format!("negative value {v}"));
                    }
                    if !(p.is_finite() && p > 0.0) {
                        bad(format!("probability of {v} must be positive, got {p}"));
                    }
                    if !seen.insert(v) {
                        bad(format!("value {v} listed twice"));
                    }
                }
                let total: f64 = outcomes.iter().map(|o| o.1).sum();
                if !outcomes.is_empty() && (total - 1.0).abs() > 1e-9 {
                    bad(format!("probabilities sum to {total}, expected 1"));
                }
            }
        }
    }
}

/// Optional time restrictions of one activity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivityWindow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub earliest_start: Option<Minute>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latest_end: Option<Minute>,
    /// Restriction applied to every sol, intersected with the calendar.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub daily: Option<WorkWindow>,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    pub id: String,
    #[serde(default)]
    pub project_id: String,
    pub duration: DurationModel,
    #[serde(default)]
    pub requirements: Vec<(String, u32)>,
    #[serde(default)]
    pub eligible_crew: Vec<String>,
    /// Number of crew members drawn from `eligible_crew`; defaults to one
    /// when the activity is crew-assignable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crew_count: Option<u32>,
    #[serde(default)]
    pub window: Option<ActivityWindow>,
    #[serde(default)]
    pub same_sol_required: bool,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub cost: f64,
    /// Start time already realized in the past; the dispatcher pins it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_start: Option<Minute>,
}

impl Activity {
    pub fn new(id: impl Into<String>, duration: DurationModel) -> Self {
        Self {
            id: id.into(),
            project_id: String::new(),
            duration,
            requirements: Vec::new(),
            eligible_crew: Vec::new(),
            crew_count: None,
            window: None,
            same_sol_required: false,
            cost: 0.0,
            fixed_start: None,
        }
    }

    pub fn requires(mut self, resource: impl Into<String>, quantity: u32) -> Self {
        self.requirements.push((resource.into(), quantity));
        self
    }

    pub fn crew<I, S>(mut self, eligible: I, count: u32) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.eligible_crew = eligible.into_iter().map(Into::into).collect();
        self.crew_count = Some(count);
        self
    }

    pub fn daily_window(mut self, start: u32, end: u32) -> Self {
        self.window.get_or_insert_with(Default::default).daily = Some(WorkWindow(start, end));
        self
    }

    pub fn between(mut self, earliest_start: Option<Minute>, latest_end: Option<Minute>) -> Self {
        let w = self.window.get_or_insert_with(Default::default);
        w.earliest_start = earliest_start;
        w.latest_end = latest_end;
        self
    }

    pub fn crew_needed(&self) -> u32 {
        self.crew_count
            .unwrap_or(if self.eligible_crew.is_empty() { 0 } else { 1 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    Start,
    End,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRef {
    pub activity_id: String,
    pub anchor: Anchor,
}

impl EventRef {
    pub fn start(activity: impl Into<String>) -> Self {
        Self {
            activity_id: activity.into(),
            anchor: Anchor::Start,
        }
    }

    pub fn end(activity: impl Into<String>) -> Self {
        Self {
            activity_id: activity.into(),
            anchor: Anchor::End,
        }
    }
}

/// Minimum delay of a constraint: fixed minutes or a distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Delay {
    Fixed(Minute),
    Random(DurationModel),
}

impl Default for Delay {
    fn default() -> Self {
        Delay::Fixed(0)
    }
}

impl Delay {
    pub fn as_model(&self) -> DurationModel {
        match self {
            Delay::Fixed(v) => DurationModel::fixed(*v),
            Delay::Random(m) => m.clone(),
        }
    }

    fn fixed_value(&self) -> Option<Minute> {
        match self {
            Delay::Fixed(v) => Some(*v),
            Delay::Random(DurationModel::Deterministic { value }) => Some(*value),
            Delay::Random(_) => None,
        }
    }
}

/// `time(to_event) >= time(from_event) + min_delay`, optionally bounded by
/// `max_delay` and/or forced onto the same sol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalConstraint {
    pub id: String,
    pub from_event: EventRef,
    pub to_event: EventRef,
    #[serde(default)]
    pub min_delay: Delay,
    #[serde(default)]
    pub max_delay: Option<Minute>,
    #[serde(default)]
    pub same_sol: bool,
    /// Endpoints may name activities of other projects as `project/activity`.
    #[serde(default, skip_serializing_if = "is_false")]
    pub cross_project: bool,
}

impl TemporalConstraint {
    /// End-to-start precedence with a fixed minimum delay.
    pub fn precedence(id: impl Into<String>, from: impl Into<String>, to: impl Into<String>, delay: Minute) -> Self {
        Self {
            id: id.into(),
            from_event: EventRef::end(from),
            to_event: EventRef::start(to),
            min_delay: Delay::Fixed(delay),
            max_delay: None,
            same_sol: false,
            cross_project: false,
        }
    }

    pub fn with_same_sol(mut self) -> Self {
        self.same_sol = true;
        self
    }

    pub fn with_max_delay(mut self, max: Minute) -> Self {
        self.max_delay = Some(max);
        self
    }

    pub fn with_random_delay(mut self, delay: DurationModel) -> Self {
        self.min_delay = Delay::Random(delay);
        self
    }
}

fn default_priority_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectModel {
    pub id: String,
    pub name: String,
    pub activities: Vec<Activity>,
    pub constraints: Vec<TemporalConstraint>,
    #[serde(default = "default_priority_weight")]
    pub priority_weight: f64,
}

impl ProjectModel {
    pub fn new(id: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            activities: Vec::new(),
            constraints: Vec::new(),
            priority_weight: default_priority_weight(),
        }
    }
}

fn default_cost_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiWeights {
    pub w_success: f64,
    pub w_expected_makespan: f64,
    pub w_expected_cost: f64,
    pub w_workload_balance: f64,
    /// Expected cost is divided by this before weighting.
    #[serde(default = "default_cost_scale")]
    pub cost_scale: f64,
}

impl Default for KpiWeights {
    fn default() -> Self {
        Self::success_only()
    }
}

impl KpiWeights {
    pub fn success_only() -> Self {
        Self {
            w_success: 1.0,
            w_expected_makespan: 0.0,
            w_expected_cost: 0.0,
            w_workload_balance: 0.0,
            cost_scale: 1.0,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            w_success: self.w_success * factor,
            w_expected_makespan: self.w_expected_makespan * factor,
            w_expected_cost: self.w_expected_cost * factor,
            w_workload_balance: self.w_workload_balance * factor,
            cost_scale: self.cost_scale,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ws = [
            self.w_success,
            self.w_expected_makespan,
            self.w_expected_cost,
            self.w_workload_balance,
        ];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err("KPI weights must be finite and nonnegative".into());
        }
        if !ws.iter().any(|w| *w > 0.0) {
            return Err("at least one KPI weight must be positive".into());
        }
        if !(self.cost_scale.is_finite() && self.cost_scale > 0.0) {
            return Err("cost_scale must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Calendar,
    InvalidId,
    DuplicateId,
    UnknownResource,
    CapacityExceeded,
    Eligibility,
    InvalidDuration,
    InvalidWindow,
    UnknownActivity,
    SelfConstraint,
    DelayBounds,
    Cycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub element: String,
    pub kind: ViolationKind,
    pub message: String,
}

/// Every invariant violation found; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, element: impl Into<String>, kind: ViolationKind, message: impl Into<String>) {
        self.violations.push(Violation {
            element: element.into(),
            kind,
            message: message.into(),
        });
    }

    pub fn of_kind(&self, kind: ViolationKind) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(move |v| v.kind == kind)
    }

    fn extend(&mut self, other: ValidationReport) {
        self.violations.extend(other.violations);
    }

    fn into_result(self) -> Result<(), ModelError> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(ModelError::Invalid(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  [{:?}] {}: {}", v.kind, v.element, v.message)?;
        }
        Ok(())
    }
}

fn check_calendar(calendar: &MissionCalendar, report: &mut ValidationReport) {
    if calendar.horizon_sols == 0 {
        report.push("calendar", ViolationKind::Calendar, "horizon_sols must be at least 1");
    }
    if calendar.release.is_some_and(|r| r < 0) {
        report.push("calendar", ViolationKind::Calendar, "release must be nonnegative");
    }
    if calendar.minutes_per_sol == 0 {
        report.push("calendar", ViolationKind::Calendar, "minutes_per_sol must be positive");
    }
    let mut prev_end = None;
    for w in &calendar.work_windows {
        if w.0 >= w.1 {
            report.push("calendar", ViolationKind::Calendar, format!("window {}..{} is empty", w.0, w.1));
        }
        if w.1 > calendar.minutes_per_sol {
            report.push(
                "calendar",
                ViolationKind::Calendar,
                format!("window {}..{} exceeds the sol length", w.0, w.1),
            );
        }
        if let Some(pe) = prev_end {
            if w.0 < pe {
                report.push(
                    "calendar",
                    ViolationKind::Calendar,
                    format!("window {}..{} overlaps or is out of order", w.0, w.1),
                );
            }
        }
        prev_end = Some(w.1);
    }
}

fn check_resources(resources: &[Resource], report: &mut ValidationReport) {
    let mut seen = HashSet::new();
    for r in resources {
        if !seen.insert(r.id.as_str()) {
            report.push(&r.id, ViolationKind::DuplicateId, "resource id used twice");
        }
        if r.capacity == 0 {
            report.push(&r.id, ViolationKind::CapacityExceeded, "capacity must be at least 1");
        }
    }
}

fn check_activity(
    a: &Activity,
    element: &str,
    resources: &HashMap<&str, &Resource>,
    calendar: &MissionCalendar,
    report: &mut ValidationReport,
) {
    a.duration.check(element, report);
    for (rid, qty) in &a.requirements {
        match resources.get(rid.as_str()) {
            None => report.push(element, ViolationKind::UnknownResource, format!("unknown resource `{rid}`")),
            Some(r) if *qty > r.capacity => report.push(
                element,
                ViolationKind::CapacityExceeded,
                format!("requires {qty} of `{rid}` but capacity is {}", r.capacity),
            ),
            Some(_) if *qty == 0 => report.push(
                element,
                ViolationKind::CapacityExceeded,
                format!("zero quantity of `{rid}`"),
            ),
            Some(_) => {}
        }
    }
    let mut crew_seen = HashSet::new();
    for c in &a.eligible_crew {
        match resources.get(c.as_str()) {
            None => report.push(element, ViolationKind::UnknownResource, format!("unknown crew member `{c}`")),
            Some(r) if r.kind != ResourceKind::CrewMember => report.push(
                element,
                ViolationKind::Eligibility,
                format!("`{c}` is not a crew member"),
            ),
            Some(_) => {}
        }
        if !crew_seen.insert(c.as_str()) {
            report.push(element, ViolationKind::Eligibility, format!("crew member `{c}` listed twice"));
        }
        if a.requirements.iter().any(|(rid, _)| rid == c) {
            report.push(
                element,
                ViolationKind::Eligibility,
                format!("`{c}` is both required and assignable"),
            );
        }
    }
    if (a.crew_needed() as usize) > a.eligible_crew.len() {
        report.push(
            element,
            ViolationKind::Eligibility,
            format!("needs {} crew but only {} eligible", a.crew_needed(), a.eligible_crew.len()),
        );
    }
    if a.crew_count == Some(0) && !a.eligible_crew.is_empty() {
        report.push(element, ViolationKind::Eligibility, "eligible crew listed but crew_count is 0");
    }
    if let Some(w) = &a.window {
        if let (Some(es), Some(le)) = (w.earliest_start, w.latest_end) {
            if es >= le {
                report.push(element, ViolationKind::InvalidWindow, format!("earliest_start {es} >= latest_end {le}"));
            }
        }
        if let Some(d) = w.daily {
            if d.0 >= d.1 || d.1 > calendar.minutes_per_sol {
                report.push(element, ViolationKind::InvalidWindow, format!("daily window {}..{} is invalid", d.0, d.1));
            }
        }
    }
    if let Some(fs) = a.fixed_start {
        if fs < 0 {
            report.push(element, ViolationKind::InvalidWindow, "fixed_start is negative");
        }
    }
    if !a.cost.is_finite() {
        report.push(element, ViolationKind::InvalidDuration, "cost must be finite");
    }
}

fn check_constraint(c: &TemporalConstraint, element: &str, report: &mut ValidationReport) {
    if c.from_event.activity_id == c.to_event.activity_id {
        report.push(element, ViolationKind::SelfConstraint, "constraint links an activity to itself");
    }
    if let Delay::Random(m) = &c.min_delay {
        m.check(element, report);
    }
    if let Delay::Fixed(v) = c.min_delay {
        if v < 0 {
            report.push(element, ViolationKind::DelayBounds, "min_delay must be nonnegative");
        }
    }
    if let Some(max) = c.max_delay {
        let lower = c.min_delay.fixed_value().unwrap_or_else(|| c.min_delay.as_model().min_value());
        if max < lower {
            report.push(
                element,
                ViolationKind::DelayBounds,
                format!("max_delay {max} is below min_delay {lower}"),
            );
        }
    }
}

/// Report every nontrivial strongly connected component of the constraint
/// graph; ids are sorted inside each component.
fn check_cycles<'a>(
    nodes: &[&'a str],
    edges: impl Iterator<Item = (&'a str, &'a str)>,
    report: &mut ValidationReport,
) {
    let mut graph = DiGraph::<&str, ()>::with_capacity(nodes.len(), 0);
    let index: HashMap<&str, _> = nodes.iter().map(|&n| (n, graph.add_node(n))).collect();
    for (a, b) in edges {
        if a == b {
            continue;
        }
        if let (Some(&ia), Some(&ib)) = (index.get(a), index.get(b)) {
            graph.add_edge(ia, ib, ());
        }
    }
    let mut cycles: Vec<Vec<&str>> = petgraph::algo::tarjan_scc(&graph)
        .into_iter()
        .filter(|scc| scc.len() > 1)
        .map(|scc| {
            let mut ids: Vec<&str> = scc.iter().map(|&i| graph[i]).collect();
            ids.sort_unstable();
            ids
        })
        .collect();
    cycles.sort();
    for ids in cycles {
        report.push(
            ids.join(","),
            ViolationKind::Cycle,
            format!("constraint cycle among {{{}}}", ids.join(", ")),
        );
    }
}

fn check_id(id: &str, report: &mut ValidationReport) {
    if id.is_empty() || id.contains(NAMESPACE_SEP) {
        report.push(id, ViolationKind::InvalidId, format!("ids must be nonempty and must not contain `{NAMESPACE_SEP}`"));
    }
}

/// Check one project against the shared resources and calendar.
///
/// Cross-project constraint endpoints are not resolved here; [`merge_mission`]
/// does that.
pub fn validate_model(model: &ProjectModel, resources: &[Resource], calendar: &MissionCalendar) -> ValidationReport {
    let mut report = ValidationReport::default();
    check_calendar(calendar, &mut report);
    check_resources(resources, &mut report);
    check_id(&model.id, &mut report);
    if !(model.priority_weight.is_finite() && model.priority_weight >= 0.0) {
        report.push(&model.id, ViolationKind::InvalidDuration, "priority_weight must be nonnegative");
    }
    let res: HashMap<&str, &Resource> = resources.iter().map(|r| (r.id.as_str(), r)).collect();

    let mut ids = HashSet::new();
    for a in &model.activities {
        check_id(&a.id, &mut report);
        if !ids.insert(a.id.as_str()) {
            report.push(&a.id, ViolationKind::DuplicateId, "activity id used twice");
        }
        if !a.project_id.is_empty() && a.project_id != model.id {
            report.push(&a.id, ViolationKind::InvalidId, format!("project_id `{}` does not match `{}`", a.project_id, model.id));
        }
        check_activity(a, &a.id, &res, calendar, &mut report);
    }

    let mut cids = HashSet::new();
    for c in &model.constraints {
        check_id(&c.id, &mut report);
        if !cids.insert(c.id.as_str()) {
            report.push(&c.id, ViolationKind::DuplicateId, "constraint id used twice");
        }
        for ev in [&c.from_event, &c.to_event] {
            let foreign = c.cross_project && ev.activity_id.contains(NAMESPACE_SEP);
            if !foreign && !ids.contains(ev.activity_id.as_str()) {
                report.push(&c.id, ViolationKind::UnknownActivity, format!("unknown activity `{}`", ev.activity_id));
            }
        }
        check_constraint(c, &c.id, &mut report);
    }

    let nodes: Vec<&str> = model.activities.iter().map(|a| a.id.as_str()).collect();
    check_cycles(
        &nodes,
        model
            .constraints
            .iter()
            .map(|c| (c.from_event.activity_id.as_str(), c.to_event.activity_id.as_str())),
        &mut report,
    );
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectInfo {
    pub id: String,
    pub name: String,
    pub priority_weight: f64,
}

/// A flattened, validated mission network with namespaced ids.
///
/// Immutable once built; cloning is cheap.
#[derive(Debug, Clone)]
pub struct MissionModel {
    pub calendar: MissionCalendar,
    pub resources: Vec<Resource>,
    pub activities: Vec<Activity>,
    pub constraints: Vec<TemporalConstraint>,
    pub projects: Vec<ProjectInfo>,
    pub(crate) net: Arc<Network>,
}

pub fn qualify(project: &str, local: &str) -> String {
    format!("{project}{NAMESPACE_SEP}{local}")
}

/// Split `project/local` into its parts.
pub fn split_qualified(id: &str) -> Option<(&str, &str)> {
    id.split_once(NAMESPACE_SEP)
}

/// Flatten projects into one mission network sharing `shared` resources.
pub fn merge_mission(
    models: &[ProjectModel],
    shared: &[Resource],
    calendar: &MissionCalendar,
) -> Result<MissionModel, ModelError> {
    let mut seen = HashSet::new();
    for m in models {
        if !seen.insert(m.id.as_str()) {
            return Err(ModelError::DuplicateProject(m.id.clone()));
        }
    }
    let mut report = ValidationReport::default();
    for m in models {
        report.extend(validate_model(m, shared, calendar));
    }
    // calendar/resource findings repeat per project
    let mut unique = Vec::new();
    for v in report.violations {
        if !unique.contains(&v) {
            unique.push(v);
        }
    }
    report.violations = unique;
    if models.is_empty() {
        check_calendar(calendar, &mut report);
        check_resources(shared, &mut report);
    }
    report.into_result()?;

    let mut activities = Vec::new();
    let mut constraints = Vec::new();
    let mut projects = Vec::new();
    for m in models {
        projects.push(ProjectInfo {
            id: m.id.clone(),
            name: m.name.clone(),
            priority_weight: m.priority_weight,
        });
        for a in &m.activities {
            let mut a = a.clone();
            a.id = qualify(&m.id, &a.id);
            a.project_id = m.id.clone();
            activities.push(a);
        }
        for c in &m.constraints {
            let mut c = c.clone();
            c.id = qualify(&m.id, &c.id);
            for ev in [&mut c.from_event, &mut c.to_event] {
                if !(c.cross_project && ev.activity_id.contains(NAMESPACE_SEP)) {
                    ev.activity_id = qualify(&m.id, &ev.activity_id);
                }
            }
            constraints.push(c);
        }
    }

    let known: HashSet<&str> = activities.iter().map(|a| a.id.as_str()).collect();
    for c in &constraints {
        for ev in [&c.from_event, &c.to_event] {
            if !known.contains(ev.activity_id.as_str()) {
                return Err(ModelError::DanglingEndpoint {
                    constraint: c.id.clone(),
                    activity: ev.activity_id.clone(),
                });
            }
        }
    }

    MissionModel::from_parts(calendar.clone(), shared.to_vec(), activities, constraints, projects)
}

impl MissionModel {
    /// Build from already-namespaced parts, validating the whole network.
    pub fn from_parts(
        calendar: MissionCalendar,
        resources: Vec<Resource>,
        activities: Vec<Activity>,
        constraints: Vec<TemporalConstraint>,
        projects: Vec<ProjectInfo>,
    ) -> Result<Self, ModelError> {
        let report = validate_flat(&calendar, &resources, &activities, &constraints);
        report.into_result()?;
        let net = Arc::new(Network::compile(&calendar, &resources, &activities, &constraints));
        Ok(Self {
            calendar,
            resources,
            activities,
            constraints,
            projects,
            net,
        })
    }

    pub fn activity(&self, id: &str) -> Option<&Activity> {
        self.net.index.get(id).map(|&i| &self.activities[i])
    }

    pub fn activity_index(&self, id: &str) -> Option<usize> {
        self.net.index.get(id).copied()
    }

    pub fn activity_ids(&self) -> impl Iterator<Item = &str> {
        self.activities.iter().map(|a| a.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.activities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activities.is_empty()
    }

    pub fn validate(&self) -> ValidationReport {
        validate_flat(&self.calendar, &self.resources, &self.activities, &self.constraints)
    }

    /// Number of random elements (activity durations and delays).
    pub fn stochastic_element_count(&self) -> usize {
        self.net.elements.len()
    }

    /// Ids of the random elements in canonical order.
    pub fn stochastic_element_ids(&self) -> Vec<&str> {
        self.net
            .elements
            .iter()
            .map(|e| match *e {
                crate::network::Element::Activity(i) => self.activities[i].id.as_str(),
                crate::network::Element::Delay(j) => self.constraints[j].id.as_str(),
            })
            .collect()
    }
}

fn validate_flat(
    calendar: &MissionCalendar,
    resources: &[Resource],
    activities: &[Activity],
    constraints: &[TemporalConstraint],
) -> ValidationReport {
    let mut report = ValidationReport::default();
    check_calendar(calendar, &mut report);
    check_resources(resources, &mut report);
    let res: HashMap<&str, &Resource> = resources.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut ids = HashSet::new();
    for a in activities {
        if !ids.insert(a.id.as_str()) {
            report.push(&a.id, ViolationKind::DuplicateId, "activity id used twice");
        }
        check_activity(a, &a.id, &res, calendar, &mut report);
    }
    let mut cids = HashSet::new();
    for c in constraints {
        if !cids.insert(c.id.as_str()) {
            report.push(&c.id, ViolationKind::DuplicateId, "constraint id used twice");
        }
        for ev in [&c.from_event, &c.to_event] {
            if !ids.contains(ev.activity_id.as_str()) {
                report.push(&c.id, ViolationKind::UnknownActivity, format!("unknown activity `{}`", ev.activity_id));
            }
        }
        check_constraint(c, &c.id, &mut report);
    }
    let nodes: Vec<&str> = activities.iter().map(|a| a.id.as_str()).collect();
    check_cycles(
        &nodes,
        constraints
            .iter()
            .map(|c| (c.from_event.activity_id.as_str(), c.to_event.activity_id.as_str())),
        &mut report,
    );
    report
}

/// The canonical model document shared by the CLI, the service and agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub calendar: MissionCalendar,
    pub resources: Vec<Resource>,
    pub projects: Vec<ProjectModel>,
}

impl ModelFile {
    pub fn new(calendar: MissionCalendar, resources: Vec<Resource>, projects: Vec<ProjectModel>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            calendar,
            resources,
            projects,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(ModelError::FormatVersion(file.format_version));
        }
        Ok(file)
    }

    /// Canonical encoding: pretty JSON in declaration order, trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serialization is infallible");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let mut seen = BTreeSet::new();
        for p in &self.projects {
            if !seen.insert(p.id.as_str()) {
                report.push(&p.id, ViolationKind::DuplicateId, "project id used twice");
            }
        }
        if !report.is_valid() {
            return report;
        }
        match self.to_mission() {
            Ok(_) => report,
            Err(ModelError::Invalid(r)) => r,
            Err(ModelError::DanglingEndpoint { constraint, activity }) => {
                report.push(constraint, ViolationKind::UnknownActivity, format!("unknown activity `{activity}`"));
                report
            }
            Err(e) => {
                report.push("model", ViolationKind::InvalidId, e.to_string());
                report
            }
        }
    }

    pub fn to_mission(&self) -> Result<MissionModel, ModelError> {
        merge_mission(&self.projects, &self.resources, &self.calendar)
    }

    pub fn project(&self, id: &str) -> Option<&ProjectModel> {
        self.projects.iter().find(|p| p.id == id)
    }

    pub fn project_mut(&mut self, id: &str) -> Option<&mut ProjectModel> {
        self.projects.iter_mut().find(|p| p.id == id)
    }

    /// Activity count per project, useful for summaries.
    pub fn activity_counts(&self) -> BTreeMap<&str, usize> {
        self.projects.iter().map(|p| (p.id.as_str(), p.activities.len())).collect()
    }
}
