//! The live mission ledger: a frozen past of recorded events, a mutable
//! planned future, model edits and reoptimization from the current time.
//!
//! State is event-sourced. Every [`MissionCommand`] is applied by the pure
//! function [`MissionState::apply`]; a [`MissionJournal`] keeps the
//! accepted commands and replaying it reproduces the state exactly.
//!
//! Edit restrictions, by activity status:
//!
//! - completed, failed or cancelled activities cannot be removed or
//!   modified, and no constraint into or out of them can be added or
//!   removed;
//! - in-progress activities cannot be removed or modified; constraints may
//!   be added from their end event to an activity that has not started;
//! - constraints into an activity that has started are frozen.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{pin_nominal_starts, Assignment, DispatchError, Schedule};
use crate::model::{
    qualify, split_qualified, Activity, Anchor, MissionModel, ModelError, ModelFile, ProjectModel, TemporalConstraint,
    NAMESPACE_SEP,
};
use crate::optimizer::{initial_solution, optimize, CancelToken, InitialMode, OptimizeError, SearchConfig, SearchResult};
use crate::robustness::{estimate_robustness_with_workers, RobustnessError, RobustnessEstimate};
use crate::{DispatchProtocol, Minute};

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("unknown activity `{0}`")]
    UnknownActivity(String),
    #[error("unknown project `{0}`")]
    UnknownProject(String),
    #[error("unknown constraint `{0}`")]
    UnknownConstraint(String),
    #[error("event at minute {at} is after the current time {now}")]
    EventInFuture { at: Minute, now: Minute },
    #[error("event time {0} is negative")]
    NegativeTime(Minute),
    #[error("cannot record `{event}` for `{activity}` while it is {status}")]
    InvalidTransition { activity: String, status: String, event: String },
    #[error("`{activity}` cannot end at {at}, before its start at {start}")]
    EndBeforeStart { activity: String, start: Minute, at: Minute },
    #[error("clock cannot move back from {now} to {to}")]
    ClockBackwards { now: Minute, to: Minute },
    #[error("edit rejected: {0}")]
    EditRejected(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("a mission is created once, by the first journal record")]
    AlreadyCreated,
    #[error("journal is empty or does not start with a create command")]
    NotCreated,
    #[error("journal record {line}: {message}")]
    Journal { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Robustness(#[from] RobustnessError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Started,
    Completed,
    Failed,
    Cancelled,
}

/// Something that really happened to an activity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActualEvent {
    pub activity_id: String,
    pub kind: EventKind,
    pub at: Minute,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl ActualEvent {
    pub fn new(activity_id: impl Into<String>, kind: EventKind, at: Minute) -> Self {
        Self {
            activity_id: activity_id.into(),
            kind,
            at,
            note: String::new(),
        }
    }

    pub fn started(activity_id: impl Into<String>, at: Minute) -> Self {
        Self::new(activity_id, EventKind::Started, at)
    }

    pub fn completed(activity_id: impl Into<String>, at: Minute) -> Self {
        Self::new(activity_id, EventKind::Completed, at)
    }

    pub fn failed(activity_id: impl Into<String>, at: Minute) -> Self {
        Self::new(activity_id, EventKind::Failed, at)
    }

    pub fn cancelled(activity_id: impl Into<String>, at: Minute, reason: impl Into<String>) -> Self {
        Self {
            note: reason.into(),
            ..Self::new(activity_id, EventKind::Cancelled, at)
        }
    }
}

/// Status of one activity, derived from the history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ActivityStatus {
    NotStarted,
    InProgress { start: Minute },
    Completed { start: Minute, end: Minute },
    Failed { start: Minute, at: Minute },
    Cancelled { at: Minute },
}

impl ActivityStatus {
    fn label(&self) -> &'static str {
        match self {
            ActivityStatus::NotStarted => "not started",
            ActivityStatus::InProgress { .. } => "in progress",
            ActivityStatus::Completed { .. } => "completed",
            ActivityStatus::Failed { .. } => "failed",
            ActivityStatus::Cancelled { .. } => "cancelled",
        }
    }
}

/// A change to the mission model. Activity and constraint ids are
/// qualified (`project/local`); definitions carry local ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ModelEdit {
    AddActivity { project_id: String, activity: Activity },
    RemoveActivity { activity_id: String },
    ModifyActivity { activity_id: String, activity: Activity },
    AddConstraint { project_id: String, constraint: TemporalConstraint },
    RemoveConstraint { constraint_id: String },
    AddProject { project: ProjectModel },
    RemoveProject { project_id: String },
    ReplaceProject { project: ProjectModel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum MissionCommand {
    Create {
        mission_id: String,
        model: ModelFile,
        #[serde(default)]
        schedule: Option<Schedule>,
        now: Minute,
    },
    RecordActual {
        event: ActualEvent,
    },
    AdvanceClock {
        to: Minute,
    },
    EditModel {
        edit: ModelEdit,
    },
    ReplaceFuture {
        schedule: Schedule,
        #[serde(default)]
        estimate: Option<RobustnessEstimate>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionState {
    pub mission_id: String,
    pub version: u64,
    pub now: Minute,
    pub model_version: u64,
    pub model: ModelFile,
    pub history: Vec<ActualEvent>,
    /// Priority order and crew for activities that have not started.
    pub future_schedule: Schedule,
    /// Crew used by activities that have started.
    #[serde(default)]
    pub executed_assignments: BTreeMap<String, Assignment>,
    /// Cancelled activity id to reason.
    #[serde(default)]
    pub cancelled: BTreeMap<String, String>,
    #[serde(default)]
    pub at_risk: BTreeSet<String>,
    #[serde(default)]
    pub last_estimate: Option<RobustnessEstimate>,
}

/// Endpoint ids of a project-local constraint, qualified.
pub fn constraint_endpoints(project_id: &str, c: &TemporalConstraint) -> (String, String) {
    let q = |id: &str| {
        if c.cross_project && id.contains(NAMESPACE_SEP) {
            id.to_string()
        } else {
            qualify(project_id, id)
        }
    };
    (q(&c.from_event.activity_id), q(&c.to_event.activity_id))
}

fn find_activity<'a>(file: &'a ModelFile, id: &str) -> Option<&'a Activity> {
    let (p, local) = split_qualified(id)?;
    file.project(p)?.activities.iter().find(|a| a.id == local)
}

fn remove_constraints_touching(file: &mut ModelFile, ids: &BTreeSet<String>) {
    for p in &mut file.projects {
        let pid = p.id.clone();
        p.constraints.retain(|c| {
            let (f, t) = constraint_endpoints(&pid, c);
            !ids.contains(&f) && !ids.contains(&t)
        });
    }
}

/// Apply an edit to a model document without any history checks. The
/// result is validated.
pub fn apply_edit(file: &ModelFile, edit: &ModelEdit) -> Result<ModelFile, MissionError> {
    let mut out = file.clone();
    match edit {
        ModelEdit::AddActivity { project_id, activity } => {
            let p = out
                .project_mut(project_id)
                .ok_or_else(|| MissionError::UnknownProject(project_id.clone()))?;
            if p.activities.iter().any(|a| a.id == activity.id) {
                return Err(MissionError::EditRejected(format!(
                    "activity `{}` already exists",
                    qualify(project_id, &activity.id)
                )));
            }
            p.activities.push(activity.clone());
        }
        ModelEdit::RemoveActivity { activity_id } => {
            let (pid, local) = split_qualified(activity_id).ok_or_else(|| MissionError::UnknownActivity(activity_id.clone()))?;
            let p = out
                .project_mut(pid)
                .ok_or_else(|| MissionError::UnknownActivity(activity_id.clone()))?;
            let before = p.activities.len();
            p.activities.retain(|a| a.id != local);
            if p.activities.len() == before {
                return Err(MissionError::UnknownActivity(activity_id.clone()));
            }
            remove_constraints_touching(&mut out, &BTreeSet::from([activity_id.clone()]));
        }
        ModelEdit::ModifyActivity { activity_id, activity } => {
            let (pid, local) = split_qualified(activity_id).ok_or_else(|| MissionError::UnknownActivity(activity_id.clone()))?;
            if activity.id != local {
                return Err(MissionError::EditRejected("an activity cannot be renamed".into()));
            }
            let slot = out
                .project_mut(pid)
                .and_then(|p| p.activities.iter_mut().find(|a| a.id == local))
                .ok_or_else(|| MissionError::UnknownActivity(activity_id.clone()))?;
            *slot = activity.clone();
        }
        ModelEdit::AddConstraint { project_id, constraint } => {
            let p = out
                .project_mut(project_id)
                .ok_or_else(|| MissionError::UnknownProject(project_id.clone()))?;
            if p.constraints.iter().any(|c| c.id == constraint.id) {
                return Err(MissionError::EditRejected(format!("constraint `{}` already exists", constraint.id)));
            }
            p.constraints.push(constraint.clone());
        }
        ModelEdit::RemoveConstraint { constraint_id } => {
            let (pid, local) =
                split_qualified(constraint_id).ok_or_else(|| MissionError::UnknownConstraint(constraint_id.clone()))?;
            let p = out
                .project_mut(pid)
                .ok_or_else(|| MissionError::UnknownConstraint(constraint_id.clone()))?;
            let before = p.constraints.len();
            p.constraints.retain(|c| c.id != local);
            if p.constraints.len() == before {
                return Err(MissionError::UnknownConstraint(constraint_id.clone()));
            }
        }
        ModelEdit::AddProject { project } => {
            if out.project(&project.id).is_some() {
                return Err(MissionError::EditRejected(format!("project `{}` already exists", project.id)));
            }
            out.projects.push(project.clone());
        }
        ModelEdit::RemoveProject { project_id } => {
            let p = out
                .project(project_id)
                .ok_or_else(|| MissionError::UnknownProject(project_id.clone()))?;
            let ids: BTreeSet<String> = p.activities.iter().map(|a| qualify(project_id, &a.id)).collect();
            out.projects.retain(|p| &p.id != project_id);
            remove_constraints_touching(&mut out, &ids);
        }
        ModelEdit::ReplaceProject { project } => {
            let slot = out
                .project_mut(&project.id)
                .ok_or_else(|| MissionError::UnknownProject(project.id.clone()))?;
            *slot = project.clone();
            let known: BTreeSet<String> = out
                .projects
                .iter()
                .flat_map(|p| p.activities.iter().map(|a| qualify(&p.id, &a.id)))
                .collect();
            // cross-project constraints into dropped activities go too
            let dropped: BTreeSet<String> = out
                .projects
                .iter()
                .flat_map(|p| p.constraints.iter().map(|c| constraint_endpoints(&p.id, c)))
                .flat_map(|(f, t)| [f, t])
                .filter(|id| !known.contains(id))
                .collect();
            remove_constraints_touching(&mut out, &dropped);
        }
    }
    out.to_mission()?;
    Ok(out)
}

impl MissionState {
    /// Start a mission. Without a schedule, a serial construction provides
    /// the first plan.
    pub fn create(mission_id: &str, model: ModelFile, schedule: Option<Schedule>, now: Minute) -> Result<Self, MissionError> {
        if now < 0 {
            return Err(MissionError::NegativeTime(now));
        }
        let mission = model.to_mission()?;
        let schedule = match schedule {
            Some(s) => {
                s.validate(&mission)?;
                s
            }
            None => initial_solution(&mission, InitialMode::SerialSgs, 0),
        };
        let mut state = Self {
            mission_id: mission_id.to_string(),
            version: 1,
            now,
            model_version: 1,
            model,
            history: Vec::new(),
            future_schedule: schedule,
            executed_assignments: BTreeMap::new(),
            cancelled: BTreeMap::new(),
            at_risk: BTreeSet::new(),
            last_estimate: None,
        };
        state.at_risk = state.compute_at_risk();
        Ok(state)
    }

    /// Apply one command, returning the next state. `self` is unchanged.
    pub fn apply(&self, cmd: &MissionCommand) -> Result<Self, MissionError> {
        let mut next = self.clone();
        match cmd {
            MissionCommand::Create { .. } => return Err(MissionError::AlreadyCreated),
            MissionCommand::RecordActual { event } => next.record(event)?,
            MissionCommand::AdvanceClock { to } => {
                if *to < self.now {
                    return Err(MissionError::ClockBackwards { now: self.now, to: *to });
                }
                if *to == self.now {
                    return Ok(next);
                }
                next.now = *to;
            }
            MissionCommand::EditModel { edit } => next.edit(edit)?,
            MissionCommand::ReplaceFuture { schedule, estimate } => {
                next.replace_future(schedule)?;
                next.last_estimate = estimate.clone();
            }
        }
        next.version += 1;
        next.at_risk = next.compute_at_risk();
        Ok(next)
    }

    pub fn status(&self, activity_id: &str) -> ActivityStatus {
        let mut s = ActivityStatus::NotStarted;
        for e in self.history.iter().filter(|e| e.activity_id == activity_id) {
            s = match (e.kind, &s) {
                (EventKind::Started, _) => ActivityStatus::InProgress { start: e.at },
                (EventKind::Completed, ActivityStatus::InProgress { start }) => {
                    ActivityStatus::Completed { start: *start, end: e.at }
                }
                (EventKind::Failed, ActivityStatus::InProgress { start }) => ActivityStatus::Failed { start: *start, at: e.at },
                (EventKind::Cancelled, _) => ActivityStatus::Cancelled { at: e.at },
                _ => s,
            };
        }
        s
    }

    /// Status of every activity of the current model.
    pub fn statuses(&self) -> BTreeMap<String, ActivityStatus> {
        self.all_activity_ids().into_iter().map(|id| {
            let s = self.status(&id);
            (id, s)
        }).collect()
    }

    fn all_activity_ids(&self) -> Vec<String> {
        self.model
            .projects
            .iter()
            .flat_map(|p| p.activities.iter().map(|a| qualify(&p.id, &a.id)))
            .collect()
    }

    fn has_history(&self, id: &str) -> bool {
        self.history.iter().any(|e| e.activity_id == id)
    }

    fn record(&mut self, event: &ActualEvent) -> Result<(), MissionError> {
        if event.at < 0 {
            return Err(MissionError::NegativeTime(event.at));
        }
        if event.at > self.now {
            return Err(MissionError::EventInFuture { at: event.at, now: self.now });
        }
        let id = &event.activity_id;
        if find_activity(&self.model, id).is_none() {
            return Err(MissionError::UnknownActivity(id.clone()));
        }
        let status = self.status(id);
        let invalid = || MissionError::InvalidTransition {
            activity: id.clone(),
            status: status.label().into(),
            event: format!("{:?}", event.kind).to_lowercase(),
        };
        match (event.kind, &status) {
            (EventKind::Started, ActivityStatus::NotStarted) => {
                if let Some(a) = self.future_schedule.assignments.remove(id) {
                    self.executed_assignments.insert(id.clone(), a);
                }
                self.future_schedule.priority_order.retain(|x| x != id);
                self.future_schedule.pinned_starts.remove(id);
            }
            (EventKind::Completed | EventKind::Failed, ActivityStatus::InProgress { start }) => {
                if event.at < *start {
                    return Err(MissionError::EndBeforeStart {
                        activity: id.clone(),
                        start: *start,
                        at: event.at,
                    });
                }
            }
            (EventKind::Cancelled, ActivityStatus::NotStarted | ActivityStatus::InProgress { .. }) => {
                if let ActivityStatus::InProgress { start } = status {
                    if event.at < start {
                        return Err(MissionError::EndBeforeStart {
                            activity: id.clone(),
                            start,
                            at: event.at,
                        });
                    }
                }
                self.future_schedule.priority_order.retain(|x| x != id);
                self.future_schedule.assignments.remove(id);
                self.future_schedule.pinned_starts.remove(id);
                self.cancelled.insert(id.clone(), event.note.clone());
            }
            _ => return Err(invalid()),
        }
        self.history.push(event.clone());
        Ok(())
    }

    fn edit(&mut self, edit: &ModelEdit) -> Result<(), MissionError> {
        let reject = |msg: String| Err(MissionError::EditRejected(msg));
        let frozen = |s: &Self, id: &str| s.has_history(id);
        match edit {
            ModelEdit::RemoveActivity { activity_id } | ModelEdit::ModifyActivity { activity_id, .. } => {
                if frozen(self, activity_id) {
                    return reject(format!("`{activity_id}` is {}", self.status(activity_id).label()));
                }
                if matches!(edit, ModelEdit::RemoveActivity { .. }) {
                    // constraints into started activities go with it
                    for p in &self.model.projects {
                        for c in &p.constraints {
                            let (f, t) = constraint_endpoints(&p.id, c);
                            if &f == activity_id && frozen(self, &t) {
                                return reject(format!("`{t}` already started after `{activity_id}`"));
                            }
                        }
                    }
                }
            }
            ModelEdit::AddConstraint { project_id, constraint } => {
                let (f, t) = constraint_endpoints(project_id, constraint);
                if frozen(self, &t) {
                    return reject(format!("`{t}` is {}", self.status(&t).label()));
                }
                match self.status(&f) {
                    ActivityStatus::NotStarted => {}
                    ActivityStatus::InProgress { .. } if constraint.from_event.anchor == Anchor::End => {}
                    s => return reject(format!("`{f}` is {}", s.label())),
                }
            }
            ModelEdit::RemoveConstraint { constraint_id } => {
                let (pid, local) =
                    split_qualified(constraint_id).ok_or_else(|| MissionError::UnknownConstraint(constraint_id.clone()))?;
                let c = self
                    .model
                    .project(pid)
                    .and_then(|p| p.constraints.iter().find(|c| c.id == local))
                    .ok_or_else(|| MissionError::UnknownConstraint(constraint_id.clone()))?;
                let (_, t) = constraint_endpoints(pid, c);
                if frozen(self, &t) {
                    return reject(format!("`{t}` is {}", self.status(&t).label()));
                }
            }
            ModelEdit::RemoveProject { project_id } => {
                let p = self
                    .model
                    .project(project_id)
                    .ok_or_else(|| MissionError::UnknownProject(project_id.clone()))?;
                if let Some(a) = p.activities.iter().map(|a| qualify(project_id, &a.id)).find(|id| frozen(self, id)) {
                    return reject(format!("`{a}` is {}", self.status(&a).label()));
                }
            }
            ModelEdit::ReplaceProject { project } => {
                let old = self
                    .model
                    .project(&project.id)
                    .ok_or_else(|| MissionError::UnknownProject(project.id.clone()))?;
                for a in &old.activities {
                    let id = qualify(&old.id, &a.id);
                    if frozen(self, &id) && project.activities.iter().find(|n| n.id == a.id) != Some(a) {
                        return reject(format!("`{id}` is {} and must carry over unchanged", self.status(&id).label()));
                    }
                }
                let into_frozen = |p: &ProjectModel| -> Vec<TemporalConstraint> {
                    p.constraints
                        .iter()
                        .filter(|c| frozen(self, &constraint_endpoints(&p.id, c).1))
                        .cloned()
                        .collect()
                };
                if into_frozen(old) != into_frozen(project) {
                    return reject("constraints into started activities must carry over unchanged".into());
                }
            }
            ModelEdit::AddActivity { .. } | ModelEdit::AddProject { .. } => {}
        }
        let model = apply_edit(&self.model, edit)?;
        let remaining: BTreeSet<String> = model
            .projects
            .iter()
            .flat_map(|p| p.activities.iter().map(|a| qualify(&p.id, &a.id)))
            .collect();
        let f = &mut self.future_schedule;
        f.priority_order.retain(|id| remaining.contains(id));
        f.assignments.retain(|id, _| remaining.contains(id));
        f.pinned_starts.retain(|id, _| remaining.contains(id));
        self.model = model;
        self.model_version += 1;
        Ok(())
    }

    fn replace_future(&mut self, schedule: &Schedule) -> Result<(), MissionError> {
        for id in schedule.priority_order.iter().chain(schedule.assignments.keys()) {
            if self.has_history(id) {
                return Err(MissionError::InvalidSchedule(format!("`{id}` is {}", self.status(id).label())));
            }
        }
        let mut full = schedule.clone();
        full.assignments.extend(self.frozen_assignments());
        full.validate(&self.conditioned_model()?)
            .map_err(|e| MissionError::InvalidSchedule(e.to_string()))?;
        self.future_schedule = schedule.clone();
        Ok(())
    }

    fn frozen_assignments(&self) -> BTreeMap<String, Assignment> {
        self.executed_assignments
            .iter()
            .filter(|(id, _)| matches!(self.status(id), ActivityStatus::InProgress { .. } | ActivityStatus::Completed { .. }))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Activities that exist, have not started and were not cancelled, but
    /// are missing from the future schedule (for example newly added ones).
    pub fn unscheduled(&self) -> Vec<String> {
        let listed: BTreeSet<&String> = self.future_schedule.priority_order.iter().collect();
        self.all_activity_ids()
            .into_iter()
            .filter(|id| !listed.contains(id) && self.status(id) == ActivityStatus::NotStarted)
            .collect()
    }

    /// The model seen from `now`: completed activities pinned with their
    /// realized duration, in-progress activities pinned with a duration
    /// conditioned on the elapsed time, failed and cancelled activities
    /// removed with their constraints, and nothing new starting before now.
    pub fn conditioned_model_file(&self) -> ModelFile {
        let mut file = self.model.clone();
        let mut removed = BTreeSet::new();
        for p in &mut file.projects {
            let pid = p.id.clone();
            p.activities.retain_mut(|a| {
                let id = qualify(&pid, &a.id);
                match self.status(&id) {
                    ActivityStatus::NotStarted => true,
                    ActivityStatus::InProgress { start } => {
                        a.fixed_start = Some(start);
                        a.duration = a.duration.conditioned_on_elapsed(self.now - start);
                        true
                    }
                    ActivityStatus::Completed { start, end } => {
                        a.fixed_start = Some(start);
                        a.duration = crate::model::DurationModel::fixed(end - start);
                        true
                    }
                    ActivityStatus::Failed { .. } | ActivityStatus::Cancelled { .. } => {
                        removed.insert(id);
                        false
                    }
                }
            });
        }
        remove_constraints_touching(&mut file, &removed);
        file.calendar.release = Some(self.now.max(file.calendar.release.unwrap_or(0)));
        file
    }

    pub fn conditioned_model(&self) -> Result<MissionModel, MissionError> {
        Ok(self.conditioned_model_file().to_mission()?)
    }

    /// The future schedule completed for dispatch on the conditioned model:
    /// unscheduled activities appended in model order, stale crew choices
    /// repaired, and crew of started activities included.
    pub fn conditioned_schedule(&self) -> Result<Schedule, MissionError> {
        let model = self.conditioned_model()?;
        let mut s = self.future_schedule.clone();
        s.priority_order.extend(self.unscheduled());
        let mut load: BTreeMap<&str, usize> = BTreeMap::new();
        for a in s.assignments.values() {
            for c in &a.crew {
                *load.entry(c.as_str()).or_default() += 1;
            }
        }
        let mut repaired = BTreeMap::new();
        for id in &s.priority_order {
            let act = model.activity(id).ok_or_else(|| MissionError::UnknownActivity(id.clone()))?;
            let need = act.crew_needed() as usize;
            let mut crew: Vec<String> = s
                .assignments
                .get(id)
                .map(|a| a.crew.iter().filter(|c| act.eligible_crew.contains(c)).cloned().collect())
                .unwrap_or_default();
            crew.dedup();
            crew.truncate(need);
            let mut pool: Vec<&String> = act.eligible_crew.iter().filter(|c| !crew.contains(c)).collect();
            pool.sort_by_key(|c| load.get(c.as_str()).copied().unwrap_or(0));
            for c in pool {
                if crew.len() >= need {
                    break;
                }
                crew.push(c.clone());
            }
            if need > 0 {
                repaired.insert(id.clone(), Assignment { crew });
            }
        }
        s.assignments = repaired;
        s.assignments.extend(self.frozen_assignments());
        s.validate(&model)?;
        Ok(s)
    }

    /// Success probability of the current plan given what happened so far.
    pub fn conditional_robustness(&self, n: usize, seed: u64, workers: usize) -> Result<RobustnessEstimate, MissionError> {
        let model = self.conditioned_model()?;
        let schedule = self.conditioned_schedule()?;
        Ok(estimate_robustness_with_workers(&model, &schedule, DispatchProtocol::Asap, n, seed, workers)?)
    }

    /// Search a new future from `now`; the returned command installs it.
    pub fn reoptimize_command(
        &self,
        config: &SearchConfig,
        cancel: &CancelToken,
    ) -> Result<(MissionCommand, SearchResult), MissionError> {
        let model = self.conditioned_model()?;
        let start = self.conditioned_schedule()?;
        let result = optimize(&model, Some(&start), config, cancel)?;
        let cmd = self.future_command(&result.best_schedule, Some(result.best_estimate.clone()))?;
        Ok((cmd, result))
    }

    /// Command that installs the future part of `schedule`, a schedule of
    /// the conditioned model, with its planned starts pinned. Activities
    /// that already have history are dropped from it.
    pub fn future_command(
        &self,
        schedule: &Schedule,
        estimate: Option<RobustnessEstimate>,
    ) -> Result<MissionCommand, MissionError> {
        let model = self.conditioned_model()?;
        let mut future = pin_nominal_starts(&model, schedule)?;
        future.priority_order.retain(|id| !self.has_history(id));
        future.assignments.retain(|id, _| !self.has_history(id));
        future.pinned_starts.retain(|id, _| !self.has_history(id));
        Ok(MissionCommand::ReplaceFuture {
            schedule: future,
            estimate,
        })
    }

    /// Reoptimize the future and install it.
    pub fn reoptimize_future(&self, config: &SearchConfig, cancel: &CancelToken) -> Result<(Self, SearchResult), MissionError> {
        let (cmd, result) = self.reoptimize_command(config, cancel)?;
        Ok((self.apply(&cmd)?, result))
    }

    /// Activities not started whose window can no longer be met, or whose
    /// planned start has passed.
    fn compute_at_risk(&self) -> BTreeSet<String> {
        let horizon = self.model.calendar.horizon_end();
        let mut out = BTreeSet::new();
        for p in &self.model.projects {
            for a in &p.activities {
                let id = qualify(&p.id, &a.id);
                if self.status(&id) != ActivityStatus::NotStarted {
                    continue;
                }
                let latest_end = a.window.as_ref().and_then(|w| w.latest_end).unwrap_or(horizon).min(horizon);
                let late = latest_end - a.duration.min_value() < self.now;
                let missed = self.future_schedule.pinned_starts.get(&id).is_some_and(|&s| s < self.now);
                if late || missed {
                    out.insert(id);
                }
            }
        }
        out
    }

    /// Model document plus a `state` section.
    pub fn to_snapshot_json(&self) -> String {
        let snapshot = MissionSnapshot {
            model: self.model.clone(),
            state: StateSection {
                mission_id: self.mission_id.clone(),
                version: self.version,
                now: self.now,
                model_version: self.model_version,
                history: self.history.clone(),
                future_schedule: self.future_schedule.clone(),
                executed_assignments: self.executed_assignments.clone(),
                cancelled: self.cancelled.clone(),
                at_risk: self.at_risk.clone(),
                last_estimate: self.last_estimate.clone(),
            },
        };
        let mut s = serde_json::to_string_pretty(&snapshot).expect("snapshot serializes");
        s.push('\n');
        s
    }

    pub fn from_snapshot_json(text: &str) -> Result<Self, MissionError> {
        let snap: MissionSnapshot = serde_json::from_str(text).map_err(ModelError::from)?;
        let st = snap.state;
        Ok(Self {
            mission_id: st.mission_id,
            version: st.version,
            now: st.now,
            model_version: st.model_version,
            model: snap.model,
            history: st.history,
            future_schedule: st.future_schedule,
            executed_assignments: st.executed_assignments,
            cancelled: st.cancelled,
            at_risk: st.at_risk,
            last_estimate: st.last_estimate,
        })
    }

    /// Serialized history, the part of the state that must never change
    /// retroactively.
    pub fn history_json(&self) -> String {
        serde_json::to_string(&self.history).expect("history serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StateSection {
    mission_id: String,
    version: u64,
    now: Minute,
    model_version: u64,
    history: Vec<ActualEvent>,
    future_schedule: Schedule,
    #[serde(default)]
    executed_assignments: BTreeMap<String, Assignment>,
    #[serde(default)]
    cancelled: BTreeMap<String, String>,
    #[serde(default)]
    at_risk: BTreeSet<String>,
    #[serde(default)]
    last_estimate: Option<RobustnessEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MissionSnapshot {
    #[serde(flatten)]
    model: ModelFile,
    state: StateSection,
}

/// One accepted command with the state version and clock it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub version: u64,
    pub at: Minute,
    pub payload: MissionCommand,
}

/// Append-only log of accepted commands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MissionJournal {
    records: Vec<JournalRecord>,
}

impl MissionJournal {
    /// Journal and state of a new mission.
    pub fn create(cmd: MissionCommand) -> Result<(Self, MissionState), MissionError> {
        let MissionCommand::Create {
            mission_id,
            model,
            schedule,
            now,
        } = &cmd
        else {
            return Err(MissionError::NotCreated);
        };
        let state = MissionState::create(mission_id, model.clone(), schedule.clone(), *now)?;
        let journal = Self {
            records: vec![JournalRecord {
                version: state.version,
                at: state.now,
                payload: cmd,
            }],
        };
        Ok((journal, state))
    }

    /// Apply `cmd` to `state` and log it when it changed the state.
    pub fn apply(&mut self, state: &MissionState, cmd: MissionCommand) -> Result<MissionState, MissionError> {
        let next = state.apply(&cmd)?;
        if next.version != state.version {
            self.records.push(JournalRecord {
                version: next.version,
                at: next.now,
                payload: cmd,
            });
        }
        Ok(next)
    }

    pub fn records(&self) -> &[JournalRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Fold every record from the creation onwards.
    pub fn replay(&self) -> Result<MissionState, MissionError> {
        self.replay_until(u64::MAX)
    }

    /// State as of `version`.
    pub fn replay_until(&self, version: u64) -> Result<MissionState, MissionError> {
        let mut it = self.records.iter().enumerate();
        let Some((_, first)) = it.next() else {
            return Err(MissionError::NotCreated);
        };
        let MissionCommand::Create {
            mission_id,
            model,
            schedule,
            now,
        } = &first.payload
        else {
            return Err(MissionError::NotCreated);
        };
        let mut state = MissionState::create(mission_id, model.clone(), schedule.clone(), *now)?;
        for (line, rec) in it {
            if rec.version > version {
                break;
            }
            state = state.apply(&rec.payload)?;
            if state.version != rec.version || state.now != rec.at {
                return Err(MissionError::Journal {
                    line: line + 1,
                    message: format!("replay reached version {} at {}, log says {} at {}", state.version, state.now, rec.version, rec.at),
                });
            }
        }
        Ok(state)
    }

    /// One JSON record per line.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_lines(text: &str) -> Result<Self, MissionError> {
        let mut records = Vec::new();
        for (line, l) in text.lines().enumerate() {
            if l.trim().is_empty() {
                continue;
            }
            let r: JournalRecord = serde_json::from_str(l).map_err(|e| MissionError::Journal {
                line: line + 1,
                message: e.to_string(),
            })?;
            records.push(r);
        }
        Ok(Self { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::deterministic_view;
    use crate::fixtures::{four_task_model, four_task_order};
    use crate::model::DurationModel;
    use crate::optimizer::Budget;

    fn mission() -> (MissionJournal, MissionState) {
        MissionJournal::create(MissionCommand::Create {
            mission_id: "m".into(),
            model: four_task_model(DurationModel::uniform(&[60, 90])),
            schedule: Some(four_task_order("ABCD")),
            now: 480,
        })
        .unwrap()
    }

    fn rec(event: ActualEvent) -> MissionCommand {
        MissionCommand::RecordActual { event }
    }

    #[test]
    fn started_then_completed_pins_realized_duration() {
        let (mut j, s) = mission();
        let s = j.apply(&s, MissionCommand::AdvanceClock { to: 630 }).unwrap();
        let s = j.apply(&s, rec(ActualEvent::started("demo/A", 540))).unwrap();
        let s = j.apply(&s, rec(ActualEvent::completed("demo/A", 630))).unwrap();
        assert_eq!(s.status("demo/A"), ActivityStatus::Completed { start: 540, end: 630 });
        assert!(!s.future_schedule.priority_order.contains(&"demo/A".to_string()));
        let m = s.conditioned_model().unwrap();
        let a = m.activity("demo/A").unwrap();
        assert_eq!(a.duration, DurationModel::fixed(90));
        assert_eq!(a.fixed_start, Some(540));
        assert_eq!(j.replay().unwrap(), s);
    }

    #[test]
    fn completion_rules() {
        let (_, s) = mission();
        let s = s.apply(&MissionCommand::AdvanceClock { to: 700 }).unwrap();
        assert!(matches!(
            s.apply(&rec(ActualEvent::completed("demo/A", 600))),
            Err(MissionError::InvalidTransition { .. })
        ));
        let s = s.apply(&rec(ActualEvent::started("demo/A", 600))).unwrap();
        assert!(matches!(
            s.apply(&rec(ActualEvent::completed("demo/A", 590))),
            Err(MissionError::EndBeforeStart { .. })
        ));
        assert!(matches!(
            s.apply(&rec(ActualEvent::completed("demo/A", 701))),
            Err(MissionError::EventInFuture { .. })
        ));
        assert!(matches!(
            s.apply(&rec(ActualEvent::started("demo/Z", 600))),
            Err(MissionError::UnknownActivity(_))
        ));
    }

    #[test]
    fn cancellation_leaves_the_future() {
        let (_, s) = mission();
        let s = s.apply(&rec(ActualEvent::cancelled("demo/D", 480, "bad weather"))).unwrap();
        assert!(!s.future_schedule.priority_order.contains(&"demo/D".to_string()));
        assert_eq!(s.cancelled.get("demo/D").map(String::as_str), Some("bad weather"));
        let m = s.conditioned_model().unwrap();
        assert!(m.activity("demo/D").is_none());
    }

    #[test]
    fn advance_by_zero_keeps_version() {
        let (_, s) = mission();
        let same = s.apply(&MissionCommand::AdvanceClock { to: s.now }).unwrap();
        assert_eq!(same, s);
        assert!(matches!(
            s.apply(&MissionCommand::AdvanceClock { to: 0 }),
            Err(MissionError::ClockBackwards { .. })
        ));
    }

    #[test]
    fn advancing_past_a_window_flags_risk() {
        let (_, s) = mission();
        assert!(s.at_risk.is_empty());
        // the horizon ends at 2880; D needs 60 minutes
        let s = s.apply(&MissionCommand::AdvanceClock { to: 2830 }).unwrap();
        assert!(s.at_risk.contains("demo/D"));
        assert_eq!(s.status("demo/D"), ActivityStatus::NotStarted);
    }

    #[test]
    fn sol_boundary_rolls_windows() {
        let (_, s) = mission();
        let s = s.apply(&MissionCommand::AdvanceClock { to: 1440 + 600 }).unwrap();
        assert_eq!(s.model.calendar.sol_of(s.now), 1);
        let m = s.conditioned_model().unwrap();
        let t = deterministic_view(&m, &s.conditioned_schedule().unwrap()).unwrap();
        let placed: Vec<_> = t.entries.iter().filter_map(|e| e.start).collect();
        assert!(!placed.is_empty());
        assert!(placed.iter().all(|&start| start >= s.now));
    }

    #[test]
    fn edits_respect_history() {
        let (_, s) = mission();
        let s = s.apply(&MissionCommand::AdvanceClock { to: 700 }).unwrap();
        let s = s.apply(&rec(ActualEvent::started("demo/A", 540))).unwrap();
        let s = s.apply(&rec(ActualEvent::completed("demo/A", 600))).unwrap();
        let remove = MissionCommand::EditModel {
            edit: ModelEdit::RemoveActivity {
                activity_id: "demo/A".into(),
            },
        };
        assert!(matches!(s.apply(&remove), Err(MissionError::EditRejected(_))));

        let add = MissionCommand::EditModel {
            edit: ModelEdit::AddActivity {
                project_id: "demo".into(),
                activity: Activity::new("dust_devil", DurationModel::fixed(30)).between(Some(700), Some(840)),
            },
        };
        let s2 = s.apply(&add).unwrap();
        assert_eq!(s2.model_version, s.model_version + 1);
        assert_eq!(s2.unscheduled(), ["demo/dust_devil"]);
        assert!(s2.conditioned_schedule().unwrap().priority_order.contains(&"demo/dust_devil".to_string()));
        assert_eq!(s2.history_json(), s.history_json());
    }

    #[test]
    fn in_progress_accepts_only_end_constraints() {
        let (_, s) = mission();
        let s = s.apply(&MissionCommand::AdvanceClock { to: 560 }).unwrap();
        let s = s.apply(&rec(ActualEvent::started("demo/A", 540))).unwrap();
        let mut extra = Activity::new("E", DurationModel::fixed(10));
        extra.requirements.push(("line".into(), 1));
        let s = s
            .apply(&MissionCommand::EditModel {
                edit: ModelEdit::AddActivity {
                    project_id: "demo".into(),
                    activity: extra,
                },
            })
            .unwrap();
        let ok = TemporalConstraint::precedence("AE", "A", "E", 0);
        let mut bad = ok.clone();
        bad.id = "AE2".into();
        bad.from_event.anchor = Anchor::Start;
        let edit = |c: TemporalConstraint| MissionCommand::EditModel {
            edit: ModelEdit::AddConstraint {
                project_id: "demo".into(),
                constraint: c,
            },
        };
        assert!(s.apply(&edit(ok)).is_ok());
        assert!(matches!(s.apply(&edit(bad)), Err(MissionError::EditRejected(_))));
    }

    #[test]
    fn reoptimization_after_long_a_puts_c_next() {
        let (_, s) = mission();
        let s = s.apply(&MissionCommand::AdvanceClock { to: 630 }).unwrap();
        let s = s.apply(&rec(ActualEvent::started("demo/A", 540))).unwrap();
        let s = s.apply(&rec(ActualEvent::completed("demo/A", 630))).unwrap();
        let config = SearchConfig {
            n_eval_scenarios: 50,
            budget: Budget {
                max_iterations: Some(200),
                max_seconds: None,
            },
            workers: Some(1),
            ..Default::default()
        };
        let (next, result) = s.reoptimize_future(&config, &CancelToken::new()).unwrap();
        let m = next.conditioned_model().unwrap();
        let list = next.future_schedule.dispatch_list(&m).unwrap();
        assert_eq!(list[1], "demo/C", "{list:?}");
        assert_eq!(result.best_estimate.p_hat, 1.0);
        assert_eq!(next.history, s.history);
    }

    #[test]
    fn finished_mission_is_certain() {
        let (_, mut s) = mission();
        s = s.apply(&MissionCommand::AdvanceClock { to: 900 }).unwrap();
        for (id, a, b) in [("A", 540, 600), ("B", 600, 720), ("C", 720, 780), ("D", 780, 840)] {
            s = s.apply(&rec(ActualEvent::started(format!("demo/{id}"), a))).unwrap();
            s = s.apply(&rec(ActualEvent::completed(format!("demo/{id}"), b))).unwrap();
        }
        assert!(s.future_schedule.priority_order.is_empty());
        assert_eq!(s.conditional_robustness(20, 1, 1).unwrap().p_hat, 1.0);
    }

    #[test]
    fn snapshot_and_journal_round_trip() {
        let (mut j, s) = mission();
        let s = j.apply(&s, MissionCommand::AdvanceClock { to: 600 }).unwrap();
        let s = j.apply(&s, rec(ActualEvent::started("demo/A", 550))).unwrap();
        let text = s.to_snapshot_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["format_version", "calendar", "resources", "projects", "state"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(MissionState::from_snapshot_json(&text).unwrap(), s);
        let back = MissionJournal::from_lines(&j.to_lines()).unwrap();
        assert_eq!(back, j);
        assert_eq!(back.replay().unwrap(), s);
        assert_eq!(back.replay_until(2).unwrap().now, 600);
    }
}
