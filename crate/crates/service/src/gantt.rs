//! Gantt rows for display: one row per resource, bars per activity.
//!
//! For a live mission, bars before `now` come only from recorded events and
//! bars after it only from the future schedule; an activity in progress is
//! the one bar that crosses the now marker.

use std::collections::BTreeMap;

use rams_core::mission::ActivityStatus;
use rams_core::{deterministic_view, ExecutionTrace, MissionError, MissionModel, MissionState, Minute};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarState {
    Planned,
    InProgress,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanttBar {
    pub activity_id: String,
    pub project_id: String,
    pub start: Minute,
    pub end: Minute,
    pub state: BarState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanttRow {
    pub resource: String,
    pub bars: Vec<GanttBar>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanttData {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub now: Option<Minute>,
    pub horizon_end: Minute,
    pub rows: Vec<GanttRow>,
    /// Activities without a bar: never placed, cancelled or removed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unplaced: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_hat: Option<f64>,
}

struct Rows {
    order: Vec<String>,
    bars: BTreeMap<String, Vec<GanttBar>>,
}

impl Rows {
    fn new(model: &MissionModel) -> Self {
        let order: Vec<String> = model.resources.iter().map(|r| r.id.clone()).collect();
        Self {
            bars: order.iter().map(|r| (r.clone(), Vec::new())).collect(),
            order,
        }
    }

    fn add(&mut self, resources: impl IntoIterator<Item = String>, bar: GanttBar) {
        for r in resources {
            self.bars.entry(r).or_default().push(bar.clone());
        }
    }

    fn finish(mut self) -> Vec<GanttRow> {
        self.order
            .iter()
            .map(|r| {
                let mut bars = self.bars.remove(r).unwrap_or_default();
                bars.sort_by(|a, b| (a.start, &a.activity_id).cmp(&(b.start, &b.activity_id)));
                GanttRow { resource: r.clone(), bars }
            })
            .collect()
    }
}

fn resources_of(model: &MissionModel, activity_id: &str, crew: &[String]) -> Vec<String> {
    let mut out: Vec<String> = model
        .activity(activity_id)
        .map(|a| a.requirements.iter().map(|(r, _)| r.clone()).collect())
        .unwrap_or_default();
    out.extend(crew.iter().cloned());
    out
}

fn project_of(model: &MissionModel, activity_id: &str) -> String {
    model.activity(activity_id).map(|a| a.project_id.clone()).unwrap_or_default()
}

/// Bars of one execution trace, all planned.
pub fn from_trace(model: &MissionModel, trace: &ExecutionTrace) -> GanttData {
    let mut rows = Rows::new(model);
    let mut unplaced = Vec::new();
    for e in &trace.entries {
        let (Some(start), Some(end)) = (e.start, e.end) else {
            unplaced.push(e.activity_id.clone());
            continue;
        };
        let bar = GanttBar {
            activity_id: e.activity_id.clone(),
            project_id: project_of(model, &e.activity_id),
            start,
            end,
            state: BarState::Planned,
        };
        rows.add(resources_of(model, &e.activity_id, &e.crew), bar);
    }
    GanttData {
        now: None,
        horizon_end: model.calendar.horizon_end(),
        rows: rows.finish(),
        unplaced,
        p_hat: None,
    }
}

/// Past from the history, future from the nominal dispatch of the current
/// future schedule on the conditioned model.
pub fn for_mission(state: &MissionState) -> Result<GanttData, MissionError> {
    let model = state.model.to_mission()?;
    let conditioned = state.conditioned_model()?;
    let projection = deterministic_view(&conditioned, &state.conditioned_schedule()?)?;
    let mut rows = Rows::new(&model);
    let mut unplaced = Vec::new();
    for (id, status) in state.statuses() {
        let crew: Vec<String> = state
            .executed_assignments
            .get(&id)
            .map(|a| a.crew.clone())
            .unwrap_or_default();
        let projected = projection.entry(&id);
        let (start, end, bar_state, crew) = match status {
            ActivityStatus::Completed { start, end } => (start, end, BarState::Completed, crew),
            ActivityStatus::Failed { start, at } => (start, at, BarState::Failed, crew),
            ActivityStatus::InProgress { start } => {
                let end = projected.and_then(|e| e.end).unwrap_or(state.now).max(state.now);
                (start, end, BarState::InProgress, crew)
            }
            ActivityStatus::Cancelled { .. } => {
                unplaced.push(id);
                continue;
            }
            ActivityStatus::NotStarted => match projected.and_then(|e| e.start.zip(e.end).map(|p| (p, e.crew.clone()))) {
                Some(((s, e), c)) => (s, e, BarState::Planned, c),
                None => {
                    unplaced.push(id);
                    continue;
                }
            },
        };
        let bar = GanttBar {
            project_id: project_of(&model, &id),
            activity_id: id.clone(),
            start,
            end,
            state: bar_state,
        };
        rows.add(resources_of(&model, &id, &crew), bar);
    }
    Ok(GanttData {
        now: Some(state.now),
        horizon_end: model.calendar.horizon_end(),
        rows: rows.finish(),
        unplaced,
        p_hat: state.last_estimate.as_ref().map(|e| e.p_hat),
    })
}
