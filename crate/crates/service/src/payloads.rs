//! Request and report bodies of the HTTP API. The CLI prints the same
//! report types, so one decoder reads both.

use std::collections::{BTreeMap, BTreeSet};

use rams_core::mission::ActivityStatus;
use rams_core::model::ViolationKind;
use rams_core::{
    ExecutionTrace, MissionState, ModelEdit, ModelFile, RobustnessEstimate, Schedule, SearchConfig, SearchResult,
    ValidationReport,
};
use rams_coord::OneShotAction;
use serde::{Deserialize, Serialize};

use crate::gantt::GanttData;

/// Body of every error response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    /// Location of a malformed field, e.g. `projects[0].activities[2].duration`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<ViolationItem>,
    /// Set on version conflicts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationItem {
    pub element: String,
    pub kind: ViolationKind,
    pub message: String,
}

pub fn violation_items(report: &ValidationReport) -> Vec<ViolationItem> {
    report
        .violations
        .iter()
        .map(|v| ViolationItem {
            element: v.element.clone(),
            kind: v.kind,
            message: v.message.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReply {
    pub valid: bool,
    pub violations: Vec<ViolationItem>,
    pub activities: usize,
    pub constraints: usize,
}

impl ValidationReply {
    pub fn of(model: &ModelFile) -> Self {
        let report = model.validate();
        let activities = model.projects.iter().map(|p| p.activities.len()).sum();
        let constraints = model.projects.iter().map(|p| p.constraints.len()).sum();
        Self {
            valid: report.is_valid(),
            violations: violation_items(&report),
            activities,
            constraints,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPutReply {
    pub mission_id: String,
    pub model_version: u64,
    /// False when the upload equals the latest version.
    pub created: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub edit: ModelEdit,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionSummary {
    pub mission_id: String,
    pub model_version: u64,
    pub live: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartMission {
    #[serde(default)]
    pub schedule: Option<Schedule>,
    /// Mission clock at start, in minutes.
    #[serde(default)]
    pub now: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advance {
    pub to: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FutureRequest {
    pub schedule: Schedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstallRequest {
    pub problem_id: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimizeRequest {
    #[serde(default)]
    pub config: SearchConfig,
    /// Reject when the mission's model moved past this version.
    #[serde(default)]
    pub model_version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReply {
    pub request_id: u64,
    pub problem_id: String,
    pub model_version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneShotRequest {
    pub action: OneShotAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmittedReply {
    pub request_id: u64,
    pub model_version: u64,
}

fn default_samples() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRequest {
    /// Omitted for a live mission: its current future is evaluated,
    /// conditioned on the history.
    #[serde(default)]
    pub schedule: Option<Schedule>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    /// Enumerate the full support instead of sampling.
    #[serde(default)]
    pub exact: bool,
}

impl Default for RobustnessRequest {
    fn default() -> Self {
        Self {
            schedule: None,
            samples: default_samples(),
            seed: 0,
            workers: None,
            exact: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub mission_id: String,
    pub model_version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_version: Option<u64>,
    /// True when the estimate is conditioned on a live mission's history.
    pub conditional: bool,
    pub estimate: RobustnessEstimate,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceRequest {
    #[serde(default)]
    pub schedule: Option<Schedule>,
    /// Sample scenario `scenario` of stream `seed`; nominal durations when
    /// omitted.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub scenario: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub mission_id: String,
    pub model_version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub scenario: u64,
    pub trace: ExecutionTrace,
    pub gantt: GanttData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub result: SearchResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeReport {
    pub nodes: usize,
    pub value: f64,
    /// Label chosen at the root decision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_decision: Option<String>,
    /// Value of the base schedule as a fixed policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub seq: u64,
    pub agents: usize,
}

/// A live mission as clients see it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionView {
    pub mission_id: String,
    pub model_version: u64,
    pub state_version: u64,
    pub now: i64,
    pub statuses: BTreeMap<String, ActivityStatus>,
    pub future_schedule: Schedule,
    pub unscheduled: Vec<String>,
    pub at_risk: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_estimate: Option<RobustnessEstimate>,
    pub history_len: usize,
}

impl MissionView {
    pub fn of(state: &MissionState) -> Self {
        Self {
            mission_id: state.mission_id.clone(),
            model_version: state.model_version,
            state_version: state.version,
            now: state.now,
            statuses: state.statuses(),
            future_schedule: state.future_schedule.clone(),
            unscheduled: state.unscheduled(),
            at_risk: state.at_risk.clone(),
            last_estimate: state.last_estimate.clone(),
            history_len: state.history.len(),
        }
    }
}
