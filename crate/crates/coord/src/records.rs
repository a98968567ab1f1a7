//! Records kept by the store: problems, pool entries, agent requests and
//! agent records.

use std::cmp::Ordering;

use rams_core::{ModelFile, RobustnessEstimate, Schedule, SearchConfig};
use serde::{Deserialize, Serialize};

use crate::clock::Millis;

/// Default number of entries kept per solution pool.
pub const DEFAULT_POOL_SIZE: usize = 10;

/// A fixed optimization target: one model version (conditioned on the
/// mission history when the mission is live) and one search configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub problem_id: String,
    pub mission_id: String,
    pub model_version: u64,
    /// Mission state version the model was conditioned on, if live.
    #[serde(default)]
    pub state_version: Option<u64>,
    pub config: SearchConfig,
    pub model: ModelFile,
}

impl Problem {
    pub fn make_id(mission_id: &str, model_version: u64, state_version: Option<u64>, config: &SearchConfig) -> String {
        match state_version {
            Some(s) => format!("{mission_id}@{model_version}.{s}:{}", config.fingerprint()),
            None => format!("{mission_id}@{model_version}:{}", config.fingerprint()),
        }
    }
}

/// How a pool entry was produced, enough to rerun the search on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryOrigin {
    pub start: Option<Schedule>,
    pub search_seed: u64,
    pub iterations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionPoolEntry {
    pub problem_id: String,
    pub schedule: Schedule,
    pub estimate: RobustnessEstimate,
    pub producing_agent: String,
    pub created_at: Millis,
    /// Objective value; lower ranks first.
    pub rank_key: f64,
    #[serde(default)]
    pub origin: Option<EntryOrigin>,
}

impl SolutionPoolEntry {
    /// Canonical text of the schedule, used for ties and duplicates.
    pub fn schedule_key(&self) -> String {
        serde_json::to_string(&self.schedule).expect("schedule serializes")
    }

    /// Pool order: rank key, then schedule text.
    pub fn pool_cmp(&self, other: &Self) -> Ordering {
        self.rank_key
            .total_cmp(&other.rank_key)
            .then_with(|| self.schedule_key().cmp(&other.schedule_key()))
    }
}

/// What an agent sends when publishing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Publication {
    pub schedule: Schedule,
    pub estimate: RobustnessEstimate,
    pub rank_key: f64,
    #[serde(default)]
    pub origin: Option<EntryOrigin>,
}

/// Work that exactly one agent performs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum OneShotAction {
    /// Score one schedule on the problem's evaluation set.
    Evaluate { problem_id: String, schedule: Schedule },
    /// Remove an activity from the model, then re-score the problem's pool
    /// without it.
    RemoveActivity { problem_id: String, activity_id: String },
}

impl OneShotAction {
    pub fn problem_id(&self) -> &str {
        match self {
            OneShotAction::Evaluate { problem_id, .. } | OneShotAction::RemoveActivity { problem_id, .. } => problem_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rescored {
    pub schedule: Schedule,
    pub estimate: RobustnessEstimate,
    pub rank_key: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum OneShotResult {
    Evaluated {
        estimate: RobustnessEstimate,
        rank_key: f64,
    },
    /// Pool entries re-scored on the edited model. `problem_id` is filled in
    /// by the store once the edit is applied.
    Rescored {
        #[serde(default)]
        problem_id: Option<String>,
        entries: Vec<Rescored>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RequestKind {
    OneShot { action: OneShotAction },
    RunningOptimize { problem_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RequestStatus {
    Pending,
    Claimed { agent: String, lease_expiry: Millis },
    Done {
        #[serde(default)]
        result: Option<OneShotResult>,
    },
    Failed { reason: String },
}

impl RequestStatus {
    pub fn is_final(&self) -> bool {
        matches!(self, RequestStatus::Done { .. } | RequestStatus::Failed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRequest {
    pub id: u64,
    pub mission_id: String,
    pub model_version: u64,
    pub kind: RequestKind,
    pub status: RequestStatus,
    pub created_at: Millis,
    /// Number of times the request was claimed.
    #[serde(default)]
    pub claims: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub max_parallel_evals: usize,
}

impl Default for Capabilities {
    fn default() -> Self {
        Self { max_parallel_evals: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub agent_id: String,
    pub last_heartbeat: Millis,
    pub capabilities: Capabilities,
    #[serde(default)]
    pub current_assignment: Option<u64>,
}

/// What an agent learns from one poll.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollReply {
    pub now: Millis,
    pub pending_one_shots: usize,
    /// Running optimize requests as (request id, problem id).
    pub running: Vec<(u64, String)>,
}
