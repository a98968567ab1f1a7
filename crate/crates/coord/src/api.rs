//! The agent-facing store interface and its wire messages.

use serde::{Deserialize, Serialize};

use crate::records::{AgentRecord, AgentRequest, Capabilities, OneShotResult, PollReply, Problem, Publication, SolutionPoolEntry};
use crate::store::{Store, StoreError};
use crate::clock::Millis;

pub const PROTOCOL_VERSION: u32 = 1;

/// What an agent may ask of the store. Implemented by [`Store`] itself, by
/// the TCP client and by the fault-injection wrappers.
pub trait StoreApi: Send + Sync {
    fn register(&self, agent_id: &str, capabilities: Capabilities) -> Result<AgentRecord, StoreError>;
    fn heartbeat(&self, agent_id: &str, assignment: Option<u64>) -> Result<Millis, StoreError>;
    fn poll(&self, agent_id: &str) -> Result<PollReply, StoreError>;
    fn claim(&self, agent_id: &str) -> Result<Option<AgentRequest>, StoreError>;
    fn complete(&self, agent_id: &str, request_id: u64, outcome: Result<OneShotResult, String>) -> Result<bool, StoreError>;
    fn publish(&self, agent_id: &str, problem_id: &str, publication: Publication) -> Result<bool, StoreError>;
    fn fetch_model(&self, problem_id: &str) -> Result<Problem, StoreError>;
    fn fetch_pool(&self, problem_id: &str) -> Result<Vec<SolutionPoolEntry>, StoreError>;
}

impl StoreApi for Store {
    fn register(&self, agent_id: &str, capabilities: Capabilities) -> Result<AgentRecord, StoreError> {
        Store::register(self, agent_id, capabilities)
    }

    fn heartbeat(&self, agent_id: &str, assignment: Option<u64>) -> Result<Millis, StoreError> {
        Store::heartbeat(self, agent_id, assignment)
    }

    fn poll(&self, agent_id: &str) -> Result<PollReply, StoreError> {
        Store::poll(self, agent_id)
    }

    fn claim(&self, agent_id: &str) -> Result<Option<AgentRequest>, StoreError> {
        self.claim_one_shot(agent_id)
    }

    fn complete(&self, agent_id: &str, request_id: u64, outcome: Result<OneShotResult, String>) -> Result<bool, StoreError> {
        self.complete_one_shot(agent_id, request_id, outcome)
    }

    fn publish(&self, agent_id: &str, problem_id: &str, publication: Publication) -> Result<bool, StoreError> {
        Store::publish(self, agent_id, problem_id, publication)
    }

    fn fetch_model(&self, problem_id: &str) -> Result<Problem, StoreError> {
        self.problem(problem_id)
    }

    fn fetch_pool(&self, problem_id: &str) -> Result<Vec<SolutionPoolEntry>, StoreError> {
        self.pool(problem_id)
    }
}

impl<T: StoreApi + ?Sized> StoreApi for std::sync::Arc<T> {
    fn register(&self, agent_id: &str, capabilities: Capabilities) -> Result<AgentRecord, StoreError> {
        (**self).register(agent_id, capabilities)
    }

    fn heartbeat(&self, agent_id: &str, assignment: Option<u64>) -> Result<Millis, StoreError> {
        (**self).heartbeat(agent_id, assignment)
    }

    fn poll(&self, agent_id: &str) -> Result<PollReply, StoreError> {
        (**self).poll(agent_id)
    }

    fn claim(&self, agent_id: &str) -> Result<Option<AgentRequest>, StoreError> {
        (**self).claim(agent_id)
    }

    fn complete(&self, agent_id: &str, request_id: u64, outcome: Result<OneShotResult, String>) -> Result<bool, StoreError> {
        (**self).complete(agent_id, request_id, outcome)
    }

    fn publish(&self, agent_id: &str, problem_id: &str, publication: Publication) -> Result<bool, StoreError> {
        (**self).publish(agent_id, problem_id, publication)
    }

    fn fetch_model(&self, problem_id: &str) -> Result<Problem, StoreError> {
        (**self).fetch_model(problem_id)
    }

    fn fetch_pool(&self, problem_id: &str) -> Result<Vec<SolutionPoolEntry>, StoreError> {
        (**self).fetch_pool(problem_id)
    }
}

/// Request line sent by an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub protocol_version: u32,
    /// Mission the message concerns; empty for agent bookkeeping.
    #[serde(default)]
    pub mission_id: String,
    /// Model version the sender works with; 0 when not applicable.
    #[serde(default)]
    pub model_version: u64,
    pub body: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "message", rename_all = "snake_case")]
pub enum Message {
    Register { agent_id: String, capabilities: Capabilities },
    Heartbeat { agent_id: String, assignment: Option<u64> },
    Poll { agent_id: String },
    Claim { agent_id: String },
    Complete { agent_id: String, request_id: u64, outcome: WireOutcome },
    Publish { agent_id: String, problem_id: String, publication: Publication },
    FetchModel { problem_id: String },
    FetchPool { problem_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireOutcome {
    Ok(OneShotResult),
    Err(String),
}

impl From<Result<OneShotResult, String>> for WireOutcome {
    fn from(r: Result<OneShotResult, String>) -> Self {
        match r {
            Ok(v) => WireOutcome::Ok(v),
            Err(e) => WireOutcome::Err(e),
        }
    }
}

impl From<WireOutcome> for Result<OneShotResult, String> {
    fn from(w: WireOutcome) -> Self {
        match w {
            WireOutcome::Ok(v) => Ok(v),
            WireOutcome::Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reply", rename_all = "snake_case")]
pub enum Reply {
    Registered { record: AgentRecord },
    Time { now: Millis },
    Polled { poll: PollReply },
    Claimed { request: Option<AgentRequest> },
    Accepted { accepted: bool },
    Model { problem: Box<Problem> },
    Pool { entries: Vec<SolutionPoolEntry> },
    Error(WireError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub current_version: Option<u64>,
}

impl From<&StoreError> for WireError {
    fn from(e: &StoreError) -> Self {
        Self {
            code: e.code().into(),
            message: e.to_string(),
            current_version: e.current_version(),
        }
    }
}

impl From<WireError> for StoreError {
    fn from(w: WireError) -> Self {
        match (w.code.as_str(), w.current_version) {
            ("stale_model", Some(current)) => StoreError::StaleModel { current, got: 0 },
            ("conflict", Some(current)) => StoreError::Conflict {
                current,
                message: w.message,
            },
            ("invalid", _) => StoreError::Invalid(w.message),
            ("unreachable", _) => StoreError::Unreachable(w.message),
            ("protocol", _) => StoreError::Protocol(w.message),
            _ => StoreError::Remote {
                code: w.code,
                message: w.message,
            },
        }
    }
}

/// Serve one message against a store. Replies carry the mission's current
/// model version so clients can detect staleness.
pub fn handle(store: &Store, envelope: Envelope<Message>) -> Envelope<Reply> {
    let reply = if envelope.protocol_version != PROTOCOL_VERSION {
        Reply::Error(WireError {
            code: "protocol".into(),
            message: format!(
                "protocol version {} is not supported (expected {PROTOCOL_VERSION})",
                envelope.protocol_version
            ),
            current_version: None,
        })
    } else {
        let r = match envelope.body {
            Message::Register { agent_id, capabilities } => StoreApi::register(store, &agent_id, capabilities).map(|record| Reply::Registered { record }),
            Message::Heartbeat { agent_id, assignment } => StoreApi::heartbeat(store, &agent_id, assignment).map(|now| Reply::Time { now }),
            Message::Poll { agent_id } => StoreApi::poll(store, &agent_id).map(|poll| Reply::Polled { poll }),
            Message::Claim { agent_id } => StoreApi::claim(store, &agent_id).map(|request| Reply::Claimed { request }),
            Message::Complete {
                agent_id,
                request_id,
                outcome,
            } => store
                .complete_one_shot(&agent_id, request_id, outcome.into())
                .map(|accepted| Reply::Accepted { accepted }),
            Message::Publish {
                agent_id,
                problem_id,
                publication,
            } => store
                .publish(&agent_id, &problem_id, publication)
                .map(|accepted| Reply::Accepted { accepted }),
            Message::FetchModel { problem_id } => StoreApi::fetch_model(store, &problem_id).map(|p| Reply::Model { problem: Box::new(p) }),
            Message::FetchPool { problem_id } => StoreApi::fetch_pool(store, &problem_id).map(|entries| Reply::Pool { entries }),
        };
        r.unwrap_or_else(|e| Reply::Error(WireError::from(&e)))
    };
    let model_version = if envelope.mission_id.is_empty() {
        0
    } else {
        store.model_version(&envelope.mission_id).unwrap_or(0)
    };
    Envelope {
        protocol_version: PROTOCOL_VERSION,
        mission_id: envelope.mission_id,
        model_version,
        body: reply,
    }
}
