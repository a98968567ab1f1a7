//! Coordination layer for distributed schedule optimization.
//!
//! A single [`Store`] holds model versions, live missions, optimization
//! problems with their solution pools, and agent requests. Agents talk to
//! it through [`StoreApi`], either in process or over the JSON-lines TCP
//! protocol in [`net`]. One-shot requests are leased to exactly one agent;
//! running optimize requests are served by every idle agent.

pub mod agent;
pub mod api;
pub mod clock;
pub mod faults;
pub mod harness;
pub mod net;
pub mod records;
pub mod store;

pub use agent::{run_agent, AgentConfig, AgentReport};
pub use api::StoreApi;
pub use clock::{Clock, ManualClock, Millis, ScaledClock, SystemClock};
pub use records::{
    AgentRecord, AgentRequest, Capabilities, OneShotAction, OneShotResult, PollReply, Problem, Publication, RequestKind,
    RequestStatus, SolutionPoolEntry,
};
pub use store::{Store, StoreConfig, StoreError, StoreState};
