//! HTTP service over the coordination store.
//!
//! All endpoints live under `/v1` and speak JSON. Responses about a mission
//! carry `x-model-version` and, once it is live, `x-state-version`; every
//! response carries `x-store-seq`. Mutations accept an `Idempotency-Key`
//! header and return the first response when it is repeated. Errors are
//! [`payloads::ErrorBody`] documents with a stable `code`; version conflicts
//! answer 409 with the current version.
//!
//! | verb | path | body | reply |
//! |------|------|------|-------|
//! | GET | `/v1/health` | | [`payloads::Health`] |
//! | POST | `/v1/validate` | model file | [`payloads::ValidationReply`] |
//! | GET | `/v1/missions` | | list of [`payloads::MissionSummary`] |
//! | GET | `/v1/missions/{m}/model?version=k` | | canonical model file |
//! | PUT | `/v1/missions/{m}/model` (`If-Match: k`) | model file | [`payloads::ModelPutReply`] |
//! | POST | `/v1/missions/{m}/edits` | [`payloads::EditRequest`] | [`payloads::ModelPutReply`] |
//! | POST | `/v1/missions/{m}/start` | [`payloads::StartMission`] | [`payloads::MissionView`] |
//! | GET | `/v1/missions/{m}/state` | | [`payloads::MissionView`] |
//! | POST | `/v1/missions/{m}/events` | actual event | [`payloads::MissionView`] |
//! | POST | `/v1/missions/{m}/advance` | [`payloads::Advance`] | [`payloads::MissionView`] |
//! | POST | `/v1/missions/{m}/future` | [`payloads::FutureRequest`] | [`payloads::MissionView`] |
//! | POST | `/v1/missions/{m}/install` | [`payloads::InstallRequest`] | [`payloads::MissionView`] |
//! | GET | `/v1/missions/{m}/snapshot` | | model file plus `state` |
//! | GET | `/v1/missions/{m}/journal` | | JSON lines |
//! | GET | `/v1/missions/{m}/gantt` | | [`gantt::GanttData`] |
//! | POST | `/v1/missions/{m}/optimize` | [`payloads::OptimizeRequest`] | [`payloads::OptimizeReply`] |
//! | POST | `/v1/missions/{m}/robustness` | [`payloads::RobustnessRequest`] | [`payloads::RobustnessReport`] |
//! | POST | `/v1/missions/{m}/trace` | [`payloads::TraceRequest`] | [`payloads::TraceReport`] |
//! | POST | `/v1/one-shots` | [`payloads::OneShotRequest`] | [`payloads::SubmittedReply`] |
//! | GET | `/v1/problems/{p}` | | problem |
//! | GET | `/v1/problems/{p}/pool` | | pool entries, best first |
//! | GET | `/v1/requests`, `/v1/requests/{id}` | | agent requests |
//! | POST | `/v1/requests/{id}/cancel` | | agent request |
//! | GET | `/v1/agents` | | agent records |
//! | GET | `/v1/records?after=s&limit=n` | | store records after `s` |
//! | GET | `/v1/stream?after=s&client_id=c` | | server-sent events, one per record |

pub mod error;
pub mod gantt;
pub mod payloads;
pub mod routes;
pub mod service;

pub use error::ApiError;
pub use service::{serve, AppState, Service, ServiceConfig};
