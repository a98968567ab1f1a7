//! Structured API errors and the JSON body extractor that reports the path
//! of a malformed field.

use axum::body::Bytes;
use axum::extract::{FromRequest, Request};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use rams_core::robustness::RobustnessError;
use rams_core::{DispatchError, MissionError, ModelError};
use rams_coord::StoreError;
use serde::de::DeserializeOwned;

use crate::payloads::{violation_items, ErrorBody};

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
                path: None,
                violations: Vec::new(),
                current_version: None,
            },
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, axum::Json(self.body)).into_response()
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        let mut err = ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_model", e.to_string());
        match &e {
            ModelError::Invalid(report) => err.body.violations = violation_items(report),
            ModelError::Parse(_) | ModelError::FormatVersion(_) => {
                err.status = StatusCode::BAD_REQUEST;
                err.body.code = "malformed".into();
            }
            _ => {}
        }
        err
    }
}

impl From<DispatchError> for ApiError {
    fn from(e: DispatchError) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_schedule", e.to_string())
    }
}

impl From<RobustnessError> for ApiError {
    fn from(e: RobustnessError) -> Self {
        match e {
            RobustnessError::Dispatch(d) => d.into(),
            RobustnessError::Scenario(s) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "not_enumerable", s.to_string()),
            other => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", other.to_string()),
        }
    }
}

impl From<MissionError> for ApiError {
    fn from(e: MissionError) -> Self {
        let e = match e {
            MissionError::Model(m) => return m.into(),
            other => other,
        };
        let (status, code) = match &e {
            MissionError::Model(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_model"),
            MissionError::Dispatch(_) | MissionError::InvalidSchedule(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_schedule"),
            MissionError::UnknownActivity(_) | MissionError::UnknownProject(_) | MissionError::UnknownConstraint(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "unknown_element")
            }
            MissionError::EventInFuture { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "event_in_future"),
            MissionError::NegativeTime(_) => (StatusCode::UNPROCESSABLE_ENTITY, "negative_time"),
            MissionError::InvalidTransition { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_transition"),
            MissionError::EndBeforeStart { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "end_before_start"),
            MissionError::ClockBackwards { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "clock_backwards"),
            MissionError::EditRejected(_) => (StatusCode::UNPROCESSABLE_ENTITY, "edit_rejected"),
            MissionError::AlreadyCreated => (StatusCode::CONFLICT, "already_started"),
            MissionError::NotCreated => (StatusCode::NOT_FOUND, "not_started"),
            MissionError::Journal { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
            MissionError::Optimize(_) | MissionError::Robustness(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let e = match e {
            StoreError::Mission(m) => return m.into(),
            StoreError::Model(m) => return m.into(),
            other => other,
        };
        let status = match &e {
            StoreError::UnknownMission(_)
            | StoreError::UnknownProblem(_)
            | StoreError::UnknownRequest(_)
            | StoreError::UnknownAgent(_) => StatusCode::NOT_FOUND,
            StoreError::StaleModel { .. } | StoreError::Conflict { .. } => StatusCode::CONFLICT,
            StoreError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StoreError::Mission(_) | StoreError::Model(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StoreError::Io(_) | StoreError::Log { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            StoreError::Unreachable(_) | StoreError::Protocol(_) | StoreError::Remote { .. } => StatusCode::BAD_GATEWAY,
        };
        let mut err = ApiError::new(status, e.code(), e.to_string());
        err.body.current_version = e.current_version();
        err
    }
}

/// JSON body whose decoding errors name the offending field.
pub struct Payload<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Payload<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        decode(&bytes).map(Payload)
    }
}

/// Decode JSON, reporting the path of the first bad field.
pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let mut err = ApiError::new(StatusCode::BAD_REQUEST, "malformed", e.inner().to_string());
        err.body.path = (path != ".").then_some(path);
        err
    })
}
