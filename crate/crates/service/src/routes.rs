//! HTTP routes under `/v1`.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::future::Future;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use rams_coord::records::RequestKind;
use rams_coord::store::LogRecord;
use rams_coord::{AgentRecord, AgentRequest, Problem, SolutionPoolEntry};
use rams_core::robustness::estimate_robustness_with_workers;
use rams_core::{
    deterministic_view, dispatch, exact_robustness, sample_scenario, ActualEvent, DispatchProtocol, MissionCommand,
    ModelFile,
};
use serde::{Deserialize, Serialize};

use crate::error::{decode, ApiError, Payload};
use crate::gantt::{self, GanttData};
use crate::payloads::*;
use crate::service::AppState;

type ApiResult<T> = Result<T, ApiError>;

pub const MODEL_VERSION_HEADER: &str = "x-model-version";
pub const STATE_VERSION_HEADER: &str = "x-state-version";
pub const SEQ_HEADER: &str = "x-store-seq";
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

pub fn router(state: AppState) -> Router {
    let v1 = Router::new()
        .route("/health", get(health))
        .route("/validate", post(validate))
        .route("/missions", get(missions))
        .route("/missions/{mission}/model", get(get_model).put(put_model))
        .route("/missions/{mission}/edits", post(edit_model))
        .route("/missions/{mission}/start", post(start_mission))
        .route("/missions/{mission}/state", get(mission_state))
        .route("/missions/{mission}/events", post(record_event))
        .route("/missions/{mission}/advance", post(advance))
        .route("/missions/{mission}/future", post(replace_future))
        .route("/missions/{mission}/install", post(install_best))
        .route("/missions/{mission}/snapshot", get(snapshot))
        .route("/missions/{mission}/journal", get(journal))
        .route("/missions/{mission}/gantt", get(mission_gantt))
        .route("/missions/{mission}/optimize", post(optimize))
        .route("/missions/{mission}/robustness", post(robustness))
        .route("/missions/{mission}/trace", post(trace))
        .route("/one-shots", post(one_shot))
        .route("/problems/{problem}", get(problem))
        .route("/problems/{problem}/pool", get(pool))
        .route("/requests", get(requests))
        .route("/requests/{id}", get(request))
        .route("/requests/{id}/cancel", post(cancel))
        .route("/agents", get(agents))
        .route("/records", get(records))
        .route("/stream", get(stream));
    Router::new()
        .nest("/v1", v1)
        .layer(middleware::from_fn_with_state(state.clone(), stamp_versions))
        .with_state(state)
}

/// Every response carries the store sequence number; responses about one
/// mission also carry its model and state versions.
async fn stamp_versions(State(st): State<AppState>, req: Request, next: Next) -> Response {
    let mission = req
        .uri()
        .path()
        .strip_prefix("/v1/missions/")
        .and_then(|rest| rest.split('/').next())
        .filter(|m| !m.is_empty())
        .map(str::to_owned);
    let mut response = next.run(req).await;
    let headers = response.headers_mut();
    if let Some(m) = mission {
        if let Ok(v) = st.store.model_version(&m) {
            headers.insert(MODEL_VERSION_HEADER, HeaderValue::from(v));
        }
        if let Ok(s) = st.store.mission(&m) {
            headers.insert(STATE_VERSION_HEADER, HeaderValue::from(s.version));
        }
    }
    headers.insert(SEQ_HEADER, HeaderValue::from(st.store.seq()));
    response
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

/// Run a mutation at most once per idempotency key: a repeated key gets
/// the first response back and `f` is dropped unpolled.
async fn idempotent<T: Serialize>(
    st: &AppState,
    headers: &HeaderMap,
    scope: &str,
    f: impl Future<Output = ApiResult<(StatusCode, T)>>,
) -> ApiResult<Response> {
    let Some(key) = headers.get(IDEMPOTENCY_HEADER).and_then(|v| v.to_str().ok()) else {
        let (status, body) = f.await?;
        return Ok((status, Json(body)).into_response());
    };
    let key = format!("http:{scope}:{key}");
    let _guard = st.idempotency.lock().await;
    if let Some(stored) = st.store.remembered(&key) {
        return Ok(replay(stored));
    }
    let (status, body) = f.await?;
    let value = serde_json::json!({
        "status": status.as_u16(),
        "body": serde_json::to_value(&body).map_err(|e| ApiError::internal(e.to_string()))?,
    });
    st.store.remember(&key, value)?;
    Ok((status, Json(body)).into_response())
}

fn replay(stored: serde_json::Value) -> Response {
    let status = stored["status"]
        .as_u64()
        .and_then(|s| StatusCode::from_u16(s as u16).ok())
        .unwrap_or(StatusCode::OK);
    let mut response = (status, Json(stored["body"].clone())).into_response();
    response.headers_mut().insert("idempotent-replay", HeaderValue::from_static("true"));
    response
}

fn if_match(headers: &HeaderMap) -> ApiResult<Option<u64>> {
    headers
        .get(header::IF_MATCH)
        .map(|v| {
            v.to_str()
                .ok()
                .map(|s| s.trim().trim_matches('"'))
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ApiError::bad_request("If-Match must be a model version number"))
        })
        .transpose()
}

fn json_text(text: String, version: Option<u64>) -> Response {
    let mut r = ([(header::CONTENT_TYPE, "application/json")], text).into_response();
    if let Some(v) = version {
        r.headers_mut().insert(MODEL_VERSION_HEADER, HeaderValue::from(v));
    }
    r
}

// ---- models ----

async fn health(State(st): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        seq: st.store.seq(),
        agents: st.agents,
    })
}

async fn validate(Payload(model): Payload<ModelFile>) -> Json<ValidationReply> {
    Json(ValidationReply::of(&model))
}

async fn missions(State(st): State<AppState>) -> ApiResult<Json<Vec<MissionSummary>>> {
    let mut out = Vec::new();
    for m in st.store.missions() {
        let model_version = st.store.model_version(&m)?;
        let live = st.store.mission(&m).ok();
        out.push(MissionSummary {
            mission_id: m,
            model_version,
            live: live.is_some(),
            state_version: live.map(|s| s.version),
        });
    }
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
struct VersionQuery {
    version: Option<u64>,
}

async fn get_model(
    State(st): State<AppState>,
    Path(mission): Path<String>,
    Query(q): Query<VersionQuery>,
) -> ApiResult<Response> {
    let (version, model) = st.store.model(&mission, q.version)?;
    Ok(json_text(model.to_canonical_json(), Some(version)))
}

async fn put_model(
    State(st): State<AppState>,
    Path(mission): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let model: ModelFile = decode(&body)?;
    if model.format_version != rams_core::model::FORMAT_VERSION {
        return Err(rams_core::ModelError::FormatVersion(model.format_version).into());
    }
    let expected = if_match(&headers)?;
    let scope = format!("model:{mission}");
    idempotent(&st, &headers, &scope, async {
        let before = st.store.model_version(&mission).unwrap_or(0);
        let store = st.store.clone();
        let m = mission.clone();
        let version = blocking(move || Ok(store.put_model(&m, model, expected)?)).await?;
        let created = version > before;
        let status = if created { StatusCode::CREATED } else { StatusCode::OK };
        Ok((
            status,
            ModelPutReply {
                mission_id: mission.clone(),
                model_version: version,
                created,
            },
        ))
    })
    .await
}

async fn edit_model(
    State(st): State<AppState>,
    Path(mission): Path<String>,
    headers: HeaderMap,
    Payload(req): Payload<EditRequest>,
) -> ApiResult<Response> {
    let expected = req.expected_version.or(if_match(&headers)?);
    idempotent(&st, &headers, &format!("edit:{mission}"), async {
        let version = st.store.edit_model(&mission, &req.edit, expected)?;
        Ok((
            StatusCode::OK,
            ModelPutReply {
                mission_id: mission.clone(),
                model_version: version,
                created: true,
            },
        ))
    })
    .await
}

// ---- missions ----

async fn start_mission(
    State(st): State<AppState>,
    Path(mission): Path<String>,
    headers: HeaderMap,
    Payload(req): Payload<StartMission>,
) -> ApiResult<Response> {
    idempotent(&st, &headers, &format!("start:{mission}"), async {
        let state = st.store.create_mission(&mission, req.schedule.clone(), req.now)?;
        Ok((StatusCode::CREATED, MissionView::of(&state)))
    })
    .await
}

async fn mission_state(State(st): State<AppState>, Path(mission): Path<String>) -> ApiResult<Json<MissionView>> {
    Ok(Json(MissionView::of(&live_mission(&st, &mission)?)))
}

fn live_mission(st: &AppState, mission: &str) -> ApiResult<rams_core::MissionState> {
    st.store.model_version(mission)?;
    st.store
        .mission(mission)
        .map_err(|_| ApiError::not_found("not_started", format!("mission `{mission}` has not started")))
}

async fn command(st: &AppState, headers: &HeaderMap, mission: &str, scope: &str, cmd: MissionCommand) -> ApiResult<Response> {
    live_mission(st, mission)?;
    idempotent(st, headers, &format!("{scope}:{mission}"), async {
        let state = st.store.mission_command(mission, cmd.clone())?;
        Ok((StatusCode::OK, MissionView::of(&state)))
    })
    .await
}

async fn record_event(
    State(st): State<AppState>,
    Path(mission): Path<String>,
    headers: HeaderMap,
    Payload(event): Payload<ActualEvent>,
) -> ApiResult<Response> {
    command(&st, &headers, &mission, "event", MissionCommand::RecordActual { event }).await
}

async fn advance(
    State(st): State<AppState>,
    Path(mission): Path<String>,
    headers: HeaderMap,
    Payload(req): Payload<Advance>,
) -> ApiResult<Response> {
    command(&st, &headers, &mission, "advance", MissionCommand::AdvanceClock { to: req.to }).await
}

async fn replace_future(
    State(st): State<AppState>,
    Path(mission): Path<String>,
    headers: HeaderMap,
    Payload(req): Payload<FutureRequest>,
) -> ApiResult<Response> {
    let state = live_mission(&st, &mission)?;
    let cmd = blocking(move || Ok(state.future_command(&req.schedule, None)?)).await?;
    command(&st, &headers, &mission, "future", cmd).await
}

/// Install the best pool entry of a problem as the mission's future.
async fn install_best(
    State(st): State<AppState>,
    Path(mission): Path<String>,
    headers: HeaderMap,
    Payload(req): Payload<InstallRequest>,
) -> ApiResult<Response> {
    let state = live_mission(&st, &mission)?;
    let problem = st.store.problem(&req.problem_id)?;
    if problem.mission_id != mission {
        return Err(ApiError::bad_request(format!("problem `{}` belongs to another mission", req.problem_id)));
    }
    if problem.model_version != state.model_version || problem.state_version != Some(state.version) {
        let mut err = ApiError::new(
            StatusCode::CONFLICT,
            "stale_problem",
            format!("problem `{}` was defined on an older mission state", req.problem_id),
        );
        err.body.current_version = Some(state.model_version);
        return Err(err);
    }
    let best = st
        .store
        .pool(&req.problem_id)?
        .into_iter()
        .next()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "empty_pool", "the pool has no entries yet"))?;
    let cmd = blocking(move || Ok(state.future_command(&best.schedule, Some(best.estimate))?)).await?;
    command(&st, &headers, &mission, "install", cmd).await
}

async fn snapshot(State(st): State<AppState>, Path(mission): Path<String>) -> ApiResult<Response> {
    let state = live_mission(&st, &mission)?;
    Ok(json_text(state.to_snapshot_json(), Some(state.model_version)))
}

async fn journal(State(st): State<AppState>, Path(mission): Path<String>) -> ApiResult<Response> {
    live_mission(&st, &mission)?;
    let lines = st.store.mission_journal(&mission)?.to_lines();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], lines).into_response())
}

async fn mission_gantt(State(st): State<AppState>, Path(mission): Path<String>) -> ApiResult<Json<GanttData>> {
    let state = live_mission(&st, &mission)?;
    blocking(move || Ok(Json(gantt::for_mission(&state)?))).await
}

// ---- optimization ----

async fn optimize(
    State(st): State<AppState>,
    Path(mission): Path<String>,
    headers: HeaderMap,
    Payload(req): Payload<OptimizeRequest>,
) -> ApiResult<Response> {
    let key = headers.get(IDEMPOTENCY_HEADER).and_then(|v| v.to_str().ok()).map(|k| format!("optimize:{mission}:{k}"));
    idempotent(&st, &headers, &format!("optimize:{mission}"), async {
        let current = st.store.model_version(&mission)?;
        if let Some(v) = req.model_version.filter(|&v| v != current) {
            return Err(rams_coord::StoreError::StaleModel { current, got: v }.into());
        }
        let problem = st.store.define_problem(&mission, req.config.clone())?;
        let kind = RequestKind::RunningOptimize {
            problem_id: problem.problem_id.clone(),
        };
        let request_id = st.store.submit(&mission, problem.model_version, kind, key.clone())?;
        Ok((
            StatusCode::ACCEPTED,
            OptimizeReply {
                request_id,
                problem_id: problem.problem_id,
                model_version: problem.model_version,
                state_version: problem.state_version,
            },
        ))
    })
    .await
}

async fn one_shot(State(st): State<AppState>, headers: HeaderMap, Payload(req): Payload<OneShotRequest>) -> ApiResult<Response> {
    let problem = st.store.problem(req.action.problem_id())?;
    let key = headers.get(IDEMPOTENCY_HEADER).and_then(|v| v.to_str().ok()).map(|k| format!("one-shot:{k}"));
    idempotent(&st, &headers, "one-shot", async {
        let model_version = st.store.model_version(&problem.mission_id)?;
        let kind = RequestKind::OneShot {
            action: req.action.clone(),
        };
        let request_id = st.store.submit(&problem.mission_id, model_version, kind, key.clone())?;
        Ok((StatusCode::ACCEPTED, SubmittedReply { request_id, model_version }))
    })
    .await
}

async fn problem(State(st): State<AppState>, Path(problem): Path<String>) -> ApiResult<Json<Problem>> {
    Ok(Json(st.store.problem(&problem)?))
}

async fn pool(State(st): State<AppState>, Path(problem): Path<String>) -> ApiResult<Json<Vec<SolutionPoolEntry>>> {
    Ok(Json(st.store.pool(&problem)?))
}

async fn requests(State(st): State<AppState>) -> Json<Vec<AgentRequest>> {
    Json(st.store.requests())
}

async fn request(State(st): State<AppState>, Path(id): Path<u64>) -> ApiResult<Json<AgentRequest>> {
    Ok(Json(st.store.request(id)?))
}

async fn cancel(State(st): State<AppState>, Path(id): Path<u64>) -> ApiResult<Json<AgentRequest>> {
    Ok(Json(st.store.cancel_request(id)?))
}

async fn agents(State(st): State<AppState>) -> Json<Vec<AgentRecord>> {
    Json(st.store.agents())
}

// ---- queries ----

async fn robustness(
    State(st): State<AppState>,
    Path(mission): Path<String>,
    Payload(req): Payload<RobustnessRequest>,
) -> ApiResult<Json<RobustnessReport>> {
    let (model_version, file) = st.store.model(&mission, None)?;
    let live = st.store.mission(&mission).ok();
    blocking(move || {
        let workers = req.workers.unwrap_or(1).max(1);
        let state_version = live.as_ref().map(|s| s.version);
        let (model, schedule, conditional) = match (req.schedule, &live) {
            (Some(s), _) => (file.to_mission()?, s, false),
            (None, Some(state)) => (state.conditioned_model()?, state.conditioned_schedule()?, true),
            (None, None) => return Err(ApiError::bad_request("a schedule is required unless the mission is live")),
        };
        if req.samples == 0 && !req.exact {
            return Err(ApiError::bad_request("samples must be positive"));
        }
        let estimate = if req.exact {
            exact_robustness(&model, &schedule, DispatchProtocol::Asap)?
        } else {
            estimate_robustness_with_workers(&model, &schedule, DispatchProtocol::Asap, req.samples, req.seed, workers)?
        };
        Ok(Json(RobustnessReport {
            mission_id: mission,
            model_version,
            state_version,
            conditional,
            estimate,
        }))
    })
    .await
}

async fn trace(
    State(st): State<AppState>,
    Path(mission): Path<String>,
    Payload(req): Payload<TraceRequest>,
) -> ApiResult<Json<TraceReport>> {
    let (model_version, file) = st.store.model(&mission, None)?;
    let live = st.store.mission(&mission).ok();
    blocking(move || {
        let (model, schedule) = match (req.schedule, &live) {
            (Some(s), _) => (file.to_mission()?, s),
            (None, Some(state)) => (state.conditioned_model()?, state.conditioned_schedule()?),
            (None, None) => return Err(ApiError::bad_request("a schedule is required unless the mission is live")),
        };
        let trace = match req.seed {
            Some(seed) => dispatch(&model, &schedule, &sample_scenario(&model, seed, req.scenario), DispatchProtocol::Asap)?,
            None => deterministic_view(&model, &schedule)?,
        };
        Ok(Json(TraceReport {
            mission_id: mission,
            model_version,
            seed: req.seed,
            scenario: req.scenario,
            gantt: gantt::from_trace(&model, &trace),
            trace,
        }))
    })
    .await
}

// ---- progress ----

#[derive(Debug, Deserialize)]
struct RecordsQuery {
    #[serde(default)]
    after: u64,
    limit: Option<usize>,
}

/// Polling fallback for the progress stream.
async fn records(State(st): State<AppState>, Query(q): Query<RecordsQuery>) -> Json<Vec<LogRecord>> {
    let mut out = st.store.records_since(q.after);
    if let Some(l) = q.limit {
        out.truncate(l);
    }
    Json(out)
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    after: Option<u64>,
    client_id: Option<String>,
}

/// Server-sent events, one per store record, with the record's sequence
/// number as event id. A stream resumes after `after`, the `Last-Event-ID`
/// header, or the last record sent to `client_id`, in that order.
async fn stream(
    State(st): State<AppState>,
    Query(q): Query<StreamQuery>,
    headers: HeaderMap,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let last_event_id = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|s| s.parse().ok());
    let from = q
        .after
        .or(last_event_id)
        .or_else(|| q.client_id.as_deref().and_then(|c| st.session(c)))
        .unwrap_or(0);
    let poll = Duration::from_millis(st.stream_poll_ms.max(1));
    let init = (st, q.client_id, from, VecDeque::<LogRecord>::new());
    let events = futures::stream::unfold(init, move |(st, client, mut seq, mut buf)| async move {
        loop {
            if let Some(rec) = buf.pop_front() {
                seq = rec.seq;
                if let Some(c) = &client {
                    st.sessions.lock().unwrap_or_else(|e| e.into_inner()).insert(c.clone(), seq);
                }
                let kind = serde_json::to_value(&rec.event)
                    .ok()
                    .and_then(|v| v["event"].as_str().map(str::to_owned))
                    .unwrap_or_default();
                let event = Event::default()
                    .id(seq.to_string())
                    .event(kind)
                    .json_data(&rec)
                    .unwrap_or_else(|_| Event::default().comment("unserializable record"));
                return Some((Ok(event), (st, client, seq, buf)));
            }
            if st.closing.is_cancelled() {
                return None;
            }
            let fresh = st.store.records_since(seq);
            if fresh.is_empty() {
                tokio::time::sleep(poll).await;
            } else {
                buf.extend(fresh);
            }
        }
    });
    Sse::new(events).keep_alive(KeepAlive::default())
}
