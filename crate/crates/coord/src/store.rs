//! The shared store: model versions, live missions, problems, solution
//! pools, agent requests and agent records.
//!
//! Every mutation is serialized through one lock and expressed as a batch of
//! [`LogEvent`]s. The batch is appended to the JSON-lines log (and synced)
//! before it is applied in memory, so an acknowledged change survives a
//! restart, and [`Store::open`] rebuilds exactly the same [`StoreState`] by
//! folding the log.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use rams_core::mission::{apply_edit, JournalRecord};
use rams_core::{
    MissionCommand, MissionError, MissionJournal, MissionModel, MissionState, ModelEdit, ModelError, ModelFile, Schedule,
    SearchConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, Millis};
use crate::records::{
    AgentRecord, AgentRequest, Capabilities, OneShotAction, OneShotResult, PollReply, Problem, Publication, RequestKind,
    RequestStatus, SolutionPoolEntry, DEFAULT_POOL_SIZE,
};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown mission `{0}`")]
    UnknownMission(String),
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("unknown request {0}")]
    UnknownRequest(u64),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("model version {got} is stale; current version is {current}")]
    StaleModel { current: u64, got: u64 },
    #[error("conflict at version {current}: {message}")]
    Conflict { current: u64, message: String },
    #[error("invalid payload: {0}")]
    Invalid(String),
    #[error(transparent)]
    Mission(#[from] MissionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("store log i/o: {0}")]
    Io(#[from] io::Error),
    #[error("store log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("store unreachable: {0}")]
    Unreachable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    /// An error reported by a remote store that has no local counterpart.
    #[error("{code}: {message}")]
    Remote { code: String, message: String },
}

impl StoreError {
    /// Stable machine-readable code, shared by the wire protocol and the
    /// HTTP service.
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::UnknownMission(_) => "unknown_mission",
            StoreError::UnknownProblem(_) => "unknown_problem",
            StoreError::UnknownRequest(_) => "unknown_request",
            StoreError::UnknownAgent(_) => "unknown_agent",
            StoreError::StaleModel { .. } => "stale_model",
            StoreError::Conflict { .. } => "conflict",
            StoreError::Invalid(_) | StoreError::Model(_) => "invalid",
            StoreError::Mission(_) => "mission_rejected",
            StoreError::Io(_) | StoreError::Log { .. } => "storage",
            StoreError::Unreachable(_) => "unreachable",
            StoreError::Protocol(_) => "protocol",
            StoreError::Remote { .. } => "remote",
        }
    }

    pub fn current_version(&self) -> Option<u64> {
        match self {
            StoreError::StaleModel { current, .. } | StoreError::Conflict { current, .. } => Some(*current),
            _ => None,
        }
    }

    /// Worth retrying after a pause.
    pub fn is_transient(&self) -> bool {
        matches!(self, StoreError::Unreachable(_))
    }
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub lease_ms: Millis,
    pub pool_size: usize,
    /// Pick a random pending one-shot on claim; otherwise the oldest.
    pub random_claims: bool,
    pub claim_seed: u64,
    /// Sync the log to disk before acknowledging.
    pub fsync: bool,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            lease_ms: 60_000,
            pool_size: DEFAULT_POOL_SIZE,
            random_claims: true,
            claim_seed: 0,
            fsync: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionRecord {
    pub journal: MissionJournal,
    pub state: MissionState,
}

/// Everything the store knows. Two stores that folded the same log compare
/// equal.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreState {
    /// Model versions per mission; version `k` is at index `k - 1`.
    pub models: BTreeMap<String, Vec<ModelFile>>,
    pub missions: BTreeMap<String, MissionRecord>,
    pub problems: BTreeMap<String, Problem>,
    pub pools: BTreeMap<String, Vec<SolutionPoolEntry>>,
    pub requests: BTreeMap<u64, AgentRequest>,
    pub idempotency: BTreeMap<String, u64>,
    pub agents: BTreeMap<String, AgentRecord>,
    /// Request ids whose effect was applied, in order.
    pub applied_effects: Vec<u64>,
    /// Remembered responses of idempotent service calls.
    pub responses: BTreeMap<String, serde_json::Value>,
    pub next_request_id: u64,
}

impl StoreState {
    fn model_version(&self, mission_id: &str) -> Option<u64> {
        self.models.get(mission_id).map(|v| v.len() as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    ModelPut { mission_id: String, version: u64, model: ModelFile },
    MissionApplied { mission_id: String, record: JournalRecord },
    ProblemDefined { problem: Problem },
    PoolInserted { entry: SolutionPoolEntry },
    AgentRegistered { record: AgentRecord },
    Heartbeat { agent_id: String, beat_at: Millis, assignment: Option<u64>, lease_expiry: Millis },
    RequestSubmitted { request: AgentRequest },
    RequestClaimed { id: u64, agent: String, lease_expiry: Millis },
    LeaseExpired { id: u64 },
    RequestFinished { id: u64, status: RequestStatus, effect: bool },
    ResponseRemembered { key: String, response: serde_json::Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub at: Millis,
    #[serde(flatten)]
    pub event: LogEvent,
}

fn apply_event(state: &mut StoreState, event: &LogEvent, pool_size: usize) {
    match event {
        LogEvent::ModelPut { mission_id, model, .. } => {
            state.models.entry(mission_id.clone()).or_default().push(model.clone());
        }
        LogEvent::MissionApplied { mission_id, record } => {
            let folded = match state.missions.remove(mission_id) {
                None => MissionJournal::create(record.payload.clone()).map(|(journal, state)| MissionRecord { journal, state }),
                Some(mut m) => m.journal.apply(&m.state, record.payload.clone()).map(|state| MissionRecord {
                    journal: m.journal,
                    state,
                }),
            };
            // events are only logged after the same command succeeded live
            let m = folded.expect("logged mission command replays");
            state.missions.insert(mission_id.clone(), m);
        }
        LogEvent::ProblemDefined { problem } => {
            state.problems.insert(problem.problem_id.clone(), problem.clone());
        }
        LogEvent::PoolInserted { entry } => {
            let pool = state.pools.entry(entry.problem_id.clone()).or_default();
            let at = pool.partition_point(|e| e.pool_cmp(entry).is_lt());
            pool.insert(at, entry.clone());
            pool.truncate(pool_size);
        }
        LogEvent::AgentRegistered { record } => {
            state.agents.insert(record.agent_id.clone(), record.clone());
        }
        LogEvent::Heartbeat {
            agent_id,
            beat_at,
            assignment,
            lease_expiry,
        } => {
            if let Some(a) = state.agents.get_mut(agent_id) {
                a.last_heartbeat = a.last_heartbeat.max(*beat_at);
                a.current_assignment = *assignment;
            }
            for r in state.requests.values_mut() {
                if let RequestStatus::Claimed { agent, lease_expiry: e } = &mut r.status {
                    if agent == agent_id {
                        *e = (*e).max(*lease_expiry);
                    }
                }
            }
        }
        LogEvent::RequestSubmitted { request } => {
            if let Some(k) = &request.idempotency_key {
                state.idempotency.insert(k.clone(), request.id);
            }
            state.next_request_id = state.next_request_id.max(request.id + 1);
            state.requests.insert(request.id, request.clone());
        }
        LogEvent::RequestClaimed { id, agent, lease_expiry } => {
            if let Some(r) = state.requests.get_mut(id) {
                r.status = RequestStatus::Claimed {
                    agent: agent.clone(),
                    lease_expiry: *lease_expiry,
                };
                r.claims += 1;
            }
        }
        LogEvent::LeaseExpired { id } => {
            if let Some(r) = state.requests.get_mut(id) {
                r.status = RequestStatus::Pending;
            }
        }
        LogEvent::RequestFinished { id, status, effect } => {
            if let Some(r) = state.requests.get_mut(id) {
                r.status = status.clone();
            }
            if *effect {
                state.applied_effects.push(*id);
            }
        }
        LogEvent::ResponseRemembered { key, response } => {
            state.responses.insert(key.clone(), response.clone());
        }
    }
}

struct Inner {
    state: StoreState,
    records: Vec<LogRecord>,
    log: Option<File>,
    rng: ChaCha8Rng,
    models: HashMap<String, Arc<MissionModel>>,
}

/// Events of one mutation plus a scratch copy of the state they lead to,
/// so later steps of the same mutation see earlier ones.
struct Batch {
    events: Vec<LogEvent>,
    state: StoreState,
    pool_size: usize,
}

impl Batch {
    fn push(&mut self, e: LogEvent) {
        apply_event(&mut self.state, &e, self.pool_size);
        self.events.push(e);
    }
}

pub struct Store {
    inner: Mutex<Inner>,
    config: StoreConfig,
    clock: Arc<dyn Clock>,
    path: Option<PathBuf>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("path", &self.path).field("config", &self.config).finish()
    }
}

fn read_log(path: &Path, pool_size: usize) -> Result<(StoreState, Vec<LogRecord>), StoreError> {
    let mut state = StoreState::default();
    let mut records = Vec::new();
    let Ok(file) = File::open(path) else {
        return Ok((state, records));
    };
    let mut reader = BufReader::new(file);
    let mut good_len = 0u64;
    let mut line = String::new();
    let mut n = 0;
    loop {
        line.clear();
        let read = reader.read_line(&mut line)?;
        if read == 0 {
            break;
        }
        n += 1;
        let complete = line.ends_with('\n');
        match serde_json::from_str::<LogRecord>(line.trim_end()) {
            Ok(r) if complete => {
                apply_event(&mut state, &r.event, pool_size);
                records.push(r);
                good_len += read as u64;
            }
            // a torn final write was never acknowledged
            _ if !complete => break,
            Ok(_) => unreachable!(),
            Err(e) => {
                return Err(StoreError::Log {
                    line: n,
                    message: e.to_string(),
                })
            }
        }
    }
    let f = OpenOptions::new().write(true).open(path)?;
    f.set_len(good_len)?;
    Ok((state, records))
}

impl Store {
    /// A store without a log file.
    pub fn in_memory(config: StoreConfig, clock: Arc<dyn Clock>) -> Self {
        Self::from_parts(StoreState::default(), Vec::new(), None, None, config, clock)
    }

    /// Open (or create) a store backed by the JSON-lines log at `path`.
    pub fn open(path: impl AsRef<Path>, config: StoreConfig, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let (state, records) = read_log(&path, config.pool_size)?;
        let mut log = OpenOptions::new().create(true).append(true).open(&path)?;
        log.seek(SeekFrom::End(0))?;
        Ok(Self::from_parts(state, records, Some(log), Some(path), config, clock))
    }

    fn from_parts(
        state: StoreState,
        records: Vec<LogRecord>,
        log: Option<File>,
        path: Option<PathBuf>,
        config: StoreConfig,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self {
            inner: Mutex::new(Inner {
                state,
                records,
                log,
                rng: ChaCha8Rng::seed_from_u64(config.claim_seed),
                models: HashMap::new(),
            }),
            config,
            clock,
            path,
        }
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn now(&self) -> Millis {
        self.clock.now_ms()
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn batch(&self, inner: &Inner) -> Batch {
        Batch {
            events: Vec::new(),
            state: inner.state.clone(),
            pool_size: self.config.pool_size,
        }
    }

    /// Write the batch durably, then make it visible.
    fn commit(&self, inner: &mut Inner, batch: Batch, at: Millis) -> Result<(), StoreError> {
        if batch.events.is_empty() {
            return Ok(());
        }
        let first = inner.records.last().map_or(1, |r| r.seq + 1);
        let records: Vec<LogRecord> = batch
            .events
            .into_iter()
            .enumerate()
            .map(|(k, event)| LogRecord {
                seq: first + k as u64,
                at,
                event,
            })
            .collect();
        if let Some(f) = inner.log.as_mut() {
            let mut text = String::new();
            for r in &records {
                text.push_str(&serde_json::to_string(r).expect("log record serializes"));
                text.push('\n');
            }
            f.write_all(text.as_bytes())?;
            f.flush()?;
            if self.config.fsync {
                f.sync_data()?;
            }
        }
        inner.state = batch.state;
        inner.records.extend(records);
        Ok(())
    }

    /// Return expired claims to pending.
    fn expire(&self, batch: &mut Batch, now: Millis) {
        let expired: Vec<u64> = batch
            .state
            .requests
            .values()
            .filter(|r| matches!(r.status, RequestStatus::Claimed { lease_expiry, .. } if lease_expiry <= now))
            .map(|r| r.id)
            .collect();
        for id in expired {
            batch.push(LogEvent::LeaseExpired { id });
        }
    }

    // ---- reads ----

    /// A consistent copy of the whole state.
    pub fn state(&self) -> StoreState {
        self.lock().state.clone()
    }

    /// Sequence number of the last logged event (0 when empty).
    pub fn seq(&self) -> u64 {
        self.lock().records.last().map_or(0, |r| r.seq)
    }

    /// Logged events after `seq`.
    pub fn records_since(&self, seq: u64) -> Vec<LogRecord> {
        let inner = self.lock();
        let from = inner.records.partition_point(|r| r.seq <= seq);
        inner.records[from..].to_vec()
    }

    pub fn model_version(&self, mission_id: &str) -> Result<u64, StoreError> {
        self.lock()
            .state
            .model_version(mission_id)
            .ok_or_else(|| StoreError::UnknownMission(mission_id.into()))
    }

    /// Model at `version`, or the latest.
    pub fn model(&self, mission_id: &str, version: Option<u64>) -> Result<(u64, ModelFile), StoreError> {
        let inner = self.lock();
        let versions = inner
            .state
            .models
            .get(mission_id)
            .ok_or_else(|| StoreError::UnknownMission(mission_id.into()))?;
        let v = version.unwrap_or(versions.len() as u64);
        let m = v
            .checked_sub(1)
            .and_then(|i| versions.get(i as usize))
            .ok_or_else(|| StoreError::Invalid(format!("mission `{mission_id}` has no model version {v}")))?;
        Ok((v, m.clone()))
    }

    pub fn missions(&self) -> Vec<String> {
        self.lock().state.models.keys().cloned().collect()
    }

    pub fn mission(&self, mission_id: &str) -> Result<MissionState, StoreError> {
        self.lock()
            .state
            .missions
            .get(mission_id)
            .map(|m| m.state.clone())
            .ok_or_else(|| StoreError::UnknownMission(mission_id.into()))
    }

    pub fn mission_journal(&self, mission_id: &str) -> Result<MissionJournal, StoreError> {
        self.lock()
            .state
            .missions
            .get(mission_id)
            .map(|m| m.journal.clone())
            .ok_or_else(|| StoreError::UnknownMission(mission_id.into()))
    }

    pub fn problem(&self, problem_id: &str) -> Result<Problem, StoreError> {
        self.lock()
            .state
            .problems
            .get(problem_id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownProblem(problem_id.into()))
    }

    pub fn pool(&self, problem_id: &str) -> Result<Vec<SolutionPoolEntry>, StoreError> {
        let inner = self.lock();
        if !inner.state.problems.contains_key(problem_id) {
            return Err(StoreError::UnknownProblem(problem_id.into()));
        }
        Ok(inner.state.pools.get(problem_id).cloned().unwrap_or_default())
    }

    pub fn request(&self, id: u64) -> Result<AgentRequest, StoreError> {
        self.lock()
            .state
            .requests
            .get(&id)
            .cloned()
            .ok_or(StoreError::UnknownRequest(id))
    }

    pub fn requests(&self) -> Vec<AgentRequest> {
        self.lock().state.requests.values().cloned().collect()
    }

    pub fn agents(&self) -> Vec<AgentRecord> {
        self.lock().state.agents.values().cloned().collect()
    }

    pub fn remembered(&self, key: &str) -> Option<serde_json::Value> {
        self.lock().state.responses.get(key).cloned()
    }

    // ---- models and missions ----

    /// Store a new model version. Uploading the latest version again is a
    /// no-op that returns its number.
    pub fn put_model(&self, mission_id: &str, model: ModelFile, expected: Option<u64>) -> Result<u64, StoreError> {
        model.to_mission()?;
        let mut inner = self.lock();
        let current = inner.state.model_version(mission_id).unwrap_or(0);
        if inner.state.missions.contains_key(mission_id) {
            return Err(StoreError::Conflict {
                current,
                message: "the mission is live; change its model with edits".into(),
            });
        }
        if let Some(e) = expected.filter(|&e| e != current) {
            return Err(StoreError::Conflict {
                current,
                message: format!("expected version {e}"),
            });
        }
        if current > 0 && inner.state.models[mission_id].last() == Some(&model) {
            return Ok(current);
        }
        let mut batch = self.batch(&inner);
        self.push_model(&mut batch, mission_id, model);
        self.commit(&mut inner, batch, self.now())?;
        Ok(current + 1)
    }

    fn push_model(&self, batch: &mut Batch, mission_id: &str, model: ModelFile) {
        let version = batch.state.model_version(mission_id).unwrap_or(0) + 1;
        batch.push(LogEvent::ModelPut {
            mission_id: mission_id.into(),
            version,
            model,
        });
        // running searches on older versions can no longer publish
        let superseded: Vec<u64> = batch
            .state
            .requests
            .values()
            .filter(|r| r.mission_id == mission_id && !r.status.is_final())
            .filter(|r| matches!(r.kind, RequestKind::RunningOptimize { .. }))
            .map(|r| r.id)
            .collect();
        for id in superseded {
            batch.push(LogEvent::RequestFinished {
                id,
                status: RequestStatus::Failed {
                    reason: format!("superseded by model version {version}"),
                },
                effect: false,
            });
        }
    }

    fn edit_in_batch(&self, batch: &mut Batch, mission_id: &str, edit: &ModelEdit) -> Result<u64, StoreError> {
        let current = batch
            .state
            .model_version(mission_id)
            .ok_or_else(|| StoreError::UnknownMission(mission_id.into()))?;
        if let Some(m) = batch.state.missions.get(mission_id) {
            let cmd = MissionCommand::EditModel { edit: edit.clone() };
            let next = m.state.apply(&cmd)?;
            let model = next.model.clone();
            batch.push(LogEvent::MissionApplied {
                mission_id: mission_id.into(),
                record: JournalRecord {
                    version: next.version,
                    at: next.now,
                    payload: cmd,
                },
            });
            self.push_model(batch, mission_id, model);
        } else {
            let model = apply_edit(&batch.state.models[mission_id][current as usize - 1], edit)?;
            self.push_model(batch, mission_id, model);
        }
        Ok(current + 1)
    }

    /// Apply a model edit, through the mission ledger when the mission is
    /// live. Returns the new model version.
    pub fn edit_model(&self, mission_id: &str, edit: &ModelEdit, expected: Option<u64>) -> Result<u64, StoreError> {
        let mut inner = self.lock();
        let current = inner
            .state
            .model_version(mission_id)
            .ok_or_else(|| StoreError::UnknownMission(mission_id.into()))?;
        if let Some(e) = expected.filter(|&e| e != current) {
            return Err(StoreError::Conflict {
                current,
                message: format!("expected version {e}"),
            });
        }
        let now = self.now();
        let mut batch = self.batch(&inner);
        let v = self.edit_in_batch(&mut batch, mission_id, edit)?;
        self.commit(&mut inner, batch, now)?;
        Ok(v)
    }

    /// Start executing the mission on its current model.
    pub fn create_mission(&self, mission_id: &str, schedule: Option<Schedule>, now: i64) -> Result<MissionState, StoreError> {
        let mut inner = self.lock();
        let versions = inner
            .state
            .models
            .get(mission_id)
            .ok_or_else(|| StoreError::UnknownMission(mission_id.into()))?;
        if inner.state.missions.contains_key(mission_id) {
            return Err(MissionError::AlreadyCreated.into());
        }
        let cmd = MissionCommand::Create {
            mission_id: mission_id.into(),
            model: versions.last().expect("at least one version").clone(),
            schedule,
            now,
        };
        let (journal, state) = MissionJournal::create(cmd)?;
        let mut batch = self.batch(&inner);
        batch.push(LogEvent::MissionApplied {
            mission_id: mission_id.into(),
            record: journal.records()[0].clone(),
        });
        self.commit(&mut inner, batch, self.now())?;
        Ok(state)
    }

    /// Apply one mission command (events, clock, edits, future).
    pub fn mission_command(&self, mission_id: &str, cmd: MissionCommand) -> Result<MissionState, StoreError> {
        if let MissionCommand::EditModel { edit } = &cmd {
            self.edit_model(mission_id, edit, None)?;
            return self.mission(mission_id);
        }
        let mut inner = self.lock();
        let m = inner
            .state
            .missions
            .get(mission_id)
            .ok_or_else(|| StoreError::UnknownMission(mission_id.into()))?;
        let next = m.state.apply(&cmd)?;
        if next.version == m.state.version {
            return Ok(next);
        }
        let mut batch = self.batch(&inner);
        batch.push(LogEvent::MissionApplied {
            mission_id: mission_id.into(),
            record: JournalRecord {
                version: next.version,
                at: next.now,
                payload: cmd,
            },
        });
        self.commit(&mut inner, batch, self.now())?;
        Ok(next)
    }

    // ---- problems and pools ----

    /// Register the optimization problem for the mission's current model
    /// (conditioned on its history when live). Idempotent.
    pub fn define_problem(&self, mission_id: &str, config: SearchConfig) -> Result<Problem, StoreError> {
        config.validate().map_err(StoreError::Invalid)?;
        let mut inner = self.lock();
        let mut batch = self.batch(&inner);
        let p = self.problem_in_batch(&mut batch, mission_id, config)?;
        self.commit(&mut inner, batch, self.now())?;
        Ok(p)
    }

    fn problem_in_batch(&self, batch: &mut Batch, mission_id: &str, config: SearchConfig) -> Result<Problem, StoreError> {
        let version = batch
            .state
            .model_version(mission_id)
            .ok_or_else(|| StoreError::UnknownMission(mission_id.into()))?;
        let (model, state_version) = match batch.state.missions.get(mission_id) {
            Some(m) => (m.state.conditioned_model_file(), Some(m.state.version)),
            None => (batch.state.models[mission_id][version as usize - 1].clone(), None),
        };
        let problem_id = Problem::make_id(mission_id, version, state_version, &config);
        if let Some(p) = batch.state.problems.get(&problem_id) {
            return Ok(p.clone());
        }
        model.to_mission()?;
        let problem = Problem {
            problem_id,
            mission_id: mission_id.into(),
            model_version: version,
            state_version,
            config,
            model,
        };
        batch.push(LogEvent::ProblemDefined {
            problem: problem.clone(),
        });
        Ok(problem)
    }

    fn problem_model(&self, inner: &mut Inner, problem: &Problem) -> Result<Arc<MissionModel>, StoreError> {
        if let Some(m) = inner.models.get(&problem.problem_id) {
            return Ok(m.clone());
        }
        let m = Arc::new(problem.model.to_mission()?);
        inner.models.insert(problem.problem_id.clone(), m.clone());
        Ok(m)
    }

    fn check_current(state: &StoreState, problem: &Problem) -> Result<(), StoreError> {
        let current = state.model_version(&problem.mission_id).unwrap_or(0);
        if current != problem.model_version {
            return Err(StoreError::StaleModel {
                current,
                got: problem.model_version,
            });
        }
        Ok(())
    }

    fn pool_accepts(&self, pool: &[SolutionPoolEntry], entry: &SolutionPoolEntry) -> bool {
        let key = entry.schedule_key();
        if pool.iter().any(|e| e.schedule_key() == key) {
            return false;
        }
        pool.len() < self.config.pool_size || pool.last().is_some_and(|w| entry.pool_cmp(w).is_lt())
    }

    /// Offer a schedule to a problem's pool. Accepted iff the pool has room
    /// or the entry beats its worst, and the schedule is not already there.
    pub fn publish(&self, agent_id: &str, problem_id: &str, publication: Publication) -> Result<bool, StoreError> {
        let mut inner = self.lock();
        let problem = inner
            .state
            .problems
            .get(problem_id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownProblem(problem_id.into()))?;
        Self::check_current(&inner.state, &problem)?;
        if !publication.rank_key.is_finite() {
            return Err(StoreError::Invalid("rank key must be finite".into()));
        }
        let model = self.problem_model(&mut inner, &problem)?;
        publication
            .schedule
            .validate(&model)
            .map_err(|e| StoreError::Invalid(e.to_string()))?;
        let now = self.now();
        let entry = SolutionPoolEntry {
            problem_id: problem_id.into(),
            schedule: publication.schedule,
            estimate: publication.estimate,
            producing_agent: agent_id.into(),
            created_at: now,
            rank_key: publication.rank_key,
            origin: publication.origin,
        };
        let empty = Vec::new();
        let pool = inner.state.pools.get(problem_id).unwrap_or(&empty);
        if !self.pool_accepts(pool, &entry) {
            return Ok(false);
        }
        let mut batch = self.batch(&inner);
        batch.push(LogEvent::PoolInserted { entry });
        self.commit(&mut inner, batch, now)?;
        Ok(true)
    }

    // ---- agents ----

    pub fn register(&self, agent_id: &str, capabilities: Capabilities) -> Result<AgentRecord, StoreError> {
        if agent_id.is_empty() {
            return Err(StoreError::Invalid("agent id is empty".into()));
        }
        let mut inner = self.lock();
        let now = self.now();
        let last = inner.state.agents.get(agent_id).map_or(0, |a| a.last_heartbeat);
        let record = AgentRecord {
            agent_id: agent_id.into(),
            last_heartbeat: last.max(now),
            capabilities,
            current_assignment: None,
        };
        let mut batch = self.batch(&inner);
        batch.push(LogEvent::AgentRegistered { record: record.clone() });
        self.commit(&mut inner, batch, now)?;
        Ok(record)
    }

    /// Record liveness and extend the agent's leases. Returns store time.
    pub fn heartbeat(&self, agent_id: &str, assignment: Option<u64>) -> Result<Millis, StoreError> {
        let mut inner = self.lock();
        if !inner.state.agents.contains_key(agent_id) {
            return Err(StoreError::UnknownAgent(agent_id.into()));
        }
        let now = self.now();
        let mut batch = self.batch(&inner);
        self.expire(&mut batch, now);
        batch.push(LogEvent::Heartbeat {
            agent_id: agent_id.into(),
            beat_at: now,
            assignment,
            lease_expiry: now + self.config.lease_ms,
        });
        self.commit(&mut inner, batch, now)?;
        Ok(now)
    }

    pub fn poll(&self, agent_id: &str) -> Result<PollReply, StoreError> {
        let inner = self.lock();
        if !inner.state.agents.contains_key(agent_id) {
            return Err(StoreError::UnknownAgent(agent_id.into()));
        }
        let now = self.now();
        let mut pending = 0;
        let mut running = Vec::new();
        for r in inner.state.requests.values() {
            match (&r.kind, &r.status) {
                (RequestKind::OneShot { .. }, RequestStatus::Pending) => pending += 1,
                (RequestKind::OneShot { .. }, RequestStatus::Claimed { lease_expiry, .. }) if *lease_expiry <= now => {
                    pending += 1
                }
                (RequestKind::RunningOptimize { problem_id }, RequestStatus::Pending) => running.push((r.id, problem_id.clone())),
                _ => {}
            }
        }
        Ok(PollReply {
            now,
            pending_one_shots: pending,
            running,
        })
    }

    // ---- requests ----

    /// Queue a request against the mission's current model version. A
    /// repeated idempotency key returns the first request's id.
    pub fn submit(
        &self,
        mission_id: &str,
        model_version: u64,
        kind: RequestKind,
        idempotency_key: Option<String>,
    ) -> Result<u64, StoreError> {
        let mut inner = self.lock();
        if let Some(id) = idempotency_key.as_ref().and_then(|k| inner.state.idempotency.get(k)) {
            return Ok(*id);
        }
        let current = inner
            .state
            .model_version(mission_id)
            .ok_or_else(|| StoreError::UnknownMission(mission_id.into()))?;
        if model_version != current {
            return Err(StoreError::StaleModel {
                current,
                got: model_version,
            });
        }
        let problem_id = match &kind {
            RequestKind::OneShot { action } => action.problem_id(),
            RequestKind::RunningOptimize { problem_id } => problem_id.as_str(),
        };
        let problem = inner
            .state
            .problems
            .get(problem_id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownProblem(problem_id.into()))?;
        if problem.mission_id != mission_id {
            return Err(StoreError::Invalid(format!("problem `{problem_id}` belongs to another mission")));
        }
        Self::check_current(&inner.state, &problem)?;
        let model = self.problem_model(&mut inner, &problem)?;
        match &kind {
            RequestKind::OneShot {
                action: OneShotAction::Evaluate { schedule, .. },
            } => schedule.validate(&model).map_err(|e| StoreError::Invalid(e.to_string()))?,
            RequestKind::OneShot {
                action: OneShotAction::RemoveActivity { activity_id, .. },
            } => {
                let latest = &inner.state.models[mission_id][current as usize - 1];
                if latest.to_mission()?.activity(activity_id).is_none() {
                    return Err(StoreError::Invalid(format!("unknown activity `{activity_id}`")));
                }
            }
            RequestKind::RunningOptimize { .. } => {}
        }
        let now = self.now();
        let id = inner.state.next_request_id.max(1);
        let request = AgentRequest {
            id,
            mission_id: mission_id.into(),
            model_version,
            kind,
            status: RequestStatus::Pending,
            created_at: now,
            claims: 0,
            idempotency_key,
        };
        let mut batch = self.batch(&inner);
        batch.push(LogEvent::RequestSubmitted { request });
        self.commit(&mut inner, batch, now)?;
        Ok(id)
    }

    /// Claim one pending one-shot with a lease. At most one live claimant
    /// holds a request at any time.
    pub fn claim_one_shot(&self, agent_id: &str) -> Result<Option<AgentRequest>, StoreError> {
        let mut inner = self.lock();
        if !inner.state.agents.contains_key(agent_id) {
            return Err(StoreError::UnknownAgent(agent_id.into()));
        }
        let now = self.now();
        let mut batch = self.batch(&inner);
        self.expire(&mut batch, now);
        let pending: Vec<u64> = batch
            .state
            .requests
            .values()
            .filter(|r| matches!(r.kind, RequestKind::OneShot { .. }) && r.status == RequestStatus::Pending)
            .map(|r| r.id)
            .collect();
        let chosen = match pending.len() {
            0 => None,
            n if self.config.random_claims => Some(pending[inner.rng.random_range(0..n)]),
            _ => Some(pending[0]),
        };
        if let Some(id) = chosen {
            batch.push(LogEvent::RequestClaimed {
                id,
                agent: agent_id.into(),
                lease_expiry: now + self.config.lease_ms,
            });
        }
        let claimed = chosen.map(|id| batch.state.requests[&id].clone());
        self.commit(&mut inner, batch, now)?;
        Ok(claimed)
    }

    /// Report the outcome of a one-shot. The first report wins and applies
    /// the effect; later reports (for example from a claimant whose lease
    /// expired) return `false` and change nothing.
    pub fn complete_one_shot(
        &self,
        agent_id: &str,
        request_id: u64,
        outcome: Result<OneShotResult, String>,
    ) -> Result<bool, StoreError> {
        let mut inner = self.lock();
        let request = inner
            .state
            .requests
            .get(&request_id)
            .cloned()
            .ok_or(StoreError::UnknownRequest(request_id))?;
        let RequestKind::OneShot { action } = &request.kind else {
            return Err(StoreError::Invalid(format!("request {request_id} is not a one-shot")));
        };
        if request.status.is_final() {
            return Ok(false);
        }
        if request.claims == 0 {
            return Err(StoreError::Invalid(format!("request {request_id} was never claimed")));
        }
        let now = self.now();
        let mut batch = self.batch(&inner);
        let (status, effect) = match outcome {
            Err(reason) => (RequestStatus::Failed { reason }, false),
            Ok(result) => match self.one_shot_effect(&mut batch, &request, action, result, now) {
                Ok(result) => (RequestStatus::Done { result: Some(result) }, true),
                Err(e) => {
                    // discard partial effects, keep only the failure
                    batch = self.batch(&inner);
                    (RequestStatus::Failed { reason: e.to_string() }, false)
                }
            },
        };
        let _ = agent_id;
        batch.push(LogEvent::RequestFinished {
            id: request_id,
            status,
            effect,
        });
        self.commit(&mut inner, batch, now)?;
        Ok(true)
    }

    fn one_shot_effect(
        &self,
        batch: &mut Batch,
        request: &AgentRequest,
        action: &OneShotAction,
        result: OneShotResult,
        now: Millis,
    ) -> Result<OneShotResult, StoreError> {
        match (action, result) {
            (OneShotAction::Evaluate { .. }, r @ OneShotResult::Evaluated { .. }) => Ok(r),
            (OneShotAction::RemoveActivity { problem_id, activity_id }, OneShotResult::Rescored { entries, .. }) => {
                let old = batch
                    .state
                    .problems
                    .get(problem_id)
                    .cloned()
                    .ok_or_else(|| StoreError::UnknownProblem(problem_id.clone()))?;
                let current = batch.state.model_version(&request.mission_id).unwrap_or(0);
                if current != request.model_version {
                    return Err(StoreError::StaleModel {
                        current,
                        got: request.model_version,
                    });
                }
                let edit = ModelEdit::RemoveActivity {
                    activity_id: activity_id.clone(),
                };
                self.edit_in_batch(batch, &request.mission_id, &edit)?;
                let problem = self.problem_in_batch(batch, &request.mission_id, old.config)?;
                let model = problem.model.to_mission()?;
                let mut kept = Vec::new();
                for r in entries {
                    if r.schedule.validate(&model).is_err() || !r.rank_key.is_finite() {
                        continue;
                    }
                    let entry = SolutionPoolEntry {
                        problem_id: problem.problem_id.clone(),
                        schedule: r.schedule.clone(),
                        estimate: r.estimate.clone(),
                        producing_agent: format!("request-{}", request.id),
                        created_at: now,
                        rank_key: r.rank_key,
                        origin: None,
                    };
                    let pool = batch.state.pools.get(&problem.problem_id).cloned().unwrap_or_default();
                    if self.pool_accepts(&pool, &entry) {
                        batch.push(LogEvent::PoolInserted { entry });
                    }
                    kept.push(r);
                }
                Ok(OneShotResult::Rescored {
                    problem_id: Some(problem.problem_id),
                    entries: kept,
                })
            }
            _ => Err(StoreError::Invalid("result does not match the action".into())),
        }
    }

    /// Stop a running optimize or withdraw a one-shot that has not finished.
    pub fn cancel_request(&self, request_id: u64) -> Result<AgentRequest, StoreError> {
        let mut inner = self.lock();
        let r = inner
            .state
            .requests
            .get(&request_id)
            .cloned()
            .ok_or(StoreError::UnknownRequest(request_id))?;
        if r.status.is_final() {
            return Ok(r);
        }
        let status = match r.kind {
            RequestKind::RunningOptimize { .. } => RequestStatus::Done { result: None },
            RequestKind::OneShot { .. } => RequestStatus::Failed {
                reason: "cancelled".into(),
            },
        };
        let mut batch = self.batch(&inner);
        batch.push(LogEvent::RequestFinished {
            id: request_id,
            status,
            effect: false,
        });
        let out = batch.state.requests[&request_id].clone();
        self.commit(&mut inner, batch, self.now())?;
        Ok(out)
    }

    /// Keep the response of an idempotent call under `key`. The first
    /// remembered response wins.
    pub fn remember(&self, key: &str, response: serde_json::Value) -> Result<serde_json::Value, StoreError> {
        let mut inner = self.lock();
        if let Some(v) = inner.state.responses.get(key) {
            return Ok(v.clone());
        }
        let mut batch = self.batch(&inner);
        batch.push(LogEvent::ResponseRemembered {
            key: key.into(),
            response: response.clone(),
        });
        self.commit(&mut inner, batch, self.now())?;
        Ok(response)
    }
}
