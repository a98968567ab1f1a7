//! Service assembly: the store, in-process agents and the HTTP listener.

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::Router;
use rams_coord::net::TcpServer;
use rams_coord::{run_agent, AgentConfig, AgentReport, Clock, Store, StoreConfig, StoreError, SystemClock};
use rams_core::CancelToken;

use crate::routes;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Store log; in memory when unset.
    pub store_path: Option<PathBuf>,
    pub store: StoreConfig,
    /// Optimization agents run inside the service process.
    pub agents: usize,
    pub agent_seed: u64,
    pub agent_poll_ms: u64,
    pub agent_iterations: u64,
    /// How often progress streams look for new records.
    pub stream_poll_ms: u64,
    /// Where remote agents reach the store; not exposed when unset.
    pub agent_bind: Option<SocketAddr>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            store_path: None,
            store: StoreConfig::default(),
            agents: 2,
            agent_seed: 0,
            agent_poll_ms: 1_000,
            agent_iterations: 200,
            stream_poll_ms: 100,
            agent_bind: None,
        }
    }
}

/// State shared by all handlers.
#[derive(Clone)]
pub struct AppState {
    pub(crate) store: Arc<Store>,
    /// Last record delivered to each subscribed client.
    pub(crate) sessions: Arc<Mutex<HashMap<String, u64>>>,
    /// Serializes requests that carry an idempotency key.
    pub(crate) idempotency: Arc<tokio::sync::Mutex<()>>,
    pub(crate) agents: usize,
    pub(crate) stream_poll_ms: u64,
    /// Set on shutdown so open progress streams end.
    pub(crate) closing: CancelToken,
}

impl AppState {
    pub fn new(store: Arc<Store>) -> Self {
        Self {
            store,
            sessions: Arc::default(),
            idempotency: Arc::default(),
            agents: 0,
            stream_poll_ms: 100,
            closing: CancelToken::new(),
        }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    /// Last record a client has been sent, for resuming its stream.
    pub fn session(&self, client_id: &str) -> Option<u64> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner()).get(client_id).copied()
    }
}

/// A store with its in-process agents.
pub struct Service {
    state: AppState,
    stop: CancelToken,
    agents: Vec<JoinHandle<AgentReport>>,
    tcp: Option<TcpServer>,
}

impl Service {
    pub fn open(config: &ServiceConfig) -> Result<Self, StoreError> {
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        let store = match &config.store_path {
            Some(p) => Store::open(p, config.store.clone(), clock)?,
            None => Store::in_memory(config.store.clone(), clock),
        };
        let mut service = Self::with_store(Arc::new(store), config);
        if let Some(addr) = config.agent_bind {
            service.listen_for_agents(addr)?;
        }
        Ok(service)
    }

    /// Expose the store to remote agents over TCP.
    pub fn listen_for_agents(&mut self, addr: SocketAddr) -> Result<SocketAddr, StoreError> {
        let server = TcpServer::spawn(self.state.store.clone(), addr)?;
        let bound = server.addr();
        tracing::info!("agents connect to {bound}");
        if let Some(old) = self.tcp.replace(server) {
            old.shutdown();
        }
        Ok(bound)
    }

    pub fn with_store(store: Arc<Store>, config: &ServiceConfig) -> Self {
        let stop = CancelToken::new();
        let agents = (0..config.agents)
            .map(|k| {
                let store = store.clone();
                let stop = stop.clone();
                let agent = AgentConfig {
                    poll_interval_ms: config.agent_poll_ms,
                    iterations_per_round: config.agent_iterations,
                    ..AgentConfig::new(format!("local{k}"), config.agent_seed.wrapping_add(k as u64))
                };
                std::thread::spawn(move || {
                    let clock = store.clock().clone();
                    run_agent(&store, clock.as_ref(), &agent, &stop)
                })
            })
            .collect();
        let state = AppState {
            agents: config.agents,
            stream_poll_ms: config.stream_poll_ms,
            ..AppState::new(store)
        };
        Self {
            state,
            stop,
            agents,
            tcp: None,
        }
    }

    pub fn state(&self) -> &AppState {
        &self.state
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.state.store
    }

    pub fn router(&self) -> Router {
        routes::router(self.state.clone())
    }

    /// Stop the agents and collect their reports.
    pub fn shutdown(self) -> Vec<AgentReport> {
        self.state.closing.cancel();
        self.stop.cancel();
        if let Some(tcp) = self.tcp {
            tcp.shutdown();
        }
        self.agents.into_iter().filter_map(|h| h.join().ok()).collect()
    }
}

/// Serve until `shutdown` resolves, then stop the agents.
pub async fn serve(config: ServiceConfig, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    let service = Service::open(&config).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    let closing = service.state.closing.clone();
    let shutdown = async move {
        shutdown.await;
        closing.cancel();
    };
    axum::serve(listener, service.router()).with_graceful_shutdown(shutdown).await?;
    tokio::task::spawn_blocking(move || service.shutdown()).await.map_err(std::io::Error::other)?;
    Ok(())
}
