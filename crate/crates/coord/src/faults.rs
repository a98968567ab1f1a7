//! Fault injection around any [`StoreApi`]: fixed round-trip latency and a
//! kill switch that makes the store unreachable from one agent.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use crate::api::StoreApi;
use crate::clock::{Clock, Millis};
use crate::records::{AgentRecord, AgentRequest, Capabilities, OneShotResult, PollReply, Problem, Publication, SolutionPoolEntry};
use crate::store::StoreError;

/// Delays every call by `latency_ms` of clock time before it reaches the
/// store.
pub struct Latency<S> {
    inner: S,
    clock: Arc<dyn Clock>,
    latency_ms: Millis,
}

impl<S: StoreApi> Latency<S> {
    pub fn new(inner: S, clock: Arc<dyn Clock>, latency_ms: Millis) -> Self {
        Self {
            inner,
            clock,
            latency_ms,
        }
    }

    fn wait(&self) {
        if self.latency_ms > 0 {
            self.clock.sleep_ms(self.latency_ms);
        }
    }
}

/// Cuts an agent off from the store once [`KillSwitch::kill`] is called.
pub struct Killable<S> {
    inner: S,
    switch: KillSwitch,
}

#[derive(Debug, Clone, Default)]
pub struct KillSwitch(Arc<AtomicBool>);

impl KillSwitch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn kill(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_killed(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

impl<S: StoreApi> Killable<S> {
    pub fn new(inner: S, switch: KillSwitch) -> Self {
        Self { inner, switch }
    }

    fn check(&self) -> Result<(), StoreError> {
        if self.switch.is_killed() {
            Err(StoreError::Unreachable("agent was killed".into()))
        } else {
            Ok(())
        }
    }
}

macro_rules! forward {
    ($ty:ident, $guard:ident) => {
        impl<S: StoreApi> StoreApi for $ty<S> {
            fn register(&self, agent_id: &str, capabilities: Capabilities) -> Result<AgentRecord, StoreError> {
                self.$guard()?;
                self.inner.register(agent_id, capabilities)
            }

            fn heartbeat(&self, agent_id: &str, assignment: Option<u64>) -> Result<Millis, StoreError> {
                self.$guard()?;
                self.inner.heartbeat(agent_id, assignment)
            }

            fn poll(&self, agent_id: &str) -> Result<PollReply, StoreError> {
                self.$guard()?;
                self.inner.poll(agent_id)
            }

            fn claim(&self, agent_id: &str) -> Result<Option<AgentRequest>, StoreError> {
                self.$guard()?;
                self.inner.claim(agent_id)
            }

            fn complete(
                &self,
                agent_id: &str,
                request_id: u64,
                outcome: Result<OneShotResult, String>,
            ) -> Result<bool, StoreError> {
                self.$guard()?;
                self.inner.complete(agent_id, request_id, outcome)
            }

            fn publish(&self, agent_id: &str, problem_id: &str, publication: Publication) -> Result<bool, StoreError> {
                self.$guard()?;
                self.inner.publish(agent_id, problem_id, publication)
            }

            fn fetch_model(&self, problem_id: &str) -> Result<Problem, StoreError> {
                self.$guard()?;
                self.inner.fetch_model(problem_id)
            }

            fn fetch_pool(&self, problem_id: &str) -> Result<Vec<SolutionPoolEntry>, StoreError> {
                self.$guard()?;
                self.inner.fetch_pool(problem_id)
            }
        }
    };
}

impl<S: StoreApi> Latency<S> {
    fn delay(&self) -> Result<(), StoreError> {
        self.wait();
        Ok(())
    }
}

forward!(Latency, delay);
forward!(Killable, check);
