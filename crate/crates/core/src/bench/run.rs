//! Replays a workload against the engine, the gateway or the proxy.

use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::engine::{Engine, EngineError, StreamHandle};
use crate::gateway::{Gateway, GatewayConfig, RequestOutcome};
use crate::policy::{AccessRequest, PolicyError, PolicyStore};
use crate::proxy::{BackendError, CacheStatus, GatewayBackend, Proxy};

use super::report::{Mode, Summary, TimingRecord};
use super::workload::Workload;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("direct mode needs an in-process engine")]
    DirectRemote,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub mode: Mode,
    pub records: Vec<TimingRecord>,
    /// One entry per policy, in load order.
    pub policy_load: Vec<Duration>,
    pub summary: Summary,
}

/// An engine with the workload's streams and a gateway holding its policies.
pub fn build_gateway(
    workload: &Workload,
    config: GatewayConfig,
) -> Result<(Arc<Gateway>, Vec<Duration>), BenchError> {
    let engine = Arc::new(Engine::default());
    for s in &workload.schemas {
        engine.register_stream(s.clone())?;
    }
    let gw = Gateway::new(engine, Arc::new(PolicyStore::new()), config);
    let mut loads = Vec::with_capacity(workload.policies.len());
    for p in &workload.policies {
        let t = Instant::now();
        gw.load_policy(p.clone())?;
        loads.push(t.elapsed());
    }
    Ok((Arc::new(gw), loads))
}

/// Runs the workload in-process.
pub fn run_benchmark(workload: &Workload, mode: Mode) -> Result<BenchReport, BenchError> {
    let (gw, policy_load) = build_gateway(workload, GatewayConfig::default())?;
    let records = match mode {
        Mode::Direct => run_direct(workload, gw.engine())?,
        Mode::Gateway => run_sequence(workload, gw.as_ref(), Mode::Gateway)?,
        Mode::Proxy => run_sequence(workload, gw.as_ref(), Mode::Proxy)?,
    };
    Ok(BenchReport {
        mode,
        summary: Summary::of(&records),
        records,
        policy_load,
    })
}

/// Deploys each requested graph directly and withdraws it again.
pub fn run_direct(workload: &Workload, engine: &Engine) -> Result<Vec<TimingRecord>, BenchError> {
    let mut out = Vec::with_capacity(workload.requests.len());
    for (index, r) in workload.requests.iter().enumerate() {
        let start = Instant::now();
        let handle = engine.deploy(&workload.policy_graphs[r.policy])?;
        let elapsed = start.elapsed();
        engine.withdraw_handle(&handle)?;
        out.push(TimingRecord {
            index,
            mode: Mode::Direct,
            policy: r.policy,
            status: "granted".into(),
            cache_hit: None,
            decision: Duration::ZERO,
            merge: Duration::ZERO,
            deploy: elapsed,
            total: elapsed,
        });
    }
    Ok(out)
}

/// Issues the request sequence through `backend`. In gateway mode each
/// granted handle is released after timing so the next request from the
/// same principal is not refused as busy; in proxy mode handles stay
/// cached.
pub fn run_sequence<B: GatewayBackend + ?Sized>(
    workload: &Workload,
    backend: &B,
    mode: Mode,
) -> Result<Vec<TimingRecord>, BenchError> {
    let proxy = (mode == Mode::Proxy).then(|| Proxy::new(BorrowedBackend(backend)));

    let mut out = Vec::with_capacity(workload.requests.len());
    for (index, r) in workload.requests.iter().enumerate() {
        let start = Instant::now();
        let (outcome, cache) = match (&proxy, mode) {
            (_, Mode::Direct) => return Err(BenchError::DirectRemote),
            (Some(p), _) => {
                let (o, c) = p.proxy_request(&r.request)?;
                (o, Some(c))
            }
            (None, _) => (backend.request(&r.request)?, None),
        };
        let total = start.elapsed();
        if mode == Mode::Gateway {
            if let (true, Some(h)) = (outcome.status.is_granted(), &outcome.handle) {
                backend.release(h, &r.request)?;
            }
        }
        out.push(TimingRecord {
            index,
            mode,
            policy: r.policy,
            status: outcome.status.to_string(),
            cache_hit: cache.map(|c| c == CacheStatus::Hit),
            decision: outcome.timings.decision,
            merge: outcome.timings.merge,
            deploy: outcome.timings.deploy,
            total,
        });
    }
    Ok(out)
}

struct BorrowedBackend<'a, B: ?Sized>(&'a B);

impl<B: GatewayBackend + ?Sized> GatewayBackend for BorrowedBackend<'_, B> {
    fn request(&self, req: &AccessRequest) -> Result<RequestOutcome, BackendError> {
        self.0.request(req)
    }

    fn probe(&self, handle: &StreamHandle) -> Result<bool, BackendError> {
        self.0.probe(handle)
    }

    fn release(&self, handle: &StreamHandle, req: &AccessRequest) -> Result<(), BackendError> {
        self.0.release(handle, req)
    }
}
