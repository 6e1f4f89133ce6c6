//! Client-side cache of granted stream handles.
//!
//! Only handles are cached, never tuples. Every hit is checked for
//! liveness before it is served, so a handle withdrawn after a policy
//! change is never handed out again.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::engine::StreamHandle;
use crate::gateway::{Gateway, GatewayError, PhaseTimings, RequestOutcome};
use crate::policy::AccessRequest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CacheStatus {
    Hit,
    Miss,
}

impl CacheStatus {
    pub fn name(self) -> &'static str {
        match self {
            CacheStatus::Hit => "hit",
            CacheStatus::Miss => "miss",
        }
    }

    pub fn parse(s: &str) -> Option<CacheStatus> {
        match s {
            "hit" => Some(CacheStatus::Hit),
            "miss" => Some(CacheStatus::Miss),
            _ => None,
        }
    }
}

impl fmt::Display for CacheStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("gateway unreachable: {0}")]
    Unreachable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// What the proxy needs from a gateway, local or remote.
pub trait GatewayBackend: Send + Sync {
    fn request(&self, req: &AccessRequest) -> Result<RequestOutcome, BackendError>;
    fn probe(&self, handle: &StreamHandle) -> Result<bool, BackendError>;
    fn release(&self, handle: &StreamHandle, req: &AccessRequest) -> Result<(), BackendError>;
}

impl GatewayBackend for Gateway {
    fn request(&self, req: &AccessRequest) -> Result<RequestOutcome, BackendError> {
        Ok(self.handle_request(req)?)
    }

    fn probe(&self, handle: &StreamHandle) -> Result<bool, BackendError> {
        Ok(self.is_live(handle))
    }

    fn release(&self, handle: &StreamHandle, req: &AccessRequest) -> Result<(), BackendError> {
        Ok(Gateway::release(self, handle, req)?)
    }
}

impl<T: GatewayBackend + ?Sized> GatewayBackend for Arc<T> {
    fn request(&self, req: &AccessRequest) -> Result<RequestOutcome, BackendError> {
        (**self).request(req)
    }

    fn probe(&self, handle: &StreamHandle) -> Result<bool, BackendError> {
        (**self).probe(handle)
    }

    fn release(&self, handle: &StreamHandle, req: &AccessRequest) -> Result<(), BackendError> {
        (**self).release(handle, req)
    }
}

#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub key: String,
    pub resource: String,
    pub handle: StreamHandle,
    /// The gateway's answer at insertion, replayed on hits.
    pub outcome: RequestOutcome,
    pub inserted_at: Instant,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProxyConfig {
    /// Entries older than this are dropped instead of probed.
    pub ttl: Option<Duration>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProxyStats {
    pub hits: u64,
    pub misses: u64,
    /// Hits rejected because the probe found the handle dead.
    pub dead_evictions: u64,
}

pub struct Proxy<B> {
    backend: B,
    config: ProxyConfig,
    cache: RwLock<HashMap<String, Arc<CacheEntry>>>,
    hits: AtomicU64,
    misses: AtomicU64,
    dead: AtomicU64,
}

impl<B: GatewayBackend> Proxy<B> {
    pub fn new(backend: B) -> Proxy<B> {
        Proxy::with_config(backend, ProxyConfig::default())
    }

    pub fn with_config(backend: B, config: ProxyConfig) -> Proxy<B> {
        Proxy {
            backend,
            config,
            cache: RwLock::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            dead: AtomicU64::new(0),
        }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    fn lookup(&self, key: &str) -> Option<Arc<CacheEntry>> {
        self.cache
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(key)
            .cloned()
    }

    /// Removes `key` only if it still maps to `handle`.
    fn evict(&self, key: &str, handle: &StreamHandle) {
        let mut cache = self.cache.write().unwrap_or_else(|e| e.into_inner());
        if cache.get(key).is_some_and(|e| &e.handle == handle) {
            cache.remove(key);
        }
    }

    pub fn proxy_request(
        &self,
        req: &AccessRequest,
    ) -> Result<(RequestOutcome, CacheStatus), BackendError> {
        let started = Instant::now();
        let key = req.canonical_key();
        if let Some(entry) = self.lookup(&key) {
            let expired = self
                .config
                .ttl
                .is_some_and(|ttl| entry.inserted_at.elapsed() > ttl);
            if !expired && self.backend.probe(&entry.handle)? {
                self.hits.fetch_add(1, Ordering::Relaxed);
                let mut out = entry.outcome.clone();
                out.timings = PhaseTimings {
                    total: started.elapsed(),
                    ..PhaseTimings::default()
                };
                return Ok((out, CacheStatus::Hit));
            }
            if !expired {
                self.dead.fetch_add(1, Ordering::Relaxed);
                log::debug!("cached handle {} is dead; refetching", entry.handle);
            }
            self.evict(&key, &entry.handle);
        }

        self.misses.fetch_add(1, Ordering::Relaxed);
        let out = self.backend.request(req)?;
        if let (true, Some(handle)) = (out.status.is_granted(), &out.handle) {
            let entry = CacheEntry {
                key: key.clone(),
                resource: req.resource.clone(),
                handle: handle.clone(),
                outcome: out.clone(),
                inserted_at: Instant::now(),
            };
            self.cache
                .write()
                .unwrap_or_else(|e| e.into_inner())
                .insert(key, Arc::new(entry));
        }
        Ok((out, CacheStatus::Miss))
    }

    /// Releases through the backend and forgets any entry for the handle.
    pub fn release(&self, handle: &StreamHandle, req: &AccessRequest) -> Result<(), BackendError> {
        self.invalidate(|e| &e.handle == handle);
        self.backend.release(handle, req)
    }

    pub fn probe(&self, handle: &StreamHandle) -> Result<bool, BackendError> {
        self.backend.probe(handle)
    }

    /// Evicts every entry matching `pred`; returns how many went.
    pub fn invalidate(&self, mut pred: impl FnMut(&CacheEntry) -> bool) -> usize {
        let mut cache = self.cache.write().unwrap_or_else(|e| e.into_inner());
        let before = cache.len();
        cache.retain(|_, e| !pred(e));
        before - cache.len()
    }

    pub fn invalidate_resource(&self, resource: &str) -> usize {
        self.invalidate(|e| e.resource == resource)
    }

    pub fn len(&self) -> usize {
        self.cache.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> ProxyStats {
        ProxyStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            dead_evictions: self.dead.load(Ordering::Relaxed),
        }
    }
}
