//! Enforcement point and query-graph lifecycle.
//!
//! A request is decided by the policy store, its user query is merged with
//! the policy's pipeline, and the merged pipeline is deployed on the
//! engine. The gateway remembers which principal and which policy each
//! deployment belongs to, so it can refuse a second concurrent query on
//! the same stream and withdraw everything a policy spawned when that
//! policy changes.

mod reconstruct;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::engine::{Engine, EngineError, StreamHandle};
use crate::merge::{merge_graphs_for, MergeError};
use crate::policy::{
    obligations_to_graph, AccessRequest, LoadOutcome, Policy, PolicyError, PolicyStore, Verdict,
};
use crate::predicate::{Warning, WarningKind};
use crate::querygraph::{QueryGraph, SchemaCatalog};

pub use reconstruct::{
    reconstruct_from_avg_windows, reconstruct_from_windows, ReconstructError, WindowSeries,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatewayConfig {
    /// At most one active query per principal and stream.
    pub leak_guard: bool,
    /// Refuse to deploy when the merge raises a partial-result warning.
    pub strict_pr: bool,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            leak_guard: true,
            strict_pr: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RequestStatus {
    Granted,
    /// Deny or no applicable policy; the two are not distinguished.
    Denied,
    RejectedEscalation,
    WarnedNr,
    WarnedPrGranted,
    /// Partial result under strict mode; nothing deployed.
    WarnedPr,
    Busy,
    /// The user query could not be compiled against the stream.
    Invalid,
}

impl RequestStatus {
    pub const ALL: [RequestStatus; 8] = [
        RequestStatus::Granted,
        RequestStatus::Denied,
        RequestStatus::RejectedEscalation,
        RequestStatus::WarnedNr,
        RequestStatus::WarnedPrGranted,
        RequestStatus::WarnedPr,
        RequestStatus::Busy,
        RequestStatus::Invalid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RequestStatus::Granted => "granted",
            RequestStatus::Denied => "denied",
            RequestStatus::RejectedEscalation => "rejected-escalation",
            RequestStatus::WarnedNr => "warned-nr",
            RequestStatus::WarnedPrGranted => "warned-pr-granted",
            RequestStatus::WarnedPr => "warned-pr",
            RequestStatus::Busy => "busy",
            RequestStatus::Invalid => "invalid",
        }
    }

    pub fn parse(s: &str) -> Option<RequestStatus> {
        RequestStatus::ALL.into_iter().find(|st| st.name() == s)
    }

    pub fn is_granted(self) -> bool {
        matches!(
            self,
            RequestStatus::Granted | RequestStatus::WarnedPrGranted
        )
    }
}

impl fmt::Display for RequestStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Wall-clock time spent in each step of a request.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseTimings {
    pub decision: Duration,
    /// Compiling, merging and analyzing query graphs.
    pub merge: Duration,
    pub deploy: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestOutcome {
    pub status: RequestStatus,
    pub handle: Option<StreamHandle>,
    pub warning: Option<Warning>,
    /// Reason text for rejections and invalid queries.
    pub detail: Option<String>,
    pub timings: PhaseTimings,
}

impl RequestOutcome {
    fn plain(status: RequestStatus) -> RequestOutcome {
        RequestOutcome {
            status,
            handle: None,
            warning: None,
            detail: None,
            timings: PhaseTimings::default(),
        }
    }

    fn with_detail(status: RequestStatus, detail: impl Into<String>) -> RequestOutcome {
        RequestOutcome {
            detail: Some(detail.into()),
            ..RequestOutcome::plain(status)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("deployment failed: {0}")]
    Deploy(EngineError),
    #[error("stored policy no longer compiles: {0}")]
    Policy(PolicyError),
    #[error("unknown or released handle {0}")]
    UnknownHandle(String),
    #[error("handle {0} belongs to another principal")]
    NotOwner(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyChange {
    Removed,
    Modified,
}

#[derive(Debug, Clone)]
struct ActiveEntry {
    fingerprint: String,
    stream: String,
    policy_id: String,
    handle: StreamHandle,
    graph: QueryGraph,
}

/// Active deployments indexed by principal and stream, and by the policy
/// that granted them.
#[derive(Debug, Default)]
pub struct ActiveRegistry {
    by_principal: HashMap<(String, String), BTreeSet<String>>,
    by_policy: HashMap<String, BTreeSet<String>>,
    entries: HashMap<String, ActiveEntry>,
}

impl ActiveRegistry {
    fn insert(&mut self, graph_id: String, e: ActiveEntry) {
        self.by_principal
            .entry((e.fingerprint.clone(), e.stream.clone()))
            .or_default()
            .insert(graph_id.clone());
        self.by_policy
            .entry(e.policy_id.clone())
            .or_default()
            .insert(graph_id.clone());
        self.entries.insert(graph_id, e);
    }

    fn remove(&mut self, graph_id: &str) -> Option<ActiveEntry> {
        let e = self.entries.remove(graph_id)?;
        let key = (e.fingerprint.clone(), e.stream.clone());
        if let Some(set) = self.by_principal.get_mut(&key) {
            set.remove(graph_id);
            if set.is_empty() {
                self.by_principal.remove(&key);
            }
        }
        if let Some(set) = self.by_policy.get_mut(&e.policy_id) {
            set.remove(graph_id);
            if set.is_empty() {
                self.by_policy.remove(&e.policy_id);
            }
        }
        Some(e)
    }

    fn active_for(&self, fingerprint: &str, stream: &str) -> usize {
        self.by_principal
            .get(&(fingerprint.to_string(), stream.to_string()))
            .map_or(0, BTreeSet::len)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Both indexes describe exactly the set of entries.
    pub fn is_consistent(&self) -> bool {
        let ids: BTreeSet<&String> = self.entries.keys().collect();
        let from_principal: BTreeSet<&String> = self.by_principal.values().flatten().collect();
        let from_policy: BTreeSet<&String> = self.by_policy.values().flatten().collect();
        let count_p: usize = self.by_principal.values().map(BTreeSet::len).sum();
        let count_q: usize = self.by_policy.values().map(BTreeSet::len).sum();
        ids == from_principal && ids == from_policy && count_p == ids.len() && count_q == ids.len()
    }
}

pub struct Gateway {
    engine: Arc<Engine>,
    store: Arc<PolicyStore>,
    config: GatewayConfig,
    registry: Mutex<ActiveRegistry>,
    /// Bumped on every policy change, under the registry lock.
    policy_epoch: AtomicU64,
}

const MAX_DECISION_RETRIES: usize = 8;

impl Gateway {
    pub fn new(engine: Arc<Engine>, store: Arc<PolicyStore>, config: GatewayConfig) -> Gateway {
        Gateway {
            engine,
            store,
            config,
            registry: Mutex::new(ActiveRegistry::default()),
            policy_epoch: AtomicU64::new(0),
        }
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn store(&self) -> &Arc<PolicyStore> {
        &self.store
    }

    pub fn config(&self) -> GatewayConfig {
        self.config
    }

    fn registry(&self) -> MutexGuard<'_, ActiveRegistry> {
        self.registry.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Loads a policy; replacing an existing id withdraws what the old
    /// version spawned.
    pub fn load_policy(&self, policy: Policy) -> Result<LoadOutcome, PolicyError> {
        let out = self.store.load(policy, self.engine.as_ref())?;
        if out.replaced {
            self.on_policy_change(&out.id, PolicyChange::Modified);
        } else {
            self.bump_epoch();
        }
        Ok(out)
    }

    /// Removes a policy and withdraws its deployments; `None` if unknown.
    pub fn remove_policy(&self, id: &str) -> Option<usize> {
        self.store.remove(id)?;
        Some(self.on_policy_change(id, PolicyChange::Removed))
    }

    fn bump_epoch(&self) {
        let _registry = self.registry();
        self.policy_epoch.fetch_add(1, Ordering::AcqRel);
    }

    /// Withdraws every deployment granted under `policy_id`.
    pub fn on_policy_change(&self, policy_id: &str, change: PolicyChange) -> usize {
        let mut registry = self.registry();
        self.policy_epoch.fetch_add(1, Ordering::AcqRel);
        let ids: Vec<String> = registry
            .by_policy
            .get(policy_id)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default();
        for id in &ids {
            if let Err(e) = self.engine.withdraw(id) {
                log::warn!("withdrawing {id}: {e}");
            }
            registry.remove(id);
        }
        log::info!(
            "policy {policy_id} {change:?}: withdrew {} deployments",
            ids.len()
        );
        ids.len()
    }

    /// Runs the request workflow: decide, merge, check, deploy.
    pub fn handle_request(&self, req: &AccessRequest) -> Result<RequestOutcome, GatewayError> {
        let started = Instant::now();
        let mut last = None;
        for _ in 0..MAX_DECISION_RETRIES {
            match self.try_request(req, started)? {
                Attempt::Done(mut out) => {
                    out.timings.total = started.elapsed();
                    return Ok(out);
                }
                Attempt::PolicyChanged(out) => last = Some(out),
            }
        }
        // Policies kept changing underneath; report the last decision
        // without deploying anything.
        let mut out = last.expect("at least one attempt");
        out.timings.total = started.elapsed();
        Ok(out)
    }

    fn try_request(&self, req: &AccessRequest, started: Instant) -> Result<Attempt, GatewayError> {
        let epoch = self.policy_epoch.load(Ordering::Acquire);
        let mut timings = PhaseTimings::default();

        let decision = self.store.evaluate(req);
        timings.decision = started.elapsed();
        let done = |mut out: RequestOutcome, timings: PhaseTimings| {
            out.timings = timings;
            Ok(Attempt::Done(out))
        };
        if decision.verdict != Verdict::Permit {
            return done(RequestOutcome::plain(RequestStatus::Denied), timings);
        }
        let policy_id = decision.policy_id.clone().expect("permit names its policy");
        let Some(schema) = self.engine.schema(&req.resource) else {
            return done(RequestOutcome::plain(RequestStatus::Denied), timings);
        };

        // Checked again when registering; this early exit spares the merge.
        let fingerprint = req.fingerprint();
        if self.config.leak_guard && self.registry().active_for(&fingerprint, &req.resource) > 0 {
            return done(RequestOutcome::plain(RequestStatus::Busy), timings);
        }

        let merge_start = Instant::now();
        let user_graph = match &req.user_query {
            Some(q) if q.stream != req.resource => {
                return done(
                    RequestOutcome::with_detail(
                        RequestStatus::Invalid,
                        format!(
                            "query reads `{}` but request names `{}`",
                            q.stream, req.resource
                        ),
                    ),
                    timings,
                )
            }
            Some(q) => match q.to_graph(&schema) {
                Ok(g) => g,
                Err(e) => {
                    return done(
                        RequestOutcome::with_detail(RequestStatus::Invalid, e.to_string()),
                        timings,
                    )
                }
            },
            None => QueryGraph::identity(&req.resource),
        };
        let policy_graph =
            obligations_to_graph(&decision.obligations, &schema).map_err(GatewayError::Policy)?;
        let merged = match merge_graphs_for(&schema, &policy_graph, &user_graph) {
            Ok(m) => m,
            Err(MergeError::Escalation(e)) => {
                timings.merge = merge_start.elapsed();
                return done(
                    RequestOutcome {
                        warning: Some(Warning::new(WarningKind::EmptyResult, e.to_string())),
                        ..RequestOutcome::with_detail(
                            RequestStatus::RejectedEscalation,
                            e.to_string(),
                        )
                    },
                    timings,
                );
            }
            Err(e @ MergeError::StreamMismatch { .. }) => {
                return done(
                    RequestOutcome::with_detail(RequestStatus::Invalid, e.to_string()),
                    timings,
                )
            }
        };
        timings.merge = merge_start.elapsed();

        let warning = merged.warning;
        let graph = match merged.graph {
            Some(g) if warning.kind != WarningKind::EmptyResult => g,
            _ => {
                return done(
                    RequestOutcome {
                        warning: Some(warning),
                        ..RequestOutcome::plain(RequestStatus::WarnedNr)
                    },
                    timings,
                )
            }
        };
        let partial = warning.kind == WarningKind::PartialResult;
        if partial && self.config.strict_pr {
            return done(
                RequestOutcome {
                    warning: Some(warning),
                    ..RequestOutcome::plain(RequestStatus::WarnedPr)
                },
                timings,
            );
        }

        let mut registry = self.registry();
        if self.config.leak_guard && registry.active_for(&fingerprint, &req.resource) > 0 {
            return done(RequestOutcome::plain(RequestStatus::Busy), timings);
        }
        if self.policy_epoch.load(Ordering::Acquire) != epoch {
            drop(registry);
            return Ok(Attempt::PolicyChanged(RequestOutcome::plain(
                RequestStatus::Denied,
            )));
        }
        let deploy_start = Instant::now();
        let handle = self.engine.deploy(&graph).map_err(GatewayError::Deploy)?;
        timings.deploy = deploy_start.elapsed();
        registry.insert(
            handle.graph_id().to_string(),
            ActiveEntry {
                fingerprint,
                stream: req.resource.clone(),
                policy_id,
                handle: handle.clone(),
                graph,
            },
        );
        drop(registry);

        let status = if partial {
            RequestStatus::WarnedPrGranted
        } else {
            RequestStatus::Granted
        };
        done(
            RequestOutcome {
                status,
                handle: Some(handle),
                warning: (!warning.is_none()).then_some(warning),
                detail: None,
                timings,
            },
            timings,
        )
    }

    /// Withdraws a deployment owned by the principal of `credentials`.
    pub fn release(
        &self,
        handle: &StreamHandle,
        credentials: &AccessRequest,
    ) -> Result<(), GatewayError> {
        let mut registry = self.registry();
        let entry = registry
            .entries
            .get(handle.graph_id())
            .filter(|e| &e.handle == handle)
            .ok_or_else(|| GatewayError::UnknownHandle(handle.to_string()))?;
        if entry.fingerprint != credentials.fingerprint() {
            return Err(GatewayError::NotOwner(handle.to_string()));
        }
        registry.remove(handle.graph_id());
        self.engine
            .withdraw(handle.graph_id())
            .map_err(GatewayError::Deploy)
    }

    pub fn is_live(&self, handle: &StreamHandle) -> bool {
        self.engine.is_live(handle)
    }

    /// The merged pipeline behind an active handle.
    pub fn deployed_graph(&self, handle: &StreamHandle) -> Option<QueryGraph> {
        self.registry()
            .entries
            .get(handle.graph_id())
            .filter(|e| &e.handle == handle)
            .map(|e| e.graph.clone())
    }

    pub fn active_count(&self) -> usize {
        self.registry().len()
    }

    /// Registry indexes agree with each other and every entry is live.
    pub fn registry_consistent(&self) -> bool {
        let registry = self.registry();
        registry.is_consistent()
            && registry
                .entries
                .values()
                .all(|e| self.engine.is_live(&e.handle))
    }
}

enum Attempt {
    Done(RequestOutcome),
    PolicyChanged(RequestOutcome),
}
