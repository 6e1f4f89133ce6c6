//! Policy store and decision point.
//!
//! Policies match requests on exact resource and action plus a set of
//! required subject attributes. The first applicable policy in insertion
//! order decides; a Permit carries the obligations that describe the
//! pipeline the requester may see.

mod document;
mod obligation;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::{Arc, RwLock};

use thiserror::Error;

use crate::predicate::ParseError;
use crate::querygraph::{GraphError, QueryGraph, SchemaCatalog};

pub use document::{parse_obligations, parse_user_query, AggregationSpec, UserQueryDoc};
pub use obligation::{
    graph_to_obligations, obligations_to_graph, AssignmentRole, AttributeAssignment, DataType,
    Obligation, ObligationKind,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("unknown stream `{0}`")]
    UnknownStream(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("invalid obligation: {0}")]
    InvalidObligation(String),
    #[error("bad filter condition: {0}")]
    Condition(#[from] ParseError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Effect {
    Permit,
    Deny,
}

impl Effect {
    pub fn name(self) -> &'static str {
        match self {
            Effect::Permit => "Permit",
            Effect::Deny => "Deny",
        }
    }

    pub fn parse(s: &str) -> Option<Effect> {
        match s.trim() {
            s if s.eq_ignore_ascii_case("permit") => Some(Effect::Permit),
            s if s.eq_ignore_ascii_case("deny") => Some(Effect::Deny),
            _ => None,
        }
    }
}

/// Subject attributes a request must carry, plus the resource (stream
/// name) and action it must name exactly.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Target {
    pub subjects: BTreeMap<String, String>,
    pub resource: String,
    pub action: String,
}

impl Target {
    pub fn matches(&self, req: &AccessRequest) -> bool {
        self.resource == req.resource
            && self.action == req.action
            && self
                .subjects
                .iter()
                .all(|(k, v)| req.credentials.get(k) == Some(v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Policy {
    pub id: String,
    pub target: Target,
    pub effect: Effect,
    pub obligations: Vec<Obligation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessRequest {
    pub credentials: BTreeMap<String, String>,
    pub resource: String,
    pub action: String,
    pub user_query: Option<UserQueryDoc>,
}

impl AccessRequest {
    pub fn new<I, K, V>(
        credentials: I,
        resource: impl Into<String>,
        action: impl Into<String>,
    ) -> AccessRequest
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        AccessRequest {
            credentials: credentials
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
            resource: resource.into(),
            action: action.into(),
            user_query: None,
        }
    }

    pub fn with_query(mut self, q: UserQueryDoc) -> AccessRequest {
        self.user_query = Some(q);
        self
    }

    /// Canonical identity of the requester: sorted `key=value` pairs.
    pub fn fingerprint(&self) -> String {
        credential_fingerprint(&self.credentials)
    }
}

pub fn credential_fingerprint(credentials: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (i, (k, v)) in credentials.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        for (j, part) in [k, v].into_iter().enumerate() {
            if j > 0 {
                out.push('=');
            }
            for c in part.chars() {
                if matches!(c, ';' | '=' | '\\') {
                    out.push('\\');
                }
                out.push(c);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Permit,
    Deny,
    NotApplicable,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Permit => "Permit",
            Verdict::Deny => "Deny",
            Verdict::NotApplicable => "NotApplicable",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub verdict: Verdict,
    /// The deciding policy; `None` for NotApplicable.
    pub policy_id: Option<String>,
    /// Empty unless the verdict is Permit.
    pub obligations: Vec<Obligation>,
}

impl Decision {
    fn not_applicable() -> Decision {
        Decision {
            verdict: Verdict::NotApplicable,
            policy_id: None,
            obligations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadOutcome {
    pub id: String,
    /// A policy with the same id was replaced.
    pub replaced: bool,
}

type BucketKey = (String, String, Option<(String, String)>);

#[derive(Default)]
struct StoreInner {
    next_seq: u64,
    by_seq: BTreeMap<u64, Arc<Policy>>,
    seq_of: HashMap<String, u64>,
    buckets: HashMap<BucketKey, BTreeSet<u64>>,
}

/// Each policy sits in one bucket: its resource, action and first
/// required subject attribute (or none).
fn bucket_of(p: &Policy) -> BucketKey {
    (
        p.target.resource.clone(),
        p.target.action.clone(),
        p.target
            .subjects
            .iter()
            .next()
            .map(|(k, v)| (k.clone(), v.clone())),
    )
}

impl StoreInner {
    fn unlink(&mut self, seq: u64) -> Option<Arc<Policy>> {
        let p = self.by_seq.remove(&seq)?;
        let key = bucket_of(&p);
        if let Some(b) = self.buckets.get_mut(&key) {
            b.remove(&seq);
            if b.is_empty() {
                self.buckets.remove(&key);
            }
        }
        Some(p)
    }

    fn link(&mut self, seq: u64, p: Arc<Policy>) {
        self.buckets.entry(bucket_of(&p)).or_default().insert(seq);
        self.by_seq.insert(seq, p);
    }
}

/// Thread-safe policy store. Loads and removals are serialized; each
/// evaluation sees the store either before or after any given update.
#[derive(Default)]
pub struct PolicyStore {
    inner: RwLock<StoreInner>,
}

impl PolicyStore {
    pub fn new() -> PolicyStore {
        PolicyStore::default()
    }

    /// Validates `policy` against the resource's schema and stores it.
    /// A policy with the same id is replaced in place, keeping its rank.
    pub fn load(
        &self,
        policy: Policy,
        catalog: &dyn SchemaCatalog,
    ) -> Result<LoadOutcome, PolicyError> {
        let schema = catalog
            .schema(&policy.target.resource)
            .ok_or_else(|| PolicyError::UnknownStream(policy.target.resource.clone()))?;
        obligations_to_graph(&policy.obligations, &schema)?;

        let id = policy.id.clone();
        let mut inner = self.inner.write().unwrap_or_else(|e| e.into_inner());
        let (seq, replaced) = match inner.seq_of.get(&id) {
            Some(&seq) => {
                inner.unlink(seq);
                (seq, true)
            }
            None => {
                let seq = inner.next_seq;
                inner.next_seq += 1;
                inner.seq_of.insert(id.clone(), seq);
                (seq, false)
            }
        };
        inner.link(seq, Arc::new(policy));
        Ok(LoadOutcome { id, replaced })
    }

    /// Parses and loads a policy document.
    pub fn load_xml(
        &self,
        doc: &str,
        catalog: &dyn SchemaCatalog,
    ) -> Result<LoadOutcome, PolicyError> {
        self.load(Policy::from_xml(doc)?, catalog)
    }

    pub fn remove(&self, id: &str) -> Option<Policy> {
        let mut inner = self.inner.write().unwrap_or_else(|e| e.into_inner());
        let seq = inner.seq_of.remove(id)?;
        inner.unlink(seq).map(|p| (*p).clone())
    }

    pub fn get(&self, id: &str) -> Option<Policy> {
        let inner = self.inner.read().unwrap_or_else(|e| e.into_inner());
        let seq = inner.seq_of.get(id)?;
        inner.by_seq.get(seq).map(|p| (**p).clone())
    }

    pub fn len(&self) -> usize {
        self.inner
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .by_seq
            .len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Policy ids in insertion order.
    pub fn ids(&self) -> Vec<String> {
        let inner = self.inner.read().unwrap_or_else(|e| e.into_inner());
        inner.by_seq.values().map(|p| p.id.clone()).collect()
    }

    /// First-applicable evaluation.
    pub fn evaluate(&self, req: &AccessRequest) -> Decision {
        let inner = self.inner.read().unwrap_or_else(|e| e.into_inner());
        let mut candidates: Vec<u64> = Vec::new();
        let mut key: BucketKey = (req.resource.clone(), req.action.clone(), None);
        if let Some(b) = inner.buckets.get(&key) {
            candidates.extend(b);
        }
        for (k, v) in &req.credentials {
            key.2 = Some((k.clone(), v.clone()));
            if let Some(b) = inner.buckets.get(&key) {
                candidates.extend(b);
            }
        }
        candidates.sort_unstable();
        for seq in candidates {
            let p = &inner.by_seq[&seq];
            if p.target.matches(req) {
                return Decision {
                    verdict: match p.effect {
                        Effect::Permit => Verdict::Permit,
                        Effect::Deny => Verdict::Deny,
                    },
                    policy_id: Some(p.id.clone()),
                    obligations: match p.effect {
                        Effect::Permit => p.obligations.clone(),
                        Effect::Deny => Vec::new(),
                    },
                };
            }
        }
        Decision::not_applicable()
    }
}

/// Compiles the obligations of a Permit decision against `stream`'s schema.
pub fn decision_graph(
    decision: &Decision,
    catalog: &dyn SchemaCatalog,
    stream: &str,
) -> Result<QueryGraph, PolicyError> {
    let schema = catalog
        .schema(stream)
        .ok_or_else(|| PolicyError::UnknownStream(stream.to_string()))?;
    obligations_to_graph(&decision.obligations, &schema)
}
