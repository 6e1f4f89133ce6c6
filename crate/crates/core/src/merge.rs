//! Merging a policy pipeline with a user pipeline.
//!
//! The merged pipeline never shows the user more than the policy pipeline
//! would: filters are conjoined, maps intersected, and a user window must be
//! at least as coarse as the policy window. Each per-operator merge also
//! yields an NR/PR verdict.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::predicate::{
    analyze_merge_advisory, implies, CmpOp, Literal, Predicate, SimpleExpression, Warning,
    WarningKind, DEFAULT_DISJUNCT_CAP,
};
use crate::querygraph::{
    validate_graph, FieldType, FilterOp, MapOp, QueryGraph, Schema, WindowAggOp, WindowType,
};

/// Ways a user query would receive finer-grained data than its policy allows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Escalation {
    WindowType {
        policy: WindowType,
        user: WindowType,
    },
    FinerSize {
        policy: u32,
        user: u32,
    },
    FinerStep {
        policy: u32,
        user: u32,
    },
    /// The user filter tests an attribute the policy map hides.
    HiddenAttribute(String),
}

impl fmt::Display for Escalation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Escalation::WindowType { policy, user } => {
                write!(
                    f,
                    "window type {user} differs from the permitted {policy} window"
                )
            }
            Escalation::FinerSize { policy, user } => {
                write!(
                    f,
                    "window size {user} is smaller than the permitted size {policy}"
                )
            }
            Escalation::FinerStep { policy, user } => {
                write!(
                    f,
                    "window step {user} is smaller than the permitted step {policy}"
                )
            }
            Escalation::HiddenAttribute(a) => {
                write!(f, "filter uses attribute `{a}` hidden by policy")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MergeError {
    #[error("privilege escalation: {0}")]
    Escalation(Escalation),
    #[error("policy graph reads `{policy}` but user graph reads `{user}`")]
    StreamMismatch { policy: String, user: String },
}

/// Outcome of a window merge that did not produce an operator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WindowConflict {
    Escalation(Escalation),
    /// No (attribute, function) pair is shared by both windows.
    NoCommonAggregates,
}

/// A merged pipeline and its verdict. `graph` is `None` exactly when the
/// verdict is NR.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedGraph {
    pub graph: Option<QueryGraph>,
    pub warning: Warning,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum BoundSide {
    Lower,
    Upper,
}

fn bound_side(s: &SimpleExpression) -> Option<BoundSide> {
    if !matches!(s.literal, Literal::Number(_)) {
        return None;
    }
    match s.op {
        CmpOp::Gt | CmpOp::Ge => Some(BoundSide::Lower),
        CmpOp::Lt | CmpOp::Le => Some(BoundSide::Upper),
        _ => None,
    }
}

/// Is `a` at least as restrictive as `b` (same attribute, same side)?
fn tighter(a: &SimpleExpression, b: &SimpleExpression, side: BoundSide) -> bool {
    let (va, vb) = (
        a.literal.as_number().unwrap(),
        b.literal.as_number().unwrap(),
    );
    let strict = |s: &SimpleExpression| matches!(s.op, CmpOp::Gt | CmpOp::Lt);
    match side {
        BoundSide::Lower => va > vb || (va == vb && (strict(a) || !strict(b))),
        BoundSide::Upper => va < vb || (va == vb && (strict(a) || !strict(b))),
    }
}

fn flatten_and(p: Predicate, out: &mut Vec<Predicate>) {
    match p {
        Predicate::And(a, b) => {
            flatten_and(*a, out);
            flatten_and(*b, out);
        }
        other => out.push(other),
    }
}

/// Conjoins two filter conditions, then drops repeated conjuncts and keeps
/// only the tightest bound per attribute and direction.
pub fn merge_filters(policy: &FilterOp, user: &FilterOp) -> FilterOp {
    let mut items = Vec::new();
    flatten_and(policy.condition.clone(), &mut items);
    flatten_and(user.condition.clone(), &mut items);

    let mut kept: Vec<Predicate> = Vec::with_capacity(items.len());
    // (attribute, side) -> index in `kept` of the current tightest bound
    let mut bounds: BTreeMap<(String, bool), usize> = BTreeMap::new();
    for item in items {
        if kept.contains(&item) {
            continue;
        }
        if let Predicate::Leaf(s) = &item {
            if let Some(side) = bound_side(s) {
                let key = (s.attribute.clone(), side == BoundSide::Lower);
                if let Some(&at) = bounds.get(&key) {
                    let Predicate::Leaf(current) = &kept[at] else {
                        unreachable!()
                    };
                    if !tighter(current, s, side) {
                        kept[at] = item;
                    }
                    continue;
                }
                bounds.insert(key, kept.len());
            }
        }
        kept.push(item);
    }
    FilterOp::new(Predicate::all(kept).expect("at least one conjunct"))
}

/// Intersects the attribute sets; `None` when nothing is left.
pub fn merge_maps(policy: &MapOp, user: &MapOp) -> Option<MapOp> {
    MapOp::new(policy.attributes().intersection(user.attributes()).cloned()).ok()
}

/// NR when no attribute survives, PR when the user asked for attributes the
/// policy hides, None otherwise.
pub fn map_verdict(policy: &MapOp, user: &MapOp) -> Warning {
    let hidden: Vec<&str> = user
        .attributes()
        .difference(policy.attributes())
        .map(String::as_str)
        .collect();
    if hidden.len() == user.attributes().len() {
        Warning::new(
            WarningKind::EmptyResult,
            "none of the requested attributes is visible under the policy",
        )
    } else if !hidden.is_empty() {
        Warning::new(
            WarningKind::PartialResult,
            format!(
                "attributes hidden by policy are dropped: {}",
                hidden.join(",")
            ),
        )
    } else {
        Warning::none()
    }
}

/// Merges window aggregations. The user window must have the policy's type
/// and be at least as coarse in size and step; the result takes the user's
/// shape and the shared (attribute, function) pairs.
pub fn merge_windows(
    policy: &WindowAggOp,
    user: &WindowAggOp,
) -> Result<WindowAggOp, WindowConflict> {
    if policy.window_type() != user.window_type() {
        return Err(WindowConflict::Escalation(Escalation::WindowType {
            policy: policy.window_type(),
            user: user.window_type(),
        }));
    }
    if policy.size() > user.size() {
        return Err(WindowConflict::Escalation(Escalation::FinerSize {
            policy: policy.size(),
            user: user.size(),
        }));
    }
    if policy.step() > user.step() {
        return Err(WindowConflict::Escalation(Escalation::FinerStep {
            policy: policy.step(),
            user: user.step(),
        }));
    }
    let shared: BTreeMap<String, _> = user
        .aggs()
        .iter()
        .filter(|(a, f)| policy.aggs().get(*a) == Some(f))
        .map(|(a, f)| (a.clone(), *f))
        .collect();
    user.with_aggs(shared)
        .map_err(|_| WindowConflict::NoCommonAggregates)
}

/// Aggregate-set verdict for two compatible windows: NR if some attribute is
/// aggregated by different functions, None if every user pair is in the
/// policy, PR otherwise.
pub fn window_verdict(policy: &WindowAggOp, user: &WindowAggOp) -> Warning {
    let clashes: Vec<String> = user
        .aggs()
        .iter()
        .filter_map(|(a, f)| match policy.aggs().get(a) {
            Some(pf) if pf != f => Some(format!("{f}({a}) vs permitted {pf}({a})")),
            _ => None,
        })
        .collect();
    if !clashes.is_empty() {
        return Warning::new(
            WarningKind::EmptyResult,
            format!("conflicting aggregate functions: {}", clashes.join(", ")),
        );
    }
    let missing: Vec<String> = user
        .aggs()
        .iter()
        .filter(|(a, _)| !policy.aggs().contains_key(*a))
        .map(|(a, f)| format!("{f}({a})"))
        .collect();
    if missing.is_empty() {
        Warning::none()
    } else {
        Warning::new(
            WarningKind::PartialResult,
            format!(
                "aggregates not permitted by policy are dropped: {}",
                missing.join(",")
            ),
        )
    }
}

/// Merges a policy pipeline with a user pipeline, operator by operator.
///
/// A missing user operator adopts the policy one; a missing policy operator
/// adopts the user one. The verdict is the worst of the per-operator verdicts.
pub fn merge_graphs(policy: &QueryGraph, user: &QueryGraph) -> Result<MergedGraph, MergeError> {
    merge_impl(policy, user, None)
}

/// [`merge_graphs`] plus schema-aware finishing: keeps the timestamp field a
/// time window needs, and turns an unexecutable result into NR.
pub fn merge_graphs_for(
    schema: &Schema,
    policy: &QueryGraph,
    user: &QueryGraph,
) -> Result<MergedGraph, MergeError> {
    merge_impl(policy, user, Some(schema))
}

fn nr(explanation: impl Into<String>) -> Warning {
    Warning::new(WarningKind::EmptyResult, explanation)
}

fn merge_impl(
    policy: &QueryGraph,
    user: &QueryGraph,
    schema: Option<&Schema>,
) -> Result<MergedGraph, MergeError> {
    if policy.source != user.source {
        return Err(MergeError::StreamMismatch {
            policy: policy.source.clone(),
            user: user.source.clone(),
        });
    }
    let mut user_filter = user.filter.as_ref();
    if let (Some(pmap), Some(ufilter)) = (&policy.map, user_filter) {
        if let Some(hidden) = ufilter
            .condition
            .attributes()
            .into_iter()
            .find(|a| !pmap.attributes().contains(*a))
        {
            // A condition the policy filter already enforces reveals nothing.
            let redundant = policy.filter.as_ref().is_some_and(|p| {
                implies(&p.condition, &ufilter.condition, DEFAULT_DISJUNCT_CAP) == Ok(true)
            });
            if !redundant {
                return Err(MergeError::Escalation(Escalation::HiddenAttribute(
                    hidden.to_string(),
                )));
            }
            user_filter = None;
        }
    }
    let dropped_filter = if user_filter.is_none() {
        user.filter.as_ref()
    } else {
        None
    };

    let mut warning = Warning::none();

    let filter = match (&policy.filter, user_filter) {
        (Some(p), Some(u)) => {
            warning = warning.combine(analyze_merge_advisory(&p.condition, &u.condition));
            Some(merge_filters(p, u))
        }
        (Some(p), None) => {
            if let Some(u) = dropped_filter {
                warning = warning.combine(analyze_merge_advisory(&p.condition, &u.condition));
            }
            Some(p.clone())
        }
        (None, u) => u.cloned(),
    };

    let mut map = match (&policy.map, &user.map) {
        (Some(p), Some(u)) => {
            warning = warning.combine(map_verdict(p, u));
            match merge_maps(p, u) {
                Some(m) => Some(m),
                None => {
                    return Ok(MergedGraph {
                        graph: None,
                        warning,
                    })
                }
            }
        }
        (p, u) => p.clone().or_else(|| u.clone()),
    };

    let mut window = match (&policy.window, &user.window) {
        (Some(p), Some(u)) => match merge_windows(p, u) {
            Ok(w) => {
                warning = warning.combine(window_verdict(p, u));
                Some(w)
            }
            Err(WindowConflict::Escalation(e)) => return Err(MergeError::Escalation(e)),
            Err(WindowConflict::NoCommonAggregates) => {
                let w = window_verdict(p, u);
                let w = if w.kind == WarningKind::EmptyResult {
                    w
                } else {
                    nr("no requested aggregate is permitted by policy")
                };
                return Ok(MergedGraph {
                    graph: None,
                    warning: warning.combine(w),
                });
            }
        },
        (p, u) => p.clone().or_else(|| u.clone()),
    };

    // Aggregates can only read attributes that survive the projection.
    if let (Some(m), Some(w)) = (&map, &window) {
        let visible: BTreeMap<String, _> = w
            .aggs()
            .iter()
            .filter(|(a, _)| m.attributes().contains(*a))
            .map(|(a, f)| (a.clone(), *f))
            .collect();
        if visible.len() != w.aggs().len() {
            match w.with_aggs(visible) {
                Ok(w) => window = Some(w),
                Err(_) => {
                    return Ok(MergedGraph {
                        graph: None,
                        warning: warning
                            .combine(nr("no aggregated attribute survives the projection")),
                    })
                }
            }
        }
    }

    if let Some(schema) = schema {
        map = retain_timestamp(schema, policy, user, map, window.as_ref());
    }

    let graph = QueryGraph {
        source: policy.source.clone(),
        filter,
        map,
        window,
    };
    if let Some(schema) = schema {
        if let Err(e) = validate_graph(&graph, schema) {
            return Ok(MergedGraph {
                graph: None,
                warning: warning.combine(nr(format!("merged pipeline is not executable: {e}"))),
            });
        }
    }
    // An NR component (say, one clashing aggregate next to shared ones)
    // leaves an executable graph that would still emit; withhold it.
    Ok(MergedGraph {
        graph: (warning.kind != WarningKind::EmptyResult).then_some(graph),
        warning,
    })
}

/// A time window reads the first timestamp field of its input, so the merged
/// map keeps one if the maps being merged allowed it.
fn retain_timestamp(
    schema: &Schema,
    policy: &QueryGraph,
    user: &QueryGraph,
    map: Option<MapOp>,
    window: Option<&WindowAggOp>,
) -> Option<MapOp> {
    let (Some(m), Some(w)) = (&map, window) else {
        return map;
    };
    if w.window_type() != WindowType::Time {
        return map;
    }
    let is_ts = |a: &String| {
        schema
            .field(a)
            .is_some_and(|f| f.ty == FieldType::Timestamp)
    };
    if m.attributes().iter().any(is_ts) {
        return map;
    }
    let allowed: BTreeSet<&String> = match (&policy.map, &user.map) {
        (Some(p), _) => p.attributes().iter().collect(),
        (None, Some(u)) => u.attributes().iter().collect(),
        (None, None) => return map,
    };
    let ts = schema
        .fields()
        .iter()
        .find(|f| f.ty == FieldType::Timestamp && allowed.contains(&f.name));
    match ts {
        Some(f) => {
            let mut attrs = m.attributes().clone();
            attrs.insert(f.name.clone());
            MapOp::new(attrs).ok()
        }
        None => map,
    }
}
