//! Strategies and helpers shared by the property tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;

use streamgate_core::engine::{execute_graph, Engine};
use streamgate_core::gateway::{Gateway, GatewayConfig};
use streamgate_core::policy::{
    graph_to_obligations, AccessRequest, Effect, Policy, PolicyStore, Target,
};
use streamgate_core::predicate::{CmpOp, Decimal, Literal, Predicate};
use streamgate_core::querygraph::{
    AggFunc, FieldType, FilterOp, MapOp, QueryGraph, Schema, Tuple, Value, WindowAggOp, WindowType,
};

pub const OPS: [CmpOp; 6] = [
    CmpOp::Eq,
    CmpOp::Ne,
    CmpOp::Lt,
    CmpOp::Le,
    CmpOp::Gt,
    CmpOp::Ge,
];
pub const ATTRS: [&str; 3] = ["a", "b", "c"];
/// Literals are drawn from 0..=MAX_LIT.
pub const MAX_LIT: i64 = 6;

pub fn leaf() -> impl Strategy<Value = Predicate> {
    (0..ATTRS.len(), 0..OPS.len(), 0..=MAX_LIT)
        .prop_map(|(a, o, l)| Predicate::leaf(ATTRS[a], OPS[o], l))
}

/// AND/OR/NOT trees of at most `max_leaves` comparisons.
pub fn predicate(max_leaves: usize) -> impl Strategy<Value = Predicate> {
    leaf()
        .prop_recursive(4, max_leaves as u32, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Predicate::and(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Predicate::or(a, b)),
                inner.prop_map(Predicate::not),
            ]
        })
        .prop_filter("leaf budget", move |p| p.leaf_count() <= max_leaves)
}

pub fn conjunction(max_leaves: usize) -> impl Strategy<Value = Predicate> {
    prop::collection::vec(leaf(), 1..=max_leaves).prop_map(|v| Predicate::all(v).unwrap())
}

/// One representative of every region cut out by the literals 0..=MAX_LIT.
pub fn grid() -> Vec<Literal> {
    let mut out = vec![Literal::from(-1)];
    for i in 0..=MAX_LIT {
        out.push(Literal::from(i));
        out.push(Literal::from(format!("{i}.5").parse::<Decimal>().unwrap()));
    }
    out
}

/// Every assignment of grid values to `attrs`.
pub fn assignments(attrs: &[&str]) -> Vec<BTreeMap<String, Literal>> {
    let grid = grid();
    let mut out = vec![BTreeMap::new()];
    for a in attrs {
        out = out
            .into_iter()
            .flat_map(|env| {
                grid.iter().map(move |v| {
                    let mut env = env.clone();
                    env.insert(a.to_string(), v.clone());
                    env
                })
            })
            .collect();
    }
    out
}

pub fn holds(p: &Predicate, env: &BTreeMap<String, Literal>) -> bool {
    p.eval(&|a: &str| env.get(a))
}

/// Exhaustive satisfiability over the grid.
pub fn brute_sat(p: &Predicate) -> bool {
    let attrs: Vec<&str> = p.attributes().into_iter().collect();
    assignments(&attrs).iter().any(|env| holds(p, env))
}

// ---------------------------------------------------------------- graphs

pub fn schema() -> Schema {
    Schema::of(
        "s",
        &[
            ("ts", FieldType::Timestamp),
            ("a", FieldType::Int),
            ("b", FieldType::Double),
            ("c", FieldType::Int),
        ],
    )
    .unwrap()
}

fn agg_funcs() -> impl Strategy<Value = AggFunc> {
    prop::sample::select(AggFunc::ALL.to_vec())
}

/// Tuple-window pipelines over [`schema`]; always valid.
pub fn graph() -> impl Strategy<Value = QueryGraph> {
    let window = (
        1u32..=6,
        1u32..=6,
        prop::collection::btree_map(prop::sample::select(ATTRS.to_vec()), agg_funcs(), 1..=3),
    );
    (
        prop::option::of(predicate(4)),
        prop::option::of(prop::sample::subsequence(vec!["ts", "a", "b", "c"], 1..=4)),
        prop::option::weighted(0.6, window),
    )
        .prop_map(|(filter, map, window)| {
            let mut g = QueryGraph::identity("s");
            if let Some(f) = filter {
                g = g.with_filter(f);
            }
            let mut visible: Option<BTreeSet<&str>> = map.map(|m| m.into_iter().collect());
            if let Some((_, _, aggs)) = &window {
                if let Some(v) = visible.as_mut() {
                    v.extend(aggs.keys().copied());
                }
            }
            if let Some(v) = visible {
                g = g.with_map(MapOp::new(v).unwrap());
            }
            if let Some((size, step, aggs)) = window {
                let op = WindowAggOp::new(WindowType::Tuple, size, step.min(size), aggs).unwrap();
                g = g.with_window(op);
            }
            g
        })
}

/// Rows of [`schema`]; `ts` is the row index so rows can be identified.
pub fn input(max: usize) -> impl Strategy<Value = Vec<Tuple>> {
    prop::collection::vec((0..8i64, 0..16i64, 0..8i64), 0..=max).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (a, b, c))| {
                Tuple(vec![
                    Value::Timestamp(i as i64),
                    Value::Int(a),
                    Value::Double(b as f64 / 2.0),
                    Value::Int(c),
                ])
            })
            .collect()
    })
}

pub fn run(g: &QueryGraph, input: &[Tuple]) -> Vec<Tuple> {
    execute_graph(g, &schema(), input).unwrap()
}

/// Row indexes (the `ts` column) that pass `filter`; all rows if `None`.
pub fn passing(filter: Option<&FilterOp>, input: &[Tuple]) -> BTreeSet<i64> {
    let g = match filter {
        Some(f) => QueryGraph::identity("s").with_filter(f.condition.clone()),
        None => QueryGraph::identity("s"),
    };
    run(&g, input)
        .iter()
        .map(|t| match t.0[0] {
            Value::Timestamp(i) => i,
            _ => unreachable!(),
        })
        .collect()
}

// ---------------------------------------------------------------- gateway

pub fn policy_for(id: &str, role: &str, g: &QueryGraph) -> Policy {
    Policy {
        id: id.into(),
        target: Target {
            subjects: [("role".to_string(), role.to_string())]
                .into_iter()
                .collect(),
            resource: g.source.clone(),
            action: "subscribe".into(),
        },
        effect: Effect::Permit,
        obligations: graph_to_obligations(g),
    }
}

pub fn request(role: &str, user: &str) -> AccessRequest {
    AccessRequest::new([("role", role), ("user", user)], "s", "subscribe")
}

pub fn gateway(config: GatewayConfig) -> Arc<Gateway> {
    let engine = Arc::new(Engine::default());
    engine.register_stream(schema()).unwrap();
    Arc::new(Gateway::new(engine, Arc::new(PolicyStore::new()), config))
}
