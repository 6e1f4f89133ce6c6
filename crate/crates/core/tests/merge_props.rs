mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use common::{graph, input, passing, predicate, run, schema};
use streamgate_core::merge::{merge_filters, merge_graphs_for, MergeError};
use streamgate_core::predicate::{sat_oracle, WarningKind};
use streamgate_core::querygraph::{validate_graph, FilterOp, QueryGraph, Tuple};

/// Projects `rows` (schema of `from`) onto the field names of `to`.
fn project(rows: &[Tuple], from: &QueryGraph, to: &QueryGraph) -> Vec<Tuple> {
    let (from, to) = (
        validate_graph(from, &schema()).unwrap(),
        validate_graph(to, &schema()).unwrap(),
    );
    let idx: Vec<usize> = to
        .fields()
        .iter()
        .map(|f| from.index_of(&f.name).unwrap())
        .collect();
    rows.iter()
        .map(|t| Tuple(idx.iter().map(|&i| t.0[i].clone()).collect()))
        .collect()
}

fn is_subsequence(small: &[Tuple], big: &[Tuple]) -> bool {
    let mut it = big.iter();
    small.iter().all(|t| it.any(|b| b == t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(384))]

    #[test]
    fn merged_graph_never_exceeds_policy(policy in graph(), user in graph(), rows in input(200)) {
        let merged = match merge_graphs_for(&schema(), &policy, &user) {
            Ok(m) => m,
            Err(MergeError::Escalation(_)) => return Ok(()),
            Err(e) => panic!("{e}"),
        };
        let Some(g) = merged.graph else {
            prop_assert_eq!(merged.warning.kind, WarningKind::EmptyResult);
            return Ok(());
        };
        prop_assert!(validate_graph(&g, &schema()).is_ok());

        // Attributes: nothing outside the policy map.
        if let Some(pm) = &policy.map {
            let gm = g.map.as_ref().expect("policy map kept");
            prop_assert!(gm.attributes().is_subset(pm.attributes()));
        }
        // Tuples: every row the merged filter admits, the policy filter admits.
        if policy.filter.is_some() {
            let admitted = passing(g.filter.as_ref(), &rows);
            prop_assert!(admitted.is_subset(&passing(policy.filter.as_ref(), &rows)));
        }
        // Windows: same kind, no finer, only permitted aggregates.
        if let Some(pw) = &policy.window {
            let gw = g.window.as_ref().expect("policy window kept");
            prop_assert_eq!(gw.window_type(), pw.window_type());
            prop_assert!(gw.size() >= pw.size() && gw.step() >= pw.step());
            for (a, f) in gw.aggs() {
                prop_assert_eq!(pw.aggs().get(a), Some(f));
            }
        }
        // Without windows the merged output is a projection of a
        // subsequence of the policy output.
        if policy.window.is_none() && g.window.is_none() {
            let out = run(&g, &rows);
            let allowed = project(&run(&policy, &rows), &policy, &g);
            prop_assert!(is_subsequence(&out, &allowed));
        }
    }

    #[test]
    fn merged_filter_equals_filtering_twice(p in predicate(4), u in predicate(4), rows in input(200)) {
        let merged = merge_filters(&FilterOp::new(p.clone()), &FilterOp::new(u.clone()));
        let once = run(&QueryGraph::identity("s").with_filter(merged.condition), &rows);
        let first = run(&QueryGraph::identity("s").with_filter(p), &rows);
        let twice = run(&QueryGraph::identity("s").with_filter(u), &first);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn merging_with_itself_is_idempotent(g in graph(), rows in input(120)) {
        if let Some(f) = &g.filter {
            prop_assume!(sat_oracle(&f.condition).satisfiable);
        }
        let merged = merge_graphs_for(&schema(), &g, &g).unwrap();
        prop_assert_eq!(merged.warning.kind, WarningKind::None, "{}", merged.warning.explanation);
        let m = merged.graph.unwrap();
        prop_assert_eq!(&m.map, &g.map);
        prop_assert_eq!(&m.window, &g.window);
        prop_assert_eq!(m.filter.is_some(), g.filter.is_some());
        prop_assert_eq!(run(&m, &rows), run(&g, &rows));
        let again = merge_graphs_for(&schema(), &m, &m).unwrap().graph.unwrap();
        prop_assert_eq!(again.canonical_text(), m.canonical_text());
    }

    #[test]
    fn empty_result_verdict_yields_no_tuples(policy in graph(), user in graph(), rows in input(200)) {
        let Ok(merged) = merge_graphs_for(&schema(), &policy, &user) else { return Ok(()) };
        if merged.warning.kind == WarningKind::EmptyResult {
            if let Some(g) = merged.graph {
                let out = run(&g, &rows);
                prop_assert!(out.is_empty(), "{} emitted {} tuples", g.canonical_text(), out.len());
            }
        }
    }
}

#[test]
fn merged_filter_keeps_only_tightest_bounds() {
    let p = streamgate_core::predicate::parse_predicate("a > 2 AND b < 5").unwrap();
    let u = streamgate_core::predicate::parse_predicate("a > 4 AND b < 7").unwrap();
    let merged = merge_filters(&FilterOp::new(p), &FilterOp::new(u));
    let leaves: BTreeSet<String> = merged
        .condition
        .leaves()
        .iter()
        .map(|s| s.to_string())
        .collect();
    assert_eq!(
        leaves,
        ["a > 4", "b < 5"].into_iter().map(String::from).collect()
    );
}
