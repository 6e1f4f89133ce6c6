//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fail.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicI64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use streamgate_core::bench::{generate_workload, run_benchmark, Mode, SequenceKind, WorkloadSpec};
use streamgate_core::engine::{execute_window, render_streamsql, Engine};
use streamgate_core::gateway::{
    reconstruct_from_windows, Gateway, GatewayConfig, RequestStatus, WindowSeries,
};
use streamgate_core::policy::{
    graph_to_obligations, AccessRequest, AggregationSpec, Effect, Policy, PolicyStore, Target,
    UserQueryDoc,
};
use streamgate_core::predicate::{
    analyze_merge, parse_predicate, sat_oracle, to_dnf, CmpOp, Decimal, Literal, Predicate,
    WarningKind,
};
use streamgate_core::querygraph::{
    validate_graph, AggFunc, FieldType, MapOp, QueryGraph, Schema, Tuple, Value, WindowAggOp,
    WindowType,
};

const C1_MAX_RUNTIME: Duration = Duration::from_millis(10);
const C4_PAIRS: usize = 10_000;
const C4_MAX_RUNTIME: Duration = Duration::from_secs(60);
const C6_STREAM_LEN: usize = 100;
const C7_TRIALS: usize = 100;
const C8_CASES: usize = 1_000;
const C8_MAX_INPUT: usize = 500;
const C9_MAX_RATIO: f64 = 2.0;
const C9_MAX_MEDIAN_US: f64 = 10_000.0;
const C10_MAX_HIT_FRACTION: f64 = 0.5;
const C10_MAX_RUNTIME: Duration = Duration::from_secs(300);

type Check = fn() -> Result<String, String>;

fn main() {
    let checks: [(&str, Check); 10] = [
        ("empty-result witnesses", c1_empty_result),
        ("partial-result verdict", c2_partial_result),
        ("dnf conjuncts", c3_dnf),
        ("verdicts agree with brute force", c4_oracle_agreement),
        ("rain query pipeline script", c5_rain_pipeline),
        (
            "window-sum reconstruction and leak guard",
            c6_reconstruction,
        ),
        ("revocation closes every handle", c7_revocation),
        ("streaming engine matches batch oracle", c8_engine_vs_batch),
        (
            "decision+merge overhead independent of policy count",
            c9_constant_overhead,
        ),
        ("proxy cache speedup", c10_cache_speedup),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {:>2}: {name} ({detail}; {secs:.2}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {:>2}: {name} ({detail}; {secs:.2}s)", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn p(s: &str) -> Predicate {
    parse_predicate(s).unwrap_or_else(|e| panic!("{s}: {e}"))
}

fn data(name: &str) -> String {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "data", name]
        .iter()
        .collect();
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------- 1, 2, 3

fn c1_empty_result() -> Result<String, String> {
    let started = Instant::now();
    let c1 = p("(a > 20 AND a < 30) OR NOT (a != 40)");
    let c2 = p("NOT (a >= 10) AND b = 20");
    let w = analyze_merge(&c1, &c2).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure(w.kind == WarningKind::EmptyResult, || {
        format!("verdict {}", w.kind)
    })?;
    let pairs: BTreeSet<(String, String)> = w
        .witnesses
        .iter()
        .map(|(x, y)| {
            let (x, y) = (x.to_string(), y.to_string());
            if x <= y {
                (x, y)
            } else {
                (y, x)
            }
        })
        .collect();
    for want in [("a < 10", "a = 40"), ("a < 10", "a > 20")] {
        let key = (want.0.to_string(), want.1.to_string());
        ensure(pairs.contains(&key), || {
            format!("missing pair {want:?} in {pairs:?}")
        })?;
    }
    ensure(elapsed < C1_MAX_RUNTIME, || format!("took {elapsed:?}"))?;
    Ok(format!("NR, {} witness pairs, {elapsed:?}", pairs.len()))
}

fn c2_partial_result() -> Result<String, String> {
    let w = analyze_merge(&p("a > 8"), &p("a > 5")).map_err(|e| e.to_string())?;
    ensure(w.kind == WarningKind::PartialResult, || {
        format!("verdict {}", w.kind)
    })?;
    Ok("PR".into())
}

fn c3_dnf() -> Result<String, String> {
    let (a, b, c, d, e) = (p("a = 1"), p("b = 2"), p("c = 3"), p("d = 4"), p("e = 5"));
    let expr = Predicate::and(Predicate::or(Predicate::and(a, b), c), Predicate::and(d, e));
    let dnf = to_dnf(&expr).map_err(|e| e.to_string())?;
    let got: BTreeSet<BTreeSet<String>> = dnf
        .disjuncts()
        .iter()
        .map(|conj| conj.iter().map(|s| s.attribute.clone()).collect())
        .collect();
    let want: BTreeSet<BTreeSet<String>> = [vec!["e", "d", "c"], vec!["e", "d", "b", "a"]]
        .into_iter()
        .map(|v| v.into_iter().map(String::from).collect())
        .collect();
    ensure(dnf.len() == 2 && got == want, || format!("got {got:?}"))?;
    Ok("{E,D,C} {E,D,B,A}".into())
}

// ---------------------------------------------------------------- 4

const ATTRS: [&str; 3] = ["a", "b", "c"];
const OPS: [CmpOp; 6] = [
    CmpOp::Eq,
    CmpOp::Ne,
    CmpOp::Lt,
    CmpOp::Le,
    CmpOp::Gt,
    CmpOp::Ge,
];

fn random_predicate(rng: &mut StdRng, leaves: usize) -> Predicate {
    if leaves == 1 {
        let leaf = Predicate::leaf(
            ATTRS[rng.random_range(0..ATTRS.len())],
            OPS[rng.random_range(0..OPS.len())],
            rng.random_range(0..10i64),
        );
        return if rng.random_bool(0.2) {
            Predicate::not(leaf)
        } else {
            leaf
        };
    }
    let left = rng.random_range(1..leaves);
    let (l, r) = (
        random_predicate(rng, left),
        random_predicate(rng, leaves - left),
    );
    let node = if rng.random_bool(0.5) {
        Predicate::and(l, r)
    } else {
        Predicate::or(l, r)
    };
    if rng.random_bool(0.15) {
        Predicate::not(node)
    } else {
        node
    }
}

/// Every region cut out by integer literals 0..=9 has a representative here.
fn grid() -> Vec<Literal> {
    let mut out = vec![Literal::from(-1)];
    for i in 0..10 {
        out.push(Literal::from(i));
        out.push(Literal::from(format!("{i}.5").parse::<Decimal>().unwrap()));
    }
    out.push(Literal::from(10));
    out
}

/// Calls `f` on every grid assignment of `attrs`; stops early when it returns true.
fn any_assignment(
    attrs: &[&str],
    grid: &[Literal],
    f: &mut impl FnMut(&BTreeMap<String, Literal>) -> bool,
) -> bool {
    let mut idx = vec![0usize; attrs.len()];
    loop {
        let env: BTreeMap<String, Literal> = attrs
            .iter()
            .zip(&idx)
            .map(|(a, &i)| (a.to_string(), grid[i].clone()))
            .collect();
        if f(&env) {
            return true;
        }
        let mut k = 0;
        loop {
            if k == idx.len() {
                return false;
            }
            idx[k] += 1;
            if idx[k] < grid.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

fn c4_oracle_agreement() -> Result<String, String> {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let grid = grid();
    let (mut nr, mut pr) = (0, 0);
    for i in 0..C4_PAIRS {
        let (pl, ul) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let policy = random_predicate(&mut rng, pl);
        let user = random_predicate(&mut rng, ul);
        let w = analyze_merge(&policy, &user).map_err(|e| format!("pair {i}: {e}"))?;
        let attrs: Vec<&str> = policy
            .attributes()
            .union(&user.attributes())
            .copied()
            .collect();
        let both = Predicate::and(policy.clone(), user.clone());
        let lost = Predicate::and(user.clone(), Predicate::not(policy.clone()));
        let brute =
            |q: &Predicate| any_assignment(&attrs, &grid, &mut |env| q.eval(&|a: &str| env.get(a)));
        match w.kind {
            WarningKind::EmptyResult => {
                nr += 1;
                ensure(!sat_oracle(&both).satisfiable && !brute(&both), || {
                    format!("NR but satisfiable: policy `{policy}` user `{user}`")
                })?;
            }
            WarningKind::PartialResult => {
                pr += 1;
                ensure(sat_oracle(&lost).satisfiable && brute(&lost), || {
                    format!("PR but nothing withheld: policy `{policy}` user `{user}`")
                })?;
            }
            WarningKind::None => {}
        }
        ensure(sat_oracle(&both).satisfiable == brute(&both), || {
            format!("oracles disagree on `{both}`")
        })?;
    }
    let elapsed = started.elapsed();
    ensure(nr > 0 && pr > 0, || {
        format!("degenerate sample: {nr} NR, {pr} PR")
    })?;
    ensure(elapsed < C4_MAX_RUNTIME, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{C4_PAIRS} pairs, {nr} NR, {pr} PR, 0 counterexamples"
    ))
}

// ---------------------------------------------------------------- 5

fn c5_rain_pipeline() -> Result<String, String> {
    let policy = Policy::from_xml(&data("lta_policy.xml")).map_err(|e| e.to_string())?;
    let query = UserQueryDoc::from_xml(&data("rain_query.xml")).map_err(|e| e.to_string())?;
    let weather = streamgate_core::bench::default_schemas()
        .into_iter()
        .find(|s| s.stream_name() == "weather")
        .expect("weather schema");
    let engine = Arc::new(Engine::default());
    engine
        .register_stream(weather.clone())
        .map_err(|e| e.to_string())?;
    let gw = Gateway::new(
        engine,
        Arc::new(PolicyStore::new()),
        GatewayConfig::default(),
    );
    gw.load_policy(policy).map_err(|e| e.to_string())?;
    let req = AccessRequest::new(
        [("role", "LTA"), ("user", "analyst")],
        "weather",
        "subscribe",
    )
    .with_query(query);
    let outcome = gw.handle_request(&req).map_err(|e| e.to_string())?;
    ensure(outcome.status.is_granted(), || {
        format!("status {}", outcome.status)
    })?;
    let graph = gw
        .deployed_graph(outcome.handle.as_ref().unwrap())
        .ok_or("no deployed graph")?;
    let script = render_streamsql(&graph, &weather).map_err(|e| e.to_string())?;
    for needle in ["rainrate > 50", "SIZE 10 ADVANCE 2 TUPLES", "avg(rainrate)"] {
        ensure(script.contains(needle), || {
            format!("script lacks `{needle}`:\n{script}")
        })?;
    }
    // Intersection rule: only the user's column survives the merged map.
    for absent in ["lastval", "samplingtime)", "windspeed)"] {
        ensure(!script.contains(absent), || {
            format!("script has `{absent}`:\n{script}")
        })?;
    }
    Ok(format!("status {}", outcome.status))
}

// ---------------------------------------------------------------- 6

fn sensor_schema() -> Schema {
    Schema::of(
        "sensor",
        &[("ts", FieldType::Timestamp), ("v", FieldType::Int)],
    )
    .unwrap()
}

fn open_policy(id: &str, stream: &str, graph: &QueryGraph) -> Policy {
    Policy {
        id: id.into(),
        target: Target {
            subjects: [("role".to_string(), "analyst".to_string())]
                .into_iter()
                .collect(),
            resource: stream.into(),
            action: "subscribe".into(),
        },
        effect: Effect::Permit,
        obligations: graph_to_obligations(graph),
    }
}

fn analyst(user: &str, stream: &str) -> AccessRequest {
    AccessRequest::new([("role", "analyst"), ("user", user)], stream, "subscribe")
}

fn sum_query(size: u32) -> UserQueryDoc {
    let mut q = UserQueryDoc::raw("sensor");
    q.aggregation = Some(AggregationSpec {
        window_type: WindowType::Tuple,
        size,
        step: 2,
        aggs: vec![("v".into(), AggFunc::Sum)],
    });
    q
}

fn sensor_gateway(leak_guard: bool) -> Gateway {
    let engine = Arc::new(Engine::default());
    engine.register_stream(sensor_schema()).unwrap();
    let gw = Gateway::new(
        engine,
        Arc::new(PolicyStore::new()),
        GatewayConfig {
            leak_guard,
            ..GatewayConfig::default()
        },
    );
    let raw = QueryGraph::identity("sensor").with_map(MapOp::new(["v"]).unwrap());
    gw.load_policy(open_policy("raw", "sensor", &raw)).unwrap();
    gw
}

fn c6_reconstruction() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(6);
    let values: Vec<i64> = (0..C6_STREAM_LEN)
        .map(|_| rng.random_range(-1000..1000))
        .collect();
    let sizes = [3u32, 4, 5];

    let gw = sensor_gateway(false);
    let mut subs = Vec::new();
    for &size in &sizes {
        let out = gw
            .handle_request(&analyst("mallory", "sensor").with_query(sum_query(size)))
            .map_err(|e| e.to_string())?;
        ensure(out.status == RequestStatus::Granted, || {
            format!("size {size}: {}", out.status)
        })?;
        subs.push(
            gw.engine()
                .subscribe(out.handle.as_ref().unwrap())
                .map_err(|e| e.to_string())?,
        );
    }
    for (i, v) in values.iter().enumerate() {
        gw.engine()
            .push(
                "sensor",
                Tuple(vec![Value::Timestamp(i as i64), Value::Int(*v)]),
            )
            .map_err(|e| e.to_string())?;
    }
    let window_op =
        |size| WindowAggOp::new(WindowType::Tuple, size, 2, [("v", AggFunc::Sum)]).unwrap();
    let v_schema = Schema::of("sensor", &[("v", FieldType::Int)]).unwrap();
    let mut series = Vec::new();
    for (sub, &size) in subs.iter().zip(&sizes) {
        let got: Vec<i64> = (0..sub.pending())
            .map(|_| match sub.recv().unwrap().0[..] {
                [Value::Int(s)] => s,
                ref other => panic!("unexpected tuple {other:?}"),
            })
            .collect();
        // Each streamed sum equals the batch aggregate of the same slice.
        let n = (values.len() - size as usize) / 2 + 1;
        ensure(got.len() == n, || {
            format!("size {size}: {} windows, want {n}", got.len())
        })?;
        for (k, s) in got.iter().enumerate() {
            let window: Vec<Tuple> = values[2 * k..2 * k + size as usize]
                .iter()
                .map(|v| Tuple(vec![Value::Int(*v)]))
                .collect();
            let batch =
                execute_window(&window_op(size), &v_schema, &window).map_err(|e| e.to_string())?;
            ensure(batch.0 == [Value::Int(*s)], || {
                format!("size {size} window {k}: {s} vs {batch:?}")
            })?;
        }
        series.push(WindowSeries::new(size, 2, got));
    }
    let recovered = reconstruct_from_windows(&series).map_err(|e| e.to_string())?;
    ensure(recovered == values[3..], || {
        format!(
            "recovered {} values, want {:?}...",
            recovered.len(),
            &values[3..6]
        )
    })?;

    let guarded = sensor_gateway(true);
    let statuses: Vec<RequestStatus> = sizes
        .iter()
        .map(|&size| {
            guarded
                .handle_request(&analyst("mallory", "sensor").with_query(sum_query(size)))
                .unwrap()
                .status
        })
        .collect();
    ensure(
        statuses
            == [
                RequestStatus::Granted,
                RequestStatus::Busy,
                RequestStatus::Busy,
            ],
        || format!("guarded statuses {statuses:?}"),
    )?;
    Ok(format!(
        "{} values recovered from index 3; guard: granted, busy, busy",
        recovered.len()
    ))
}

// ---------------------------------------------------------------- 7

fn c7_revocation() -> Result<String, String> {
    let schema = Schema::of(
        "feed",
        &[("ts", FieldType::Timestamp), ("seq", FieldType::Int)],
    )
    .unwrap();
    let policy_graph = QueryGraph::identity("feed").with_map(MapOp::new(["seq"]).unwrap());
    let mut rng = StdRng::seed_from_u64(7);
    let mut leaked = 0usize;
    let mut delivered = 0usize;
    for trial in 0..C7_TRIALS {
        let engine = Arc::new(Engine::default());
        engine.register_stream(schema.clone()).unwrap();
        let gw = Gateway::new(
            engine.clone(),
            Arc::new(PolicyStore::new()),
            GatewayConfig::default(),
        );
        gw.load_policy(open_policy("feed-policy", "feed", &policy_graph))
            .unwrap();
        let n_users = rng.random_range(1..=4);
        let handles: Vec<_> = (0..n_users)
            .map(|u| {
                gw.handle_request(&analyst(&format!("u{u}"), "feed"))
                    .unwrap()
                    .handle
                    .unwrap()
            })
            .collect();
        let subs: Vec<_> = handles
            .iter()
            .map(|h| engine.subscribe(h).unwrap())
            .collect();

        // Pushes start numbering at 0; `started` is bumped before each push.
        let started = Arc::new(AtomicI64::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let pusher = {
            let (engine, started, stop) = (engine.clone(), started.clone(), stop.clone());
            thread::spawn(move || {
                while !stop.load(Ordering::Acquire) {
                    let seq = started.fetch_add(1, Ordering::AcqRel);
                    engine
                        .push("feed", Tuple(vec![Value::Timestamp(seq), Value::Int(seq)]))
                        .unwrap();
                }
            })
        };
        let readers: Vec<_> = subs
            .into_iter()
            .map(|s| thread::spawn(move || std::iter::from_fn(|| s.recv()).collect::<Vec<Tuple>>()))
            .collect();

        thread::sleep(Duration::from_micros(rng.random_range(0..2000)));
        gw.remove_policy("feed-policy");
        let cutoff = started.load(Ordering::Acquire);
        // One more tuple after withdrawal; every stream must already be closed.
        let extra = started.fetch_add(1, Ordering::AcqRel);
        stop.store(true, Ordering::Release);
        pusher.join().unwrap();
        engine
            .push(
                "feed",
                Tuple(vec![Value::Timestamp(extra), Value::Int(extra)]),
            )
            .unwrap();

        for (h, r) in handles.iter().zip(readers) {
            let got = r.join().map_err(|_| "reader panicked".to_string())?;
            ensure(!gw.is_live(h), || {
                format!("trial {trial}: handle still live")
            })?;
            delivered += got.len();
            leaked += got
                .iter()
                .filter(|t| matches!(t.0[0], Value::Int(seq) if seq >= cutoff))
                .count();
        }
        ensure(gw.active_count() == 0, || {
            format!("trial {trial}: registry not empty")
        })?;
    }
    ensure(leaked == 0, || {
        format!("{leaked} tuples delivered after withdrawal")
    })?;
    Ok(format!(
        "{C7_TRIALS} trials, {delivered} tuples before withdrawal, 0 after"
    ))
}

// ---------------------------------------------------------------- 8

fn case_schema() -> Schema {
    Schema::of(
        "obs",
        &[
            ("ts", FieldType::Timestamp),
            ("a", FieldType::Int),
            ("b", FieldType::Double),
            ("c", FieldType::Int),
            ("tag", FieldType::String),
        ],
    )
    .unwrap()
}

const TAGS: [&str; 3] = ["x", "y", "z"];

fn random_condition(rng: &mut StdRng, leaves: usize) -> Predicate {
    if leaves == 1 {
        if rng.random_bool(0.15) {
            let op = if rng.random_bool(0.5) {
                CmpOp::Eq
            } else {
                CmpOp::Ne
            };
            return Predicate::leaf("tag", op, TAGS[rng.random_range(0..3)]);
        }
        return Predicate::leaf(
            ["a", "b", "c"][rng.random_range(0..3)],
            OPS[rng.random_range(0..OPS.len())],
            rng.random_range(0..20i64),
        );
    }
    let left = rng.random_range(1..leaves);
    let (l, r) = (
        random_condition(rng, left),
        random_condition(rng, leaves - left),
    );
    let node = if rng.random_bool(0.6) {
        Predicate::or(l, r)
    } else {
        Predicate::and(l, r)
    };
    if rng.random_bool(0.1) {
        Predicate::not(node)
    } else {
        node
    }
}

fn random_case_graph(rng: &mut StdRng, schema: &Schema) -> QueryGraph {
    loop {
        let mut g = QueryGraph::identity("obs");
        if rng.random_bool(0.7) {
            let leaves = rng.random_range(1..=4);
            g = g.with_filter(random_condition(rng, leaves));
        }
        let time = rng.random_bool(0.3);
        let mut visible: Vec<&str> = schema.fields().iter().map(|f| f.name.as_str()).collect();
        if rng.random_bool(0.6) {
            visible.retain(|f| (time && *f == "ts") || rng.random_bool(0.5));
            if visible.is_empty() {
                continue;
            }
            g = g.with_map(MapOp::new(visible.iter().copied()).unwrap());
        }
        if rng.random_bool(0.7) {
            let size = rng.random_range(1..=10);
            let step = rng.random_range(1..=size);
            let mut aggs = Vec::new();
            for f in &visible {
                if rng.random_bool(0.5) {
                    aggs.push((
                        f.to_string(),
                        AggFunc::ALL[rng.random_range(0..AggFunc::ALL.len())],
                    ));
                }
            }
            let kind = if time {
                WindowType::Time
            } else {
                WindowType::Tuple
            };
            match WindowAggOp::new(kind, size, step, aggs) {
                Ok(w) => g = g.with_window(w),
                Err(_) => continue,
            }
        }
        if validate_graph(&g, schema).is_ok() {
            return g;
        }
    }
}

fn random_input(rng: &mut StdRng) -> Vec<Tuple> {
    let n = rng.random_range(0..=C8_MAX_INPUT);
    let mut ts = 1_000_000i64;
    (0..n)
        .map(|_| {
            ts += rng.random_range(0..1500);
            Tuple(vec![
                Value::Timestamp(ts),
                Value::Int(rng.random_range(0..20)),
                Value::Double(rng.random_range(0..200) as f64 / 10.0),
                Value::Int(rng.random_range(0..20)),
                Value::Str(TAGS[rng.random_range(0..3)].to_string()),
            ])
        })
        .collect()
}

fn oracle_holds(p: &Predicate, schema: &Schema, t: &Tuple) -> bool {
    match p {
        Predicate::Leaf(s) => {
            let v = &t.0[schema.index_of(&s.attribute).unwrap()];
            let ord = match (v, &s.literal) {
                (Value::Str(x), Literal::Text(y)) => x.as_str().cmp(y.as_str()),
                (Value::Int(x) | Value::Timestamp(x), Literal::Number(n)) => {
                    (*x as f64).total_cmp(&n.to_f64())
                }
                (Value::Double(x), Literal::Number(n)) => x.total_cmp(&n.to_f64()),
                other => panic!("ill-typed leaf {other:?}"),
            };
            match s.op {
                CmpOp::Eq => ord.is_eq(),
                CmpOp::Ne => ord.is_ne(),
                CmpOp::Lt => ord.is_lt(),
                CmpOp::Le => ord.is_le(),
                CmpOp::Gt => ord.is_gt(),
                CmpOp::Ge => ord.is_ge(),
            }
        }
        Predicate::Not(a) => !oracle_holds(a, schema, t),
        Predicate::And(a, b) => oracle_holds(a, schema, t) && oracle_holds(b, schema, t),
        Predicate::Or(a, b) => oracle_holds(a, schema, t) || oracle_holds(b, schema, t),
    }
}

fn num(v: &Value) -> f64 {
    match v {
        Value::Int(x) | Value::Timestamp(x) => *x as f64,
        Value::Double(x) => *x,
        Value::Str(_) => panic!("not numeric"),
    }
}

fn oracle_aggregate(func: AggFunc, col: &[&Value]) -> Value {
    match func {
        AggFunc::Count => Value::Int(col.len() as i64),
        AggFunc::FirstVal => col[0].clone(),
        AggFunc::LastVal => col[col.len() - 1].clone(),
        AggFunc::Avg => Value::Double(col.iter().map(|v| num(v)).sum::<f64>() / col.len() as f64),
        AggFunc::Sum => match col[0] {
            Value::Int(_) => Value::Int(col.iter().map(|v| num(v) as i64).sum()),
            _ => Value::Double(col.iter().fold(0.0, |s, v| s + num(v))),
        },
        AggFunc::Max | AggFunc::Min => {
            let mut best = col[0];
            for v in &col[1..] {
                let better = if func == AggFunc::Max {
                    num(v) > num(best)
                } else {
                    num(v) < num(best)
                };
                if better {
                    best = v;
                }
            }
            best.clone()
        }
    }
}

/// Reference semantics computed over the whole input at once.
fn batch_oracle(g: &QueryGraph, schema: &Schema, input: &[Tuple]) -> (Vec<Tuple>, usize) {
    let mut rows: Vec<Tuple> = input
        .iter()
        .filter(|t| {
            g.filter
                .as_ref()
                .is_none_or(|f| oracle_holds(&f.condition, schema, t))
        })
        .cloned()
        .collect();
    let mut cur = schema.clone();
    if let Some(m) = &g.map {
        let keep: Vec<usize> = (0..cur.arity())
            .filter(|&i| m.attributes().contains(&cur.fields()[i].name))
            .collect();
        rows = rows
            .iter()
            .map(|t| Tuple(keep.iter().map(|&i| t.0[i].clone()).collect()))
            .collect();
        cur = Schema::new(
            cur.stream_name(),
            keep.iter().map(|&i| cur.fields()[i].clone()).collect(),
        )
        .unwrap();
    }
    let k = rows.len();
    let Some(w) = &g.window else {
        return (rows, k);
    };
    let cols: Vec<(usize, AggFunc)> = w
        .aggs()
        .iter()
        .map(|(a, f)| (cur.index_of(a).unwrap(), *f))
        .collect();
    let agg = |window: &[&Tuple]| {
        Tuple(
            cols.iter()
                .map(|&(i, f)| {
                    oracle_aggregate(f, &window.iter().map(|t| &t.0[i]).collect::<Vec<_>>())
                })
                .collect(),
        )
    };
    let (size, step) = (w.size() as usize, w.step() as usize);
    let mut out = Vec::new();
    match w.window_type() {
        WindowType::Tuple => {
            let mut start = 0;
            while start + size <= k {
                out.push(agg(&rows[start..start + size].iter().collect::<Vec<_>>()));
                start += step;
            }
        }
        WindowType::Time => {
            let ts_idx = cur.index_of("ts").unwrap();
            let ts = |t: &Tuple| match t.0[ts_idx] {
                Value::Timestamp(v) => v,
                _ => unreachable!(),
            };
            if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
                let (size, step) = (size as i64 * 1000, step as i64 * 1000);
                let (t0, t_last) = (ts(first), ts(last));
                let mut start = t0;
                // A window is reported once a later tuple reaches its end.
                while start + size <= t_last {
                    let members: Vec<&Tuple> = rows
                        .iter()
                        .filter(|t| start <= ts(t) && ts(t) < start + size)
                        .collect();
                    if !members.is_empty() {
                        out.push(agg(&members));
                    }
                    start += step;
                }
            }
        }
    }
    (out, k)
}

fn c8_engine_vs_batch() -> Result<String, String> {
    let schema = case_schema();
    let mut rng = StdRng::seed_from_u64(8);
    let (mut outputs, mut windowed) = (0usize, 0usize);
    for case in 0..C8_CASES {
        let g = random_case_graph(&mut rng, &schema);
        let input = random_input(&mut rng);
        let engine = Engine::default();
        engine.register_stream(schema.clone()).unwrap();
        let handle = engine.deploy(&g).map_err(|e| format!("case {case}: {e}"))?;
        let sub = engine.subscribe(&handle).unwrap();
        for t in &input {
            engine.push("obs", t.clone()).unwrap();
        }
        let streamed: Vec<Tuple> = (0..sub.pending()).map(|_| sub.recv().unwrap()).collect();
        let (batch, k) = batch_oracle(&g, &schema, &input);
        ensure(streamed == batch, || {
            format!(
                "case {case}: `{}` streamed {} tuples, batch {}",
                g.canonical_text(),
                streamed.len(),
                batch.len()
            )
        })?;
        if let Some(w) = g
            .window
            .as_ref()
            .filter(|w| w.window_type() == WindowType::Tuple)
        {
            let (n, m) = (w.size() as usize, w.step() as usize);
            let want = if k >= n { (k - n) / m + 1 } else { 0 };
            ensure(streamed.len() == want, || {
                format!(
                    "case {case}: {} windows over {k} tuples, want {want}",
                    streamed.len()
                )
            })?;
            windowed += 1;
        }
        outputs += streamed.len();
    }
    Ok(format!(
        "{C8_CASES} cases, {outputs} output tuples, {windowed} tuple-window counts checked"
    ))
}

// ---------------------------------------------------------------- 9, 10

fn c9_constant_overhead() -> Result<String, String> {
    let median_for = |n_policies: usize| -> Result<f64, String> {
        let spec = WorkloadSpec {
            n_direct_queries: 100,
            n_policies,
            n_requests: 1000,
            sequence: SequenceKind::Unique,
            seed: 9,
            ..WorkloadSpec::default()
        };
        let w = generate_workload(&spec).map_err(|e| e.to_string())?;
        let r = run_benchmark(&w, Mode::Gateway).map_err(|e| e.to_string())?;
        let granted = r.summary.status_counts.get("granted").copied().unwrap_or(0);
        ensure(granted == spec.n_requests, || {
            format!("{n_policies} policies: {:?}", r.summary.status_counts)
        })?;
        Ok(r.summary.decision_and_merge.ok_or("no samples")?.p50)
    };
    let small = median_for(50)?;
    let large = median_for(1000)?;
    let ratio = small.max(large) / small.min(large);
    ensure(ratio < C9_MAX_RATIO, || {
        format!("medians {small:.1}us vs {large:.1}us, ratio {ratio:.2}")
    })?;
    ensure(small.max(large) < C9_MAX_MEDIAN_US, || {
        format!("medians {small:.1}us vs {large:.1}us")
    })?;
    Ok(format!(
        "median decision+merge {small:.1}us (50) vs {large:.1}us (1000), ratio {ratio:.2}"
    ))
}

fn c10_cache_speedup() -> Result<String, String> {
    let started = Instant::now();
    let spec = WorkloadSpec::default();
    ensure(
        spec.zipf_alpha == 0.223 && spec.max_rank == 300 && spec.n_requests == 1500,
        || format!("unexpected defaults {spec:?}"),
    )?;
    let w = generate_workload(&spec).map_err(|e| e.to_string())?;
    let r = run_benchmark(&w, Mode::Proxy).map_err(|e| e.to_string())?;
    let hit_rate = r.summary.hit_rate.ok_or("no cache flags")?;
    let hit = r.summary.hit_total.ok_or("no hits")?.p50;
    let miss = r.summary.miss_total.ok_or("no misses")?.p50;
    let elapsed = started.elapsed();
    ensure(hit_rate > 0.0, || "hit rate 0".into())?;
    ensure(hit <= C10_MAX_HIT_FRACTION * miss, || {
        format!("hit median {hit:.1}us vs miss {miss:.1}us")
    })?;
    ensure(elapsed < C10_MAX_RUNTIME, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "hit rate {:.1}%, median hit {hit:.1}us vs miss {miss:.1}us",
        hit_rate * 100.0
    ))
}
