//! Random workloads: query graphs, the policies that grant them and the
//! request sequences that exercise those policies.

use std::collections::BTreeSet;
use std::fmt;

use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Zipf};
use thiserror::Error;

use crate::engine::render_streamsql;
use crate::policy::{graph_to_obligations, AccessRequest, Effect, Policy, Target, UserQueryDoc};
use crate::predicate::{CmpOp, Decimal, Literal, Predicate};
use crate::querygraph::{
    validate_graph, AggFunc, FieldType, MapOp, QueryGraph, Schema, Tuple, Value, WindowAggOp,
    WindowType,
};

pub const ACTION: &str = "subscribe";
pub const GROUP_ATTR: &str = "group";
pub const SESSION_ATTR: &str = "session";

/// Which operators a generated graph contains: filter, map, aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OperatorMix {
    F,
    M,
    A,
    FM,
    FA,
    MA,
    FMA,
}

impl OperatorMix {
    /// In the order of `WorkloadSpec::direct_query_dist`.
    pub const ALL: [OperatorMix; 7] = [
        OperatorMix::F,
        OperatorMix::M,
        OperatorMix::A,
        OperatorMix::FM,
        OperatorMix::FA,
        OperatorMix::MA,
        OperatorMix::FMA,
    ];

    pub fn has_filter(self) -> bool {
        matches!(
            self,
            OperatorMix::F | OperatorMix::FM | OperatorMix::FA | OperatorMix::FMA
        )
    }

    pub fn has_map(self) -> bool {
        matches!(
            self,
            OperatorMix::M | OperatorMix::FM | OperatorMix::MA | OperatorMix::FMA
        )
    }

    pub fn has_window(self) -> bool {
        matches!(
            self,
            OperatorMix::A | OperatorMix::FA | OperatorMix::MA | OperatorMix::FMA
        )
    }

    pub fn of(g: &QueryGraph) -> Option<OperatorMix> {
        OperatorMix::ALL.into_iter().find(|m| {
            m.has_filter() == g.filter.is_some()
                && m.has_map() == g.map.is_some()
                && m.has_window() == g.window.is_some()
        })
    }
}

impl fmt::Display for OperatorMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.has_filter() {
            parts.push("filter");
        }
        if self.has_map() {
            parts.push("map");
        }
        if self.has_window() {
            parts.push("aggregate");
        }
        f.write_str(&parts.join("+"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SequenceKind {
    /// Every request comes from a distinct session.
    Unique,
    /// Policy popularity follows a Zipf law over the first `max_rank` policies.
    Zipf,
}

impl SequenceKind {
    pub fn name(self) -> &'static str {
        match self {
            SequenceKind::Unique => "unique",
            SequenceKind::Zipf => "zipf",
        }
    }

    pub fn parse(s: &str) -> Option<SequenceKind> {
        match s {
            "unique" => Some(SequenceKind::Unique),
            "zipf" => Some(SequenceKind::Zipf),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub n_direct_queries: usize,
    /// Relative weights for `OperatorMix::ALL`.
    pub direct_query_dist: [u32; 7],
    pub n_policies: usize,
    pub n_requests: usize,
    pub zipf_alpha: f64,
    pub max_rank: usize,
    pub sequence: SequenceKind,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            n_direct_queries: 1500,
            direct_query_dist: [160, 170, 130, 124, 254, 290, 372],
            n_policies: 1000,
            n_requests: 1500,
            zipf_alpha: 0.223,
            max_rank: 300,
            sequence: SequenceKind::Zipf,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkloadError {
    #[error("operator mix weights must all be positive")]
    Weights,
    #[error("zipf skew must be positive, got {0}")]
    Alpha(f64),
    #[error("{0} must be positive")]
    Empty(&'static str),
    #[error("no schemas to draw from")]
    NoSchemas,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.direct_query_dist.contains(&0) {
            return Err(WorkloadError::Weights);
        }
        if !(self.zipf_alpha > 0.0 && self.zipf_alpha.is_finite()) {
            return Err(WorkloadError::Alpha(self.zipf_alpha));
        }
        for (n, name) in [
            (self.n_direct_queries, "n_direct_queries"),
            (self.n_policies, "n_policies"),
            (self.max_rank, "max_rank"),
        ] {
            if n == 0 {
                return Err(WorkloadError::Empty(name));
            }
        }
        Ok(())
    }

    /// Per-mix counts summing to `n_direct_queries`, by largest remainder.
    pub fn mix_counts(&self) -> [usize; 7] {
        let total: u64 = self.direct_query_dist.iter().map(|&w| w as u64).sum();
        let n = self.n_direct_queries as u64;
        let mut counts = [0usize; 7];
        let mut rema: Vec<(u64, usize)> = Vec::with_capacity(7);
        for (i, &w) in self.direct_query_dist.iter().enumerate() {
            let exact = n * w as u64;
            counts[i] = (exact / total) as usize;
            rema.push((exact % total, i));
        }
        let short = self.n_direct_queries - counts.iter().sum::<usize>();
        rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in rema.iter().take(short) {
            counts[i] += 1;
        }
        counts
    }
}

/// The Zipf law used for request sequences: rank `k` in `1..=max_rank`
/// with probability proportional to `k^-alpha`.
pub fn zipf_pmf(alpha: f64, max_rank: usize) -> Vec<f64> {
    let w: Vec<f64> = (1..=max_rank).map(|k| (k as f64).powf(-alpha)).collect();
    let h: f64 = w.iter().sum();
    w.into_iter().map(|x| x / h).collect()
}

pub struct ZipfRanks {
    dist: Zipf<f64>,
}

impl ZipfRanks {
    pub fn new(alpha: f64, max_rank: usize) -> Result<ZipfRanks, WorkloadError> {
        let dist = Zipf::new(max_rank as f64, alpha).map_err(|_| WorkloadError::Alpha(alpha))?;
        Ok(ZipfRanks { dist })
    }

    /// A rank in `1..=max_rank`.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        self.dist.sample(rng) as usize
    }
}

/// A generated graph together with its script.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectQuery {
    pub mix: OperatorMix,
    pub graph: QueryGraph,
    pub script: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRequest {
    /// Index into `Workload::policies`.
    pub policy: usize,
    pub request: AccessRequest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub spec: WorkloadSpec,
    pub schemas: Vec<Schema>,
    pub direct_queries: Vec<DirectQuery>,
    pub policies: Vec<Policy>,
    /// `policy_graphs[i]` is the graph policy `i` grants.
    pub policy_graphs: Vec<QueryGraph>,
    pub requests: Vec<BenchRequest>,
}

impl Workload {
    pub fn schema(&self, stream: &str) -> Option<&Schema> {
        self.schemas.iter().find(|s| s.stream_name() == stream)
    }
}

/// Streams used when no catalog is supplied.
pub fn default_schemas() -> Vec<Schema> {
    use FieldType::*;
    [
        (
            "weather",
            &[
                ("samplingtime", Timestamp),
                ("temperature", Double),
                ("humidity", Double),
                ("rainrate", Double),
                ("windspeed", Double),
                ("winddirection", Int),
                ("barometer", Double),
            ][..],
        ),
        (
            "traffic",
            &[
                ("observedat", Timestamp),
                ("speed", Double),
                ("volume", Int),
                ("occupancy", Double),
                ("lane", Int),
            ][..],
        ),
        (
            "power",
            &[
                ("readat", Timestamp),
                ("voltage", Double),
                ("current", Double),
                ("load", Double),
                ("meter", Int),
                ("region", String),
            ][..],
        ),
    ]
    .into_iter()
    .map(|(name, fields)| Schema::of(name, fields).expect("static schema"))
    .collect()
}

/// Closed range thresholds are drawn from for a field.
pub fn plausible_range(field: &str, ty: FieldType) -> (f64, f64) {
    match field {
        "temperature" => (-10.0, 45.0),
        "humidity" | "occupancy" => (0.0, 100.0),
        "rainrate" => (0.0, 120.0),
        "windspeed" => (0.0, 40.0),
        "winddirection" => (0.0, 359.0),
        "barometer" => (950.0, 1050.0),
        "speed" => (0.0, 130.0),
        "volume" => (0.0, 2000.0),
        "lane" => (1.0, 6.0),
        "voltage" => (210.0, 250.0),
        "current" => (0.0, 60.0),
        "load" => (0.0, 100.0),
        "meter" => (0.0, 100_000.0),
        _ => match ty {
            FieldType::Int => (0.0, 1000.0),
            _ => (0.0, 100.0),
        },
    }
}

/// A tuple of plausible values stamped `now_ms`.
pub fn random_tuple(rng: &mut impl Rng, schema: &Schema, now_ms: i64) -> Tuple {
    let values = schema
        .fields()
        .iter()
        .map(|f| match f.ty {
            FieldType::Timestamp => Value::Timestamp(now_ms),
            FieldType::String => Value::Str(format!("r{}", rng.random_range(0..8))),
            ty => {
                let (lo, hi) = plausible_range(&f.name, ty);
                let v = rng.random_range(lo..=hi);
                if ty == FieldType::Int {
                    Value::Int(v.round() as i64)
                } else {
                    Value::Double((v * 100.0).round() / 100.0)
                }
            }
        })
        .collect();
    Tuple(values)
}

fn threshold(rng: &mut StdRng, field: &str, ty: FieldType) -> Literal {
    let (lo, hi) = plausible_range(field, ty);
    let v = rng.random_range(lo..=hi);
    let d = match ty {
        FieldType::Int => Decimal::from_i64(v.round() as i64),
        // One decimal place keeps scripts readable.
        _ => format!("{v:.1}").parse().expect("formatted decimal"),
    };
    Literal::Number(d)
}

/// A condition over distinct numeric fields, so it is always satisfiable.
fn random_filter(rng: &mut StdRng, schema: &Schema) -> Predicate {
    let numeric: Vec<_> = schema
        .fields()
        .iter()
        .filter(|f| matches!(f.ty, FieldType::Int | FieldType::Double))
        .collect();
    let n = rng.random_range(1..=numeric.len().min(3));
    let chosen: Vec<_> = numeric.choose_multiple(rng, n).collect();
    let ops = [CmpOp::Lt, CmpOp::Gt, CmpOp::Le, CmpOp::Ge];
    let mut leaves = chosen.into_iter().map(|f| {
        let op = *ops.choose(rng).expect("non-empty");
        Predicate::leaf(f.name.clone(), op, threshold(rng, &f.name, f.ty))
    });
    let first = leaves.next().expect("n >= 1");
    let rest: Vec<Predicate> = leaves.collect();
    rest.into_iter().fold(first, |acc, p| {
        if rng.random_bool(0.7) {
            Predicate::and(acc, p)
        } else {
            Predicate::or(acc, p)
        }
    })
}

fn random_window(
    rng: &mut StdRng,
    visible: &[(String, FieldType)],
    ty: WindowType,
) -> Option<WindowAggOp> {
    let size = rng.random_range(2..=20u32);
    let step = rng.random_range(1..=size);
    let candidates: Vec<(String, AggFunc)> = visible
        .iter()
        .flat_map(|(name, fty)| {
            AggFunc::ALL
                .into_iter()
                .filter(move |f| f.output_type(*fty).is_some())
                .map(move |f| (name.clone(), f))
        })
        .collect();
    let n = rng.random_range(1..=candidates.len().min(3));
    // One function per attribute.
    let mut seen = BTreeSet::new();
    let aggs: Vec<(String, AggFunc)> = candidates
        .choose_multiple(rng, candidates.len())
        .filter(|(a, _)| seen.insert(a.clone()))
        .take(n)
        .cloned()
        .collect();
    WindowAggOp::new(ty, size, step, aggs).ok()
}

/// Draws a valid graph with exactly the operators of `mix`.
pub fn random_graph(rng: &mut StdRng, schema: &Schema, mix: OperatorMix) -> QueryGraph {
    loop {
        let mut g = QueryGraph::identity(schema.stream_name());
        if mix.has_filter() {
            g = g.with_filter(random_filter(rng, schema));
        }
        let window_type = if rng.random_bool(0.75) {
            WindowType::Tuple
        } else {
            WindowType::Time
        };
        let ts = schema
            .timestamp_field()
            .map(|i| schema.fields()[i].name.clone());
        let mut visible: Vec<(String, FieldType)> = schema
            .fields()
            .iter()
            .map(|f| (f.name.clone(), f.ty))
            .collect();
        if mix.has_map() {
            let n = rng.random_range(1..=visible.len());
            let mut attrs: Vec<String> = visible
                .choose_multiple(rng, n)
                .map(|(a, _)| a.clone())
                .collect();
            if mix.has_window() && window_type == WindowType::Time {
                attrs.extend(ts.clone());
            }
            let map = MapOp::new(attrs).expect("non-empty");
            visible.retain(|(a, _)| map.attributes().contains(a));
            g = g.with_map(map);
        }
        if mix.has_window() {
            let Some(w) = random_window(rng, &visible, window_type) else {
                continue;
            };
            g = g.with_window(w);
        }
        if validate_graph(&g, schema).is_ok() {
            return g;
        }
    }
}

fn policy_for(index: usize, graph: &QueryGraph) -> Policy {
    Policy {
        id: format!("p{index:05}"),
        target: Target {
            subjects: [(GROUP_ATTR.to_string(), format!("g{index}"))]
                .into_iter()
                .collect(),
            resource: graph.source.clone(),
            action: ACTION.to_string(),
        },
        effect: Effect::Permit,
        obligations: graph_to_obligations(graph),
    }
}

/// The request of `session` asking for exactly what policy `index` grants.
pub fn request_for(index: usize, graph: &QueryGraph, session: Option<usize>) -> AccessRequest {
    let mut creds = vec![(GROUP_ATTR.to_string(), format!("g{index}"))];
    if let Some(s) = session {
        creds.push((SESSION_ATTR.to_string(), format!("s{s}")));
    }
    AccessRequest::new(creds, graph.source.clone(), ACTION)
        .with_query(UserQueryDoc::from_graph(graph))
}

pub fn generate_workload(spec: &WorkloadSpec) -> Result<Workload, WorkloadError> {
    generate_workload_for(spec, default_schemas())
}

/// Deterministic in `spec.seed` and `schemas`.
pub fn generate_workload_for(
    spec: &WorkloadSpec,
    schemas: Vec<Schema>,
) -> Result<Workload, WorkloadError> {
    spec.validate()?;
    if schemas.is_empty() {
        return Err(WorkloadError::NoSchemas);
    }
    let mut rng = StdRng::seed_from_u64(spec.seed);

    let mut direct_queries = Vec::with_capacity(spec.n_direct_queries);
    for (mix, count) in OperatorMix::ALL.into_iter().zip(spec.mix_counts()) {
        for _ in 0..count {
            let schema = schemas.choose(&mut rng).expect("non-empty");
            let graph = random_graph(&mut rng, schema, mix);
            let script = render_streamsql(&graph, schema).expect("generated graphs validate");
            direct_queries.push(DirectQuery { mix, graph, script });
        }
    }
    direct_queries.shuffle(&mut rng);

    let policy_graphs: Vec<QueryGraph> = (0..spec.n_policies)
        .map(|i| direct_queries[i % direct_queries.len()].graph.clone())
        .collect();
    let policies: Vec<Policy> = policy_graphs
        .iter()
        .enumerate()
        .map(|(i, g)| policy_for(i, g))
        .collect();

    let ranks = ZipfRanks::new(spec.zipf_alpha, spec.max_rank.min(spec.n_policies))?;
    let requests = (0..spec.n_requests)
        .map(|k| {
            let (policy, session) = match spec.sequence {
                SequenceKind::Unique => (k % spec.n_policies, Some(k)),
                SequenceKind::Zipf => (ranks.sample(&mut rng) - 1, None),
            };
            BenchRequest {
                policy,
                request: request_for(policy, &policy_graphs[policy], session),
            }
        })
        .collect();

    Ok(Workload {
        spec: spec.clone(),
        schemas,
        direct_queries,
        policies,
        policy_graphs,
        requests,
    })
}
