//! Fixtures shared by the benchmarks.

use rand::rngs::StdRng;
use rand::SeedableRng;

use streamgate_core::bench::{
    generate_workload, random_tuple, SequenceKind, Workload, WorkloadSpec,
};
use streamgate_core::Tuple;

pub const SEED: u64 = 7;

/// A reproducible workload with `n_policies` policies and a unique request
/// sequence covering each of them.
pub fn workload(n_policies: usize) -> Workload {
    generate_workload(&WorkloadSpec {
        n_direct_queries: 50,
        n_policies,
        n_requests: n_policies,
        sequence: SequenceKind::Unique,
        seed: SEED,
        ..WorkloadSpec::default()
    })
    .expect("benchmark workload")
}

/// `n` tuples for `stream` with increasing timestamps.
pub fn tuples(w: &Workload, stream: &str, n: usize) -> Vec<Tuple> {
    let schema = w.schema(stream).expect("known stream");
    let mut rng = StdRng::seed_from_u64(SEED);
    (0..n)
        .map(|i| random_tuple(&mut rng, schema, i as i64 * 100))
        .collect()
}
