//! Workload generation and the timing harness.

mod report;
mod run;
mod workload;

pub use report::{
    percentile, read_csv, write_csv, Mode, ReportError, Stats, Summary, TimingRecord,
};
pub use run::{build_gateway, run_benchmark, run_direct, run_sequence, BenchError, BenchReport};
pub use workload::{
    default_schemas, generate_workload, generate_workload_for, plausible_range, random_graph,
    random_tuple, request_for, zipf_pmf, BenchRequest, DirectQuery, OperatorMix, SequenceKind,
    Workload, WorkloadError, WorkloadSpec, ZipfRanks, ACTION, GROUP_ATTR, SESSION_ATTR,
};
