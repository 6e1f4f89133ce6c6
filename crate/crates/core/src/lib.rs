//! Fine-grained, obligation-driven access control for continuous data streams.
//!
//! Policies carry obligations (filter, map and window-aggregation
//! constraints) that compile to operator pipelines. User queries compile to
//! the same pipelines; the two are merged, checked for empty or partial
//! results, and deployed on an embedded stream engine that hands back an
//! opaque stream handle.
//!
//! Module map:
//!
//! - [`predicate`]: filter conditions, DNF, NR/PR analysis
//! - [`querygraph`]: schemas, tuples and the filter/map/window pipeline
//! - [`merge`]: combining policy and user pipelines
//! - [`policy`]: policy documents, the decision point, user-query documents
//! - [`engine`]: continuous-query execution and StreamSQL rendering
//! - [`gateway`]: the enforcement point and its query registry
//! - [`proxy`]: handle-caching client proxy
//! - [`bench`]: workload generation and the timing harness
//! - [`net`]: byte-stream wire formats, server and client

pub mod bench;
pub mod engine;
pub mod gateway;
pub mod merge;
pub mod net;
pub mod policy;
pub mod predicate;
pub mod proxy;
pub mod querygraph;
mod xml;

pub use engine::{Engine, StreamHandle, Subscription};
pub use gateway::{Gateway, GatewayConfig, RequestOutcome, RequestStatus};
pub use merge::{merge_graphs, merge_graphs_for, Escalation, MergeError, MergedGraph};
pub use policy::{AccessRequest, Decision, Policy, PolicyStore, UserQueryDoc, Verdict};
pub use predicate::{parse_predicate, Predicate, Warning, WarningKind};
pub use proxy::{CacheStatus, Proxy};
pub use querygraph::{QueryGraph, Schema, Tuple, Value};
