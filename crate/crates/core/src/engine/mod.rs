//! Embedded continuous-query engine.
//!
//! Streams are registered by schema and fed with [`Engine::push`]. Each
//! deployed graph keeps its own window buffer and broadcasts its output to
//! subscribers through bounded queues. Pushes to one stream are serialized;
//! distinct streams proceed independently.

mod pipeline;
mod queue;
mod sql;
mod wire;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::Duration;

use thiserror::Error;

use crate::querygraph::{validate_graph, GraphError, QueryGraph, Schema, SchemaCatalog, Tuple};

use pipeline::Pipeline;
use queue::SubscriberQueue;

pub use pipeline::{execute_graph, execute_window};
pub use queue::DEFAULT_QUEUE_CAPACITY;
pub use sql::render_streamsql;
pub use wire::{decode_record, encode_record, WireError, EOS_LINE};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("stream `{0}` is already registered")]
    DuplicateStream(String),
    #[error("unknown stream `{0}`")]
    UnknownStream(String),
    #[error("no live deployment `{0}`")]
    UnknownHandle(String),
    #[error("`{0}` is not a stream handle")]
    InvalidHandle(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

const SCHEME: &str = "stream://";

/// URI naming a deployed output stream: `stream://<host>/<graph_id>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamHandle {
    uri: String,
    split: usize,
}

impl StreamHandle {
    pub fn new(host: &str, graph_id: &str) -> StreamHandle {
        StreamHandle {
            uri: format!("{SCHEME}{host}/{graph_id}"),
            split: SCHEME.len() + host.len(),
        }
    }

    pub fn uri(&self) -> &str {
        &self.uri
    }

    pub fn host(&self) -> &str {
        &self.uri[SCHEME.len()..self.split]
    }

    pub fn graph_id(&self) -> &str {
        &self.uri[self.split + 1..]
    }
}

impl FromStr for StreamHandle {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<StreamHandle, EngineError> {
        let s = s.trim();
        let rest = s
            .strip_prefix(SCHEME)
            .ok_or_else(|| EngineError::InvalidHandle(s.to_string()))?;
        match rest.split_once('/') {
            Some((host, id)) if !host.is_empty() && !id.is_empty() && !id.contains('/') => {
                Ok(StreamHandle::new(host, id))
            }
            _ => Err(EngineError::InvalidHandle(s.to_string())),
        }
    }
}

impl fmt::Display for StreamHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.uri)
    }
}

/// Part of a deployment that outlives the stream lock: liveness and the
/// subscriber list.
struct Shared {
    stream: String,
    output: Schema,
    live: AtomicBool,
    subscribers: Mutex<Vec<Arc<SubscriberQueue>>>,
}

impl Shared {
    fn subscribers(&self) -> MutexGuard<'_, Vec<Arc<SubscriberQueue>>> {
        self.subscribers.lock().unwrap_or_else(|e| e.into_inner())
    }
}

struct Deployment {
    id: String,
    pipeline: Pipeline,
    shared: Arc<Shared>,
}

struct StreamSlot {
    schema: Schema,
    deployments: Mutex<Vec<Deployment>>,
}

impl StreamSlot {
    fn lock(&self) -> MutexGuard<'_, Vec<Deployment>> {
        self.deployments.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Receiving end of a deployment's output.
pub struct Subscription {
    queue: Arc<SubscriberQueue>,
    schema: Schema,
    handle: StreamHandle,
}

impl Subscription {
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn handle(&self) -> &StreamHandle {
        &self.handle
    }

    /// Next output tuple; `None` once the deployment is withdrawn.
    pub fn recv(&self) -> Option<Tuple> {
        self.queue.recv()
    }

    /// `Ok(None)` on end-of-stream, `Err(())` on timeout.
    #[allow(clippy::result_unit_err)]
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Tuple>, ()> {
        self.queue.recv_timeout(timeout)
    }

    pub fn is_closed(&self) -> bool {
        self.queue.is_closed()
    }

    /// Tuples delivered but not yet received.
    pub fn pending(&self) -> usize {
        self.queue.len()
    }
}

impl Iterator for Subscription {
    type Item = Tuple;

    fn next(&mut self) -> Option<Tuple> {
        self.recv()
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.queue.close();
    }
}

pub struct Engine {
    host: String,
    queue_capacity: usize,
    streams: RwLock<HashMap<String, Arc<StreamSlot>>>,
    deployments: RwLock<HashMap<String, Arc<Shared>>>,
    next_id: AtomicU64,
}

impl Default for Engine {
    fn default() -> Self {
        Engine::new("local")
    }
}

impl Engine {
    pub fn new(host: impl Into<String>) -> Engine {
        Engine::with_queue_capacity(host, DEFAULT_QUEUE_CAPACITY)
    }

    pub fn with_queue_capacity(host: impl Into<String>, queue_capacity: usize) -> Engine {
        Engine {
            host: host.into(),
            queue_capacity,
            streams: RwLock::new(HashMap::new()),
            deployments: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    fn slot(&self, stream: &str) -> Result<Arc<StreamSlot>, EngineError> {
        self.streams
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(stream)
            .cloned()
            .ok_or_else(|| EngineError::UnknownStream(stream.to_string()))
    }

    fn shared(&self, graph_id: &str) -> Option<Arc<Shared>> {
        self.deployments
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(graph_id)
            .cloned()
    }

    pub fn register_stream(&self, schema: Schema) -> Result<(), EngineError> {
        let mut streams = self.streams.write().unwrap_or_else(|e| e.into_inner());
        if streams.contains_key(schema.stream_name()) {
            return Err(EngineError::DuplicateStream(
                schema.stream_name().to_string(),
            ));
        }
        streams.insert(
            schema.stream_name().to_string(),
            Arc::new(StreamSlot {
                schema,
                deployments: Mutex::new(Vec::new()),
            }),
        );
        Ok(())
    }

    pub fn stream_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .streams
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .keys()
            .cloned()
            .collect();
        names.sort();
        names
    }

    /// Feeds `t` to every deployment on `stream`, in deployment order.
    /// Blocks while a subscriber's buffer is full.
    pub fn push(&self, stream: &str, t: Tuple) -> Result<(), EngineError> {
        let slot = self.slot(stream)?;
        slot.schema.check(&t)?;
        let mut deployments = slot.lock();
        let mut out = Vec::new();
        for d in deployments.iter_mut() {
            if !d.shared.live.load(Ordering::Acquire) {
                continue;
            }
            out.clear();
            d.pipeline.push(&t, &mut out);
            if out.is_empty() {
                continue;
            }
            let targets: Vec<Arc<SubscriberQueue>> = {
                let mut subs = d.shared.subscribers();
                subs.retain(|q| !q.is_closed());
                subs.clone()
            };
            for q in targets {
                for o in &out {
                    if q.send(o.clone()).is_err() {
                        break;
                    }
                }
            }
        }
        Ok(())
    }

    /// Validates and deploys `g`; its windows start with the next push.
    pub fn deploy(&self, g: &QueryGraph) -> Result<StreamHandle, EngineError> {
        let slot = self.slot(&g.source)?;
        validate_graph(g, &slot.schema)?;
        let pipeline = Pipeline::compile(g, &slot.schema)?;
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        let id = format!("q{n}-{:016x}", rand::random::<u64>());
        let shared = Arc::new(Shared {
            stream: g.source.clone(),
            output: pipeline.output_schema().clone(),
            live: AtomicBool::new(true),
            subscribers: Mutex::new(Vec::new()),
        });
        let mut deployments = slot.lock();
        self.deployments
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id.clone(), Arc::clone(&shared));
        deployments.push(Deployment {
            id: id.clone(),
            pipeline,
            shared,
        });
        Ok(StreamHandle::new(&self.host, &id))
    }

    /// Withdraws a deployment: subscribers get end-of-stream at once,
    /// buffered window state is discarded.
    pub fn withdraw(&self, graph_id: &str) -> Result<(), EngineError> {
        let shared = self
            .deployments
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .remove(graph_id)
            .ok_or_else(|| EngineError::UnknownHandle(graph_id.to_string()))?;
        {
            let subs = shared.subscribers();
            shared.live.store(false, Ordering::Release);
            for q in subs.iter() {
                q.close();
            }
        }
        // Closing first releases a push blocked on a full queue, so the
        // stream lock can be taken here.
        if let Ok(slot) = self.slot(&shared.stream) {
            slot.lock().retain(|d| d.id != graph_id);
        }
        Ok(())
    }

    pub fn withdraw_handle(&self, handle: &StreamHandle) -> Result<(), EngineError> {
        self.check_host(handle)?;
        self.withdraw(handle.graph_id())
    }

    fn check_host(&self, handle: &StreamHandle) -> Result<(), EngineError> {
        if handle.host() == self.host {
            Ok(())
        } else {
            Err(EngineError::UnknownHandle(handle.to_string()))
        }
    }

    pub fn is_live(&self, handle: &StreamHandle) -> bool {
        handle.host() == self.host
            && self
                .shared(handle.graph_id())
                .is_some_and(|s| s.live.load(Ordering::Acquire))
    }

    pub fn output_schema(&self, handle: &StreamHandle) -> Option<Schema> {
        self.check_host(handle).ok()?;
        self.shared(handle.graph_id()).map(|s| s.output.clone())
    }

    /// Receives output emitted from now on.
    pub fn subscribe(&self, handle: &StreamHandle) -> Result<Subscription, EngineError> {
        self.check_host(handle)?;
        let dead = || EngineError::UnknownHandle(handle.to_string());
        let shared = self.shared(handle.graph_id()).ok_or_else(dead)?;
        let queue = Arc::new(SubscriberQueue::new(self.queue_capacity));
        {
            let mut subs = shared.subscribers();
            if !shared.live.load(Ordering::Acquire) {
                return Err(dead());
            }
            subs.push(Arc::clone(&queue));
        }
        Ok(Subscription {
            queue,
            schema: shared.output.clone(),
            handle: handle.clone(),
        })
    }

    pub fn deployment_count(&self) -> usize {
        self.deployments
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .len()
    }
}

impl SchemaCatalog for Engine {
    fn schema(&self, stream: &str) -> Option<Schema> {
        self.slot(stream).ok().map(|s| s.schema.clone())
    }
}
