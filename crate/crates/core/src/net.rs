//! TCP transport for the gateway and the proxy.
//!
//! Every message is one UTF-8 document preceded by its byte length as a
//! 4-byte big-endian integer. Clients send XML documents:
//!
//! ```text
//! <Request>...</Request>                            access request
//! <Probe><Handle>uri</Handle></Probe>               liveness check
//! <Release><Handle>uri</Handle><Request>..</Request></Release>
//! <Subscribe><Handle>uri</Handle></Subscribe>
//! ```
//!
//! Replies are `key: value` lines. A request reply carries `status:` and,
//! when present, `handle:`, `warning:`, `explanation:`, `detail:`,
//! `timings:` and `cache:`. After a successful subscribe reply the server
//! stops framing and writes subscription records, one per line, ending
//! with `.eos`.

use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use roxmltree::Document;
use thiserror::Error;

use crate::engine::{decode_record, encode_record, StreamHandle, Subscription, EOS_LINE};
use crate::gateway::{Gateway, PhaseTimings, RequestOutcome, RequestStatus};
use crate::policy::AccessRequest;
use crate::predicate::{Warning, WarningKind};
use crate::proxy::{BackendError, CacheStatus, GatewayBackend, Proxy};
use crate::querygraph::{Field, FieldType, Schema, Tuple};
use crate::xml::{child, escape, text};

pub const MAX_FRAME: usize = 16 << 20;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error("frame is not UTF-8")]
    Utf8,
    #[error("bad reply: {0}")]
    Reply(String),
    #[error("server error: {0}")]
    Remote(String),
}

pub fn write_frame(w: &mut impl Write, doc: &str) -> Result<(), NetError> {
    if doc.len() > MAX_FRAME {
        return Err(NetError::FrameTooLarge(doc.len()));
    }
    w.write_all(&(doc.len() as u32).to_be_bytes())?;
    w.write_all(doc.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// `Ok(None)` on a clean end of stream before a length prefix.
pub fn read_frame(r: &mut impl Read) -> Result<Option<String>, NetError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < len.len() {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(NetError::FrameTooLarge(len));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map(Some).map_err(|_| NetError::Utf8)
}

/// A request reply as carried on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub outcome: RequestOutcome,
    pub cache: Option<CacheStatus>,
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

impl Reply {
    pub fn encode(&self) -> String {
        let o = &self.outcome;
        let mut lines = vec![format!("status: {}", o.status)];
        if let Some(h) = &o.handle {
            lines.push(format!("handle: {h}"));
        }
        if let Some(w) = &o.warning {
            lines.push(format!("warning: {}", w.kind.code()));
            if !w.explanation.is_empty() {
                lines.push(format!("explanation: {}", one_line(&w.explanation)));
            }
        }
        if let Some(d) = &o.detail {
            lines.push(format!("detail: {}", one_line(d)));
        }
        let t = &o.timings;
        lines.push(format!(
            "timings: {} {} {} {}",
            t.decision.as_nanos(),
            t.merge.as_nanos(),
            t.deploy.as_nanos(),
            t.total.as_nanos()
        ));
        if let Some(c) = self.cache {
            lines.push(format!("cache: {c}"));
        }
        lines.join("\n")
    }

    pub fn decode(doc: &str) -> Result<Reply, NetError> {
        let bad = |m: &str| NetError::Reply(m.to_string());
        let mut status = None;
        let mut outcome = RequestOutcome {
            status: RequestStatus::Denied,
            handle: None,
            warning: None,
            detail: None,
            timings: PhaseTimings::default(),
        };
        let mut cache = None;
        for line in doc.lines() {
            let (key, value) = line.split_once(": ").ok_or_else(|| bad(line))?;
            match key {
                "status" => {
                    if value == "error" {
                        return Err(NetError::Remote(String::new()));
                    }
                    status = Some(RequestStatus::parse(value).ok_or_else(|| bad(value))?);
                }
                "handle" => outcome.handle = Some(value.parse().map_err(|_| bad(value))?),
                "warning" => {
                    let kind = WarningKind::from_code(value).ok_or_else(|| bad(value))?;
                    outcome.warning = Some(Warning::new(kind, ""));
                }
                "explanation" => {
                    let w = outcome
                        .warning
                        .as_mut()
                        .ok_or_else(|| bad("explanation without warning"))?;
                    w.explanation = value.to_string();
                }
                "detail" => outcome.detail = Some(value.to_string()),
                "timings" => {
                    let ns: Vec<u64> = value
                        .split(' ')
                        .map(|v| v.parse().map_err(|_| bad(value)))
                        .collect::<Result<_, _>>()?;
                    let [d, m, p, t] = ns[..] else {
                        return Err(bad(value));
                    };
                    outcome.timings = PhaseTimings {
                        decision: Duration::from_nanos(d),
                        merge: Duration::from_nanos(m),
                        deploy: Duration::from_nanos(p),
                        total: Duration::from_nanos(t),
                    };
                }
                "cache" => cache = Some(CacheStatus::parse(value).ok_or_else(|| bad(value))?),
                _ => {}
            }
        }
        outcome.status = status.ok_or_else(|| bad("missing status"))?;
        Ok(Reply { outcome, cache })
    }
}

fn error_reply(msg: &str) -> String {
    format!("status: error\nexplanation: {}", one_line(msg))
}

/// Returns the explanation of an error reply, if `doc` is one.
fn remote_error(doc: &str) -> Option<String> {
    let mut lines = doc.lines();
    if lines.next()? != "status: error" {
        return None;
    }
    Some(
        lines
            .find_map(|l| l.strip_prefix("explanation: "))
            .unwrap_or("")
            .to_string(),
    )
}

fn schema_line(s: &Schema) -> String {
    let cols: Vec<String> = s
        .fields()
        .iter()
        .map(|f| format!("{}:{}", f.name, f.ty))
        .collect();
    format!("schema: {} {}", s.stream_name(), cols.join(" "))
}

fn parse_schema_line(line: &str) -> Option<Schema> {
    let mut parts = line.strip_prefix("schema: ")?.split(' ');
    let name = parts.next()?;
    let fields = parts
        .map(|p| {
            let (n, t) = p.split_once(':')?;
            Some(Field::new(n, FieldType::parse(t)?))
        })
        .collect::<Option<Vec<_>>>()?;
    Schema::new(name, fields).ok()
}

/// What a server needs from whatever it fronts.
pub trait Service: Send + Sync {
    fn request(&self, req: &AccessRequest) -> Result<Reply, String>;
    fn probe(&self, handle: &StreamHandle) -> Result<bool, String>;
    fn release(&self, handle: &StreamHandle, req: &AccessRequest) -> Result<(), String>;
    fn subscribe(&self, handle: &StreamHandle) -> Result<Subscription, String>;
}

impl Service for Gateway {
    fn request(&self, req: &AccessRequest) -> Result<Reply, String> {
        let outcome = self.handle_request(req).map_err(|e| e.to_string())?;
        Ok(Reply {
            outcome,
            cache: None,
        })
    }

    fn probe(&self, handle: &StreamHandle) -> Result<bool, String> {
        Ok(self.is_live(handle))
    }

    fn release(&self, handle: &StreamHandle, req: &AccessRequest) -> Result<(), String> {
        Gateway::release(self, handle, req).map_err(|e| e.to_string())
    }

    fn subscribe(&self, handle: &StreamHandle) -> Result<Subscription, String> {
        self.engine().subscribe(handle).map_err(|e| e.to_string())
    }
}

impl<B: GatewayBackend> Service for Proxy<B> {
    fn request(&self, req: &AccessRequest) -> Result<Reply, String> {
        let (outcome, cache) = self.proxy_request(req).map_err(|e| e.to_string())?;
        Ok(Reply {
            outcome,
            cache: Some(cache),
        })
    }

    fn probe(&self, handle: &StreamHandle) -> Result<bool, String> {
        Proxy::probe(self, handle).map_err(|e| e.to_string())
    }

    fn release(&self, handle: &StreamHandle, req: &AccessRequest) -> Result<(), String> {
        Proxy::release(self, handle, req).map_err(|e| e.to_string())
    }

    fn subscribe(&self, handle: &StreamHandle) -> Result<Subscription, String> {
        Err(format!("subscribe to {handle} at its gateway"))
    }
}

enum Command {
    Request(AccessRequest),
    Probe(StreamHandle),
    Release(StreamHandle, AccessRequest),
    Subscribe(StreamHandle),
}

fn parse_command(doc: &str) -> Result<Command, String> {
    let parsed = match Document::parse(doc) {
        Ok(d) => d,
        // Possibly a hand-written request that needs repair.
        Err(_) => {
            return AccessRequest::from_xml(doc)
                .map(Command::Request)
                .map_err(|e| e.to_string())
        }
    };
    let root = parsed.root_element();
    let handle = || -> Result<StreamHandle, String> {
        let node = child(root, "Handle").ok_or("missing <Handle>")?;
        text(node).parse().map_err(|e| format!("{e}"))
    };
    match root.tag_name().name() {
        "Request" => AccessRequest::from_xml(doc)
            .map(Command::Request)
            .map_err(|e| e.to_string()),
        "Probe" => Ok(Command::Probe(handle()?)),
        "Subscribe" => Ok(Command::Subscribe(handle()?)),
        "Release" => {
            let req = child(root, "Request").ok_or("missing <Request>")?;
            let req = AccessRequest::from_xml(&doc[req.range()]).map_err(|e| e.to_string())?;
            Ok(Command::Release(handle()?, req))
        }
        other => Err(format!("unknown document <{other}>")),
    }
}

fn serve_connection(stream: TcpStream, service: &dyn Service) -> Result<(), NetError> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    while let Some(doc) = read_frame(&mut reader)? {
        let reply = match parse_command(&doc) {
            Err(e) => error_reply(&e),
            Ok(Command::Request(req)) => match service.request(&req) {
                Ok(r) => r.encode(),
                Err(e) => error_reply(&e),
            },
            Ok(Command::Probe(h)) => match service.probe(&h) {
                Ok(live) => format!("status: {}", if live { "live" } else { "dead" }),
                Err(e) => error_reply(&e),
            },
            Ok(Command::Release(h, req)) => match service.release(&h, &req) {
                Ok(()) => "status: released".to_string(),
                Err(e) => error_reply(&e),
            },
            Ok(Command::Subscribe(h)) => match service.subscribe(&h) {
                Ok(sub) => {
                    write_frame(
                        &mut writer,
                        &format!("status: subscribed\n{}", schema_line(sub.schema())),
                    )?;
                    return stream_records(sub, writer);
                }
                Err(e) => error_reply(&e),
            },
        };
        write_frame(&mut writer, &reply)?;
    }
    Ok(())
}

fn stream_records(sub: Subscription, mut w: BufWriter<TcpStream>) -> Result<(), NetError> {
    let schema = sub.schema().clone();
    loop {
        // Flush whenever the queue momentarily runs dry.
        let t = match sub.recv_timeout(Duration::ZERO) {
            Ok(Some(t)) => Some(t),
            Ok(None) => None,
            Err(()) => {
                w.flush()?;
                sub.recv()
            }
        };
        match t {
            Some(t) => writeln!(w, "{}", encode_record(&schema, &t))?,
            None => {
                writeln!(w, "{EOS_LINE}")?;
                w.flush()?;
                return Ok(());
            }
        }
    }
}

/// A listening server; each connection gets its own thread.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl Server {
    pub fn spawn(addr: impl ToSocketAddrs, service: Arc<dyn Service>) -> io::Result<Server> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let accept = thread::Builder::new()
            .name(format!("accept-{addr}"))
            .spawn(move || {
                for conn in listener.incoming() {
                    if flag.load(Ordering::Acquire) {
                        break;
                    }
                    let conn = match conn {
                        Ok(c) => c,
                        Err(e) => {
                            log::warn!("accept: {e}");
                            continue;
                        }
                    };
                    let _ = conn.set_nodelay(true);
                    let service = service.clone();
                    let spawned = thread::Builder::new().name("conn".into()).spawn(move || {
                        let peer = conn.peer_addr().ok();
                        if let Err(e) = serve_connection(conn, service.as_ref()) {
                            log::debug!("connection {peer:?}: {e}");
                        }
                    });
                    if let Err(e) = spawned {
                        log::warn!("cannot spawn connection thread: {e}");
                    }
                }
            })?;
        Ok(Server {
            addr,
            stop,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop ends.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    /// Stops accepting; open connections run to completion.
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::Release);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_accepting();
        }
    }
}

/// A connection to a gateway or proxy server.
pub struct Client {
    addr: SocketAddr,
    conn: Mutex<Option<TcpStream>>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Client, NetError> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no address"))?;
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Client {
            addr,
            conn: Mutex::new(Some(stream)),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// One round trip. A broken connection is reopened once.
    fn call(&self, doc: &str) -> Result<String, NetError> {
        let mut conn = self.conn.lock().unwrap_or_else(|e| e.into_inner());
        for attempt in 0..2 {
            if conn.is_none() {
                let s = TcpStream::connect(self.addr)?;
                s.set_nodelay(true)?;
                *conn = Some(s);
            }
            let stream = conn.as_mut().expect("connected above");
            let result = write_frame(stream, doc).and_then(|()| read_frame(stream));
            match result {
                Ok(Some(reply)) => {
                    return match remote_error(&reply) {
                        Some(msg) => Err(NetError::Remote(msg)),
                        None => Ok(reply),
                    }
                }
                Ok(None) | Err(NetError::Io(_)) if attempt == 0 => *conn = None,
                Ok(None) => return Err(NetError::Reply("connection closed".into())),
                Err(e) => return Err(e),
            }
        }
        unreachable!()
    }

    pub fn request(&self, req: &AccessRequest) -> Result<Reply, NetError> {
        Reply::decode(&self.call(&req.to_xml())?)
    }

    pub fn probe(&self, handle: &StreamHandle) -> Result<bool, NetError> {
        let doc = format!("<Probe><Handle>{}</Handle></Probe>", escape(handle.uri()));
        match self.call(&doc)?.as_str() {
            "status: live" => Ok(true),
            "status: dead" => Ok(false),
            other => Err(NetError::Reply(other.to_string())),
        }
    }

    pub fn release(&self, handle: &StreamHandle, req: &AccessRequest) -> Result<(), NetError> {
        let doc = format!(
            "<Release><Handle>{}</Handle>{}</Release>",
            escape(handle.uri()),
            req.to_xml()
        );
        match self.call(&doc)?.as_str() {
            "status: released" => Ok(()),
            other => Err(NetError::Reply(other.to_string())),
        }
    }

    /// Opens a dedicated connection streaming the handle's tuples.
    pub fn subscribe(&self, handle: &StreamHandle) -> Result<RemoteSubscription, NetError> {
        let mut stream = TcpStream::connect(self.addr)?;
        write_frame(
            &mut stream,
            &format!(
                "<Subscribe><Handle>{}</Handle></Subscribe>",
                escape(handle.uri())
            ),
        )?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let reply =
            read_frame(&mut reader)?.ok_or_else(|| NetError::Reply("connection closed".into()))?;
        if let Some(msg) = remote_error(&reply) {
            return Err(NetError::Remote(msg));
        }
        let mut lines = reply.lines();
        if lines.next() != Some("status: subscribed") {
            return Err(NetError::Reply(reply));
        }
        let schema = lines
            .next()
            .and_then(parse_schema_line)
            .ok_or_else(|| NetError::Reply(reply.clone()))?;
        Ok(RemoteSubscription {
            schema,
            reader,
            stream,
            done: false,
        })
    }
}

impl GatewayBackend for Client {
    fn request(&self, req: &AccessRequest) -> Result<crate::gateway::RequestOutcome, BackendError> {
        Client::request(self, req)
            .map(|r| r.outcome)
            .map_err(backend_error)
    }

    fn probe(&self, handle: &StreamHandle) -> Result<bool, BackendError> {
        Client::probe(self, handle).map_err(backend_error)
    }

    fn release(&self, handle: &StreamHandle, req: &AccessRequest) -> Result<(), BackendError> {
        Client::release(self, handle, req).map_err(backend_error)
    }
}

fn backend_error(e: NetError) -> BackendError {
    match e {
        NetError::Io(e) => BackendError::Unreachable(e.to_string()),
        other => BackendError::Protocol(other.to_string()),
    }
}

/// Tuples of a subscription received over TCP.
pub struct RemoteSubscription {
    schema: Schema,
    reader: BufReader<TcpStream>,
    stream: TcpStream,
    done: bool,
}

impl RemoteSubscription {
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    /// `Ok(None)` after the end-of-stream line.
    pub fn next_tuple(&mut self) -> Result<Option<Tuple>, NetError> {
        if self.done {
            return Ok(None);
        }
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            self.done = true;
            return Err(NetError::Reply("stream ended without .eos".into()));
        }
        let t = decode_record(&self.schema, &line).map_err(|e| NetError::Reply(e.to_string()))?;
        self.done = t.is_none();
        Ok(t)
    }
}

impl Iterator for RemoteSubscription {
    type Item = Result<Tuple, NetError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_tuple().transpose()
    }
}

impl Drop for RemoteSubscription {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}
