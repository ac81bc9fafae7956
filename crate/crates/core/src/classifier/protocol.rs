//! Line-delimited JSON protocol for external classifier backends.
//!
//! Each request is one UTF-8 JSON object per line, `{"id", "cmd", "payload"}`;
//! each response echoes the id with `"status": "ok"` and a payload, or
//! `"status": "error"` and an error object carrying a machine-readable code.
//! Commands are `info`, `train`, `predict` and `shutdown`. Lines longer than
//! [`MAX_MESSAGE_BYTES`] are answered with `too_large` and skipped.
//!
//! This module holds the client used by [`Backend`](super::Backend), a server
//! loop backed by the builtin model, and a conformance suite that exercises
//! any endpoint.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BuiltinModel, Hyperparams, LabeledText};
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: &str = "1";
pub const MAX_MESSAGE_BYTES: usize = 16 * 1024 * 1024;
pub const CAPABILITIES: [&str; 4] = ["info", "train", "predict", "shutdown"];

const TRANSCRIPT_LINES: usize = 8;
const STDERR_LINES: usize = 20;
const SHUTDOWN_GRACE: Duration = Duration::from_secs(5);
/// How far a returned probability row may sum away from 1.
const PROBABILITY_TOLERANCE: f64 = 1e-6;
const DISCONNECT_GRACE: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Unsupported,
    NotFound,
    Parse,
    TooLarge,
    Invalid,
    Internal,
    #[serde(other)]
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
    /// Byte offset of a JSON parse error within the offending line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: String,
    pub cmd: String,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: Value,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl Response {
    fn ok(id: Value, payload: Value) -> Self {
        Response {
            id,
            status: Status::Ok,
            payload: Some(payload),
            error: None,
        }
    }

    fn error(id: Value, code: ErrorCode, message: impl Into<String>, offset: Option<usize>) -> Self {
        Response {
            id,
            status: Status::Error,
            payload: None,
            error: Some(ErrorBody {
                code,
                message: message.into(),
                offset,
            }),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainPayload {
    examples: Vec<LabeledText>,
    #[serde(default)]
    hyperparams: Hyperparams,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictPayload {
    model_id: String,
    texts: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct PredictReply {
    #[serde(default)]
    labels: Option<Vec<String>>,
    probs: Vec<Vec<f64>>,
}

enum Line {
    Eof,
    Data,
    TooLarge,
}

/// Read one `\n`-terminated line into `buf` (terminator stripped), reading
/// at most [`MAX_MESSAGE_BYTES`] of it; the rest of an oversized line is
/// consumed and discarded.
fn read_line_limited(reader: &mut impl BufRead, buf: &mut Vec<u8>) -> io::Result<Line> {
    buf.clear();
    let n = reader.by_ref().take(MAX_MESSAGE_BYTES as u64 + 1).read_until(b'\n', buf)?;
    if n == 0 {
        return Ok(Line::Eof);
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
        if buf.last() == Some(&b'\r') {
            buf.pop();
        }
        return Ok(Line::Data);
    }
    if buf.len() > MAX_MESSAGE_BYTES {
        reader.skip_until(b'\n')?;
        buf.clear();
        return Ok(Line::TooLarge);
    }
    Ok(Line::Data)
}

fn write_json_line(writer: &mut impl Write, value: &impl Serialize) -> io::Result<()> {
    let mut line = serde_json::to_vec(value).map_err(io::Error::other)?;
    line.push(b'\n');
    writer.write_all(&line)?;
    writer.flush()
}

/// Server state for the builtin backend.
#[derive(Default)]
struct BuiltinServer {
    models: HashMap<String, BuiltinModel>,
    trained: u64,
}

impl BuiltinServer {
    fn handle(&mut self, line: &[u8]) -> (Response, bool) {
        let value: Value = match serde_json::from_slice(line) {
            Ok(v) => v,
            Err(e) => {
                let offset = byte_offset(line, e.line(), e.column());
                return (Response::error(Value::Null, ErrorCode::Parse, e.to_string(), Some(offset)), false);
            }
        };
        let id = value.get("id").cloned().unwrap_or(Value::Null);
        let request: Request = match serde_json::from_value(value) {
            Ok(r) => r,
            Err(e) => return (Response::error(id, ErrorCode::Invalid, e.to_string(), None), false),
        };
        let id = Value::String(request.id.clone());
        match request.cmd.as_str() {
            "info" => (
                Response::ok(
                    id,
                    json!({
                        "protocol_version": PROTOCOL_VERSION,
                        "backend": "builtin",
                        "capabilities": CAPABILITIES,
                    }),
                ),
                false,
            ),
            "train" => (self.train(id, request.payload), false),
            "predict" => (self.predict(id, request.payload), false),
            "shutdown" => (Response::ok(id, json!({})), true),
            other => (
                Response::error(id, ErrorCode::Unsupported, format!("unsupported command {other:?}"), None),
                false,
            ),
        }
    }

    fn train(&mut self, id: Value, payload: Value) -> Response {
        let payload: TrainPayload = match serde_json::from_value(payload) {
            Ok(p) => p,
            Err(e) => return Response::error(id, ErrorCode::Invalid, e.to_string(), None),
        };
        if payload.examples.is_empty() {
            return Response::error(id, ErrorCode::Invalid, "no training examples", None);
        }
        match BuiltinModel::train(&payload.examples, &payload.hyperparams) {
            Ok(model) => {
                self.trained += 1;
                let model_id = format!("m{}", self.trained);
                let labels = model.labels.clone();
                self.models.insert(model_id.clone(), model);
                Response::ok(id, json!({ "model_id": model_id, "labels": labels }))
            }
            Err(e) => Response::error(id, ErrorCode::Invalid, e.to_string(), None),
        }
    }

    fn predict(&self, id: Value, payload: Value) -> Response {
        let payload: PredictPayload = match serde_json::from_value(payload) {
            Ok(p) => p,
            Err(e) => return Response::error(id, ErrorCode::Invalid, e.to_string(), None),
        };
        let Some(model) = self.models.get(&payload.model_id) else {
            return Response::error(
                id,
                ErrorCode::NotFound,
                format!("unknown model {:?}", payload.model_id),
                None,
            );
        };
        let probs: Vec<Vec<f64>> = payload
            .texts
            .iter()
            .map(|t| model.predict(t).probabilities_for(&model.labels))
            .collect();
        Response::ok(id, json!({ "labels": model.labels, "probs": probs }))
    }
}

/// serde_json reports 1-based line and column; the column counts bytes.
fn byte_offset(data: &[u8], line: usize, column: usize) -> usize {
    let line_start: usize = data
        .split(|&b| b == b'\n')
        .take(line.saturating_sub(1))
        .map(|l| l.len() + 1)
        .sum();
    (line_start + column.saturating_sub(1)).min(data.len())
}

/// Serve the protocol with the builtin backend until `shutdown` or end of
/// input. Returns whether a shutdown was requested.
pub fn serve(mut reader: impl BufRead, mut writer: impl Write) -> io::Result<bool> {
    let mut server = BuiltinServer::default();
    let mut buf = Vec::new();
    loop {
        let (response, stop) = match read_line_limited(&mut reader, &mut buf)? {
            Line::Eof => return Ok(false),
            Line::TooLarge => (
                Response::error(
                    Value::Null,
                    ErrorCode::TooLarge,
                    format!("message exceeds {MAX_MESSAGE_BYTES} bytes"),
                    None,
                ),
                false,
            ),
            Line::Data if buf.iter().all(u8::is_ascii_whitespace) => continue,
            Line::Data => server.handle(&buf),
        };
        write_json_line(&mut writer, &response)?;
        if stop {
            return Ok(true);
        }
    }
}

/// Serve connections one at a time until a client sends `shutdown`.
pub fn serve_tcp(listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let reader = BufReader::new(stream.try_clone()?);
        if serve(reader, stream)? {
            return Ok(());
        }
    }
    Ok(())
}

/// Where an external backend lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "transport", rename_all = "snake_case")]
pub enum Endpoint {
    /// A subprocess speaking the protocol on stdin/stdout.
    Stdio { command: Vec<String> },
    Tcp { address: String },
    /// The builtin server on a thread in this process, reached through pipes.
    Loopback,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Stdio { command } => write!(f, "{}", command.join(" ")),
            Endpoint::Tcp { address } => write!(f, "tcp://{address}"),
            Endpoint::Loopback => f.write_str("loopback"),
        }
    }
}

impl FromStr for Endpoint {
    type Err = Error;

    /// `tcp://host:port`, `loopback`, or a whitespace-separated command line.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(address) = s.strip_prefix("tcp://") {
            return Ok(Endpoint::Tcp {
                address: address.to_owned(),
            });
        }
        if s == "loopback" {
            return Ok(Endpoint::Loopback);
        }
        let command: Vec<String> = s.split_whitespace().map(str::to_owned).collect();
        if command.is_empty() {
            return Err(Error::validation("empty backend command"));
        }
        Ok(Endpoint::Stdio { command })
    }
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Option<Box<dyn Write + Send>>,
    child: Option<Child>,
    server: Option<JoinHandle<io::Result<bool>>>,
    stderr: Arc<Mutex<VecDeque<String>>>,
    stderr_reader: Option<JoinHandle<()>>,
    transcript: VecDeque<String>,
}

impl Connection {
    fn open(endpoint: &Endpoint) -> Result<Self> {
        let stderr = Arc::new(Mutex::new(VecDeque::new()));
        let conn = match endpoint {
            Endpoint::Stdio { command } => {
                let (program, args) = command
                    .split_first()
                    .ok_or_else(|| Error::validation("empty backend command"))?;
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::piped())
                    .spawn()
                    .map_err(|e| Error::backend(format!("cannot start {program:?}: {e}")))?;
                let stdout = child.stdout.take().expect("stdout is piped");
                let stdin = child.stdin.take().expect("stdin is piped");
                let child_stderr = child.stderr.take().expect("stderr is piped");
                let sink = Arc::clone(&stderr);
                let stderr_reader = std::thread::spawn(move || {
                    for line in BufReader::new(child_stderr).lines().map_while(io::Result::ok) {
                        let mut tail = sink.lock().expect("stderr buffer lock");
                        if tail.len() == STDERR_LINES {
                            tail.pop_front();
                        }
                        tail.push_back(line);
                    }
                });
                Connection {
                    reader: Box::new(BufReader::new(stdout)),
                    writer: Some(Box::new(stdin)),
                    child: Some(child),
                    server: None,
                    stderr,
                    stderr_reader: Some(stderr_reader),
                    transcript: VecDeque::new(),
                }
            }
            Endpoint::Tcp { address } => {
                let stream = TcpStream::connect(address)
                    .map_err(|e| Error::backend(format!("cannot connect to {address}: {e}")))?;
                let read_half = stream.try_clone().map_err(|e| Error::backend(e.to_string()))?;
                Connection {
                    reader: Box::new(BufReader::new(read_half)),
                    writer: Some(Box::new(stream)),
                    child: None,
                    server: None,
                    stderr,
                    stderr_reader: None,
                    transcript: VecDeque::new(),
                }
            }
            Endpoint::Loopback => {
                let (req_rx, req_tx) = io::pipe().map_err(|e| Error::backend(e.to_string()))?;
                let (resp_rx, resp_tx) = io::pipe().map_err(|e| Error::backend(e.to_string()))?;
                let server = std::thread::spawn(move || serve(BufReader::new(req_rx), resp_tx));
                Connection {
                    reader: Box::new(BufReader::new(resp_rx)),
                    writer: Some(Box::new(req_tx)),
                    child: None,
                    server: Some(server),
                    stderr,
                    stderr_reader: None,
                    transcript: VecDeque::new(),
                }
            }
        };
        Ok(conn)
    }

    fn note(&mut self, direction: &str, line: &[u8]) {
        const MAX: usize = 240;
        let text = String::from_utf8_lossy(&line[..line.len().min(MAX)]);
        let ellipsis = if line.len() > MAX { "..." } else { "" };
        if self.transcript.len() == TRANSCRIPT_LINES {
            self.transcript.pop_front();
        }
        self.transcript.push_back(format!("{direction} {text}{ellipsis}"));
    }

    fn diagnostics(&mut self) -> Vec<String> {
        let mut out: Vec<String> = self.transcript.iter().cloned().collect();
        if let Some(child) = &mut self.child {
            if let Ok(Some(status)) = child.try_wait() {
                out.push(format!("backend process exited: {status}"));
            }
        }
        let stderr = self.stderr.lock().expect("stderr buffer lock");
        out.extend(stderr.iter().map(|l| format!("stderr: {l}")));
        out
    }

    /// Like [`fail`](Self::fail), for a peer that went away: give a dying
    /// child a moment to exit and flush its stderr first.
    fn fail_disconnected(&mut self, message: impl Into<String>) -> Error {
        let deadline = Instant::now() + DISCONNECT_GRACE;
        if let Some(child) = &mut self.child {
            while matches!(child.try_wait(), Ok(None)) && Instant::now() < deadline {
                std::thread::sleep(Duration::from_millis(10));
            }
        }
        if let Some(reader) = self.stderr_reader.take() {
            while !reader.is_finished() && Instant::now() < deadline {
                std::thread::sleep(Duration::from_millis(10));
            }
            if reader.is_finished() {
                let _ = reader.join();
            }
        }
        self.fail(message)
    }

    fn fail(&mut self, message: impl Into<String>) -> Error {
        Error::Backend {
            message: message.into(),
            diagnostics: self.diagnostics(),
        }
    }

    fn exchange(&mut self, line: &[u8]) -> Result<Response> {
        self.note(">", line);
        let Some(writer) = self.writer.as_mut() else {
            return Err(self.fail("connection is closed"));
        };
        let sent = writer
            .write_all(line)
            .and_then(|_| writer.write_all(b"\n"))
            .and_then(|_| writer.flush());
        if let Err(e) = sent {
            return Err(self.fail_disconnected(format!("cannot write request: {e}")));
        }
        let mut buf = Vec::new();
        match read_line_limited(&mut self.reader, &mut buf) {
            Ok(Line::Data) => {}
            Ok(Line::Eof) => return Err(self.fail_disconnected("backend closed the connection")),
            Ok(Line::TooLarge) => return Err(self.fail("response exceeds the message size limit")),
            Err(e) => return Err(self.fail(format!("cannot read response: {e}"))),
        }
        self.note("<", &buf);
        serde_json::from_slice(&buf).map_err(|e| self.fail(format!("malformed response: {e}")))
    }

    /// Close our side and wait for the backend to go away.
    fn close(&mut self) -> Option<bool> {
        self.writer = None;
        let mut exited_cleanly = None;
        if let Some(mut child) = self.child.take() {
            let deadline = Instant::now() + SHUTDOWN_GRACE;
            loop {
                match child.try_wait() {
                    Ok(Some(status)) => {
                        exited_cleanly = Some(status.success());
                        break;
                    }
                    Ok(None) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(10)),
                    _ => {
                        let _ = child.kill();
                        let _ = child.wait();
                        exited_cleanly = Some(false);
                        break;
                    }
                }
            }
        }
        if let Some(server) = self.server.take() {
            exited_cleanly = Some(matches!(server.join(), Ok(Ok(_))));
        }
        exited_cleanly
    }
}

/// Client for one external backend connection. Requests are serialized
/// through a mutex, so a client can be shared between threads.
pub struct ExternalClient {
    endpoint: Endpoint,
    conn: Mutex<Connection>,
    next_id: AtomicU64,
    info: Value,
}

impl fmt::Debug for ExternalClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExternalClient").field("endpoint", &self.endpoint).finish()
    }
}

impl ExternalClient {
    /// Open a connection and perform the `info` handshake, which must report
    /// protocol version [`PROTOCOL_VERSION`].
    pub fn connect(endpoint: &Endpoint) -> Result<Self> {
        let mut client = ExternalClient {
            endpoint: endpoint.clone(),
            conn: Mutex::new(Connection::open(endpoint)?),
            next_id: AtomicU64::new(1),
            info: Value::Null,
        };
        let info = client.request("info", json!({}))?;
        let version = info.get("protocol_version").and_then(Value::as_str);
        if version != Some(PROTOCOL_VERSION) {
            let mut conn = client.conn.lock().expect("connection lock");
            return Err(conn.fail(format!(
                "backend speaks protocol version {version:?}, expected {PROTOCOL_VERSION:?}"
            )));
        }
        client.info = info;
        Ok(client)
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// Payload of the handshake `info` response.
    pub fn info(&self) -> &Value {
        &self.info
    }

    /// Send one raw line and return the parsed response, whatever its status.
    pub fn exchange_raw(&self, line: &[u8]) -> Result<Response> {
        self.conn.lock().expect("connection lock").exchange(line)
    }

    /// Send a request and return the payload of a successful response.
    pub fn request(&self, cmd: &str, payload: Value) -> Result<Value> {
        let id = format!("r{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let request = Request {
            id: id.clone(),
            cmd: cmd.to_owned(),
            payload,
        };
        let line = serde_json::to_vec(&request)?;
        let mut conn = self.conn.lock().expect("connection lock");
        let response = conn.exchange(&line)?;
        if response.id != Value::String(id.clone()) {
            return Err(conn.fail(format!("response id {} does not match request id {id:?}", response.id)));
        }
        match (response.status, response.payload, response.error) {
            (Status::Ok, payload, _) => Ok(payload.unwrap_or(Value::Null)),
            (Status::Error, _, Some(err)) => Err(conn.fail(format!("{cmd} failed ({:?}): {}", err.code, err.message))),
            (Status::Error, _, None) => Err(conn.fail(format!("{cmd} failed without an error object"))),
        }
    }

    pub fn train(&self, examples: &[LabeledText], hp: &Hyperparams) -> Result<(String, Vec<String>)> {
        let payload = serde_json::to_value(TrainPayload {
            examples: examples.to_vec(),
            hyperparams: *hp,
        })?;
        let reply = self.request("train", payload)?;
        let model_id = reply
            .get("model_id")
            .and_then(Value::as_str)
            .ok_or_else(|| self.fail("train response has no model_id"))?
            .to_owned();
        let labels = match reply.get("labels") {
            Some(labels) => serde_json::from_value(labels.clone())?,
            None => examples
                .iter()
                .map(|e| e.label.clone())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        Ok((model_id, labels))
    }

    /// Probabilities per text, aligned with `labels`.
    pub fn predict(&self, model_id: &str, texts: &[&str], labels: &[String]) -> Result<Vec<Vec<f64>>> {
        let payload = json!({ "model_id": model_id, "texts": texts });
        let reply: PredictReply = serde_json::from_value(self.request("predict", payload)?)?;
        if reply.probs.len() != texts.len() {
            return Err(self.fail(format!("{} texts but {} probability rows", texts.len(), reply.probs.len())));
        }
        for row in &reply.probs {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
                return Err(self.fail(format!("probability row {row:?} is not a distribution")));
            }
        }
        let Some(reply_labels) = reply.labels else {
            if reply.probs.iter().any(|row| row.len() != labels.len()) {
                return Err(self.fail("probability row length does not match the model labels"));
            }
            return Ok(reply.probs);
        };
        let position: HashMap<&str, usize> = reply_labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        if let Some(extra) = reply_labels.iter().find(|l| !labels.contains(l)) {
            return Err(self.fail(format!("predict response has unexpected label {extra:?}")));
        }
        let columns: Vec<Option<usize>> = labels.iter().map(|l| position.get(l.as_str()).copied()).collect();
        reply
            .probs
            .into_iter()
            .map(|row| {
                if row.len() != reply_labels.len() {
                    return Err(self.fail("probability row length does not match labels"));
                }
                // labels the backend never saw in training get zero mass
                Ok(columns.iter().map(|c| c.map_or(0.0, |c| row[c])).collect())
            })
            .collect()
    }

    /// Request shutdown and wait for the backend to exit. Returns whether it
    /// exited cleanly, when that is observable.
    pub fn shutdown(&self) -> Result<Option<bool>> {
        self.request("shutdown", json!({}))?;
        Ok(self.conn.lock().expect("connection lock").close())
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        self.conn.lock().expect("connection lock").fail(message)
    }
}

impl Drop for ExternalClient {
    fn drop(&mut self) {
        let conn = self.conn.get_mut().expect("connection lock");
        if conn.writer.is_some() {
            let line = serde_json::to_vec(&json!({"id": "drop", "cmd": "shutdown", "payload": {}}))
                .expect("static request serializes");
            let _ = conn.exchange(&line);
            conn.close();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: std::result::Result<String, String>) -> ConformanceCheck {
    let (passed, detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    ConformanceCheck { name, passed, detail }
}

fn expect_error(response: Result<Response>, code: ErrorCode) -> std::result::Result<Response, String> {
    let response = response.map_err(|e| e.to_string())?;
    match &response.error {
        Some(err) if response.status == Status::Error && err.code == code => Ok(response),
        _ => Err(format!("expected error code {code:?}, got {}", json!(response))),
    }
}

/// Run the protocol conformance checks against `endpoint`. The backend is
/// shut down at the end. Connection failures are returned as errors; every
/// other problem is reported as a failed check.
pub fn run_conformance(endpoint: &Endpoint) -> Result<Vec<ConformanceCheck>> {
    let client = ExternalClient::connect(endpoint)?;
    let mut checks = vec![check("handshake", Ok(format!("info: {}", client.info())))];

    checks.push(check(
        "id_echo",
        client
            .exchange_raw(br#"{"id":"conformance-echo-42","cmd":"info","payload":{}}"#)
            .map_err(|e| e.to_string())
            .and_then(|r| {
                if r.id == json!("conformance-echo-42") && r.status == Status::Ok {
                    Ok("id echoed".to_owned())
                } else {
                    Err(format!("got {}", json!(r)))
                }
            }),
    ));

    checks.push(check(
        "unknown_command",
        expect_error(
            client.exchange_raw(br#"{"id":"c1","cmd":"frobnicate","payload":{}}"#),
            ErrorCode::Unsupported,
        )
        .map(|_| "unsupported".to_owned()),
    ));

    checks.push(check(
        "unknown_model",
        expect_error(
            client.exchange_raw(br#"{"id":"c2","cmd":"predict","payload":{"model_id":"no-such-model","texts":["x"]}}"#),
            ErrorCode::NotFound,
        )
        .map(|_| "not_found".to_owned()),
    ));

    let malformed = br#"{"id":"c3","cmd":}"#;
    checks.push(check(
        "malformed_json",
        expect_error(client.exchange_raw(malformed), ErrorCode::Parse).and_then(|r| {
            match r.error.and_then(|e| e.offset) {
                Some(offset) if offset <= malformed.len() => Ok(format!("parse error at byte {offset}")),
                other => Err(format!("missing or out-of-range offset {other:?}")),
            }
        }),
    ));

    let oversized = vec![b'a'; MAX_MESSAGE_BYTES + 1];
    checks.push(check(
        "oversized_message",
        expect_error(client.exchange_raw(&oversized), ErrorCode::TooLarge).and_then(|_| {
            client
                .request("info", json!({}))
                .map(|_| "too_large, stream still usable".to_owned())
                .map_err(|e| format!("stream unusable after oversized message: {e}"))
        }),
    ));

    checks.push(check("normalized_probabilities", normalization_check(&client)));

    checks.push(check(
        "clean_shutdown",
        match client.shutdown() {
            Ok(Some(true)) | Ok(None) => Ok("shut down".to_owned()),
            Ok(Some(false)) => Err(format!("backend did not exit cleanly within {SHUTDOWN_GRACE:?}")),
            Err(e) => Err(e.to_string()),
        },
    ));
    Ok(checks)
}

fn normalization_check(client: &ExternalClient) -> std::result::Result<String, String> {
    let examples: Vec<LabeledText> = (0..6)
        .flat_map(|i| {
            [
                LabeledText::new(format!("placa descamativa codo {i}"), "psoriasis"),
                LabeledText::new(format!("comedones cara {i}"), "acné"),
            ]
        })
        .collect();
    let hp = Hyperparams {
        batch_size: 4,
        learning_rate: 0.5,
        epochs: 5,
        ..Hyperparams::default()
    };
    let (model_id, _) = client.train(&examples, &hp).map_err(|e| e.to_string())?;
    let texts = ["placa en codo", "comedones", "texto sin relación"];
    // raw reply: the client would already reject rows off by more than 1e-6
    let reply = client
        .request("predict", json!({ "model_id": model_id, "texts": texts }))
        .map_err(|e| e.to_string())?;
    let rows: Vec<Vec<f64>> = serde_json::from_value(reply["probs"].clone()).map_err(|e| format!("probs: {e}"))?;
    if rows.len() != texts.len() {
        return Err(format!("{} texts but {} rows", texts.len(), rows.len()));
    }
    for row in &rows {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-5 || row.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(format!("row {row:?} is not a distribution"));
        }
    }
    Ok(format!("{} rows sum to 1", rows.len()))
}
