//! Newline-delimited JSON bridge to an out-of-process model.
//!
//! ```text
//! → {"type":"hello","dim":m}
//! ← {"type":"ready","dim":m}
//! → {"type":"evaluate","id":k,"batch":[[n·m row-major floats], …]}
//! ← {"type":"scores","id":k,"scores":[…]}   or   {"type":"error","id":k,"message":…}
//! ```
//!
//! Floats are written with 17 significant digits. Request ids are strictly
//! increasing and at most one request is in flight per connection.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use mase_core::{BlackBoxModel, EmbeddingMatrix64, ModelScore};
use serde_json::Value;

use crate::error::{HarnessError, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// `host:port` of a listening server.
    Tcp(String),
    /// Program and arguments; the protocol runs over its stdin/stdout.
    Command(Vec<String>),
}

pub struct BridgeClient {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    line: usize,
    next_id: u64,
    dim: usize,
    timeout: Duration,
    child: Option<Child>,
}

fn excerpt(s: &str) -> String {
    let mut out: String = s.chars().take(120).collect();
    if out.len() < s.len() {
        out.push('…');
    }
    out
}

impl BridgeClient {
    /// Connects and performs the handshake for dimension `dim`.
    pub fn connect(endpoint: &Endpoint, dim: usize, timeout: Duration) -> Result<Self> {
        let mut client = match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr)?;
                stream.set_nodelay(true)?;
                let reader = stream.try_clone()?;
                Self::from_streams(reader, stream, dim, timeout)
            }
            Endpoint::Command(argv) => {
                let (program, args) = argv
                    .split_first()
                    .ok_or_else(|| HarnessError::Config("empty bridge command".into()))?;
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                let mut c = Self::from_streams(stdout, stdin, dim, timeout);
                c.child = Some(child);
                c
            }
        };
        client.handshake()?;
        Ok(client)
    }

    /// Wraps raw streams without performing the handshake.
    pub fn from_streams(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        dim: usize,
        timeout: Duration,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Self {
            writer: Box::new(writer),
            lines: rx,
            line: 0,
            next_id: 1,
            dim,
            timeout,
            child: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Lines received from the server so far.
    pub fn lines_read(&self) -> usize {
        self.line
    }

    fn violation(&self, message: String) -> HarnessError {
        HarnessError::Bridge {
            line: self.line,
            message,
        }
    }

    pub fn send_raw(&mut self, line: &str) -> Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }

    /// Next server message as a JSON object.
    pub fn receive(&mut self) -> Result<serde_json::Map<String, Value>> {
        let text = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(text)) => text,
            Ok(Err(e)) => return Err(e.into()),
            Err(RecvTimeoutError::Timeout) => return Err(HarnessError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(self.violation("connection closed by server".into()));
            }
        };
        self.line += 1;
        match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(map)) => Ok(map),
            Ok(_) => Err(self.violation(format!("expected a JSON object, got {:?}", excerpt(&text)))),
            Err(e) => Err(self.violation(format!("malformed message {:?}: {e}", excerpt(&text)))),
        }
    }

    fn message_type<'a>(&self, msg: &'a serde_json::Map<String, Value>) -> Result<&'a str> {
        msg.get("type").and_then(Value::as_str).ok_or_else(|| {
            self.violation(format!(
                "message without a type: {}",
                excerpt(&Value::Object(msg.clone()).to_string())
            ))
        })
    }

    fn server_error(&self, msg: &serde_json::Map<String, Value>) -> HarnessError {
        let text = msg.get("message").and_then(Value::as_str).unwrap_or("(no message)");
        let id = msg.get("id").map_or_else(|| "none".to_string(), Value::to_string);
        self.violation(format!("server error for request {id}: {}", excerpt(text)))
    }

    /// Sends `hello` with `dim` and waits for `ready`.
    pub fn hello(&mut self, dim: usize) -> Result<()> {
        self.send_raw(&format!("{{\"type\":\"hello\",\"dim\":{dim}}}"))?;
        let msg = self.receive()?;
        match self.message_type(&msg)? {
            "ready" => {
                let got = msg.get("dim").and_then(Value::as_u64);
                if got != Some(dim as u64) {
                    return Err(self.violation(format!("server is ready for dim {got:?}, client needs {dim}")));
                }
                Ok(())
            }
            "error" => Err(self.server_error(&msg)),
            other => Err(self.violation(format!("expected ready, got {other:?}"))),
        }
    }

    fn handshake(&mut self) -> Result<()> {
        self.hello(self.dim)
    }

    /// Formats an evaluate request; matrices are flattened row-major.
    pub fn request_line(id: u64, batch: &[EmbeddingMatrix64]) -> String {
        let mut s = format!("{{\"type\":\"evaluate\",\"id\":{id},\"batch\":[");
        for (k, e) in batch.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            s.push('[');
            for (j, v) in e.iter().enumerate() {
                if j > 0 {
                    s.push(',');
                }
                write!(s, "{v:.16e}").unwrap();
            }
            s.push(']');
        }
        s.push_str("]}");
        s
    }

    /// Scores a batch; one request, scores returned in batch order.
    pub fn evaluate(&mut self, batch: &[EmbeddingMatrix64]) -> Result<Vec<ModelScore<f64>>> {
        if let Some(e) = batch.iter().find(|e| e.dim() != self.dim) {
            return Err(HarnessError::Core(mase_core::Error::Shape(format!(
                "matrix width {} but the bridge was opened for {}",
                e.dim(),
                self.dim
            ))));
        }
        let id = self.next_id;
        self.next_id += 1;
        let line = Self::request_line(id, batch);
        self.send_raw(&line)?;
        let msg = self.receive()?;
        match self.message_type(&msg)? {
            "scores" => {}
            "error" => return Err(self.server_error(&msg)),
            other => return Err(self.violation(format!("expected scores, got {other:?}"))),
        }
        let got = msg.get("id").and_then(Value::as_u64);
        if got != Some(id) {
            return Err(self.violation(format!("reply id {got:?} does not match request id {id}")));
        }
        let scores = msg
            .get("scores")
            .and_then(Value::as_array)
            .ok_or_else(|| self.violation("scores reply without a scores array".into()))?;
        if scores.len() != batch.len() {
            return Err(self.violation(format!("{} scores for a batch of {}", scores.len(), batch.len())));
        }
        scores
            .iter()
            .map(|v| {
                let x = v
                    .as_f64()
                    .ok_or_else(|| self.violation(format!("non-numeric score {v}")))?;
                ModelScore::probability(x, 1).map_err(|e| self.violation(e.to_string()))
            })
            .collect()
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            // closing stdin ends a well-behaved server loop
            self.writer = Box::new(std::io::sink());
            for _ in 0..50 {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A remote model behind a [`BridgeClient`]; requests are serialized.
pub struct BridgeModel {
    client: Mutex<BridgeClient>,
    dim: usize,
}

impl BridgeModel {
    pub fn new(client: BridgeClient) -> Self {
        let dim = client.dim();
        Self {
            client: Mutex::new(client),
            dim,
        }
    }

    pub fn connect(endpoint: &Endpoint, dim: usize, timeout: Duration) -> Result<Self> {
        Ok(Self::new(BridgeClient::connect(endpoint, dim, timeout)?))
    }
}

impl BlackBoxModel<f64> for BridgeModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, e: &EmbeddingMatrix64) -> mase_core::Result<f64> {
        Ok(self.evaluate_batch(std::slice::from_ref(e))?[0])
    }

    fn evaluate_batch(&self, batch: &[EmbeddingMatrix64]) -> mase_core::Result<Vec<f64>> {
        let mut client = self
            .client
            .lock()
            .map_err(|_| mase_core::Error::Model("bridge connection poisoned".into()))?;
        let scores = client
            .evaluate(batch)
            .map_err(|e| mase_core::Error::Model(e.to_string()))?;
        Ok(scores.into_iter().map(|s| s.value).collect())
    }
}

/// Serves `model` over the bridge protocol until end of input. Malformed
/// requests get an error reply (id −1 when unparseable) and the loop
/// continues.
pub fn serve<M: BlackBoxModel<f64> + ?Sized, R: BufRead, W: Write>(
    model: &M,
    input: R,
    mut output: W,
    log: bool,
) -> Result<()> {
    let dim = model.dim();
    let reply = |out: &mut W, line: String| -> Result<()> {
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    };
    let error =
        |id: &Value, message: &str| serde_json::json!({"type": "error", "id": id, "message": message}).to_string();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let msg: serde_json::Map<String, Value> = match serde_json::from_str(&line) {
            Ok(Value::Object(m)) => m,
            _ => {
                reply(&mut output, error(&Value::from(-1), "unparseable request"))?;
                continue;
            }
        };
        let id = msg.get("id").cloned().unwrap_or(Value::from(-1));
        match msg.get("type").and_then(Value::as_str) {
            Some("hello") => match msg.get("dim").and_then(Value::as_u64) {
                Some(d) if d == dim as u64 => reply(&mut output, format!("{{\"type\":\"ready\",\"dim\":{dim}}}"))?,
                other => reply(
                    &mut output,
                    error(
                        &id,
                        &format!("dimension mismatch: server has {dim}, hello asked for {other:?}"),
                    ),
                )?,
            },
            Some("evaluate") => {
                if log {
                    eprintln!("request {id}");
                }
                match score_request(model, dim, &msg) {
                    Ok(scores) => {
                        let mut s = format!("{{\"type\":\"scores\",\"id\":{id},\"scores\":[");
                        for (k, v) in scores.iter().enumerate() {
                            if k > 0 {
                                s.push(',');
                            }
                            write!(s, "{v:.16e}").unwrap();
                        }
                        s.push_str("]}");
                        reply(&mut output, s)?;
                    }
                    Err(message) => reply(&mut output, error(&id, &message))?,
                }
            }
            _ => reply(&mut output, error(&id, "unknown message type"))?,
        }
    }
    Ok(())
}

fn score_request<M: BlackBoxModel<f64> + ?Sized>(
    model: &M,
    dim: usize,
    msg: &serde_json::Map<String, Value>,
) -> std::result::Result<Vec<f64>, String> {
    let batch = msg
        .get("batch")
        .and_then(Value::as_array)
        .ok_or("evaluate without a batch array")?;
    let mut mats = Vec::with_capacity(batch.len());
    for item in batch {
        let flat: Vec<f64> = item
            .as_array()
            .ok_or("batch element is not an array")?
            .iter()
            .map(|v| v.as_f64().ok_or("non-numeric entry"))
            .collect::<std::result::Result<_, _>>()?;
        if flat.is_empty() || !flat.len().is_multiple_of(dim) {
            return Err(format!("{} entries is not a multiple of dim {dim}", flat.len()));
        }
        let rows = flat.len() / dim;
        mats.push(EmbeddingMatrix64::from_rows(rows, dim, flat).map_err(|e| e.to_string())?);
    }
    model.evaluate_batch(&mats).map_err(|e| e.to_string())
}

/// Outcome of one conformance check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_matrices(count: usize, tokens: usize, dim: usize, seed: u64) -> Vec<EmbeddingMatrix64> {
    use rand::Rng;
    let mut rng = mase_core::rng::substream(seed, 0);
    (0..count)
        .map(|_| {
            let data = (0..tokens * dim)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            EmbeddingMatrix64::from_rows(tokens, dim, data).expect("positive shape")
        })
        .collect()
}

/// Exercises a server against the protocol: handshake, dimension
/// rejection, score validity, batch order, determinism, recovery from a
/// malformed request and, given a `reference` model, agreement of scores
/// (≤ 1e-9) and of MASE rankings with in-process evaluation. Each check
/// uses a fresh connection.
pub fn conformance(
    endpoint: &Endpoint,
    dim: usize,
    reference: Option<&dyn BlackBoxModel<f64>>,
    timeout: Duration,
) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let mut run = |name: &'static str, check: &mut dyn FnMut() -> Result<String>| {
        let (passed, detail) = match check() {
            Ok(d) => (true, d),
            Err(e) => (false, e.to_string()),
        };
        out.push(CheckOutcome { name, passed, detail });
    };
    let batch = random_matrices(6, 5, dim, 11);
    let fail = |m: String| HarnessError::Bridge { line: 0, message: m };

    run("handshake", &mut || {
        BridgeClient::connect(endpoint, dim, timeout)?;
        Ok(format!("ready for dim {dim}"))
    });
    run("dimension-mismatch", &mut || {
        let mut c = BridgeClient::connect(endpoint, dim, timeout)?;
        c.send_raw(&format!("{{\"type\":\"hello\",\"dim\":{}}}", dim + 1))?;
        let msg = c.receive()?;
        if msg.get("type").and_then(Value::as_str) != Some("error") {
            return Err(fail(format!("hello with dim {} was not rejected", dim + 1)));
        }
        c.hello(dim)?;
        Ok("wrong dimension rejected, connection still usable".into())
    });
    run("scores", &mut || {
        let mut c = BridgeClient::connect(endpoint, dim, timeout)?;
        let s = c.evaluate(&batch)?;
        Ok(format!("{} scores in [0, 1]", s.len()))
    });
    run("batch-order", &mut || {
        let mut c = BridgeClient::connect(endpoint, dim, timeout)?;
        let forward: Vec<f64> = c.evaluate(&batch)?.iter().map(|s| s.value).collect();
        let reversed: Vec<EmbeddingMatrix64> = batch.iter().rev().cloned().collect();
        let mut backward: Vec<f64> = c.evaluate(&reversed)?.iter().map(|s| s.value).collect();
        backward.reverse();
        if forward != backward {
            return Err(fail("scores depend on position within the batch".into()));
        }
        Ok("reversed batch gives reversed scores".into())
    });
    run("determinism", &mut || {
        let mut c = BridgeClient::connect(endpoint, dim, timeout)?;
        let a = c.evaluate(&batch)?;
        let b = c.evaluate(&batch)?;
        if a != b {
            return Err(fail("repeated request gave different scores".into()));
        }
        Ok("repeated request is bit-identical".into())
    });
    run("malformed-request", &mut || {
        let mut c = BridgeClient::connect(endpoint, dim, timeout)?;
        c.send_raw("this is not json")?;
        let msg = c.receive()?;
        let is_error = msg.get("type").and_then(Value::as_str) == Some("error");
        if !is_error || msg.get("id").and_then(Value::as_i64) != Some(-1) {
            return Err(fail("malformed request did not get an error reply with id -1".into()));
        }
        c.evaluate(&batch[..1])?;
        Ok("error reply with id -1, server continued".into())
    });
    if let Some(model) = reference {
        run("reference-scores", &mut || {
            let mut c = BridgeClient::connect(endpoint, dim, timeout)?;
            let probes = random_matrices(16, 7, dim, 12);
            let remote = c.evaluate(&probes)?;
            let local = model.evaluate_batch(&probes)?;
            let worst = remote
                .iter()
                .zip(&local)
                .map(|(r, l)| (r.value - l).abs())
                .fold(0.0, f64::max);
            if worst > 1e-9 {
                return Err(fail(format!("max score difference {worst:.3e} exceeds 1e-9")));
            }
            Ok(format!("max score difference {worst:.3e}"))
        });
        run("reference-ranking", &mut || {
            let remote = BridgeModel::connect(endpoint, dim, timeout)?;
            let e = &random_matrices(1, 8, dim, 13)[0];
            let spec = mase_core::PerturbationSpec64::isotropic(0.1, 200, 5);
            let a = mase_core::explain(&remote, e, &spec, None)?;
            let b = mase_core::explain(model, e, &spec, None)?;
            if a.ranking() != b.ranking() {
                return Err(fail("MASE ranking differs from in-process evaluation".into()));
            }
            let worst = (&a.scores - &b.scores).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            Ok(format!("identical ranking, max saliency difference {worst:.3e}"))
        });
    }
    out
}
