//! Newline-delimited JSON protocol for out-of-process evaluators.
//!
//! ```text
//! engine    -> {"hello": "automc-eval/1"}
//! evaluator -> {"ready": true, "name": "..."}
//! engine    -> {"id": 0, "scheme": ["C3|HP1=*0.3|HP2=x0.20|HP6=0.9"], "task": {...}, "pretrain_epochs": 200}
//! evaluator -> {"id": 0, "params": 720000, "flops": 2.2e8, "accuracy": 0.89}
//! ```
//!
//! An evaluator may answer a request with `{"id": .., "error": ".."}`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{simulate_step, Evaluator, EvaluatorConfig, ModelState};
use crate::catalog::{Catalog, Scheme};
use crate::embedding::TaskFeatures;
use crate::error::{Error, Result};

pub const PROTOCOL: &str = "automc-eval/1";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub id: u64,
    pub scheme: Vec<String>,
    pub task: TaskFeatures,
    pub pretrain_epochs: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResponse {
    pub id: u64,
    pub params: f64,
    pub flops: f64,
    pub accuracy: f64,
}

/// One evaluator child process.
pub struct Endpoint {
    name: String,
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    timeout: Duration,
}

impl std::fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Endpoint").field("name", &self.name).field("next_id", &self.next_id).finish()
    }
}

impl Endpoint {
    /// Spawns `command` through `sh -c` and performs the handshake.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut endpoint = Endpoint { name: String::new(), child, stdin, lines: rx, next_id: 0, timeout };
        endpoint.send(&serde_json::json!({ "hello": PROTOCOL }))?;
        let reply = endpoint.receive()?;
        let value: Value = serde_json::from_str(&reply).map_err(|_| Error::protocol("malformed handshake", &reply))?;
        if value.get("ready") != Some(&Value::Bool(true)) {
            return Err(Error::protocol("evaluator did not report ready", &reply));
        }
        endpoint.name = value.get("name").and_then(Value::as_str).unwrap_or("unnamed").to_string();
        Ok(endpoint)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn send(&mut self, value: &Value) -> Result<()> {
        let mut line = serde_json::to_string(value)?;
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::protocol(format!("write failed: {e}"), &line))
    }

    fn receive(&mut self) -> Result<String> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::protocol(format!("read failed: {e}"), "")),
            Err(RecvTimeoutError::Timeout) => {
                Err(Error::protocol(format!("no response within {:?}", self.timeout), ""))
            }
            Err(RecvTimeoutError::Disconnected) => Err(Error::protocol("evaluator closed its output", "")),
        }
    }

    /// Sends one request and validates the response.
    pub fn request(&mut self, scheme: Vec<String>, task: &TaskFeatures, pretrain_epochs: u32) -> Result<ModelState> {
        let id = self.next_id;
        self.next_id += 1;
        let req = EvalRequest { id, scheme, task: *task, pretrain_epochs };
        self.send(&serde_json::to_value(&req)?)?;
        let line = self.receive()?;
        parse_response(&line, id)
    }
}

impl Drop for Endpoint {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn parse_response(line: &str, expected_id: u64) -> Result<ModelState> {
    let value: Value = serde_json::from_str(line).map_err(|_| Error::protocol("malformed response", line))?;
    if let Some(err) = value.get("error") {
        return Err(Error::protocol(format!("evaluator reported error: {err}"), line));
    }
    let resp: EvalResponse =
        serde_json::from_value(value).map_err(|e| Error::protocol(format!("bad response fields: {e}"), line))?;
    if resp.id != expected_id {
        return Err(Error::protocol(format!("response id {} does not match request {expected_id}", resp.id), line));
    }
    let state = ModelState::new(resp.params, resp.flops, resp.accuracy);
    state
        .validate()
        .map_err(|_| Error::protocol("response violates model-state invariants", line))?;
    Ok(state)
}

/// Evaluator backed by a pool of external processes.
pub struct ExternalEvaluator<'a> {
    catalog: &'a Catalog,
    endpoints: Vec<Mutex<Endpoint>>,
    cursor: AtomicUsize,
    task: TaskFeatures,
    pretrain_epochs: u32,
    base: ModelState,
}

impl<'a> ExternalEvaluator<'a> {
    /// Spawns `pool` copies of `command`; the base state is the evaluator's
    /// answer for the empty scheme.
    pub fn spawn(
        catalog: &'a Catalog,
        command: &str,
        pool: usize,
        task: TaskFeatures,
        pretrain_epochs: u32,
        timeout: Duration,
    ) -> Result<Self> {
        let endpoints = (0..pool.max(1))
            .map(|_| Endpoint::spawn(command, timeout).map(Mutex::new))
            .collect::<Result<Vec<_>>>()?;
        let mut ev = ExternalEvaluator {
            catalog,
            endpoints,
            cursor: AtomicUsize::new(0),
            task,
            pretrain_epochs,
            base: task.model_state(),
        };
        ev.base = ev.request(&Scheme::start())?;
        Ok(ev)
    }

    pub fn names(&self) -> Vec<String> {
        self.endpoints.iter().map(|e| e.lock().unwrap().name().to_string()).collect()
    }

    fn request(&self, scheme: &Scheme) -> Result<ModelState> {
        let ids = self.catalog.scheme_ids(scheme);
        let start = self.cursor.fetch_add(1, Ordering::Relaxed);
        let n = self.endpoints.len();
        // Prefer an idle endpoint, otherwise queue on the round-robin choice.
        for k in 0..n {
            if let Ok(mut ep) = self.endpoints[(start + k) % n].try_lock() {
                return ep.request(ids, &self.task, self.pretrain_epochs);
            }
        }
        let mut ep = self.endpoints[start % n].lock().unwrap();
        ep.request(ids, &self.task, self.pretrain_epochs)
    }
}

impl Evaluator for ExternalEvaluator<'_> {
    fn base_state(&self) -> ModelState {
        self.base
    }

    fn evaluate(&self, scheme: &Scheme) -> Result<ModelState> {
        self.request(scheme)
            .map_err(|e| Error::Evaluation { step: scheme.len(), message: e.to_string() })
    }
}

/// Serves the simulated environment over the protocol until `input` closes.
/// Malformed lines get an error object and the loop continues.
pub fn serve_simulated<R: BufRead, W: Write>(catalog: &Catalog, seed: u64, input: R, mut output: W) -> Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Value>(&line) {
            Ok(v) if v.get("hello").is_some() => serde_json::json!({ "ready": true, "name": "compsearch-sim" }),
            Ok(v) => {
                let id = v.get("id").cloned().unwrap_or(Value::Null);
                match answer(catalog, seed, v) {
                    Ok(resp) => serde_json::to_value(resp)?,
                    Err(e) => serde_json::json!({ "id": id, "error": e.to_string() }),
                }
            }
            Err(e) => serde_json::json!({ "id": Value::Null, "error": format!("malformed request: {e}") }),
        };
        serde_json::to_writer(&mut output, &reply)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

fn answer(catalog: &Catalog, seed: u64, value: Value) -> Result<EvalResponse> {
    let req: EvalRequest = serde_json::from_value(value).map_err(|e| Error::Input(e.to_string()))?;
    req.task.validate()?;
    let base = req.task.model_state();
    let cfg = EvaluatorConfig { seed, base_state: base, pretrain_epochs: req.pretrain_epochs.max(1) };
    let mut state = base;
    for id in &req.scheme {
        let s = catalog.strategy(catalog.lookup(id)?);
        state = simulate_step(&state, s, &cfg)?;
    }
    Ok(EvalResponse { id: req.id, params: state.params, flops: state.flops, accuracy: state.accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_validation() {
        assert!(parse_response(r#"{"id":3,"params":10,"flops":5,"accuracy":0.5}"#, 3).is_ok());
        let err = parse_response(r#"{"id":3,"params":10,"flops":5,"accuracy":1.7}"#, 3).unwrap_err();
        assert!(err.to_string().contains("invariants"), "{err}");
        assert!(parse_response(r#"{"id":2,"params":10,"flops":5,"accuracy":0.5}"#, 3).is_err());
        assert!(parse_response("not json", 0).unwrap_err().to_string().contains("not json"));
        assert!(parse_response(r#"{"id":0,"error":"boom"}"#, 0).is_err());
    }

    #[test]
    fn serve_handles_handshake_requests_and_garbage() {
        let catalog = Catalog::full();
        let task = TaskFeatures::cifar10_resnet56();
        let req = EvalRequest { id: 4, scheme: vec![], task, pretrain_epochs: 200 };
        let input = format!(
            "{{\"hello\":\"{PROTOCOL}\"}}\n{}\n{{oops\n{{\"id\":9,\"scheme\":[\"nope\"],\"task\":{}, \"pretrain_epochs\":1}}\n",
            serde_json::to_string(&req).unwrap(),
            serde_json::to_string(&task).unwrap()
        );
        let mut out = Vec::new();
        serve_simulated(&catalog, 1, input.as_bytes(), &mut out).unwrap();
        let lines: Vec<Value> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0]["ready"], Value::Bool(true));
        assert_eq!(lines[1]["id"], 4);
        assert_eq!(lines[1]["params"], 900000.0);
        assert!(lines[2].get("error").is_some());
        assert_eq!(lines[3]["id"], 9);
        assert!(lines[3].get("error").is_some());
    }
}
