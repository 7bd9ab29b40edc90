//! Worker wire protocol and the orchestrator side of a worker process.
//!
//! Each message is one `fk-records/1` line on the worker's stdin or stdout.
//! The orchestrator enforces timeouts; a worker that stops answering is
//! killed.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::kernels::Capture;
use super::HarnessError;
use crate::format::{decode_line, encode_line, float_vec, FormatError, RECORDS_SCHEMA};
use crate::model::{OutputPayload, RunStatus};

pub const ROLE_ENV: &str = "FK_WORKER_ROLE";
const STDERR_TAIL: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRequest {
    pub seq: u64,
    pub locator: String,
    pub inputs: Vec<OutputPayload>,
    #[serde(default)]
    pub slots: BTreeMap<String, String>,
    pub warmup: u32,
    pub timed_runs: u32,
    /// Each timed run repeats the kernel until at least this long has passed
    /// and reports the per-call mean.
    pub min_batch_s: f64,
    #[serde(default)]
    pub capture: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelResponse {
    pub seq: u64,
    pub output: OutputPayload,
    #[serde(with = "float_vec")]
    pub run_times_s: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub captures: Vec<Capture>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "wire", rename_all = "kebab-case")]
pub enum WireMessage {
    Request(KernelRequest),
    Response(KernelResponse),
    /// The worker could not serve the request.
    Error { message: String },
    /// Starts one rank of a collective.
    RankInit { rank: usize, ranks: usize, locator: String, input: OutputPayload },
    /// Rank to orchestrator: relay `payload` to rank `to`.
    Send { to: usize, payload: OutputPayload },
    /// Orchestrator to rank: `payload` sent by rank `from`.
    Deliver { from: usize, payload: OutputPayload },
    RankResult {
        output: OutputPayload,
        elapsed_s: f64,
    },
    Shutdown,
}

impl WireMessage {
    pub fn encode(&self) -> String {
        encode_line(RECORDS_SCHEMA, self)
    }

    pub fn decode(line: &str) -> Result<Self, FormatError> {
        decode_line(RECORDS_SCHEMA, line)
    }
}

/// How to start a process that serves built-in kernels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerLauncher {
    pub program: String,
    pub args: Vec<String>,
}

impl WorkerLauncher {
    pub fn new(program: impl Into<String>) -> Self {
        WorkerLauncher { program: program.into(), args: Vec::new() }
    }

    pub fn with_args(mut self, args: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.args = args.into_iter().map(Into::into).collect();
        self
    }
}

/// Why a worker failed to answer.
#[derive(Debug, Clone, PartialEq)]
pub enum WorkerFailure {
    Timeout,
    Exited { code: Option<i32>, signal: Option<i32>, stderr: String },
    Error(String),
    Protocol(String),
}

impl WorkerFailure {
    pub fn status(&self) -> RunStatus {
        match self {
            WorkerFailure::Timeout => RunStatus::Hang,
            WorkerFailure::Exited { signal: Some(s), .. } if is_memory_signal(*s) => RunStatus::IllegalMemory,
            _ => RunStatus::Crash,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            WorkerFailure::Timeout => "timed out".into(),
            WorkerFailure::Exited { code, signal, stderr } => {
                let how = match (code, signal) {
                    (_, Some(s)) => format!("killed by signal {s}"),
                    (Some(c), None) => format!("exited with code {c}"),
                    (None, None) => "exited".into(),
                };
                let tail = stderr.trim();
                if tail.is_empty() {
                    how
                } else {
                    format!("{how}: {}", tail.lines().last().unwrap_or(""))
                }
            }
            WorkerFailure::Error(m) => format!("worker error: {m}"),
            WorkerFailure::Protocol(m) => format!("protocol error: {m}"),
        }
    }
}

#[cfg(unix)]
fn is_memory_signal(sig: i32) -> bool {
    sig == libc::SIGSEGV || sig == libc::SIGBUS
}

#[cfg(not(unix))]
fn is_memory_signal(_sig: i32) -> bool {
    false
}

#[cfg(unix)]
fn exit_signal(status: &ExitStatus) -> Option<i32> {
    use std::os::unix::process::ExitStatusExt;
    status.signal()
}

#[cfg(not(unix))]
fn exit_signal(_status: &ExitStatus) -> Option<i32> {
    None
}

/// A running worker process.
pub struct WorkerSession {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    stderr: Arc<Mutex<String>>,
    dead: bool,
}

impl WorkerSession {
    /// Spawns `program args...` with the worker role in the environment.
    pub fn spawn(program: &str, args: &[String], role: &str) -> Result<Self, HarnessError> {
        let mut child = Command::new(program)
            .args(args)
            .env(ROLE_ENV, role)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| HarnessError::Spawn { program: program.to_string(), source })?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr_pipe = child.stderr.take().expect("piped stderr");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let stderr = Arc::new(Mutex::new(String::new()));
        let sink = Arc::clone(&stderr);
        thread::spawn(move || {
            let mut buf = [0u8; 1024];
            let mut pipe = stderr_pipe;
            while let Ok(n) = pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                let mut s = sink.lock().expect("stderr buffer");
                s.push_str(&String::from_utf8_lossy(&buf[..n]));
                if s.len() > STDERR_TAIL {
                    let mut cut = s.len() - STDERR_TAIL;
                    while !s.is_char_boundary(cut) {
                        cut += 1;
                    }
                    s.drain(..cut);
                }
            }
        });
        Ok(WorkerSession { stdin: child.stdin.take(), child, lines: rx, stderr, dead: false })
    }

    pub fn send(&mut self, msg: &WireMessage) -> Result<(), WorkerFailure> {
        let Some(stdin) = self.stdin.as_mut() else {
            return Err(WorkerFailure::Protocol("stdin already closed".into()));
        };
        let mut line = msg.encode();
        line.push('\n');
        if stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()).is_err() {
            // The worker is gone; report how it went.
            return Err(self.exit_failure());
        }
        Ok(())
    }

    /// Next message, waiting at most until `deadline`.
    pub fn recv(&mut self, deadline: Instant) -> Result<WireMessage, WorkerFailure> {
        let wait = deadline.saturating_duration_since(Instant::now());
        match self.lines.recv_timeout(wait) {
            Ok(Ok(line)) => WireMessage::decode(&line).map_err(|e| WorkerFailure::Protocol(e.to_string())),
            Ok(Err(e)) => Err(WorkerFailure::Protocol(e.to_string())),
            Err(RecvTimeoutError::Timeout) => {
                self.kill();
                Err(WorkerFailure::Timeout)
            }
            Err(RecvTimeoutError::Disconnected) => Err(self.exit_failure()),
        }
    }

    /// Next message if one is already waiting.
    pub fn try_recv(&mut self) -> Option<Result<WireMessage, WorkerFailure>> {
        match self.lines.try_recv() {
            Ok(Ok(line)) => Some(WireMessage::decode(&line).map_err(|e| WorkerFailure::Protocol(e.to_string()))),
            Ok(Err(e)) => Some(Err(WorkerFailure::Protocol(e.to_string()))),
            Err(TryRecvError::Empty) => None,
            Err(TryRecvError::Disconnected) => Some(Err(self.exit_failure())),
        }
    }

    /// Sends a request and waits for its response.
    pub fn call(&mut self, request: KernelRequest, timeout: Duration) -> Result<KernelResponse, WorkerFailure> {
        let seq = request.seq;
        let deadline = Instant::now() + timeout;
        self.send(&WireMessage::Request(request))?;
        match self.recv(deadline)? {
            WireMessage::Response(r) if r.seq == seq => Ok(r),
            WireMessage::Response(r) => Err(WorkerFailure::Protocol(format!("expected seq {seq}, got {}", r.seq))),
            WireMessage::Error { message } => Err(WorkerFailure::Error(message)),
            other => Err(WorkerFailure::Protocol(format!("unexpected message {other:?}"))),
        }
    }

    fn exit_failure(&mut self) -> WorkerFailure {
        self.dead = true;
        self.stdin = None;
        let status = self.child.wait().ok();
        let stderr = self.stderr.lock().map(|s| s.clone()).unwrap_or_default();
        WorkerFailure::Exited {
            code: status.and_then(|s| s.code()),
            signal: status.as_ref().and_then(exit_signal),
            stderr,
        }
    }

    pub fn kill(&mut self) {
        if !self.dead {
            self.dead = true;
            self.stdin = None;
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }

    /// Asks the worker to exit, killing it if it does not within a second.
    pub fn shutdown(mut self) {
        if self.dead {
            return;
        }
        let _ = self.send(&WireMessage::Shutdown);
        self.stdin = None;
        let deadline = Instant::now() + Duration::from_secs(1);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                self.dead = true;
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        self.kill();
    }
}

impl Drop for WorkerSession {
    fn drop(&mut self) {
        self.kill();
    }
}
