//! The worker side of the protocol: serves built-in kernels over stdio.

use std::io::{self, BufRead, Write};
use std::time::{Duration, Instant};

use super::kernels::{corrupt, execute, BuiltinLocator, Context, Kernel, Variant};
use super::protocol::{KernelRequest, KernelResponse, WireMessage};
use crate::model::OutputPayload;

/// Serves requests on this process's stdin/stdout; returns the exit code.
pub fn serve_stdio() -> i32 {
    let stdin = io::stdin();
    let stdout = io::stdout();
    serve(stdin.lock(), stdout.lock())
}

struct Worker<W: Write> {
    out: W,
    served: u32,
}

impl<W: Write> Worker<W> {
    fn emit(&mut self, msg: &WireMessage) -> io::Result<()> {
        writeln!(self.out, "{}", msg.encode())?;
        self.out.flush()
    }
}

pub fn serve<R: BufRead, W: Write>(input: R, out: W) -> i32 {
    let mut worker = Worker { out, served: 0 };
    let mut lines = input.lines();
    while let Some(line) = lines.next() {
        let Ok(line) = line else { return 2 };
        if line.trim().is_empty() {
            continue;
        }
        let msg = match WireMessage::decode(&line) {
            Ok(m) => m,
            Err(e) => {
                let _ = worker.emit(&WireMessage::Error { message: e.to_string() });
                return 2;
            }
        };
        let reply = match msg {
            WireMessage::Request(req) => {
                worker.served += 1;
                match handle_request(req, worker.served) {
                    Ok(resp) => WireMessage::Response(resp),
                    Err(message) => WireMessage::Error { message },
                }
            }
            WireMessage::RankInit { rank, ranks, locator, input } => {
                worker.served += 1;
                let served = worker.served;
                match run_rank(&mut worker, &mut lines, rank, ranks, &locator, input, served) {
                    Ok(reply) => reply,
                    Err(message) => WireMessage::Error { message },
                }
            }
            WireMessage::Shutdown => return 0,
            other => WireMessage::Error { message: format!("unexpected message {other:?}") },
        };
        if worker.emit(&reply).is_err() {
            return 3;
        }
    }
    0
}

/// Process-level faults fire before any computation.
fn inject_process_fault(variant: Variant, served: u32) {
    match variant {
        Variant::Crash(n) if served >= n => panic!("injected fault: attempt to divide by zero"),
        Variant::Hang => loop {
            std::thread::sleep(Duration::from_secs(3600));
        },
        Variant::Segv => raise_segv(),
        _ => {}
    }
}

#[cfg(unix)]
fn raise_segv() {
    // Restore the default action first so the runtime's own handler cannot
    // swallow the signal.
    unsafe {
        libc::signal(libc::SIGSEGV, libc::SIG_DFL);
        libc::raise(libc::SIGSEGV);
    }
}

#[cfg(not(unix))]
fn raise_segv() {
    std::process::abort();
}

fn handle_request(req: KernelRequest, served: u32) -> Result<KernelResponse, String> {
    let loc = BuiltinLocator::parse(&req.locator).map_err(|e| e.to_string())?;
    inject_process_fault(loc.variant, served);
    let mut captures = Vec::new();
    let output = if req.capture {
        execute(loc, &req.inputs, &mut Context::capturing(&req.slots, &mut captures))
    } else {
        execute(loc, &req.inputs, &mut Context::new(&req.slots))
    }
    .map_err(|e| e.to_string())?;

    let mut ctx_slots = Context::new(&req.slots);
    for _ in 0..req.warmup {
        std::hint::black_box(execute(loc, &req.inputs, &mut ctx_slots).map_err(|e| e.to_string())?);
    }
    let mut run_times_s = Vec::with_capacity(req.timed_runs as usize);
    for _ in 0..req.timed_runs.max(1) {
        let start = Instant::now();
        let mut calls = 0u32;
        loop {
            std::hint::black_box(execute(loc, &req.inputs, &mut ctx_slots).map_err(|e| e.to_string())?);
            calls += 1;
            if start.elapsed().as_secs_f64() >= req.min_batch_s {
                break;
            }
        }
        run_times_s.push((start.elapsed().as_secs_f64() / f64::from(calls)).max(1e-9));
    }
    Ok(KernelResponse { seq: req.seq, output, run_times_s, captures })
}

fn chunk_bounds(len: usize, ranks: usize, c: usize) -> (usize, usize) {
    (c * len / ranks, (c + 1) * len / ranks)
}

fn run_rank<W: Write, I: Iterator<Item = io::Result<String>>>(
    worker: &mut Worker<W>,
    lines: &mut I,
    rank: usize,
    ranks: usize,
    locator: &str,
    input: OutputPayload,
    served: u32,
) -> Result<WireMessage, String> {
    let loc = BuiltinLocator::parse(locator).map_err(|e| e.to_string())?;
    if loc.kernel != Kernel::Allreduce {
        return Err(format!("`{locator}` is not an all-reduce kernel"));
    }
    if ranks < 2 || rank >= ranks {
        return Err(format!("rank {rank} of {ranks} is not a valid collective position"));
    }
    if input.len() < ranks {
        return Err(format!("vector of length {} cannot be split across {ranks} ranks", input.len()));
    }
    inject_process_fault(loc.variant, served);
    let start = Instant::now();
    let shape = input.shape().to_vec();
    let mut buf = input.into_values();
    if loc.variant != Variant::Identity {
        let next = (rank + 1) % ranks;
        let prev_rank = (rank + ranks - 1) % ranks;
        let mut exchange = |send_chunk: usize, recv_chunk: usize, buf: &mut Vec<f64>, accumulate: bool| -> Result<(), String> {
            let (lo, hi) = chunk_bounds(buf.len(), ranks, send_chunk);
            let payload = OutputPayload::vector(buf[lo..hi].to_vec()).map_err(|e| e.to_string())?;
            worker.emit(&WireMessage::Send { to: next, payload }).map_err(|e| e.to_string())?;
            let line = lines.next().ok_or("channel closed")?.map_err(|e| e.to_string())?;
            let received = match WireMessage::decode(&line).map_err(|e| e.to_string())? {
                WireMessage::Deliver { from, payload } if from == prev_rank => payload,
                WireMessage::Shutdown => return Err("shut down mid-collective".into()),
                other => return Err(format!("unexpected message {other:?}")),
            };
            let (lo, hi) = chunk_bounds(buf.len(), ranks, recv_chunk);
            if received.len() != hi - lo {
                return Err("received chunk of the wrong length".into());
            }
            for (slot, v) in buf[lo..hi].iter_mut().zip(received.values()) {
                *slot = if accumulate { *slot + v } else { *v };
            }
            Ok(())
        };
        for step in 0..ranks - 1 {
            let send = (rank + ranks - step) % ranks;
            let recv = (rank + 2 * ranks - step - 1) % ranks;
            exchange(send, recv, &mut buf, true)?;
        }
        for step in 0..ranks - 1 {
            let send = (rank + 1 + ranks - step) % ranks;
            let recv = (rank + ranks - step) % ranks;
            exchange(send, recv, &mut buf, false)?;
        }
    }
    let output = OutputPayload::tensor(shape, buf).map_err(|e| e.to_string())?;
    let output = corrupt(output, loc.variant);
    Ok(WireMessage::RankResult { output, elapsed_s: start.elapsed().as_secs_f64().max(1e-9) })
}
