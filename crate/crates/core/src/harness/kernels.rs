//! Built-in toy kernels and their fault-injected variants.
//!
//! Numeric kernels compute in `f32` so that reordered-but-equivalent
//! implementations differ from the reference by a few ulps, as real
//! optimized kernels do. The all-reduce kernels work in `f64` on
//! dyadic-rational data, where every summation order is exact.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{OutputPayload, PayloadKind};

pub const BUILTIN_PREFIX: &str = "builtin:";
const RMS_EPS: f32 = 1e-6;
const DEFAULT_GATE_K: usize = 2;
const MAX_DEPTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kernel {
    Linear,
    Rmsnorm,
    Silu,
    Softmax,
    Matmul,
    TopkGate,
    Argsort,
    Mlp,
    Block,
    Model,
    Allreduce,
}

impl Kernel {
    pub const ALL: [Kernel; 11] = [
        Kernel::Linear,
        Kernel::Rmsnorm,
        Kernel::Silu,
        Kernel::Softmax,
        Kernel::Matmul,
        Kernel::TopkGate,
        Kernel::Argsort,
        Kernel::Mlp,
        Kernel::Block,
        Kernel::Model,
        Kernel::Allreduce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Linear => "linear",
            Kernel::Rmsnorm => "rmsnorm",
            Kernel::Silu => "silu",
            Kernel::Softmax => "softmax",
            Kernel::Matmul => "matmul",
            Kernel::TopkGate => "topk_gate",
            Kernel::Argsort => "argsort",
            Kernel::Mlp => "mlp",
            Kernel::Block => "block",
            Kernel::Model => "model",
            Kernel::Allreduce => "allreduce",
        }
    }

    /// Named sub-kernel slots a composite kernel calls.
    pub fn slots(self) -> &'static [&'static str] {
        match self {
            Kernel::Mlp => &["linear", "silu"],
            Kernel::Block => &["rmsnorm", "mlp"],
            Kernel::Model => &["block"],
            _ => &[],
        }
    }
}

impl FromStr for Kernel {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, KernelError> {
        Kernel::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| KernelError::UnknownKernel(s.to_string()))
    }
}

/// Behaviour layered over a kernel's computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    Reference,
    /// Same math, different accumulation order.
    Reordered,
    /// Adds uniform noise of the given absolute amplitude.
    Noisy(f64),
    /// Repeats the computation `n` times.
    Slow(u32),
    /// Panics on the `n`-th request served by the process (1-based).
    Crash(u32),
    Hang,
    Nan,
    Shape,
    Type,
    Segv,
    /// All-reduce that returns the local vector.
    Identity,
    /// Ring all-reduce.
    Ring,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Reference => f.write_str("reference"),
            Variant::Reordered => f.write_str("reordered"),
            Variant::Noisy(a) => write!(f, "noisy={a}"),
            Variant::Slow(n) => write!(f, "slow={n}"),
            Variant::Crash(n) => write!(f, "crash@{n}"),
            Variant::Hang => f.write_str("hang"),
            Variant::Nan => f.write_str("nan"),
            Variant::Shape => f.write_str("shape"),
            Variant::Type => f.write_str("type"),
            Variant::Segv => f.write_str("segv"),
            Variant::Identity => f.write_str("identity"),
            Variant::Ring => f.write_str("ring"),
        }
    }
}

impl FromStr for Variant {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, KernelError> {
        let bad = || KernelError::UnknownVariant(s.to_string());
        Ok(match s {
            "reference" => Variant::Reference,
            "reordered" => Variant::Reordered,
            "crash" => Variant::Crash(1),
            "hang" => Variant::Hang,
            "nan" => Variant::Nan,
            "shape" => Variant::Shape,
            "type" => Variant::Type,
            "segv" => Variant::Segv,
            "identity" => Variant::Identity,
            "ring" => Variant::Ring,
            _ => {
                if let Some(a) = s.strip_prefix("noisy=") {
                    let a: f64 = a.parse().map_err(|_| bad())?;
                    if !(a >= 0.0 && a.is_finite()) {
                        return Err(bad());
                    }
                    Variant::Noisy(a)
                } else if let Some(n) = s.strip_prefix("slow=") {
                    Variant::Slow(n.parse().ok().filter(|&n| n > 0).ok_or_else(bad)?)
                } else if let Some(n) = s.strip_prefix("crash@") {
                    Variant::Crash(n.parse().ok().filter(|&n| n > 0).ok_or_else(bad)?)
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("unknown kernel `{0}`")]
    UnknownKernel(String),
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("`{0}` is not a built-in locator")]
    NotBuiltin(String),
    #[error("variant `{variant}` does not apply to `{kernel}`")]
    VariantMismatch { kernel: &'static str, variant: String },
    #[error("{kernel}: {reason}")]
    BadInputs { kernel: &'static str, reason: String },
    #[error("slot `{slot}` bound to `{locator}`: {reason}")]
    Slot { slot: String, locator: String, reason: String },
    #[error("composition nests deeper than {MAX_DEPTH} levels")]
    TooDeep,
}

/// A parsed `builtin:<kernel>[:<variant>]` locator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuiltinLocator {
    pub kernel: Kernel,
    pub variant: Variant,
}

impl BuiltinLocator {
    pub fn reference(kernel: Kernel) -> Self {
        let variant = if kernel == Kernel::Allreduce { Variant::Ring } else { Variant::Reference };
        BuiltinLocator { kernel, variant }
    }

    pub fn parse(locator: &str) -> Result<Self, KernelError> {
        let rest = locator.strip_prefix(BUILTIN_PREFIX).ok_or_else(|| KernelError::NotBuiltin(locator.to_string()))?;
        let (kernel, variant) = match rest.split_once(':') {
            Some((k, v)) => (k.parse::<Kernel>()?, v.parse::<Variant>()?),
            None => {
                let k = rest.parse::<Kernel>()?;
                return Ok(BuiltinLocator::reference(k));
            }
        };
        let allowed = match variant {
            Variant::Identity | Variant::Ring => kernel == Kernel::Allreduce,
            Variant::Reordered | Variant::Type => kernel != Kernel::Allreduce,
            _ => true,
        };
        if !allowed {
            return Err(KernelError::VariantMismatch { kernel: kernel.name(), variant: variant.to_string() });
        }
        let variant = if kernel == Kernel::Allreduce && variant == Variant::Reference { Variant::Ring } else { variant };
        Ok(BuiltinLocator { kernel, variant })
    }
}

impl fmt::Display for BuiltinLocator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{BUILTIN_PREFIX}{}:{}", self.kernel.name(), self.variant)
    }
}

/// Inputs and output of one sub-kernel call, recorded during capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capture {
    pub kernel: String,
    pub inputs: Vec<OutputPayload>,
    pub output: OutputPayload,
}

/// Execution context of one top-level kernel call.
pub struct Context<'a> {
    /// Slot name to locator; unbound slots use the reference kernel.
    pub slots: &'a BTreeMap<String, String>,
    pub capture: Option<&'a mut Vec<Capture>>,
    depth: usize,
}

impl<'a> Context<'a> {
    pub fn new(slots: &'a BTreeMap<String, String>) -> Self {
        Context { slots, capture: None, depth: 0 }
    }

    pub fn capturing(slots: &'a BTreeMap<String, String>, sink: &'a mut Vec<Capture>) -> Self {
        Context { slots, capture: Some(sink), depth: 0 }
    }

    fn call_slot(&mut self, slot: &str, inputs: Vec<OutputPayload>) -> Result<OutputPayload, KernelError> {
        if self.depth >= MAX_DEPTH {
            return Err(KernelError::TooDeep);
        }
        let locator = match self.slots.get(slot) {
            Some(l) => l.clone(),
            None => format!("{BUILTIN_PREFIX}{slot}"),
        };
        let slot_err = |reason: String| KernelError::Slot { slot: slot.to_string(), locator: locator.clone(), reason };
        let parsed = BuiltinLocator::parse(&locator).map_err(|e| slot_err(e.to_string()))?;
        if parsed.kernel.name() != slot {
            return Err(slot_err(format!("expected a `{slot}` kernel")));
        }
        self.depth += 1;
        let out = execute(parsed, &inputs, self);
        self.depth -= 1;
        let out = out?;
        if let Some(sink) = self.capture.as_deref_mut() {
            sink.push(Capture { kernel: slot.to_string(), inputs, output: out.clone() });
        }
        Ok(out)
    }
}

fn bad(kernel: Kernel, reason: impl Into<String>) -> KernelError {
    KernelError::BadInputs { kernel: kernel.name(), reason: reason.into() }
}

/// A row-major `f32` matrix view of a numeric payload.
struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Mat {
    fn from(kernel: Kernel, p: &OutputPayload) -> Result<Mat, KernelError> {
        if p.kind() != PayloadKind::NumericTensor {
            return Err(bad(kernel, format!("expected a numeric tensor, got {}", p.kind().as_str())));
        }
        let shape = p.shape();
        let (rows, cols) = match shape {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => return Err(bad(kernel, format!("expected rank 1 or 2, got shape {shape:?}"))),
        };
        Ok(Mat { rows, cols, data: p.values().iter().map(|&v| v as f32).collect() })
    }

    fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn into_payload(self) -> OutputPayload {
        let values = self.data.into_iter().map(f64::from).collect();
        OutputPayload::tensor(vec![self.rows, self.cols], values).expect("consistent shape")
    }
}

fn arity(kernel: Kernel, inputs: &[OutputPayload], expect: std::ops::RangeInclusive<usize>) -> Result<(), KernelError> {
    if expect.contains(&inputs.len()) {
        Ok(())
    } else {
        Err(bad(kernel, format!("expected {expect:?} inputs, got {}", inputs.len())))
    }
}

fn dot(a: &[f32], b: impl DoubleEndedIterator<Item = f32>, reversed: bool) -> f32 {
    if reversed {
        a.iter().rev().zip(b.rev()).fold(0.0, |acc, (&x, y)| acc + x * y)
    } else {
        a.iter().zip(b).fold(0.0, |acc, (&x, y)| acc + x * y)
    }
}

fn linear(x: &Mat, w: &Mat, reversed: bool) -> Result<Mat, KernelError> {
    if x.cols != w.rows {
        return Err(bad(Kernel::Linear, format!("x has {} columns but w has {} rows", x.cols, w.rows)));
    }
    let mut data = Vec::with_capacity(x.rows * w.cols);
    for r in 0..x.rows {
        let xr = x.row(r);
        for c in 0..w.cols {
            data.push(dot(xr, (0..w.rows).map(|k| w.data[k * w.cols + c]), reversed));
        }
    }
    Ok(Mat { rows: x.rows, cols: w.cols, data })
}

const TILE: usize = 4;

/// Blocked matmul: partial sums per `TILE`-wide slice of the inner dimension.
fn matmul_tiled(a: &Mat, b: &Mat) -> Mat {
    let mut data = vec![0.0f32; a.rows * b.cols];
    for k0 in (0..a.cols).step_by(TILE) {
        let k1 = (k0 + TILE).min(a.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                let mut partial = 0.0f32;
                for k in k0..k1 {
                    partial += a.data[i * a.cols + k] * b.data[k * b.cols + j];
                }
                data[i * b.cols + j] += partial;
            }
        }
    }
    Mat { rows: a.rows, cols: b.cols, data }
}

fn rmsnorm(x: &Mat, w: &Mat, eps: f32, reversed: bool) -> Result<Mat, KernelError> {
    if w.data.len() != x.cols {
        return Err(bad(Kernel::Rmsnorm, format!("weight length {} != hidden {}", w.data.len(), x.cols)));
    }
    let mut data = Vec::with_capacity(x.data.len());
    for r in 0..x.rows {
        let row = x.row(r);
        let sq = |acc: f32, &v: &f32| acc + v * v;
        let ss = if reversed { row.iter().rev().fold(0.0, sq) } else { row.iter().fold(0.0, sq) };
        let inv = 1.0 / (ss / x.cols as f32 + eps).sqrt();
        data.extend(row.iter().zip(&w.data).map(|(&v, &g)| v * inv * g));
    }
    Ok(Mat { rows: x.rows, cols: x.cols, data })
}

fn silu(x: Mat) -> Mat {
    let data = x.data.iter().map(|&v| v / (1.0 + (-v).exp())).collect();
    Mat { data, ..x }
}

fn softmax(x: &Mat, reversed: bool) -> Mat {
    let mut data = Vec::with_capacity(x.data.len());
    for r in 0..x.rows {
        let row = x.row(r);
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let e: Vec<f32> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: f32 = if reversed { e.iter().rev().sum() } else { e.iter().sum() };
        data.extend(e.iter().map(|&v| v / sum));
    }
    Mat { rows: x.rows, cols: x.cols, data }
}

/// Indices of the `k` largest values, ties to the lower index.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx.truncate(k);
    idx
}

fn scalar_input(kernel: Kernel, p: &OutputPayload) -> Result<f64, KernelError> {
    match (p.kind(), p.values()) {
        (PayloadKind::Scalar, [v]) => Ok(*v),
        _ => Err(bad(kernel, "expected a scalar parameter")),
    }
}

fn compute(kernel: Kernel, reordered: bool, inputs: &[OutputPayload], ctx: &mut Context<'_>) -> Result<OutputPayload, KernelError> {
    let m = |i: usize| Mat::from(kernel, &inputs[i]);
    match kernel {
        Kernel::Linear => {
            arity(kernel, inputs, 2..=2)?;
            Ok(linear(&m(0)?, &m(1)?, reordered)?.into_payload())
        }
        Kernel::Rmsnorm => {
            arity(kernel, inputs, 2..=3)?;
            let eps = match inputs.get(2) {
                Some(p) => scalar_input(kernel, p)? as f32,
                None => RMS_EPS,
            };
            Ok(rmsnorm(&m(0)?, &m(1)?, eps, reordered)?.into_payload())
        }
        Kernel::Silu => {
            arity(kernel, inputs, 1..=1)?;
            Ok(silu(m(0)?).into_payload())
        }
        Kernel::Softmax => {
            arity(kernel, inputs, 1..=1)?;
            Ok(softmax(&m(0)?, reordered).into_payload())
        }
        Kernel::Matmul => {
            arity(kernel, inputs, 2..=2)?;
            let (a, b) = (m(0)?, m(1)?);
            if a.cols != b.rows {
                return Err(bad(kernel, format!("inner dimensions {} and {} differ", a.cols, b.rows)));
            }
            let out = if reordered { linear(&a, &b, false)? } else { matmul_tiled(&a, &b) };
            Ok(out.into_payload())
        }
        Kernel::TopkGate => {
            arity(kernel, inputs, 1..=2)?;
            let logits = m(0)?;
            let k = match inputs.get(1) {
                Some(p) => scalar_input(kernel, p)? as usize,
                None => DEFAULT_GATE_K,
            };
            if k == 0 || k > logits.cols {
                return Err(bad(kernel, format!("k={k} outside 1..={}", logits.cols)));
            }
            let mut ids = Vec::with_capacity(logits.rows * k);
            for r in 0..logits.rows {
                let row: Vec<f64> = logits.row(r).iter().map(|&v| f64::from(v)).collect();
                ids.extend(top_k(&row, k).into_iter().map(|e| e as u64));
            }
            OutputPayload::token_ids(vec![logits.rows, k], &ids).map_err(|e| bad(kernel, e.to_string()))
        }
        Kernel::Argsort => {
            arity(kernel, inputs, 1..=1)?;
            let scores = inputs[0].values();
            if inputs[0].kind() != PayloadKind::NumericTensor || scores.iter().any(|v| v.is_nan()) {
                return Err(bad(kernel, "expected finite numeric scores"));
            }
            let ids: Vec<u64> = top_k(scores, scores.len()).into_iter().map(|i| i as u64).collect();
            OutputPayload::ranked_ids(&ids).map_err(|e| bad(kernel, e.to_string()))
        }
        Kernel::Mlp => {
            arity(kernel, inputs, 3..=3)?;
            let h = ctx.call_slot("linear", vec![inputs[0].clone(), inputs[1].clone()])?;
            let a = ctx.call_slot("silu", vec![h])?;
            ctx.call_slot("linear", vec![a, inputs[2].clone()])
        }
        Kernel::Block => {
            arity(kernel, inputs, 4..=4)?;
            let x = m(0)?;
            let h = ctx.call_slot("rmsnorm", vec![inputs[0].clone(), inputs[1].clone()])?;
            let y = ctx.call_slot("mlp", vec![h, inputs[2].clone(), inputs[3].clone()])?;
            let y = Mat::from(kernel, &y)?;
            if y.data.len() != x.data.len() {
                return Err(bad(kernel, "mlp output does not match the residual"));
            }
            let data = x.data.iter().zip(&y.data).map(|(a, b)| a + b).collect();
            Ok(Mat { data, ..x }.into_payload())
        }
        Kernel::Model => {
            if inputs.len() < 4 || !(inputs.len() - 1).is_multiple_of(3) {
                return Err(bad(kernel, "expected x followed by (norm, up, down) weights per layer"));
            }
            let mut x = inputs[0].clone();
            for layer in inputs[1..].chunks(3) {
                x = ctx.call_slot("block", vec![x, layer[0].clone(), layer[1].clone(), layer[2].clone()])?;
            }
            Ok(x)
        }
        Kernel::Allreduce => Err(bad(kernel, "all-reduce runs only under the multi-rank harness")),
    }
}

/// Deterministic noise of amplitude `amp` added to a numeric output.
fn add_noise(out: OutputPayload, amp: f64) -> OutputPayload {
    if out.kind() != PayloadKind::NumericTensor || amp == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let shape = out.shape().to_vec();
    let values = out.into_values().into_iter().map(|v| v + amp * rng.random_range(-1.0..=1.0)).collect();
    OutputPayload::tensor(shape, values).expect("shape unchanged")
}

/// Output-corrupting faults, applied after the computation.
pub fn corrupt(out: OutputPayload, variant: Variant) -> OutputPayload {
    match variant {
        Variant::Noisy(a) => add_noise(out, a),
        Variant::Nan => {
            let shape = out.shape().to_vec();
            let kind = out.kind();
            let mut values = out.into_values();
            if kind == PayloadKind::NumericTensor || kind == PayloadKind::Scalar {
                values[0] = f64::NAN;
                OutputPayload::new(kind, shape, values).expect("shape unchanged")
            } else {
                OutputPayload::tensor(shape, values.into_iter().map(|_| f64::NAN).collect()).expect("shape unchanged")
            }
        }
        Variant::Shape => {
            let kind = out.kind();
            let mut values = out.into_values();
            if values.len() > 1 {
                values.pop();
            } else {
                values.push(0.0);
            }
            let kind = if kind == PayloadKind::Scalar { PayloadKind::NumericTensor } else { kind };
            OutputPayload::new(kind, vec![values.len()], values).expect("flat shape")
        }
        Variant::Type => {
            let shape = out.shape().to_vec();
            match out.kind() {
                PayloadKind::NumericTensor | PayloadKind::Scalar => {
                    let ids: Vec<u64> = out.values().iter().map(|v| v.abs().round() as u64).collect();
                    let shape = if shape.is_empty() { vec![1] } else { shape };
                    OutputPayload::token_ids(shape, &ids).expect("same shape")
                }
                _ => OutputPayload::tensor(shape, out.into_values()).expect("same shape"),
            }
        }
        _ => out,
    }
}

/// Runs a built-in kernel with its variant's numerical behaviour. Process
/// faults (crash, hang, segv) are the worker's business, not this
/// function's.
pub fn execute(loc: BuiltinLocator, inputs: &[OutputPayload], ctx: &mut Context<'_>) -> Result<OutputPayload, KernelError> {
    let repeats = match loc.variant {
        Variant::Slow(n) => n,
        _ => 1,
    };
    let reordered = loc.variant == Variant::Reordered;
    let mut out = compute(loc.kernel, reordered, inputs, ctx)?;
    for _ in 1..repeats {
        let mut quiet = Context { slots: ctx.slots, capture: None, depth: ctx.depth };
        out = std::hint::black_box(compute(loc.kernel, reordered, inputs, &mut quiet)?);
    }
    Ok(corrupt(out, loc.variant))
}

/// Convenience wrapper: a reference call with default slots.
pub fn run_reference(kernel: Kernel, inputs: &[OutputPayload]) -> Result<OutputPayload, KernelError> {
    let slots = BTreeMap::new();
    execute(BuiltinLocator::reference(kernel), inputs, &mut Context::new(&slots))
}
