//! Two-phase all-reduce over simulated workers.
//!
//! Phase one all-reduces per-super-group means and squared norms exactly.
//! Every worker then normalizes, derives the same width allocation and
//! permutation, and the permuted gradient is split into `n` contiguous chunks
//! that are reduced along the topology's schedule with the chunk codec and
//! broadcast back. Messages are plain byte buffers.

use std::ops::Range;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::allocation::{
    allocate_fast, allocate_fixed, allocate_general, apply_permutation, invert_permutation, BitAllocation, BudgetSpec,
};
use crate::codebook::CodebookSet;
use crate::codec::{ChunkCodec, CodecParams, DynamiqCodec, HopContext, LosslessCodec, ScaleMode};
use crate::error::{Error, Result};
use crate::metrics::{ErrorReport, HopError, WireTotals};
use crate::randomness::SharedSeed;
use crate::stats::{compute_stats, denormalize, normalize, reduce_stats, GradientView, GroupLayout, SuperGroupStats};
use crate::topology::{ChunkPlan, Schedule, TopologyKind};

/// Bits of first-phase statistics per super-group per hop: a 32-bit mean and a
/// 32-bit squared norm.
pub const STATS_BITS_PER_SUPER_GROUP: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AllocatorKind {
    #[default]
    General,
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CodecKind {
    #[default]
    Quantized,
    /// Raw `f32` messages, for checking schedules and plumbing.
    Lossless,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExecutionMode {
    #[default]
    Sequential,
    /// One thread per worker exchanging messages over channels.
    Threaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub non_uniform: bool,
    pub variable_width: bool,
    pub hierarchical_scales: bool,
    pub correlated: bool,
    /// Width of every super-group when `variable_width` is off.
    pub fixed_width: u32,
    pub bits_per_coordinate: f64,
    pub group_size: usize,
    pub super_group_size: usize,
    pub topology: TopologyKind,
    pub allocator: AllocatorKind,
    pub codec: CodecKind,
    pub execution: ExecutionMode,
    pub seed: u64,
    pub round: u64,
    /// Record the error of every reduce message.
    pub trace: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            non_uniform: true,
            variable_width: true,
            hierarchical_scales: true,
            correlated: true,
            fixed_width: 4,
            bits_per_coordinate: 5.0,
            group_size: 16,
            super_group_size: 256,
            topology: TopologyKind::Ring,
            allocator: AllocatorKind::General,
            codec: CodecKind::Quantized,
            execution: ExecutionMode::Sequential,
            seed: 0,
            round: 0,
            trace: true,
        }
    }
}

impl PipelineConfig {
    pub fn layout(&self) -> Result<GroupLayout> {
        GroupLayout::new(self.group_size, self.super_group_size)
    }

    pub fn scale_mode(&self) -> ScaleMode {
        if self.hierarchical_scales {
            ScaleMode::Hierarchical
        } else {
            ScaleMode::Direct
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.layout()?;
        if !self.variable_width && ![2, 4, 8].contains(&self.fixed_width) {
            return Err(Error::Config(format!("fixed width {} must be 2, 4 or 8", self.fixed_width)));
        }
        if !self.bits_per_coordinate.is_finite() || self.bits_per_coordinate <= 0.0 {
            return Err(Error::Config(format!("budget {} must be positive", self.bits_per_coordinate)));
        }
        Ok(())
    }

    pub fn budget(&self) -> Result<BudgetSpec> {
        let mut spec = BudgetSpec::new(self.bits_per_coordinate, self.layout()?);
        spec.scale_mode = self.scale_mode();
        Ok(spec)
    }

    pub fn codec_params(&self) -> Result<CodecParams> {
        let books = if self.non_uniform {
            CodebookSet::non_uniform()?
        } else {
            CodebookSet::uniform()?
        };
        CodecParams::new(self.layout()?, self.scale_mode(), books, self.correlated)
    }

    fn codec(&self) -> Result<Box<dyn ChunkCodec>> {
        Ok(match self.codec {
            CodecKind::Quantized => Box::new(DynamiqCodec::new(self.codec_params()?)),
            CodecKind::Lossless => Box::new(LosslessCodec),
        })
    }

    fn shared_seed(&self) -> SharedSeed {
        SharedSeed::new(self.seed, self.round)
    }
}

/// One transmitted buffer.
#[derive(Debug, Clone)]
pub struct MessageRecord {
    pub gather: bool,
    pub step: usize,
    pub chunk: usize,
    pub sender: usize,
    pub receiver: usize,
    pub bytes: Arc<Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct RoundResult {
    pub synced: Vec<f32>,
    pub exact: Vec<f64>,
    pub report: ErrorReport,
    pub wire: WireTotals,
    pub allocation: Option<BitAllocation>,
    /// SHA-256 over every message in schedule order, hex encoded.
    pub traffic_hash: String,
    pub messages: Vec<MessageRecord>,
    /// Every worker decoded the same synced gradient.
    pub workers_agree: bool,
}

/// Double-precision direct summation.
pub fn run_exact(workers: &[Vec<f32>]) -> Result<Vec<f64>> {
    let d = check_workers(workers)?;
    let mut out = vec![0.0f64; d];
    for w in workers {
        for (acc, &x) in out.iter_mut().zip(w) {
            *acc += x as f64;
        }
    }
    Ok(out)
}

fn check_workers(workers: &[Vec<f32>]) -> Result<usize> {
    let first = workers
        .first()
        .ok_or_else(|| Error::InvalidArgument("no workers".into()))?;
    for w in workers {
        if w.len() != first.len() {
            return Err(Error::LengthMismatch {
                expected: first.len(),
                actual: w.len(),
            });
        }
    }
    if first.is_empty() {
        return Err(Error::InvalidArgument("empty gradient".into()));
    }
    Ok(first.len())
}

/// State shared by all workers once phase one is done.
struct Prepared {
    n: usize,
    d: usize,
    layout: GroupLayout,
    global: Vec<SuperGroupStats>,
    allocation: BitAllocation,
    /// Width of each super-group in permuted order.
    widths: Vec<u32>,
    /// Super-group range of each chunk in permuted order.
    chunks: Vec<Range<usize>>,
    /// Normalized, permuted, padded local data per worker.
    locals: Vec<Vec<f32>>,
    schedule: Schedule,
}

impl Prepared {
    fn entries(&self, chunk: usize) -> Range<usize> {
        let s = self.layout.super_group_size;
        self.chunks[chunk].start * s..self.chunks[chunk].end * s
    }

    fn local(&self, worker: usize, chunk: usize) -> &[f32] {
        &self.locals[worker][self.entries(chunk)]
    }

    fn widths(&self, chunk: usize) -> &[u32] {
        &self.widths[self.chunks[chunk].clone()]
    }
}

fn split_chunks(num_super_groups: usize, n: usize) -> Vec<Range<usize>> {
    let (base, extra) = (num_super_groups / n, num_super_groups % n);
    let mut start = 0;
    (0..n)
        .map(|i| {
            let len = base + (i < extra) as usize;
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

fn prepare(workers: &[Vec<f32>], config: &PipelineConfig) -> Result<Prepared> {
    let d = check_workers(workers)?;
    let n = workers.len();
    let layout = config.layout()?;
    let views = workers
        .iter()
        .map(|w| GradientView::new(w.clone(), layout))
        .collect::<Result<Vec<_>>>()?;
    let per_worker: Vec<_> = views.iter().map(compute_stats).collect();
    let global = reduce_stats(&per_worker)?;
    let norms: Vec<f32> = global.iter().map(|s| s.sq_norm).collect();

    let budget = config.budget()?;
    let allocation = if config.variable_width {
        match config.allocator {
            AllocatorKind::General => allocate_general(&norms, &budget)?,
            AllocatorKind::Fast => allocate_fast(&norms, &budget)?,
        }
    } else {
        allocate_fixed(norms.len(), config.fixed_width, &budget)?
    };
    let big = layout.super_group_size;
    let locals = views
        .iter()
        .map(|v| apply_permutation(normalize(v, &global)?.data(), big, &allocation.permutation))
        .collect::<Result<Vec<_>>>()?;
    let widths = allocation.permutation.iter().map(|&j| allocation.widths[j]).collect();
    let schedule = Schedule::new(config.topology, n)?;
    Ok(Prepared {
        n,
        d,
        layout,
        chunks: split_chunks(global.len(), n),
        global,
        allocation,
        widths,
        locals,
        schedule,
    })
}

/// What a worker sends for a chunk once all parents have arrived: its local
/// data if it has none, otherwise every parent but the last accumulated into
/// the local data and the last one fused in on recompression.
fn produce(
    codec: &dyn ChunkCodec,
    local: &[f32],
    widths: &[u32],
    inbox: &[Arc<Vec<u8>>],
    ctx: &HopContext,
) -> Result<Vec<u8>> {
    match inbox.split_last() {
        None => codec.compress(local, widths, ctx),
        Some((last, [])) => codec.decompress_accumulate_recompress(last, local, widths, ctx),
        Some((last, rest)) => {
            let mut acc = local.to_vec();
            for m in rest {
                codec.decompress_accumulate(m, &mut acc)?;
            }
            codec.decompress_accumulate_recompress(last, &acc, widths, ctx)
        }
    }
}

fn hop_context(config: &PipelineConfig, plan: &ChunkPlan, worker: usize) -> Result<HopContext> {
    HopContext::new(config.shared_seed(), plan.chunk as u32, plan.slots[worker], plan.n_slots)
}

/// Output of the main phase.
struct Exchange {
    log: Vec<MessageRecord>,
    /// Final message of each chunk.
    finals: Vec<Arc<Vec<u8>>>,
    /// Each worker's decoded, permuted, padded result.
    decoded: Vec<Vec<f32>>,
}

fn run_sequential(p: &Prepared, codec: &dyn ChunkCodec, config: &PipelineConfig) -> Result<Exchange> {
    let n = p.n;
    let mut inbox: Vec<Vec<Vec<Arc<Vec<u8>>>>> = vec![vec![Vec::new(); n]; n];
    let mut log = Vec::new();

    let mut reduce: Vec<(usize, &ChunkPlan, usize)> = p
        .schedule
        .chunks
        .iter()
        .flat_map(|plan| plan.reduce.iter().enumerate().map(move |(i, e)| (e.step, plan, i)))
        .collect();
    reduce.sort_by_key(|&(step, plan, i)| (step, plan.chunk, plan.reduce[i].sender));
    for (step, plan, i) in reduce {
        let e = plan.reduce[i];
        let c = plan.chunk;
        let msg = Arc::new(produce(
            codec,
            p.local(e.sender, c),
            p.widths(c),
            &inbox[e.sender][c],
            &hop_context(config, plan, e.sender)?,
        )?);
        inbox[e.receiver][c].push(msg.clone());
        log.push(MessageRecord {
            gather: false,
            step,
            chunk: c,
            sender: e.sender,
            receiver: e.receiver,
            bytes: msg,
        });
    }

    let mut finals = Vec::with_capacity(n);
    for plan in &p.schedule.chunks {
        let c = plan.chunk;
        finals.push(Arc::new(produce(
            codec,
            p.local(plan.sink, c),
            p.widths(c),
            &inbox[plan.sink][c],
            &hop_context(config, plan, plan.sink)?,
        )?));
    }

    let mut held: Vec<Vec<Option<Arc<Vec<u8>>>>> = vec![vec![None; n]; n];
    for plan in &p.schedule.chunks {
        held[plan.sink][plan.chunk] = Some(finals[plan.chunk].clone());
    }
    let mut gather: Vec<(usize, usize, usize, usize)> = p
        .schedule
        .chunks
        .iter()
        .flat_map(|plan| plan.gather.iter().map(move |e| (e.step, plan.chunk, e.sender, e.receiver)))
        .collect();
    gather.sort_unstable();
    for (step, c, sender, receiver) in gather {
        let msg = held[sender][c]
            .clone()
            .ok_or_else(|| Error::Schedule(format!("worker {sender} forwards chunk {c} before holding it")))?;
        held[receiver][c] = Some(msg.clone());
        log.push(MessageRecord {
            gather: true,
            step,
            chunk: c,
            sender,
            receiver,
            bytes: msg,
        });
    }

    let decoded = held
        .iter()
        .map(|row| decode_all(p, codec, row))
        .collect::<Result<Vec<_>>>()?;
    Ok(Exchange { log, finals, decoded })
}

fn decode_all(p: &Prepared, codec: &dyn ChunkCodec, held: &[Option<Arc<Vec<u8>>>]) -> Result<Vec<f32>> {
    let mut out = vec![0.0f32; p.locals[0].len()];
    for (c, msg) in held.iter().enumerate() {
        let msg = msg
            .as_ref()
            .ok_or_else(|| Error::Schedule(format!("chunk {c} never delivered")))?;
        codec.decompress_accumulate(msg, &mut out[p.entries(c)])?;
    }
    Ok(out)
}

struct Packet {
    step: usize,
    chunk: usize,
    bytes: Arc<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum OpKind {
    Send,
    Recv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Op {
    step: usize,
    kind: OpKind,
    chunk: usize,
    peer: usize,
    gather: bool,
}

/// A worker's sends and receives in execution order: by step, sends first.
fn worker_ops(schedule: &Schedule, w: usize) -> Vec<Op> {
    let mut ops = Vec::new();
    for plan in &schedule.chunks {
        let edges = plan
            .reduce
            .iter()
            .map(|e| (e.step, e.sender, e.receiver, false))
            .chain(plan.gather.iter().map(|e| (e.step, e.sender, e.receiver, true)));
        for (step, from, to, gather) in edges {
            if from == w {
                ops.push(Op { step, kind: OpKind::Send, chunk: plan.chunk, peer: to, gather });
            }
            if to == w {
                ops.push(Op { step, kind: OpKind::Recv, chunk: plan.chunk, peer: from, gather });
            }
        }
    }
    ops.sort_unstable();
    ops
}

fn run_worker(
    w: usize,
    p: &Prepared,
    codec: &dyn ChunkCodec,
    config: &PipelineConfig,
    tx: Vec<Option<Sender<Packet>>>,
    rx: Vec<Option<Receiver<Packet>>>,
) -> Result<(Vec<MessageRecord>, Vec<Option<Arc<Vec<u8>>>>, Vec<f32>)> {
    let n = p.n;
    let mut inbox: Vec<Vec<Arc<Vec<u8>>>> = vec![Vec::new(); n];
    let mut held: Vec<Option<Arc<Vec<u8>>>> = vec![None; n];
    let mut finals: Vec<Option<Arc<Vec<u8>>>> = vec![None; n];
    let mut log = Vec::new();
    let finalize = |c: usize, inbox: &[Arc<Vec<u8>>]| -> Result<Arc<Vec<u8>>> {
        let plan = &p.schedule.chunks[c];
        Ok(Arc::new(produce(codec, p.local(w, c), p.widths(c), inbox, &hop_context(config, plan, w)?)?))
    };

    for op in worker_ops(&p.schedule, w) {
        let c = op.chunk;
        match op.kind {
            OpKind::Send => {
                let bytes = if op.gather {
                    if held[c].is_none() && p.schedule.chunks[c].sink == w {
                        let f = finalize(c, &inbox[c])?;
                        finals[c] = Some(f.clone());
                        held[c] = Some(f);
                    }
                    held[c]
                        .clone()
                        .ok_or_else(|| Error::Schedule(format!("worker {w} forwards chunk {c} before holding it")))?
                } else {
                    finalize(c, &inbox[c])?
                };
                tx[op.peer]
                    .as_ref()
                    .expect("channel to every peer")
                    .send(Packet { step: op.step, chunk: c, bytes: bytes.clone() })
                    .map_err(|_| Error::Schedule(format!("worker {} hung up", op.peer)))?;
                log.push(MessageRecord {
                    gather: op.gather,
                    step: op.step,
                    chunk: c,
                    sender: w,
                    receiver: op.peer,
                    bytes,
                });
            }
            OpKind::Recv => {
                let packet = rx[op.peer]
                    .as_ref()
                    .expect("channel from every peer")
                    .recv()
                    .map_err(|_| Error::Schedule(format!("worker {} hung up", op.peer)))?;
                if packet.step != op.step || packet.chunk != c {
                    return Err(Error::Schedule(format!(
                        "worker {w} expected chunk {c} at step {} from {}, got chunk {} at step {}",
                        op.step, op.peer, packet.chunk, packet.step
                    )));
                }
                if op.gather {
                    held[c] = Some(packet.bytes);
                } else {
                    inbox[c].push(packet.bytes);
                }
            }
        }
    }
    for plan in &p.schedule.chunks {
        if plan.sink == w && held[plan.chunk].is_none() {
            let f = finalize(plan.chunk, &inbox[plan.chunk])?;
            finals[plan.chunk] = Some(f.clone());
            held[plan.chunk] = Some(f);
        }
    }
    let decoded = decode_all(p, codec, &held)?;
    Ok((log, finals, decoded))
}

fn run_threaded(p: &Prepared, codec: &dyn ChunkCodec, config: &PipelineConfig) -> Result<Exchange> {
    let n = p.n;
    let mut txs: Vec<Vec<Option<Sender<Packet>>>> = (0..n).map(|_| (0..n).map(|_| None).collect()).collect();
    let mut rxs: Vec<Vec<Option<Receiver<Packet>>>> = (0..n).map(|_| (0..n).map(|_| None).collect()).collect();
    for from in 0..n {
        for to in 0..n {
            if from != to {
                let (tx, rx) = channel();
                txs[from][to] = Some(tx);
                rxs[to][from] = Some(rx);
            }
        }
    }
    let outputs: Vec<Result<_>> = std::thread::scope(|scope| {
        let handles: Vec<_> = txs
            .into_iter()
            .zip(rxs)
            .enumerate()
            .map(|(w, (tx, rx))| scope.spawn(move || run_worker(w, p, codec, config, tx, rx)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Schedule("worker thread panicked".into()))))
            .collect()
    });

    let mut log = Vec::new();
    let mut finals: Vec<Option<Arc<Vec<u8>>>> = vec![None; n];
    let mut decoded = Vec::with_capacity(n);
    for out in outputs {
        let (l, f, d) = out?;
        log.extend(l);
        for (slot, x) in finals.iter_mut().zip(f) {
            if x.is_some() {
                *slot = x;
            }
        }
        decoded.push(d);
    }
    let finals = finals
        .into_iter()
        .enumerate()
        .map(|(c, f)| f.ok_or_else(|| Error::Schedule(format!("chunk {c} has no final message"))))
        .collect::<Result<_>>()?;
    Ok(Exchange { log, finals, decoded })
}

fn traffic_hash(log: &[MessageRecord]) -> String {
    let mut h = Sha256::new();
    for m in log {
        h.update([m.gather as u8]);
        for x in [m.step, m.chunk, m.sender, m.receiver] {
            h.update((x as u64).to_le_bytes());
        }
        h.update((m.bytes.len() as u64).to_le_bytes());
        h.update(m.bytes.as_slice());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Error of every reduce message and of each sink's final message against
/// the exact sum of the normalized data it carries.
fn trace_hops(p: &Prepared, codec: &dyn ChunkCodec, ex: &Exchange) -> Result<Vec<HopError>> {
    let mut out = Vec::new();
    for plan in &p.schedule.chunks {
        let c = plan.chunk;
        let range = p.entries(c);
        let len = range.len();
        // members[w]: workers whose data w's message carries
        let mut members: Vec<Vec<usize>> = (0..p.n).map(|w| vec![w]).collect();
        let mut events = plan.reduce.clone();
        events.sort_by_key(|e| e.step);
        for e in &events {
            let m = members[e.sender].clone();
            members[e.receiver].extend(m);
        }
        let exact_of = |ws: &[usize]| -> Vec<f64> {
            let mut acc = vec![0.0f64; len];
            for &w in ws {
                for (a, &x) in acc.iter_mut().zip(p.local(w, c)) {
                    *a += x as f64;
                }
            }
            acc
        };
        let mut hops: Vec<(usize, usize, &[u8])> = Vec::new();
        for m in ex.log.iter().filter(|m| !m.gather && m.chunk == c) {
            hops.push((m.sender, m.receiver, m.bytes.as_slice()));
        }
        hops.push((plan.sink, plan.sink, ex.finals[c].as_slice()));
        for (sender, receiver, bytes) in hops {
            let decoded = codec.decompress(bytes, len)?;
            let exact = exact_of(&members[sender]);
            let squared_error = decoded
                .iter()
                .zip(&exact)
                .map(|(&a, &b)| (a as f64 - b).powi(2))
                .sum();
            out.push(HopError {
                chunk: c,
                sender,
                receiver,
                hop_slot: plan.slots[sender],
                subtree: members[sender].len(),
                squared_error,
                entries: len,
            });
        }
    }
    Ok(out)
}

/// Runs one all-reduce round.
pub fn run_round(workers: &[Vec<f32>], config: &PipelineConfig) -> Result<RoundResult> {
    config.validate()?;
    let d = check_workers(workers)?;
    let exact = run_exact(workers)?;
    if workers.len() == 1 {
        let synced = workers[0].clone();
        let wire = WireTotals::default();
        return Ok(RoundResult {
            report: report(&synced, &exact, &wire, Vec::new())?,
            synced,
            exact,
            wire,
            allocation: None,
            traffic_hash: traffic_hash(&[]),
            messages: Vec::new(),
            workers_agree: true,
        });
    }

    let p = prepare(workers, config)?;
    let codec = config.codec()?;
    let mut ex = match config.execution {
        ExecutionMode::Sequential => run_sequential(&p, codec.as_ref(), config)?,
        ExecutionMode::Threaded => run_threaded(&p, codec.as_ref(), config)?,
    };
    ex.log.sort_by_key(|m| (m.step, m.chunk, m.sender, m.receiver));

    let mut wire = WireTotals::default();
    for m in &ex.log {
        wire.add_message(&codec.breakdown(&m.bytes)?, m.gather);
    }
    for plan in &p.schedule.chunks {
        let hops = (plan.reduce.len() + plan.gather.len()) as u64;
        wire.stats_bits += hops * STATS_BITS_PER_SUPER_GROUP * p.chunks[plan.chunk].len() as u64;
    }

    let workers_agree = ex.decoded.windows(2).all(|w| w[0] == w[1]);
    let big = p.layout.super_group_size;
    let restored = invert_permutation(&ex.decoded[0], big, &p.allocation.permutation)?;
    let synced = denormalize(&GradientView::from_padded(restored, p.d, p.layout)?, &p.global, p.n)?;
    debug_assert_eq!(synced.len(), d);
    let per_hop = if config.trace {
        trace_hops(&p, codec.as_ref(), &ex)?
    } else {
        Vec::new()
    };
    Ok(RoundResult {
        report: report(&synced, &exact, &wire, per_hop)?,
        synced,
        exact,
        wire,
        allocation: Some(p.allocation),
        traffic_hash: traffic_hash(&ex.log),
        messages: ex.log,
        workers_agree,
    })
}

fn report(synced: &[f32], exact: &[f64], wire: &WireTotals, per_hop: Vec<HopError>) -> Result<ErrorReport> {
    if exact.iter().all(|&x| x == 0.0) {
        // vNMSE is undefined; report zero error only for an exact zero result
        let mut r = ErrorReport::new(&[1.0], &[1.0], wire, per_hop)?;
        r.mse = crate::metrics::mse(synced, exact)?;
        r.vnmse = if r.mse == 0.0 { 0.0 } else { f64::INFINITY };
        r.bits = crate::metrics::bits_per_coordinate(wire, exact.len());
        return Ok(r);
    }
    ErrorReport::new(synced, exact, wire, per_hop)
}

/// Names of the cumulative ablation variants, in ladder order.
pub const ABLATION_VARIANTS: [&str; 5] = ["uniform-fixed", "non-uniform", "variable-width", "hierarchical", "correlated"];

/// The ablation ladder built from `base`: start from uniform fixed-width
/// quantization with plain binary16 group scales at twice the base group size,
/// then switch on one feature per step.
pub fn ablation_ladder(base: &PipelineConfig) -> Vec<(&'static str, PipelineConfig)> {
    let mut c = base.clone();
    c.non_uniform = false;
    c.variable_width = false;
    c.hierarchical_scales = false;
    c.correlated = false;
    c.group_size = base.group_size * 2;
    let mut out = vec![(ABLATION_VARIANTS[0], c.clone())];
    c.non_uniform = true;
    out.push((ABLATION_VARIANTS[1], c.clone()));
    c.variable_width = true;
    out.push((ABLATION_VARIANTS[2], c.clone()));
    c.hierarchical_scales = true;
    c.group_size = base.group_size;
    out.push((ABLATION_VARIANTS[3], c.clone()));
    c.correlated = true;
    out.push((ABLATION_VARIANTS[4], c));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub vnmse: f64,
    pub bits_per_coordinate: f64,
    pub traffic_hash: String,
}

pub fn run_ablation(workers: &[Vec<f32>], base: &PipelineConfig) -> Result<Vec<AblationRow>> {
    ablation_ladder(base)
        .into_iter()
        .map(|(name, mut config)| {
            config.trace = false;
            let r = run_round(workers, &config)?;
            Ok(AblationRow {
                variant: name.to_string(),
                vnmse: r.report.vnmse,
                bits_per_coordinate: r.report.bits.per_representation,
                traffic_hash: r.traffic_hash,
            })
        })
        .collect()
}
