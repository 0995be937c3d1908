//! Reduce-scatter and all-gather schedules.
//!
//! Each of the `n` chunks is reduced along an in-arborescence rooted at its
//! sink, then the sink's final message is broadcast. Every worker compresses
//! each chunk exactly once: leaves compress their local data, internal nodes
//! recompress after accumulating, and the sink recompresses the full sum for
//! the broadcast. Those `n` compressions get distinct hop slots in
//! topological order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    #[default]
    Ring,
    Butterfly,
}

impl std::str::FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(Self::Ring),
            "butterfly" => Ok(Self::Butterfly),
            other => Err(Error::Config(format!("unknown topology `{other}`"))),
        }
    }
}

impl std::fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ring => "ring",
            Self::Butterfly => "butterfly",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReduceEvent {
    pub sender: usize,
    pub receiver: usize,
    pub step: usize,
    /// Slot of the sender's compression.
    pub hop_slot: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GatherEvent {
    pub sender: usize,
    pub receiver: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChunkPlan {
    pub chunk: usize,
    pub sink: usize,
    pub reduce: Vec<ReduceEvent>,
    pub gather: Vec<GatherEvent>,
    /// `slots[w]` is the hop slot of worker `w`'s compression of this chunk.
    pub slots: Vec<u32>,
    pub n_slots: u32,
}

impl ChunkPlan {
    /// Reduce events whose receiver is `worker`, in schedule order.
    pub fn parents(&self, worker: usize) -> impl Iterator<Item = &ReduceEvent> {
        self.reduce.iter().filter(move |e| e.receiver == worker)
    }

    /// Longest path, in hops, from any leaf to the sink.
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.slots.len()];
        let mut events = self.reduce.clone();
        events.sort_by_key(|e| e.step);
        for e in events {
            depth[e.receiver] = depth[e.receiver].max(depth[e.sender] + 1);
        }
        depth[self.sink]
    }

    /// Number of workers whose data reaches `worker` through the reduce tree,
    /// itself included.
    pub fn subtree_size(&self, worker: usize) -> usize {
        1 + self.parents(worker).map(|e| self.subtree_size(e.sender)).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Schedule {
    pub n: usize,
    pub kind: TopologyKind,
    pub chunks: Vec<ChunkPlan>,
}

impl Schedule {
    pub fn new(kind: TopologyKind, n: usize) -> Result<Self> {
        match kind {
            TopologyKind::Ring => ring_schedule(n),
            TopologyKind::Butterfly => butterfly_schedule(n),
        }
    }

    pub fn reduce_steps(&self) -> usize {
        self.chunks
            .iter()
            .flat_map(|c| c.reduce.iter().map(|e| e.step + 1))
            .max()
            .unwrap_or(0)
    }
}

/// Slots in order of each worker's send step, the sink last.
fn slots_by_send_step(n: usize, sink: usize, reduce: &[ReduceEvent]) -> Vec<u32> {
    let mut send_step = vec![usize::MAX; n];
    for e in reduce {
        send_step[e.sender] = e.step;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&w| (w == sink, send_step[w], w));
    let mut slots = vec![0u32; n];
    for (slot, w) in order.into_iter().enumerate() {
        slots[w] = slot as u32;
    }
    slots
}

fn finish_plan(chunk: usize, n: usize, sink: usize, mut reduce: Vec<ReduceEvent>, gather: Vec<GatherEvent>) -> ChunkPlan {
    let slots = slots_by_send_step(n, sink, &reduce);
    for e in &mut reduce {
        e.hop_slot = slots[e.sender];
    }
    ChunkPlan {
        chunk,
        sink,
        reduce,
        gather,
        slots,
        n_slots: n as u32,
    }
}

/// Chunk `i` travels `i+1 -> i+2 -> ... -> i` and is then forwarded around
/// the ring once more.
pub fn ring_schedule(n: usize) -> Result<Schedule> {
    if n < 2 {
        return Err(Error::Schedule(format!("ring needs at least 2 workers, got {n}")));
    }
    let chunks = (0..n)
        .map(|i| {
            let reduce = (0..n - 1)
                .map(|k| ReduceEvent {
                    sender: (i + 1 + k) % n,
                    receiver: (i + 2 + k) % n,
                    step: k,
                    hop_slot: 0,
                })
                .collect();
            let gather = (0..n - 1)
                .map(|g| GatherEvent {
                    sender: (i + g) % n,
                    receiver: (i + g + 1) % n,
                    step: n - 1 + g,
                })
                .collect();
            finish_plan(i, n, i, reduce, gather)
        })
        .collect();
    Ok(Schedule {
        n,
        kind: TopologyKind::Ring,
        chunks,
    })
}

/// Recursive halving then doubling. At reduce stage `l` every worker still
/// holding chunk `c` whose bit `l` differs from `c`'s hands its partial sum to
/// the partner across that bit, so subtree sizes double each stage.
pub fn butterfly_schedule(n: usize) -> Result<Schedule> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::Schedule(format!("butterfly needs a power-of-two worker count >= 2, got {n}")));
    }
    let stages = n.trailing_zeros() as usize;
    let chunks = (0..n)
        .map(|c| {
            let mut reduce = Vec::with_capacity(n - 1);
            for l in 0..stages {
                let low = (1usize << l) - 1;
                let bit = 1usize << l;
                for w in 0..n {
                    if w & low == c & low && (w ^ c) & bit != 0 {
                        reduce.push(ReduceEvent {
                            sender: w,
                            receiver: w ^ bit,
                            step: l,
                            hop_slot: 0,
                        });
                    }
                }
            }
            let mut gather = Vec::with_capacity(n - 1);
            for (k, l) in (0..stages).rev().enumerate() {
                let mask = (1usize << (l + 1)) - 1;
                let bit = 1usize << l;
                for w in 0..n {
                    if w & mask == c & mask {
                        gather.push(GatherEvent {
                            sender: w,
                            receiver: w ^ bit,
                            step: stages + k,
                        });
                    }
                }
            }
            finish_plan(c, n, c, reduce, gather)
        })
        .collect();
    Ok(Schedule {
        n,
        kind: TopologyKind::Butterfly,
        chunks,
    })
}

/// Checks a schedule by replaying it on symbolic per-worker contribution
/// counts with exact integer addition.
pub fn validate_schedule(schedule: &Schedule) -> Result<()> {
    let n = schedule.n;
    let fail = |chunk: usize, msg: String| Err(Error::Schedule(format!("chunk {chunk}: {msg}")));
    if schedule.chunks.len() != n {
        return Err(Error::Schedule(format!("{} chunk plans for {n} workers", schedule.chunks.len())));
    }
    for (idx, plan) in schedule.chunks.iter().enumerate() {
        let c = plan.chunk;
        if c != idx {
            return fail(idx, format!("plan labelled as chunk {c}"));
        }
        if plan.sink >= n || plan.slots.len() != n {
            return fail(c, "sink or slot table out of range".into());
        }
        if plan.reduce.iter().any(|e| e.sender >= n || e.receiver >= n || e.sender == e.receiver) {
            return fail(c, "reduce event with an invalid endpoint".into());
        }

        // counts[w][v]: how many times worker v's data is folded into what w holds
        let mut counts: Vec<Vec<u64>> = (0..n).map(|w| (0..n).map(|v| (v == w) as u64).collect()).collect();
        let mut events = plan.reduce.clone();
        events.sort_by_key(|e| e.step);
        for e in &events {
            let sent = counts[e.sender].clone();
            for (acc, x) in counts[e.receiver].iter_mut().zip(sent) {
                *acc += x;
            }
        }
        for (v, &k) in counts[plan.sink].iter().enumerate() {
            match k {
                1 => {}
                0 => return fail(c, format!("worker {v} never reaches sink {}", plan.sink)),
                k => return fail(c, format!("worker {v} counted {k} times at sink {}", plan.sink)),
            }
        }

        // each non-sink worker sends once, after everything it receives
        let mut send_step = vec![None; n];
        for e in &plan.reduce {
            if e.sender == plan.sink {
                return fail(c, format!("sink {} sends during reduce", plan.sink));
            }
            if send_step[e.sender].replace(e.step).is_some() {
                return fail(c, format!("worker {} sends twice", e.sender));
            }
        }
        for e in &plan.reduce {
            if let Some(s) = send_step[e.receiver] {
                if s <= e.step {
                    return fail(c, format!("worker {} forwards at step {s} before receiving at step {}", e.receiver, e.step));
                }
            }
        }

        let mut slots = plan.slots.clone();
        slots.sort_unstable();
        if plan.n_slots as usize != n || slots != (0..n as u32).collect::<Vec<_>>() {
            return fail(c, format!("hop slots {:?} are not 0..{}", plan.slots, plan.n_slots));
        }
        for e in &plan.reduce {
            if e.hop_slot != plan.slots[e.sender] || plan.slots[e.sender] >= plan.slots[e.receiver] {
                return fail(c, format!("hop slot of {} -> {} out of order", e.sender, e.receiver));
            }
        }

        // gather: only holders send, and everyone ends up holding
        let last_reduce = plan.reduce.iter().map(|e| e.step).max().unwrap_or(0);
        let mut holds = vec![None; n];
        holds[plan.sink] = Some(last_reduce);
        let mut gather = plan.gather.clone();
        gather.sort_by_key(|e| e.step);
        for e in &gather {
            if e.sender >= n || e.receiver >= n {
                return fail(c, "gather event with an invalid endpoint".into());
            }
            match holds[e.sender] {
                Some(t) if t < e.step || (e.sender == plan.sink && t <= e.step) => {}
                _ => return fail(c, format!("worker {} forwards before holding the result", e.sender)),
            }
            if holds[e.receiver].is_some() {
                return fail(c, format!("worker {} receives the result twice", e.receiver));
            }
            holds[e.receiver] = Some(e.step);
        }
        if let Some(w) = holds.iter().position(|h| h.is_none()) {
            return fail(c, format!("worker {w} never receives the result"));
        }
    }
    Ok(())
}
