//! Adaptive work sharing among a cohort of ranks.
//!
//! Rank `r` may send work only to ranks above it and reports its status only
//! to ranks below it. A rank terminates once it has no work left and has
//! received a termination signal from every lower rank; it then signals all
//! higher ranks and reports its partial sum to rank 0.
//!
//! Two transports drive the same [`RankWorker`] state machine: a seeded
//! in-process simulator that explores random delivery interleavings, and
//! TCP over an all-pairs mesh.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ddreal::{DDComplex, DDReal};
use crate::flo::{FloCounter, NoFlops};
use crate::linalg::{ComplexMatrix, Scalar};
use crate::parallel::{evaluate_below, WorkerPool, DEFAULT_CUTOFF};
use crate::torontonian::{
    validate_input, Addend, CholeskyPrecision, Context, EvalOptions, MergeFlos, ModeList, Node,
    TaskLocalState, TorError, TorResult,
};

pub type RankId = u16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RankState {
    Idle,
    Busy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkItem {
    pub removed_modes: ModeList,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatusMsg {
    pub sender: RankId,
    pub state: RankState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermSignal {
    pub sender: RankId,
}

/// Partial sum of one rank, gathered at rank 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankResult {
    pub sender: RankId,
    pub value: DDReal,
    pub addends: u64,
    pub flos: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Work(WorkItem),
    Status(StatusMsg),
    Term(TermSignal),
    Result(RankResult),
    /// First frame on a fresh connection: the connecting rank and its
    /// listen address.
    Hello {
        rank: RankId,
        addr: String,
    },
    /// Rank 0's reply during bootstrap: every rank's listen address.
    Peers(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    Work,
    Status,
    Term,
    Result,
    Hello,
    Peers,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Self::Work(_) => MessageKind::Work,
            Self::Status(_) => MessageKind::Status,
            Self::Term(_) => MessageKind::Term,
            Self::Result(_) => MessageKind::Result,
            Self::Hello { .. } => MessageKind::Hello,
            Self::Peers(_) => MessageKind::Peers,
        }
    }
}

// ---------------------------------------------------------------------------
// Wire format

const TAG_WORK: u8 = 0x01;
const TAG_STATUS: u8 = 0x02;
const TAG_TERM: u8 = 0x03;
const TAG_RESULT: u8 = 0x04;
const TAG_HELLO: u8 = 0x05;
const TAG_PEERS: u8 = 0x06;

/// Largest accepted frame payload.
pub const MAX_FRAME: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("empty frame")]
    Empty,
    #[error("unknown message tag {0:#04x}")]
    UnknownTag(u8),
    #[error("truncated frame")]
    Truncated,
    #[error("{0} trailing bytes in frame")]
    Trailing(usize),
    #[error("invalid status byte {0}")]
    BadState(u8),
    #[error("address is not UTF-8")]
    BadUtf8,
    #[error("frame of {0} bytes exceeds limit")]
    TooLarge(usize),
    #[error("mode indices are not strictly increasing")]
    BadModes,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8], WireError> {
        let s = self
            .buf
            .get(self.pos..self.pos + k)
            .ok_or(WireError::Truncated)?;
        self.pos += k;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn string(&mut self) -> Result<String, WireError> {
        let len = self.u16()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| WireError::BadUtf8)
    }
}

fn put_string(out: &mut Vec<u8>, s: &str) {
    let b = s.as_bytes();
    let len = b.len().min(u16::MAX as usize);
    out.extend_from_slice(&(len as u16).to_le_bytes());
    out.extend_from_slice(&b[..len]);
}

impl Message {
    /// Frame payload (without the length prefix).
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16);
        match self {
            Self::Work(w) => {
                out.push(TAG_WORK);
                let modes = w.removed_modes.as_slice();
                out.extend_from_slice(&(modes.len() as u16).to_le_bytes());
                for &m in modes {
                    out.extend_from_slice(&(m as u16).to_le_bytes());
                }
            }
            Self::Status(s) => {
                out.push(TAG_STATUS);
                out.extend_from_slice(&s.sender.to_le_bytes());
                out.push(match s.state {
                    RankState::Idle => 0,
                    RankState::Busy => 1,
                });
            }
            Self::Term(t) => {
                out.push(TAG_TERM);
                out.extend_from_slice(&t.sender.to_le_bytes());
            }
            Self::Result(r) => {
                out.push(TAG_RESULT);
                out.extend_from_slice(&r.sender.to_le_bytes());
                out.extend_from_slice(&r.value.hi.to_bits().to_le_bytes());
                out.extend_from_slice(&r.value.lo.to_bits().to_le_bytes());
                out.extend_from_slice(&r.addends.to_le_bytes());
                out.extend_from_slice(&r.flos.to_le_bytes());
            }
            Self::Hello { rank, addr } => {
                out.push(TAG_HELLO);
                out.extend_from_slice(&rank.to_le_bytes());
                put_string(&mut out, addr);
            }
            Self::Peers(addrs) => {
                out.push(TAG_PEERS);
                out.extend_from_slice(&(addrs.len() as u16).to_le_bytes());
                for a in addrs {
                    put_string(&mut out, a);
                }
            }
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        let mut c = Cursor { buf, pos: 0 };
        let tag = c.u8().map_err(|_| WireError::Empty)?;
        let msg = match tag {
            TAG_WORK => {
                let count = c.u16()? as usize;
                let mut modes = Vec::with_capacity(count);
                for _ in 0..count {
                    modes.push(c.u16()? as usize);
                }
                if modes.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(WireError::BadModes);
                }
                let d = modes.last().map_or(0, |m| m + 1);
                let removed_modes = ModeList::new(modes, d).map_err(|_| WireError::BadModes)?;
                Self::Work(WorkItem { removed_modes })
            }
            TAG_STATUS => {
                let sender = c.u16()?;
                let state = match c.u8()? {
                    0 => RankState::Idle,
                    1 => RankState::Busy,
                    b => return Err(WireError::BadState(b)),
                };
                Self::Status(StatusMsg { sender, state })
            }
            TAG_TERM => Self::Term(TermSignal { sender: c.u16()? }),
            TAG_RESULT => {
                let sender = c.u16()?;
                let hi = c.f64()?;
                let lo = c.f64()?;
                Self::Result(RankResult {
                    sender,
                    value: DDReal { hi, lo },
                    addends: c.u64()?,
                    flos: c.u64()?,
                })
            }
            TAG_HELLO => Self::Hello {
                rank: c.u16()?,
                addr: c.string()?,
            },
            TAG_PEERS => {
                let count = c.u16()? as usize;
                let mut addrs = Vec::with_capacity(count);
                for _ in 0..count {
                    addrs.push(c.string()?);
                }
                Self::Peers(addrs)
            }
            t => return Err(WireError::UnknownTag(t)),
        };
        if c.pos != buf.len() {
            return Err(WireError::Trailing(buf.len() - c.pos));
        }
        Ok(msg)
    }
}

/// Writes one frame: `u32` little-endian payload length, then the payload.
pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    let payload = msg.encode();
    let mut frame = Vec::with_capacity(4 + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    frame.extend_from_slice(&payload);
    w.write_all(&frame)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on end of stream at a frame boundary.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Message>, WorkshareError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(WireError::Truncated.into()),
            Ok(k) => got += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(WireError::TooLarge(len).into());
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            WorkshareError::Wire(WireError::Truncated)
        } else {
            e.into()
        }
    })?;
    Ok(Some(Message::decode(&payload)?))
}

// ---------------------------------------------------------------------------
// Errors, partition, configuration

#[derive(Debug, Error)]
pub enum WorkshareError {
    #[error(transparent)]
    Eval(#[from] TorError),
    #[error("rank {rank}: protocol violation: {what}")]
    Protocol { rank: usize, what: String },
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("transport: {0}")]
    Io(#[from] io::Error),
    #[error("transport: {0}")]
    Transport(String),
    #[error("cohort: {0}")]
    Cohort(String),
    #[error("simulation stalled after {events} events with unfinished ranks")]
    Stalled { events: u64 },
}

/// Top-level loop indices of each rank.
///
/// Index `i` carries `2^(d-i-1)` addends. Ranges are contiguous and
/// increasing with the rank; each rank takes the longest prefix of the
/// remaining indices that still lets the remaining ranks reach the smallest
/// achievable maximum load.
pub fn initial_partition(d: usize, ranks: usize) -> Vec<Vec<usize>> {
    let ranks = ranks.max(1);
    let weight = |i: usize| 1u128 << (d - i - 1);
    // best[k][j]: minimal max-load splitting indices j.. among k ranks.
    let mut best = vec![vec![0u128; d + 1]; ranks + 1];
    for j in 0..d {
        best[0][j] = u128::MAX;
    }
    for k in 1..=ranks {
        for j in (0..d).rev() {
            let mut load = 0u128;
            let mut b = best[k - 1][j];
            for end in j..d {
                load += weight(end);
                b = b.min(load.max(best[k - 1][end + 1]));
            }
            best[k][j] = b;
        }
    }
    let mut out = Vec::with_capacity(ranks);
    let mut j = 0;
    for r in 0..ranks {
        let left = ranks - r;
        let target = best[left][j];
        let mut load = 0u128;
        let mut take = j;
        for end in j..d {
            load += weight(end);
            if load.max(best[left - 1][end + 1]) == target {
                take = end + 1;
            }
            if load > target {
                break;
            }
        }
        out.push((j..take).collect());
        j = take;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkerConfig {
    /// Items whose subtree holds at most `2^leaf_cutoff` addends are
    /// evaluated in one go; larger ones are split and queued.
    pub leaf_cutoff: usize,
    /// Pending items required before offloading to an idle rank.
    pub min_pending: usize,
    /// Task granularity passed to the shared-memory evaluator.
    pub task_cutoff: usize,
    pub recording: bool,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        Self {
            leaf_cutoff: 12,
            min_pending: 2,
            task_cutoff: DEFAULT_CUTOFF,
            recording: false,
        }
    }
}

/// Per-rank accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RankReport {
    pub rank: usize,
    pub addends: u64,
    pub items_processed: u64,
    pub items_received: u64,
    pub items_offloaded: u64,
    pub idle_broadcasts: u64,
    pub terminated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Send,
    Deliver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub from: usize,
    pub to: usize,
    pub msg: MessageKind,
}

/// Checks direction, at-most-once and cascade rules on a trace. With
/// `complete`, also requires every rank to have signalled every higher rank.
pub fn check_trace(events: &[TraceEvent], ranks: usize, complete: bool) -> Result<(), String> {
    let mut term_sent = vec![vec![false; ranks]; ranks];
    let mut term_delivered = vec![vec![false; ranks]; ranks];
    for e in events {
        let ok = match e.msg {
            MessageKind::Work | MessageKind::Term => e.from < e.to,
            MessageKind::Status => e.from > e.to,
            MessageKind::Result => e.to == 0 && e.from != 0,
            MessageKind::Hello | MessageKind::Peers => true,
        };
        if !ok {
            return Err(format!(
                "{:?} {} -> {} violates direction",
                e.msg, e.from, e.to
            ));
        }
        if e.msg != MessageKind::Term {
            continue;
        }
        match e.kind {
            EventKind::Send => {
                if term_sent[e.from][e.to] {
                    return Err(format!("duplicate termination {} -> {}", e.from, e.to));
                }
                if let Some(s) = (0..e.from).find(|&s| !term_delivered[s][e.from]) {
                    return Err(format!(
                        "rank {} signalled before hearing from rank {s}",
                        e.from
                    ));
                }
                term_sent[e.from][e.to] = true;
            }
            EventKind::Deliver => term_delivered[e.from][e.to] = true,
        }
    }
    if complete {
        for r in 0..ranks {
            for h in r + 1..ranks {
                if !term_sent[r][h] {
                    return Err(format!("rank {r} never signalled rank {h}"));
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Rank state machine

struct Pending<T: Scalar> {
    removed: ModeList,
    parent: Option<Arc<Node<T>>>,
}

pub(crate) struct RankWorker<'p, T: Scalar, F: MergeFlos> {
    rank: usize,
    ranks: usize,
    ctx: Context<T>,
    cfg: WorkerConfig,
    pool: Option<&'p WorkerPool>,
    pending: Vec<Pending<T>>,
    peer_idle: Vec<bool>,
    term_from: Vec<bool>,
    announced: RankState,
    terminated: bool,
    results: Vec<Option<RankResult>>,
    state: TaskLocalState<F>,
    outbox: Vec<(usize, Message)>,
    report: RankReport,
}

impl<'p, T: Scalar, F: MergeFlos> RankWorker<'p, T, F> {
    fn new(
        a: &ComplexMatrix,
        rank: usize,
        ranks: usize,
        cfg: WorkerConfig,
        pool: Option<&'p WorkerPool>,
    ) -> Self {
        Self {
            rank,
            ranks,
            ctx: Context::new(a),
            cfg,
            pool,
            pending: Vec::new(),
            peer_idle: vec![false; ranks],
            term_from: vec![false; ranks],
            announced: RankState::Busy,
            terminated: false,
            results: vec![None; ranks],
            state: TaskLocalState::new(cfg.recording),
            outbox: Vec::new(),
            report: RankReport {
                rank,
                ..RankReport::default()
            },
        }
    }

    fn violation(&self, what: impl Into<String>) -> WorkshareError {
        WorkshareError::Protocol {
            rank: self.rank,
            what: what.into(),
        }
    }

    fn start(&mut self) -> Result<(), WorkshareError> {
        let d = self.ctx.d;
        let assigned = if d == 0 {
            Vec::new()
        } else {
            initial_partition(d, self.ranks).swap_remove(self.rank)
        };
        if self.rank == 0 || !assigned.is_empty() {
            let root = Node::from_scratch(&self.ctx, &ModeList::empty(), &mut self.state.flos)?;
            if self.rank == 0 {
                let addend = root.addend(d, &mut self.state.flos);
                self.state.push(0, addend);
            }
            let root = Arc::new(root);
            for i in assigned {
                self.pending.push(Pending {
                    removed: ModeList::empty().pushed(i),
                    parent: Some(Arc::clone(&root)),
                });
            }
        }
        self.settle();
        Ok(())
    }

    fn has_work(&self) -> bool {
        !self.pending.is_empty()
    }

    fn finished(&self) -> bool {
        self.terminated && (self.rank != 0 || (1..self.ranks).all(|r| self.results[r].is_some()))
    }

    fn send(&mut self, to: usize, msg: Message) {
        self.outbox.push((to, msg));
    }

    fn broadcast_status(&mut self, state: RankState) {
        if self.announced == state {
            return;
        }
        self.announced = state;
        if state == RankState::Idle {
            self.report.idle_broadcasts += 1;
        }
        for lower in 0..self.rank {
            self.send(
                lower,
                Message::Status(StatusMsg {
                    sender: self.rank as RankId,
                    state,
                }),
            );
        }
    }

    /// Out of work: terminate if allowed, else announce idleness.
    fn settle(&mut self) {
        if self.has_work() || self.terminated {
            return;
        }
        if (0..self.rank).all(|s| self.term_from[s]) {
            self.terminate();
        } else {
            self.broadcast_status(RankState::Idle);
        }
    }

    fn terminate(&mut self) {
        self.terminated = true;
        self.report.terminated = true;
        self.report.addends = self.state.addends;
        for h in self.rank + 1..self.ranks {
            self.send(
                h,
                Message::Term(TermSignal {
                    sender: self.rank as RankId,
                }),
            );
        }
        let own = self.own_result();
        if self.rank == 0 {
            self.results[0] = Some(own);
        } else {
            self.send(0, Message::Result(own));
        }
    }

    fn own_result(&self) -> RankResult {
        RankResult {
            sender: self.rank as RankId,
            value: self.state.partial,
            addends: self.state.addends,
            flos: self.state.flos.total().count,
        }
    }

    fn try_offload(&mut self) {
        while self.pending.len() >= self.cfg.min_pending.max(1) {
            let Some(to) = (self.rank + 1..self.ranks).find(|&h| self.peer_idle[h]) else {
                return;
            };
            // Shallowest item: smallest last mode, earliest queued on ties.
            let (idx, _) = self
                .pending
                .iter()
                .enumerate()
                .min_by_key(|(i, p)| (p.removed.last(), *i))
                .expect("pending is non-empty");
            let item = self.pending.remove(idx);
            self.peer_idle[to] = false;
            self.report.items_offloaded += 1;
            self.send(
                to,
                Message::Work(WorkItem {
                    removed_modes: item.removed,
                }),
            );
        }
    }

    fn step(&mut self) -> Result<(), WorkshareError> {
        self.try_offload();
        // Deepest item first (largest last mode, latest queued on ties).
        if let Some((idx, _)) = self
            .pending
            .iter()
            .enumerate()
            .max_by_key(|(i, p)| (p.removed.last(), *i))
        {
            let item = self.pending.swap_remove(idx);
            self.process(item)?;
        }
        self.settle();
        Ok(())
    }

    fn process(&mut self, item: Pending<T>) -> Result<(), WorkshareError> {
        let d = self.ctx.d;
        let last = item
            .removed
            .last()
            .expect("work items remove at least one mode");
        let node = match &item.parent {
            Some(parent) => {
                let mut child = Node::blank(self.ctx.n);
                parent.build_child(&self.ctx, last, &mut child, &mut self.state.flos)?;
                child
            }
            None => Node::from_scratch(&self.ctx, &item.removed, &mut self.state.flos)?,
        };
        self.report.items_processed += 1;
        let addend = node.addend(d, &mut self.state.flos);
        self.state.push(node.mask, addend);
        let below = d - last - 1;
        if below == 0 {
            return Ok(());
        }
        if below <= self.cfg.leaf_cutoff {
            let (sub, _) = evaluate_below::<T, F>(
                &self.ctx,
                node,
                self.pool,
                self.cfg.task_cutoff,
                self.cfg.recording,
            )?;
            self.state.merge(sub);
        } else {
            let node = Arc::new(node);
            for mode in last + 1..d {
                self.pending.push(Pending {
                    removed: item.removed.pushed(mode),
                    parent: Some(Arc::clone(&node)),
                });
            }
        }
        Ok(())
    }

    fn handle(&mut self, from: usize, msg: Message) -> Result<(), WorkshareError> {
        if from >= self.ranks || from == self.rank {
            return Err(self.violation(format!("message from invalid rank {from}")));
        }
        match msg {
            Message::Work(w) => {
                if from > self.rank {
                    return Err(self.violation(format!("work from higher rank {from}")));
                }
                if self.terminated {
                    return Err(self.violation("work after termination"));
                }
                let modes = w.removed_modes.as_slice().to_vec();
                let removed_modes = ModeList::new(modes, self.ctx.d)
                    .ok()
                    .filter(|m| !m.is_empty())
                    .ok_or_else(|| self.violation("work item outside the recursion tree"))?;
                self.report.items_received += 1;
                self.pending.push(Pending {
                    removed: removed_modes,
                    parent: None,
                });
                self.broadcast_status(RankState::Busy);
            }
            Message::Status(s) => {
                if from < self.rank || s.sender as usize != from {
                    return Err(self.violation(format!("status from rank {from}")));
                }
                self.peer_idle[from] = s.state == RankState::Idle;
            }
            Message::Term(t) => {
                if from > self.rank || t.sender as usize != from {
                    return Err(self.violation(format!("termination from rank {from}")));
                }
                if self.term_from[from] {
                    return Err(self.violation(format!("duplicate termination from {from}")));
                }
                self.term_from[from] = true;
            }
            Message::Result(r) => {
                if self.rank != 0 || r.sender as usize != from {
                    return Err(self.violation(format!("result from rank {from}")));
                }
                if self.results[from].replace(r).is_some() {
                    return Err(self.violation(format!("duplicate result from {from}")));
                }
            }
            Message::Hello { .. } | Message::Peers(_) => {
                return Err(self.violation("bootstrap message during the run"));
            }
        }
        self.settle();
        Ok(())
    }

    /// Cohort total at rank 0 after all results arrived.
    fn gathered(&self) -> TorResult {
        let mut value = DDReal::ZERO;
        let mut addend_count = 0;
        let mut flos = FloCounter::default();
        for r in self.results.iter().flatten() {
            value += r.value;
            addend_count += r.addends;
            flos.count += r.flos;
        }
        TorResult {
            value,
            addend_count,
            flos,
        }
    }

    fn local_result(&self) -> TorResult {
        TorResult {
            value: self.state.partial,
            addend_count: self.state.addends,
            flos: self.state.flos.total(),
        }
    }
}

// ---------------------------------------------------------------------------
// Simulated transport

/// Result of a whole cohort run.
#[derive(Debug, Clone)]
pub struct CohortOutcome {
    pub result: TorResult,
    pub ranks: Vec<RankReport>,
    pub trace: Vec<TraceEvent>,
    pub addends: Option<Vec<Addend>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub seed: u64,
    /// Upper bound on scheduler events before declaring a stall.
    pub max_events: u64,
}

impl SimConfig {
    pub fn seeded(seed: u64) -> Self {
        Self {
            seed,
            max_events: 50_000_000,
        }
    }
}

/// Runs `ranks` ranks in one thread. At every event the scheduler picks
/// uniformly between delivering the head of a non-empty channel and letting
/// a rank with pending work take a step.
pub fn simulate(
    a: &ComplexMatrix,
    ranks: usize,
    opts: EvalOptions,
    cfg: WorkerConfig,
    sim: SimConfig,
) -> Result<CohortOutcome, WorkshareError> {
    validate_input(a, opts.mode_cap)?;
    check_ranks(ranks)?;
    match (opts.precision, opts.counting) {
        (CholeskyPrecision::Double, false) => {
            simulate_impl::<Complex64, NoFlops>(a, ranks, cfg, sim)
        }
        (CholeskyPrecision::Double, true) => {
            simulate_impl::<Complex64, FloCounter>(a, ranks, cfg, sim)
        }
        (CholeskyPrecision::Extended, false) => {
            simulate_impl::<DDComplex, NoFlops>(a, ranks, cfg, sim)
        }
        (CholeskyPrecision::Extended, true) => {
            simulate_impl::<DDComplex, FloCounter>(a, ranks, cfg, sim)
        }
    }
}

fn check_ranks(ranks: usize) -> Result<(), WorkshareError> {
    if ranks == 0 || ranks > RankId::MAX as usize {
        return Err(WorkshareError::Cohort(format!(
            "invalid cohort size {ranks}"
        )));
    }
    Ok(())
}

struct Recorder {
    seq: u64,
    events: Vec<TraceEvent>,
}

impl Recorder {
    fn log(&mut self, kind: EventKind, from: usize, to: usize, msg: MessageKind) {
        self.events.push(TraceEvent {
            seq: self.seq,
            kind,
            from,
            to,
            msg,
        });
        self.seq += 1;
    }
}

fn simulate_impl<T: Scalar, F: MergeFlos>(
    a: &ComplexMatrix,
    ranks: usize,
    cfg: WorkerConfig,
    sim: SimConfig,
) -> Result<CohortOutcome, WorkshareError> {
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let mut workers: Vec<RankWorker<'_, T, F>> = (0..ranks)
        .map(|r| RankWorker::new(a, r, ranks, cfg, None))
        .collect();
    let mut channels: Vec<VecDeque<Message>> =
        (0..ranks * ranks).map(|_| VecDeque::new()).collect();
    let mut rec = Recorder {
        seq: 0,
        events: Vec::new(),
    };
    let flush =
        |w: &mut RankWorker<'_, T, F>, ch: &mut Vec<VecDeque<Message>>, rec: &mut Recorder| {
            for (to, msg) in w.outbox.drain(..) {
                rec.log(EventKind::Send, w.rank, to, msg.kind());
                ch[w.rank * ranks + to].push_back(msg);
            }
        };
    for w in workers.iter_mut() {
        w.start()?;
        flush(w, &mut channels, &mut rec);
    }

    let mut events = 0u64;
    let mut actions = Vec::new();
    loop {
        actions.clear();
        actions.extend(
            (0..ranks * ranks)
                .filter(|&c| !channels[c].is_empty())
                .map(|c| (true, c)),
        );
        actions.extend(
            (0..ranks)
                .filter(|&r| workers[r].has_work())
                .map(|r| (false, r)),
        );
        if actions.is_empty() {
            if workers.iter().all(|w| w.finished()) {
                break;
            }
            return Err(WorkshareError::Stalled { events });
        }
        events += 1;
        if events > sim.max_events {
            return Err(WorkshareError::Stalled { events });
        }
        let (deliver, idx) = actions[rng.random_range(0..actions.len())];
        let acting = if deliver {
            let (from, to) = (idx / ranks, idx % ranks);
            let msg = channels[idx].pop_front().expect("channel is non-empty");
            rec.log(EventKind::Deliver, from, to, msg.kind());
            let w = &mut workers[to];
            // A terminated rank no longer tracks the status of higher ranks.
            if !(w.terminated && matches!(msg, Message::Status(_))) {
                w.handle(from, msg)?;
            }
            to
        } else {
            workers[idx].step()?;
            idx
        };
        flush(&mut workers[acting], &mut channels, &mut rec);
    }

    let result = workers[0].gathered();
    let mut addends = cfg.recording.then(Vec::new);
    let mut reports = Vec::with_capacity(ranks);
    for w in workers {
        reports.push(w.report);
        if let (Some(all), Some(mine)) = (&mut addends, w.state.record) {
            all.extend(mine);
        }
    }
    Ok(CohortOutcome {
        result,
        ranks: reports,
        trace: rec.events,
        addends,
    })
}

// ---------------------------------------------------------------------------
// TCP transport

/// `rank -> address` table of a cohort.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cohort {
    pub addrs: Vec<String>,
}

impl Cohort {
    /// Parses lines `<rank> <host:port>`; `#` starts a comment line. Ranks
    /// must be exactly `0..P`.
    pub fn parse(text: &str) -> Result<Self, WorkshareError> {
        let mut entries: Vec<(usize, String)> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(rank), Some(addr), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(WorkshareError::Cohort(format!(
                    "line {}: expected `<rank> <addr>`",
                    ln + 1
                )));
            };
            let rank: usize = rank.parse().map_err(|_| {
                WorkshareError::Cohort(format!("line {}: bad rank `{rank}`", ln + 1))
            })?;
            entries.push((rank, addr.to_string()));
        }
        entries.sort();
        if entries.is_empty() || entries.iter().enumerate().any(|(i, (r, _))| *r != i) {
            return Err(WorkshareError::Cohort("ranks must be exactly 0..P".into()));
        }
        if entries.len() > RankId::MAX as usize {
            return Err(WorkshareError::Cohort("too many ranks".into()));
        }
        Ok(Self {
            addrs: entries.into_iter().map(|(_, a)| a).collect(),
        })
    }

    pub fn ranks(&self) -> usize {
        self.addrs.len()
    }

    pub fn to_text(&self) -> String {
        self.addrs
            .iter()
            .enumerate()
            .map(|(r, a)| format!("{r} {a}\n"))
            .collect()
    }
}

enum Incoming {
    Msg(usize, Message),
    Closed(usize),
    Failed(usize, String),
}

/// All-pairs TCP mesh for one rank.
pub struct TcpTransport {
    rank: usize,
    ranks: usize,
    streams: Vec<Option<TcpStream>>,
    rx: mpsc::Receiver<Incoming>,
    /// Peers whose side of the link has closed (self included).
    closed: Vec<bool>,
    /// Longest wait for any incoming message.
    pub io_timeout: Duration,
}

fn connect_retry(addr: &str, deadline: Instant) -> io::Result<TcpStream> {
    loop {
        let attempt = addr
            .to_socket_addrs()
            .and_then(|mut it| it.next().ok_or_else(|| io::Error::other("no address")))
            .and_then(|sa| TcpStream::connect_timeout(&sa, Duration::from_secs(1)));
        match attempt {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => {
                return Err(io::Error::new(
                    e.kind(),
                    format!("connecting to {addr}: {e}"),
                ))
            }
            Err(_) => std::thread::sleep(Duration::from_millis(20)),
        }
    }
}

fn accept_until(listener: &TcpListener, deadline: Instant) -> io::Result<TcpStream> {
    listener.set_nonblocking(true)?;
    loop {
        match listener.accept() {
            Ok((s, _)) => {
                s.set_nonblocking(false)?;
                listener.set_nonblocking(false)?;
                return Ok(s);
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(io::Error::new(io::ErrorKind::TimedOut, "waiting for peers"));
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e),
        }
    }
}

fn read_hello(stream: &mut TcpStream) -> Result<(usize, String), WorkshareError> {
    match read_frame(stream)? {
        Some(Message::Hello { rank, addr }) => Ok((rank as usize, addr)),
        other => Err(WorkshareError::Transport(format!(
            "expected hello, got {:?}",
            other.map(|m| m.kind())
        ))),
    }
}

impl TcpTransport {
    /// Joins a cohort whose addresses are known: connects to every lower
    /// rank and accepts every higher one on `listener`.
    pub fn establish(
        rank: usize,
        cohort: &Cohort,
        listener: &TcpListener,
        timeout: Duration,
    ) -> Result<Self, WorkshareError> {
        let ranks = cohort.ranks();
        if rank >= ranks {
            return Err(WorkshareError::Cohort(format!(
                "rank {rank} not in a cohort of {ranks}"
            )));
        }
        let streams = (0..ranks).map(|_| None).collect();
        Self::finish_mesh(
            rank,
            &cohort.addrs,
            streams,
            listener,
            Instant::now() + timeout,
            0,
        )
    }

    /// Rank 0 side of address discovery: accepts `ranks - 1` peers, then
    /// sends everyone the full address table.
    pub fn bootstrap_root(
        listener: &TcpListener,
        ranks: usize,
        timeout: Duration,
    ) -> Result<Self, WorkshareError> {
        check_ranks(ranks)?;
        let deadline = Instant::now() + timeout;
        let mut streams: Vec<Option<TcpStream>> = (0..ranks).map(|_| None).collect();
        let mut addrs = vec![listener.local_addr()?.to_string(); ranks];
        for _ in 1..ranks {
            let mut s = accept_until(listener, deadline)?;
            let (r, addr) = read_hello(&mut s)?;
            if r == 0 || r >= ranks || streams[r].is_some() {
                return Err(WorkshareError::Cohort(format!(
                    "unexpected hello from rank {r}"
                )));
            }
            addrs[r] = addr;
            streams[r] = Some(s);
        }
        for s in streams.iter_mut().flatten() {
            write_frame(s, &Message::Peers(addrs.clone()))?;
        }
        Self::finish_mesh(0, &addrs, streams, listener, deadline, ranks)
    }

    /// Non-root side of address discovery through rank 0 at `root`.
    pub fn bootstrap_peer(
        rank: usize,
        listener: &TcpListener,
        root: &str,
        timeout: Duration,
    ) -> Result<Self, WorkshareError> {
        if rank == 0 {
            return Err(WorkshareError::Cohort(
                "rank 0 listens, it does not connect".into(),
            ));
        }
        let deadline = Instant::now() + timeout;
        let mut s = connect_retry(root, deadline)?;
        let own = listener.local_addr()?.to_string();
        write_frame(
            &mut s,
            &Message::Hello {
                rank: rank as RankId,
                addr: own,
            },
        )?;
        let addrs = match read_frame(&mut s)? {
            Some(Message::Peers(a)) => a,
            other => {
                return Err(WorkshareError::Transport(format!(
                    "expected peer table, got {:?}",
                    other.map(|m| m.kind())
                )))
            }
        };
        if rank >= addrs.len() {
            return Err(WorkshareError::Cohort(format!(
                "rank {rank} outside cohort of {}",
                addrs.len()
            )));
        }
        let mut streams: Vec<Option<TcpStream>> = (0..addrs.len()).map(|_| None).collect();
        streams[0] = Some(s);
        Self::finish_mesh(rank, &addrs, streams, listener, deadline, 1)
    }

    /// Connects to lower ranks `connect_from..rank` and accepts all higher
    /// ranks not yet connected, then starts one reader thread per peer.
    fn finish_mesh(
        rank: usize,
        addrs: &[String],
        mut streams: Vec<Option<TcpStream>>,
        listener: &TcpListener,
        deadline: Instant,
        connect_from: usize,
    ) -> Result<Self, WorkshareError> {
        let ranks = addrs.len();
        for lower in connect_from..rank {
            let mut s = connect_retry(&addrs[lower], deadline)?;
            write_frame(
                &mut s,
                &Message::Hello {
                    rank: rank as RankId,
                    addr: addrs[rank].clone(),
                },
            )?;
            streams[lower] = Some(s);
        }
        while (rank + 1..ranks).any(|h| streams[h].is_none()) {
            let mut s = accept_until(listener, deadline)?;
            let (r, _) = read_hello(&mut s)?;
            if r <= rank || r >= ranks || streams[r].is_some() {
                return Err(WorkshareError::Cohort(format!(
                    "unexpected hello from rank {r}"
                )));
            }
            streams[r] = Some(s);
        }
        let (tx, rx) = mpsc::channel();
        for (peer, s) in streams.iter().enumerate() {
            let Some(s) = s else { continue };
            s.set_nodelay(true)?;
            let mut reader = s.try_clone()?;
            let tx = tx.clone();
            std::thread::Builder::new()
                .name(format!("tor-rank{rank}-from{peer}"))
                .spawn(move || loop {
                    let event = match read_frame(&mut reader) {
                        Ok(Some(m)) => Incoming::Msg(peer, m),
                        Ok(None) => Incoming::Closed(peer),
                        Err(e) => Incoming::Failed(peer, e.to_string()),
                    };
                    let stop = !matches!(event, Incoming::Msg(..));
                    if tx.send(event).is_err() || stop {
                        return;
                    }
                })?;
        }
        Ok(Self {
            rank,
            ranks,
            streams,
            rx,
            closed: (0..ranks).map(|r| r == rank).collect(),
            io_timeout: Duration::from_secs(120),
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn ranks(&self) -> usize {
        self.ranks
    }

    fn send(&mut self, to: usize, msg: &Message) -> io::Result<()> {
        match self.streams.get_mut(to).and_then(Option::as_mut) {
            Some(s) => write_frame(s, msg),
            None => Err(io::Error::new(
                io::ErrorKind::NotConnected,
                format!("no link to rank {to}"),
            )),
        }
    }

    /// Half-closes every link and waits until all peers did the same.
    fn linger(&mut self) {
        for s in self.streams.iter().flatten() {
            let _ = s.shutdown(std::net::Shutdown::Write);
        }
        let deadline = Instant::now() + Duration::from_secs(10);
        while !self.closed.iter().all(|&c| c) {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.rx.recv_timeout(left) {
                Ok(Incoming::Msg(..)) => {}
                Ok(Incoming::Closed(p) | Incoming::Failed(p, _)) => self.closed[p] = true,
                Err(_) => break,
            }
        }
    }
}

/// Outcome of one rank in a TCP cohort.
#[derive(Debug, Clone)]
pub struct RankOutcome {
    /// Cohort total; present at rank 0 only.
    pub total: Option<TorResult>,
    pub local: TorResult,
    pub report: RankReport,
    pub trace: Vec<TraceEvent>,
    pub addends: Option<Vec<Addend>>,
}

/// Runs one rank over an established transport, evaluating leaves on
/// `threads` workers.
pub fn run_rank_tcp(
    a: &ComplexMatrix,
    transport: &mut TcpTransport,
    opts: EvalOptions,
    cfg: WorkerConfig,
    threads: usize,
) -> Result<RankOutcome, WorkshareError> {
    validate_input(a, opts.mode_cap)?;
    let pool = WorkerPool::new(threads);
    let out = match (opts.precision, opts.counting) {
        (CholeskyPrecision::Double, false) => {
            run_rank_impl::<Complex64, NoFlops>(a, transport, cfg, &pool)
        }
        (CholeskyPrecision::Double, true) => {
            run_rank_impl::<Complex64, FloCounter>(a, transport, cfg, &pool)
        }
        (CholeskyPrecision::Extended, false) => {
            run_rank_impl::<DDComplex, NoFlops>(a, transport, cfg, &pool)
        }
        (CholeskyPrecision::Extended, true) => {
            run_rank_impl::<DDComplex, FloCounter>(a, transport, cfg, &pool)
        }
    };
    transport.linger();
    out
}

fn run_rank_impl<T: Scalar, F: MergeFlos>(
    a: &ComplexMatrix,
    transport: &mut TcpTransport,
    cfg: WorkerConfig,
    pool: &WorkerPool,
) -> Result<RankOutcome, WorkshareError> {
    let (rank, ranks) = (transport.rank, transport.ranks);
    let mut w = RankWorker::<T, F>::new(a, rank, ranks, cfg, Some(pool));
    let mut rec = Recorder {
        seq: 0,
        events: Vec::new(),
    };
    w.start()?;
    loop {
        for (to, msg) in std::mem::take(&mut w.outbox) {
            rec.log(EventKind::Send, rank, to, msg.kind());
            match (transport.send(to, &msg), &msg) {
                (Ok(()), _) | (Err(_), Message::Status(_)) => {}
                (Err(e), _) => {
                    return Err(WorkshareError::Transport(format!(
                        "sending to rank {to}: {e}"
                    )))
                }
            }
        }
        if w.finished() {
            break;
        }
        let incoming = if w.has_work() {
            match transport.rx.try_recv() {
                Ok(ev) => Some(ev),
                Err(_) => {
                    w.step()?;
                    None
                }
            }
        } else {
            if transport.closed.iter().all(|&c| c) {
                return Err(WorkshareError::Transport(
                    "all peers disconnected early".into(),
                ));
            }
            match transport.rx.recv_timeout(transport.io_timeout) {
                Ok(ev) => Some(ev),
                Err(_) => {
                    return Err(WorkshareError::Transport(format!(
                        "no message within {:?}",
                        transport.io_timeout
                    )))
                }
            }
        };
        match incoming {
            None => {}
            Some(Incoming::Msg(from, msg)) => {
                rec.log(EventKind::Deliver, from, rank, msg.kind());
                if !(w.terminated && matches!(msg, Message::Status(_))) {
                    w.handle(from, msg)?;
                }
            }
            Some(Incoming::Closed(from)) => transport.closed[from] = true,
            Some(Incoming::Failed(from, e)) => {
                return Err(WorkshareError::Transport(format!(
                    "link to rank {from}: {e}"
                )))
            }
        }
    }
    Ok(RankOutcome {
        total: (rank == 0).then(|| w.gathered()),
        local: w.local_result(),
        report: w.report,
        trace: rec.events,
        addends: w.state.record.take(),
    })
}

/// Runs a whole cohort on loopback TCP, one thread per rank.
pub fn run_local_tcp_cohort(
    a: &ComplexMatrix,
    ranks: usize,
    opts: EvalOptions,
    cfg: WorkerConfig,
    threads_per_rank: usize,
) -> Result<CohortOutcome, WorkshareError> {
    check_ranks(ranks)?;
    let listeners = (0..ranks)
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<io::Result<Vec<_>>>()?;
    let cohort = Cohort {
        addrs: listeners
            .iter()
            .map(|l| l.local_addr().map(|a| a.to_string()))
            .collect::<io::Result<_>>()?,
    };
    let outcomes: Vec<Result<RankOutcome, WorkshareError>> = std::thread::scope(|s| {
        let handles: Vec<_> = listeners
            .iter()
            .enumerate()
            .map(|(rank, listener)| {
                let cohort = &cohort;
                s.spawn(move || {
                    let mut t =
                        TcpTransport::establish(rank, cohort, listener, Duration::from_secs(30))?;
                    run_rank_tcp(a, &mut t, opts, cfg, threads_per_rank)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(WorkshareError::Transport("rank panicked".into())))
            })
            .collect()
    });
    let mut result = None;
    let mut reports = Vec::with_capacity(ranks);
    let mut trace = Vec::new();
    let mut addends = cfg.recording.then(Vec::new);
    for o in outcomes {
        let o = o?;
        if o.total.is_some() {
            result = o.total;
        }
        reports.push(o.report);
        trace.extend(o.trace);
        if let (Some(all), Some(mine)) = (&mut addends, o.addends) {
            all.extend(mine);
        }
    }
    Ok(CohortOutcome {
        result: result.expect("rank 0 reports the total"),
        ranks: reports,
        trace,
        addends,
    })
}
