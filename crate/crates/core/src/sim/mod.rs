//! Deterministic discrete-event model of a message-passing cluster.
//!
//! All ranks advance in lockstep on a single fixed-point clock. Kernels write
//! their results and then charge simulated time; fault events scheduled inside
//! the charged window are applied to data at rest as the clock passes them.
//! Collectives compute their result at issue time and complete after the base
//! latency plus the largest per-rank jitter draw.

mod jitter;
mod ledger;

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use jitter::{CostModel, JitterDistribution, JitterModel};
pub use ledger::{CollectiveOp, Ledger, LedgerEntry, Tag};

use crate::error::{Error, Result};
use crate::faults::{FaultKind, FaultOutcome, FaultPlan, FlipTarget, RegionRef, SkipReason};
use crate::linalg::exact::ExactSum;
use crate::memory::{FlipRefusal, Memory, RegionId, Reliability};
use crate::time::SimTime;
use jitter::Sampler;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub n_ranks: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub jitter: JitterModel,
    #[serde(default)]
    pub costs: CostModel,
}

impl ClusterConfig {
    pub fn new(n_ranks: usize, seed: u64) -> Self {
        ClusterConfig {
            n_ranks,
            seed,
            jitter: JitterModel::default(),
            costs: CostModel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_ranks == 0 {
            return Err(Error::config("n_ranks must be at least 1"));
        }
        self.jitter.validate()?;
        self.costs.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RankStatus {
    Alive,
    Failed,
    Respawned,
}

impl RankStatus {
    pub fn is_alive(self) -> bool {
        self != RankStatus::Failed
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HandleState {
    Pending,
    Complete,
}

/// Token for a nonblocking collective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CollectiveHandle {
    pub id: u64,
    pub op: CollectiveOp,
    pub completion_time: SimTime,
}

#[derive(Debug)]
struct Pending {
    result: Vec<f64>,
    incarnations: Vec<u64>,
    waited: bool,
}

#[derive(Debug)]
struct Message {
    payload: Vec<u8>,
    arrives: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum EventKind {
    Fault(usize),
    Kill(usize),
}

#[derive(Debug, PartialEq, Eq)]
struct Queued {
    time: SimTime,
    seq: u64,
    kind: EventKind,
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub struct SimCluster {
    config: ClusterConfig,
    clock: SimTime,
    status: Vec<RankStatus>,
    incarnation: Vec<u64>,
    failed_at: Vec<Option<SimTime>>,
    memory: Memory,
    queue: BinaryHeap<Reverse<Queued>>,
    next_seq: u64,
    plan: FaultPlan,
    outcomes: Vec<Option<FaultOutcome>>,
    rng: ChaCha8Rng,
    sampler: Sampler,
    base_latency: SimTime,
    next_handle: u64,
    pending: HashMap<u64, Pending>,
    channels: BTreeMap<(usize, usize, Tag), VecDeque<Message>>,
    ledger: Ledger,
}

/// Creates a cluster with default costs.
pub fn spawn_cluster(n_ranks: usize, seed: u64, jitter: JitterModel) -> Result<SimCluster> {
    SimCluster::new(ClusterConfig {
        n_ranks,
        seed,
        jitter,
        costs: CostModel::default(),
    })
}

impl SimCluster {
    pub fn new(config: ClusterConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n_ranks;
        Ok(SimCluster {
            clock: SimTime::ZERO,
            status: vec![RankStatus::Alive; n],
            incarnation: vec![0; n],
            failed_at: vec![None; n],
            memory: Memory::new(n),
            queue: BinaryHeap::new(),
            next_seq: 0,
            plan: FaultPlan::empty(),
            outcomes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            sampler: config.jitter.sampler(),
            base_latency: SimTime::from_units(config.jitter.base_latency)?,
            next_handle: 0,
            pending: HashMap::new(),
            channels: BTreeMap::new(),
            ledger: Ledger::default(),
            config,
        })
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn n_ranks(&self) -> usize {
        self.config.n_ranks
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn status(&self, rank: usize) -> RankStatus {
        self.status[rank]
    }

    pub fn is_alive(&self, rank: usize) -> bool {
        self.status[rank].is_alive()
    }

    pub fn failed_ranks(&self) -> Vec<usize> {
        (0..self.n_ranks()).filter(|&r| !self.is_alive(r)).collect()
    }

    pub fn incarnation(&self, rank: usize) -> u64 {
        self.incarnation[rank]
    }

    pub fn failed_at(&self, rank: usize) -> Option<SimTime> {
        self.failed_at[rank]
    }

    pub fn mem(&self) -> &Memory {
        &self.memory
    }

    pub fn mem_mut(&mut self) -> &mut Memory {
        &mut self.memory
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.ledger.push(LedgerEntry::Note {
            at: self.clock,
            text: text.into(),
        });
    }

    // ---- memory ----

    pub fn alloc(&mut self, kind: Reliability, label: &str, lens: &[usize]) -> Result<RegionId> {
        let id = self.memory.alloc(kind, label, lens)?;
        self.ledger.push(LedgerEntry::Alloc {
            at: self.clock,
            region: id,
            kind,
            label: label.to_string(),
        });
        Ok(id)
    }

    pub fn free(&mut self, id: RegionId) -> Result<()> {
        self.memory.free(id)?;
        self.ledger.push(LedgerEntry::Free {
            at: self.clock,
            region: id,
        });
        Ok(())
    }

    // ---- time ----

    pub fn advance(&mut self, dt: SimTime) {
        let target = self.clock + dt;
        self.advance_to(target);
    }

    /// Moves the clock forward, applying every queued event due at or before `t`.
    pub fn advance_to(&mut self, t: SimTime) {
        while let Some(Reverse(top)) = self.queue.peek() {
            if top.time > t {
                break;
            }
            let Reverse(ev) = self.queue.pop().expect("peeked");
            if ev.time > self.clock {
                self.clock = ev.time;
            }
            self.apply(ev.kind);
        }
        if t > self.clock {
            self.clock = t;
        }
    }

    /// Charges `flops` floating-point operations on the busiest rank.
    pub fn compute(&mut self, label: &'static str, flops: u64) {
        let start = self.clock;
        let dt = SimTime::from_units_clamped(flops as f64 * self.config.costs.flop_time);
        self.advance(dt);
        self.ledger.push(LedgerEntry::Compute {
            start,
            end: self.clock,
            label,
        });
    }

    // ---- faults ----

    /// Installs a plan. Flips addressed to live reliable regions are rejected.
    pub fn install_plan(&mut self, plan: FaultPlan) -> Result<()> {
        for (i, ev) in plan.events.iter().enumerate() {
            let rank = match &ev.kind {
                FaultKind::BitFlip { rank, target, bit } => {
                    if *bit > 63 {
                        return Err(Error::config(format!("fault {i}: bit {bit} outside [0, 63]")));
                    }
                    if let FlipTarget::Element { region, .. } = target {
                        let id = self.resolve_ref(region);
                        if id.and_then(|id| self.memory.kind(id)) == Some(Reliability::Reliable) {
                            return Err(Error::config(format!(
                                "fault {i}: bit flip targets reliable region {region:?}"
                            )));
                        }
                    }
                    *rank
                }
                FaultKind::RankKill { rank } => *rank,
            };
            if rank >= self.n_ranks() {
                return Err(Error::config(format!("fault {i}: rank {rank} out of range")));
            }
        }
        let base = self.plan.events.len();
        for (i, ev) in plan.events.iter().enumerate() {
            self.push_event(ev.time, EventKind::Fault(base + i));
        }
        self.outcomes.extend(plan.events.iter().map(|_| None));
        self.plan.seed = plan.seed;
        self.plan.events.extend(plan.events);
        Ok(())
    }

    pub fn plan(&self) -> &FaultPlan {
        &self.plan
    }

    /// Schedules a fail-stop of `rank` at `at` (immediately if `at` is not in the future).
    pub fn schedule_kill(&mut self, rank: usize, at: SimTime) -> Result<()> {
        if rank >= self.n_ranks() {
            return Err(Error::usage(format!("rank {rank} out of range")));
        }
        if at <= self.clock {
            return self.kill_rank(rank);
        }
        self.push_event(at, EventKind::Kill(rank));
        Ok(())
    }

    fn push_event(&mut self, time: SimTime, kind: EventKind) {
        self.queue.push(Reverse(Queued {
            time,
            seq: self.next_seq,
            kind,
        }));
        self.next_seq += 1;
    }

    fn resolve_ref(&self, r: &RegionRef) -> Option<RegionId> {
        match r {
            RegionRef::Id(id) => Some(RegionId(*id)).filter(|id| self.memory.contains(*id)),
            RegionRef::Label(l) => self.memory.find_label(l),
        }
    }

    fn apply(&mut self, kind: EventKind) {
        match kind {
            EventKind::Kill(rank) => {
                if self.is_alive(rank) {
                    self.kill_rank(rank).expect("alive rank can be killed");
                }
            }
            EventKind::Fault(index) => {
                let outcome = self.inject(index);
                self.ledger.push(LedgerEntry::Fault {
                    index,
                    outcome: outcome.clone(),
                });
                self.outcomes[index] = Some(outcome);
            }
        }
    }

    fn skipped(&self, reason: SkipReason) -> FaultOutcome {
        FaultOutcome::Skipped {
            at: self.clock,
            reason,
        }
    }

    fn inject(&mut self, index: usize) -> FaultOutcome {
        let at = self.clock;
        match self.plan.events[index].kind.clone() {
            FaultKind::RankKill { rank } => {
                if !self.is_alive(rank) {
                    return self.skipped(SkipReason::RankNotAlive);
                }
                self.kill_rank(rank).expect("alive rank can be killed");
                FaultOutcome::Injected {
                    at,
                    region: None,
                    label: None,
                    index: None,
                    before: None,
                    after: None,
                }
            }
            FaultKind::BitFlip { rank, target, bit } => {
                if !self.is_alive(rank) {
                    return self.skipped(SkipReason::RankNotAlive);
                }
                let (region, idx) = match target {
                    FlipTarget::Element { region, index } => match self.resolve_ref(&region) {
                        Some(id) => (id, index),
                        None => return self.skipped(SkipReason::NoSuchRegion),
                    },
                    FlipTarget::Random {
                        region_draw,
                        element_draw,
                    } => {
                        let live = self.memory.live_regions(rank, Reliability::Unreliable);
                        if live.is_empty() {
                            return self.skipped(SkipReason::NoLiveUnreliableRegion);
                        }
                        let id = live[(region_draw % live.len() as u64) as usize];
                        let len = self.memory.block(id, rank).len() as u64;
                        (id, (element_draw % len) as usize)
                    }
                };
                match self.memory.flip(rank, region, idx, bit) {
                    Ok((before, after)) => FaultOutcome::Injected {
                        at,
                        region: Some(region),
                        label: self.memory.label(region).map(str::to_string),
                        index: Some(idx),
                        before: Some(before.to_bits()),
                        after: Some(after.to_bits()),
                    },
                    Err(FlipRefusal::NoSuchRegion) => self.skipped(SkipReason::NoSuchRegion),
                    Err(FlipRefusal::ReliableRegion) => self.skipped(SkipReason::ReliableRegion),
                    Err(FlipRefusal::OutOfBounds { .. }) => self.skipped(SkipReason::OutOfBounds),
                }
            }
        }
    }

    /// Marks every plan event still queued as not reached. Call once at the end of a run.
    pub fn finish(&mut self) {
        let mut rest: Vec<Queued> = self.queue.drain().map(|Reverse(q)| q).collect();
        rest.sort();
        for q in rest {
            if let EventKind::Fault(index) = q.kind {
                let outcome = self.skipped(SkipReason::NotReached);
                self.ledger.push(LedgerEntry::Fault {
                    index,
                    outcome: outcome.clone(),
                });
                self.outcomes[index] = Some(outcome);
            }
        }
    }

    /// Outcome per plan event; `None` for events not yet due.
    pub fn fault_outcomes(&self) -> &[Option<FaultOutcome>] {
        &self.outcomes
    }

    pub fn injected_count(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.as_ref().is_some_and(FaultOutcome::is_injected))
            .count()
    }

    // ---- rank lifecycle ----

    /// Fail-stop: volatile memory is wiped and queued messages to or from the rank are dropped.
    pub fn kill_rank(&mut self, rank: usize) -> Result<()> {
        if rank >= self.n_ranks() {
            return Err(Error::usage(format!("rank {rank} out of range")));
        }
        if !self.is_alive(rank) {
            return Err(Error::usage(format!("rank {rank} is already failed")));
        }
        self.status[rank] = RankStatus::Failed;
        self.incarnation[rank] += 1;
        self.failed_at[rank] = Some(self.clock);
        self.memory.wipe_rank(rank);
        self.ledger.push(LedgerEntry::Kill {
            rank,
            at: self.clock,
        });
        let at = self.clock;
        for (&(from, to, tag), queue) in self.channels.iter_mut() {
            if from == rank || to == rank {
                for m in queue.drain(..) {
                    self.ledger.push(LedgerEntry::Dropped {
                        from,
                        to,
                        tag,
                        bytes: m.payload.len(),
                        at,
                    });
                }
            }
        }
        Ok(())
    }

    /// Starts a blank process at the index of a failed rank.
    pub fn respawn_rank(&mut self, rank: usize) -> Result<()> {
        if rank >= self.n_ranks() || self.status[rank] != RankStatus::Failed {
            return Err(Error::usage(format!("rank {rank} is not failed")));
        }
        self.status[rank] = RankStatus::Respawned;
        self.ledger.push(LedgerEntry::Respawn {
            rank,
            at: self.clock,
        });
        Ok(())
    }

    // ---- point to point ----

    pub fn send(&mut self, from: usize, to: usize, tag: Tag, payload: Vec<u8>) -> Result<()> {
        for r in [from, to] {
            if r >= self.n_ranks() {
                return Err(Error::usage(format!("rank {r} out of range")));
            }
            if !self.is_alive(r) {
                return Err(Error::rank_failure(vec![r]));
            }
        }
        let costs = self.config.costs;
        let arrives = self.clock
            + SimTime::from_units_clamped(costs.message_latency + costs.byte_time * payload.len() as f64);
        self.ledger.push(LedgerEntry::Send {
            from,
            to,
            tag,
            bytes: payload.len(),
            sent: self.clock,
            arrives,
        });
        self.channels
            .entry((from, to, tag))
            .or_default()
            .push_back(Message { payload, arrives });
        Ok(())
    }

    /// Receives the oldest message on the `(from, to, tag)` channel, waiting for its arrival.
    pub fn recv(&mut self, from: usize, to: usize, tag: Tag) -> Result<Vec<u8>> {
        if from >= self.n_ranks() || to >= self.n_ranks() {
            return Err(Error::usage("rank out of range"));
        }
        if !self.is_alive(to) {
            return Err(Error::rank_failure(vec![to]));
        }
        let key = (from, to, tag);
        let Some(arrives) = self.channels.get(&key).and_then(|q| q.front()).map(|m| m.arrives) else {
            if !self.is_alive(from) {
                return Err(Error::rank_failure(vec![from]));
            }
            return Err(Error::usage(format!(
                "recv {from}->{to} ({tag:?}) has no matching send and would block forever"
            )));
        };
        self.advance_to(arrives);
        if !self.is_alive(to) {
            return Err(Error::rank_failure(vec![to]));
        }
        match self.channels.get_mut(&key).and_then(VecDeque::pop_front) {
            Some(m) => {
                self.ledger.push(LedgerEntry::Recv {
                    from,
                    to,
                    tag,
                    bytes: m.payload.len(),
                    at: self.clock,
                });
                Ok(m.payload)
            }
            None => Err(Error::rank_failure(vec![from])),
        }
    }

    /// Discards queued messages with `tag` without receiving them.
    pub fn discard(&mut self, tag: Tag) {
        let at = self.clock;
        for (&(from, to, t), queue) in self.channels.iter_mut() {
            if t == tag {
                for m in queue.drain(..) {
                    self.ledger.push(LedgerEntry::Dropped {
                        from,
                        to,
                        tag,
                        bytes: m.payload.len(),
                        at,
                    });
                }
            }
        }
    }

    pub fn pending_messages(&self, from: usize, to: usize, tag: Tag) -> usize {
        self.channels.get(&(from, to, tag)).map_or(0, VecDeque::len)
    }

    // ---- collectives ----

    fn issue(&mut self, op: CollectiveOp, width: usize, result: Vec<f64>) -> Result<CollectiveHandle> {
        let dead = self.failed_ranks();
        if !dead.is_empty() {
            return Err(Error::rank_failure(dead));
        }
        let issue_cost = SimTime::from_units_clamped(self.config.costs.collective_issue);
        self.advance(issue_cost);
        let issued = self.clock;
        let mut worst = SimTime::ZERO;
        if !self.sampler.is_zero() {
            for _ in 0..self.n_ranks() {
                worst = worst.max(self.sampler.draw(&mut self.rng));
            }
        }
        let completion_time = issued + self.base_latency + worst;
        let id = self.next_handle;
        self.next_handle += 1;
        self.pending.insert(
            id,
            Pending {
                result,
                incarnations: self.incarnation.clone(),
                waited: false,
            },
        );
        self.ledger.push(LedgerEntry::Collective {
            id,
            op,
            width,
            issued,
            completes: completion_time,
        });
        Ok(CollectiveHandle {
            id,
            op,
            completion_time,
        })
    }

    fn check_contributions<T>(&self, parts: &[Vec<T>]) -> Result<usize> {
        if parts.len() != self.n_ranks() {
            return Err(Error::usage(format!(
                "collective needs one contribution per rank ({}), got {}",
                self.n_ranks(),
                parts.len()
            )));
        }
        let width = parts.first().map_or(0, Vec::len);
        if parts.iter().any(|p| p.len() != width) {
            return Err(Error::usage("collective contributions differ in length"));
        }
        Ok(width)
    }

    /// Elementwise sum over ranks in rank-index order.
    pub fn iallreduce_sum_vec(&mut self, parts: &[Vec<f64>]) -> Result<CollectiveHandle> {
        let width = self.check_contributions(parts)?;
        let mut result = vec![0.0; width];
        for (k, slot) in result.iter_mut().enumerate() {
            let mut acc = parts[0][k];
            for p in &parts[1..] {
                acc += p[k];
            }
            *slot = acc;
        }
        self.issue(CollectiveOp::SumAllreduce, width, result)
    }

    pub fn iallreduce_sum(&mut self, per_rank: &[f64]) -> Result<CollectiveHandle> {
        let parts: Vec<Vec<f64>> = per_rank.iter().map(|&v| vec![v]).collect();
        self.iallreduce_sum_vec(&parts)
    }

    pub fn allreduce_sum(&mut self, per_rank: &[f64]) -> Result<f64> {
        let h = self.iallreduce_sum(per_rank)?;
        Ok(self.wait(h)?[0])
    }

    pub fn allreduce_sum_vec(&mut self, parts: &[Vec<f64>]) -> Result<Vec<f64>> {
        let h = self.iallreduce_sum_vec(parts)?;
        self.wait(h)
    }

    /// Sum of exact partial accumulators; the result is correctly rounded and
    /// independent of how values were split across ranks.
    pub fn iallreduce_exact(&mut self, parts: &[Vec<ExactSum>]) -> Result<CollectiveHandle> {
        let width = self.check_contributions(parts)?;
        let result = (0..width)
            .map(|k| {
                let mut acc = ExactSum::new();
                for p in parts {
                    acc.merge(&p[k]);
                }
                acc.value()
            })
            .collect();
        self.issue(CollectiveOp::SumAllreduce, width, result)
    }

    pub fn allreduce_exact(&mut self, parts: &[Vec<ExactSum>]) -> Result<Vec<f64>> {
        let h = self.iallreduce_exact(parts)?;
        self.wait(h)
    }

    /// Elementwise maximum; NaN in any contribution yields NaN.
    pub fn iallreduce_max_vec(&mut self, parts: &[Vec<f64>]) -> Result<CollectiveHandle> {
        let width = self.check_contributions(parts)?;
        let result = (0..width)
            .map(|k| {
                parts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, |a, b| {
                    if a.is_nan() || b.is_nan() {
                        f64::NAN
                    } else {
                        a.max(b)
                    }
                })
            })
            .collect();
        self.issue(CollectiveOp::MaxAllreduce, width, result)
    }

    pub fn allreduce_max(&mut self, per_rank: &[f64]) -> Result<f64> {
        let parts: Vec<Vec<f64>> = per_rank.iter().map(|&v| vec![v]).collect();
        let h = self.iallreduce_max_vec(&parts)?;
        Ok(self.wait(h)?[0])
    }

    pub fn ibarrier(&mut self) -> Result<CollectiveHandle> {
        self.issue(CollectiveOp::Barrier, 0, Vec::new())
    }

    pub fn barrier(&mut self) -> Result<()> {
        let h = self.ibarrier()?;
        self.wait(h).map(|_| ())
    }

    /// Non-consuming completion test; idempotent.
    pub fn test(&self, handle: CollectiveHandle) -> Result<HandleState> {
        let p = self
            .pending
            .get(&handle.id)
            .ok_or_else(|| Error::usage(format!("unknown collective handle {}", handle.id)))?;
        if p.waited {
            return Ok(HandleState::Complete);
        }
        Ok(if self.clock >= handle.completion_time {
            HandleState::Complete
        } else {
            HandleState::Pending
        })
    }

    /// Blocks until the collective completes. A handle may be waited on once.
    pub fn wait(&mut self, handle: CollectiveHandle) -> Result<Vec<f64>> {
        match self.pending.get_mut(&handle.id) {
            None => return Err(Error::usage(format!("unknown collective handle {}", handle.id))),
            Some(p) if p.waited => {
                return Err(Error::usage(format!("collective handle {} waited twice", handle.id)))
            }
            Some(p) => p.waited = true,
        }
        self.advance_to(handle.completion_time);
        let p = self.pending.get_mut(&handle.id).expect("present");
        let dead: Vec<usize> = (0..self.config.n_ranks)
            .filter(|&r| !self.status[r].is_alive() || self.incarnation[r] != p.incarnations[r])
            .collect();
        let result = std::mem::take(&mut p.result);
        p.incarnations = Vec::new();
        self.ledger.push(LedgerEntry::Wait {
            id: handle.id,
            at: self.clock,
            ok: dead.is_empty(),
        });
        if dead.is_empty() {
            Ok(result)
        } else {
            Err(Error::rank_failure(dead))
        }
    }
}

/// Encodes doubles as little-endian bytes for message payloads.
pub fn encode_f64s(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::usage(format!("payload of {} bytes is not a list of doubles", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_queue_orders_by_time_then_sequence() {
        let mut c = SimCluster::new(ClusterConfig::new(3, 0)).unwrap();
        c.schedule_kill(2, SimTime::from_units(5.0).unwrap()).unwrap();
        c.schedule_kill(1, SimTime::from_units(5.0).unwrap()).unwrap();
        c.schedule_kill(0, SimTime::from_units(2.0).unwrap()).unwrap();
        c.advance_to(SimTime::from_units(10.0).unwrap());
        let kills: Vec<(usize, f64)> = c
            .ledger()
            .entries()
            .iter()
            .filter_map(|e| match e {
                LedgerEntry::Kill { rank, at } => Some((*rank, at.as_units())),
                _ => None,
            })
            .collect();
        assert_eq!(kills, vec![(0, 2.0), (2, 5.0), (1, 5.0)]);
    }

    #[test]
    fn payload_codec_round_trip() {
        let v = [1.0, -0.0, f64::NAN, f64::INFINITY];
        let back = decode_f64s(&encode_f64s(&v)).unwrap();
        assert!(v.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(decode_f64s(&[0; 7]).is_err());
    }
}
