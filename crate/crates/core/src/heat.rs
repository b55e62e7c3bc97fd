//! 1D explicit heat equation on the simulated cluster, with periodic LFLR
//! persists and exact local recomputation after a rank failure.
//!
//! Each rank owns a contiguous block of interior points. Besides its field it
//! keeps, in reliable memory, every boundary value it sent to each neighbor
//! since the last persist. A respawned rank restarts from its persisted block
//! and replays the missing steps with those values as ghosts.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faults::FaultPlan;
use crate::lflr::{LflrStore, RecoveryReport};
use crate::linalg::Layout;
use crate::memory::{RegionId, Reliability};
use crate::sim::{decode_f64s, encode_f64s, SimCluster, Tag};
use crate::time::SimTime;

const FIELD_KEY: &str = "heat.u";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Boundary {
    Dirichlet { left: f64, right: f64 },
}

impl Boundary {
    pub fn values(self) -> (f64, f64) {
        match self {
            Boundary::Dirichlet { left, right } => (left, right),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Initial {
    Constant { value: f64 },
    /// `amplitude * sin(mode * pi * (i + 1) / (n + 1))`
    Sine { amplitude: f64, mode: u32 },
    Values { values: Vec<f64> },
}

impl Default for Initial {
    fn default() -> Self {
        Initial::Constant { value: 0.0 }
    }
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatConfig {
    /// Interior grid points.
    pub n_global: usize,
    pub alpha: f64,
    pub dx: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub boundary: Boundary,
    /// Steps between persists.
    pub persist_interval: usize,
    #[serde(default)]
    pub initial: Initial,
    /// Replicas on each ring side.
    #[serde(default = "one")]
    pub replication: usize,
}

impl HeatConfig {
    pub fn new(
        n_global: usize,
        alpha: f64,
        dx: f64,
        dt: f64,
        n_steps: usize,
        boundary: Boundary,
        persist_interval: usize,
    ) -> Result<Self> {
        let cfg = HeatConfig {
            n_global,
            alpha,
            dx,
            dt,
            n_steps,
            boundary,
            persist_interval,
            initial: Initial::default(),
            replication: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_initial(mut self, initial: Initial) -> Result<Self> {
        self.initial = initial;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_global == 0 {
            return Err(Error::config("heat grid needs at least one interior point"));
        }
        for (name, v) in [("alpha", self.alpha), ("dx", self.dx), ("dt", self.dt)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("heat {name} must be positive and finite, got {v}")));
            }
        }
        if self.dt > self.dx * self.dx / (2.0 * self.alpha) {
            return Err(Error::config(format!(
                "dt = {} violates the stability bound dt <= dx^2/(2*alpha) = {}",
                self.dt,
                self.dx * self.dx / (2.0 * self.alpha)
            )));
        }
        if self.persist_interval == 0 {
            return Err(Error::config("persist_interval must be at least 1"));
        }
        if self.replication == 0 {
            return Err(Error::config("replication must be at least 1"));
        }
        let (l, r) = self.boundary.values();
        if !(l.is_finite() && r.is_finite()) {
            return Err(Error::config("boundary values must be finite"));
        }
        if let Initial::Values { values } = &self.initial {
            if values.len() != self.n_global {
                return Err(Error::config(format!(
                    "initial field has {} values, grid has {}",
                    values.len(),
                    self.n_global
                )));
            }
        }
        Ok(())
    }

    /// `alpha dt / dx^2`
    pub fn ratio(&self) -> f64 {
        self.alpha * self.dt / (self.dx * self.dx)
    }

    pub fn initial_field(&self) -> Vec<f64> {
        let n = self.n_global;
        match &self.initial {
            Initial::Constant { value } => vec![*value; n],
            Initial::Sine { amplitude, mode } => (0..n)
                .map(|i| amplitude * (f64::from(*mode) * std::f64::consts::PI * (i + 1) as f64 / (n + 1) as f64).sin())
                .collect(),
            Initial::Values { values } => values.clone(),
        }
    }

    /// Linear interpolation between the boundary values at the interior points.
    pub fn steady_profile(&self) -> Vec<f64> {
        let (l, r) = self.boundary.values();
        let n = self.n_global;
        (0..n).map(|i| l + (r - l) * (i + 1) as f64 / (n + 1) as f64).collect()
    }
}

/// One forward-Euler step of a block with ghost values `left` and `right`.
pub fn step(u: &[f64], left: f64, right: f64, ratio: f64, out: &mut [f64]) {
    let n = u.len();
    for i in 0..n {
        let um = if i == 0 { left } else { u[i - 1] };
        let up = if i + 1 == n { right } else { u[i + 1] };
        out[i] = u[i] + ratio * (um - 2.0 * u[i] + up);
    }
}

/// Persisted block of one rank.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub u: Vec<f64>,
}

impl Checkpoint {
    fn encode(&self) -> Vec<u8> {
        let mut out = (self.step as u64).to_le_bytes().to_vec();
        out.extend(encode_f64s(&self.u));
        out
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Unrecoverable("truncated heat checkpoint".into()));
        }
        let step = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        Ok(Checkpoint {
            step,
            u: decode_f64s(&bytes[8..])?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatRecovery {
    pub rank: usize,
    pub restored_step: usize,
    /// Inclusive range of replayed steps; empty when `first > last`.
    pub recomputed_first: usize,
    pub recomputed_last: usize,
    pub halo_messages: usize,
    pub halo_bytes: usize,
    pub store: RecoveryReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatRun {
    pub field: Vec<f64>,
    pub steps: usize,
    pub persists: usize,
    pub recoveries: Vec<HeatRecovery>,
    pub simulated_elapsed: SimTime,
    /// Clock at the end of each step's update, index 0 for step 1.
    pub step_end_times: Vec<SimTime>,
}

/// Runs without persistence. A rank failure is returned as an error.
pub fn run_plain(cluster: &mut SimCluster, cfg: &HeatConfig) -> Result<HeatRun> {
    run(cluster, cfg, None)
}

/// Installs `plan`, then runs with periodic persists and local recovery.
pub fn run_with_lflr(cluster: &mut SimCluster, cfg: &HeatConfig, plan: FaultPlan) -> Result<HeatRun> {
    cluster.install_plan(plan)?;
    let mut store = LflrStore::new(cluster.n_ranks(), cfg.replication)?;
    for r in 0..cluster.n_ranks() {
        store.register_recovery(
            r,
            Box::new(|ctx| {
                let entry = ctx
                    .restored
                    .get(FIELD_KEY)
                    .ok_or_else(|| Error::Unrecoverable(format!("rank {} has no persisted field", ctx.rank)))?;
                Checkpoint::decode(&entry.blob)
            }),
        )?;
    }
    let out = run(cluster, cfg, Some(&mut store));
    cluster.finish();
    out
}

/// Runs plainly and returns the largest deviation from the linear steady profile.
pub fn steady_state_check(cluster: &mut SimCluster, cfg: &HeatConfig) -> Result<f64> {
    let run = run_plain(cluster, cfg)?;
    Ok(run
        .field
        .iter()
        .zip(cfg.steady_profile())
        .fold(0.0f64, |m, (u, x)| m.max((u - x).abs())))
}

/// Writes `index,value` rows.
pub fn write_field_csv(path: &Path, field: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "index,value")?;
    for (i, v) in field.iter().enumerate() {
        writeln!(f, "{i},{v}")?;
    }
    f.flush()?;
    Ok(())
}

fn run(cluster: &mut SimCluster, cfg: &HeatConfig, store: Option<&mut LflrStore<Checkpoint>>) -> Result<HeatRun> {
    cfg.validate()?;
    let n = cluster.n_ranks();
    if n > cfg.n_global {
        return Err(Error::config(format!("{n} ranks for {} grid points", cfg.n_global)));
    }
    let layout = Layout::balanced(cfg.n_global, n);
    let c = cfg.persist_interval;
    let u = cluster.alloc(Reliability::Unreliable, FIELD_KEY, &layout.lens())?;
    let sent_left = cluster.alloc(Reliability::Reliable, "heat.sent.left", &vec![c; n])?;
    let sent_right = cluster.alloc(Reliability::Reliable, "heat.sent.right", &vec![c; n])?;
    let mut d = Driver {
        cluster,
        cfg,
        layout,
        ratio: cfg.ratio(),
        u,
        sent_left,
        sent_right,
        retain: store.is_some(),
        step: 0,
        last_persist: 0,
        valid_from: vec![1; n],
        recoveries: Vec::new(),
        persists: 0,
        step_end_times: Vec::with_capacity(cfg.n_steps),
    };
    let out = d.drive(store);
    for id in [u, sent_left, sent_right] {
        d.cluster.free(id)?;
    }
    out
}

struct Driver<'a> {
    cluster: &'a mut SimCluster,
    cfg: &'a HeatConfig,
    layout: Layout,
    ratio: f64,
    u: RegionId,
    /// Per rank, the first value of its block sent left at each step since the last persist.
    sent_left: RegionId,
    sent_right: RegionId,
    /// Whether sent values are kept for replay.
    retain: bool,
    step: usize,
    last_persist: usize,
    /// First step whose sent values each rank still holds.
    valid_from: Vec<usize>,
    recoveries: Vec<HeatRecovery>,
    persists: usize,
    step_end_times: Vec<SimTime>,
}

impl Driver<'_> {
    fn n(&self) -> usize {
        self.layout.n_ranks()
    }

    fn drive(&mut self, mut store: Option<&mut LflrStore<Checkpoint>>) -> Result<HeatRun> {
        let start = self.cluster.clock();
        let init = self.cfg.initial_field();
        for r in 0..self.n() {
            let range = self.layout.range(r);
            self.cluster.mem_mut().block_mut(self.u, r).copy_from_slice(&init[range]);
        }
        if let Some(store) = store.as_deref_mut() {
            self.persist_round(store)?;
        }
        for s in 1..=self.cfg.n_steps {
            let ghosts = loop {
                match self.exchange(s) {
                    Ok(g) => break g,
                    Err(Error::RankFailure { ranks }) => match store.as_deref_mut() {
                        Some(store) => self.recover(store)?,
                        None => return Err(Error::RankFailure { ranks }),
                    },
                    Err(e) => return Err(e),
                }
            };
            self.update(&ghosts);
            self.step = s;
            self.step_end_times.push(self.cluster.clock());
            if let Some(store) = store.as_deref_mut() {
                if s % self.cfg.persist_interval == 0 {
                    self.persist_round(store)?;
                }
            }
        }
        if let Some(store) = &mut store {
            self.recover(store)?;
        } else if let failed @ [_, ..] = self.cluster.failed_ranks().as_slice() {
            return Err(Error::rank_failure(failed.to_vec()));
        }
        let field = (0..self.n())
            .flat_map(|r| self.cluster.mem().block(self.u, r).to_vec())
            .collect();
        Ok(HeatRun {
            field,
            steps: self.step,
            persists: self.persists,
            recoveries: std::mem::take(&mut self.recoveries),
            simulated_elapsed: self.cluster.clock() - start,
            step_end_times: std::mem::take(&mut self.step_end_times),
        })
    }

    /// Sends boundary values for step `s` and returns each rank's ghosts.
    fn exchange(&mut self, s: usize) -> Result<Vec<(f64, f64)>> {
        let out = self.try_exchange();
        if out.is_err() {
            self.cluster.discard(Tag::Halo);
            return out;
        }
        if !self.retain {
            return out;
        }
        let slot = s - self.last_persist - 1;
        for r in 0..self.n() {
            let block = self.cluster.mem().block(self.u, r);
            let (first, last) = (block[0], block[block.len() - 1]);
            self.cluster.mem_mut().block_mut(self.sent_left, r)[slot] = first;
            self.cluster.mem_mut().block_mut(self.sent_right, r)[slot] = last;
        }
        out
    }

    fn try_exchange(&mut self) -> Result<Vec<(f64, f64)>> {
        let n = self.n();
        let failed = self.cluster.failed_ranks();
        if !failed.is_empty() {
            return Err(Error::rank_failure(failed));
        }
        for r in 0..n {
            let block = self.cluster.mem().block(self.u, r);
            let (first, last) = (block[0], block[block.len() - 1]);
            if r > 0 {
                self.cluster.send(r, r - 1, Tag::Halo, encode_f64s(&[first]))?;
            }
            if r + 1 < n {
                self.cluster.send(r, r + 1, Tag::Halo, encode_f64s(&[last]))?;
            }
        }
        let (bl, br) = self.cfg.boundary.values();
        let mut ghosts = Vec::with_capacity(n);
        for r in 0..n {
            let left = if r > 0 { self.recv_value(r - 1, r)? } else { bl };
            let right = if r + 1 < n { self.recv_value(r + 1, r)? } else { br };
            ghosts.push((left, right));
        }
        Ok(ghosts)
    }

    fn recv_value(&mut self, from: usize, to: usize) -> Result<f64> {
        let v = decode_f64s(&self.cluster.recv(from, to, Tag::Halo)?)?;
        v.first().copied().ok_or_else(|| Error::usage("empty halo message"))
    }

    fn update(&mut self, ghosts: &[(f64, f64)]) {
        for (r, &(left, right)) in ghosts.iter().enumerate() {
            let block = self.cluster.mem().block(self.u, r).to_vec();
            step(&block, left, right, self.ratio, self.cluster.mem_mut().block_mut(self.u, r));
        }
        self.cluster.compute("heat.step", 5 * self.layout.max_len() as u64);
    }

    /// Persists every rank's block at the current step, recovering and
    /// retrying the whole round if a rank fails part way.
    fn persist_round(&mut self, store: &mut LflrStore<Checkpoint>) -> Result<()> {
        'round: loop {
            for r in 0..self.n() {
                let ck = Checkpoint {
                    step: self.step,
                    u: self.cluster.mem().block(self.u, r).to_vec(),
                };
                match store.persist(self.cluster, r, FIELD_KEY, ck.encode()) {
                    Ok(_) => {}
                    Err(Error::RankFailure { .. }) => {
                        self.recover(store)?;
                        continue 'round;
                    }
                    Err(e) => return Err(e),
                }
            }
            if !self.cluster.failed_ranks().is_empty() {
                self.recover(store)?;
                continue;
            }
            break;
        }
        self.last_persist = self.step;
        self.valid_from.fill(self.step + 1);
        self.persists += 1;
        Ok(())
    }

    /// Recovers every failed rank. Two adjacent ranks down at once cannot be
    /// replayed because each needs the other's sent values.
    fn recover(&mut self, store: &mut LflrStore<Checkpoint>) -> Result<()> {
        let mut pending: BTreeSet<usize> = self.cluster.failed_ranks().into_iter().collect();
        while let Some(&r) = pending.first() {
            if let Some(&s) = [r.wrapping_sub(1), r + 1].iter().find(|s| pending.contains(s)) {
                return Err(Error::Unrecoverable(format!(
                    "adjacent ranks {} and {} are both down; their sent halo values are lost",
                    r.min(s),
                    r.max(s)
                )));
            }
            match self.recover_rank(store, r) {
                Ok(rep) => {
                    pending.remove(&r);
                    self.recoveries.push(rep);
                }
                Err(Error::RankFailure { .. }) => {}
                Err(e) => return Err(e),
            }
            pending.extend(self.cluster.failed_ranks());
        }
        Ok(())
    }

    fn recover_rank(&mut self, store: &mut LflrStore<Checkpoint>, r: usize) -> Result<HeatRecovery> {
        let report = store.recover_protocol(self.cluster, r)?;
        let ck = store
            .take_state(r)
            .ok_or_else(|| Error::Unrecoverable(format!("rank {r} recovered without a checkpoint")))?;
        let p = ck.step;
        let now = self.step;
        if p < self.last_persist || p > now || ck.u.len() != self.layout.len(r) {
            return Err(Error::Unrecoverable(format!(
                "rank {r} checkpoint at step {p} cannot be replayed to step {now}"
            )));
        }
        let n = self.n();
        let (bl, br) = self.cfg.boundary.values();
        let (lo, hi) = (p - self.last_persist, now - self.last_persist);
        let mut messages = 0;
        let mut bytes = 0;
        let mut pull = |d: &mut Self, from: usize, region: RegionId| -> Result<Vec<f64>> {
            if d.valid_from[from] > p + 1 && hi > lo {
                return Err(Error::Unrecoverable(format!(
                    "rank {from} no longer holds the halo values rank {r} needs from step {}",
                    p + 1
                )));
            }
            let payload = encode_f64s(&d.cluster.mem().block(region, from)[lo..hi]);
            messages += 1;
            bytes += payload.len();
            d.cluster.send(from, r, Tag::Recovery, payload)?;
            decode_f64s(&d.cluster.recv(from, r, Tag::Recovery)?)
        };
        let (sent_left, sent_right) = (self.sent_left, self.sent_right);
        let from_left = if r > 0 { Some(pull(self, r - 1, sent_right)?) } else { None };
        let from_right = if r + 1 < n { Some(pull(self, r + 1, sent_left)?) } else { None };

        let mut u = ck.u;
        let mut next = vec![0.0; u.len()];
        for (k, slot) in (lo..hi).enumerate() {
            self.cluster.mem_mut().block_mut(self.sent_left, r)[slot] = u[0];
            self.cluster.mem_mut().block_mut(self.sent_right, r)[slot] = u[u.len() - 1];
            let left = from_left.as_ref().map_or(bl, |v| v[k]);
            let right = from_right.as_ref().map_or(br, |v| v[k]);
            step(&u, left, right, self.ratio, &mut next);
            std::mem::swap(&mut u, &mut next);
            self.cluster.compute("heat.recompute", 5 * u.len() as u64);
            if !self.cluster.is_alive(r) {
                return Err(Error::rank_failure(vec![r]));
            }
        }
        self.cluster.mem_mut().block_mut(self.u, r).copy_from_slice(&u);
        self.valid_from[r] = p + 1;
        Ok(HeatRecovery {
            rank: r,
            restored_step: p,
            recomputed_first: p + 1,
            recomputed_last: now,
            halo_messages: messages,
            halo_bytes: bytes,
            store: report,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bump_halves() {
        let mut out = [0.0; 3];
        step(&[0.0, 1.0, 0.0], 0.0, 0.0, 0.25, &mut out);
        assert_eq!(out, [0.25, 0.5, 0.25]);
    }

    #[test]
    fn cfl_enforced() {
        let b = Boundary::Dirichlet { left: 0.0, right: 1.0 };
        assert!(HeatConfig::new(8, 1.0, 1.0, 0.5, 1, b, 1).is_ok());
        assert!(matches!(HeatConfig::new(8, 1.0, 1.0, 0.51, 1, b, 1), Err(Error::Config(_))));
        assert!(HeatConfig::new(8, 1.0, 1.0, 0.25, 1, b, 0).is_err());
    }

    #[test]
    fn checkpoint_codec() {
        let ck = Checkpoint {
            step: 40,
            u: vec![1.5, -0.0, f64::MIN_POSITIVE],
        };
        assert_eq!(Checkpoint::decode(&ck.encode()).unwrap(), ck);
    }
}
