//! Local failure, local recovery: a per-rank persistent key-value store
//! replicated to ring neighbors, with respawn-time recovery callbacks.
//!
//! Each rank's store is volatile from the cluster's point of view: when the
//! rank is killed its copy is lost and only the replicas on other ranks remain.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::{SimCluster, Tag};
use crate::time::SimTime;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PersistentEntry {
    pub key: String,
    #[serde(skip)]
    pub blob: Vec<u8>,
    pub version: u64,
    pub owner: usize,
}

impl PersistentEntry {
    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.key.len() + self.blob.len());
        out.extend_from_slice(&(self.owner as u64).to_le_bytes());
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.key.len() as u32).to_le_bytes());
        out.extend_from_slice(self.key.as_bytes());
        out.extend_from_slice(&self.blob);
        out
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::usage("malformed persistent entry message");
        let word = |at: usize| -> Result<u64> {
            let b = bytes.get(at..at + 8).ok_or_else(bad)?;
            Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
        };
        let owner = word(0)? as usize;
        let version = word(8)?;
        let klen = bytes.get(16..20).ok_or_else(bad)?;
        let klen = u32::from_le_bytes(klen.try_into().expect("4 bytes")) as usize;
        let key = bytes.get(20..20 + klen).ok_or_else(bad)?;
        let key = String::from_utf8(key.to_vec()).map_err(|_| bad())?;
        Ok(PersistentEntry {
            key,
            blob: bytes[20 + klen..].to_vec(),
            version,
            owner,
        })
    }
}

/// Result of a completed persist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Persisted {
    pub version: u64,
    /// At least one replica holder was dead, so fewer than `2k` copies exist.
    pub degraded: bool,
}

/// What a recovery callback sees after respawn.
#[derive(Clone, Debug)]
pub struct RecoveryContext {
    pub rank: usize,
    /// The rank's own entries at their last completed version.
    pub restored: BTreeMap<String, PersistentEntry>,
    /// Entries owned by the adjacent ring neighbors that are alive.
    pub neighbors: BTreeMap<usize, BTreeMap<String, PersistentEntry>>,
    pub failed_at: SimTime,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub rank: usize,
    pub failed_at: SimTime,
    pub started: SimTime,
    pub completed: SimTime,
    pub recovery_time: SimTime,
    pub messages: usize,
    pub bytes_transferred: usize,
    /// Every rank that sent or received a recovery message, plus the recovered rank.
    pub ranks_involved: Vec<usize>,
    pub keys: Vec<String>,
}

pub type RecoveryCallback<S> = Box<dyn FnMut(&RecoveryContext) -> Result<S>>;

/// Replicated persistent storage for every rank of one cluster. `S` is the
/// volatile state a recovery callback rebuilds.
pub struct LflrStore<S> {
    replication: usize,
    /// stores[r] holds everything rank r keeps: its own entries and replicas.
    stores: Vec<BTreeMap<(usize, String), PersistentEntry>>,
    /// Last committed version per owner and key. Runtime metadata, survives failures.
    catalog: Vec<BTreeMap<String, u64>>,
    degraded: BTreeSet<(usize, String)>,
    seen_incarnation: Vec<u64>,
    callbacks: Vec<Option<RecoveryCallback<S>>>,
    state: Vec<Option<S>>,
}

impl<S> LflrStore<S> {
    /// Store for `n_ranks` ranks keeping `replication` copies on each ring side.
    pub fn new(n_ranks: usize, replication: usize) -> Result<Self> {
        if replication == 0 {
            return Err(Error::config("replication degree must be at least 1"));
        }
        Ok(LflrStore {
            replication,
            stores: vec![BTreeMap::new(); n_ranks],
            catalog: vec![BTreeMap::new(); n_ranks],
            degraded: BTreeSet::new(),
            seen_incarnation: vec![0; n_ranks],
            callbacks: (0..n_ranks).map(|_| None).collect(),
            state: (0..n_ranks).map(|_| None).collect(),
        })
    }

    pub fn n_ranks(&self) -> usize {
        self.stores.len()
    }

    pub fn replication(&self) -> usize {
        self.replication
    }

    /// Replica holders of `owner` in preference order: left 1, right 1, left 2, ...
    pub fn holders(&self, owner: usize) -> Vec<usize> {
        ring_within(self.n_ranks(), owner, self.replication)
    }

    /// Adjacent ring neighbors of `rank`.
    pub fn neighbors(&self, rank: usize) -> Vec<usize> {
        ring_within(self.n_ranks(), rank, 1)
    }

    /// Drops the stores and volatile state of ranks that died since the last call.
    pub fn sync(&mut self, cluster: &SimCluster) {
        for r in 0..self.n_ranks() {
            let inc = cluster.incarnation(r);
            if inc != self.seen_incarnation[r] {
                self.seen_incarnation[r] = inc;
                self.stores[r].clear();
                self.state[r] = None;
            }
        }
    }

    /// Entry `key` of `owner` as stored on rank `on`.
    pub fn get(&self, on: usize, owner: usize, key: &str) -> Option<&PersistentEntry> {
        self.stores.get(on)?.get(&(owner, key.to_string()))
    }

    /// Last committed version of `owner`'s `key`, if any.
    pub fn version(&self, owner: usize, key: &str) -> Option<u64> {
        self.catalog.get(owner)?.get(key).copied()
    }

    pub fn is_degraded(&self, owner: usize, key: &str) -> bool {
        self.degraded.contains(&(owner, key.to_string()))
    }

    pub fn state(&self, rank: usize) -> Option<&S> {
        self.state.get(rank)?.as_ref()
    }

    pub fn set_state(&mut self, rank: usize, state: S) {
        self.state[rank] = Some(state);
    }

    pub fn take_state(&mut self, rank: usize) -> Option<S> {
        self.state.get_mut(rank)?.take()
    }

    /// Writes `key` locally and to every live replica holder. The new version
    /// becomes visible only if the owner survives until all replicas arrived;
    /// otherwise the previous version stays current everywhere.
    pub fn persist(&mut self, cluster: &mut SimCluster, rank: usize, key: &str, blob: Vec<u8>) -> Result<Persisted> {
        self.sync(cluster);
        if rank >= self.n_ranks() {
            return Err(Error::usage(format!("rank {rank} out of range")));
        }
        if !cluster.is_alive(rank) {
            return Err(Error::rank_failure(vec![rank]));
        }
        let version = self.version(rank, key).unwrap_or(0) + 1;
        let entry = PersistentEntry {
            key: key.to_string(),
            blob,
            version,
            owner: rank,
        };
        let payload = entry.encode();
        let mut degraded = false;
        let mut targets = Vec::new();
        for h in self.holders(rank) {
            if cluster.is_alive(h) {
                cluster.send(rank, h, Tag::Persist, payload.clone())?;
                targets.push(h);
            } else {
                degraded = true;
            }
        }
        let mut delivered = Vec::with_capacity(targets.len());
        for h in targets {
            match cluster.recv(rank, h, Tag::Persist) {
                Ok(_) => delivered.push(h),
                Err(Error::RankFailure { .. }) => degraded = true,
                Err(e) => return Err(e),
            }
        }
        self.sync(cluster);
        if !cluster.is_alive(rank) {
            return Err(Error::rank_failure(vec![rank]));
        }
        let slot = (rank, key.to_string());
        for h in delivered.iter().copied().filter(|&h| cluster.is_alive(h)) {
            self.stores[h].insert(slot.clone(), entry.clone());
        }
        degraded |= delivered.iter().any(|&h| !cluster.is_alive(h));
        self.stores[rank].insert(slot.clone(), entry);
        self.catalog[rank].insert(key.to_string(), version);
        if degraded {
            self.degraded.insert(slot);
        } else {
            self.degraded.remove(&slot);
        }
        Ok(Persisted { version, degraded })
    }

    pub fn register_recovery(&mut self, rank: usize, callback: RecoveryCallback<S>) -> Result<()> {
        let slot = self
            .callbacks
            .get_mut(rank)
            .ok_or_else(|| Error::usage(format!("rank {rank} out of range")))?;
        if slot.is_some() {
            return Err(Error::usage(format!("rank {rank} already has a recovery callback")));
        }
        *slot = Some(callback);
        Ok(())
    }

    pub fn has_callback(&self, rank: usize) -> bool {
        self.callbacks.get(rank).is_some_and(Option::is_some)
    }

    /// Respawns `rank`, restores its entries and the replicas it held from
    /// its ring neighbors, and runs its recovery callback. Only the rank and
    /// its replica holders exchange messages.
    pub fn recover_protocol(&mut self, cluster: &mut SimCluster, rank: usize) -> Result<RecoveryReport> {
        self.sync(cluster);
        if rank >= self.n_ranks() {
            return Err(Error::usage(format!("rank {rank} out of range")));
        }
        if cluster.status(rank) == crate::sim::RankStatus::Alive {
            return Err(Error::usage(format!("rank {rank} has not failed")));
        }
        if !self.has_callback(rank) {
            return Err(Error::Unrecoverable(format!("rank {rank} has no recovery callback")));
        }
        let holders = self.holders(rank);
        let mut sources = BTreeMap::new();
        for (key, &version) in &self.catalog[rank] {
            let slot = (rank, key.clone());
            let src = holders.iter().copied().find(|&h| {
                cluster.is_alive(h) && self.stores[h].get(&slot).is_some_and(|e| e.version == version)
            });
            match src {
                Some(h) => {
                    sources.insert(key.clone(), h);
                }
                None => {
                    return Err(Error::Unrecoverable(format!(
                        "every replica of rank {rank}'s entry {key:?} is lost"
                    )))
                }
            }
        }

        let failed_at = cluster.failed_at(rank).unwrap_or(cluster.clock());
        if !cluster.is_alive(rank) {
            cluster.respawn_rank(rank)?;
        }
        let started = cluster.clock();
        let mut traffic = Traffic::new(rank);

        // own entries from one surviving holder each
        let mut restored = BTreeMap::new();
        for (key, &h) in &sources {
            let entry = self.stores[h][&(rank, key.clone())].clone();
            let got = traffic.transfer(cluster, h, rank, &entry)?;
            restored.insert(key.clone(), got);
        }
        // replicas this rank holds for others; adjacent owners double as the neighbor view
        let adjacent = self.neighbors(rank);
        let mut neighbors: BTreeMap<usize, BTreeMap<String, PersistentEntry>> = BTreeMap::new();
        let mut received = Vec::new();
        for owner in self.holders(rank) {
            if !cluster.is_alive(owner) {
                continue;
            }
            let owned: Vec<PersistentEntry> = self.catalog[owner]
                .iter()
                .filter_map(|(k, &v)| self.stores[owner].get(&(owner, k.clone())).filter(|e| e.version == v))
                .cloned()
                .collect();
            for entry in owned {
                let got = traffic.transfer(cluster, owner, rank, &entry)?;
                if adjacent.contains(&owner) {
                    neighbors.entry(owner).or_default().insert(got.key.clone(), got.clone());
                }
                received.push(got);
            }
        }
        // re-replicate own entries to live holders that lost them
        let mut pushed = Vec::new();
        for entry in restored.values() {
            let slot = (rank, entry.key.clone());
            for &h in &holders {
                if cluster.is_alive(h) && self.stores[h].get(&slot) != Some(entry) {
                    traffic.transfer(cluster, rank, h, entry)?;
                    pushed.push((h, entry.clone()));
                }
            }
        }

        self.sync(cluster);
        if !cluster.is_alive(rank) {
            return Err(Error::rank_failure(vec![rank]));
        }
        for entry in restored.values().chain(&received) {
            self.stores[rank].insert((entry.owner, entry.key.clone()), entry.clone());
        }
        for (h, entry) in pushed {
            if cluster.is_alive(h) {
                self.stores[h].insert((entry.owner, entry.key.clone()), entry);
            }
        }

        let ctx = RecoveryContext {
            rank,
            restored,
            neighbors,
            failed_at,
        };
        let callback = self.callbacks[rank].as_mut().expect("checked above");
        let state = callback(&ctx)?;
        self.state[rank] = Some(state);

        let completed = cluster.clock();
        Ok(RecoveryReport {
            rank,
            failed_at,
            started,
            completed,
            recovery_time: completed - started,
            messages: traffic.messages,
            bytes_transferred: traffic.bytes,
            ranks_involved: traffic.ranks.into_iter().collect(),
            keys: ctx.restored.keys().cloned().collect(),
        })
    }
}

struct Traffic {
    messages: usize,
    bytes: usize,
    ranks: BTreeSet<usize>,
}

impl Traffic {
    fn new(rank: usize) -> Self {
        Traffic {
            messages: 0,
            bytes: 0,
            ranks: BTreeSet::from([rank]),
        }
    }

    fn transfer(&mut self, cluster: &mut SimCluster, from: usize, to: usize, entry: &PersistentEntry) -> Result<PersistentEntry> {
        let payload = entry.encode();
        self.bytes += payload.len();
        self.messages += 1;
        self.ranks.extend([from, to]);
        cluster.send(from, to, Tag::Recovery, payload)?;
        PersistentEntry::decode(&cluster.recv(from, to, Tag::Recovery)?)
    }
}

/// Ranks within ring distance `k` of `rank`, nearest first, left before right.
fn ring_within(n: usize, rank: usize, k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for d in 1..=k.min(n.saturating_sub(1)) {
        for r in [(rank + n - d % n) % n, (rank + d) % n] {
            if r != rank && !out.contains(&r) {
                out.push(r);
            }
        }
    }
    out
}
