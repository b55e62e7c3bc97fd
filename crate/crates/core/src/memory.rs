//! Selective-reliability memory.
//!
//! Every array the simulated program touches lives in a [`Memory`] arena as a
//! region with one block per rank. Regions are either [`Reliability::Reliable`]
//! or [`Reliability::Unreliable`]; the two kinds behave identically for reads
//! and writes; the only difference is that the fault injector may flip bits in
//! unreliable regions and never touches reliable ones.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegionId(pub u64);

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "region#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reliability {
    Reliable,
    Unreliable,
}

/// Returns `value` with bit `bit_index` of its binary64 encoding inverted.
///
/// The result is not sanitized: flips that produce NaN or an infinity are
/// returned as such.
pub fn flip_bit(value: f64, bit_index: u32) -> Result<f64> {
    if bit_index > 63 {
        return Err(Error::usage(format!("bit index {bit_index} outside [0, 63]")));
    }
    Ok(f64::from_bits(value.to_bits() ^ (1u64 << bit_index)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum FlipRefusal {
    NoSuchRegion,
    ReliableRegion,
    OutOfBounds { len: usize },
}

#[derive(Clone, Debug)]
struct Region {
    kind: Reliability,
    label: String,
    blocks: Vec<Vec<f64>>,
    flips: Vec<u64>,
}

/// Per-cluster arena of reliable and unreliable regions.
#[derive(Clone, Debug)]
pub struct Memory {
    n_ranks: usize,
    regions: BTreeMap<RegionId, Region>,
    next_id: u64,
}

impl Memory {
    pub fn new(n_ranks: usize) -> Self {
        Memory {
            n_ranks,
            regions: BTreeMap::new(),
            next_id: 0,
        }
    }

    pub fn n_ranks(&self) -> usize {
        self.n_ranks
    }

    /// Allocates a zero-initialized region with `lens[rank]` elements on each rank.
    pub fn alloc(&mut self, kind: Reliability, label: &str, lens: &[usize]) -> Result<RegionId> {
        if lens.len() != self.n_ranks {
            return Err(Error::usage(format!(
                "region '{label}' needs {} block lengths, got {}",
                self.n_ranks,
                lens.len()
            )));
        }
        let id = RegionId(self.next_id);
        self.next_id += 1;
        self.regions.insert(
            id,
            Region {
                kind,
                label: label.to_string(),
                blocks: lens.iter().map(|&n| vec![0.0; n]).collect(),
                flips: vec![0; self.n_ranks],
            },
        );
        Ok(id)
    }

    /// Allocates an array that lives on a single rank.
    pub fn alloc_local(
        &mut self,
        rank: usize,
        kind: Reliability,
        label: &str,
        len: usize,
    ) -> Result<RegionId> {
        if rank >= self.n_ranks {
            return Err(Error::usage(format!("rank {rank} out of range")));
        }
        let mut lens = vec![0; self.n_ranks];
        lens[rank] = len;
        self.alloc(kind, label, &lens)
    }

    pub fn free(&mut self, id: RegionId) -> Result<()> {
        self.regions
            .remove(&id)
            .map(|_| ())
            .ok_or_else(|| Error::usage(format!("free of unknown {id}")))
    }

    pub fn contains(&self, id: RegionId) -> bool {
        self.regions.contains_key(&id)
    }

    pub fn kind(&self, id: RegionId) -> Option<Reliability> {
        self.regions.get(&id).map(|r| r.kind)
    }

    pub fn label(&self, id: RegionId) -> Option<&str> {
        self.regions.get(&id).map(|r| r.label.as_str())
    }

    fn region(&self, id: RegionId) -> &Region {
        self.regions
            .get(&id)
            .unwrap_or_else(|| panic!("access to unknown or freed {id}"))
    }

    fn region_mut(&mut self, id: RegionId) -> &mut Region {
        self.regions
            .get_mut(&id)
            .unwrap_or_else(|| panic!("access to unknown or freed {id}"))
    }

    /// # Panics
    /// Panics if `id` is not a live region.
    pub fn block(&self, id: RegionId, rank: usize) -> &[f64] {
        &self.region(id).blocks[rank]
    }

    /// # Panics
    /// Panics if `id` is not a live region.
    pub fn block_mut(&mut self, id: RegionId, rank: usize) -> &mut [f64] {
        &mut self.region_mut(id).blocks[rank]
    }

    pub(crate) fn take_block(&mut self, id: RegionId, rank: usize) -> Vec<f64> {
        std::mem::take(&mut self.region_mut(id).blocks[rank])
    }

    pub(crate) fn put_block(&mut self, id: RegionId, rank: usize, data: Vec<f64>) {
        self.region_mut(id).blocks[rank] = data;
    }

    pub fn resize_block(&mut self, id: RegionId, rank: usize, len: usize) {
        self.region_mut(id).blocks[rank].resize(len, 0.0);
    }

    /// Full contents of a region, one block per rank.
    pub fn snapshot(&self, id: RegionId) -> Vec<Vec<f64>> {
        self.region(id).blocks.clone()
    }

    /// Bitwise copy of `src` into `dst`. Block lengths must match on every rank.
    pub fn copy_region(&mut self, src: RegionId, dst: RegionId) -> Result<()> {
        if src == dst {
            return Ok(());
        }
        let (Some(s), Some(d)) = (self.regions.get(&src), self.regions.get(&dst)) else {
            return Err(Error::usage("copy between unknown regions"));
        };
        if s.blocks.iter().map(Vec::len).ne(d.blocks.iter().map(Vec::len)) {
            return Err(Error::usage(format!(
                "length mismatch copying '{}' into '{}'",
                s.label, d.label
            )));
        }
        let data = s.blocks.clone();
        self.region_mut(dst).blocks = data;
        Ok(())
    }

    /// Copies an unreliable region into a reliable one.
    pub fn promote(&mut self, src: RegionId, dst: RegionId) -> Result<()> {
        match (self.kind(src), self.kind(dst)) {
            (Some(Reliability::Unreliable), Some(Reliability::Reliable)) => self.copy_region(src, dst),
            (Some(_), Some(_)) => Err(Error::usage(
                "promote copies an unreliable region into a reliable one",
            )),
            _ => Err(Error::usage("promote between unknown regions")),
        }
    }

    /// Injects a single bit flip. Reliable regions are refused.
    pub fn flip(
        &mut self,
        rank: usize,
        id: RegionId,
        index: usize,
        bit: u32,
    ) -> std::result::Result<(f64, f64), FlipRefusal> {
        let region = self.regions.get_mut(&id).ok_or(FlipRefusal::NoSuchRegion)?;
        if region.kind == Reliability::Reliable {
            return Err(FlipRefusal::ReliableRegion);
        }
        let block = region.blocks.get_mut(rank).ok_or(FlipRefusal::NoSuchRegion)?;
        let len = block.len();
        let slot = block.get_mut(index).ok_or(FlipRefusal::OutOfBounds { len })?;
        let before = *slot;
        let after = flip_bit(before, bit).map_err(|_| FlipRefusal::OutOfBounds { len: 64 })?;
        *slot = after;
        region.flips[rank] += 1;
        Ok((before, after))
    }

    pub fn flip_count(&self, id: RegionId) -> u64 {
        self.regions.get(&id).map_or(0, |r| r.flips.iter().sum())
    }

    /// Total flips landed in all live regions of the given kind.
    pub fn total_flips(&self, kind: Reliability) -> u64 {
        self.regions
            .values()
            .filter(|r| r.kind == kind)
            .map(|r| r.flips.iter().sum::<u64>())
            .sum()
    }

    /// Live regions of `kind` with a non-empty block on `rank`, in allocation order.
    pub fn live_regions(&self, rank: usize, kind: Reliability) -> Vec<RegionId> {
        self.regions
            .iter()
            .filter(|(_, r)| r.kind == kind && r.blocks.get(rank).is_some_and(|b| !b.is_empty()))
            .map(|(id, _)| *id)
            .collect()
    }

    /// Most recently allocated live region carrying `label`.
    pub fn find_label(&self, label: &str) -> Option<RegionId> {
        self.regions
            .iter()
            .rev()
            .find(|(_, r)| r.label == label)
            .map(|(id, _)| *id)
    }

    pub fn ids(&self) -> impl Iterator<Item = RegionId> + '_ {
        self.regions.keys().copied()
    }

    /// Models loss of a process image: every block owned by `rank` is zeroed.
    pub(crate) fn wipe_rank(&mut self, rank: usize) {
        for region in self.regions.values_mut() {
            if let Some(block) = region.blocks.get_mut(rank) {
                block.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
}

/// Handle to a rank-local reliable array.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReliableArray {
    pub id: RegionId,
    pub rank: usize,
}

/// Handle to a rank-local unreliable array.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnreliableArray {
    pub id: RegionId,
    pub rank: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Array {
    Reliable(ReliableArray),
    Unreliable(UnreliableArray),
}

impl Array {
    pub fn id(&self) -> RegionId {
        match self {
            Array::Reliable(a) => a.id,
            Array::Unreliable(a) => a.id,
        }
    }
}

/// Allocates a zeroed rank-local array of the requested kind.
pub fn alloc(
    memory: &mut Memory,
    rank: usize,
    kind: Reliability,
    len: usize,
) -> Result<Array> {
    let label = match kind {
        Reliability::Reliable => "array.reliable",
        Reliability::Unreliable => "array.unreliable",
    };
    let id = memory.alloc_local(rank, kind, label, len)?;
    Ok(match kind {
        Reliability::Reliable => Array::Reliable(ReliableArray { id, rank }),
        Reliability::Unreliable => Array::Unreliable(UnreliableArray { id, rank }),
    })
}

/// Bitwise copy of an unreliable array into a reliable one of equal length.
pub fn promote(memory: &mut Memory, src: UnreliableArray, dst: ReliableArray) -> Result<()> {
    let (ls, ld) = (memory.block(src.id, src.rank).len(), memory.block(dst.id, dst.rank).len());
    if ls != ld {
        return Err(Error::usage(format!("promote length mismatch: {ls} vs {ld}")));
    }
    let data = memory.block(src.id, src.rank).to_vec();
    memory.block_mut(dst.id, dst.rank).copy_from_slice(&data);
    Ok(())
}
