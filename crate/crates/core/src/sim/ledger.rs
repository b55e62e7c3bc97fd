use std::io::Write;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::faults::FaultOutcome;
use crate::memory::{RegionId, Reliability};
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Halo,
    Persist,
    Recovery,
    App,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectiveOp {
    SumAllreduce,
    MaxAllreduce,
    Barrier,
}

/// One record of the simulation ledger. The full ledger is a pure function
/// of the program, the cluster configuration and the seed.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum LedgerEntry {
    Alloc {
        at: SimTime,
        region: RegionId,
        kind: Reliability,
        label: String,
    },
    Free {
        at: SimTime,
        region: RegionId,
    },
    Compute {
        start: SimTime,
        end: SimTime,
        label: &'static str,
    },
    Collective {
        id: u64,
        op: CollectiveOp,
        width: usize,
        issued: SimTime,
        completes: SimTime,
    },
    Wait {
        id: u64,
        at: SimTime,
        ok: bool,
    },
    Send {
        from: usize,
        to: usize,
        tag: Tag,
        bytes: usize,
        sent: SimTime,
        arrives: SimTime,
    },
    Recv {
        from: usize,
        to: usize,
        tag: Tag,
        bytes: usize,
        at: SimTime,
    },
    Dropped {
        from: usize,
        to: usize,
        tag: Tag,
        bytes: usize,
        at: SimTime,
    },
    Kill {
        rank: usize,
        at: SimTime,
    },
    Respawn {
        rank: usize,
        at: SimTime,
    },
    Fault {
        index: usize,
        #[serde(flatten)]
        outcome: FaultOutcome,
    },
    Note {
        at: SimTime,
        text: String,
    },
}

#[derive(Clone, Debug, Default)]
pub struct Ledger {
    entries: Vec<LedgerEntry>,
}

impl Ledger {
    pub fn push(&mut self, entry: LedgerEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// SHA-256 of the JSONL rendering.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(serde_json::to_vec(e).expect("ledger entry serializes"));
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// SHA-256 over the injected fault entries only.
    pub fn injected_digest(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            if let LedgerEntry::Fault { outcome, .. } = e {
                if outcome.is_injected() {
                    h.update(serde_json::to_vec(e).expect("ledger entry serializes"));
                    h.update(b"\n");
                }
            }
        }
        hex::encode(h.finalize())
    }

    /// Send and receive records with the given tag in which `rank` is either end.
    pub fn messages_touching(&self, rank: usize, tag: Tag) -> usize {
        self.entries
            .iter()
            .filter(|e| match e {
                LedgerEntry::Send { from, to, tag: t, .. } | LedgerEntry::Recv { from, to, tag: t, .. } => {
                    *t == tag && (*from == rank || *to == rank)
                }
                _ => false,
            })
            .count()
    }
}
