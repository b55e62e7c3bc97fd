//! Fault plans: seeded schedules of silent bit flips and rank kills.
//!
//! A plan is a time-ordered list of [`FaultEvent`]s built from a
//! [`GeneratorSpec`] and a seed. The cluster applies due events as its clock
//! advances and records one [`FaultOutcome`] per event.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::memory::RegionId;
use crate::time::SimTime;

/// Stream selector mixed into the seed so plan draws never share a stream
/// with jitter draws.
const PLAN_STREAM: u64 = 0x7061_6c6e;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegionRef {
    Id(u64),
    Label(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FlipTarget {
    /// A fixed element of a named or numbered region.
    Element { region: RegionRef, index: usize },
    /// Resolved at injection time among the live unreliable regions of the
    /// target rank (ordered by allocation), then among that region's elements.
    Random { region_draw: u64, element_draw: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FaultKind {
    BitFlip {
        rank: usize,
        target: FlipTarget,
        bit: u32,
    },
    RankKill {
        rank: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub time: SimTime,
    #[serde(flatten)]
    pub kind: FaultKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrivals {
    /// Exponential inter-arrival times.
    Poisson,
    /// Exactly one event per window of length `1/rate`, uniformly placed.
    Stratified,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindMix {
    #[serde(default = "one")]
    pub bit_flip: f64,
    #[serde(default)]
    pub rank_kill: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for KindMix {
    fn default() -> Self {
        KindMix {
            bit_flip: 1.0,
            rank_kill: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitRange {
    pub lo: u32,
    pub hi: u32,
}

impl Default for BitRange {
    fn default() -> Self {
        BitRange { lo: 0, hi: 63 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomCampaign {
    /// Events per unit of simulated time.
    pub rate: f64,
    /// No event is scheduled at or after this time.
    pub horizon: f64,
    #[serde(default)]
    pub start: f64,
    #[serde(default = "default_arrivals")]
    pub arrivals: Arrivals,
    #[serde(default)]
    pub mix: KindMix,
    #[serde(default)]
    pub bits: BitRange,
    /// Ranks eligible as targets; all ranks when absent.
    #[serde(default)]
    pub ranks: Option<Vec<usize>>,
    #[serde(default)]
    pub max_events: Option<usize>,
}

fn default_arrivals() -> Arrivals {
    Arrivals::Poisson
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    #[default]
    None,
    Explicit {
        events: Vec<FaultEvent>,
    },
    RandomCampaign(RandomCampaign),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FaultPlan {
    pub seed: u64,
    pub events: Vec<FaultEvent>,
}

impl FaultPlan {
    pub fn empty() -> Self {
        FaultPlan {
            seed: 0,
            events: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// SHA-256 over the serialized event list.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(&self.events).expect("fault events serialize");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoSuchRegion,
    OutOfBounds,
    ReliableRegion,
    NoLiveUnreliableRegion,
    RankNotAlive,
    /// The run ended before the event's time.
    NotReached,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum FaultOutcome {
    Injected {
        at: SimTime,
        #[serde(skip_serializing_if = "Option::is_none")]
        region: Option<RegionId>,
        #[serde(skip_serializing_if = "Option::is_none")]
        label: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        index: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        before: Option<u64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        after: Option<u64>,
    },
    Skipped {
        at: SimTime,
        reason: SkipReason,
    },
}

impl FaultOutcome {
    pub fn is_injected(&self) -> bool {
        matches!(self, FaultOutcome::Injected { .. })
    }
}

fn check_event(ev: &FaultEvent, n_ranks: usize) -> Result<()> {
    match &ev.kind {
        FaultKind::BitFlip { rank, bit, .. } => {
            if *rank >= n_ranks {
                return Err(Error::config(format!("bit flip targets rank {rank} of {n_ranks}")));
            }
            if *bit > 63 {
                return Err(Error::config(format!("bit index {bit} outside [0, 63]")));
            }
        }
        FaultKind::RankKill { rank } => {
            if *rank >= n_ranks {
                return Err(Error::config(format!("rank kill targets rank {rank} of {n_ranks}")));
            }
        }
    }
    Ok(())
}

/// Builds a reproducible plan. Explicit events pass through in stable time order.
pub fn build_plan(spec: &GeneratorSpec, seed: u64, n_ranks: usize) -> Result<FaultPlan> {
    let mut events = match spec {
        GeneratorSpec::None => Vec::new(),
        GeneratorSpec::Explicit { events } => events.clone(),
        GeneratorSpec::RandomCampaign(c) => random_events(c, seed, n_ranks)?,
    };
    for ev in &events {
        check_event(ev, n_ranks)?;
    }
    events.sort_by_key(|e| e.time);
    Ok(FaultPlan { seed, events })
}

fn random_events(c: &RandomCampaign, seed: u64, n_ranks: usize) -> Result<Vec<FaultEvent>> {
    if !(c.rate >= 0.0) || !c.rate.is_finite() {
        return Err(Error::config(format!("fault rate must be finite and >= 0, got {}", c.rate)));
    }
    if !(c.start >= 0.0) || !(c.horizon >= c.start) || !c.horizon.is_finite() {
        return Err(Error::config(format!(
            "fault window [{}, {}) is invalid",
            c.start, c.horizon
        )));
    }
    if c.bits.lo > c.bits.hi || c.bits.hi > 63 {
        return Err(Error::config(format!(
            "bit range [{}, {}] must lie within [0, 63]",
            c.bits.lo, c.bits.hi
        )));
    }
    if !(c.mix.bit_flip >= 0.0 && c.mix.rank_kill >= 0.0) || c.mix.bit_flip + c.mix.rank_kill <= 0.0 {
        return Err(Error::config("fault kind mix needs non-negative weights with positive total"));
    }
    let ranks: Vec<usize> = match &c.ranks {
        Some(r) if r.is_empty() => return Err(Error::config("fault rank list is empty")),
        Some(r) => r.clone(),
        None => (0..n_ranks).collect(),
    };
    if c.rate == 0.0 || c.horizon == c.start {
        return Ok(Vec::new());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PLAN_STREAM);
    let cap = c.max_events.unwrap_or(usize::MAX);
    let mut times = Vec::new();
    match c.arrivals {
        Arrivals::Poisson => {
            let exp = Exp::new(c.rate).map_err(|e| Error::config(e.to_string()))?;
            let mut t = c.start;
            loop {
                t += exp.sample(&mut rng);
                if t >= c.horizon || times.len() >= cap {
                    break;
                }
                times.push(t);
            }
        }
        Arrivals::Stratified => {
            let width = 1.0 / c.rate;
            let mut k = 0u64;
            loop {
                let lo = c.start + k as f64 * width;
                if lo >= c.horizon || times.len() >= cap {
                    break;
                }
                let t = lo + rng.random::<f64>() * width;
                if t < c.horizon {
                    times.push(t);
                }
                k += 1;
            }
        }
    }

    let p_flip = c.mix.bit_flip / (c.mix.bit_flip + c.mix.rank_kill);
    let mut events = Vec::with_capacity(times.len());
    for t in times {
        let rank = ranks[rng.random_range(0..ranks.len())];
        let kind = if rng.random::<f64>() < p_flip {
            FaultKind::BitFlip {
                rank,
                target: FlipTarget::Random {
                    region_draw: rng.random(),
                    element_draw: rng.random(),
                },
                bit: rng.random_range(c.bits.lo..=c.bits.hi),
            }
        } else {
            FaultKind::RankKill { rank }
        };
        events.push(FaultEvent {
            time: SimTime::from_units(t)?,
            kind,
        });
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn campaign(rate: f64) -> GeneratorSpec {
        GeneratorSpec::RandomCampaign(RandomCampaign {
            rate,
            horizon: 100.0,
            start: 0.0,
            arrivals: Arrivals::Poisson,
            mix: KindMix::default(),
            bits: BitRange { lo: 52, hi: 63 },
            ranks: None,
            max_events: None,
        })
    }

    #[test]
    fn explicit_passes_through() {
        let json = r#"{"kind":"explicit","events":[
            {"time":5.0,"type":"bit_flip","rank":0,"target":{"region":0,"index":3},"bit":63}]}"#;
        let spec: GeneratorSpec = serde_json::from_str(json).unwrap();
        let plan = build_plan(&spec, 1, 1).unwrap();
        assert_eq!(plan.len(), 1);
        assert_eq!(
            plan.events[0].kind,
            FaultKind::BitFlip {
                rank: 0,
                target: FlipTarget::Element {
                    region: RegionRef::Id(0),
                    index: 3
                },
                bit: 63
            }
        );
    }

    #[test]
    fn zero_rate_is_empty_and_negative_rejected() {
        assert!(build_plan(&campaign(0.0), 3, 4).unwrap().is_empty());
        assert!(matches!(build_plan(&campaign(-1.0), 3, 4), Err(Error::Config(_))));
    }

    #[test]
    fn reproducible_and_ordered() {
        let a = build_plan(&campaign(0.5), 9, 4).unwrap();
        let b = build_plan(&campaign(0.5), 9, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        assert!(a.events.windows(2).all(|w| w[0].time <= w[1].time));
        let c = build_plan(&campaign(0.5), 10, 4).unwrap();
        assert_ne!(a.digest(), c.digest());
        for ev in &a.events {
            let FaultKind::BitFlip { bit, rank, .. } = ev.kind else { panic!() };
            assert!((52..=63).contains(&bit) && rank < 4);
        }
    }

    #[test]
    fn stratified_one_per_window() {
        let spec = GeneratorSpec::RandomCampaign(RandomCampaign {
            rate: 0.1,
            horizon: 100.0,
            start: 0.0,
            arrivals: Arrivals::Stratified,
            mix: KindMix::default(),
            bits: BitRange::default(),
            ranks: Some(vec![2]),
            max_events: None,
        });
        let plan = build_plan(&spec, 4, 4).unwrap();
        assert_eq!(plan.len(), 10);
        for (k, ev) in plan.events.iter().enumerate() {
            let t = ev.time.as_units();
            assert!(t >= 10.0 * k as f64 && t < 10.0 * (k + 1) as f64);
        }
    }

    #[test]
    fn rejects_out_of_range_targets() {
        let spec = GeneratorSpec::Explicit {
            events: vec![FaultEvent {
                time: SimTime::ZERO,
                kind: FaultKind::RankKill { rank: 4 },
            }],
        };
        assert!(build_plan(&spec, 0, 4).is_err());
    }
}
