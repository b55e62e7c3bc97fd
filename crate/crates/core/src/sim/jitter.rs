use rand::Rng;
use rand_distr::{Distribution, LogNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JitterDistribution {
    #[default]
    None,
    Uniform {
        lo: f64,
        hi: f64,
    },
    Lognormal {
        mu: f64,
        sigma: f64,
    },
}

/// Latency model for global collectives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterModel {
    #[serde(default = "default_base_latency")]
    pub base_latency: f64,
    #[serde(default)]
    pub distribution: JitterDistribution,
}

fn default_base_latency() -> f64 {
    1.0
}

impl Default for JitterModel {
    fn default() -> Self {
        JitterModel {
            base_latency: default_base_latency(),
            distribution: JitterDistribution::None,
        }
    }
}

impl JitterModel {
    pub fn none(base_latency: f64) -> Self {
        JitterModel {
            base_latency,
            distribution: JitterDistribution::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_latency >= 0.0) || !self.base_latency.is_finite() {
            return Err(Error::config(format!(
                "base_latency must be finite and >= 0, got {}",
                self.base_latency
            )));
        }
        match self.distribution {
            JitterDistribution::None => Ok(()),
            JitterDistribution::Uniform { lo, hi } => {
                if lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi {
                    Ok(())
                } else {
                    Err(Error::config(format!("uniform jitter needs 0 <= lo <= hi, got ({lo}, {hi})")))
                }
            }
            JitterDistribution::Lognormal { mu, sigma } => {
                if mu.is_finite() && sigma.is_finite() && sigma >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::config(format!("lognormal jitter needs finite mu and sigma >= 0, got ({mu}, {sigma})")))
                }
            }
        }
    }

    pub(crate) fn sampler(&self) -> Sampler {
        match self.distribution {
            JitterDistribution::None => Sampler::Zero,
            JitterDistribution::Uniform { lo, hi } => {
                Sampler::Uniform(Uniform::new_inclusive(lo, hi).expect("validated uniform bounds"))
            }
            JitterDistribution::Lognormal { mu, sigma } => {
                Sampler::Lognormal(LogNormal::new(mu, sigma).expect("validated lognormal"))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Sampler {
    Zero,
    Uniform(Uniform<f64>),
    Lognormal(LogNormal<f64>),
}

impl Sampler {
    pub(crate) fn draw<R: Rng>(&self, rng: &mut R) -> SimTime {
        match self {
            Sampler::Zero => SimTime::ZERO,
            Sampler::Uniform(u) => SimTime::from_units_clamped(u.sample(rng)),
            Sampler::Lognormal(l) => SimTime::from_units_clamped(l.sample(rng)),
        }
    }

    pub(crate) fn is_zero(&self) -> bool {
        matches!(self, Sampler::Zero)
    }
}

/// Costs charged to the simulated clock by kernels and messages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    /// Time per floating-point operation on the busiest rank.
    #[serde(default = "default_flop_time")]
    pub flop_time: f64,
    /// Point-to-point latency per message.
    #[serde(default = "default_message_latency")]
    pub message_latency: f64,
    #[serde(default)]
    pub byte_time: f64,
    /// Local cost of posting a collective.
    #[serde(default)]
    pub collective_issue: f64,
}

fn default_flop_time() -> f64 {
    1e-3
}

fn default_message_latency() -> f64 {
    0.5
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            flop_time: default_flop_time(),
            message_latency: default_message_latency(),
            byte_time: 0.0,
            collective_issue: 0.0,
        }
    }
}

impl CostModel {
    pub fn free() -> Self {
        CostModel {
            flop_time: 0.0,
            message_latency: 0.0,
            byte_time: 0.0,
            collective_issue: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("flop_time", self.flop_time),
            ("message_latency", self.message_latency),
            ("byte_time", self.byte_time),
            ("collective_issue", self.collective_issue),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}
