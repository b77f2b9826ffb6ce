//! Seeded arrival plans for normal and faulty scenarios.
//!
//! Plans are generated ahead of time so a cached problem can replay the exact
//! workload. The generator is `rand_chacha::ChaCha8Rng` seeded
//! through `SeedableRng::seed_from_u64`, so a plan is a pure function of its
//! spec and stable across platforms.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::Millis;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("workload mix is empty")]
    EmptyMix,
    #[error("workload mix weight for {0:?} is negative or not finite")]
    BadWeight(String),
    #[error("workload scale must be finite and >= 0, got {0}")]
    BadScale(f64),
    #[error("workload rate must be finite and >= 0")]
    BadRate,
    #[error("workload period must be > 0")]
    BadPeriod,
}

/// Arrival process. Rates are requests per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum ArrivalPattern {
    /// Evenly spaced arrivals.
    Constant { rate: f64 },
    /// Poisson process: i.i.d. exponential gaps with mean `1 / rate`.
    Exponential { rate: f64 },
    /// `on_rate` during the first half of every period, `off_rate` during the
    /// second half.
    Bursty {
        on_rate: f64,
        off_rate: f64,
        period_ms: Millis,
    },
    /// Sinusoidal daily cycle: `max(0, base + amplitude * sin(2πt / period))`.
    Diurnal {
        base: f64,
        amplitude: f64,
        period_ms: Millis,
    },
}

impl ArrivalPattern {
    fn peak_rate(&self) -> f64 {
        match *self {
            ArrivalPattern::Constant { rate } | ArrivalPattern::Exponential { rate } => rate,
            ArrivalPattern::Bursty {
                on_rate, off_rate, ..
            } => on_rate.max(off_rate),
            ArrivalPattern::Diurnal {
                base, amplitude, ..
            } => base + amplitude.abs(),
        }
    }

    /// Instantaneous rate at `t_ms`.
    fn rate_at(&self, t_ms: f64) -> f64 {
        match *self {
            ArrivalPattern::Constant { rate } | ArrivalPattern::Exponential { rate } => rate,
            ArrivalPattern::Bursty {
                on_rate,
                off_rate,
                period_ms,
            } => {
                let period = period_ms as f64;
                if t_ms.rem_euclid(period) < period / 2.0 {
                    on_rate
                } else {
                    off_rate
                }
            }
            ArrivalPattern::Diurnal {
                base,
                amplitude,
                period_ms,
            } => {
                let phase = std::f64::consts::TAU * t_ms / period_ms as f64;
                (base + amplitude * phase.sin()).max(0.0)
            }
        }
    }
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct WorkloadSpec {
    pub pattern: ArrivalPattern,
    pub duration_ms: Millis,
    /// Entrypoint -> relative weight.
    pub mix: BTreeMap<String, f64>,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !self.scale.is_finite() || self.scale < 0.0 {
            return Err(WorkloadError::BadScale(self.scale));
        }
        let rates_ok = match self.pattern {
            ArrivalPattern::Constant { rate } | ArrivalPattern::Exponential { rate } => {
                rate.is_finite() && rate >= 0.0
            }
            ArrivalPattern::Bursty {
                on_rate,
                off_rate,
                period_ms,
            } => {
                if period_ms == 0 {
                    return Err(WorkloadError::BadPeriod);
                }
                on_rate.is_finite() && off_rate.is_finite() && on_rate >= 0.0 && off_rate >= 0.0
            }
            ArrivalPattern::Diurnal {
                base,
                amplitude,
                period_ms,
            } => {
                if period_ms == 0 {
                    return Err(WorkloadError::BadPeriod);
                }
                base.is_finite() && amplitude.is_finite() && base >= 0.0
            }
        };
        if !rates_ok {
            return Err(WorkloadError::BadRate);
        }
        for (name, w) in &self.mix {
            if !w.is_finite() || *w < 0.0 {
                return Err(WorkloadError::BadWeight(name.clone()));
            }
        }
        let active = self.duration_ms > 0 && self.pattern.peak_rate() * self.scale > 0.0;
        if active && self.mix.values().sum::<f64>() <= 0.0 {
            return Err(WorkloadError::EmptyMix);
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        WorkloadSpec {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Arrival {
    pub at_ms: Millis,
    pub entrypoint: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadPlan {
    pub arrivals: Vec<Arrival>,
}

impl WorkloadPlan {
    pub fn len(&self) -> usize {
        self.arrivals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }

    /// The same plan moved `offset` ms later.
    pub fn shifted(mut self, offset: Millis) -> Self {
        for a in &mut self.arrivals {
            a.at_ms += offset;
        }
        self
    }
}

/// Inverse-CDF choice over the normalized weights, entries in lexicographic
/// order. Zero-weight entries are never chosen.
pub fn sample_entry(mix: &BTreeMap<String, f64>, u: f64) -> Result<&str, WorkloadError> {
    let total: f64 = mix.values().filter(|w| **w > 0.0).sum();
    if mix.is_empty() || total <= 0.0 {
        return Err(WorkloadError::EmptyMix);
    }
    let target = u.clamp(0.0, 1.0) * total;
    let mut cumulative = 0.0;
    let mut last = None;
    for (name, &w) in mix {
        if w <= 0.0 {
            continue;
        }
        cumulative += w;
        last = Some(name.as_str());
        if target < cumulative {
            return Ok(name);
        }
    }
    // u == 1.0 or rounding at the top edge.
    last.ok_or(WorkloadError::EmptyMix)
}

/// Generates the arrival plan. Degenerate specs (zero rate, zero duration,
/// zero scale, no positive weight) give an empty plan.
pub fn generate_plan(spec: &WorkloadSpec) -> WorkloadPlan {
    let peak = spec.pattern.peak_rate() * spec.scale;
    let total_weight: f64 = spec.mix.values().filter(|w| **w > 0.0).sum();
    if spec.duration_ms == 0 || !peak.is_finite() || peak <= 0.0 || total_weight <= 0.0 {
        return WorkloadPlan::default();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let duration = spec.duration_ms as f64;
    let mut arrivals = Vec::new();
    let mut t_ms = 0.0_f64;
    let mut push = |t_ms: f64, rng: &mut ChaCha8Rng| {
        let u: f64 = rng.random();
        let entry = sample_entry(&spec.mix, u).expect("mix has positive weight");
        arrivals.push(Arrival {
            at_ms: t_ms.floor() as Millis,
            entrypoint: entry.to_string(),
        });
    };
    match spec.pattern {
        ArrivalPattern::Constant { .. } => {
            let gap = 1000.0 / peak;
            let mut k = 0u64;
            loop {
                let t = k as f64 * gap;
                if t >= duration {
                    break;
                }
                push(t, &mut rng);
                k += 1;
            }
        }
        ArrivalPattern::Exponential { .. } => loop {
            t_ms += exponential_gap_ms(&mut rng, peak);
            if t_ms >= duration {
                break;
            }
            push(t_ms, &mut rng);
        },
        ArrivalPattern::Bursty { .. } | ArrivalPattern::Diurnal { .. } => {
            // Thinning of a homogeneous process at the peak rate.
            loop {
                t_ms += exponential_gap_ms(&mut rng, peak);
                if t_ms >= duration {
                    break;
                }
                let keep: f64 = rng.random();
                if keep * peak < spec.pattern.rate_at(t_ms) * spec.scale {
                    push(t_ms, &mut rng);
                }
            }
        }
    }
    WorkloadPlan { arrivals }
}

fn exponential_gap_ms(rng: &mut ChaCha8Rng, rate_per_s: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate_per_s * 1000.0
}
