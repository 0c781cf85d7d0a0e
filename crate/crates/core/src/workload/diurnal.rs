//! Regionally phase-shifted diurnal arrivals.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::LengthDist;
use crate::error::{Error, Result};
use crate::types::Ms;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiurnalRegion {
    pub name: String,
    /// Mean arrivals per simulated hour.
    pub base_rate: f64,
    /// Relative swing in [0, 1).
    pub amplitude: f64,
    /// Hour of day at which the region peaks.
    pub phase_hours: f64,
}

impl DiurnalRegion {
    /// Arrival rate per hour at hour-of-day `h`.
    pub fn rate_at(&self, h: f64) -> f64 {
        self.base_rate * (1.0 + self.amplitude * (2.0 * PI * (h - self.phase_hours) / 24.0).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiurnalSpec {
    pub regions: Vec<DiurnalRegion>,
    #[serde(default = "day")]
    pub hours: f64,
    /// Simulated milliseconds per modeled hour.
    pub ms_per_hour: Ms,
}

fn day() -> f64 {
    24.0
}

impl DiurnalSpec {
    pub fn validate(&self, path: &str) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::validation(format!("{path}.regions"), "at least one region"));
        }
        for (i, r) in self.regions.iter().enumerate() {
            if !(r.base_rate.is_finite() && r.base_rate >= 0.0) {
                return Err(Error::validation(
                    format!("{path}.regions[{i}].base_rate"),
                    "must be non-negative",
                ));
            }
            if !(0.0..1.0).contains(&r.amplitude) {
                return Err(Error::validation(
                    format!("{path}.regions[{i}].amplitude"),
                    "must be in [0, 1)",
                ));
            }
        }
        if !(self.hours.is_finite() && self.hours > 0.0) {
            return Err(Error::validation(format!("{path}.hours"), "must be positive"));
        }
        if self.ms_per_hour == 0 {
            return Err(Error::validation(format!("{path}.ms_per_hour"), "must be positive"));
        }
        Ok(())
    }

    pub fn horizon_ms(&self) -> Ms {
        (self.hours * self.ms_per_hour as f64).round() as Ms
    }

    /// Expected per-hour rate of each region, sampled at hour midpoints.
    pub fn expected_hourly(&self) -> BTreeMap<String, Vec<f64>> {
        let n = self.hours.ceil() as usize;
        self.regions
            .iter()
            .map(|r| (r.name.clone(), (0..n).map(|h| r.rate_at(h as f64 + 0.5)).collect()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arrival {
    pub region: String,
    pub at_ms: Ms,
}

/// Non-homogeneous Poisson arrivals by thinning, merged across regions in
/// time order (ties by position in `regions`).
pub fn gen_diurnal(spec: &DiurnalSpec, seed: u64) -> Vec<Arrival> {
    let end = spec.hours * spec.ms_per_hour as f64;
    let mut out: Vec<(Ms, usize)> = Vec::new();
    for (ri, r) in spec.regions.iter().enumerate() {
        let peak = r.base_rate * (1.0 + r.amplitude) / spec.ms_per_hour as f64;
        if peak <= 0.0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(ri as u64));
        let gap = Exp::new(peak).expect("positive rate");
        let mut t = 0.0;
        loop {
            t += gap.sample(&mut rng);
            if t >= end {
                break;
            }
            let h = t / spec.ms_per_hour as f64;
            let accept = r.rate_at(h) / spec.ms_per_hour as f64 / peak;
            if rng.random::<f64>() < accept {
                out.push((t.floor() as Ms, ri));
            }
        }
    }
    out.sort();
    out.into_iter()
        .map(|(at_ms, ri)| Arrival {
            region: spec.regions[ri].name.clone(),
            at_ms,
        })
        .collect()
}

/// Arrival counts per region per hour bucket.
pub fn hourly_counts(spec: &DiurnalSpec, arrivals: &[Arrival]) -> BTreeMap<String, Vec<f64>> {
    let n = spec.hours.ceil() as usize;
    let mut out: BTreeMap<String, Vec<f64>> = spec.regions.iter().map(|r| (r.name.clone(), vec![0.0; n])).collect();
    for a in arrivals {
        let h = ((a.at_ms / spec.ms_per_hour) as usize).min(n - 1);
        if let Some(v) = out.get_mut(&a.region) {
            v[h] += 1.0;
        }
    }
    out
}

/// Max over min of a series; infinite when the minimum is zero.
pub fn peak_to_trough(series: &[f64]) -> f64 {
    let max = series.iter().copied().fold(f64::MIN, f64::max);
    let min = series.iter().copied().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Open-loop single-shot requests following a diurnal schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiurnalWorkload {
    pub schedule: DiurnalSpec,
    pub prompt: LengthDist,
    pub output: LengthDist,
    #[serde(default)]
    pub system_prefix_len: u32,
    /// Distinct session keys per region.
    #[serde(default = "sessions")]
    pub sessions: u32,
}

fn sessions() -> u32 {
    100
}

impl DiurnalWorkload {
    pub fn validate(&self, path: &str) -> Result<()> {
        self.schedule.validate(&format!("{path}.schedule"))?;
        self.prompt.validate(&format!("{path}.prompt"))?;
        self.output.validate(&format!("{path}.output"))?;
        if self.prompt.min == 0 && self.system_prefix_len == 0 {
            return Err(Error::validation(
                format!("{path}.prompt.min"),
                "prompts could be empty",
            ));
        }
        if self.sessions == 0 {
            return Err(Error::validation(format!("{path}.sessions"), "must be at least 1"));
        }
        Ok(())
    }

    pub fn max_footprint(&self) -> u64 {
        self.system_prefix_len as u64 + self.prompt.max as u64 + self.output.max as u64
    }
}
