//! Replica provisioning cost under three strategies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simnet::{LogEvent, LogRecord};
use crate::types::Ms;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    /// Currency per replica-hour with a reservation.
    pub reserved_rate: f64,
    /// Currency per replica-hour on demand.
    pub on_demand_rate: f64,
    /// Demand units one replica sustains.
    pub replica_capacity: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            reserved_rate: 37.56,
            on_demand_rate: 98.32,
            replica_capacity: 1.0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.replica_capacity.is_finite() && self.replica_capacity > 0.0) {
            return Err(Error::validation("replica_capacity", "must be positive"));
        }
        if !(self.reserved_rate.is_finite() && self.reserved_rate >= 0.0) {
            return Err(Error::validation("reserved_rate", "must be non-negative"));
        }
        if !(self.on_demand_rate.is_finite() && self.on_demand_rate > self.reserved_rate) {
            return Err(Error::validation("on_demand_rate", "must exceed reserved_rate"));
        }
        Ok(())
    }
}

/// Per-region demand, one value per time slot, all series equally long.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandSeries {
    pub slot_hours: f64,
    pub regions: BTreeMap<String, Vec<f64>>,
}

impl DemandSeries {
    fn validate(&self) -> Result<usize> {
        let n = self.regions.values().next().map_or(0, Vec::len);
        if n == 0 {
            return Err(Error::Domain("empty demand series".into()));
        }
        if !(self.slot_hours.is_finite() && self.slot_hours > 0.0) {
            return Err(Error::Domain("slot length must be positive".into()));
        }
        for (r, s) in &self.regions {
            if s.len() != n {
                return Err(Error::Domain(format!(
                    "series for {r} has {} slots, expected {n}",
                    s.len()
                )));
            }
            if s.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Domain(format!(
                    "series for {r} has a negative or non-finite value"
                )));
            }
        }
        Ok(n)
    }

    pub fn total(&self) -> Vec<f64> {
        let n = self.regions.values().next().map_or(0, Vec::len);
        (0..n).map(|t| self.regions.values().map(|s| s[t]).sum()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProvisioningStrategy {
    /// Each region reserves for its own peak.
    PerRegionPeak,
    /// One pool reserved for the peak of the summed demand.
    GlobalPeak,
    /// Exactly the replicas needed in every slot, at on-demand prices.
    PerfectOnDemand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvisioningResult {
    pub strategy: ProvisioningStrategy,
    pub cost: f64,
    /// Peak number of replicas held at once.
    pub replicas: u64,
    pub replica_hours: f64,
}

fn need(demand: f64, cap: f64) -> u64 {
    (demand / cap - 1e-9).ceil().max(0.0) as u64
}

pub fn provisioning_cost(
    demand: &DemandSeries,
    strategy: ProvisioningStrategy,
    model: &CostModel,
) -> Result<ProvisioningResult> {
    model.validate()?;
    let n = demand.validate()?;
    let cap = model.replica_capacity;
    let span = n as f64 * demand.slot_hours;
    let (replicas, replica_hours, rate) = match strategy {
        ProvisioningStrategy::PerRegionPeak => {
            let r: u64 = demand
                .regions
                .values()
                .map(|s| need(s.iter().copied().fold(0.0, f64::max), cap))
                .sum();
            (r, r as f64 * span, model.reserved_rate)
        }
        ProvisioningStrategy::GlobalPeak => {
            let r = need(demand.total().into_iter().fold(0.0, f64::max), cap);
            (r, r as f64 * span, model.reserved_rate)
        }
        ProvisioningStrategy::PerfectOnDemand => {
            let per_slot: Vec<u64> = demand.total().into_iter().map(|d| need(d, cap)).collect();
            let hours = per_slot.iter().sum::<u64>() as f64 * demand.slot_hours;
            (per_slot.into_iter().max().unwrap_or(0), hours, model.on_demand_rate)
        }
    };
    Ok(ProvisioningResult {
        strategy,
        cost: replica_hours * rate,
        replicas,
        replica_hours,
    })
}

/// Issued requests per region per slot, as requests per second of simulated time.
pub fn demand_from_log(log: &[LogRecord], slot_ms: Ms, ms_per_hour: Ms) -> Result<DemandSeries> {
    if slot_ms == 0 || ms_per_hour == 0 {
        return Err(Error::Domain("slot length must be positive".into()));
    }
    let end = log
        .iter()
        .map(|r| r.ts)
        .max()
        .ok_or_else(|| Error::Domain("empty log".into()))?;
    let n = (end / slot_ms + 1) as usize;
    let mut regions: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    if let Some(LogRecord {
        event: LogEvent::Meta { replica_regions, .. },
        ..
    }) = log.first()
    {
        for r in replica_regions {
            regions.entry(r.clone()).or_insert_with(|| vec![0.0; n]);
        }
    }
    let per_sec = 1000.0 / slot_ms as f64;
    for rec in log {
        if let LogEvent::Issue { region, .. } = &rec.event {
            let s = regions.entry(region.clone()).or_insert_with(|| vec![0.0; n]);
            s[(rec.ts / slot_ms) as usize] += per_sec;
        }
    }
    Ok(DemandSeries {
        slot_hours: slot_ms as f64 / ms_per_hour as f64,
        regions,
    })
}
