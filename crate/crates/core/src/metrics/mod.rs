//! Run summaries computed from event logs, and provisioning cost analysis.

mod cost;
mod summary;

pub use cost::{demand_from_log, provisioning_cost, CostModel, DemandSeries, ProvisioningResult, ProvisioningStrategy};
pub use summary::{nearest_rank, peak_outstanding, summarize, LatencyStats, RunSummary, CSV_HEADER, SCHEMA_VERSION};
