//! Scenario files (TOML). The full schema is documented in `SCENARIO.md`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::latency::{LatencyMatrix, LatencySpec};
use crate::balancer::{DEFAULT_PROBE_INTERVAL_MS, DEFAULT_QUEUE_BUFFER};
use crate::error::{Error, Result};
use crate::policy::{PolicyKind, DEFAULT_FALLBACK_THRESHOLD};
use crate::replica::ReplicaConfig;
use crate::ring::DEFAULT_VNODES;
use crate::trie::DEFAULT_MAX_SIZE;
use crate::types::Ms;
use crate::workload::{ConversationSpec, DiurnalWorkload, TreeSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default = "one")]
    pub seed: u64,
    pub horizon_ms: Ms,
    #[serde(default = "default_policy")]
    pub policy: String,
    #[serde(default = "yes")]
    pub cross_region: bool,
    pub regions: Vec<RegionSpec>,
    #[serde(default)]
    pub latency: LatencySpec,
    #[serde(default)]
    pub balancer: BalancerSettings,
    /// Explicit balancer placement; default is one per region with replicas.
    #[serde(default)]
    pub balancers: Option<Vec<BalancerSpec>>,
    #[serde(default)]
    pub replica: ReplicaConfig,
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub failures: Vec<FailureSpec>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub variants: Vec<Variant>,
}

fn one() -> u64 {
    1
}
fn yes() -> bool {
    true
}
fn default_policy() -> String {
    "prefix:sp-p".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub name: String,
    #[serde(default)]
    pub replicas: u32,
    #[serde(default)]
    pub clients: u32,
    /// Replaces the scenario workload for this region's clients.
    #[serde(default)]
    pub workload: Option<WorkloadSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalancerSettings {
    #[serde(default = "probe_interval")]
    pub probe_interval_ms: Ms,
    #[serde(default = "queue_buffer")]
    pub queue_buffer: u64,
    #[serde(default = "trie_size")]
    pub trie_max_size: usize,
    #[serde(default)]
    pub snapshot_trie_max_size: Option<usize>,
    #[serde(default = "vnodes")]
    pub vnodes: u32,
    #[serde(default = "fallback")]
    pub fallback_threshold: f64,
    /// Grants per replica or peer between probes under SP-P; 0 is unlimited.
    #[serde(default)]
    pub dispatch_allowance: u32,
}

fn probe_interval() -> Ms {
    DEFAULT_PROBE_INTERVAL_MS
}
fn queue_buffer() -> u64 {
    DEFAULT_QUEUE_BUFFER
}
fn trie_size() -> usize {
    DEFAULT_MAX_SIZE
}
fn vnodes() -> u32 {
    DEFAULT_VNODES
}
fn fallback() -> f64 {
    DEFAULT_FALLBACK_THRESHOLD
}

impl Default for BalancerSettings {
    fn default() -> Self {
        Self {
            probe_interval_ms: probe_interval(),
            queue_buffer: queue_buffer(),
            trie_max_size: trie_size(),
            snapshot_trie_max_size: None,
            vnodes: vnodes(),
            fallback_threshold: fallback(),
            dispatch_allowance: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalancerSpec {
    pub region: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureSpec {
    pub balancer: u32,
    pub at_ms: Ms,
    pub recover_at_ms: Option<Ms>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadSpec {
    Conversation(ConversationSpec),
    Tree(TreeSpec),
    Diurnal(DiurnalWorkload),
    Trace(TraceSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSource {
    /// Relative paths resolve against the scenario file's directory.
    pub path: PathBuf,
}

impl WorkloadSpec {
    pub fn is_closed_loop(&self) -> bool {
        matches!(self, WorkloadSpec::Conversation(_) | WorkloadSpec::Tree(_))
    }

    fn validate(&self, path: &str, budget: u64) -> Result<()> {
        let footprint = match self {
            WorkloadSpec::Conversation(c) => {
                c.validate(path)?;
                c.max_footprint() as u64
            }
            WorkloadSpec::Tree(t) => {
                t.validate(path)?;
                t.max_footprint()
            }
            WorkloadSpec::Diurnal(d) => {
                d.validate(path)?;
                d.max_footprint()
            }
            WorkloadSpec::Trace(_) => 0,
        };
        if footprint > budget {
            return Err(Error::validation(
                path,
                format!("requests may need {footprint} tokens but replicas hold {budget}"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Default output directory; `--out` overrides it.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "formats")]
    pub formats: Vec<ReportFormat>,
    #[serde(default = "yes")]
    pub write_log: bool,
}

fn formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Json, ReportFormat::Csv]
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: None,
            formats: formats(),
            write_log: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

/// A named set of dotted-path overrides run alongside the base scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    pub set: toml::Table,
}

impl Scenario {
    /// Strict parse: unknown fields are rejected and errors name the field path.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let value: toml::Value = toml::from_str(s).map_err(|e| Error::validation("<file>", e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: toml::Value) -> Result<Self> {
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::validation(path, e.into_inner().to_string())
        })
    }

    pub fn region_names(&self) -> Vec<String> {
        self.regions.iter().map(|r| r.name.clone()).collect()
    }

    pub fn policy_kind(&self) -> Result<PolicyKind> {
        self.policy.parse()
    }

    /// Balancer regions after applying the default placement.
    pub fn balancer_regions(&self) -> Vec<String> {
        match &self.balancers {
            Some(b) => b.iter().map(|b| b.region.clone()).collect(),
            None => self
                .regions
                .iter()
                .filter(|r| r.replicas > 0)
                .map(|r| r.name.clone())
                .collect(),
        }
    }

    pub fn latency_matrix(&self) -> Result<LatencyMatrix> {
        LatencyMatrix::build(&self.region_names(), &self.latency)
    }

    /// Semantic checks beyond the schema.
    pub fn validate(&self) -> Result<()> {
        if self.horizon_ms == 0 {
            return Err(Error::validation("horizon_ms", "must be positive"));
        }
        if self.regions.is_empty() {
            return Err(Error::validation("regions", "at least one region"));
        }
        let mut seen = BTreeSet::new();
        for (i, r) in self.regions.iter().enumerate() {
            if r.name.is_empty() || !seen.insert(r.name.as_str()) {
                return Err(Error::validation(
                    format!("regions[{i}].name"),
                    "empty or duplicate region name",
                ));
            }
        }
        if self.regions.iter().map(|r| r.replicas as u64).sum::<u64>() == 0 {
            return Err(Error::validation("regions", "unschedulable: no replicas"));
        }
        self.policy_kind()?;
        self.latency_matrix()?;
        let lbs = self.balancer_regions();
        if lbs.is_empty() {
            return Err(Error::validation("balancers", "at least one balancer"));
        }
        for (i, b) in lbs.iter().enumerate() {
            if !seen.contains(b.as_str()) {
                return Err(Error::validation(
                    format!("balancers[{i}].region"),
                    format!("unknown region `{b}`"),
                ));
            }
        }
        let bs = &self.balancer;
        if bs.probe_interval_ms == 0 {
            return Err(Error::validation("balancer.probe_interval_ms", "must be positive"));
        }
        if bs.vnodes == 0 {
            return Err(Error::validation("balancer.vnodes", "must be positive"));
        }
        if !(0.0..=1.0).contains(&bs.fallback_threshold) {
            return Err(Error::validation("balancer.fallback_threshold", "must be in [0, 1]"));
        }
        if bs.trie_max_size == 0 || bs.snapshot_trie_max_size == Some(0) {
            return Err(Error::validation("balancer.trie_max_size", "must be positive"));
        }
        let rc = &self.replica;
        if rc.kv_budget_tokens == 0 {
            return Err(Error::validation("replica.kv_budget_tokens", "must be positive"));
        }
        if !(rc.prefill_ms_per_token.is_finite() && rc.prefill_ms_per_token >= 0.0) {
            return Err(Error::validation(
                "replica.prefill_ms_per_token",
                "must be non-negative",
            ));
        }
        if !(rc.decode_base_ms.is_finite() && rc.decode_base_ms >= 0.0) {
            return Err(Error::validation("replica.decode_base_ms", "must be non-negative"));
        }
        if !(rc.decode_ms_per_seq.is_finite() && rc.decode_ms_per_seq >= 0.0) {
            return Err(Error::validation("replica.decode_ms_per_seq", "must be non-negative"));
        }
        self.workload.validate("workload", rc.kv_budget_tokens)?;
        for (i, r) in self.regions.iter().enumerate() {
            if let Some(w) = &r.workload {
                if !w.is_closed_loop() {
                    return Err(Error::validation(
                        format!("regions[{i}].workload"),
                        "per-region overrides must be closed-loop workloads",
                    ));
                }
                w.validate(&format!("regions[{i}].workload"), rc.kv_budget_tokens)?;
            }
        }
        if let WorkloadSpec::Diurnal(d) = &self.workload {
            for (i, r) in d.schedule.regions.iter().enumerate() {
                if !seen.contains(r.name.as_str()) {
                    return Err(Error::validation(
                        format!("workload.schedule.regions[{i}].name"),
                        format!("unknown region `{}`", r.name),
                    ));
                }
            }
        }
        for (i, f) in self.failures.iter().enumerate() {
            if f.balancer as usize >= lbs.len() {
                return Err(Error::validation(
                    format!("failures[{i}].balancer"),
                    format!("unknown balancer id {}", f.balancer),
                ));
            }
            if f.recover_at_ms.is_some_and(|r| r <= f.at_ms) {
                return Err(Error::validation(
                    format!("failures[{i}].recover_at_ms"),
                    "must be after at_ms",
                ));
            }
        }
        for (i, v) in self.variants.iter().enumerate() {
            if v.name.is_empty() {
                return Err(Error::validation(format!("variants[{i}].name"), "must be non-empty"));
            }
        }
        Ok(())
    }

    /// Resolves a trace path against the scenario's directory.
    pub fn resolve_path(base: Option<&Path>, p: &Path) -> PathBuf {
        match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.to_path_buf(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"
horizon_ms = 1000
[[regions]]
name = "us"
replicas = 1
clients = 1
[workload]
kind = "tree"
branching = 2
depth = 2
system_prefix_len = 4
question = { median = 10.0, min = 5, max = 20 }
output = { median = 10.0, min = 5, max = 20 }
branch_tokens = 2
think_ms = 0
"#;

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let s = Scenario::from_toml_str(MIN).unwrap();
        s.validate().unwrap();
        assert_eq!(s.policy, "prefix:sp-p");
        assert_eq!(s.balancer.probe_interval_ms, 50);
        assert_eq!(s.balancer_regions(), vec!["us"]);
    }

    fn err_path(src: &str) -> String {
        let r = Scenario::from_toml_str(src).and_then(|s| s.validate());
        match r {
            Err(Error::Validation { path, .. }) => path,
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected_with_paths() {
        assert_eq!(err_path(&format!("bogus = 1\n{MIN}")), "bogus");
        let s = MIN.replace("replicas = 1", "replicas = 1\nspeed = 3");
        assert_eq!(err_path(&s), "regions[0].speed");
        let s = MIN.replace("branch_tokens = 2", "branch_tokens = 2\nwidth = 3");
        assert!(err_path(&s).starts_with("workload"));
    }

    #[test]
    fn semantic_errors() {
        assert_eq!(err_path(&MIN.replace("replicas = 1", "replicas = 0")), "regions");
        assert_eq!(
            err_path(&format!("{MIN}\n[[failures]]\nbalancer = 3\nat_ms = 5")),
            "failures[0].balancer"
        );
        assert_eq!(
            err_path(&format!(
                "{MIN}\n[[failures]]\nbalancer = 0\nat_ms = 5\nrecover_at_ms = 5"
            )),
            "failures[0].recover_at_ms"
        );
        assert_eq!(
            err_path(&MIN.replace("horizon_ms = 1000", "horizon_ms = 1000\npolicy = \"zz\"")),
            "policy"
        );
        assert_eq!(err_path(&MIN.replace("depth = 2", "depth = 2000")), "workload.depth");
        let two = MIN.replace("[workload]", "[[regions]]\nname = \"mars\"\nreplicas = 1\n[workload]");
        assert_eq!(err_path(&two), "latency.links");
    }

    #[test]
    fn workload_too_large_for_budget() {
        let s = format!("{MIN}\n[replica]\nkv_budget_tokens = 10");
        assert_eq!(err_path(&s), "workload");
    }
}
