use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simnet::{LogEvent, LogRecord};
use crate::types::Ms;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub p50: f64,
    pub p90: f64,
    pub mean: f64,
}

impl LatencyStats {
    pub fn from_values(values: &mut [Ms]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        values.sort_unstable();
        Self {
            p50: nearest_rank(values, 50.0) as f64,
            p90: nearest_rank(values, 90.0) as f64,
            mean: values.iter().sum::<u64>() as f64 / values.len() as f64,
        }
    }
}

/// Nearest-rank percentile of sorted, non-empty `values`.
pub fn nearest_rank(sorted: &[Ms], p: f64) -> Ms {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub policy: String,
    pub cross_region: bool,
    pub duration_ms: Ms,
    pub issued: u64,
    pub completed: u64,
    /// Issued but not complete when the run ended; excluded from latency stats.
    pub in_flight_at_end: u64,
    pub throughput_rps: f64,
    pub output_tokens_per_s: f64,
    pub ttft_ms: LatencyStats,
    pub e2e_ms: LatencyStats,
    /// Cached prompt tokens over all prompt tokens, across every admission.
    pub kv_hit_rate: f64,
    /// Largest per-replica peak outstanding count over the smallest (at least 1).
    pub outstanding_variance: f64,
    /// Share of served requests whose replica is outside their origin region.
    pub forward_fraction: f64,
    pub forwards: u64,
}

pub const CSV_HEADER: [&str; 19] = [
    "schema_version",
    "policy",
    "cross_region",
    "duration_ms",
    "issued",
    "completed",
    "in_flight_at_end",
    "throughput_rps",
    "output_tokens_per_s",
    "ttft_p50_ms",
    "ttft_p90_ms",
    "ttft_mean_ms",
    "e2e_p50_ms",
    "e2e_p90_ms",
    "e2e_mean_ms",
    "kv_hit_rate",
    "outstanding_variance",
    "forward_fraction",
    "forwards",
];

impl RunSummary {
    pub fn csv_record(&self) -> Vec<String> {
        let f = |x: f64| format!("{x:.6}");
        vec![
            self.schema_version.to_string(),
            self.policy.clone(),
            self.cross_region.to_string(),
            self.duration_ms.to_string(),
            self.issued.to_string(),
            self.completed.to_string(),
            self.in_flight_at_end.to_string(),
            f(self.throughput_rps),
            f(self.output_tokens_per_s),
            f(self.ttft_ms.p50),
            f(self.ttft_ms.p90),
            f(self.ttft_ms.mean),
            f(self.e2e_ms.p50),
            f(self.e2e_ms.p90),
            f(self.e2e_ms.mean),
            f(self.kv_hit_rate),
            f(self.outstanding_variance),
            f(self.forward_fraction),
            self.forwards.to_string(),
        ]
    }

    /// Header plus one row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        w.write_record(self.csv_record())?;
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
    }
}

#[derive(Default)]
struct ReqState {
    issued: Ms,
    region: String,
    output_len: u32,
    first: Option<Ms>,
    done: Option<Ms>,
}

/// Aggregates a complete event log.
pub fn summarize(log: &[LogRecord]) -> Result<RunSummary> {
    let bad = |index: usize, message: String| Error::MalformedLog { index, message };
    let (policy, cross_region, replica_regions) = match log.first().map(|r| &r.event) {
        Some(LogEvent::Meta {
            policy,
            cross_region,
            replica_regions,
            ..
        }) => (policy.clone(), *cross_region, replica_regions.clone()),
        _ => return Err(bad(0, "log must start with a meta record".into())),
    };
    let mut reqs: HashMap<&str, ReqState> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    let mut cached = 0u64;
    let mut prompt = 0u64;
    let mut outstanding = vec![0i64; replica_regions.len()];
    let mut peak = vec![0i64; replica_regions.len()];
    let mut pending: HashSet<&str> = HashSet::new();
    let mut served_remote = 0u64;
    let mut served = 0u64;
    let mut forwards = 0u64;
    let mut end = None;

    for (i, rec) in log.iter().enumerate().skip(1) {
        let replica_ok = |r: u32| {
            if (r as usize) < replica_regions.len() {
                Ok(r as usize)
            } else {
                Err(bad(i, format!("unknown replica {r}")))
            }
        };
        match &rec.event {
            LogEvent::Meta { .. } => return Err(bad(i, "duplicate meta record".into())),
            LogEvent::Issue {
                request_id,
                region,
                output_len,
                ..
            } => {
                let st = ReqState {
                    issued: rec.ts,
                    region: region.clone(),
                    output_len: *output_len,
                    ..Default::default()
                };
                if reqs.insert(request_id, st).is_some() {
                    return Err(bad(i, format!("request {request_id} issued twice")));
                }
                order.push(request_id);
            }
            LogEvent::Forward { .. } => forwards += 1,
            LogEvent::Pend { replica, request_id } => {
                let r = replica_ok(*replica)?;
                if !reqs.contains_key(request_id.as_str()) {
                    return Err(bad(i, format!("unknown request {request_id}")));
                }
                pending.insert(request_id);
                outstanding[r] += 1;
                peak[r] = peak[r].max(outstanding[r]);
            }
            LogEvent::Admit {
                replica,
                request_id,
                cached_len,
                prompt_len,
                ..
            } => {
                let r = replica_ok(*replica)?;
                let st = reqs
                    .get(request_id.as_str())
                    .ok_or_else(|| bad(i, format!("unknown request {request_id}")))?;
                if cached_len > prompt_len {
                    return Err(bad(i, "cached_len exceeds prompt_len".into()));
                }
                cached += *cached_len as u64;
                prompt += *prompt_len as u64;
                served += 1;
                if replica_regions[r] != st.region {
                    served_remote += 1;
                }
                if !pending.remove(request_id.as_str()) {
                    outstanding[r] += 1;
                    peak[r] = peak[r].max(outstanding[r]);
                }
            }
            LogEvent::Complete { replica, .. } => {
                let r = replica_ok(*replica)?;
                outstanding[r] -= 1;
                if outstanding[r] < 0 {
                    return Err(bad(i, format!("replica {r} completed more than it admitted")));
                }
            }
            LogEvent::ClientFirstToken { request_id } => {
                let st = reqs
                    .get_mut(request_id.as_str())
                    .ok_or_else(|| bad(i, format!("unknown request {request_id}")))?;
                st.first = Some(rec.ts);
            }
            LogEvent::ClientDone { request_id } => {
                let st = reqs
                    .get_mut(request_id.as_str())
                    .ok_or_else(|| bad(i, format!("unknown request {request_id}")))?;
                if st.first.is_none() {
                    return Err(bad(i, format!("request {request_id} done before its first token")));
                }
                st.done = Some(rec.ts);
            }
            LogEvent::End { .. } => end = Some(rec.ts),
            _ => {}
        }
    }
    let duration_ms = end.ok_or_else(|| bad(log.len(), "log has no end record".into()))?;

    let mut ttft = Vec::new();
    let mut e2e = Vec::new();
    let mut out_tokens = 0u64;
    for id in &order {
        let st = &reqs[id];
        if let (Some(f), Some(d)) = (st.first, st.done) {
            ttft.push(f - st.issued);
            e2e.push(d - st.issued);
            out_tokens += st.output_len as u64;
        }
    }
    let completed = e2e.len() as u64;
    let secs = (duration_ms.max(1)) as f64 / 1000.0;
    let max_peak = peak.iter().copied().max().unwrap_or(0);
    let min_peak = peak.iter().copied().min().unwrap_or(0);
    let outstanding_variance = if max_peak == 0 {
        1.0
    } else {
        max_peak as f64 / min_peak.max(1) as f64
    };
    Ok(RunSummary {
        schema_version: SCHEMA_VERSION,
        policy,
        cross_region,
        duration_ms,
        issued: order.len() as u64,
        completed,
        in_flight_at_end: order.len() as u64 - completed,
        throughput_rps: completed as f64 / secs,
        output_tokens_per_s: out_tokens as f64 / secs,
        ttft_ms: LatencyStats::from_values(&mut ttft),
        e2e_ms: LatencyStats::from_values(&mut e2e),
        kv_hit_rate: if prompt == 0 {
            0.0
        } else {
            cached as f64 / prompt as f64
        },
        outstanding_variance,
        forward_fraction: if served == 0 {
            0.0
        } else {
            served_remote as f64 / served as f64
        },
        forwards,
    })
}

/// Per-replica peak outstanding counts (diagnostics).
pub fn peak_outstanding(log: &[LogRecord]) -> BTreeMap<u32, i64> {
    let mut cur: BTreeMap<u32, i64> = BTreeMap::new();
    let mut peak: BTreeMap<u32, i64> = BTreeMap::new();
    let mut pending = HashSet::new();
    for rec in log {
        let (r, d) = match &rec.event {
            LogEvent::Pend { replica, request_id } => {
                pending.insert(request_id.clone());
                (*replica, 1)
            }
            LogEvent::Admit {
                replica, request_id, ..
            } => (*replica, if pending.remove(request_id) { 0 } else { 1 }),
            LogEvent::Complete { replica, .. } => (*replica, -1),
            _ => continue,
        };
        let c = cur.entry(r).or_default();
        *c += d;
        let p = peak.entry(r).or_default();
        *p = (*p).max(*c);
    }
    peak
}
