//! Shared domain types: token sequences, requests, and per-request timelines.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Simulated time in integer milliseconds.
pub type Ms = u64;

/// Abstract token identifier. Tokens are opaque integers; no tokenizer is assumed.
pub type Token = u32;

/// An ordered token sequence. May be empty.
pub type TokenSeq = Vec<Token>;

/// Identifier of a routing target (a replica or a peer balancer, depending on the layer).
pub type TargetId = u32;

pub type ReplicaId = u32;
pub type BalancerId = u32;
pub type RegionId = u32;

/// A token-sequence inference job.
///
/// `output_len` is simulator ground truth; routing code only ever sees a
/// [`RoutingView`], which does not carry it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub id: String,
    pub session_key: String,
    pub origin_region: String,
    pub prompt: Arc<[Token]>,
    pub output_len: u32,
    pub arrival_time: Ms,
}

impl Request {
    pub fn routing_view(&self) -> RoutingView<'_> {
        RoutingView {
            id: &self.id,
            session_key: &self.session_key,
            origin_region: &self.origin_region,
            prompt: &self.prompt,
        }
    }

    pub fn to_record(&self) -> TraceRecord {
        TraceRecord {
            id: self.id.clone(),
            session: self.session_key.clone(),
            region: self.origin_region.clone(),
            arrival_ms: self.arrival_time,
            prompt: self.prompt.to_vec(),
            output_len: self.output_len,
        }
    }
}

/// The balancer-facing view of a request.
#[derive(Debug, Clone, Copy)]
pub struct RoutingView<'a> {
    pub id: &'a str,
    pub session_key: &'a str,
    pub origin_region: &'a str,
    pub prompt: &'a [Token],
}

/// One line of a JSONL trace file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub id: String,
    pub session: String,
    pub region: String,
    pub arrival_ms: Ms,
    pub prompt: Vec<Token>,
    pub output_len: u32,
}

impl TraceRecord {
    pub fn into_request(self) -> Request {
        Request {
            id: self.id,
            session_key: self.session,
            origin_region: self.region,
            prompt: self.prompt.into(),
            output_len: self.output_len,
            arrival_time: self.arrival_ms,
        }
    }
}

/// Lifecycle timestamps of one request, as observed by the simulator.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestTimeline {
    pub arrival_time: Ms,
    pub lb_dequeue_time: Option<Ms>,
    pub replica_admit_time: Option<Ms>,
    pub first_token_time: Option<Ms>,
    pub completion_time: Option<Ms>,
    pub served_by: Option<ReplicaId>,
    pub forwarded_via: Option<BalancerId>,
    pub cached_prefix_len: u32,
}

impl RequestTimeline {
    pub fn new(arrival_time: Ms) -> Self {
        Self {
            arrival_time,
            ..Default::default()
        }
    }

    pub fn ttft(&self) -> Option<Ms> {
        self.first_token_time.map(|t| t - self.arrival_time)
    }

    pub fn e2e(&self) -> Option<Ms> {
        self.completion_time.map(|t| t - self.arrival_time)
    }

    /// Checks `arrival <= dequeue <= admit <= first_token <= completion` over the present stamps.
    pub fn is_monotone(&self) -> bool {
        let stamps = [
            Some(self.arrival_time),
            self.lb_dequeue_time,
            self.replica_admit_time,
            self.first_token_time,
            self.completion_time,
        ];
        let present: Vec<Ms> = stamps.into_iter().flatten().collect();
        present.windows(2).all(|w| w[0] <= w[1])
    }
}
