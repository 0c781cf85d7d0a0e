//! Per-region load balancer.
//!
//! A balancer owns a FCFS queue, availability sets refreshed by periodic
//! probes, and two instances of the configured selection strategy: one over
//! its local replicas, one over peer balancers. A request at the head of the
//! queue goes to an available local replica if there is one, otherwise to an
//! available peer (which then places it locally and never forwards it again),
//! otherwise it stays queued.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::policy::{Candidate, CandidateSet, PolicyKind, PolicyParams, PolicyRegistry, PushMode, SelectionPolicy};
use crate::replica::ReplicaProbe;
use crate::trie::PrefixTrie;
use crate::types::{BalancerId, Ms, ReplicaId, RoutingView, Token};

pub const DEFAULT_PROBE_INTERVAL_MS: Ms = 50;
pub const DEFAULT_QUEUE_BUFFER: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct BalancerConfig {
    pub region: String,
    pub probe_interval_ms: Ms,
    /// Peer queue length above which the peer is not forwarded to.
    pub queue_buffer_tau: u64,
    pub policy: PolicyKind,
    pub trie_max_size: usize,
    pub snapshot_trie_max_size: usize,
    pub vnodes_per_target: u32,
    pub seed: u64,
    pub fallback_threshold: f64,
    /// Under selective pushing by pending requests, the number of requests a
    /// replica (or peer) may receive per probe interval before it leaves the
    /// available set. 0 means unlimited.
    pub dispatch_allowance: u32,
    pub cross_region: bool,
}

impl BalancerConfig {
    pub fn new(region: &str, policy: PolicyKind) -> Self {
        let params = PolicyParams::default();
        Self {
            region: region.to_string(),
            probe_interval_ms: DEFAULT_PROBE_INTERVAL_MS,
            queue_buffer_tau: DEFAULT_QUEUE_BUFFER,
            policy,
            trie_max_size: params.trie_max_size,
            snapshot_trie_max_size: params.trie_max_size,
            vnodes_per_target: params.vnodes_per_target,
            seed: params.seed,
            fallback_threshold: params.fallback_threshold,
            dispatch_allowance: 0,
            cross_region: true,
        }
    }

    fn params(&self, trie_max_size: usize) -> PolicyParams {
        PolicyParams {
            vnodes_per_target: self.vnodes_per_target,
            seed: self.seed,
            trie_max_size,
            fallback_threshold: self.fallback_threshold,
        }
    }
}

/// What a balancer reports about itself to peers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerProbe {
    pub n_avail_replica: u64,
    pub queue_size: u64,
}

/// One round of probe samples. A missing entry means the probe failed.
#[derive(Debug, Clone, Default)]
pub struct ProbeResults {
    pub replicas: BTreeMap<ReplicaId, ReplicaProbe>,
    pub peers: BTreeMap<BalancerId, PeerProbe>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AvailabilitySets {
    pub local_avail: BTreeSet<ReplicaId>,
    pub remote_avail: BTreeSet<BalancerId>,
    pub replica_probe: BTreeMap<ReplicaId, ReplicaProbe>,
    pub peer_probe: BTreeMap<BalancerId, PeerProbe>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoutingDecision {
    Local(ReplicaId),
    Forward(BalancerId),
    Enqueue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueuedRequest {
    pub key: u64,
    /// Arrived from a peer; may only be placed locally.
    pub forwarded: bool,
}

pub struct Balancer {
    id: BalancerId,
    config: BalancerConfig,
    queue: VecDeque<QueuedRequest>,
    avail: AvailabilitySets,
    replicas: BTreeSet<ReplicaId>,
    peers: BTreeSet<BalancerId>,
    outstanding: BTreeMap<ReplicaId, u64>,
    forwarded_outstanding: BTreeMap<BalancerId, u64>,
    grants: BTreeMap<ReplicaId, u32>,
    peer_grants: BTreeMap<BalancerId, u32>,
    local_policy: Box<dyn SelectionPolicy>,
    remote_policy: Box<dyn SelectionPolicy>,
    forward_log: Vec<(Arc<[Token]>, BalancerId)>,
}

impl std::fmt::Debug for Balancer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Balancer")
            .field("id", &self.id)
            .field("region", &self.config.region)
            .field("queue", &self.queue.len())
            .field("avail", &self.avail)
            .finish()
    }
}

impl Balancer {
    pub fn new(
        id: BalancerId,
        config: BalancerConfig,
        replicas: impl IntoIterator<Item = ReplicaId>,
        peers: impl IntoIterator<Item = BalancerId>,
    ) -> Result<Self> {
        Self::with_registry(id, config, replicas, peers, &PolicyRegistry::default())
    }

    pub fn with_registry(
        id: BalancerId,
        config: BalancerConfig,
        replicas: impl IntoIterator<Item = ReplicaId>,
        peers: impl IntoIterator<Item = BalancerId>,
        registry: &PolicyRegistry,
    ) -> Result<Self> {
        let replicas: BTreeSet<ReplicaId> = replicas.into_iter().collect();
        let peers: BTreeSet<BalancerId> = if config.cross_region {
            peers.into_iter().filter(|&p| p != id).collect()
        } else {
            BTreeSet::new()
        };
        let sel = config.policy.selection.as_str();
        let local_policy = registry.create(sel, &config.params(config.trie_max_size), &replicas)?;
        let remote_policy = registry.create(sel, &config.params(config.snapshot_trie_max_size), &peers)?;
        let mut b = Self {
            id,
            outstanding: replicas.iter().map(|&r| (r, 0)).collect(),
            forwarded_outstanding: peers.iter().map(|&p| (p, 0)).collect(),
            config,
            queue: VecDeque::new(),
            avail: AvailabilitySets::default(),
            replicas,
            peers,
            grants: BTreeMap::new(),
            peer_grants: BTreeMap::new(),
            local_policy,
            remote_policy,
            forward_log: Vec::new(),
        };
        b.refresh_counter_based();
        Ok(b)
    }

    pub fn id(&self) -> BalancerId {
        self.id
    }

    pub fn config(&self) -> &BalancerConfig {
        &self.config
    }

    pub fn availability(&self) -> &AvailabilitySets {
        &self.avail
    }

    pub fn replicas(&self) -> &BTreeSet<ReplicaId> {
        &self.replicas
    }

    pub fn peers(&self) -> &BTreeSet<BalancerId> {
        &self.peers
    }

    pub fn queue(&self) -> &VecDeque<QueuedRequest> {
        &self.queue
    }

    pub fn outstanding(&self, replica: ReplicaId) -> u64 {
        self.outstanding.get(&replica).copied().unwrap_or(0)
    }

    /// Local replica trie (prefix strategy only).
    pub fn local_trie(&self) -> Option<&PrefixTrie> {
        self.local_policy.trie()
    }

    /// Trie of prompts forwarded to peers (prefix strategy only).
    pub fn snapshot_trie(&self) -> Option<&PrefixTrie> {
        self.remote_policy.trie()
    }

    /// Every `(prompt, peer)` this balancer has forwarded, in order.
    pub fn forward_log(&self) -> &[(Arc<[Token]>, BalancerId)] {
        &self.forward_log
    }

    /// Recomputes availability that does not come from probes.
    fn refresh_counter_based(&mut self) {
        match self.config.policy.push {
            PushMode::Blind => self.avail.local_avail = self.replicas.clone(),
            PushMode::SelectiveOutstanding(limit) => {
                self.avail.local_avail = self
                    .replicas
                    .iter()
                    .copied()
                    .filter(|r| self.outstanding(*r) < limit as u64)
                    .collect();
            }
            PushMode::SelectivePending => {}
        }
    }

    /// Applies one round of probe samples.
    ///
    /// Under pending-based pushing a replica is available iff its last probe
    /// reported no pending request; a replica without a sample is unavailable.
    /// A peer is available iff it reported at least one available replica and
    /// a queue no longer than `queue_buffer_tau`.
    pub fn monitor_tick(&mut self, results: &ProbeResults) {
        self.grants.clear();
        self.peer_grants.clear();
        self.avail.replica_probe.clear();
        for &r in &self.replicas {
            if let Some(p) = results.replicas.get(&r) {
                self.avail.replica_probe.insert(r, *p);
            }
        }
        if self.config.policy.push == PushMode::SelectivePending {
            self.avail.local_avail = self
                .avail
                .replica_probe
                .iter()
                .filter(|(_, p)| p.pending == 0)
                .map(|(&r, _)| r)
                .collect();
        } else {
            self.refresh_counter_based();
        }

        self.avail.peer_probe.clear();
        self.avail.remote_avail.clear();
        for &p in &self.peers {
            if let Some(s) = results.peers.get(&p) {
                self.avail.peer_probe.insert(p, *s);
                if s.n_avail_replica > 0 && s.queue_size <= self.config.queue_buffer_tau {
                    self.avail.remote_avail.insert(p);
                }
            }
        }
    }

    /// `(available local replicas, queue length)` as seen by a probing peer.
    pub fn probe_response(&self) -> PeerProbe {
        PeerProbe {
            n_avail_replica: self.avail.local_avail.len() as u64,
            queue_size: self.queue.len() as u64,
        }
    }

    fn local_candidates(&self) -> CandidateSet {
        CandidateSet::new(
            self.replicas
                .iter()
                .map(|&r| Candidate {
                    id: r,
                    outstanding: self.outstanding(r),
                    pending: self.avail.replica_probe.get(&r).map_or(0, |p| p.pending),
                    available: self.avail.local_avail.contains(&r),
                })
                .collect(),
        )
    }

    fn remote_candidates(&self) -> CandidateSet {
        CandidateSet::new(
            self.peers
                .iter()
                .map(|&p| Candidate {
                    id: p,
                    outstanding: self.forwarded_outstanding.get(&p).copied().unwrap_or(0),
                    pending: self.avail.peer_probe.get(&p).map_or(0, |s| s.queue_size),
                    available: self.avail.remote_avail.contains(&p),
                })
                .collect(),
        )
    }

    fn allowance_spent(&self, granted: u32) -> bool {
        self.config.policy.push == PushMode::SelectivePending
            && self.config.dispatch_allowance > 0
            && granted >= self.config.dispatch_allowance
    }

    /// Routing decision for a request that is at the head of the queue.
    pub fn handle_request(&mut self, request: &RoutingView<'_>) -> RoutingDecision {
        self.decide(request, false)
    }

    /// As [`Self::handle_request`] for a request a peer forwarded here: it is
    /// placed locally or waits, never forwarded again.
    pub fn on_forwarded_arrival(&mut self, request: &RoutingView<'_>) -> RoutingDecision {
        self.decide(request, true)
    }

    fn decide(&mut self, request: &RoutingView<'_>, forwarded: bool) -> RoutingDecision {
        if !self.avail.local_avail.is_empty() {
            let cands = self.local_candidates();
            if let Some(r) = self.local_policy.select(request, &cands) {
                self.local_policy.on_routed(request, r);
                *self.outstanding.entry(r).or_default() += 1;
                let g = {
                    let g = self.grants.entry(r).or_default();
                    *g += 1;
                    *g
                };
                let spent = self.allowance_spent(g);
                if spent {
                    self.avail.local_avail.remove(&r);
                }
                self.refresh_counter_based();
                return RoutingDecision::Local(r);
            }
        }
        if forwarded || self.avail.remote_avail.is_empty() {
            return RoutingDecision::Enqueue;
        }
        let cands = self.remote_candidates();
        match self.remote_policy.select(request, &cands) {
            Some(p) => {
                self.remote_policy.on_routed(request, p);
                self.forward_log.push((Arc::from(request.prompt), p));
                *self.forwarded_outstanding.entry(p).or_default() += 1;
                let g = {
                    let g = self.peer_grants.entry(p).or_default();
                    *g += 1;
                    *g
                };
                let spent = self.allowance_spent(g);
                if spent {
                    self.avail.remote_avail.remove(&p);
                }
                RoutingDecision::Forward(p)
            }
            None => RoutingDecision::Enqueue,
        }
    }

    pub fn enqueue(&mut self, request: QueuedRequest) {
        self.queue.push_back(request);
    }

    /// Routes queued requests in FCFS order until the head has to wait.
    pub fn drain<'a>(&mut self, view_of: impl Fn(u64) -> RoutingView<'a>) -> Vec<(QueuedRequest, RoutingDecision)> {
        let mut out = Vec::new();
        while let Some(&head) = self.queue.front() {
            let view = view_of(head.key);
            let d = self.decide(&view, head.forwarded);
            if d == RoutingDecision::Enqueue {
                break;
            }
            self.queue.pop_front();
            out.push((head, d));
        }
        out
    }

    /// Removes and returns the whole queue (hand-off on failure).
    pub fn take_queue(&mut self) -> VecDeque<QueuedRequest> {
        std::mem::take(&mut self.queue)
    }

    /// A request this balancer placed on `replica` finished.
    pub fn on_completion(&mut self, replica: ReplicaId) {
        if let Some(c) = self.outstanding.get_mut(&replica) {
            *c = c.saturating_sub(1);
        }
        self.refresh_counter_based();
    }

    /// A request forwarded to `peer` finished.
    pub fn on_forward_completion(&mut self, peer: BalancerId) {
        if let Some(c) = self.forwarded_outstanding.get_mut(&peer) {
            *c = c.saturating_sub(1);
        }
    }

    /// Takes over `replicas`, seeding their load counters from probe samples.
    pub fn adopt(&mut self, replicas: &BTreeMap<ReplicaId, ReplicaProbe>) {
        for (&r, p) in replicas {
            self.replicas.insert(r);
            self.outstanding.insert(r, p.outstanding);
        }
        self.local_policy.set_targets(&self.replicas);
        self.refresh_counter_based();
    }

    /// Hands `replicas` back to their owner.
    pub fn release(&mut self, replicas: &BTreeSet<ReplicaId>) {
        for r in replicas {
            self.replicas.remove(r);
            self.outstanding.remove(r);
            self.avail.local_avail.remove(r);
            self.avail.replica_probe.remove(r);
        }
        self.local_policy.set_targets(&self.replicas);
        self.refresh_counter_based();
    }

    /// Sets load counters from probe samples (after recovery).
    pub fn reset_counters(&mut self, samples: &BTreeMap<ReplicaId, ReplicaProbe>) {
        for (&r, p) in samples {
            if self.replicas.contains(&r) {
                self.outstanding.insert(r, p.outstanding);
            }
        }
        self.refresh_counter_based();
    }
}
