//! The discrete-event engine.
//!
//! Time is integer milliseconds. Every message between regions is delayed by
//! the latency matrix; probes are answered instantly at the probing tick. The
//! controller watches balancer health out of band and reassigns replicas after
//! a detection delay of two probe intervals.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::latency::LatencyMatrix;
use super::log::{LogEvent, LogRecord};
use super::queue::EventQueue;
use super::scenario::{Scenario, WorkloadSpec};
use crate::balancer::{Balancer, BalancerConfig, ProbeResults, QueuedRequest, RoutingDecision};
use crate::error::{Error, Result};
use crate::policy::PolicyKind;
use crate::replica::{AdmitOutcome, Replica, ReplicaEvent, ReplicaJob, ReplicaProbe};
use crate::types::{BalancerId, Ms, RegionId, ReplicaId, Request, RequestTimeline};
use crate::workload::{
    gen_diurnal, load_trace, random_tokens, shared_prefix, ClientProgram, ConversationClient, Issue, TreeClient,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineOptions {
    /// Check replica and trie invariants after every event.
    pub audit: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: Vec<LogRecord>,
    /// Per request id, in issue order.
    pub timelines: Vec<(String, RequestTimeline)>,
    pub end_ms: Ms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sender {
    Origin,
    Peer(BalancerId),
}

#[derive(Debug)]
enum Ev {
    ClientIssue {
        client: usize,
        issue: Issue,
    },
    OpenIssue {
        key: usize,
    },
    LbArrival {
        lb: BalancerId,
        key: usize,
        forwarded: bool,
        sender: Sender,
    },
    Returned {
        key: usize,
        region: RegionId,
        hint: BalancerId,
    },
    ReplicaArrival {
        replica: ReplicaId,
        key: usize,
    },
    IterationEnd {
        replica: ReplicaId,
    },
    Notice {
        lb: BalancerId,
        replica: ReplicaId,
    },
    ForwardNotice {
        lb: BalancerId,
        peer: BalancerId,
    },
    ClientFirstToken {
        key: usize,
    },
    ClientDone {
        key: usize,
    },
    Probe {
        lb: BalancerId,
        epoch: u64,
    },
    Fail {
        lb: BalancerId,
    },
    Detect {
        lb: BalancerId,
    },
    Recover {
        lb: BalancerId,
    },
}

struct LbSlot {
    lb: Balancer,
    region: RegionId,
    up: bool,
    epoch: u64,
    adopted_by: Option<BalancerId>,
}

struct ReplicaSlot {
    replica: Replica,
    region: RegionId,
    home: BalancerId,
    owner: BalancerId,
    iterating: bool,
}

struct Client {
    program: Box<dyn ClientProgram>,
    name: String,
    region: RegionId,
    issued: u64,
}

struct Req {
    req: Request,
    client: Option<usize>,
    tag: u64,
    region: RegionId,
    timeline: RequestTimeline,
    forwarder: Option<BalancerId>,
}

pub struct Engine {
    now: Ms,
    horizon: Ms,
    events: EventQueue<Ev>,
    latency: LatencyMatrix,
    probe_interval: Ms,
    lbs: Vec<LbSlot>,
    replicas: Vec<ReplicaSlot>,
    clients: Vec<Client>,
    reqs: Vec<Req>,
    /// Nearest balancer per region.
    region_lb: Vec<BalancerId>,
    log: Vec<LogRecord>,
    work_left: u64,
    controller_left: u64,
    opts: EngineOptions,
}

fn mix(seed: u64, i: u64) -> u64 {
    let mut z = seed ^ (i.wrapping_add(1)).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Engine {
    pub fn new(scenario: &Scenario, base_dir: Option<&Path>, opts: EngineOptions) -> Result<Self> {
        scenario.validate()?;
        let regions = scenario.region_names();
        let region_id = |name: &str| regions.iter().position(|r| r == name).map(|i| i as RegionId);
        let latency = scenario.latency_matrix()?;
        let policy: PolicyKind = scenario.policy_kind()?;
        let bs = &scenario.balancer;

        let lb_regions: Vec<RegionId> = scenario
            .balancer_regions()
            .iter()
            .map(|r| region_id(r).expect("validated"))
            .collect();
        let nearest = |region: RegionId| -> BalancerId {
            (0..lb_regions.len() as BalancerId)
                .min_by_key(|&b| (latency.get(region, lb_regions[b as usize]), b))
                .expect("at least one balancer")
        };
        let region_lb: Vec<BalancerId> = (0..regions.len() as RegionId).map(nearest).collect();

        let mut replicas = Vec::new();
        for (ri, r) in scenario.regions.iter().enumerate() {
            for _ in 0..r.replicas {
                let home = region_lb[ri];
                replicas.push(ReplicaSlot {
                    replica: Replica::new(scenario.replica.clone()),
                    region: ri as RegionId,
                    home,
                    owner: home,
                    iterating: false,
                });
            }
        }

        let all_lbs: Vec<BalancerId> = (0..lb_regions.len() as BalancerId).collect();
        let mut lbs = Vec::new();
        for (b, &region) in lb_regions.iter().enumerate() {
            let cfg = BalancerConfig {
                region: regions[region as usize].clone(),
                probe_interval_ms: bs.probe_interval_ms,
                queue_buffer_tau: bs.queue_buffer,
                policy: policy.clone(),
                trie_max_size: bs.trie_max_size,
                snapshot_trie_max_size: bs.snapshot_trie_max_size.unwrap_or(bs.trie_max_size),
                vnodes_per_target: bs.vnodes,
                seed: scenario.seed,
                fallback_threshold: bs.fallback_threshold,
                dispatch_allowance: bs.dispatch_allowance,
                cross_region: scenario.cross_region,
            };
            let own = replicas
                .iter()
                .enumerate()
                .filter(|(_, r)| r.home == b as BalancerId)
                .map(|(i, _)| i as ReplicaId);
            lbs.push(LbSlot {
                lb: Balancer::new(b as BalancerId, cfg, own, all_lbs.iter().copied())?,
                region,
                up: true,
                epoch: 0,
                adopted_by: None,
            });
        }

        let mut eng = Self {
            now: 0,
            horizon: scenario.horizon_ms,
            events: EventQueue::default(),
            latency,
            probe_interval: bs.probe_interval_ms,
            lbs,
            replicas,
            clients: Vec::new(),
            reqs: Vec::new(),
            region_lb,
            log: Vec::new(),
            work_left: 0,
            controller_left: 0,
            opts,
        };
        eng.record(LogEvent::Meta {
            policy: policy.to_string(),
            cross_region: scenario.cross_region,
            horizon_ms: scenario.horizon_ms,
            kv_budget: scenario.replica.kv_budget_tokens,
            replica_regions: eng
                .replicas
                .iter()
                .map(|r| regions[r.region as usize].clone())
                .collect(),
            balancer_regions: lb_regions.iter().map(|&r| regions[r as usize].clone()).collect(),
        });
        for b in 0..eng.lbs.len() as BalancerId {
            eng.events.push(0, Ev::Probe { lb: b, epoch: 0 });
        }

        // Closed-loop clients.
        let mut idx = 0u64;
        for (ri, r) in scenario.regions.iter().enumerate() {
            let spec = r.workload.as_ref().unwrap_or(&scenario.workload);
            for c in 0..r.clients {
                let name = format!("{}-c{c}", r.name);
                let seed = mix(scenario.seed, idx);
                idx += 1;
                let program: Box<dyn ClientProgram> = match spec {
                    WorkloadSpec::Conversation(s) => {
                        Box::new(ConversationClient::new(s.clone(), name.clone(), scenario.seed, seed))
                    }
                    WorkloadSpec::Tree(s) => Box::new(TreeClient::new(s.clone(), name.clone(), scenario.seed, seed)),
                    _ => continue,
                };
                eng.clients.push(Client {
                    program,
                    name,
                    region: ri as RegionId,
                    issued: 0,
                });
            }
        }
        for c in 0..eng.clients.len() {
            let issues = eng.clients[c].program.start();
            eng.schedule_issues(c, issues);
        }

        // Open-loop sources.
        let open: Vec<Request> = match &scenario.workload {
            WorkloadSpec::Diurnal(d) => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(scenario.seed, u64::MAX));
                let system = shared_prefix(scenario.seed, d.system_prefix_len as usize);
                let mut per_region: BTreeMap<String, u64> = BTreeMap::new();
                gen_diurnal(&d.schedule, scenario.seed)
                    .into_iter()
                    .enumerate()
                    .map(|(n, a)| {
                        let k = per_region.entry(a.region.clone()).or_default();
                        let session = format!("{}-s{}", a.region, *k % d.sessions as u64);
                        *k += 1;
                        let mut prompt = system.clone();
                        let len = d.prompt.sample(&mut rng) as usize;
                        prompt.extend(random_tokens(&mut rng, len));
                        Request {
                            id: format!("d{n}"),
                            session_key: session,
                            origin_region: a.region,
                            prompt: prompt.into(),
                            output_len: d.output.sample(&mut rng),
                            arrival_time: a.at_ms,
                        }
                    })
                    .collect()
            }
            WorkloadSpec::Trace(t) => {
                let path = Scenario::resolve_path(base_dir, &t.path);
                let reqs = load_trace(&path).map_err(|e| Error::validation("workload.path", e.to_string()))?;
                for r in &reqs {
                    if region_id(&r.origin_region).is_none() {
                        return Err(Error::validation(
                            "workload.path",
                            format!("request {} from unknown region `{}`", r.id, r.origin_region),
                        ));
                    }
                    if r.prompt.len() as u64 + r.output_len as u64 > scenario.replica.kv_budget_tokens {
                        return Err(Error::validation(
                            "workload.path",
                            format!("request {} exceeds the replica token budget", r.id),
                        ));
                    }
                }
                reqs
            }
            _ => Vec::new(),
        };
        for req in open {
            let region = region_id(&req.origin_region).expect("checked");
            let at = req.arrival_time;
            eng.reqs.push(Req {
                timeline: RequestTimeline::new(at),
                req,
                client: None,
                tag: 0,
                region,
                forwarder: None,
            });
            eng.work_left += 1;
            eng.events.push(
                at,
                Ev::OpenIssue {
                    key: eng.reqs.len() - 1,
                },
            );
        }

        for f in &scenario.failures {
            eng.events.push(f.at_ms, Ev::Fail { lb: f.balancer });
            eng.controller_left += 2;
            if let Some(r) = f.recover_at_ms {
                eng.events.push(r, Ev::Recover { lb: f.balancer });
                eng.controller_left += 1;
            }
        }
        Ok(eng)
    }

    pub fn balancers(&self) -> impl Iterator<Item = &Balancer> {
        self.lbs.iter().map(|s| &s.lb)
    }

    pub fn replica(&self, id: ReplicaId) -> &Replica {
        &self.replicas[id as usize].replica
    }

    pub fn replica_owner(&self, id: ReplicaId) -> BalancerId {
        self.replicas[id as usize].owner
    }

    pub fn replica_count(&self) -> usize {
        self.replicas.len()
    }

    fn record(&mut self, event: LogEvent) {
        self.log.push(LogRecord { ts: self.now, event });
    }

    fn lat(&self, a: RegionId, b: RegionId) -> Ms {
        self.latency.get(a, b)
    }

    fn lb_region(&self, b: BalancerId) -> RegionId {
        self.lbs[b as usize].region
    }

    fn schedule_issues(&mut self, client: usize, issues: Vec<Issue>) {
        for issue in issues {
            self.work_left += 1;
            self.events
                .push(self.now + issue.delay_ms, Ev::ClientIssue { client, issue });
        }
    }

    /// The live balancer currently standing in for `b`, or `b` itself if its
    /// failure has not been detected yet.
    fn resolve(&self, mut b: BalancerId) -> BalancerId {
        for _ in 0..=self.lbs.len() {
            let s = &self.lbs[b as usize];
            match (s.up, s.adopted_by) {
                (false, Some(a)) => b = a,
                _ => return b,
            }
        }
        b
    }

    /// Runs until the horizon or until no work is left.
    pub fn run(&mut self) -> Result<RunOutput> {
        let mut stopped_early = false;
        while let Some(t) = self.events.peek_time() {
            if t > self.horizon {
                break;
            }
            let (t, ev) = self.events.pop().expect("peeked");
            if t < self.now {
                return Err(Error::Invariant(format!("event at {t} before clock {}", self.now)));
            }
            self.now = t;
            self.handle(ev)?;
            if self.work_left == 0 && self.controller_left == 0 {
                stopped_early = true;
                break;
            }
        }
        if !stopped_early {
            self.now = self.horizon;
        }
        let in_flight = self
            .reqs
            .iter()
            .filter(|r| r.timeline.completion_time.is_none())
            .count() as u64;
        self.record(LogEvent::End { in_flight });
        Ok(RunOutput {
            log: std::mem::take(&mut self.log),
            timelines: self
                .reqs
                .iter()
                .map(|r| (r.req.id.clone(), r.timeline.clone()))
                .collect(),
            end_ms: self.now,
        })
    }

    fn handle(&mut self, ev: Ev) -> Result<()> {
        match ev {
            Ev::ClientIssue { client, issue } => self.on_client_issue(client, issue),
            Ev::OpenIssue { key } => {
                self.work_left -= 1;
                self.issue(key);
            }
            Ev::LbArrival {
                lb,
                key,
                forwarded,
                sender,
            } => self.on_lb_arrival(lb, key, forwarded, sender)?,
            Ev::Returned { key, region, hint } => {
                let target = self.resolve(hint);
                if self.lbs[target as usize].up {
                    let at = self.now + self.lat(region, self.lb_region(target));
                    self.events.push(
                        at,
                        Ev::LbArrival {
                            lb: target,
                            key,
                            forwarded: false,
                            sender: Sender::Origin,
                        },
                    );
                } else {
                    self.events
                        .push(self.now + self.probe_interval, Ev::Returned { key, region, hint });
                }
            }
            Ev::ReplicaArrival { replica, key } => self.on_replica_arrival(replica, key)?,
            Ev::IterationEnd { replica } => self.on_iteration_end(replica)?,
            Ev::Notice { lb, replica } => {
                if self.lbs[lb as usize].up {
                    self.lbs[lb as usize].lb.on_completion(replica);
                    self.drain(lb)?;
                }
            }
            Ev::ForwardNotice { lb, peer } => {
                if self.lbs[lb as usize].up {
                    self.lbs[lb as usize].lb.on_forward_completion(peer);
                }
            }
            Ev::ClientFirstToken { key } => {
                self.reqs[key].timeline.first_token_time = Some(self.now);
                let request_id = self.reqs[key].req.id.clone();
                self.record(LogEvent::ClientFirstToken { request_id });
            }
            Ev::ClientDone { key } => self.on_client_done(key),
            Ev::Probe { lb, epoch } => self.on_probe(lb, epoch)?,
            Ev::Fail { lb } => {
                self.controller_left -= 1;
                let s = &mut self.lbs[lb as usize];
                if s.up {
                    s.up = false;
                    self.record(LogEvent::Failure { lb });
                }
                self.events.push(self.now + 2 * self.probe_interval, Ev::Detect { lb });
            }
            Ev::Detect { lb } => {
                self.controller_left -= 1;
                self.on_detect(lb)?;
            }
            Ev::Recover { lb } => {
                self.controller_left -= 1;
                self.on_recover(lb)?;
            }
        }
        Ok(())
    }

    fn on_client_issue(&mut self, client: usize, issue: Issue) {
        self.work_left -= 1;
        let c = &mut self.clients[client];
        let id = format!("{}-{}", c.name, c.issued);
        c.issued += 1;
        let region = c.region;
        let req = Request {
            id,
            session_key: issue.session_key,
            origin_region: self.latency.regions()[region as usize].clone(),
            prompt: issue.prompt,
            output_len: issue.output_len,
            arrival_time: self.now,
        };
        self.reqs.push(Req {
            timeline: RequestTimeline::new(self.now),
            req,
            client: Some(client),
            tag: issue.tag,
            region,
            forwarder: None,
        });
        self.issue(self.reqs.len() - 1);
    }

    /// Sends a freshly issued request to its region's balancer.
    fn issue(&mut self, key: usize) {
        self.work_left += 1;
        let r = &self.reqs[key];
        self.log.push(LogRecord {
            ts: self.now,
            event: LogEvent::Issue {
                request_id: r.req.id.clone(),
                region: r.req.origin_region.clone(),
                session: r.req.session_key.clone(),
                prompt_len: r.req.prompt.len() as u32,
                output_len: r.req.output_len,
            },
        });
        let region = r.region;
        let home = self.region_lb[region as usize];
        let target = self.resolve(home);
        let at = self.now + self.lat(region, self.lb_region(target));
        self.events.push(
            at,
            Ev::LbArrival {
                lb: target,
                key,
                forwarded: false,
                sender: Sender::Origin,
            },
        );
    }

    fn on_lb_arrival(&mut self, lb: BalancerId, key: usize, forwarded: bool, sender: Sender) -> Result<()> {
        let request_id = self.reqs[key].req.id.clone();
        if !self.lbs[lb as usize].up {
            self.record(LogEvent::Bounce { lb, request_id });
            let (region, hint) = match sender {
                Sender::Peer(p) => (self.lb_region(p), p),
                Sender::Origin => {
                    let region = self.reqs[key].region;
                    (region, self.region_lb[region as usize])
                }
            };
            let at = self.now + self.lat(self.lb_region(lb), region);
            self.events.push(at, Ev::Returned { key, region, hint });
            return Ok(());
        }
        self.record(LogEvent::Enqueue {
            lb,
            request_id,
            forwarded,
        });
        self.lbs[lb as usize].lb.enqueue(QueuedRequest {
            key: key as u64,
            forwarded,
        });
        self.drain(lb)
    }

    fn drain(&mut self, lb: BalancerId) -> Result<()> {
        let reqs = &self.reqs;
        let decisions = self.lbs[lb as usize].lb.drain(|k| reqs[k as usize].req.routing_view());
        if decisions.is_empty() {
            return Ok(());
        }
        let local_avail = self.lbs[lb as usize].lb.availability().local_avail.len() as u32;
        let from = self.lb_region(lb);
        for (q, d) in decisions {
            let key = q.key as usize;
            let request_id = self.reqs[key].req.id.clone();
            let t = &mut self.reqs[key].timeline;
            if t.lb_dequeue_time.is_none() {
                t.lb_dequeue_time = Some(self.now);
            }
            match d {
                RoutingDecision::Local(r) => {
                    self.record(LogEvent::RouteLocal {
                        lb,
                        request_id,
                        replica: r,
                    });
                    let at = self.now + self.lat(from, self.replicas[r as usize].region);
                    self.events.push(at, Ev::ReplicaArrival { replica: r, key });
                }
                RoutingDecision::Forward(p) => {
                    self.record(LogEvent::Forward {
                        lb,
                        request_id,
                        peer: p,
                        local_avail,
                    });
                    self.reqs[key].forwarder = Some(lb);
                    self.reqs[key].timeline.forwarded_via = Some(p);
                    let at = self.now + self.lat(from, self.lb_region(p));
                    self.events.push(
                        at,
                        Ev::LbArrival {
                            lb: p,
                            key,
                            forwarded: true,
                            sender: Sender::Peer(lb),
                        },
                    );
                }
                RoutingDecision::Enqueue => unreachable!("drain only returns routed requests"),
            }
        }
        if self.opts.audit {
            let b = &self.lbs[lb as usize].lb;
            for t in [b.local_trie(), b.snapshot_trie()].into_iter().flatten() {
                t.check_invariants()
                    .map_err(|e| Error::Invariant(format!("balancer {lb} trie: {e}")))?;
            }
        }
        Ok(())
    }

    fn on_replica_arrival(&mut self, replica: ReplicaId, key: usize) -> Result<()> {
        let r = &self.reqs[key];
        let job = ReplicaJob {
            key: key as u64,
            prompt: r.req.prompt.clone(),
            output_len: r.req.output_len,
        };
        let prompt_len = r.req.prompt.len() as u32;
        let request_id = r.req.id.clone();
        self.reqs[key].timeline.served_by = Some(replica);
        let slot = &mut self.replicas[replica as usize];
        match slot.replica.admit(job)? {
            AdmitOutcome::Running { cached_len } => {
                let memory = slot.replica.memory_used();
                self.reqs[key].timeline.replica_admit_time = Some(self.now);
                self.reqs[key].timeline.cached_prefix_len = cached_len as u32;
                self.record(LogEvent::Admit {
                    replica,
                    request_id,
                    cached_len: cached_len as u32,
                    prompt_len,
                    memory,
                });
            }
            AdmitOutcome::Pending => self.record(LogEvent::Pend { replica, request_id }),
        }
        self.kick(replica);
        self.audit_replica(replica)
    }

    fn kick(&mut self, replica: ReplicaId) {
        let slot = &mut self.replicas[replica as usize];
        if slot.iterating {
            return;
        }
        if let Some(end) = slot.replica.begin_iteration(self.now) {
            slot.iterating = true;
            self.events.push(end, Ev::IterationEnd { replica });
        }
    }

    fn audit_replica(&self, replica: ReplicaId) -> Result<()> {
        if self.opts.audit {
            self.replicas[replica as usize]
                .replica
                .check_invariants()
                .map_err(|e| Error::Invariant(format!("replica {replica}: {e}")))?;
        }
        Ok(())
    }

    fn on_iteration_end(&mut self, replica: ReplicaId) -> Result<()> {
        let slot = &mut self.replicas[replica as usize];
        slot.iterating = false;
        let events = slot.replica.finish_iteration(self.now);
        let rregion = slot.region;
        for e in events {
            match e {
                ReplicaEvent::FirstToken { key, .. } => {
                    let key = key as usize;
                    let request_id = self.reqs[key].req.id.clone();
                    self.record(LogEvent::FirstToken { replica, request_id });
                    let at = self.now + self.lat(rregion, self.reqs[key].region);
                    self.events.push(at, Ev::ClientFirstToken { key });
                }
                ReplicaEvent::Completed { key, output_len, .. } => {
                    let key = key as usize;
                    let request_id = self.reqs[key].req.id.clone();
                    let memory = self.replicas[replica as usize].replica.memory_used();
                    self.record(LogEvent::Complete {
                        replica,
                        request_id,
                        output_len,
                        memory,
                    });
                    let at = self.now + self.lat(rregion, self.reqs[key].region);
                    self.events.push(at, Ev::ClientDone { key });
                    let owner = self.replicas[replica as usize].owner;
                    let at = self.now + self.lat(rregion, self.lb_region(owner));
                    self.events.push(at, Ev::Notice { lb: owner, replica });
                    if let (Some(f), Some(p)) = (self.reqs[key].forwarder, self.reqs[key].timeline.forwarded_via) {
                        let at = self.now + self.lat(rregion, self.lb_region(f));
                        self.events.push(at, Ev::ForwardNotice { lb: f, peer: p });
                    }
                }
                ReplicaEvent::Admitted {
                    key,
                    cached_len,
                    prompt_len,
                    ..
                } => {
                    let key = key as usize;
                    let request_id = self.reqs[key].req.id.clone();
                    self.reqs[key].timeline.replica_admit_time = Some(self.now);
                    self.reqs[key].timeline.cached_prefix_len = cached_len as u32;
                    let memory = self.replicas[replica as usize].replica.memory_used();
                    self.record(LogEvent::Admit {
                        replica,
                        request_id,
                        cached_len: cached_len as u32,
                        prompt_len: prompt_len as u32,
                        memory,
                    });
                }
            }
        }
        self.kick(replica);
        self.audit_replica(replica)
    }

    fn on_client_done(&mut self, key: usize) {
        self.work_left -= 1;
        self.reqs[key].timeline.completion_time = Some(self.now);
        let request_id = self.reqs[key].req.id.clone();
        self.record(LogEvent::ClientDone { request_id });
        if let Some(c) = self.reqs[key].client {
            let tag = self.reqs[key].tag;
            let issues = self.clients[c].program.on_complete(tag);
            self.schedule_issues(c, issues);
        }
    }

    fn probe_samples(&self, replicas: impl IntoIterator<Item = ReplicaId>) -> BTreeMap<ReplicaId, ReplicaProbe> {
        replicas
            .into_iter()
            .map(|r| (r, self.replicas[r as usize].replica.probe()))
            .collect()
    }

    fn on_probe(&mut self, lb: BalancerId, epoch: u64) -> Result<()> {
        let s = &self.lbs[lb as usize];
        if !s.up || s.epoch != epoch {
            return Ok(());
        }
        self.probe_now(lb);
        self.events
            .push(self.now + self.probe_interval, Ev::Probe { lb, epoch });
        self.drain(lb)
    }

    fn probe_now(&mut self, lb: BalancerId) {
        let b = &self.lbs[lb as usize].lb;
        let results = ProbeResults {
            replicas: self.probe_samples(b.replicas().iter().copied()),
            peers: b
                .peers()
                .iter()
                .filter(|&&p| self.lbs[p as usize].up)
                .map(|&p| (p, self.lbs[p as usize].lb.probe_response()))
                .collect(),
        };
        let b = &mut self.lbs[lb as usize].lb;
        b.monitor_tick(&results);
        let a = b.availability();
        let event = LogEvent::Probe {
            lb,
            local_avail: a.local_avail.len() as u32,
            remote_avail: a.remote_avail.len() as u32,
            queue: b.queue().len() as u32,
        };
        self.record(event);
    }

    fn on_detect(&mut self, lb: BalancerId) -> Result<()> {
        if self.lbs[lb as usize].up || self.lbs[lb as usize].adopted_by.is_some() {
            return Ok(());
        }
        let region = self.lb_region(lb);
        let adopter = (0..self.lbs.len() as BalancerId)
            .filter(|&b| self.lbs[b as usize].up)
            .min_by_key(|&b| (self.lat(region, self.lb_region(b)), b));
        let Some(adopter) = adopter else {
            // Nobody is up to adopt; look again next interval.
            self.controller_left += 1;
            self.events.push(self.now + self.probe_interval, Ev::Detect { lb });
            return Ok(());
        };
        self.lbs[lb as usize].adopted_by = Some(adopter);
        self.record(LogEvent::Detect { lb, adopter });

        let moved: BTreeSet<ReplicaId> = (0..self.replicas.len() as ReplicaId)
            .filter(|&r| self.replicas[r as usize].owner == lb)
            .collect();
        let samples = self.probe_samples(moved.iter().copied());
        for &r in &moved {
            self.replicas[r as usize].owner = adopter;
            self.record(LogEvent::Reassign {
                replica: r,
                from: lb,
                to: adopter,
            });
        }
        self.lbs[adopter as usize].lb.adopt(&samples);

        let queued = self.lbs[lb as usize].lb.take_queue();
        let at = self.now + self.lat(region, self.lb_region(adopter));
        for q in queued {
            self.events.push(
                at,
                Ev::LbArrival {
                    lb: adopter,
                    key: q.key as usize,
                    forwarded: q.forwarded,
                    sender: Sender::Origin,
                },
            );
        }
        self.drain(adopter)
    }

    fn on_recover(&mut self, lb: BalancerId) -> Result<()> {
        if self.lbs[lb as usize].up {
            return Ok(());
        }
        {
            let s = &mut self.lbs[lb as usize];
            s.up = true;
            s.adopted_by = None;
            s.epoch += 1;
        }
        self.record(LogEvent::Recover { lb });

        // Drop anything this balancer held on behalf of others.
        let stale: BTreeSet<ReplicaId> = self.lbs[lb as usize]
            .lb
            .replicas()
            .iter()
            .copied()
            .filter(|&r| self.replicas[r as usize].home != lb)
            .collect();
        self.lbs[lb as usize].lb.release(&stale);

        let mine: Vec<ReplicaId> = (0..self.replicas.len() as ReplicaId)
            .filter(|&r| self.replicas[r as usize].home == lb)
            .collect();
        let mut by_owner: BTreeMap<BalancerId, BTreeSet<ReplicaId>> = BTreeMap::new();
        for &r in &mine {
            let owner = self.replicas[r as usize].owner;
            if owner != lb {
                by_owner.entry(owner).or_default().insert(r);
            }
        }
        for (owner, set) in by_owner {
            self.lbs[owner as usize].lb.release(&set);
            for r in set {
                self.replicas[r as usize].owner = lb;
                self.record(LogEvent::Reassign {
                    replica: r,
                    from: owner,
                    to: lb,
                });
            }
        }
        let samples = self.probe_samples(mine.iter().copied());
        self.lbs[lb as usize].lb.adopt(&samples);
        self.probe_now(lb);
        let epoch = self.lbs[lb as usize].epoch;
        self.events
            .push(self.now + self.probe_interval, Ev::Probe { lb, epoch });
        self.drain(lb)
    }
}

/// Builds and runs a scenario.
pub fn run(scenario: &Scenario, base_dir: Option<&Path>) -> Result<RunOutput> {
    Engine::new(scenario, base_dir, EngineOptions::default())?.run()
}
