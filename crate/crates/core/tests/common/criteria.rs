//! Measurements behind the acceptance checks. Each returns whether it holds
//! plus a one-line account of the numbers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use regionlb::harness::{execute, Overrides, ScenarioSource};
use regionlb::metrics::{provisioning_cost, CostModel, DemandSeries, ProvisioningStrategy, RunSummary};
use regionlb::policy::{CandidateSet, ConsistentHash, SelectionPolicy};
use regionlb::replica::{Replica, ReplicaConfig, ReplicaEvent, ReplicaJob};
use regionlb::similarity::within_and_cross_means;
use regionlb::simnet::{run, EngineOptions, LogEvent, Scenario};
use regionlb::types::{RoutingView, Token};
use regionlb::workload::{gen_conversations, gen_diurnal, hourly_counts, peak_to_trough, ConversationSpec};
use regionlb::workload::{DiurnalRegion, DiurnalSpec};

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

pub fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../presets")
        .join(format!("{name}.toml"))
}

/// Every variant of a preset, one at a time, with the slowest run's wall time.
pub fn run_preset(name: &str) -> (BTreeMap<String, RunSummary>, Duration) {
    let path = preset(name);
    let source = ScenarioSource::load(&path).unwrap();
    let mut out = BTreeMap::new();
    let mut slowest = Duration::ZERO;
    for (run_name, sc) in source.runs(&Overrides::default()).unwrap() {
        let t = Instant::now();
        let (_, summary) = execute(&sc, source.base_dir.as_deref(), EngineOptions::default()).unwrap();
        slowest = slowest.max(t.elapsed());
        out.insert(run_name, summary);
    }
    (out, slowest)
}

pub fn selective_pushing(runs: &BTreeMap<String, RunSummary>) -> Outcome {
    let (bp, spo, spp) = (&runs["bp"], &runs["sp-o"], &runs["sp-p"]);
    let checks = [
        spp.throughput_rps >= 1.15 * bp.throughput_rps,
        spp.ttft_ms.p90 <= bp.ttft_ms.p90 / 5.0,
        spp.throughput_rps >= 1.2 * spo.throughput_rps,
        spp.kv_hit_rate >= bp.kv_hit_rate + 0.10,
    ];
    Outcome::new(
        checks.iter().all(|&c| c),
        format!(
            "rps sp-p {:.2} bp {:.2} sp-o {:.2}; p90 ttft sp-p {} bp {}; hit sp-p {:.3} bp {:.3}; checks {checks:?}",
            spp.throughput_rps,
            bp.throughput_rps,
            spo.throughput_rps,
            spp.ttft_ms.p90,
            bp.ttft_ms.p90,
            spp.kv_hit_rate,
            bp.kv_hit_rate
        ),
    )
}

pub fn offloading(runs: &BTreeMap<String, RunSummary>) -> Outcome {
    let rps = |n: &str| runs[n].throughput_rps;
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [6, 9, 12] {
        let r = rps(&format!("cross-{n}")) / rps(&format!("local-{n}"));
        pass &= r >= 1.05;
        parts.push(format!("{n}: {r:.3}"));
    }
    let fewer = rps("cross-9") / rps("local-12");
    pass &= fewer >= 0.95;
    Outcome::new(
        pass,
        format!("cross/local {}; cross-9/local-12 {fewer:.3}", parts.join(", ")),
    )
}

/// Three regions eight hours apart, sampled as Poisson arrivals.
pub fn provisioning() -> Outcome {
    let region = |name: &str, base_rate: f64, phase_hours: f64| DiurnalRegion {
        name: name.into(),
        base_rate,
        amplitude: 0.8,
        phase_hours,
    };
    let spec = DiurnalSpec {
        regions: vec![
            region("us", 1000.0, 0.0),
            region("eu", 800.0, 8.0),
            region("asia", 800.0, 16.0),
        ],
        hours: 24.0,
        ms_per_hour: 60_000,
    };
    let counts = hourly_counts(&spec, &gen_diurnal(&spec, 1));
    let demand = DemandSeries {
        slot_hours: 1.0,
        regions: counts,
    };
    let min_region = demand
        .regions
        .values()
        .map(|s| peak_to_trough(s))
        .fold(f64::INFINITY, f64::min);
    let aggregate = peak_to_trough(&demand.total());
    let model = CostModel {
        replica_capacity: 100.0,
        ..Default::default()
    };
    let cost = |s| provisioning_cost(&demand, s, &model).unwrap().cost;
    let per = cost(ProvisioningStrategy::PerRegionPeak);
    let global = cost(ProvisioningStrategy::GlobalPeak);
    let on_demand = cost(ProvisioningStrategy::PerfectOnDemand);
    let saving = 1.0 - global / per;
    let od = on_demand / global;
    Outcome::new(
        min_region >= 2.88 && aggregate <= 1.5 && (0.30..=0.50).contains(&saving) && (1.8..=2.6).contains(&od),
        format!(
            "per-region peak/trough >= {min_region:.2}, aggregate {aggregate:.2}, global saves {:.1}%, on-demand/global {od:.2}",
            saving * 100.0
        ),
    )
}

/// Within-user over cross-user mean prefix similarity, lowest over several corpora.
pub fn similarity_ratio() -> (f64, f64, f64) {
    let mut worst = (f64::INFINITY, 0.0, 0.0);
    for seed in 1..=5 {
        let spec = ConversationSpec::default();
        let mut groups: BTreeMap<String, Vec<Arc<[Token]>>> = BTreeMap::new();
        for region in ["us", "eu", "asia"] {
            for r in gen_conversations(&spec, 10, 6, region, seed) {
                groups.entry(r.session_key).or_default().push(r.prompt);
            }
        }
        let (within, cross) = within_and_cross_means(&groups).unwrap();
        if within / cross < worst.0 {
            worst = (within / cross, within, cross);
        }
    }
    worst
}

/// Replicas each session was routed to by CH in a run without failures.
pub fn ch_session_spread() -> (usize, usize) {
    let sc = Scenario::from_toml_str(
        r#"
horizon_ms = 60000
policy = "ch:bp"
[workload]
kind = "conversation"
think_ms = 200
[[regions]]
name = "us"
replicas = 4
clients = 24
"#,
    )
    .unwrap();
    let log = run(&sc, None).unwrap().log;
    let mut session: BTreeMap<&str, &str> = BTreeMap::new();
    let mut seen: BTreeMap<&str, BTreeSet<u32>> = BTreeMap::new();
    for r in &log {
        match &r.event {
            LogEvent::Issue {
                request_id, session: s, ..
            } => {
                session.insert(request_id, s);
            }
            LogEvent::RouteLocal {
                request_id, replica, ..
            } => {
                seen.entry(session[request_id.as_str()]).or_default().insert(*replica);
            }
            _ => {}
        }
    }
    let split = seen.values().filter(|s| s.len() > 1).count();
    (seen.len(), split)
}

/// CH alone: with a fixed availability set every session keeps one target
/// no matter how loads move.
pub fn ch_policy_sticks() -> bool {
    let targets: BTreeSet<u32> = (0..6).collect();
    let mut ch = ConsistentHash::new(&targets, 100, 7);
    let mut rng = super::rng(11);
    let mut chosen: BTreeMap<String, u32> = BTreeMap::new();
    for _ in 0..5000 {
        let key = format!("s{}", rng.random_range(0..200));
        let loads = CandidateSet::from_loads(targets.iter().map(|&t| (t, rng.random_range(0..50))));
        let prompt = [rng.random_range(1..100)];
        let view = RoutingView {
            id: "r",
            session_key: &key,
            origin_region: "us",
            prompt: &prompt,
        };
        let got = ch.select(&view, &loads).unwrap();
        if *chosen.entry(key).or_insert(got) != got {
            return false;
        }
    }
    true
}

pub fn affinity() -> Outcome {
    let (ratio, within, cross) = similarity_ratio();
    let (sessions, split) = ch_session_spread();
    let sticks = ch_policy_sticks();
    Outcome::new(
        ratio >= 2.4 && split == 0 && sessions > 0 && sticks,
        format!(
            "within/cross {ratio:.2} ({within:.3}/{cross:.3}); CH split {split} of {sessions} sessions in the simulator; policy-level stickiness {sticks}"
        ),
    )
}

pub fn ch_pathology(burst: &BTreeMap<String, RunSummary>, mixed: &BTreeMap<String, RunSummary>) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, runs) in [("burst", burst), ("mixed-tree", mixed)] {
        let (p, c) = (&runs["prefix"], &runs["ch"]);
        let hit = p.kv_hit_rate > c.kv_hit_rate;
        let var = c.outstanding_variance > p.outstanding_variance;
        pass &= hit && var;
        parts.push(format!(
            "{name}: hit prefix {:.3} ch {:.3} ({}), variance ch {:.2} prefix {:.2} ({})",
            p.kv_hit_rate,
            c.kv_hit_rate,
            if hit { "ok" } else { "reversed" },
            c.outstanding_variance,
            p.outstanding_variance,
            if var { "ok" } else { "reversed" },
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

/// Prefill of a fresh 512-token prompt on an idle replica, then of the same
/// prompt once it is fully cached.
pub fn replica_prefill() -> (f64, f64) {
    let mut rep = Replica::new(ReplicaConfig::default());
    let mut rng = super::rng(5);
    let prompt: Arc<[Token]> = (0..512).map(|_| rng.random_range(1..32_000)).collect();
    let mut prefills = Vec::new();
    let mut now = 0;
    for key in 0..2 {
        rep.admit(ReplicaJob {
            key,
            prompt: prompt.clone(),
            output_len: 1,
        })
        .unwrap();
        let start = now;
        let (end, events) = rep.step(now).unwrap();
        let reported = events
            .iter()
            .find_map(|e| match e {
                ReplicaEvent::FirstToken { prefill_ms, .. } => Some(*prefill_ms),
                _ => None,
            })
            .unwrap();
        // The iteration is prefill plus one single-sequence decode step.
        let measured = (end - start) as f64 - rep.config().decode_ms(1);
        assert!((measured - reported).abs() <= 0.5, "{measured} vs {reported}");
        prefills.push(reported);
        now = end;
        assert!(rep.is_idle());
    }
    (prefills[0], prefills[1])
}

pub fn calibration() -> Outcome {
    let (cold, warm) = replica_prefill();
    Outcome::new(
        (cold - 300.0).abs() <= 5.0 && warm <= 1.0,
        format!("cold 512-token prefill {cold:.1} ms, full-hit repeat {warm:.1} ms"),
    )
}
