//! Random scenarios and log-level protocol checks.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::Rng;
use regionlb::simnet::{log_to_string, Engine, EngineOptions, LogEvent, LogRecord, Scenario};

const REGIONS: [&str; 3] = ["us", "eu", "asia"];

/// A finite-work scenario: every request can complete well before the horizon.
pub fn random_scenario(seed: u64) -> String {
    let mut rng = super::rng(seed);
    let n = rng.random_range(1..=3);
    let regions = &REGIONS[..n];
    let mut replicas: Vec<u32> = regions.iter().map(|_| rng.random_range(0..=3)).collect();
    if replicas.iter().all(|&r| r == 0) {
        replicas[rng.random_range(0..n)] = rng.random_range(1..=3);
    }
    let clients: Vec<u32> = regions.iter().map(|_| rng.random_range(0..=8)).collect();

    let selection = *["rr", "ll", "ch", "prefix"].choose(&mut rng).unwrap();
    let push = match rng.random_range(0..3) {
        0 => "bp".to_string(),
        1 => format!("sp-o:{}", rng.random_range(1..=8)),
        _ => "sp-p".to_string(),
    };
    let mut s = String::new();
    let _ = writeln!(s, "name = \"random-{seed}\"");
    let _ = writeln!(s, "seed = {}", rng.random_range(0..1_000_000u64));
    let _ = writeln!(s, "horizon_ms = 3000000");
    let _ = writeln!(s, "policy = \"{selection}:{push}\"");
    let _ = writeln!(s, "cross_region = {}", rng.random_bool(0.7));

    let _ = writeln!(s, "[latency]\nintra_ms = {}", rng.random_range(0..=3));
    for i in 0..n {
        for j in i + 1..n {
            let _ = writeln!(
                s,
                "[[latency.links]]\na = \"{}\"\nb = \"{}\"\nms = {}",
                regions[i],
                regions[j],
                rng.random_range(0..=200)
            );
        }
    }
    let _ = writeln!(
        s,
        "[balancer]\nprobe_interval_ms = {}\nqueue_buffer = {}\ndispatch_allowance = {}\ntrie_max_size = {}",
        rng.random_range(5..=100),
        rng.random_range(0..=4),
        [0, 0, 1, 3].choose(&mut rng).unwrap(),
        [1 << 20, 400].choose(&mut rng).unwrap(),
    );
    let _ = writeln!(s, "[replica]\nkv_budget_tokens = {}", rng.random_range(1000..=5000));

    if rng.random_bool(0.6) {
        let _ = writeln!(
            s,
            "[workload]\nkind = \"tree\"\nbranching = {}\ndepth = {}\ntrees_per_client = {}\nthink_ms = {}",
            rng.random_range(1..=3),
            rng.random_range(1..=3),
            rng.random_range(1..=2),
            rng.random_range(0..=200),
        );
        let _ = writeln!(s, "question = {{ median = 120.0, sigma = 0.5, min = 8, max = 300 }}");
        let _ = writeln!(s, "output = {{ median = 30.0, sigma = 0.8, min = 1, max = 150 }}");
    } else {
        let _ = writeln!(
            s,
            "[workload]\nkind = \"diurnal\"\nsessions = {}",
            rng.random_range(1..=20)
        );
        let _ = writeln!(s, "prompt = {{ median = 100.0, sigma = 0.5, min = 8, max = 400 }}");
        let _ = writeln!(s, "output = {{ median = 30.0, sigma = 0.8, min = 1, max = 150 }}");
        let _ = writeln!(s, "[workload.schedule]\nhours = 1\nms_per_hour = 20000");
        for r in regions {
            let _ = writeln!(
                s,
                "[[workload.schedule.regions]]\nname = \"{r}\"\nbase_rate = {}\namplitude = {}\nphase_hours = {}",
                rng.random_range(0..=400),
                rng.random_range(0.0..0.9),
                rng.random_range(0..24),
            );
        }
    }

    for (i, r) in regions.iter().enumerate() {
        let _ = writeln!(
            s,
            "[[regions]]\nname = \"{r}\"\nreplicas = {}\nclients = {}",
            replicas[i], clients[i]
        );
    }

    // Balancers default to one per region with replicas.
    let n_lbs = replicas.iter().filter(|&&r| r > 0).count() as u32;
    for b in 0..n_lbs {
        if rng.random_bool(0.4) {
            let at = rng.random_range(0..=3000);
            let _ = write!(s, "[[failures]]\nbalancer = {b}\nat_ms = {at}\n");
            if rng.random_bool(0.7) || b == 0 {
                let _ = writeln!(s, "recover_at_ms = {}", at + rng.random_range(1..=3000));
            }
        }
    }
    s
}

/// One run, audited, plus a second run for byte-for-byte comparison.
pub fn run_and_check(toml: &str) -> Result<Vec<LogRecord>, String> {
    let scenario = Scenario::from_toml_str(toml).map_err(|e| format!("scenario: {e}"))?;
    let run = |audit| {
        Engine::new(&scenario, None, EngineOptions { audit })
            .and_then(|mut e| e.run())
            .map_err(|e| format!("run: {e}"))
    };
    let first = run(true)?;
    let second = run(false)?;
    if log_to_string(&first.log) != log_to_string(&second.log) {
        return Err("two runs of the same scenario produced different logs".into());
    }
    check_log(&first.log)?;
    Ok(first.log)
}

/// FCFS per balancer, local-first, single-hop forwarding, token budget, and
/// completion of every issued request.
pub fn check_log(log: &[LogRecord]) -> Result<(), String> {
    let budget = match log.first().map(|r| &r.event) {
        Some(LogEvent::Meta { kv_budget, .. }) => *kv_budget,
        _ => return Err("log does not start with meta".into()),
    };
    let mut queues: BTreeMap<u32, VecDeque<(String, bool)>> = BTreeMap::new();
    let mut down: BTreeSet<u32> = BTreeSet::new();
    let mut issued: BTreeSet<&str> = BTreeSet::new();
    let mut done: BTreeSet<&str> = BTreeSet::new();
    let mut last_ts = 0;
    let mut end = None;

    for (i, rec) in log.iter().enumerate() {
        if rec.ts < last_ts {
            return Err(format!("record {i} goes back in time"));
        }
        last_ts = rec.ts;
        let at = |msg: String| format!("record {i} (t={}): {msg}", rec.ts);
        match &rec.event {
            LogEvent::Issue { request_id, .. } => {
                issued.insert(request_id);
            }
            LogEvent::ClientDone { request_id } => {
                if !done.insert(request_id) {
                    return Err(at(format!("{request_id} completed twice")));
                }
            }
            LogEvent::Enqueue {
                lb,
                request_id,
                forwarded,
            } => {
                if down.contains(lb) {
                    return Err(at(format!("balancer {lb} accepted work while down")));
                }
                queues
                    .entry(*lb)
                    .or_default()
                    .push_back((request_id.clone(), *forwarded));
            }
            LogEvent::RouteLocal { lb, request_id, .. } | LogEvent::Forward { lb, request_id, .. } => {
                if down.contains(lb) {
                    return Err(at(format!("balancer {lb} routed while down")));
                }
                let head = queues.entry(*lb).or_default().pop_front();
                let Some((head, forwarded)) = head else {
                    return Err(at(format!("balancer {lb} routed {request_id} from an empty queue")));
                };
                if &head != request_id {
                    return Err(at(format!("balancer {lb} routed {request_id} ahead of {head}")));
                }
                if let LogEvent::Forward { local_avail, .. } = &rec.event {
                    if *local_avail != 0 {
                        return Err(at(format!(
                            "{request_id} forwarded with {local_avail} local replicas free"
                        )));
                    }
                    if forwarded {
                        return Err(at(format!("{request_id} forwarded a second hop")));
                    }
                }
            }
            LogEvent::Admit { memory, .. } | LogEvent::Complete { memory, .. } => {
                if *memory > budget {
                    return Err(at(format!("replica holds {memory} tokens, budget {budget}")));
                }
            }
            LogEvent::Failure { lb } => {
                down.insert(*lb);
            }
            LogEvent::Recover { lb } => {
                down.remove(lb);
            }
            LogEvent::Detect { lb, .. } => {
                // The failed balancer's queue moves to its adopter.
                queues.remove(lb);
            }
            LogEvent::End { in_flight } => end = Some(*in_flight),
            _ => {}
        }
    }
    match end {
        Some(0) => {}
        Some(n) => return Err(format!("{n} requests still in flight at the end")),
        None => return Err("log has no end record".into()),
    }
    if let Some(lost) = issued.difference(&done).next() {
        return Err(format!("{lost} was issued but never completed"));
    }
    Ok(())
}
