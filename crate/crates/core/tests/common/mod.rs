//! Brute-force oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

pub mod criteria;
pub mod protocol;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regionlb::ring::{key_point, vnode_point, HashRing};
use regionlb::trie::PrefixTrie;
use regionlb::types::{TargetId, Token};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Lookup by linear scan over every (point, target) pair, sorted from scratch.
pub fn ring_oracle(
    targets: &BTreeSet<TargetId>,
    vnodes: u32,
    seed: u64,
    key: &str,
    available: &BTreeSet<TargetId>,
) -> Option<TargetId> {
    let mut all: Vec<(u64, TargetId)> = targets
        .iter()
        .flat_map(|&t| (0..vnodes).map(move |v| (vnode_point(t, v, seed), t)))
        .collect();
    all.sort();
    let h = key_point(key, seed);
    let after = all.iter().filter(|(p, _)| *p >= h);
    let before = all.iter().filter(|(p, _)| *p < h);
    after.chain(before).map(|&(_, t)| t).find(|t| available.contains(t))
}

fn random_key(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..24);
    (0..n).map(|_| rng.random_range(b'a'..=b'z') as char).collect()
}

fn random_targets(rng: &mut ChaCha8Rng) -> BTreeSet<TargetId> {
    let n = rng.random_range(1..=16);
    let mut out = BTreeSet::new();
    while out.len() < n {
        out.insert(rng.random_range(0..64));
    }
    out
}

/// `lookups` random (ring, key, availability) lookups against the oracle.
pub fn check_ring_lookups(seed: u64, lookups: usize) -> Result<(), String> {
    let mut rng = rng(seed);
    let mut done = 0;
    while done < lookups {
        let targets = random_targets(&mut rng);
        let vnodes = rng.random_range(1..=120);
        let ring_seed = rng.random::<u64>();
        let ring = HashRing::build(targets.iter().copied(), vnodes, ring_seed).map_err(|e| e.to_string())?;
        for _ in 0..50.min(lookups - done) {
            let key = random_key(&mut rng);
            let available: BTreeSet<TargetId> = targets.iter().copied().filter(|_| rng.random_bool(0.6)).collect();
            let got = ring.lookup(&key, &available).ok();
            let want = ring_oracle(&targets, vnodes, ring_seed, &key, &available);
            if got != want {
                return Err(format!(
                    "targets {targets:?} vnodes {vnodes} seed {ring_seed} key {key:?} avail {available:?}: got {got:?}, oracle {want:?}"
                ));
            }
            done += 1;
        }
    }
    Ok(())
}

/// Removing one target moves only the keys that mapped to it.
pub fn check_ring_removals(seed: u64, rings: usize, keys: usize) -> Result<(), String> {
    let mut rng = rng(seed);
    for _ in 0..rings {
        let mut targets = random_targets(&mut rng);
        if targets.len() == 1 {
            targets.insert(targets.iter().next().unwrap() + 1);
        }
        let ring_seed = rng.random::<u64>();
        let ring = HashRing::build(targets.iter().copied(), 100, ring_seed).map_err(|e| e.to_string())?;
        let gone = *targets.iter().nth(rng.random_range(0..targets.len())).unwrap();
        let smaller = ring.remove_target(gone).map_err(|e| e.to_string())?;
        let rest: BTreeSet<TargetId> = targets.iter().copied().filter(|&t| t != gone).collect();
        for _ in 0..keys {
            let key = random_key(&mut rng);
            let before = ring.lookup(&key, &targets).map_err(|e| e.to_string())?;
            let after = smaller.lookup(&key, &rest).map_err(|e| e.to_string())?;
            if before != gone && before != after {
                return Err(format!("key {key:?} moved {before} -> {after} when {gone} left"));
            }
            if after == gone {
                return Err(format!("key {key:?} still maps to removed {gone}"));
            }
        }
    }
    Ok(())
}

/// Retained-insertion log with the same refresh and FIFO eviction rules.
#[derive(Debug, Default)]
pub struct TrieOracle {
    next_seq: u64,
    max_size: usize,
    log: Vec<(u64, Vec<Token>, TargetId)>,
}

impl TrieOracle {
    pub fn new(max_size: usize) -> Self {
        Self {
            max_size,
            ..Default::default()
        }
    }

    pub fn size(&self) -> usize {
        let prefixes: BTreeSet<&[Token]> = self
            .log
            .iter()
            .flat_map(|(_, p, _)| (1..=p.len()).map(move |i| &p[..i]))
            .collect();
        prefixes.len()
    }

    pub fn insert(&mut self, tokens: &[Token], target: TargetId) {
        if tokens.is_empty() {
            return;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        if let Some(i) = self.log.iter().position(|(_, p, t)| p == tokens && *t == target) {
            self.log.remove(i);
            self.log.push((seq, tokens.to_vec(), target));
            return;
        }
        self.log.push((seq, tokens.to_vec(), target));
        while self.size() > self.max_size && !self.log.is_empty() {
            self.log.remove(0);
        }
    }

    /// Per-node `target -> last_seq`, keyed by path; the root is the empty path.
    pub fn nodes(&self) -> BTreeMap<Vec<Token>, BTreeMap<TargetId, u64>> {
        let mut out: BTreeMap<Vec<Token>, BTreeMap<TargetId, u64>> = BTreeMap::new();
        for (seq, p, t) in &self.log {
            for i in 0..=p.len() {
                let e = out.entry(p[..i].to_vec()).or_default().entry(*t).or_insert(0);
                *e = (*e).max(*seq);
            }
        }
        out
    }

    /// Longest common prefix over available retained insertions; ties by load then id.
    pub fn best(
        &self,
        query: &[Token],
        available: &BTreeSet<TargetId>,
        load: &BTreeMap<TargetId, u64>,
    ) -> Option<(TargetId, usize)> {
        if query.is_empty() {
            return None;
        }
        let lcp = |p: &[Token]| p.iter().zip(query).take_while(|(a, b)| a == b).count();
        let depth = self
            .log
            .iter()
            .filter(|(_, _, t)| available.contains(t))
            .map(|(_, p, _)| lcp(p))
            .max()?;
        self.log
            .iter()
            .filter(|(_, p, t)| available.contains(t) && lcp(p) == depth)
            .map(|(_, _, t)| *t)
            .min_by_key(|t| (load.get(t).copied().unwrap_or(0), *t))
            .map(|t| (t, depth))
    }
}

/// Parses `PrefixTrie::dump` into the same shape as [`TrieOracle::nodes`].
pub fn parse_dump(dump: &str) -> BTreeMap<Vec<Token>, BTreeMap<TargetId, u64>> {
    let mut out = BTreeMap::new();
    for line in dump.lines() {
        let (path, recs) = line.split_once(" -> ").expect("dump line");
        let path = path.trim_start_matches('[').trim_end_matches(']');
        let path: Vec<Token> = if path.is_empty() {
            Vec::new()
        } else {
            path.split(',').map(|t| t.parse().unwrap()).collect()
        };
        let recs = recs.trim_start_matches('{').trim_end_matches('}');
        let recs: BTreeMap<TargetId, u64> = recs
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|r| {
                let (t, s) = r.split_once(':').unwrap();
                (t.parse().unwrap(), s.parse().unwrap())
            })
            .collect();
        if !(path.is_empty() && recs.is_empty()) {
            out.insert(path, recs);
        }
    }
    out
}

/// Random trie histories: after every insert the trie must equal the replayed
/// log node for node; after the history, `queries` random lookups must equal
/// the scan oracle, pruned and unpruned alike. Returns the number of queries run.
pub fn check_trie_cases(seed: u64, queries: usize) -> Result<usize, String> {
    let mut rng = rng(seed);
    let mut done = 0;
    while done < queries {
        let max_size = if rng.random_bool(0.3) {
            1 << 20
        } else {
            rng.random_range(4..80)
        };
        let mut trie = PrefixTrie::new(max_size);
        let mut oracle = TrieOracle::new(max_size);
        let alphabet = rng.random_range(2..6);
        let inserts = rng.random_range(0..=50);
        let n_targets = rng.random_range(1..=5);
        let random_seq = |rng: &mut ChaCha8Rng, max: usize| -> Vec<Token> {
            let n = rng.random_range(0..=max);
            (0..n).map(|_| rng.random_range(1..=alphabet)).collect()
        };
        for _ in 0..inserts {
            let p = random_seq(&mut rng, 12);
            let t = rng.random_range(0..n_targets);
            trie.insert(&p, t);
            oracle.insert(&p, t);
            trie.check_invariants()
                .map_err(|e| format!("after insert {p:?}->{t}: {e}"))?;
            if trie.size() != oracle.size() {
                return Err(format!("size {} vs oracle {}", trie.size(), oracle.size()));
            }
            let got = parse_dump(&trie.dump());
            let want = oracle.nodes();
            if got != want {
                return Err(format!(
                    "node records diverge after {p:?}->{t}:\n{}\n{want:?}",
                    trie.dump()
                ));
            }
        }
        for _ in 0..10.min(queries - done) {
            let q = random_seq(&mut rng, 14);
            let available: BTreeSet<TargetId> = (0..n_targets).filter(|_| rng.random_bool(0.6)).collect();
            let load: BTreeMap<TargetId, u64> = (0..n_targets).map(|t| (t, rng.random_range(0..3))).collect();
            let is_av = |t: TargetId| available.contains(&t);
            let ld = |t: TargetId| load[&t];
            let pruned = trie.max_prefix_match_by(&q, is_av, ld);
            let unpruned = trie.max_prefix_match_unpruned(&q, is_av, ld);
            if pruned != unpruned {
                return Err(format!("query {q:?}: pruned {pruned:?} vs unpruned {unpruned:?}"));
            }
            let got = pruned.map(|m| (m.target, m.matched_len));
            let want = oracle.best(&q, &available, &load);
            if got != want {
                return Err(format!(
                    "query {q:?} avail {available:?}: got {got:?}, oracle {want:?}\n{}",
                    trie.dump()
                ));
            }
            if let Some(m) = pruned {
                let r = m.matched_len as f64 / q.len() as f64;
                if (m.hit_ratio - r).abs() > 1e-12 {
                    return Err(format!("hit ratio {} for {}/{}", m.hit_ratio, m.matched_len, q.len()));
                }
            }
            done += 1;
        }
    }
    Ok(done)
}
