//! Candidate-selection strategies.
//!
//! Each strategy implements [`SelectionPolicy`] and is registered by name in a
//! [`PolicyRegistry`]. A balancer holds two instances of the configured
//! strategy: one over its local replicas and one over its peer balancers.
//! Pushing mode ([`PushMode`]) is orthogonal and decides which candidates are
//! available in the first place.

mod consistent_hash;
mod least_load;
mod prefix_tree;
mod round_robin;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

pub use consistent_hash::ConsistentHash;
pub use least_load::LeastLoad;
pub use prefix_tree::PrefixTree;
pub use round_robin::RoundRobin;

use crate::error::{Error, Result};
use crate::ring::DEFAULT_VNODES;
use crate::trie::{PrefixTrie, DEFAULT_MAX_SIZE};
use crate::types::{RoutingView, TargetId};

pub const DEFAULT_FALLBACK_THRESHOLD: f64 = 0.5;
pub const DEFAULT_SPO_LIMIT: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub id: TargetId,
    pub outstanding: u64,
    pub pending: u64,
    pub available: bool,
}

/// Targets known to one routing layer, sorted by id, with their current stats.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CandidateSet {
    items: Vec<Candidate>,
}

impl CandidateSet {
    pub fn new(mut items: Vec<Candidate>) -> Self {
        items.sort_by_key(|c| c.id);
        items.dedup_by_key(|c| c.id);
        Self { items }
    }

    /// Convenience constructor: every listed target available with the given outstanding count.
    pub fn from_loads(loads: impl IntoIterator<Item = (TargetId, u64)>) -> Self {
        Self::new(
            loads
                .into_iter()
                .map(|(id, outstanding)| Candidate {
                    id,
                    outstanding,
                    pending: 0,
                    available: true,
                })
                .collect(),
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = &Candidate> {
        self.items.iter()
    }

    pub fn available(&self) -> impl Iterator<Item = &Candidate> {
        self.items.iter().filter(|c| c.available)
    }

    pub fn get(&self, id: TargetId) -> Option<&Candidate> {
        self.items
            .binary_search_by_key(&id, |c| c.id)
            .ok()
            .map(|i| &self.items[i])
    }

    pub fn is_available(&self, id: TargetId) -> bool {
        self.get(id).is_some_and(|c| c.available)
    }

    pub fn outstanding(&self, id: TargetId) -> u64 {
        self.get(id).map_or(0, |c| c.outstanding)
    }

    pub fn has_available(&self) -> bool {
        self.items.iter().any(|c| c.available)
    }

    /// Least outstanding available candidate, ties to the lowest id.
    pub fn least_loaded(&self) -> Option<TargetId> {
        self.available().min_by_key(|c| (c.outstanding, c.id)).map(|c| c.id)
    }
}

/// Tunables shared by every strategy constructor.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub vnodes_per_target: u32,
    pub seed: u64,
    pub trie_max_size: usize,
    pub fallback_threshold: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            vnodes_per_target: DEFAULT_VNODES,
            seed: 0,
            trie_max_size: DEFAULT_MAX_SIZE,
            fallback_threshold: DEFAULT_FALLBACK_THRESHOLD,
        }
    }
}

pub trait SelectionPolicy: Send {
    fn name(&self) -> &'static str;

    /// Picks one available candidate, or `None` when none is available.
    fn select(&mut self, request: &RoutingView<'_>, candidates: &CandidateSet) -> Option<TargetId>;

    /// Called after the request was routed to `target`.
    fn on_routed(&mut self, _request: &RoutingView<'_>, _target: TargetId) {}

    /// The target universe changed (replicas adopted or handed back).
    fn set_targets(&mut self, _targets: &BTreeSet<TargetId>) {}

    /// The prefix trie backing this strategy, if any.
    fn trie(&self) -> Option<&PrefixTrie> {
        None
    }
}

type Factory = fn(&PolicyParams, &BTreeSet<TargetId>) -> Box<dyn SelectionPolicy>;

/// Name-keyed table of strategy constructors.
pub struct PolicyRegistry {
    factories: BTreeMap<&'static str, Factory>,
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register("rr", |_, t| Box::new(RoundRobin::new(t)));
        r.register("ll", |_, _| Box::new(LeastLoad));
        r.register("ch", |p, t| {
            Box::new(ConsistentHash::new(t, p.vnodes_per_target, p.seed))
        });
        r.register("prefix", |p, _| {
            Box::new(PrefixTree::new(p.trie_max_size, p.fallback_threshold))
        });
        r
    }
}

impl PolicyRegistry {
    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn create(
        &self,
        name: &str,
        params: &PolicyParams,
        targets: &BTreeSet<TargetId>,
    ) -> Result<Box<dyn SelectionPolicy>> {
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| Error::validation("policy", format!("unknown selection policy `{name}`")))?;
        Ok(f(params, targets))
    }
}

/// How the balancer decides which replicas may receive a request right now.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PushMode {
    /// Every replica is always available.
    Blind,
    /// Available while outstanding requests stay below a fixed limit.
    SelectiveOutstanding(u32),
    /// Available while the last probe saw no pending requests.
    SelectivePending,
}

impl fmt::Display for PushMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PushMode::Blind => write!(f, "bp"),
            PushMode::SelectiveOutstanding(n) => write!(f, "sp-o:{n}"),
            PushMode::SelectivePending => write!(f, "sp-p"),
        }
    }
}

impl FromStr for PushMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bp" => Ok(PushMode::Blind),
            "sp-p" => Ok(PushMode::SelectivePending),
            "sp-o" => Ok(PushMode::SelectiveOutstanding(DEFAULT_SPO_LIMIT)),
            _ => {
                let limit = s
                    .strip_prefix("sp-o:")
                    .and_then(|n| n.parse::<u32>().ok())
                    .filter(|&n| n > 0)
                    .ok_or_else(|| Error::validation("policy", format!("bad pushing mode `{s}`")))?;
                Ok(PushMode::SelectiveOutstanding(limit))
            }
        }
    }
}

/// A selection strategy name plus a pushing mode, e.g. `prefix:sp-p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyKind {
    pub selection: String,
    pub push: PushMode,
}

impl PolicyKind {
    pub fn new(selection: &str, push: PushMode) -> Self {
        Self {
            selection: selection.to_string(),
            push,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.selection, self.push)
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    /// `<rr|ll|ch|prefix>[:<bp|sp-o:N|sp-p>]`; pushing defaults to `sp-p`.
    fn from_str(s: &str) -> Result<Self> {
        let (sel, push) = match s.split_once(':') {
            Some((a, b)) => (a, b.parse()?),
            None => (s, PushMode::SelectivePending),
        };
        if !PolicyRegistry::default().contains(sel) {
            return Err(Error::validation("policy", format!("unknown selection policy `{sel}`")));
        }
        Ok(Self::new(sel, push))
    }
}
