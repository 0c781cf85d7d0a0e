use super::{CandidateSet, SelectionPolicy};
use crate::trie::PrefixTrie;
use crate::types::{RoutingView, TargetId};

/// Longest-prefix affinity over a [`PrefixTrie`] of past routing decisions.
///
/// When the best available match covers less than `fallback_threshold` of
/// the prompt, the request goes to the least loaded candidate instead.
#[derive(Debug, Clone)]
pub struct PrefixTree {
    trie: PrefixTrie,
    fallback_threshold: f64,
}

impl PrefixTree {
    pub fn new(trie_max_size: usize, fallback_threshold: f64) -> Self {
        Self {
            trie: PrefixTrie::new(trie_max_size),
            fallback_threshold,
        }
    }

    pub fn trie_mut(&mut self) -> &mut PrefixTrie {
        &mut self.trie
    }
}

impl SelectionPolicy for PrefixTree {
    fn name(&self) -> &'static str {
        "prefix"
    }

    fn select(&mut self, request: &RoutingView<'_>, candidates: &CandidateSet) -> Option<TargetId> {
        if !candidates.has_available() {
            return None;
        }
        let best = self.trie.max_prefix_match_by(
            request.prompt,
            |t| candidates.is_available(t),
            |t| candidates.outstanding(t),
        );
        match best {
            Some(m) if m.hit_ratio >= self.fallback_threshold => Some(m.target),
            _ => candidates.least_loaded(),
        }
    }

    fn on_routed(&mut self, request: &RoutingView<'_>, target: TargetId) {
        self.trie.insert(request.prompt, target);
    }

    fn trie(&self) -> Option<&PrefixTrie> {
        Some(&self.trie)
    }
}
