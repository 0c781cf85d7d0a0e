use std::collections::BTreeSet;

use super::{CandidateSet, SelectionPolicy};
use crate::types::{RoutingView, TargetId};

/// Rotation over the known targets.
///
/// The cursor only moves past a target when that target is chosen, so a
/// target skipped for being unavailable keeps its turn for the next call.
#[derive(Debug, Clone)]
pub struct RoundRobin {
    order: Vec<TargetId>,
    cursor: usize,
}

impl RoundRobin {
    pub fn new(targets: &BTreeSet<TargetId>) -> Self {
        Self {
            order: targets.iter().copied().collect(),
            cursor: 0,
        }
    }
}

impl SelectionPolicy for RoundRobin {
    fn name(&self) -> &'static str {
        "rr"
    }

    fn select(&mut self, _request: &RoutingView<'_>, candidates: &CandidateSet) -> Option<TargetId> {
        let n = self.order.len();
        if n == 0 {
            return None;
        }
        let first_ok = (0..n)
            .map(|i| (self.cursor + i) % n)
            .find(|&i| candidates.is_available(self.order[i]))?;
        let chosen = self.order[first_ok];
        if first_ok == self.cursor % n {
            self.cursor = (first_ok + 1) % n;
        }
        Some(chosen)
    }

    fn set_targets(&mut self, targets: &BTreeSet<TargetId>) {
        let current = self.order.get(self.cursor % self.order.len().max(1)).copied();
        self.order = targets.iter().copied().collect();
        self.cursor = current
            .and_then(|c| self.order.iter().position(|&t| t >= c))
            .unwrap_or(0);
    }
}
