use std::collections::BTreeSet;

use super::{CandidateSet, SelectionPolicy};
use crate::ring::HashRing;
use crate::types::{RoutingView, TargetId};

/// Ring lookup on the request's session key, skipping unavailable targets.
#[derive(Debug, Clone)]
pub struct ConsistentHash {
    ring: Option<HashRing>,
    vnodes: u32,
    seed: u64,
}

impl ConsistentHash {
    pub fn new(targets: &BTreeSet<TargetId>, vnodes: u32, seed: u64) -> Self {
        Self {
            ring: HashRing::build(targets.iter().copied(), vnodes, seed).ok(),
            vnodes,
            seed,
        }
    }

    pub fn ring(&self) -> Option<&HashRing> {
        self.ring.as_ref()
    }
}

impl SelectionPolicy for ConsistentHash {
    fn name(&self) -> &'static str {
        "ch"
    }

    fn select(&mut self, request: &RoutingView<'_>, candidates: &CandidateSet) -> Option<TargetId> {
        self.ring
            .as_ref()?
            .lookup_by(request.session_key, |t| candidates.is_available(t))
            .ok()
    }

    fn set_targets(&mut self, targets: &BTreeSet<TargetId>) {
        let Some(ring) = self.ring.take() else {
            self.ring = HashRing::build(targets.iter().copied(), self.vnodes, self.seed).ok();
            return;
        };
        if targets.is_empty() {
            return;
        }
        // Grow first so the ring is never emptied mid-way.
        let mut next = ring;
        for &t in targets.difference(&next.targets().clone()) {
            next = next.add_target(t).expect("absent target");
        }
        for &t in next.targets().clone().difference(targets) {
            next = next.remove_target(t).expect("present target");
        }
        self.ring = Some(next);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_key_same_target() {
        let targets: BTreeSet<TargetId> = (0..4).collect();
        let mut ch = ConsistentHash::new(&targets, 100, 1);
        let c = CandidateSet::from_loads((0..4).map(|i| (i, 0)));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let key = format!("user-{}", rng.random::<u32>());
            let v = RoutingView {
                id: "x",
                session_key: &key,
                origin_region: "r",
                prompt: &[1],
            };
            let a = ch.select(&v, &c);
            let b = ch.select(&v, &c);
            assert_eq!(a, b);
            assert!(a.is_some());
        }
    }

    #[test]
    fn retargeting_matches_fresh_build() {
        let mut ch = ConsistentHash::new(&[1, 2, 3].into(), 20, 9);
        ch.set_targets(&[2, 3, 4, 5].into());
        let fresh = HashRing::build([2, 3, 4, 5], 20, 9).unwrap();
        assert_eq!(ch.ring().unwrap(), &fresh);
    }
}
