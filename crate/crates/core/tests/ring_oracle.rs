mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use regionlb::ring::HashRing;

#[test]
fn lookups_match_sorted_scan() {
    common::check_ring_lookups(11, 10_000).unwrap();
}

#[test]
fn removal_moves_only_own_keys() {
    common::check_ring_removals(12, 40, 250).unwrap();
}

#[test]
fn add_then_remove_round_trips() {
    let ring = HashRing::build([1, 2, 3], 50, 9).unwrap();
    let back = ring.add_target(7).unwrap().remove_target(7).unwrap();
    assert_eq!(ring, back);
}

#[test]
fn three_targets_share_keys_evenly() {
    let ring = HashRing::build([0, 1, 2], 100, 0).unwrap();
    let all: BTreeSet<u32> = [0, 1, 2].into();
    let mut counts = [0usize; 3];
    for i in 0..10_000 {
        counts[ring.lookup(&format!("key-{i}"), &all).unwrap() as usize] += 1;
    }
    for c in counts {
        let share = c as f64 / 10_000.0;
        assert!((1.0 / 6.0..=2.0 / 3.0).contains(&share), "{counts:?}");
    }
}

proptest! {
    #[test]
    fn shrinking_availability_keeps_surviving_choice(
        targets in prop::collection::btree_set(0u32..32, 1..12),
        key in "[a-z]{1,12}",
        mask in prop::collection::vec(any::<bool>(), 12),
        seed in any::<u64>(),
    ) {
        let ring = HashRing::build(targets.iter().copied(), 40, seed).unwrap();
        let before = ring.lookup(&key, &targets).unwrap();
        let shrunk: BTreeSet<u32> = targets.iter().copied().zip(mask).filter(|(_, keep)| *keep).map(|(t, _)| t).collect();
        match ring.lookup(&key, &shrunk) {
            Ok(after) => {
                prop_assert!(shrunk.contains(&after));
                if shrunk.contains(&before) {
                    prop_assert_eq!(after, before);
                }
            }
            Err(_) => prop_assert!(shrunk.is_empty()),
        }
    }

    #[test]
    fn rebuild_is_deterministic(targets in prop::collection::btree_set(0u32..32, 1..8), seed in any::<u64>()) {
        let a = HashRing::build(targets.iter().copied(), 30, seed).unwrap();
        let b = HashRing::build(targets.iter().rev().copied(), 30, seed).unwrap();
        prop_assert_eq!(a.entries(), b.entries());
    }
}
