//! Consistent-hash ring with virtual nodes and availability skipping.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::hash::xxh64;
use crate::types::TargetId;

pub const DEFAULT_VNODES: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct RingEntry {
    pub point: u64,
    pub target: TargetId,
}

/// An immutable ring snapshot. Entries are sorted by `(point, target)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashRing {
    entries: Vec<RingEntry>,
    targets: BTreeSet<TargetId>,
    vnodes_per_target: u32,
    seed: u64,
}

/// Hash point of one virtual node.
pub fn vnode_point(target: TargetId, vnode: u32, seed: u64) -> u64 {
    let mut buf = [0u8; 8];
    buf[..4].copy_from_slice(&target.to_le_bytes());
    buf[4..].copy_from_slice(&vnode.to_le_bytes());
    xxh64(&buf, seed)
}

pub fn key_point(key: &str, seed: u64) -> u64 {
    xxh64(key.as_bytes(), seed)
}

impl HashRing {
    pub fn build(targets: impl IntoIterator<Item = TargetId>, vnodes_per_target: u32, seed: u64) -> Result<Self> {
        if vnodes_per_target == 0 {
            return Err(Error::Domain("vnodes_per_target must be positive".into()));
        }
        let targets: BTreeSet<TargetId> = targets.into_iter().collect();
        if targets.is_empty() {
            return Err(Error::EmptyRing);
        }
        let mut entries: Vec<RingEntry> = targets
            .iter()
            .flat_map(|&t| {
                (0..vnodes_per_target).map(move |v| RingEntry {
                    point: vnode_point(t, v, seed),
                    target: t,
                })
            })
            .collect();
        entries.sort_unstable();
        Ok(Self {
            entries,
            targets,
            vnodes_per_target,
            seed,
        })
    }

    pub fn entries(&self) -> &[RingEntry] {
        &self.entries
    }

    pub fn targets(&self) -> &BTreeSet<TargetId> {
        &self.targets
    }

    pub fn vnodes_per_target(&self) -> u32 {
        self.vnodes_per_target
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// First target at or clockwise after `hash(key)` that passes `is_available`.
    ///
    /// Unavailable virtual nodes are skipped one entry at a time, wrapping once
    /// around the ring.
    pub fn lookup_by(&self, key: &str, is_available: impl Fn(TargetId) -> bool) -> Result<TargetId> {
        let h = key_point(key, self.seed);
        let start = self.entries.partition_point(|e| e.point < h);
        let n = self.entries.len();
        (0..n)
            .map(|i| self.entries[(start + i) % n].target)
            .find(|&t| is_available(t))
            .ok_or(Error::NoCandidate)
    }

    pub fn lookup(&self, key: &str, available: &BTreeSet<TargetId>) -> Result<TargetId> {
        if available.is_empty() {
            return Err(Error::NoCandidate);
        }
        self.lookup_by(key, |t| available.contains(&t))
    }

    /// A new ring with `target`'s virtual nodes added. Other entries are untouched.
    pub fn add_target(&self, target: TargetId) -> Result<Self> {
        if self.targets.contains(&target) {
            return Err(Error::DuplicateTarget(target));
        }
        let mut next = self.clone();
        next.targets.insert(target);
        for v in 0..self.vnodes_per_target {
            let e = RingEntry {
                point: vnode_point(target, v, self.seed),
                target,
            };
            let at = next.entries.partition_point(|x| *x < e);
            next.entries.insert(at, e);
        }
        Ok(next)
    }

    pub fn remove_target(&self, target: TargetId) -> Result<Self> {
        if !self.targets.contains(&target) {
            return Err(Error::UnknownTarget(target));
        }
        if self.targets.len() == 1 {
            return Err(Error::LastTarget);
        }
        let mut next = self.clone();
        next.targets.remove(&target);
        next.entries.retain(|e| e.target != target);
        Ok(next)
    }
}
