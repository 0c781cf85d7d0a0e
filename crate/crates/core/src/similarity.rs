//! Prefix similarity between token sequences, and group-level aggregation of it.

use std::collections::BTreeMap;

use crate::error::Error;
use crate::types::Token;

/// Length of the longest common prefix of `a` and `b`.
pub fn common_prefix_len(a: &[Token], b: &[Token]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// `len(common_prefix(a, b)) / min(len(a), len(b))`.
///
/// The shorter sequence is the denominator, so a sequence that is a prefix of
/// the other scores exactly 1.
pub fn prefix_similarity(a: &[Token], b: &[Token]) -> Result<f64, Error> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("prefix similarity of an empty sequence".into()));
    }
    let shorter = a.len().min(b.len());
    Ok(common_prefix_len(a, b) as f64 / shorter as f64)
}

/// Mean similarity for one ordered pair of group labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityCell {
    pub mean: f64,
    pub pairs: usize,
}

/// Mean pairwise prefix similarity for every ordered pair of groups.
///
/// Cells with `row == col` average over distinct within-group pairs; a group of
/// one element has no such pairs and its diagonal cell is absent. Off-diagonal
/// cells average over the full cross product.
pub fn pairwise_similarity_stats<L, S>(groups: &BTreeMap<L, Vec<S>>) -> Result<BTreeMap<(L, L), SimilarityCell>, Error>
where
    L: Ord + Clone,
    S: AsRef<[Token]>,
{
    if groups.is_empty() {
        return Err(Error::Domain("no groups given".into()));
    }
    if groups.values().any(|g| g.is_empty()) {
        return Err(Error::Domain("empty group".into()));
    }

    let mut out = BTreeMap::new();
    for (la, ga) in groups {
        for (lb, gb) in groups {
            let mut sum = 0.0;
            let mut pairs = 0usize;
            if la == lb {
                for i in 0..ga.len() {
                    for j in (i + 1)..ga.len() {
                        sum += prefix_similarity(ga[i].as_ref(), ga[j].as_ref())?;
                        pairs += 1;
                    }
                }
            } else {
                for a in ga {
                    for b in gb {
                        sum += prefix_similarity(a.as_ref(), b.as_ref())?;
                        pairs += 1;
                    }
                }
            }
            if pairs > 0 {
                out.insert(
                    (la.clone(), lb.clone()),
                    SimilarityCell {
                        mean: sum / pairs as f64,
                        pairs,
                    },
                );
            }
        }
    }
    Ok(out)
}

/// Pooled within-group and cross-group mean similarity, weighting every pair equally.
pub fn within_and_cross_means<L, S>(groups: &BTreeMap<L, Vec<S>>) -> Result<(f64, f64), Error>
where
    L: Ord + Clone,
    S: AsRef<[Token]>,
{
    let cells = pairwise_similarity_stats(groups)?;
    let (mut ws, mut wn, mut cs, mut cn) = (0.0, 0usize, 0.0, 0usize);
    for ((a, b), cell) in &cells {
        if a == b {
            ws += cell.mean * cell.pairs as f64;
            wn += cell.pairs;
        } else {
            cs += cell.mean * cell.pairs as f64;
            cn += cell.pairs;
        }
    }
    if wn == 0 || cn == 0 {
        return Err(Error::Domain("need within-group and cross-group pairs".into()));
    }
    Ok((ws / wn as f64, cs / cn as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_and_disjoint() {
        assert_eq!(prefix_similarity(&[5, 6, 7], &[5, 6, 7]).unwrap(), 1.0);
        assert_eq!(prefix_similarity(&[1, 2], &[3, 4]).unwrap(), 0.0);
        let s = prefix_similarity(&[1, 2, 3], &[1, 2, 9, 9]).unwrap();
        assert!((s - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_is_domain_error() {
        assert!(prefix_similarity(&[], &[1]).is_err());
        assert!(prefix_similarity(&[1], &[]).is_err());
    }

    #[test]
    fn group_stats_trivial_cases() {
        let mut g = BTreeMap::new();
        g.insert("u", vec![vec![1u32, 2, 3], vec![1, 2, 3]]);
        let cells = pairwise_similarity_stats(&g).unwrap();
        assert_eq!(cells[&("u", "u")].mean, 1.0);

        let mut g = BTreeMap::new();
        g.insert("a", vec![vec![1u32, 2], vec![1, 3]]);
        g.insert("b", vec![vec![10u32, 11], vec![12]]);
        let cells = pairwise_similarity_stats(&g).unwrap();
        assert_eq!(cells[&("a", "b")].mean, 0.0);
        assert_eq!(cells[&("b", "a")].mean, 0.0);
    }

    #[test]
    fn singleton_group_has_no_diagonal_cell() {
        let mut g = BTreeMap::new();
        g.insert(1, vec![vec![1u32]]);
        g.insert(2, vec![vec![1u32, 2], vec![1, 2]]);
        let cells = pairwise_similarity_stats(&g).unwrap();
        assert!(!cells.contains_key(&(1, 1)));
        assert!(cells.contains_key(&(2, 2)));
        assert!(cells.contains_key(&(1, 2)));
    }

    #[test]
    fn random_corpus_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g: BTreeMap<u8, Vec<Vec<u32>>> = BTreeMap::new();
        for i in 0..20 {
            let len = rng.random_range(1..12);
            let seq: Vec<u32> = (0..len).map(|_| rng.random_range(0..3)).collect();
            g.entry(i % 3).or_default().push(seq);
        }
        let cells = pairwise_similarity_stats(&g).unwrap();

        // Oracle: flatten with labels and loop over every ordered index pair.
        let flat: Vec<(u8, &Vec<u32>)> = g.iter().flat_map(|(l, v)| v.iter().map(move |s| (*l, s))).collect();
        for a in 0..3u8 {
            for b in 0..3u8 {
                let (mut sum, mut n) = (0.0, 0);
                for (i, (li, si)) in flat.iter().enumerate() {
                    for (j, (lj, sj)) in flat.iter().enumerate() {
                        if *li != a || *lj != b {
                            continue;
                        }
                        if a == b && j <= i {
                            continue;
                        }
                        let c = si.iter().zip(sj.iter()).take_while(|(x, y)| x == y).count();
                        sum += c as f64 / si.len().min(sj.len()) as f64;
                        n += 1;
                    }
                }
                let cell = &cells[&(a, b)];
                assert_eq!(cell.pairs, n);
                assert!((cell.mean - sum / n as f64).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn symmetric(a in prop::collection::vec(0u32..4, 1..20), b in prop::collection::vec(0u32..4, 1..20)) {
            prop_assert_eq!(prefix_similarity(&a, &b).unwrap(), prefix_similarity(&b, &a).unwrap());
        }

        #[test]
        fn one_iff_prefix(a in prop::collection::vec(0u32..3, 1..10), b in prop::collection::vec(0u32..3, 1..10)) {
            let is_prefix = a.starts_with(&b) || b.starts_with(&a);
            prop_assert_eq!(prefix_similarity(&a, &b).unwrap() == 1.0, is_prefix);
        }

        #[test]
        fn extending_common_prefix_is_monotone(
            p in prop::collection::vec(0u32..5, 0..10),
            extra in prop::collection::vec(0u32..5, 1..5),
            a in prop::collection::vec(0u32..5, 1..10),
            b in prop::collection::vec(0u32..5, 1..10),
        ) {
            let mk = |p: &[u32], s: &[u32]| p.iter().chain(s).copied().collect::<Vec<_>>();
            let before = prefix_similarity(&mk(&p, &a), &mk(&p, &b)).unwrap();
            let longer: Vec<u32> = p.iter().chain(&extra).copied().collect();
            let after = prefix_similarity(&mk(&longer, &a), &mk(&longer, &b)).unwrap();
            prop_assert!(after + 1e-12 >= before);
        }
    }
}
