use std::collections::{HashSet, VecDeque};

use biant_core::eval::{edit_distance, EdConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook full-matrix Wagner-Fischer.
fn reference(a: &[u32], b: &[u32]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = *[d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + sub]
                .iter()
                .min()
                .unwrap();
        }
    }
    d[a.len()][b.len()]
}

/// Shortest edit path by breadth-first search over single edits.
fn bfs(a: &[u32], b: &[u32], alphabet: u32) -> usize {
    let max_len = a.len().max(b.len());
    let mut seen = HashSet::from([a.to_vec()]);
    let mut queue = VecDeque::from([(a.to_vec(), 0)]);
    while let Some((s, d)) = queue.pop_front() {
        if s == b {
            return d;
        }
        let mut next = Vec::new();
        for i in 0..s.len() {
            let mut del = s.clone();
            del.remove(i);
            next.push(del);
            for c in 0..alphabet {
                if c != s[i] {
                    let mut sub = s.clone();
                    sub[i] = c;
                    next.push(sub);
                }
            }
        }
        if s.len() < max_len {
            for i in 0..=s.len() {
                for c in 0..alphabet {
                    let mut ins = s.clone();
                    ins.insert(i, c);
                    next.push(ins);
                }
            }
        }
        for n in next {
            if seen.insert(n.clone()) {
                queue.push_back((n, d + 1));
            }
        }
    }
    unreachable!("b is always reachable")
}

fn random_seq(rng: &mut ChaCha8Rng, max_len: usize, alphabet: u32) -> Vec<u32> {
    let len = rng.random_range(0..=max_len);
    (0..len).map(|_| rng.random_range(0..alphabet)).collect()
}

#[test]
fn matches_reference_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = EdConfig::default();
    for _ in 0..1000 {
        let a = random_seq(&mut rng, 25, 50);
        let b = random_seq(&mut rng, 25, 50);
        assert_eq!(edit_distance(&a, &b, &cfg), reference(&a, &b), "{a:?} vs {b:?}");
    }
}

#[test]
fn matches_exhaustive_search_on_tiny_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = EdConfig::default();
    for _ in 0..200 {
        let a = random_seq(&mut rng, 4, 3);
        let b = random_seq(&mut rng, 4, 3);
        assert_eq!(edit_distance(&a, &b, &cfg), bfs(&a, &b, 3), "{a:?} vs {b:?}");
    }
}

proptest! {
    #[test]
    fn metric_properties(
        a in prop::collection::vec(0u32..6, 0..12),
        b in prop::collection::vec(0u32..6, 0..12),
        c in prop::collection::vec(0u32..6, 0..12),
    ) {
        let cfg = EdConfig::default();
        let d = |x: &[u32], y: &[u32]| edit_distance(x, y, &cfg);
        prop_assert_eq!(d(&a, &a), 0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert!(d(&a, &b) <= a.len().max(b.len()));
        prop_assert!(d(&a, &b) >= a.len().abs_diff(b.len()));
        prop_assert_eq!(d(&a, &b) == 0, a == b);
    }

    #[test]
    fn transpositions_never_increase_distance(
        a in prop::collection::vec(0u32..4, 0..10),
        b in prop::collection::vec(0u32..4, 0..10),
    ) {
        let lev = edit_distance(&a, &b, &EdConfig::default());
        let osa = edit_distance(&a, &b, &EdConfig { allow_transpositions: true, ..Default::default() });
        prop_assert!(osa <= lev);
    }
}
