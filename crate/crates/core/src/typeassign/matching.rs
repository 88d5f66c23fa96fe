//! Capacitated deferred acceptance (images propose, types hold up to their
//! quota) over a dense distance matrix, plus a blocking-pair scan.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Lower distance is preferred on both sides. Equal distances fall back to
/// the smaller index (type index for images, image rank for types).
#[derive(Debug, Clone, Copy)]
struct Key {
    distance: f64,
    tie: usize,
}

impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.tie.cmp(&other.tie))
    }
}

/// `distances[i][t]`: cost of image `i` under type `t`. `image_rank[i]` breaks
/// ties on the type side (smaller is preferred). Returns the type index of
/// every image. Requires `capacities` to sum to the number of images.
pub fn deferred_acceptance(distances: &[Vec<f64>], capacities: &[usize], image_rank: &[usize]) -> Vec<usize> {
    let n = distances.len();
    let k = capacities.len();
    assert_eq!(image_rank.len(), n);
    assert_eq!(capacities.iter().sum::<usize>(), n, "capacities must cover every image");

    let preferences: Vec<Vec<usize>> = distances
        .iter()
        .map(|row| {
            assert_eq!(row.len(), k);
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by_key(|&t| Key {
                distance: row[t],
                tie: t,
            });
            order
        })
        .collect();

    // Max-heap per type: the top is the currently worst-held image.
    let mut held: Vec<BinaryHeap<(Key, usize)>> = (0..k).map(|t| BinaryHeap::with_capacity(capacities[t])).collect();
    let mut next = vec![0usize; n];
    let mut free: Vec<usize> = (0..n).rev().collect();

    while let Some(i) = free.pop() {
        let t = preferences[i][next[i]];
        next[i] += 1;
        let key = Key {
            distance: distances[i][t],
            tie: image_rank[i],
        };
        if held[t].len() < capacities[t] {
            held[t].push((key, i));
            continue;
        }
        match held[t].peek() {
            Some(&(worst, _)) if key < worst => {
                let (_, evicted) = held[t].pop().expect("peeked");
                held[t].push((key, i));
                free.push(evicted);
            }
            _ => free.push(i),
        }
    }

    let mut assignment = vec![usize::MAX; n];
    for (t, heap) in held.iter().enumerate() {
        for &(_, i) in heap.iter() {
            assignment[i] = t;
        }
    }
    assignment
}

/// First `(image, type)` pair that would both rather be matched together, if
/// any. A type blocks with an image when it has spare capacity or holds an
/// image it ranks below the candidate.
pub fn find_blocking_pair(
    distances: &[Vec<f64>],
    capacities: &[usize],
    image_rank: &[usize],
    assignment: &[usize],
) -> Option<(usize, usize)> {
    let k = capacities.len();
    let type_key = |i: usize, t: usize| Key {
        distance: distances[i][t],
        tie: image_rank[i],
    };
    let image_key = |i: usize, t: usize| Key {
        distance: distances[i][t],
        tie: t,
    };
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &t) in assignment.iter().enumerate() {
        members[t].push(i);
    }
    for (i, &current) in assignment.iter().enumerate() {
        for t in 0..k {
            if t == current || capacities[t] == 0 || image_key(i, t) >= image_key(i, current) {
                continue;
            }
            let has_room = members[t].len() < capacities[t];
            let displaces = members[t].iter().any(|&j| type_key(i, t) < type_key(j, t));
            if has_room || displaces {
                return Some((i, t));
            }
        }
    }
    None
}
