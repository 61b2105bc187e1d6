//! Deterministic k-means over 2-d points: k-means++ seeding, Lloyd
//! iterations to a fixed tolerance, farthest-point reseeding for empty
//! clusters. Ties break toward the lowest index everywhere, so results are
//! a pure function of (points, k, seed).

use crate::error::{CaeError, Result};
use crate::rng::{stream_rng, Stream};
use rand::Rng;

pub const MAX_ITERS: usize = 100;
pub const TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<[f64; 2]>,
    /// Set when there were fewer distinct points than clusters.
    pub degenerate: bool,
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    dx * dx + dy * dy
}

pub fn kmeans(points: &[[f64; 2]], k: usize, seed: u64) -> Result<KMeansResult> {
    if points.is_empty() {
        return Err(CaeError::InvalidArgument("k-means needs at least one point".into()));
    }
    if k == 0 {
        return Err(CaeError::InvalidArgument("k-means needs k >= 1".into()));
    }
    let n = points.len();
    let mut rng = stream_rng(seed, Stream::KMeans, 0);

    let mut distinct = 0usize;
    'outer: for (i, p) in points.iter().enumerate() {
        for q in &points[..i] {
            if p == q {
                continue 'outer;
            }
        }
        distinct += 1;
        if distinct >= k {
            break;
        }
    }
    let degenerate = distinct < k;

    // k-means++ seeding.
    let mut centroids: Vec<[f64; 2]> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..n)]);
    let mut d2: Vec<f64> = points.iter().map(|&p| dist2(p, centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut threshold = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                threshold -= w;
                if threshold <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(points[idx]);
        for (i, &p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, centroids[centroids.len() - 1]));
        }
    }

    let mut assignments = vec![0usize; n];
    for _ in 0..MAX_ITERS {
        // Assign to the nearest centroid, lowest index on ties.
        for (i, &p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = dist2(p, centroids[0]);
            for (c, &cent) in centroids.iter().enumerate().skip(1) {
                let d = dist2(p, cent);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            assignments[i] = best;
        }

        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        // Reseed empty clusters at the point farthest from its centroid,
        // preferring donors that keep their cluster nonempty.
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far_i = usize::MAX;
            let mut far_d = -1.0;
            for (i, &p) in points.iter().enumerate() {
                if counts[assignments[i]] <= 1 {
                    continue;
                }
                let d = dist2(p, centroids[assignments[i]]);
                if d > far_d {
                    far_d = d;
                    far_i = i;
                }
            }
            if far_i == usize::MAX {
                // All donors are singletons; take the first point.
                far_i = 0;
            }
            counts[assignments[far_i]] -= 1;
            assignments[far_i] = c;
            counts[c] += 1;
            centroids[c] = points[far_i];
        }

        let mut sums = vec![[0.0f64; 2]; k];
        for (i, &p) in points.iter().enumerate() {
            sums[assignments[i]][0] += p[0];
            sums[assignments[i]][1] += p[1];
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let new = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
            shift = shift.max(dist2(new, centroids[c]).sqrt());
            centroids[c] = new;
        }
        if shift < TOL {
            break;
        }
    }

    // Final assignment against the converged centroids.
    for (i, &p) in points.iter().enumerate() {
        let mut best = 0usize;
        let mut best_d = dist2(p, centroids[0]);
        for (c, &cent) in centroids.iter().enumerate().skip(1) {
            let d = dist2(p, cent);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        assignments[i] = best;
    }

    Ok(KMeansResult {
        assignments,
        centroids,
        degenerate,
    })
}

/// Same partition up to a relabeling of cluster ids.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = std::collections::HashMap::new();
    let mut bwd = std::collections::HashMap::new();
    for (&x, &y) in a.iter().zip(b.iter()) {
        if *fwd.entry(x).or_insert(y) != y || *bwd.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_tight_groups_split_perfectly() {
        let mut points = Vec::new();
        for i in 0..10 {
            let eps = i as f64 * 1e-4;
            points.push([1.0 + eps, 0.0]);
            points.push([-1.0 - eps, 0.0]);
        }
        let r = kmeans(&points, 2, 0).unwrap();
        assert!(!r.degenerate);
        for pair in r.assignments.chunks_exact(2) {
            assert_ne!(pair[0], pair[1]);
        }
        let left: Vec<usize> = r.assignments.iter().step_by(2).copied().collect();
        assert!(left.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn identical_points_are_degenerate_but_deterministic() {
        let points = vec![[0.5, 0.5]; 8];
        let a = kmeans(&points, 2, 3).unwrap();
        let b = kmeans(&points, 2, 3).unwrap();
        assert!(a.degenerate);
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let points: Vec<[f64; 2]> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.41;
                [t.cos(), (t * 1.3).sin()]
            })
            .collect();
        let a = kmeans(&points, 4, 9).unwrap();
        let b = kmeans(&points, 4, 9).unwrap();
        assert_eq!(a.assignments, b.assignments);
    }

    /// Exhaustive oracle: enumerate every assignment of 12 points to 3
    /// clusters and take the minimum total within-cluster squared distance.
    #[test]
    fn planted_three_clusters_match_exhaustive_optimum() {
        let centers = [[1.0, 0.0], [-0.5, 0.8], [-0.5, -0.8]];
        let offsets = [[0.02, 0.0], [-0.02, 0.01], [0.0, -0.02], [0.01, 0.02]];
        let mut points = Vec::new();
        for c in &centers {
            for o in &offsets {
                points.push([c[0] + o[0], c[1] + o[1]]);
            }
        }

        let sse = |assign: &[usize]| -> f64 {
            let mut sums = vec![[0.0f64; 2]; 3];
            let mut counts = [0usize; 3];
            for (i, &a) in assign.iter().enumerate() {
                sums[a][0] += points[i][0];
                sums[a][1] += points[i][1];
                counts[a] += 1;
            }
            let mut total = 0.0;
            for (i, &a) in assign.iter().enumerate() {
                if counts[a] == 0 {
                    continue;
                }
                let c = [sums[a][0] / counts[a] as f64, sums[a][1] / counts[a] as f64];
                total += dist2(points[i], c);
            }
            total
        };

        let mut best = vec![0usize; 12];
        let mut best_cost = f64::INFINITY;
        let mut assign = vec![0usize; 12];
        loop {
            let cost = sse(&assign);
            if cost < best_cost {
                best_cost = cost;
                best.copy_from_slice(&assign);
            }
            // Next assignment in base-3 counting.
            let mut i = 0;
            loop {
                if i == 12 {
                    break;
                }
                assign[i] += 1;
                if assign[i] < 3 {
                    break;
                }
                assign[i] = 0;
                i += 1;
            }
            if i == 12 {
                break;
            }
        }

        let r = kmeans(&points, 3, 1).unwrap();
        assert!(same_partition(&r.assignments, &best));
        let r_cost = sse(&r.assignments);
        assert!((r_cost - best_cost).abs() < 1e-12);
    }
}
