//! Deterministic mini-batch k-means with a full-batch refinement phase.
//!
//! Each mini-batch iteration applies the classic per-sample centroid updates
//! (per-centroid counts give the decaying step size), then evaluates the
//! full-data inertia; an update that would increase it is rolled back, so
//! the recorded inertia trace is non-increasing by construction. After the
//! mini-batch phase, full-batch Lloyd iterations run until the assignment
//! reaches a fixed point, which also makes the K = 1 centroid the exact data
//! mean.
//!
//! Tie-breaking is always "lowest centroid index wins"; distances are
//! squared Euclidean on the raw vectors.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Tuning knobs for [`kmeans_cluster`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KMeansParams {
    /// Mini-batch iterations before the full-batch refinement phase.
    pub max_iters: usize,
    pub minibatch_size: usize,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iters: 30,
            minibatch_size: 1024,
            seed: 0,
        }
    }
}

/// Clustering output. `assignments` are 1-based so they can be used directly
/// as pseudo-labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances from each point to its assigned centroid.
    pub inertia: f64,
    pub iterations_run: usize,
    /// Full-data inertia recorded after initialization and after every
    /// iteration (mini-batch and refinement); non-increasing.
    pub inertia_history: Vec<f64>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Nearest centroid of `point`; ties go to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = squared_distance(point, &centroids[0]);
    for (c, centroid) in centroids.iter().enumerate().skip(1) {
        let d = squared_distance(point, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    (best, best_d)
}

struct EvalPass {
    assignments: Vec<usize>,
    distances: Vec<f64>,
    counts: Vec<usize>,
    inertia: f64,
}

fn evaluate(points: &[&[f64]], centroids: &[Vec<f64>]) -> EvalPass {
    let mut assignments = Vec::with_capacity(points.len());
    let mut distances = Vec::with_capacity(points.len());
    let mut counts = vec![0usize; centroids.len()];
    let mut inertia = 0.0;
    for p in points {
        let (c, d) = nearest(p, centroids);
        assignments.push(c);
        distances.push(d);
        counts[c] += 1;
        inertia += d;
    }
    EvalPass {
        assignments,
        distances,
        counts,
        inertia,
    }
}

/// Move each empty cluster onto the not-yet-claimed point that lies farthest
/// from its assigned centroid. Returns true when anything moved.
fn reseed_empty_clusters(points: &[&[f64]], centroids: &mut [Vec<f64>], pass: &EvalPass) -> bool {
    let empty: Vec<usize> = pass
        .counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(i, _)| i)
        .collect();
    if empty.is_empty() {
        return false;
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    // Farthest point first; ties go to the lower point index.
    order.sort_by(|&a, &b| {
        pass.distances[b]
            .partial_cmp(&pass.distances[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    for (slot, cluster) in empty.into_iter().enumerate() {
        centroids[cluster] = points[order[slot]].to_vec();
    }
    true
}

/// Cluster `points` into `k` groups.
///
/// Initial centroids are `k` distinct seeded points; empty clusters are
/// re-seeded to the point farthest from its centroid.
pub fn kmeans_cluster(
    points: &[&[f64]],
    k: usize,
    params: &KMeansParams,
) -> Result<ClusteringResult> {
    if k == 0 {
        return Err(Error::Config(String::from("k must be at least 1")));
    }
    if points.len() < k {
        return Err(Error::Config(format!(
            "cannot form {k} clusters from {} points",
            points.len()
        )));
    }
    let dim = points[0].len();
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::InvalidInput(format!(
                "point {i} has dimension {}, expected {dim}",
                p.len()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("point {i} has non-finite entries")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    // k distinct indices via partial Fisher-Yates.
    let mut pool: Vec<usize> = (0..points.len()).collect();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
        centroids.push(points[pool[i]].to_vec());
    }

    let mut counts = vec![0usize; k];
    let mut pass = evaluate(points, &centroids);
    if reseed_empty_clusters(points, &mut centroids, &pass) {
        pass = evaluate(points, &centroids);
    }
    let mut inertia = pass.inertia;
    let mut history = vec![inertia];
    let mut iterations = 0usize;

    // Mini-batch phase with rollback on inertia regressions.
    let batch = params.minibatch_size.max(1);
    for _ in 0..params.max_iters {
        let snapshot_centroids = centroids.clone();
        let snapshot_counts = counts.clone();

        for _ in 0..batch {
            let idx = rng.random_range(0..points.len());
            let (c, _) = nearest(points[idx], &centroids);
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            for (cv, pv) in centroids[c].iter_mut().zip(points[idx].iter()) {
                *cv += eta * (pv - *cv);
            }
        }

        let mut candidate = evaluate(points, &centroids);
        if reseed_empty_clusters(points, &mut centroids, &candidate) {
            candidate = evaluate(points, &centroids);
        }
        if candidate.inertia <= inertia {
            inertia = candidate.inertia;
            pass = candidate;
        } else {
            centroids = snapshot_centroids;
            counts = snapshot_counts;
        }
        history.push(inertia);
        iterations += 1;
    }

    // Full-batch Lloyd refinement until the assignment stabilizes.
    const MAX_REFINE: usize = 100;
    for _ in 0..MAX_REFINE {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut members = vec![0usize; k];
        for (p, &c) in points.iter().zip(pass.assignments.iter()) {
            members[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        let mut candidate_centroids: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(members.iter())
            .zip(centroids.iter())
            .map(|((sum, &m), old)| {
                if m == 0 {
                    old.clone()
                } else {
                    sum.into_iter().map(|s| s / m as f64).collect()
                }
            })
            .collect();

        let mut candidate = evaluate(points, &candidate_centroids);
        if reseed_empty_clusters(points, &mut candidate_centroids, &candidate) {
            candidate = evaluate(points, &candidate_centroids);
        }
        if candidate.inertia > inertia {
            break;
        }
        let stable = candidate.assignments == pass.assignments;
        centroids = candidate_centroids;
        inertia = candidate.inertia;
        pass = candidate;
        history.push(inertia);
        iterations += 1;
        if stable {
            break;
        }
    }

    Ok(ClusteringResult {
        assignments: pass.assignments.iter().map(|&c| c + 1).collect(),
        centroids,
        inertia,
        iterations_run: iterations,
        inertia_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn owned(points: &[Vec<f64>]) -> Vec<&[f64]> {
        points.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let points: Vec<Vec<f64>> = (0..6).map(|i| alloc::vec![i as f64, -(i as f64)]).collect();
        let result = kmeans_cluster(&owned(&points), 6, &KMeansParams::default()).unwrap();
        assert_eq!(result.inertia, 0.0);
        let mut seen: Vec<usize> = result.assignments.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn k_one_centroid_is_the_mean() {
        let points: Vec<Vec<f64>> = (0..30)
            .map(|i| alloc::vec![(i % 7) as f64, (i % 5) as f64, i as f64 / 30.0])
            .collect();
        let result = kmeans_cluster(&owned(&points), 1, &KMeansParams::default()).unwrap();
        for d in 0..3 {
            let mean: f64 = points.iter().map(|p| p[d]).sum::<f64>() / points.len() as f64;
            assert!((result.centroids[0][d] - mean).abs() < 1e-9);
        }
        assert!(result.assignments.iter().all(|&a| a == 1));
    }

    #[test]
    fn inertia_history_is_non_increasing() {
        let mut points = Vec::new();
        let mut state = 123456789u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        for _ in 0..400 {
            points.push(alloc::vec![next() * 5.0, next() * 5.0, next() * 5.0]);
        }
        let params = KMeansParams {
            max_iters: 25,
            minibatch_size: 64,
            seed: 3,
        };
        let result = kmeans_cluster(&owned(&points), 8, &params).unwrap();
        for w in result.inertia_history.windows(2) {
            assert!(w[1] <= w[0], "inertia increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn assignments_are_exactly_nearest_centroid() {
        let points: Vec<Vec<f64>> = (0..50)
            .map(|i| alloc::vec![(i * 7 % 13) as f64, (i * 3 % 11) as f64])
            .collect();
        let refs = owned(&points);
        let result = kmeans_cluster(&refs, 4, &KMeansParams::default()).unwrap();
        for (p, &a) in refs.iter().zip(result.assignments.iter()) {
            let (c, _) = nearest(p, &result.centroids);
            assert_eq!(a, c + 1);
        }
        // Inertia is consistent with the assignments.
        let recomputed: f64 = refs
            .iter()
            .zip(result.assignments.iter())
            .map(|(p, &a)| squared_distance(p, &result.centroids[a - 1]))
            .sum();
        let denom = result.inertia.max(1e-300);
        assert!((recomputed - result.inertia).abs() / denom < 1e-6);
    }

    #[test]
    fn rejects_more_clusters_than_points() {
        let points: Vec<Vec<f64>> = (0..3).map(|i| alloc::vec![i as f64]).collect();
        assert!(kmeans_cluster(&owned(&points), 4, &KMeansParams::default()).is_err());
    }

    #[test]
    fn seeded_runs_are_identical() {
        let points: Vec<Vec<f64>> = (0..100)
            .map(|i| alloc::vec![(i % 9) as f64, (i % 4) as f64])
            .collect();
        let params = KMeansParams {
            max_iters: 10,
            minibatch_size: 32,
            seed: 77,
        };
        let a = kmeans_cluster(&owned(&points), 5, &params).unwrap();
        let b = kmeans_cluster(&owned(&points), 5, &params).unwrap();
        assert_eq!(a, b);
    }
}
