//! Clustering oracles: exact Lloyd's algorithm on a tiny two-blob instance
//! and an exhaustive nearest-centroid recheck.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bgsplit_core::kmeans::{kmeans_cluster, KMeansParams};

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Full-batch Lloyd's algorithm run to convergence from given centroids,
/// with the same lowest-index tie rule.
fn lloyd_to_convergence(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>) {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignments = vec![usize::MAX; points.len()];
    loop {
        let mut next: Vec<usize> = Vec::with_capacity(points.len());
        for p in points {
            let mut best = 0;
            let mut best_d = squared_distance(p, &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = squared_distance(p, centroid);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            next.push(best);
        }
        if next == assignments {
            return (assignments, centroids);
        }
        assignments = next;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(assignments.iter()) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
}

fn two_blobs(per_blob: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    // Centers 20 sigma apart.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = [[0.0, 0.0, 0.0], [20.0, 0.0, 0.0]];
    let mut points = Vec::new();
    let mut blob = Vec::new();
    for (b, center) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            points.push(
                center
                    .iter()
                    .map(|c| c + rng.random_range(-1.0..1.0))
                    .collect::<Vec<f64>>(),
            );
            blob.push(b);
        }
    }
    (points, blob)
}

#[test]
fn two_blob_instance_matches_exact_lloyd() {
    let (points, blob) = two_blobs(40, 3);
    let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
    let result = kmeans_cluster(&refs, 2, &KMeansParams::default()).unwrap();

    // The partition separates the blobs exactly.
    let first = result.assignments[0];
    for (i, &a) in result.assignments.iter().enumerate() {
        if blob[i] == blob[0] {
            assert_eq!(a, first, "point {i} crossed blobs");
        } else {
            assert_ne!(a, first, "point {i} crossed blobs");
        }
    }

    // Lloyd's oracle from one point of each blob converges to the same
    // centroids (the blob means) and the same inertia.
    let init = vec![points[0].clone(), points[40].clone()];
    let (oracle_assign, oracle_centroids) = lloyd_to_convergence(&points, init);
    let oracle_inertia: f64 = points
        .iter()
        .zip(oracle_assign.iter())
        .map(|(p, &c)| squared_distance(p, &oracle_centroids[c]))
        .sum();
    assert!((result.inertia - oracle_inertia).abs() <= 1e-9 * oracle_inertia);

    // Same partition implies the same means; match centroids by blob.
    for (cluster_label, blob_id) in [(result.assignments[0], 0), (result.assignments[40], 1)] {
        let ours = &result.centroids[cluster_label - 1];
        let oracle = &oracle_centroids[oracle_assign[blob_id * 40]];
        for (a, b) in ours.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn assignments_survive_exhaustive_nearest_recheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let points: Vec<Vec<f64>> = (0..300)
        .map(|_| (0..5).map(|_| rng.random_range(-4.0..4.0)).collect())
        .collect();
    let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
    let result = kmeans_cluster(&refs, 7, &KMeansParams { max_iters: 20, minibatch_size: 64, seed: 4 }).unwrap();

    let mut recomputed_inertia = 0.0;
    for (p, &a) in refs.iter().zip(result.assignments.iter()) {
        let mut best = 0;
        let mut best_d = squared_distance(p, &result.centroids[0]);
        for (c, centroid) in result.centroids.iter().enumerate().skip(1) {
            let d = squared_distance(p, centroid);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        assert_eq!(a - 1, best);
        recomputed_inertia += best_d;
    }
    assert!((recomputed_inertia - result.inertia).abs() <= 1e-6 * result.inertia.max(1e-300));
}

#[test]
fn full_data_inertia_history_is_monotone_on_blobby_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut points: Vec<Vec<f64>> = Vec::new();
    for b in 0..6 {
        let center: Vec<f64> = (0..8).map(|d| ((b * 8 + d) % 5) as f64 * 3.0).collect();
        for _ in 0..150 {
            points.push(center.iter().map(|c| c + rng.random_range(-1.0..1.0)).collect());
        }
    }
    let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
    let result = kmeans_cluster(
        &refs,
        10,
        &KMeansParams {
            max_iters: 40,
            minibatch_size: 128,
            seed: 12,
        },
    )
    .unwrap();
    assert!(result.inertia_history.len() >= 2);
    for w in result.inertia_history.windows(2) {
        assert!(w[1] <= w[0], "inertia went up: {} -> {}", w[0], w[1]);
    }
    assert_eq!(*result.inertia_history.last().unwrap(), result.inertia);
}
