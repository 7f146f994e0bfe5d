//! Shared oracles and fixtures for the acceptance suite.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use bgsplit::runner::canonical_factor_methods;
use bgsplit::spec::{DatasetSource, ExperimentSpec, PseudoLabelSpec};
use bgsplit_core::dataset::{DatasetManifest, Example, Split, SyntheticSpec};
use bgsplit_core::grad::loss_gradients;
use bgsplit_core::model::{init_params, ModelParams};
use bgsplit_core::trainer::TrainConfig;

/// Average precision straight from the definition, independent of the
/// implementation: ranks are counted pairwise without sorting scores, and
/// precisions at positive ranks are averaged in ascending rank order.
pub fn ap_bruteforce(conf: &[f64], positives: &[bool]) -> f64 {
    let mut per_rank: Vec<(usize, f64)> = Vec::new();
    for i in 0..conf.len() {
        if !positives[i] {
            continue;
        }
        let mut rank = 1usize;
        let mut hits_above = 0usize;
        for j in 0..conf.len() {
            if conf[j] > conf[i] || (conf[j] == conf[i] && j < i) {
                rank += 1;
                if positives[j] {
                    hits_above += 1;
                }
            }
        }
        per_rank.push((rank, (hits_above + 1) as f64 / rank as f64));
    }
    per_rank.sort_by_key(|&(rank, _)| rank);
    let p = per_rank.len() as f64;
    per_rank.iter().map(|&(_, prec)| prec).sum::<f64>() / p
}

const FD_STEP: f64 = 1e-5;

/// Central finite differences of the mean total loss, one parameter at a
/// time in flat order.
pub fn finite_difference(
    params: &ModelParams,
    examples: &[Example],
    batch: &[usize],
    config: &TrainConfig,
) -> Vec<f64> {
    let flat = params.to_flat();
    let mut out = Vec::with_capacity(flat.len());
    let mut work = params.clone();
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += FD_STEP;
        work.set_from_flat(&plus);
        let up = loss_gradients(&work, examples, batch, config).unwrap().1.total;
        let mut minus = flat.clone();
        minus[i] -= FD_STEP;
        work.set_from_flat(&minus);
        let down = loss_gradients(&work, examples, batch, config).unwrap().1.total;
        out.push((up - down) / (2.0 * FD_STEP));
    }
    out
}

/// Random instance within the acceptance bounds: N <= 5, K <= 8, d <= 16,
/// batch <= 8.
pub fn random_grad_instance(
    rng: &mut ChaCha8Rng,
) -> (ModelParams, Vec<Example>, Vec<usize>, TrainConfig) {
    let d_in = rng.random_range(2..=16);
    let n_fg = rng.random_range(1..=5);
    let k = rng.random_range(1..=8);
    let use_aux = rng.random_range(0..3) > 0;
    let use_thresholding = rng.random_range(0..2) == 1;
    let lambda_g = [0.0, 0.1, 0.7][rng.random_range(0..3)];
    let trunk_shape: Vec<usize> = match rng.random_range(0..3) {
        0 => vec![],
        1 => vec![rng.random_range(2..=8)],
        _ => vec![rng.random_range(2..=8), rng.random_range(2..=6)],
    };
    let batch_len = rng.random_range(1..=8);

    let config = TrainConfig {
        lambda_g,
        b0: rng.random_range(-0.5..0.5),
        use_thresholding,
        use_aux,
        trunk_shape: trunk_shape.clone(),
        ..TrainConfig::default()
    };
    let params = init_params(
        d_in,
        &trunk_shape,
        n_fg,
        if use_aux { k } else { 0 },
        use_thresholding.then_some(config.b0),
        rng.random_range(0..u64::MAX / 2),
    )
    .unwrap();
    let examples: Vec<Example> = (0..batch_len)
        .map(|i| Example {
            id: format!("e{i}"),
            features: (0..d_in).map(|_| rng.random_range(-2.0..2.0)).collect(),
            original_label: "src".into(),
            main_label: rng.random_range(0..=n_fg),
            aux_label: use_aux.then(|| rng.random_range(1..=k)),
            split: Split::Train,
        })
        .collect();
    let batch: Vec<usize> = (0..batch_len).collect();
    (params, examples, batch, config)
}

/// Draw instances until none of the trunk pre-activations sits near a ReLU
/// kink, where the loss is not differentiable and central differences are
/// meaningless.
pub fn resample_until_smooth(
    rng: &mut ChaCha8Rng,
) -> (ModelParams, Vec<Example>, Vec<usize>, TrainConfig) {
    loop {
        let candidate = random_grad_instance(rng);
        let mut min = f64::INFINITY;
        for ex in &candidate.1 {
            let mut cur = ex.features.clone();
            for layer in &candidate.0.trunk {
                let pre = layer.forward(&cur);
                for &v in &pre {
                    min = min.min(v.abs());
                }
                cur = pre.into_iter().map(|v| v.max(0.0)).collect();
            }
        }
        if min > 1e-3 {
            return candidate;
        }
    }
}

/// Manifest + model that score every test example perfectly: class c's
/// examples have feature 10 on coordinate c-1 and the model reads it back.
pub fn oracle_fixture(n: usize, total: usize) -> (DatasetManifest, ModelParams) {
    let mut examples = Vec::new();
    for i in 0..total {
        let label = i % (n + 1);
        let mut features = vec![0.0; n];
        if label > 0 {
            features[label - 1] = 10.0;
        }
        // Labels cycle with period n+1; sending every fifth full cycle to
        // the test split covers every class regardless of n.
        let test = (i / (n + 1)) % 5 == 0;
        examples.push(Example {
            id: format!("e{i:05}"),
            features,
            original_label: format!("c{label:03}"),
            main_label: label,
            aux_label: None,
            split: if test { Split::Test } else { Split::Train },
        });
    }
    let background_fraction = DatasetManifest::recompute_background_fraction(&examples);
    let manifest = DatasetManifest {
        examples,
        n_foreground: n,
        k_aux: None,
        foreground_categories: (1..=n).map(|c| format!("c{c:03}")).collect(),
        background_fraction,
        provenance: "oracle fixture".into(),
    };

    let mut params = init_params(n, &[], n, 0, Some(0.1), 0).unwrap();
    for w in params.main.weight.iter_mut() {
        *w = 0.0;
    }
    for b in params.main.bias.iter_mut() {
        *b = 0.0;
    }
    for c in 1..=n {
        params.main.weight[c * n + (c - 1)] = 1.0;
    }
    params.apply_clamp();
    (manifest, params)
}

/// Two Gaussian-ish blobs 20 sigma apart, `per_blob` points each.
pub fn two_blobs(per_blob: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = [[0.0, 0.0, 0.0], [20.0, 0.0, 0.0]];
    let mut points = Vec::new();
    let mut ids = Vec::new();
    for (b, center) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            points.push(
                center
                    .iter()
                    .map(|c| c + rng.random_range(-1.0..1.0))
                    .collect::<Vec<f64>>(),
            );
            ids.push(b);
        }
    }
    (points, ids)
}

/// Full-batch Lloyd's algorithm run to convergence, lowest-index ties.
pub fn lloyd_to_convergence(
    points: &[Vec<f64>],
    mut centroids: Vec<Vec<f64>>,
) -> (Vec<usize>, Vec<Vec<f64>>) {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignments = vec![usize::MAX; points.len()];
    loop {
        let mut next = Vec::with_capacity(points.len());
        for p in points {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d: f64 = p
                    .iter()
                    .zip(centroid.iter())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
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

/// A small four-variant spec for the rerun-determinism criterion.
pub fn mini_spec(out: &Path) -> ExperimentSpec {
    ExperimentSpec {
        dataset: DatasetSource::Synthetic {
            spec: SyntheticSpec {
                categories: 8,
                zipf_s: 1.0,
                examples_total: 800,
                dim: 8,
                spread: 1.0,
                center_distance: 6.0,
                seed: 41,
            },
            foreground: vec!["c007".into(), "c008".into()],
        },
        pseudo_labels: PseudoLabelSpec::Cluster {
            k: 6,
            max_iters: 10,
            minibatch_size: 128,
            seed: 2,
        },
        methods: canonical_factor_methods(&TrainConfig {
            epochs: 3,
            batch_size: 64,
            learning_rate: 0.05,
            trunk_shape: vec![8],
            ..TrainConfig::default()
        }),
        seeds: vec![1, 2],
        output_dir: out.display().to_string(),
        sources: Vec::new(),
        sweep: None,
        transfer: None,
    }
}
