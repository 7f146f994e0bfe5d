//! Auxiliary pseudo-labels that split the background into sub-categories:
//! random assignment, k-means clustering of the feature vectors, or labels
//! predicted by an external model.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DatasetManifest, Example};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans_cluster, KMeansParams};

/// Where the auxiliary labels come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PseudoLabelSource {
    /// No auxiliary labels; downstream training must disable the aux loss.
    None,
    /// I.i.d. uniform labels in `1..=k`.
    Random { k: usize, seed: u64 },
    /// Mini-batch k-means over the manifest's feature vectors.
    Cluster { k: usize, params: KMeansParams },
    /// Pre-computed labels joined to examples by id, e.g. the predictions of
    /// a model trained on another dataset. When `k` is absent it is inferred
    /// as the maximum label.
    External {
        records: Vec<(String, usize)>,
        k: Option<usize>,
    },
}

/// I.i.d. uniform labels in `1..=k`, deterministic per seed.
pub fn random_pseudolabels(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Config(String::from("need at least one example")));
    }
    if k == 0 {
        return Err(Error::Config(String::from("K must be at least 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| rng.random_range(1..=k)).collect())
}

/// Join externally predicted labels to `examples` by id.
///
/// The records must cover every example id exactly once; labels must lie in
/// `1..=k` when `k` is declared. The result is aligned to example order and
/// independent of record order.
pub fn align_external_labels(
    records: &[(String, usize)],
    examples: &[Example],
    k: Option<usize>,
) -> Result<Vec<usize>> {
    let mut by_id: BTreeMap<&str, usize> = BTreeMap::new();
    for (id, label) in records {
        if by_id.insert(id.as_str(), *label).is_some() {
            return Err(Error::Ingestion(format!("duplicate id in label file: {id}")));
        }
    }
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let label = *by_id
            .get(ex.id.as_str())
            .ok_or_else(|| Error::Ingestion(format!("no label for example id: {}", ex.id)))?;
        if label == 0 {
            return Err(Error::Ingestion(format!(
                "label for id {} must be 1-based, got 0",
                ex.id
            )));
        }
        if let Some(k) = k {
            if label > k {
                return Err(Error::Ingestion(format!(
                    "label {label} for id {} exceeds K = {k}",
                    ex.id
                )));
            }
        }
        out.push(label);
    }
    if by_id.len() != examples.len() {
        let known: BTreeMap<&str, ()> = examples.iter().map(|e| (e.id.as_str(), ())).collect();
        let stray = records
            .iter()
            .find(|(id, _)| !known.contains_key(id.as_str()))
            .map(|(id, _)| id.clone())
            .unwrap_or_default();
        return Err(Error::Ingestion(format!(
            "label file contains an id not in the manifest: {stray}"
        )));
    }
    Ok(out)
}

/// Attach pseudo-labels from `source` to every example of the manifest.
///
/// Feature vectors and main labels are never modified. `source = None`
/// returns the manifest unchanged.
pub fn attach_pseudolabels(
    manifest: &DatasetManifest,
    source: &PseudoLabelSource,
) -> Result<DatasetManifest> {
    let (labels, k, note) = match source {
        PseudoLabelSource::None => return Ok(manifest.clone()),
        PseudoLabelSource::Random { k, seed } => {
            let labels = random_pseudolabels(manifest.examples.len(), *k, *seed)?;
            (labels, *k, format!("pseudo-labels random k={k} seed={seed}"))
        }
        PseudoLabelSource::Cluster { k, params } => {
            let points: Vec<&[f64]> = manifest
                .examples
                .iter()
                .map(|e| e.features.as_slice())
                .collect();
            let result = kmeans_cluster(&points, *k, params)?;
            (
                result.assignments,
                *k,
                format!(
                    "pseudo-labels cluster k={k} iters={} minibatch={} seed={}",
                    params.max_iters, params.minibatch_size, params.seed
                ),
            )
        }
        PseudoLabelSource::External { records, k } => {
            let labels = align_external_labels(records, &manifest.examples, *k)?;
            let k = k.unwrap_or_else(|| labels.iter().copied().max().unwrap_or(1));
            (labels, k, format!("pseudo-labels external k={k}"))
        }
    };

    let mut out = manifest.clone();
    for (ex, label) in out.examples.iter_mut().zip(labels.into_iter()) {
        ex.aux_label = Some(label);
    }
    out.k_aux = Some(k);
    out.provenance = format!("{}; {note}", manifest.provenance);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic_longtail, Split, SyntheticSpec};

    fn blob_manifest() -> DatasetManifest {
        generate_synthetic_longtail(&SyntheticSpec {
            categories: 5,
            zipf_s: 0.0,
            examples_total: 250,
            dim: 3,
            spread: 0.5,
            center_distance: 20.0,
            seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn k_one_labels_everything_one() {
        let labels = random_pseudolabels(20, 1, 0).unwrap();
        assert!(labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn random_labels_are_seed_deterministic() {
        assert_eq!(
            random_pseudolabels(100, 7, 5).unwrap(),
            random_pseudolabels(100, 7, 5).unwrap()
        );
        assert_ne!(
            random_pseudolabels(100, 7, 5).unwrap(),
            random_pseudolabels(100, 7, 6).unwrap()
        );
    }

    #[test]
    fn random_label_counts_are_near_uniform() {
        let (n, k) = (100_000usize, 10usize);
        let labels = random_pseudolabels(n, k, 123).unwrap();
        let mut counts = alloc::vec![0usize; k];
        for l in labels {
            counts[l - 1] += 1;
        }
        // Multinomial cell: mean 10_000, sigma = sqrt(n p (1-p)) ~ 94.9.
        let sigma = (n as f64 * 0.1 * 0.9).sqrt();
        for c in counts {
            assert!((c as f64 - 10_000.0).abs() < 4.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn attach_none_is_identity() {
        let m = blob_manifest();
        let out = attach_pseudolabels(&m, &PseudoLabelSource::None).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn attach_never_touches_features_or_labels() {
        let m = blob_manifest();
        let out = attach_pseudolabels(
            &m,
            &PseudoLabelSource::Random { k: 4, seed: 9 },
        )
        .unwrap();
        assert_eq!(out.k_aux, Some(4));
        for (a, b) in m.examples.iter().zip(out.examples.iter()) {
            assert_eq!(a.features, b.features);
            assert_eq!(a.main_label, b.main_label);
            assert_eq!(a.id, b.id);
            assert!(matches!(b.aux_label, Some(l) if (1..=4).contains(&l)));
        }
    }

    #[test]
    fn cluster_source_splits_separated_blobs() {
        // Five well-separated equal blobs; no pseudo-category should hold
        // much more than one blob's share of the data. The clustering seed
        // is one whose random init covers all five blobs.
        let m = blob_manifest();
        let out = attach_pseudolabels(
            &m,
            &PseudoLabelSource::Cluster {
                k: 5,
                params: KMeansParams {
                    seed: 1,
                    ..KMeansParams::default()
                },
            },
        )
        .unwrap();
        let stats = crate::dataset::manifest_stats(&out);
        let share = stats.max_pseudo_share.unwrap();
        assert!(share <= 0.30, "max pseudo share {share}");
    }

    #[test]
    fn external_labels_align_by_id_not_order() {
        let m = blob_manifest();
        let mut records: Vec<(String, usize)> = m
            .examples
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i % 3 + 1))
            .collect();
        let expected: Vec<usize> = (0..records.len()).map(|i| i % 3 + 1).collect();
        records.reverse();
        let aligned = align_external_labels(&records, &m.examples, Some(3)).unwrap();
        assert_eq!(aligned, expected);
    }

    #[test]
    fn external_errors_name_the_offending_id() {
        let m = blob_manifest();
        let mut records: Vec<(String, usize)> = m
            .examples
            .iter()
            .map(|e| (e.id.clone(), 1))
            .collect();

        let removed = records.pop().unwrap();
        let err = align_external_labels(&records, &m.examples, None).unwrap_err();
        assert!(matches!(&err, Error::Ingestion(msg) if msg.contains(&removed.0)));

        records.push(removed.clone());
        records.push(removed.clone());
        let err = align_external_labels(&records, &m.examples, None).unwrap_err();
        assert!(matches!(&err, Error::Ingestion(msg) if msg.contains(&removed.0)));

        records.pop();
        records.last_mut().unwrap().1 = 9;
        let err = align_external_labels(&records, &m.examples, Some(3)).unwrap_err();
        assert!(matches!(&err, Error::Ingestion(msg) if msg.contains(&removed.0)));
    }

    #[test]
    fn random_labels_are_independent_of_main_labels() {
        // Empirical mutual information between y and random t on a large
        // sample is close to zero (the plug-in estimator's bias is about
        // (|Y|-1)(|T|-1) / (2 n ln 2) bits, far below the 0.01 threshold).
        let m = generate_synthetic_longtail(&SyntheticSpec {
            categories: 3,
            zipf_s: 0.0,
            examples_total: 30_000,
            dim: 2,
            spread: 1.0,
            center_distance: 10.0,
            seed: 4,
        })
        .unwrap();
        let out = attach_pseudolabels(&m, &PseudoLabelSource::Random { k: 8, seed: 21 }).unwrap();

        let train: Vec<&Example> = out
            .examples
            .iter()
            .filter(|e| e.split == Split::Train)
            .collect();
        let n = train.len() as f64;
        let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut py: BTreeMap<usize, f64> = BTreeMap::new();
        let mut pt: BTreeMap<usize, f64> = BTreeMap::new();
        for e in &train {
            let t = e.aux_label.unwrap();
            *joint.entry((e.main_label, t)).or_insert(0.0) += 1.0;
            *py.entry(e.main_label).or_insert(0.0) += 1.0;
            *pt.entry(t).or_insert(0.0) += 1.0;
        }
        let mut mi = 0.0;
        for ((y, t), c) in &joint {
            let pxy = c / n;
            let p = (py[y] / n) * (pt[t] / n);
            mi += pxy * (pxy / p).ln();
        }
        mi /= core::f64::consts::LN_2;
        assert!(mi.abs() < 0.01, "mutual information {mi} bits");
    }
}
