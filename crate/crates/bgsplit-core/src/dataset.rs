//! Dataset construction: background remapping, subset families, background
//! downsampling, synthetic long-tail generation, and manifest statistics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Split {
    Train,
    Test,
}

/// One sample: a feature vector with its source category, the remapped main
/// label (`0` = background), and an optional auxiliary pseudo-label.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Example {
    pub id: String,
    pub features: Vec<f64>,
    pub original_label: String,
    pub main_label: usize,
    pub aux_label: Option<usize>,
    pub split: Split,
}

/// An ordered set of examples plus category metadata.
///
/// Foreground labels `1..=N` are assigned by position in
/// `foreground_categories`; every other source category maps to the
/// background label `0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub examples: Vec<Example>,
    pub n_foreground: usize,
    pub k_aux: Option<usize>,
    pub foreground_categories: Vec<String>,
    pub background_fraction: f64,
    pub provenance: String,
}

impl DatasetManifest {
    pub fn train_indices(&self) -> Vec<usize> {
        self.examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == Split::Train)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == Split::Test)
            .map(|(i, _)| i)
            .collect()
    }

    /// Fraction of training examples labelled background; 0 when there are
    /// no training examples.
    pub fn recompute_background_fraction(examples: &[Example]) -> f64 {
        let mut train = 0usize;
        let mut bg = 0usize;
        for e in examples {
            if e.split == Split::Train {
                train += 1;
                if e.main_label == 0 {
                    bg += 1;
                }
            }
        }
        if train == 0 {
            0.0
        } else {
            bg as f64 / train as f64
        }
    }
}

/// A disjoint partition of evaluation categories, one manifest per subset.
#[derive(Debug, Clone)]
pub struct SubsetFamily {
    pub covering_categories: Vec<String>,
    pub subsets: Vec<SubsetEntry>,
}

#[derive(Debug, Clone)]
pub struct SubsetEntry {
    pub categories: Vec<String>,
    pub manifest: DatasetManifest,
}

/// Remap a source manifest onto `foreground` categories: the k-th listed
/// category becomes label `k`, all other categories become background.
/// Example order is preserved and only `main_label` changes.
pub fn build_bg_manifest(
    source: &DatasetManifest,
    foreground: &[String],
) -> Result<DatasetManifest> {
    if foreground.is_empty() {
        return Err(Error::Config(String::from(
            "at least one foreground category is required",
        )));
    }
    let mut positions: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, cat) in foreground.iter().enumerate() {
        if positions.insert(cat.as_str(), i + 1).is_some() {
            return Err(Error::Config(format!("duplicate foreground category: {cat}")));
        }
    }
    let present: BTreeSet<&str> = source
        .examples
        .iter()
        .map(|e| e.original_label.as_str())
        .collect();
    for cat in foreground {
        if !present.contains(cat.as_str()) {
            return Err(Error::Config(format!(
                "foreground category {cat} not present in the source manifest"
            )));
        }
    }

    let examples: Vec<Example> = source
        .examples
        .iter()
        .map(|e| {
            let mut e = e.clone();
            e.main_label = positions.get(e.original_label.as_str()).copied().unwrap_or(0);
            e
        })
        .collect();
    let background_fraction = DatasetManifest::recompute_background_fraction(&examples);
    Ok(DatasetManifest {
        examples,
        n_foreground: foreground.len(),
        k_aux: source.k_aux,
        foreground_categories: foreground.to_vec(),
        background_fraction,
        provenance: format!(
            "{}; bg-remap foreground={:?}",
            source.provenance, foreground
        ),
    })
}

/// Partition `covering` into disjoint subsets of `subset_size` by seeded
/// shuffle, building one manifest per subset.
pub fn build_subset_family(
    source: &DatasetManifest,
    covering: &[String],
    subset_size: usize,
    seed: u64,
) -> Result<SubsetFamily> {
    if subset_size == 0 || covering.is_empty() {
        return Err(Error::Config(String::from(
            "subset size and covering set must be non-empty",
        )));
    }
    if covering.len() % subset_size != 0 {
        return Err(Error::Config(format!(
            "subset size {subset_size} does not divide {} covering categories",
            covering.len()
        )));
    }
    let unique: BTreeSet<&String> = covering.iter().collect();
    if unique.len() != covering.len() {
        return Err(Error::Config(String::from(
            "covering categories contain duplicates",
        )));
    }

    let mut shuffled = covering.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);

    let mut subsets = Vec::new();
    for chunk in shuffled.chunks(subset_size) {
        let categories = chunk.to_vec();
        let manifest = build_bg_manifest(source, &categories)?;
        subsets.push(SubsetEntry {
            categories,
            manifest,
        });
    }
    Ok(SubsetFamily {
        covering_categories: covering.to_vec(),
        subsets,
    })
}

/// Keep all foreground training examples and a seeded uniform sample of
/// `ceil(fraction * #background)` background training examples. The test
/// split is untouched. `fraction = 1` returns the manifest unchanged.
///
/// The sample is a prefix of one seeded shuffle, so smaller fractions select
/// nested subsets for the same seed.
pub fn downsample_background(
    manifest: &DatasetManifest,
    fraction: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "downsampling fraction must be in (0, 1], got {fraction}"
        )));
    }
    if fraction == 1.0 {
        return Ok(manifest.clone());
    }

    let bg_train: Vec<usize> = manifest
        .examples
        .iter()
        .enumerate()
        .filter(|(_, e)| e.split == Split::Train && e.main_label == 0)
        .map(|(i, _)| i)
        .collect();
    let keep = ceil_with_slop(fraction * bg_train.len() as f64);

    let mut order = bg_train.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let kept: BTreeSet<usize> = order.into_iter().take(keep).collect();

    let examples: Vec<Example> = manifest
        .examples
        .iter()
        .enumerate()
        .filter(|(i, e)| !(e.split == Split::Train && e.main_label == 0) || kept.contains(i))
        .map(|(_, e)| e.clone())
        .collect();
    let background_fraction = DatasetManifest::recompute_background_fraction(&examples);
    Ok(DatasetManifest {
        examples,
        n_foreground: manifest.n_foreground,
        k_aux: manifest.k_aux,
        foreground_categories: manifest.foreground_categories.clone(),
        background_fraction,
        provenance: format!(
            "{}; bg-downsample fraction={fraction} seed={seed}",
            manifest.provenance
        ),
    })
}

/// Ceiling with a tiny tolerance so that products like `0.1 * 30` land on
/// the integer they denote in exact arithmetic.
fn ceil_with_slop(x: f64) -> usize {
    let f = math::floor(x);
    if x - f < 1e-9 {
        f as usize
    } else {
        f as usize + 1
    }
}

/// Parameters for the synthetic long-tail generator.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticSpec {
    /// Number of source categories (Gaussian blobs).
    pub categories: usize,
    /// Zipf exponent: category sizes are proportional to `rank^-s`.
    pub zipf_s: f64,
    /// Total number of examples across train and test.
    pub examples_total: usize,
    /// Feature dimension.
    pub dim: usize,
    /// Per-dimension standard deviation of each blob.
    pub spread: f64,
    /// Approximate pairwise distance between blob centers (centers are drawn
    /// on a sphere of radius `center_distance / sqrt(2)`).
    pub center_distance: f64,
    pub seed: u64,
}

/// Category sizes proportional to `rank^-s`, apportioned by largest
/// remainder so they sum to `total` exactly.
pub fn zipf_category_sizes(categories: usize, s: f64, total: usize) -> Result<Vec<usize>> {
    if categories == 0 {
        return Err(Error::Config(String::from("need at least one category")));
    }
    let weights: Vec<f64> = (1..=categories)
        .map(|r| math::powf(r as f64, -s))
        .collect();
    let wsum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights
        .iter()
        .map(|w| total as f64 * w / wsum)
        .collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| math::floor(*q) as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..categories).collect();
    // Largest fractional remainder first; ties go to the lower rank.
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - math::floor(quotas[a]);
        let rb = quotas[b] - math::floor(quotas[b]);
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        sizes[i] += 1;
    }
    if let Some(rank) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Config(format!(
            "category rank {} would receive 0 examples; increase examples_total",
            rank + 1
        )));
    }
    Ok(sizes)
}

fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Generate a source manifest of `categories` Gaussian blobs with Zipf
/// category frequencies and a stratified 85/15 train/test split (every
/// category keeps at least one test example).
///
/// The returned manifest labels every category as foreground
/// (`background_fraction = 0`); pass it through [`build_bg_manifest`] to
/// obtain a background-dominated dataset.
pub fn generate_synthetic_longtail(spec: &SyntheticSpec) -> Result<DatasetManifest> {
    if spec.categories < 2 {
        return Err(Error::Config(String::from("need at least two categories")));
    }
    if spec.dim < 2 {
        return Err(Error::Config(String::from("feature dimension must be >= 2")));
    }
    if !(spec.spread > 0.0 && spec.spread.is_finite()) {
        return Err(Error::Config(format!("spread must be positive, got {}", spec.spread)));
    }
    if !(spec.center_distance >= 0.0 && spec.center_distance.is_finite()) {
        return Err(Error::Config(format!(
            "center distance must be non-negative, got {}",
            spec.center_distance
        )));
    }
    let sizes = zipf_category_sizes(spec.categories, spec.zipf_s, spec.examples_total)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let radius = spec.center_distance / math::sqrt(2.0);
    let centers: Vec<Vec<f64>> = (0..spec.categories)
        .map(|_| {
            let v = gaussian_vector(&mut rng, spec.dim);
            let norm = math::sqrt(v.iter().map(|x| x * x).sum::<f64>());
            v.iter().map(|x| radius * x / norm).collect()
        })
        .collect();

    let mut examples = Vec::with_capacity(spec.examples_total);
    let mut next_id = 0usize;
    for (rank, (&size, center)) in sizes.iter().zip(centers.iter()).enumerate() {
        let category = format!("c{:03}", rank + 1);
        // 85/15 split, stratified: at least one test example per category.
        let n_test = (math::round(0.15 * size as f64) as usize).clamp(1, size);
        let mut split_order: Vec<usize> = (0..size).collect();
        split_order.shuffle(&mut rng);
        let test_set: BTreeSet<usize> = split_order.into_iter().take(n_test).collect();

        for j in 0..size {
            let noise = gaussian_vector(&mut rng, spec.dim);
            let features: Vec<f64> = center
                .iter()
                .zip(noise.iter())
                .map(|(c, n)| c + spec.spread * n)
                .collect();
            examples.push(Example {
                id: format!("e{next_id:06}"),
                features,
                original_label: category.clone(),
                main_label: rank + 1,
                aux_label: None,
                split: if test_set.contains(&j) {
                    Split::Test
                } else {
                    Split::Train
                },
            });
            next_id += 1;
        }
    }

    let foreground_categories: Vec<String> =
        (1..=spec.categories).map(|r| format!("c{r:03}")).collect();
    let background_fraction = DatasetManifest::recompute_background_fraction(&examples);
    Ok(DatasetManifest {
        examples,
        n_foreground: spec.categories,
        k_aux: None,
        foreground_categories,
        background_fraction,
        provenance: format!(
            "synthetic categories={} zipf_s={} total={} dim={} spread={} center_distance={} seed={}",
            spec.categories,
            spec.zipf_s,
            spec.examples_total,
            spec.dim,
            spec.spread,
            spec.center_distance,
            spec.seed
        ),
    })
}

/// Per-class counts and imbalance statistics for a manifest.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ManifestStats {
    pub n_train: usize,
    pub n_test: usize,
    pub background_fraction: f64,
    /// Train/test counts per main label `0..=N`.
    pub per_class: Vec<ClassCount>,
    pub k_aux: Option<usize>,
    /// Largest share of any pseudo-category among labelled training
    /// examples; absent when no auxiliary labels are present.
    pub max_pseudo_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassCount {
    pub label: usize,
    pub train: usize,
    pub test: usize,
}

pub fn manifest_stats(manifest: &DatasetManifest) -> ManifestStats {
    let n = manifest.n_foreground;
    let mut per_class: Vec<ClassCount> = (0..=n)
        .map(|label| ClassCount {
            label,
            train: 0,
            test: 0,
        })
        .collect();
    let mut n_train = 0;
    let mut n_test = 0;
    let mut pseudo_counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut pseudo_total = 0usize;
    for e in &manifest.examples {
        match e.split {
            Split::Train => {
                n_train += 1;
                per_class[e.main_label].train += 1;
                if let Some(t) = e.aux_label {
                    *pseudo_counts.entry(t).or_insert(0) += 1;
                    pseudo_total += 1;
                }
            }
            Split::Test => {
                n_test += 1;
                per_class[e.main_label].test += 1;
            }
        }
    }
    let max_pseudo_share = (pseudo_total > 0).then(|| {
        let max = pseudo_counts.values().copied().max().unwrap_or(0);
        max as f64 / pseudo_total as f64
    });
    ManifestStats {
        n_train,
        n_test,
        background_fraction: DatasetManifest::recompute_background_fraction(&manifest.examples),
        per_class,
        k_aux: manifest.k_aux,
        max_pseudo_share,
    }
}
