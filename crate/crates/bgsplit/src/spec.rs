//! Experiment spec files and config hashing.
//!
//! Specs are human-editable JSON with explicit seeds. Hashes are computed
//! over the parsed structure, not the raw file, so reordering keys in the
//! file does not change the hash while any value change does.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bgsplit_core::dataset::SyntheticSpec;
use bgsplit_core::kmeans::KMeansParams;
use bgsplit_core::pseudo::PseudoLabelSource;
use bgsplit_core::trainer::TrainConfig;

use crate::external::read_prediction_file;
use crate::{Error, Result};

/// Where the experiment's dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Generate blobs, then remap onto `foreground` categories.
    Synthetic {
        spec: SyntheticSpec,
        foreground: Vec<String>,
    },
    /// A pre-built manifest file.
    Manifest { path: String },
}

/// Pseudo-label source in spec form (paths instead of in-memory records).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum PseudoLabelSpec {
    None,
    Random {
        k: usize,
        seed: u64,
    },
    Cluster {
        k: usize,
        max_iters: usize,
        minibatch_size: usize,
        seed: u64,
    },
    External {
        path: String,
        k: Option<usize>,
    },
}

impl PseudoLabelSpec {
    /// Resolve to an in-memory source, reading external files if needed.
    pub fn resolve(&self) -> Result<PseudoLabelSource> {
        Ok(match self {
            PseudoLabelSpec::None => PseudoLabelSource::None,
            PseudoLabelSpec::Random { k, seed } => PseudoLabelSource::Random {
                k: *k,
                seed: *seed,
            },
            PseudoLabelSpec::Cluster {
                k,
                max_iters,
                minibatch_size,
                seed,
            } => PseudoLabelSource::Cluster {
                k: *k,
                params: KMeansParams {
                    max_iters: *max_iters,
                    minibatch_size: *minibatch_size,
                    seed: *seed,
                },
            },
            PseudoLabelSpec::External { path, k } => PseudoLabelSource::External {
                records: read_prediction_file(path)?,
                k: *k,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub config: TrainConfig,
}

/// A named pseudo-label source for the label-source study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSource {
    pub name: String,
    pub pseudo_labels: PseudoLabelSpec,
}

/// One sweep axis with its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case")]
pub enum SweepSpec {
    BatchSize {
        values: Vec<usize>,
    },
    /// Downsample the background training examples to each fraction.
    BgFraction {
        values: Vec<f64>,
        seed: u64,
    },
    /// Partition `covering` into subsets of `subset_size` and average the
    /// per-subset reports.
    Subsets {
        subset_size: usize,
        covering: Vec<String>,
        seed: u64,
    },
}

/// Disjoint foreground sets for the feature-transfer study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSpec {
    pub s1: Vec<String>,
    pub s2: Vec<String>,
}

/// A complete experiment description. `sources`, `sweep`, and `transfer`
/// are only consulted by the runners that need them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dataset: DatasetSource,
    pub pseudo_labels: PseudoLabelSpec,
    pub methods: Vec<MethodSpec>,
    pub seeds: Vec<u64>,
    pub output_dir: String,
    #[serde(default)]
    pub sources: Vec<NamedSource>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub transfer: Option<TransferSpec>,
}

fn sha256_hex(data: &str) -> String {
    let digest = Sha256::digest(data.as_bytes());
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

impl ExperimentSpec {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let spec: ExperimentSpec = serde_json::from_str(&data).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut data =
            serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        data.push('\n');
        std::fs::write(path, data).map_err(Error::io(path))
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Format("spec lists no methods".into()));
        }
        let mut names: Vec<&str> = self.methods.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.methods.len() {
            return Err(Error::Format("method names must be unique".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Format("spec lists no seeds".into()));
        }
        for m in &self.methods {
            m.config.validate()?;
        }
        // Referenced paths must exist up front.
        if let DatasetSource::Manifest { path } = &self.dataset {
            if !Path::new(path).exists() {
                return Err(Error::Format(format!("manifest path does not exist: {path}")));
            }
        }
        let mut label_specs: Vec<&PseudoLabelSpec> = vec![&self.pseudo_labels];
        label_specs.extend(self.sources.iter().map(|s| &s.pseudo_labels));
        for ls in label_specs {
            if let PseudoLabelSpec::External { path, .. } = ls {
                if !Path::new(path).exists() {
                    return Err(Error::Format(format!(
                        "external label path does not exist: {path}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Hash of the full spec structure.
    pub fn spec_hash(&self) -> String {
        sha256_hex(&serde_json::to_string(self).expect("spec serializes"))
    }
}

/// Everything one training run depends on. Two runs with equal keys produce
/// byte-identical checkpoints and reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunKey {
    pub dataset: DatasetSource,
    /// Foreground categories actually used for this run (subset sweeps
    /// override the dataset's own list).
    pub foreground: Vec<String>,
    /// The pseudo-label source, or `None` when the run does not train the
    /// auxiliary head (so label generation cannot influence it).
    pub pseudo_labels: Option<PseudoLabelSpec>,
    /// Background downsampling applied before training; a fraction of 1 is
    /// normalized away.
    pub downsample: Option<(f64, u64)>,
    /// Train config with `seed` set to the run seed.
    pub config: TrainConfig,
}

impl RunKey {
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_string(self).expect("run key serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_spec() -> ExperimentSpec {
        ExperimentSpec {
            dataset: DatasetSource::Synthetic {
                spec: SyntheticSpec {
                    categories: 10,
                    zipf_s: 1.0,
                    examples_total: 500,
                    dim: 4,
                    spread: 1.0,
                    center_distance: 6.0,
                    seed: 1,
                },
                foreground: vec!["c009".into(), "c010".into()],
            },
            pseudo_labels: PseudoLabelSpec::Random { k: 5, seed: 2 },
            methods: vec![MethodSpec {
                name: "ft".into(),
                config: TrainConfig::default(),
            }],
            seeds: vec![1, 2],
            output_dir: "out".into(),
            sources: Vec::new(),
            sweep: None,
            transfer: None,
        }
    }

    #[test]
    fn hash_is_stable_under_file_key_reordering() {
        let spec = sample_spec();
        let json = serde_json::to_string(&spec).unwrap();
        // Round-trip through a Value re-orders object keys alphabetically.
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        let reordered = serde_json::to_string(&value).unwrap();
        let respec: ExperimentSpec = serde_json::from_str(&reordered).unwrap();
        assert_eq!(spec.spec_hash(), respec.spec_hash());
    }

    #[test]
    fn any_value_change_changes_the_hash() {
        let spec = sample_spec();
        let mut other = spec.clone();
        other.seeds = vec![1, 3];
        assert_ne!(spec.spec_hash(), other.spec_hash());

        let mut other = spec.clone();
        other.methods[0].config.learning_rate *= 2.0;
        assert_ne!(spec.spec_hash(), other.spec_hash());
    }

    #[test]
    fn duplicate_method_names_are_rejected() {
        let mut spec = sample_spec();
        spec.methods.push(spec.methods[0].clone());
        assert!(spec.validate().is_err());
    }

    #[test]
    fn run_key_normalization_drops_unit_downsample() {
        let spec = sample_spec();
        let (dataset, foreground) = match &spec.dataset {
            DatasetSource::Synthetic { spec: s, foreground } => {
                (DatasetSource::Synthetic { spec: s.clone(), foreground: foreground.clone() }, foreground.clone())
            }
            _ => unreachable!(),
        };
        let a = RunKey {
            dataset: dataset.clone(),
            foreground: foreground.clone(),
            pseudo_labels: None,
            downsample: None,
            config: TrainConfig::default(),
        };
        let b = RunKey {
            downsample: None,
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        let c = RunKey {
            downsample: Some((0.5, 3)),
            ..a.clone()
        };
        assert_ne!(a.hash(), c.hash());
    }
}
