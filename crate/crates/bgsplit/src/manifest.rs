//! Line-delimited manifest files.
//!
//! Line 1 is a header object `{N, K, foreground_categories,
//! background_fraction, provenance}`; every following line is one example
//! `{id, features, original_label, main_label, aux_label, split}`. UTF-8,
//! one JSON object per line. Floats are written in shortest round-trip
//! form, so write -> read -> write reproduces the bytes exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use bgsplit_core::dataset::{DatasetManifest, Example};

use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "K")]
    k: Option<usize>,
    foreground_categories: Vec<String>,
    background_fraction: f64,
    provenance: String,
}

/// Serialize a manifest to its line-delimited form.
pub fn manifest_to_string(manifest: &DatasetManifest) -> Result<String> {
    let header = Header {
        n: manifest.n_foreground,
        k: manifest.k_aux,
        foreground_categories: manifest.foreground_categories.clone(),
        background_fraction: manifest.background_fraction,
        provenance: manifest.provenance.clone(),
    };
    let mut out = serde_json::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
    out.push('\n');
    for example in &manifest.examples {
        out.push_str(&serde_json::to_string(example).map_err(|e| Error::Format(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let path = path.as_ref();
    let data = manifest_to_string(manifest)?;
    fs::write(path, data).map_err(Error::io(path))
}

/// Parse a manifest and re-validate its invariants: labels within range and
/// the stored background fraction equal to a recount within 1e-12.
pub fn manifest_from_str(data: &str, path: &Path) -> Result<DatasetManifest> {
    let mut lines = data.lines().enumerate();
    let (_, header_line) = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "empty manifest file".into(),
    })?;
    let header: Header = serde_json::from_str(header_line).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: format!("bad header: {e}"),
    })?;

    let mut examples: Vec<Example> = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let example: Example = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("bad example: {e}"),
        })?;
        if example.main_label > header.n {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!(
                    "example {} has main_label {} beyond N = {}",
                    example.id, example.main_label, header.n
                ),
            });
        }
        examples.push(example);
    }
    if header.foreground_categories.len() != header.n {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!(
                "header lists {} foreground categories but N = {}",
                header.foreground_categories.len(),
                header.n
            ),
        });
    }
    let recount = DatasetManifest::recompute_background_fraction(&examples);
    if (recount - header.background_fraction).abs() > 1e-12 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!(
                "stored background_fraction {} does not match recount {recount}",
                header.background_fraction
            ),
        });
    }

    Ok(DatasetManifest {
        examples,
        n_foreground: header.n,
        k_aux: header.k,
        foreground_categories: header.foreground_categories,
        background_fraction: header.background_fraction,
        provenance: header.provenance,
    })
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let data = fs::read_to_string(path).map_err(Error::io(path))?;
    manifest_from_str(&data, path)
}
