//! External prediction files: line-delimited `example_id<TAB>label` records
//! with 1-based integer labels, UTF-8, no header.

use std::fs;
use std::path::Path;

use bgsplit_core::dataset::DatasetManifest;
use bgsplit_core::pseudo::align_external_labels;

use crate::{Error, Result};

/// Parse an external prediction file into `(id, label)` records.
pub fn read_prediction_file(path: impl AsRef<Path>) -> Result<Vec<(String, usize)>> {
    let path = path.as_ref();
    let data = fs::read_to_string(path).map_err(Error::io(path))?;
    let mut records = Vec::new();
    for (i, line) in data.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, label) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected `example_id<TAB>label`".into(),
        })?;
        let label: usize = label.trim().parse().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("bad label: {e}"),
        })?;
        records.push((id.to_string(), label));
    }
    Ok(records)
}

/// Load labels from `path` and align them to the manifest's example order.
/// Every manifest id must appear exactly once; labels must lie in `1..=k`
/// when `k` is declared.
pub fn load_external_pseudolabels(
    path: impl AsRef<Path>,
    manifest: &DatasetManifest,
    k: Option<usize>,
) -> Result<Vec<usize>> {
    let records = read_prediction_file(path)?;
    Ok(align_external_labels(&records, &manifest.examples, k)?)
}
