//! `path,label,split` CSV listing every image of a dataset.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DataError, DataResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = DataError;

    fn from_str(s: &str) -> DataResult<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(DataError::Invalid(format!("unknown split `{s}` (expected train, val or test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    /// Relative to the manifest's directory.
    pub path: String,
    pub label: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    /// Reads and validates `path`; image paths resolve against its directory.
    pub fn load(path: &Path) -> DataResult<Self> {
        let err = |msg: String| DataError::Manifest {
            path: path.to_path_buf(),
            msg,
        };
        let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
        let headers = reader.headers().map_err(|e| err(e.to_string()))?;
        if headers != vec!["path", "label", "split"] {
            return Err(err(format!("header must be `path,label,split`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
        }
        let rows = reader
            .deserialize()
            .collect::<Result<Vec<ManifestRow>, _>>()
            .map_err(|e| err(e.to_string()))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self { root, rows };
        m.validate().map_err(|e| err(e.to_string()))?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> DataResult<()> {
        let err = |msg: String| DataError::Manifest {
            path: path.to_path_buf(),
            msg,
        };
        let mut w = csv::Writer::from_path(path).map_err(|e| err(e.to_string()))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| err(e.to_string()))?;
        }
        w.flush().map_err(|e| err(e.to_string()))
    }

    /// Labels are exactly `0..C`, paths are unique, and train and test are
    /// both present.
    pub fn validate(&self) -> DataResult<()> {
        let labels: BTreeSet<usize> = self.rows.iter().map(|r| r.label).collect();
        if labels.len() < 2 || labels.iter().copied().ne(0..labels.len()) {
            return Err(DataError::Invalid(format!(
                "labels must be contiguous from 0 with at least two classes, found {labels:?}"
            )));
        }
        let mut seen = HashSet::new();
        for r in &self.rows {
            if !seen.insert(r.path.as_str()) {
                return Err(DataError::Invalid(format!("duplicate path `{}`", r.path)));
            }
        }
        for split in [Split::Train, Split::Test] {
            if !self.has_split(split) {
                return Err(DataError::Invalid(format!("split `{split}` is empty")));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.rows.iter().map(|r| r.label + 1).max().unwrap_or(0)
    }

    pub fn has_split(&self, split: Split) -> bool {
        self.rows.iter().any(|r| r.split == split)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        self.root.join(&row.path)
    }
}
