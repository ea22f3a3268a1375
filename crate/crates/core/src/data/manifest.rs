use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, Standardization};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

/// Provenance record for a dataset as used by one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub source: String,
    pub rows: usize,
    pub feature_names: Vec<String>,
    pub target_name: String,
    /// SHA-256 over the little-endian bytes of every feature row followed by its target.
    pub content_sha256: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub fractions: Option<[f64; 3]>,
    #[serde(default)]
    pub split_sizes: Option<[usize; 3]>,
    #[serde(default)]
    pub standardization: Option<Standardization>,
}

pub(crate) fn content_hash(d: &Dataset) -> String {
    let mut h = Sha256::new();
    for (i, y) in d.targets().iter().enumerate() {
        for v in d.features().row(i) {
            h.update(v.to_le_bytes());
        }
        h.update(y.to_le_bytes());
    }
    hex::encode(h.finalize())
}

impl DatasetManifest {
    pub fn describe(dataset: &Dataset, source: impl Into<String>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            source: source.into(),
            rows: dataset.len(),
            feature_names: dataset.feature_names().to_vec(),
            target_name: dataset.target_name().to_string(),
            content_sha256: content_hash(dataset),
            seed: None,
            fractions: None,
            split_sizes: dataset.split().map(|s| [s.train.len(), s.validation.len(), s.test.len()]),
            standardization: dataset.standardization().cloned(),
        }
    }

    pub fn with_split_provenance(mut self, seed: u64, fractions: [f64; 3]) -> Self {
        self.seed = Some(seed);
        self.fractions = Some(fractions);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("dataset manifest: {m}")));
        if self.version != MANIFEST_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        if self.content_sha256.len() != 64 || !self.content_sha256.bytes().all(|b| b.is_ascii_hexdigit()) {
            return bad("content_sha256 must be 64 hex digits".into());
        }
        if let Some(f) = self.fractions {
            if f.iter().any(|v| !v.is_finite() || *v < 0.0) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad(format!("invalid fractions {f:?}"));
            }
        }
        if let Some(s) = self.split_sizes {
            if s.iter().try_fold(0usize, |a, &b| a.checked_add(b)) != Some(self.rows) {
                return bad("split sizes do not add up to the row count".into());
            }
        }
        if let Some(s) = &self.standardization {
            if s.features.len() != self.feature_names.len() {
                return bad("standardization width differs from the feature count".into());
            }
            s.validate()?;
        }
        Ok(())
    }

    /// Whether `dataset` has exactly the recorded contents.
    pub fn matches(&self, dataset: &Dataset) -> bool {
        self.rows == dataset.len() && self.content_sha256 == content_hash(dataset)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let m: Self = serde_json::from_slice(bytes)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}
