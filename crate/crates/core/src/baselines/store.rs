//! Ensembles on disk: one checkpoint per member plus a manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BaselineModel, EnsembleModel};
use crate::data::Standardization;
use crate::dist::QuantileLevel;
use crate::error::{Error, Result};
use crate::neural::{Checkpoint, HeadKind};

pub const ENSEMBLE_MANIFEST: &str = "ensemble.json";
const ENSEMBLE_FORMAT: &str = "evquant-ensemble";
const ENSEMBLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberEntry {
    /// File name relative to the ensemble directory.
    pub file: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleManifest {
    pub format: String,
    pub version: u32,
    pub quantiles: Vec<QuantileLevel>,
    pub members: Vec<MemberEntry>,
}

fn plain_file_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && !name.contains(['/', '\\'])
        && Path::new(name).file_name().is_some_and(|f| f == name)
}

impl EnsembleManifest {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Checkpoint(format!("ensemble manifest: {m}")));
        if self.format != ENSEMBLE_FORMAT {
            return bad(format!("unrecognized format tag {:?}", self.format));
        }
        if self.version != ENSEMBLE_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        if self.members.is_empty() {
            return bad("no members".into());
        }
        if self.quantiles.is_empty() {
            return bad("no quantiles".into());
        }
        for m in &self.members {
            if !plain_file_name(&m.file) {
                return bad(format!("member path {:?} must be a plain file name", m.file));
            }
        }
        Ok(())
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let m: Self = serde_json::from_slice(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

impl EnsembleModel {
    /// Writes `member_XXX.json` checkpoints and the manifest into `dir`.
    pub fn save_dir(&self, dir: &Path, seeds: &[u64], standardization: Option<&Standardization>) -> Result<()> {
        if seeds.len() != self.size() {
            return Err(Error::Shape {
                context: "ensemble seeds",
                expected: self.size().to_string(),
                got: seeds.len().to_string(),
            });
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut members = Vec::with_capacity(self.size());
        for (i, (m, &seed)) in self.members.iter().zip(seeds).enumerate() {
            let file = format!("member_{i:03}.json");
            let mut ckpt = Checkpoint::new(HeadKind::MeanScale, m.quantiles.clone(), m.net())?;
            ckpt.standardization = standardization.cloned();
            ckpt.save(&dir.join(&file))?;
            members.push(MemberEntry { file, seed });
        }
        let manifest = EnsembleManifest {
            format: ENSEMBLE_FORMAT.to_string(),
            version: ENSEMBLE_VERSION,
            quantiles: self.quantiles().to_vec(),
            members,
        };
        let path = dir.join(ENSEMBLE_MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    /// Loads the ensemble and the first member's standardization.
    pub fn load_dir(dir: &Path) -> Result<(Self, EnsembleManifest, Option<Standardization>)> {
        let path = dir.join(ENSEMBLE_MANIFEST);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let manifest = EnsembleManifest::from_slice(&fs::read(&path).map_err(|e| Error::io(&path, e))?)?;
        let mut members = Vec::with_capacity(manifest.members.len());
        let mut standardization = None;
        for (i, entry) in manifest.members.iter().enumerate() {
            let ckpt = Checkpoint::load(&dir.join(&entry.file))?;
            if ckpt.head != HeadKind::MeanScale || ckpt.quantiles != manifest.quantiles {
                return Err(Error::Checkpoint(format!("member {:?} does not match the manifest", entry.file)));
            }
            if i == 0 {
                standardization = ckpt.standardization.clone();
            }
            members.push(BaselineModel::from_mlp(ckpt.to_mlp()?, ckpt.quantiles)?);
        }
        Ok((Self::new(members)?, manifest, standardization))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Architecture, Tensor2};

    #[test]
    fn directory_round_trip() {
        let qs = vec![QuantileLevel::new(0.1).unwrap(), QuantileLevel::new(0.9).unwrap()];
        let arch = Architecture { hidden_layers: 1, hidden_units: 6, dropout_rate: 0.0 };
        let e =
            EnsembleModel::new((0..3).map(|s| BaselineModel::new(2, arch, qs.clone(), s).unwrap()).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        e.save_dir(dir.path(), &[0, 1, 2], None).unwrap();
        let (back, manifest, _) = EnsembleModel::load_dir(dir.path()).unwrap();
        assert_eq!(manifest.members.len(), 3);
        assert_eq!(manifest.members[2].seed, 2);
        let x = Tensor2::from_vec(2, 2, vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        assert_eq!(super::super::ensemble_predict(&back, &x).unwrap(), super::super::ensemble_predict(&e, &x).unwrap());
    }

    #[test]
    fn path_escapes_rejected() {
        for name in ["../x.json", "/etc/passwd", "a/b.json", "..", ""] {
            let m = EnsembleManifest {
                format: ENSEMBLE_FORMAT.into(),
                version: 1,
                quantiles: vec![QuantileLevel::new(0.5).unwrap()],
                members: vec![MemberEntry { file: name.into(), seed: 0 }],
            };
            assert!(m.validate().is_err(), "{name}");
        }
    }
}
