//! Versioned JSON checkpoints: network shape, flat parameters, optional
//! optimizer state, and the standardization needed to map predictions back
//! to original units.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, Mlp, MlpConfig, TrainConfig};
use crate::data::Standardization;
use crate::dist::QuantileLevel;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "evquant-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// How the network's output columns are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Four raw NIG outputs per quantile.
    Evidential,
    /// (μ, raw σ) per quantile.
    MeanScale,
}

impl HeadKind {
    pub fn outputs_per_quantile(self) -> usize {
        match self {
            HeadKind::Evidential => 4,
            HeadKind::MeanScale => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub head: HeadKind,
    pub quantiles: Vec<QuantileLevel>,
    pub network: MlpConfig,
    pub params: Vec<f64>,
    #[serde(default)]
    pub optimizer: Option<AdamState>,
    #[serde(default)]
    pub standardization: Option<Standardization>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

impl Checkpoint {
    pub fn new(head: HeadKind, quantiles: Vec<QuantileLevel>, net: &Mlp) -> Result<Self> {
        let ckpt = Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            head,
            quantiles,
            network: *net.config(),
            params: net.params().to_vec(),
            optimizer: None,
            standardization: None,
            train: None,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Checkpoint(m));
        if self.format != CHECKPOINT_FORMAT {
            return bad(format!("unrecognized format tag {:?}", self.format));
        }
        if self.version != CHECKPOINT_VERSION {
            return bad(format!("unsupported version {} (expected {CHECKPOINT_VERSION})", self.version));
        }
        if self.quantiles.is_empty() {
            return bad("no quantiles".into());
        }
        self.network.validate().or_else(|e| bad(e.to_string()))?;
        let expected_out = self.quantiles.len().checked_mul(self.head.outputs_per_quantile());
        if expected_out != Some(self.network.output_dim) {
            return bad(format!(
                "{:?} head with {} quantiles needs {} outputs, network has {}",
                self.head,
                self.quantiles.len(),
                self.quantiles.len().saturating_mul(self.head.outputs_per_quantile()),
                self.network.output_dim
            ));
        }
        let n = self.network.param_count();
        if self.params.len() != n {
            return bad(format!("expected {n} parameters, found {}", self.params.len()));
        }
        if self.params.iter().any(|v| !v.is_finite()) {
            return bad("non-finite parameter".into());
        }
        if let Some(opt) = &self.optimizer {
            if opt.m.len() != n || opt.v.len() != n {
                return bad("optimizer state does not match parameter count".into());
            }
        }
        if let Some(s) = &self.standardization {
            if s.features.len() != self.network.input_dim {
                return bad(format!(
                    "standardization covers {} features, network expects {}",
                    s.features.len(),
                    self.network.input_dim
                ));
            }
            s.validate().or_else(|e| bad(e.to_string()))?;
        }
        if let Some(t) = &self.train {
            t.validate().or_else(|e| bad(e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates checkpoint bytes.
    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let ckpt: Self = serde_json::from_slice(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Writes to a sibling temporary file and renames it into place, so a
    /// failed save never leaves a truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = self.to_json()?;
        let tmp = path.with_extension("tmp-ckpt");
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(json.as_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Error::io(path, e)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_slice(&bytes)
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        Mlp::from_params(self.network, self.params.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Activation;

    fn net() -> Mlp {
        Mlp::new(
            MlpConfig {
                input_dim: 2,
                hidden_layers: 2,
                hidden_units: 5,
                activation: Activation::LeakyRelu,
                dropout_rate: 0.1,
                output_dim: 8,
            },
            9,
        )
        .unwrap()
    }

    fn qs() -> Vec<QuantileLevel> {
        vec![QuantileLevel::new(0.05).unwrap(), QuantileLevel::new(0.95).unwrap()]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mlp = net();
        let ckpt = Checkpoint::new(HeadKind::Evidential, qs(), &mlp).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_mlp().unwrap().params(), mlp.params());
        assert!(!path.with_extension("tmp-ckpt").exists());
    }

    #[test]
    fn head_width_is_checked() {
        assert!(Checkpoint::new(HeadKind::MeanScale, qs(), &net()).is_err());
    }

    #[test]
    fn tampered_checkpoints_rejected() {
        let ckpt = Checkpoint::new(HeadKind::Evidential, qs(), &net()).unwrap();
        let mut short = ckpt.clone();
        short.params.pop();
        assert!(Checkpoint::from_slice(short.to_json().unwrap().as_bytes()).is_err());
        let mut future = ckpt.clone();
        future.version = 2;
        assert!(Checkpoint::from_slice(future.to_json().unwrap().as_bytes()).is_err());
        let json = ckpt.to_json().unwrap().replacen("{", "{\"extra\": 1,", 1);
        assert!(Checkpoint::from_slice(json.as_bytes()).is_err());
        assert!(Checkpoint::from_slice(b"not json").is_err());
    }

    #[test]
    fn missing_file_is_reported() {
        let err = Checkpoint::load(Path::new("/nonexistent/dir/m.json")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }
}
