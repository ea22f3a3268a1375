//! Datasets, synthetic generators, CSV ingestion, splits and standardization.

mod csv_io;
mod manifest;
mod synthetic;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::neural::Tensor2;

pub use csv_io::{load_csv, parse_csv, write_csv};
pub use manifest::{DatasetManifest, MANIFEST_VERSION};
pub use synthetic::{evaluation_grid, generate_synthetic, MeanFn, SyntheticSpec};

/// Row indices of the train/validation/test partitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Checks that the partitions are disjoint and cover `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.validation).chain(&self.test) {
            if i >= n || seen[i] {
                return Err(Error::Config(format!("split index {i} is out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config("split does not cover every row".into()));
        }
        Ok(())
    }
}

/// Mean and standard deviation of one column. Constant columns pass
/// through unchanged (`mean = 0`, `sd = 1`, `passthrough = true`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub sd: f64,
    #[serde(default)]
    pub passthrough: bool,
}

impl ColumnStats {
    const IDENTITY: Self = Self { mean: 0.0, sd: 1.0, passthrough: true };

    fn of(values: impl Iterator<Item = f64> + Clone) -> Option<Self> {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 1e-12 * mean.abs().max(1.0) && sd.is_finite() {
            Some(Self { mean, sd, passthrough: false })
        } else {
            None
        }
    }

    #[inline]
    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }

    #[inline]
    pub fn inverse(&self, v: f64) -> f64 {
        v * self.sd + self.mean
    }
}

/// Training-split statistics for every feature and the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardization {
    pub features: Vec<ColumnStats>,
    pub target: ColumnStats,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl Standardization {
    pub fn validate(&self) -> Result<()> {
        for s in self.features.iter().chain(std::iter::once(&self.target)) {
            ensure_finite("standardization mean", s.mean)?;
            ensure_finite("standardization sd", s.sd)?;
            if s.sd <= 0.0 {
                return Err(Error::Domain { what: "standardization sd", value: s.sd, reason: "must be > 0" });
            }
        }
        Ok(())
    }

    fn check_width(&self, x: &Tensor2) -> Result<()> {
        if x.cols() != self.features.len() {
            return Err(Error::Shape {
                context: "standardized features",
                expected: format!("{} columns", self.features.len()),
                got: format!("{} columns", x.cols()),
            });
        }
        Ok(())
    }

    pub fn transform_features(&self, x: &Tensor2) -> Result<Tensor2> {
        self.check_width(x)?;
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (v, s) in out.row_mut(r).iter_mut().zip(&self.features) {
                *v = s.forward(*v);
            }
        }
        Ok(out)
    }

    pub fn inverse_features(&self, x: &Tensor2) -> Result<Tensor2> {
        self.check_width(x)?;
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (v, s) in out.row_mut(r).iter_mut().zip(&self.features) {
                *v = s.inverse(*v);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor2,
    targets: Vec<f64>,
    feature_names: Vec<String>,
    target_name: String,
    split: Option<Split>,
    standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(features: Tensor2, targets: Vec<f64>, feature_names: Vec<String>, target_name: String) -> Result<Self> {
        if features.rows() != targets.len() {
            return Err(Error::Shape {
                context: "dataset",
                expected: format!("{} targets", features.rows()),
                got: targets.len().to_string(),
            });
        }
        if feature_names.len() != features.cols() {
            return Err(Error::Shape {
                context: "dataset feature names",
                expected: format!("{} names", features.cols()),
                got: feature_names.len().to_string(),
            });
        }
        for &v in features.values().iter().chain(&targets) {
            ensure_finite("dataset value", v)?;
        }
        Ok(Self { features, targets, feature_names, target_name, split: None, standardization: None })
    }

    pub fn features(&self) -> &Tensor2 {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn split(&self) -> Option<&Split> {
        self.split.as_ref()
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn with_split(mut self, split: Split) -> Result<Self> {
        split.validate(self.len())?;
        self.split = Some(split);
        Ok(self)
    }

    /// Features and targets of the given rows.
    pub fn subset(&self, rows: &[usize]) -> (Tensor2, Vec<f64>) {
        (self.features.select_rows(rows), rows.iter().map(|&i| self.targets[i]).collect())
    }
}

/// Seed for run `run` of an experiment with base seed `base`.
pub fn run_seed(base: u64, run: usize) -> u64 {
    base.wrapping_add(run as u64)
}

/// Seeded shuffle, then partition by `fractions` = (train, validation, test).
pub fn split(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Dataset> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::Config(format!("split fractions must be non-negative, got {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions must sum to 1, got {total}")));
    }
    let n = dataset.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    if n_train == 0 {
        return Err(Error::Config(format!("split {fractions:?} leaves the training partition empty for {n} rows")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(n_train + n_val);
    let validation = order.split_off(n_train);
    dataset.clone().with_split(Split { train: order, validation, test })
}

/// Z-scores features and target with statistics from the training rows only.
pub fn standardize(dataset: &Dataset) -> Result<(Dataset, Standardization)> {
    let split = dataset.split.as_ref().ok_or(Error::Empty("split (standardize needs a training partition)"))?;
    if split.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let x = &dataset.features;
    let mut warnings = Vec::new();
    let features = (0..x.cols())
        .map(|c| {
            ColumnStats::of(split.train.iter().map(|&i| x.get(i, c))).unwrap_or_else(|| {
                warnings.push(format!(
                    "feature `{}` is constant on the training split; passed through unscaled",
                    dataset.feature_names[c]
                ));
                ColumnStats::IDENTITY
            })
        })
        .collect();
    let target = ColumnStats::of(split.train.iter().map(|&i| dataset.targets[i])).unwrap_or_else(|| {
        warnings.push(format!(
            "target `{}` is constant on the training split; passed through unscaled",
            dataset.target_name
        ));
        ColumnStats::IDENTITY
    });
    let stats = Standardization { features, target, warnings };
    let mut out = dataset.clone();
    out.features = stats.transform_features(x)?;
    out.targets = dataset.targets.iter().map(|&y| stats.target.forward(y)).collect();
    out.standardization = Some(stats.clone());
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-5.0..20.0)).collect();
        let y = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        Dataset::new(Tensor2::from_vec(n, 2, x).unwrap(), y, vec!["a".into(), "b".into()], "y".into()).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = toy(100, 1);
        let a = split(&d, [0.8, 0.1, 0.1], 4).unwrap();
        let s = a.split().unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (80, 10, 10));
        assert_eq!(split(&d, [0.8, 0.1, 0.1], 4).unwrap().split(), a.split());
    }

    #[test]
    fn twenty_run_seeds_give_distinct_test_sets() {
        let d = toy(100, 1);
        let mut tests: Vec<Vec<usize>> = (0..20)
            .map(|r| {
                let mut t = split(&d, [0.8, 0.1, 0.1], run_seed(11, r)).unwrap().split().unwrap().test.clone();
                t.sort_unstable();
                t
            })
            .collect();
        tests.sort();
        tests.dedup();
        assert_eq!(tests.len(), 20);
    }

    #[test]
    fn degenerate_fractions_rejected() {
        let d = toy(10, 1);
        assert!(split(&d, [0.5, 0.1, 0.1], 0).is_err());
        assert!(split(&d, [1.2, -0.1, -0.1], 0).is_err());
        assert!(split(&d, [0.0, 0.5, 0.5], 0).is_err());
        assert!(split(&d, [f64::NAN, 0.5, 0.5], 0).is_err());
    }

    #[test]
    fn standardized_training_columns_are_unit() {
        let (s, stats) = standardize(&split(&toy(500, 2), [0.8, 0.1, 0.1], 3).unwrap()).unwrap();
        let train = &s.split().unwrap().train;
        for c in 0..2 {
            let vals: Vec<f64> = train.iter().map(|&i| s.features().get(i, c)).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12, "{mean} {sd}");
        }
        assert!(stats.warnings.is_empty());
    }

    #[test]
    fn inverse_restores_original_values() {
        let d = split(&toy(200, 5), [0.8, 0.1, 0.1], 3).unwrap();
        let (s, stats) = standardize(&d).unwrap();
        let back = stats.inverse_features(s.features()).unwrap();
        for (a, b) in back.values().iter().zip(d.features().values()) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
        for (a, b) in s.targets().iter().zip(d.targets()) {
            assert!((stats.target.inverse(*a) - b).abs() < 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn constant_column_passes_through_with_warning() {
        let n = 20;
        let mut x = Tensor2::zeros(n, 2);
        for i in 0..n {
            x.set(i, 0, i as f64);
            x.set(i, 1, 3.5);
        }
        let d = Dataset::new(x, (0..n).map(|i| i as f64 * 2.0).collect(), vec!["v".into(), "c".into()], "y".into())
            .unwrap();
        let (s, stats) = standardize(&split(&d, [0.8, 0.1, 0.1], 0).unwrap()).unwrap();
        assert!(stats.features[1].passthrough);
        assert_eq!(stats.warnings.len(), 1);
        assert!(stats.warnings[0].contains("`c`"));
        assert!((0..n).all(|i| s.features().get(i, 1) == 3.5));
    }

    #[test]
    fn stats_ignore_non_training_targets() {
        let d = split(&toy(100, 8), [0.8, 0.1, 0.1], 1).unwrap();
        let (_, before) = standardize(&d).unwrap();
        let test = d.split().unwrap().test.clone();
        let mut targets = d.targets().to_vec();
        let rotated: Vec<f64> = test.iter().map(|&i| targets[i] * -3.0 + 7.0).collect();
        for (&i, v) in test.iter().zip(rotated) {
            targets[i] = v;
        }
        let perturbed = Dataset::new(d.features().clone(), targets, d.feature_names().to_vec(), "y".into())
            .unwrap()
            .with_split(d.split().unwrap().clone())
            .unwrap();
        let (_, after) = standardize(&perturbed).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn standardize_requires_training_rows() {
        assert!(standardize(&toy(10, 1)).is_err());
    }

    #[test]
    fn split_validation_catches_overlap() {
        let s = Split { train: vec![0, 1], validation: vec![1], test: vec![2] };
        assert!(s.validate(3).is_err());
        let s = Split { train: vec![0], validation: vec![1], test: vec![] };
        assert!(s.validate(3).is_err());
    }
}
