use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::dist::{sample_noise, theoretical_quantile, NoiseSpec, QuantileLevel};
use crate::error::{Error, Result};
use crate::neural::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanFn {
    /// y = x³
    #[default]
    Cubic,
}

impl MeanFn {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            MeanFn::Cubic => x * x * x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default)]
    pub mean_fn: MeanFn,
    pub x_range: [f64; 2],
    pub n: usize,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.x_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("x_range must satisfy lo < hi, got [{lo}, {hi}]")));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        self.noise.validate()
    }

    /// Exact q-quantile of y given x.
    pub fn conditional_quantile(&self, x: f64, q: QuantileLevel) -> Result<f64> {
        Ok(self.mean_fn.eval(x) + theoretical_quantile(&self.noise, x, q)?)
    }
}

/// Draws `n` points with x uniform on `x_range` and y = f(x) + noise(x).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [lo, hi] = spec.x_range;
    let mut xs = Vec::with_capacity(spec.n);
    let mut ys = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let x = rng.random_range(lo..hi);
        let eps = sample_noise(&spec.noise, x, &mut rng)?;
        xs.push(x);
        ys.push(spec.mean_fn.eval(x) + eps);
    }
    Dataset::new(Tensor2::column(xs), ys, vec!["x".into()], "y".into())
}

/// `n` evenly spaced points on [lo, hi] as a single-column tensor.
pub fn evaluation_grid(lo: f64, hi: f64, n: usize) -> Tensor2 {
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    Tensor2::column((0..n).map(|i| lo + step * i as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{NoiseFamily, ScaleParam};

    fn spec(noise: NoiseSpec, n: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec { mean_fn: MeanFn::Cubic, x_range: [-4.0, 4.0], n, noise, seed }
    }

    #[test]
    fn negligible_noise_leaves_the_cubic() {
        let noise = NoiseSpec { floor: 1e-12, ..NoiseSpec::new(NoiseFamily::Gaussian, [0.0, 0.0]) };
        let d = generate_synthetic(&spec(noise, 200, 3)).unwrap();
        for (i, y) in d.targets().iter().enumerate() {
            let x = d.features().get(i, 0);
            assert!((y - x.powi(3)).abs() < 1e-10);
        }
    }

    #[test]
    fn equal_specs_give_bit_equal_data() {
        let s = spec(NoiseSpec::exponential_growing(), 1000, 9);
        assert_eq!(generate_synthetic(&s).unwrap(), generate_synthetic(&s).unwrap());
        let other = spec(NoiseSpec::exponential_growing(), 1000, 10);
        assert_ne!(generate_synthetic(&s).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn covariates_stay_in_range() {
        let d = generate_synthetic(&spec(NoiseSpec::laplace_growing(), 5000, 1)).unwrap();
        assert_eq!(d.len(), 5000);
        assert!(d.features().values().iter().all(|x| (-4.0..4.0).contains(x)));
    }

    #[test]
    fn slab_quantile_matches_theory() {
        // Oversample, keep a thin slab around x = 2 and compare the
        // empirical 95th percentile of y − x³ with the exact quantile.
        let s = SyntheticSpec { x_range: [1.95, 2.05], ..spec(NoiseSpec::exponential_growing(), 100_000, 4) };
        let d = generate_synthetic(&s).unwrap();
        let mut resid: Vec<f64> =
            d.targets().iter().enumerate().map(|(i, y)| y - d.features().get(i, 0).powi(3)).collect();
        resid.sort_by(f64::total_cmp);
        let empirical = resid[(0.95 * resid.len() as f64) as usize];
        let q = QuantileLevel::new(0.95).unwrap();
        let theory = theoretical_quantile(&s.noise, 2.0, q).unwrap();
        // Scale varies by ±0.2 across the slab; the quantile by 3·0.2.
        assert!((empirical - theory).abs() < 0.5, "{empirical} vs {theory}");
    }

    #[test]
    fn rate_parameterized_noise_is_supported() {
        let d = generate_synthetic(&SyntheticSpec {
            x_range: [-7.0, 7.0],
            ..spec(NoiseSpec::exponential_centered(), 100, 2)
        })
        .unwrap();
        assert_eq!(NoiseSpec::exponential_centered().scale_param, ScaleParam::Rate);
        assert!(d.targets().iter().all(|y| y.is_finite()));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate_synthetic(&SyntheticSpec {
            x_range: [1.0, 1.0],
            ..spec(NoiseSpec::gaussian_growing(), 5, 0)
        })
        .is_err());
        assert!(generate_synthetic(&spec(NoiseSpec::gaussian_growing(), 0, 0)).is_err());
    }

    #[test]
    fn grid_endpoints() {
        let g = evaluation_grid(-7.0, 7.0, 141);
        assert_eq!(g.rows(), 141);
        assert_eq!(g.get(0, 0), -7.0);
        assert!((g.get(140, 0) - 7.0).abs() < 1e-12);
        assert!((g.get(70, 0)).abs() < 1e-12);
    }
}
