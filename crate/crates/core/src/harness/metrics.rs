//! Per-quantile evaluation metrics and their aggregation over runs.

use serde::{Deserialize, Serialize};

use crate::dist::{al_nll, QuantileLevel};
use crate::error::{ensure_finite, Error, Result};

/// One method's outputs for one quantile, in original target units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantilePrediction {
    pub quantile: QuantileLevel,
    pub prediction: Vec<f64>,
    /// Scale plugged into the asymmetric-Laplace likelihood.
    pub aleatoric: Vec<f64>,
    pub epistemic: Vec<f64>,
    pub entropy: Vec<f64>,
}

impl QuantilePrediction {
    pub fn len(&self) -> usize {
        self.prediction.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prediction.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileMetrics {
    pub quantile: f64,
    /// Mean tilted loss of the prediction.
    pub tilted_loss: f64,
    /// Mean asymmetric-Laplace NLL at (prediction, aleatoric).
    pub nll: f64,
    /// Mean absolute error to the true conditional quantile, when known.
    pub mae_to_truth: Option<f64>,
    /// Fraction of targets strictly below the prediction.
    pub coverage: f64,
    pub epistemic: f64,
    pub aleatoric: f64,
    pub entropy: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Scores predictions against `targets`. `truth[j][i]` is the exact
/// conditional quantile for head `j` at row `i`.
pub fn compute_metrics(
    predictions: &[QuantilePrediction],
    targets: &[f64],
    truth: Option<&[Vec<f64>]>,
) -> Result<Vec<QuantileMetrics>> {
    if targets.is_empty() {
        return Err(Error::Empty("evaluation targets"));
    }
    if let Some(t) = truth {
        if t.len() != predictions.len() {
            return Err(Error::Shape {
                context: "true quantiles",
                expected: format!("{} heads", predictions.len()),
                got: format!("{} heads", t.len()),
            });
        }
    }
    let n = targets.len();
    predictions
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let lens = [p.prediction.len(), p.aleatoric.len(), p.epistemic.len(), p.entropy.len()];
            if lens.iter().any(|&l| l != n) {
                return Err(Error::Shape {
                    context: "predictions vs targets",
                    expected: format!("{n} rows per column"),
                    got: format!("{lens:?}"),
                });
            }
            let q = p.quantile;
            let mut tl = 0.0;
            let mut nll = 0.0;
            let mut below = 0usize;
            for (i, &y) in targets.iter().enumerate() {
                let mu = p.prediction[i];
                tl += q.rho(ensure_finite("target", y)? - mu);
                nll += al_nll(y, mu, p.aleatoric[i], q)?;
                below += usize::from(y < mu);
            }
            let mae_to_truth = match truth {
                Some(t) => {
                    let tj = &t[j];
                    if tj.len() != n {
                        return Err(Error::Shape {
                            context: "true quantiles",
                            expected: format!("{n} rows"),
                            got: tj.len().to_string(),
                        });
                    }
                    Some(tj.iter().zip(&p.prediction).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64)
                }
                None => None,
            };
            Ok(QuantileMetrics {
                quantile: q.q(),
                tilted_loss: tl / n as f64,
                nll: nll / n as f64,
                mae_to_truth,
                coverage: below as f64 / n as f64,
                epistemic: mean(&p.epistemic),
                aleatoric: mean(&p.aleatoric),
                entropy: mean(&p.entropy),
            })
        })
        .collect()
}

/// Mean with its two-standard-deviation companion and the run count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Twice the sample (n − 1) standard deviation; zero for a single run.
    pub two_sd: f64,
    pub runs: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("values to summarize"));
        }
        let n = values.len();
        let m = mean(values);
        let sd =
            if n > 1 { (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Ok(Self { mean: m, two_sd: 2.0 * sd, runs: n })
    }
}

/// Mean epistemic and aleatoric values inside and outside the training range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub epistemic_in: f64,
    pub epistemic_out: f64,
    pub aleatoric_in: f64,
    pub aleatoric_out: f64,
}

impl BandStats {
    /// Averages over grid points with |x| ≤ `inner` and `outer[0]` ≤ |x| ≤ `outer[1]`.
    pub fn of(x: &[f64], p: &QuantilePrediction, inner: f64, outer: [f64; 2]) -> Option<Self> {
        let pick = |keep: &dyn Fn(f64) -> bool, v: &[f64]| -> Option<f64> {
            let sel: Vec<f64> = x.iter().zip(v).filter(|(x, _)| keep(x.abs())).map(|(_, v)| *v).collect();
            (!sel.is_empty()).then(|| mean(&sel))
        };
        let is_in = |a: f64| a <= inner;
        let is_out = |a: f64| a >= outer[0] && a <= outer[1];
        Some(Self {
            epistemic_in: pick(&is_in, &p.epistemic)?,
            epistemic_out: pick(&is_out, &p.epistemic)?,
            aleatoric_in: pick(&is_in, &p.aleatoric)?,
            aleatoric_out: pick(&is_out, &p.aleatoric)?,
        })
    }
}
