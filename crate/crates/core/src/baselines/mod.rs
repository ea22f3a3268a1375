//! MC-dropout and deep-ensemble quantile baselines with (μ, σ) heads trained
//! on the asymmetric-Laplace likelihood.

mod store;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::QuantileLevel;
use crate::error::{Error, Result};
use crate::neural::{
    check_objective_shapes, train, Architecture, History, LossTerms, Mlp, Objective, Samples, Tensor2, TrainConfig,
};
use crate::special::{sigmoid, softplus};

pub use store::{EnsembleManifest, ENSEMBLE_MANIFEST};

/// Added to the softplus of the raw σ output.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[inline]
fn sigma_of(raw: f64) -> f64 {
    softplus(raw) + SIGMA_FLOOR
}

/// Summed per-quantile asymmetric-Laplace NLL over (μ, raw σ) column pairs,
/// averaged over rows.
#[derive(Debug, Clone)]
pub struct MeanScaleObjective {
    quantiles: Vec<QuantileLevel>,
}

impl MeanScaleObjective {
    pub fn new(quantiles: Vec<QuantileLevel>) -> Result<Self> {
        if quantiles.is_empty() {
            return Err(Error::Empty("quantile list"));
        }
        Ok(Self { quantiles })
    }
}

impl Objective for MeanScaleObjective {
    fn output_dim(&self) -> usize {
        2 * self.quantiles.len()
    }

    fn evaluate(&self, outputs: &Tensor2, targets: &[f64], mut grad: Option<&mut Tensor2>) -> Result<LossTerms> {
        check_objective_shapes(self, outputs, targets, grad.as_deref())?;
        let n = targets.len() as f64;
        let mut sum = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            for (j, &q) in self.quantiles.iter().enumerate() {
                let mu = outputs.get(i, 2 * j);
                let raw = outputs.get(i, 2 * j + 1);
                let sigma = sigma_of(raw);
                let u = (y - mu) / sigma;
                let rho = q.rho(u);
                sum += sigma.ln() - (q.q() * (1.0 - q.q())).ln() + rho;
                if let Some(g) = grad.as_deref_mut() {
                    // ρ is positively homogeneous, so u·ρ'(u) = ρ(u).
                    g.set(i, 2 * j, -q.rho_slope(u) / sigma / n);
                    g.set(i, 2 * j + 1, (1.0 - rho) / sigma * sigmoid(raw) / n);
                }
            }
        }
        let fit = sum / n;
        Ok(LossTerms { total: fit, fit, penalty: 0.0 })
    }
}

/// A network with a (μ, σ) pair per quantile.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    net: Mlp,
    quantiles: Vec<QuantileLevel>,
}

/// μ and σ for every row of one quantile head.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadOutputs {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl BaselineModel {
    pub fn new(input_dim: usize, arch: Architecture, quantiles: Vec<QuantileLevel>, seed: u64) -> Result<Self> {
        Self::from_mlp(Mlp::new(arch.mlp(input_dim, 2 * quantiles.len()), seed)?, quantiles)
    }

    pub fn from_mlp(net: Mlp, quantiles: Vec<QuantileLevel>) -> Result<Self> {
        if quantiles.is_empty() {
            return Err(Error::Empty("quantile list"));
        }
        if net.config().output_dim != 2 * quantiles.len() {
            return Err(Error::Shape {
                context: "mean/scale head",
                expected: format!("{} outputs", 2 * quantiles.len()),
                got: format!("{} outputs", net.config().output_dim),
            });
        }
        Ok(Self { net, quantiles })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn quantiles(&self) -> &[QuantileLevel] {
        &self.quantiles
    }

    pub fn objective(&self) -> MeanScaleObjective {
        MeanScaleObjective { quantiles: self.quantiles.clone() }
    }

    fn split_heads(&self, out: &Tensor2) -> Vec<HeadOutputs> {
        (0..self.quantiles.len())
            .map(|j| HeadOutputs {
                mu: (0..out.rows()).map(|i| out.get(i, 2 * j)).collect(),
                sigma: (0..out.rows()).map(|i| sigma_of(out.get(i, 2 * j + 1))).collect(),
            })
            .collect()
    }

    /// Deterministic (dropout off) heads, one entry per quantile.
    pub fn predict(&self, x: &Tensor2) -> Result<Vec<HeadOutputs>> {
        Ok(self.split_heads(&self.net.predict(x)?))
    }

    /// Heads from one pass with dropout active.
    pub fn sample<R: Rng + ?Sized>(&self, x: &Tensor2, rng: &mut R) -> Result<Vec<HeadOutputs>> {
        Ok(self.split_heads(&self.net.sample(x, rng)?))
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.net.config() == other.net.config() && self.quantiles == other.quantiles
    }
}

/// Per-quantile summary of repeated predictions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileSummary {
    pub quantile: QuantileLevel,
    pub mean_mu: Vec<f64>,
    /// Unbiased (n − 1) sample variance of μ across passes.
    pub epistemic_var: Vec<f64>,
    pub mean_sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledPrediction {
    pub per_quantile: Vec<QuantileSummary>,
    pub n_samples: usize,
}

fn summarize(quantiles: &[QuantileLevel], passes: &[Vec<HeadOutputs>]) -> SampledPrediction {
    let n = passes.len() as f64;
    let per_quantile = quantiles
        .iter()
        .enumerate()
        .map(|(j, &quantile)| {
            let rows = passes[0][j].mu.len();
            let mut mean_mu = vec![0.0; rows];
            let mut mean_sigma = vec![0.0; rows];
            for pass in passes {
                for r in 0..rows {
                    mean_mu[r] += pass[j].mu[r] / n;
                    mean_sigma[r] += pass[j].sigma[r] / n;
                }
            }
            let epistemic_var = (0..rows)
                .map(|r| {
                    if passes.len() < 2 {
                        return f64::NAN;
                    }
                    passes.iter().map(|p| (p[j].mu[r] - mean_mu[r]).powi(2)).sum::<f64>() / (n - 1.0)
                })
                .collect();
            QuantileSummary { quantile, mean_mu, epistemic_var, mean_sigma }
        })
        .collect();
    SampledPrediction { per_quantile, n_samples: passes.len() }
}

/// `n_samples` stochastic passes with dropout active through the whole network.
pub fn mc_dropout_predict<R: Rng + ?Sized>(
    model: &BaselineModel,
    x: &Tensor2,
    n_samples: usize,
    rng: &mut R,
) -> Result<SampledPrediction> {
    if n_samples < 2 {
        return Err(Error::Domain {
            what: "n_samples",
            value: n_samples as f64,
            reason: "sample variance needs at least 2 passes",
        });
    }
    let passes = (0..n_samples).map(|_| model.sample(x, rng)).collect::<Result<Vec<_>>>()?;
    Ok(summarize(&model.quantiles, &passes))
}

/// Independently trained members sharing one architecture and quantile set.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    members: Vec<BaselineModel>,
}

impl EnsembleModel {
    pub fn new(members: Vec<BaselineModel>) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("ensemble"))?;
        if members.iter().any(|m| !m.same_shape(first)) {
            return Err(Error::Config("ensemble members differ in architecture or quantiles".into()));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[BaselineModel] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn quantiles(&self) -> &[QuantileLevel] {
        &self.members[0].quantiles
    }

    fn passes(&self, x: &Tensor2) -> Result<Vec<Vec<HeadOutputs>>> {
        self.members.iter().map(|m| m.predict(x)).collect()
    }
}

/// Mean and unbiased variance of deterministic member predictions.
pub fn ensemble_predict(ensemble: &EnsembleModel, x: &Tensor2) -> Result<SampledPrediction> {
    if ensemble.size() < 2 {
        return Err(Error::Domain {
            what: "ensemble size",
            value: ensemble.size() as f64,
            reason: "epistemic variance needs at least 2 members; use ensemble_mean",
        });
    }
    Ok(summarize(ensemble.quantiles(), &ensemble.passes(x)?))
}

/// Member-averaged μ and σ without a variance, valid for any size.
pub fn ensemble_mean(ensemble: &EnsembleModel, x: &Tensor2) -> Result<Vec<HeadOutputs>> {
    let s = summarize(ensemble.quantiles(), &ensemble.passes(x)?);
    Ok(s.per_quantile.into_iter().map(|q| HeadOutputs { mu: q.mean_mu, sigma: q.mean_sigma }).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Dropout,
    Ensemble,
}

#[derive(Debug, Clone)]
pub enum TrainedBaseline {
    Dropout { model: BaselineModel, history: History },
    Ensemble { model: EnsembleModel, histories: Vec<History> },
}

/// Trains a dropout model, or `members` ensemble members whose
/// initialization and shuffling seeds are `config.seed + i`.
pub fn train_baseline(
    kind: BaselineKind,
    arch: Architecture,
    members: usize,
    train_set: Samples<'_>,
    validation: Samples<'_>,
    config: &TrainConfig,
) -> Result<TrainedBaseline> {
    let input_dim = train_set.x.cols();
    let fit = |seed: u64| -> Result<(BaselineModel, History)> {
        let mut model = BaselineModel::new(input_dim, arch, config.quantiles.clone(), seed)?;
        let cfg = TrainConfig { seed, ..config.clone() };
        let objective = model.objective();
        let history = train(&mut model.net, train_set, validation, &cfg, &objective)?;
        Ok((model, history))
    };
    match kind {
        BaselineKind::Dropout => {
            let (model, history) = fit(config.seed)?;
            Ok(TrainedBaseline::Dropout { model, history })
        }
        BaselineKind::Ensemble => {
            if members == 0 {
                return Err(Error::Config("ensemble needs at least one member".into()));
            }
            let (models, histories) = (0..members)
                .map(|i| fit(config.seed.wrapping_add(i as u64)))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip();
            Ok(TrainedBaseline::Ensemble { model: EnsembleModel::new(models)?, histories })
        }
    }
}
