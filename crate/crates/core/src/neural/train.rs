use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, LossTerms, Mlp, Mode, Objective, Tensor2};
use crate::dist::QuantileLevel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    /// Evidence-regularization coefficient λ.
    pub lambda: f64,
    pub seed: u64,
    pub quantiles: Vec<QuantileLevel>,
    /// L2 coefficient on weight matrices (biases excluded).
    #[serde(default)]
    pub weight_decay: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.early_stop_patience > self.max_epochs {
            return bad(format!(
                "early_stop_patience ({}) exceeds max_epochs ({})",
                self.early_stop_patience, self.max_epochs
            ));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.quantiles.is_empty() {
            return bad("at least one quantile is required".into());
        }
        Ok(())
    }
}

/// Features with aligned targets.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub x: &'a Tensor2,
    pub y: &'a [f64],
}

impl<'a> Samples<'a> {
    pub fn new(x: &'a Tensor2, y: &'a [f64]) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Shape {
                context: "samples",
                expected: format!("{} targets", x.rows()),
                got: y.len().to_string(),
            });
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Row-weighted mean of the training batch losses.
    pub train: LossTerms,
    pub validation: LossTerms,
    pub best_validation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn best_validation(&self) -> f64 {
        self.epochs[self.best_epoch].validation.total
    }
}

fn abort(epoch: usize, batch: usize, stage: &'static str, terms: LossTerms) -> Error {
    Error::TrainingAborted { epoch, batch, stage, terms }
}

const NAN_TERMS: LossTerms = LossTerms { total: f64::NAN, fit: f64::NAN, penalty: f64::NAN };

/// Mini-batch Adam with a seeded per-epoch shuffle and early stopping on the
/// validation objective. Training stops once `early_stop_patience + 1`
/// consecutive epochs fail to improve on the best validation loss; the
/// parameters from the best epoch are restored before returning.
pub fn train(
    model: &mut Mlp,
    train_set: Samples<'_>,
    validation: Samples<'_>,
    config: &TrainConfig,
    objective: &dyn Objective,
) -> Result<History> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if validation.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    if objective.output_dim() != model.config().output_dim {
        return Err(Error::Shape {
            context: "objective vs network output",
            expected: format!("{} outputs", objective.output_dim()),
            got: format!("{} outputs", model.config().output_dim),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(model.params().len());
    let weight_mask = model.weight_mask();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best_params = model.params().to_vec();
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut acc = LossTerms::default();
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = train_set.x.select_rows(chunk);
            let y: Vec<f64> = chunk.iter().map(|&i| train_set.y[i]).collect();
            let (out, mut tape) = model.forward(&x, Mode::Train, &mut rng).map_err(|e| match e {
                Error::NonFinite { .. } => abort(epoch, b, "network output", NAN_TERMS),
                other => other,
            })?;
            let mut g = Tensor2::zeros(out.rows(), out.cols());
            let terms = objective.evaluate(&out, &y, Some(&mut g))?;
            if !terms.is_finite() {
                return Err(abort(epoch, b, "loss", terms));
            }
            if !g.all_finite() {
                return Err(abort(epoch, b, "loss gradient", terms));
            }
            let mut grads = model.backward(&mut tape, &g)?;
            if config.weight_decay > 0.0 {
                for ((gr, &p), &w) in grads.iter_mut().zip(model.params()).zip(&weight_mask) {
                    if w {
                        *gr += config.weight_decay * p;
                    }
                }
            }
            if grads.iter().any(|v| !v.is_finite()) {
                return Err(abort(epoch, b, "parameter gradient", terms));
            }
            adam.step(model.params_mut(), &grads, config.learning_rate)?;
            if model.params().iter().any(|v| !v.is_finite()) {
                return Err(abort(epoch, b, "parameters", terms));
            }
            let w = chunk.len() as f64;
            acc.total += w * terms.total;
            acc.fit += w * terms.fit;
            acc.penalty += w * terms.penalty;
        }
        let n = train_set.len() as f64;
        let train_terms = LossTerms { total: acc.total / n, fit: acc.fit / n, penalty: acc.penalty / n };

        let out = model.predict(validation.x).map_err(|e| match e {
            Error::NonFinite { .. } => abort(epoch, usize::MAX, "validation output", NAN_TERMS),
            other => other,
        })?;
        let val = objective.evaluate(&out, validation.y, None)?;
        if !val.is_finite() {
            return Err(abort(epoch, usize::MAX, "validation loss", val));
        }
        if val.total < best {
            best = val.total;
            best_epoch = epoch;
            best_params.copy_from_slice(model.params());
            stale = 0;
        } else {
            stale += 1;
        }
        epochs.push(EpochRecord { epoch, train: train_terms, validation: val, best_validation: best });
        if stale > config.early_stop_patience {
            stopped_early = true;
            break;
        }
    }
    model.params_mut().copy_from_slice(&best_params);
    Ok(History { epochs, best_epoch, stopped_early })
}
