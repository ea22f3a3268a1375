//! Dense networks, reverse-mode gradients, Adam, and the training loop.

mod adam;
pub mod checkpoint;
mod mlp;
mod tensor;
mod train;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dist::QuantileLevel;
use crate::error::{Error, Result};

pub use adam::{Adam, AdamState};
pub use checkpoint::{Checkpoint, HeadKind, CHECKPOINT_VERSION};
pub use mlp::{Activation, Architecture, Mlp, MlpConfig, Mode, Tape, LEAKY_SLOPE};
pub use tensor::Tensor2;
pub use train::{train, EpochRecord, History, Samples, TrainConfig};

/// Batch loss split into its data-fit and penalty parts; `total = fit + penalty`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub fit: f64,
    pub penalty: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.fit.is_finite() && self.penalty.is_finite()
    }
}

impl fmt::Display for LossTerms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "total={} fit={} penalty={}", self.total, self.fit, self.penalty)
    }
}

/// A differentiable loss over network outputs.
///
/// The loss is the mean over rows. When `grad` is given it receives
/// dLoss/dOutputs with the same shape as `outputs`.
pub trait Objective {
    fn output_dim(&self) -> usize;

    fn evaluate(&self, outputs: &Tensor2, targets: &[f64], grad: Option<&mut Tensor2>) -> Result<LossTerms>;
}

pub(crate) fn check_objective_shapes(
    objective: &dyn Objective,
    outputs: &Tensor2,
    targets: &[f64],
    grad: Option<&Tensor2>,
) -> Result<()> {
    if outputs.cols() != objective.output_dim() {
        return Err(Error::Shape {
            context: "objective outputs",
            expected: format!("{} columns", objective.output_dim()),
            got: format!("{} columns", outputs.cols()),
        });
    }
    if outputs.rows() != targets.len() {
        return Err(Error::Shape {
            context: "objective targets",
            expected: format!("{} targets", outputs.rows()),
            got: targets.len().to_string(),
        });
    }
    if outputs.rows() == 0 {
        return Err(Error::Empty("batch"));
    }
    if let Some(g) = grad {
        if g.rows() != outputs.rows() || g.cols() != outputs.cols() {
            return Err(Error::Shape {
                context: "objective gradient buffer",
                expected: format!("{}x{}", outputs.rows(), outputs.cols()),
                got: format!("{}x{}", g.rows(), g.cols()),
            });
        }
    }
    Ok(())
}

/// Mean squared error on a single output column.
#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredError;

impl Objective for SquaredError {
    fn output_dim(&self) -> usize {
        1
    }

    fn evaluate(&self, outputs: &Tensor2, targets: &[f64], mut grad: Option<&mut Tensor2>) -> Result<LossTerms> {
        check_objective_shapes(self, outputs, targets, grad.as_deref())?;
        let n = targets.len() as f64;
        let mut sum = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            let r = outputs.get(i, 0) - y;
            sum += r * r;
            if let Some(g) = grad.as_deref_mut() {
                g.set(i, 0, 2.0 * r / n);
            }
        }
        let fit = sum / n;
        Ok(LossTerms { total: fit, fit, penalty: 0.0 })
    }
}

/// Summed tilted loss with one output column per quantile.
#[derive(Debug, Clone)]
pub struct TiltedObjective {
    quantiles: Vec<QuantileLevel>,
}

impl TiltedObjective {
    pub fn new(quantiles: Vec<QuantileLevel>) -> Result<Self> {
        if quantiles.is_empty() {
            return Err(Error::Empty("quantile list"));
        }
        Ok(Self { quantiles })
    }
}

impl Objective for TiltedObjective {
    fn output_dim(&self) -> usize {
        self.quantiles.len()
    }

    fn evaluate(&self, outputs: &Tensor2, targets: &[f64], mut grad: Option<&mut Tensor2>) -> Result<LossTerms> {
        check_objective_shapes(self, outputs, targets, grad.as_deref())?;
        let n = targets.len() as f64;
        let mut sum = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            for (j, q) in self.quantiles.iter().enumerate() {
                let eps = y - outputs.get(i, j);
                sum += q.rho(eps);
                if let Some(g) = grad.as_deref_mut() {
                    g.set(i, j, -q.rho_slope(eps) / n);
                }
            }
        }
        let fit = sum / n;
        Ok(LossTerms { total: fit, fit, penalty: 0.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ql(q: f64) -> QuantileLevel {
        QuantileLevel::new(q).unwrap()
    }

    fn fd_check(objective: &dyn Objective, outputs: &Tensor2, targets: &[f64]) {
        let mut g = Tensor2::zeros(outputs.rows(), outputs.cols());
        objective.evaluate(outputs, targets, Some(&mut g)).unwrap();
        let h = 1e-6;
        for k in 0..outputs.values().len() {
            let mut up = outputs.clone();
            up.values_mut()[k] += h;
            let mut dn = outputs.clone();
            dn.values_mut()[k] -= h;
            let fd = (objective.evaluate(&up, targets, None).unwrap().total
                - objective.evaluate(&dn, targets, None).unwrap().total)
                / (2.0 * h);
            let an = g.values()[k];
            assert!((fd - an).abs() < 1e-7 * fd.abs().max(1.0), "entry {k}: {fd} vs {an}");
        }
    }

    #[test]
    fn squared_error_gradient() {
        let out = Tensor2::column(vec![0.3, -1.2, 2.0]);
        fd_check(&SquaredError, &out, &[1.0, 0.0, 2.5]);
    }

    #[test]
    fn tilted_gradient_away_from_kinks() {
        let obj = TiltedObjective::new(vec![ql(0.1), ql(0.5), ql(0.9)]).unwrap();
        let out = Tensor2::from_vec(2, 3, vec![0.3, -1.2, 2.0, 1.0, 1.5, -0.4]).unwrap();
        fd_check(&obj, &out, &[1.0, -2.0]);
    }

    #[test]
    fn perfect_median_prediction_has_zero_tilted_loss() {
        let obj = TiltedObjective::new(vec![ql(0.5)]).unwrap();
        let out = Tensor2::column(vec![1.0, 2.0]);
        assert_eq!(obj.evaluate(&out, &[1.0, 2.0], None).unwrap().total, 0.0);
    }

    #[test]
    fn misaligned_targets_rejected() {
        let out = Tensor2::column(vec![1.0, 2.0]);
        assert!(matches!(SquaredError.evaluate(&out, &[1.0], None), Err(Error::Shape { .. })));
    }

    #[test]
    fn loss_terms_display_names_every_term() {
        let t = LossTerms { total: 1.5, fit: 1.0, penalty: 0.5 };
        assert_eq!(t.to_string(), "total=1.5 fit=1 penalty=0.5");
    }
}
