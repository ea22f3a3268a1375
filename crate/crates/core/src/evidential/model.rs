use super::{
    decompose_uncertainty, marginal_student_t, nll_and_grad, raw_to_evidential, raw_to_evidential_with_jacobian,
    regularizer_and_grad, EvidentialParams, UncertaintyEstimate,
};
use crate::dist::{student_t_entropy, QuantileLevel};
use crate::error::{Error, Result};
use crate::neural::{check_objective_shapes, Architecture, LossTerms, Mlp, Objective, Tensor2};

/// Summed per-quantile NLL + λ·regularizer over a head with four raw
/// outputs per quantile, averaged over rows.
#[derive(Debug, Clone)]
pub struct EvidentialObjective {
    quantiles: Vec<QuantileLevel>,
    lambda: f64,
}

impl EvidentialObjective {
    pub fn new(quantiles: Vec<QuantileLevel>, lambda: f64) -> Result<Self> {
        if quantiles.is_empty() {
            return Err(Error::Empty("quantile list"));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Domain { what: "lambda", value: lambda, reason: "must be >= 0" });
        }
        Ok(Self { quantiles, lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Objective for EvidentialObjective {
    fn output_dim(&self) -> usize {
        4 * self.quantiles.len()
    }

    fn evaluate(&self, outputs: &Tensor2, targets: &[f64], mut grad: Option<&mut Tensor2>) -> Result<LossTerms> {
        check_objective_shapes(self, outputs, targets, grad.as_deref())?;
        let n = targets.len() as f64;
        let (mut fit, mut penalty) = (0.0, 0.0);
        for (i, &y) in targets.iter().enumerate() {
            let row = outputs.row(i);
            for (j, &q) in self.quantiles.iter().enumerate() {
                let raw = [row[4 * j], row[4 * j + 1], row[4 * j + 2], row[4 * j + 3]];
                let (p, jac) = raw_to_evidential_with_jacobian(raw);
                let (nll, g_nll) = nll_and_grad(&p, y, q);
                let (reg, g_reg) = regularizer_and_grad(&p, y, q);
                fit += nll;
                penalty += self.lambda * reg;
                if let Some(g) = grad.as_deref_mut() {
                    for k in 0..4 {
                        g.set(i, 4 * j + k, (g_nll[k] + self.lambda * g_reg[k]) * jac[k] / n);
                    }
                }
            }
        }
        let (fit, penalty) = (fit / n, penalty / n);
        Ok(LossTerms { total: fit + penalty, fit, penalty })
    }
}

/// Evidential quantile network: a shared trunk with four outputs per quantile.
#[derive(Debug, Clone)]
pub struct EvidentialModel {
    net: Mlp,
    quantiles: Vec<QuantileLevel>,
}

impl EvidentialModel {
    pub fn new(input_dim: usize, arch: Architecture, quantiles: Vec<QuantileLevel>, seed: u64) -> Result<Self> {
        Self::from_mlp(Mlp::new(arch.mlp(input_dim, 4 * quantiles.len()), seed)?, quantiles)
    }

    pub fn from_mlp(net: Mlp, quantiles: Vec<QuantileLevel>) -> Result<Self> {
        if quantiles.is_empty() {
            return Err(Error::Empty("quantile list"));
        }
        if net.config().output_dim != 4 * quantiles.len() {
            return Err(Error::Shape {
                context: "evidential head",
                expected: format!("{} outputs", 4 * quantiles.len()),
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

    pub fn objective(&self, lambda: f64) -> Result<EvidentialObjective> {
        EvidentialObjective::new(self.quantiles.clone(), lambda)
    }

    /// NIG parameters per row, then per quantile, from one deterministic pass.
    pub fn predict_params(&self, x: &Tensor2) -> Result<Vec<Vec<EvidentialParams>>> {
        let out = self.net.predict(x)?;
        (0..out.rows())
            .map(|i| {
                let row = out.row(i);
                (0..self.quantiles.len())
                    .map(|j| raw_to_evidential([row[4 * j], row[4 * j + 1], row[4 * j + 2], row[4 * j + 3]]))
                    .collect()
            })
            .collect()
    }

    /// Uncertainty decomposition per row and quantile.
    pub fn predict(&self, x: &Tensor2) -> Result<Vec<Vec<UncertaintyEstimate>>> {
        Ok(self.predict_params(x)?.iter().map(|row| row.iter().map(decompose_uncertainty).collect()).collect())
    }
}

/// Entropy of the Student-t predictive for one quantile head.
pub fn predictive_entropy(p: &EvidentialParams, q: QuantileLevel) -> Result<f64> {
    student_t_entropy(&marginal_student_t(p, q))
}
