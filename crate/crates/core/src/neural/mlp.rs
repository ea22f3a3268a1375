//! Dense multilayer perceptron with leaky-ReLU hidden layers and inverted
//! dropout after every hidden activation.
//!
//! All parameters live in one flat vector. Layer `l` stores its weight matrix
//! as `fan_in × fan_out` row-major, followed by its bias, so a batch forward
//! is `X · W + b`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor2};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const MAX_HIDDEN_LAYERS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    LeakyRelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    #[serde(default)]
    pub activation: Activation,
    pub dropout_rate: f64,
    pub output_dim: usize,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("input_dim and output_dim must be positive".into()));
        }
        if self.hidden_layers > 0 && self.hidden_units == 0 {
            return Err(Error::Config("hidden_units must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate)));
        }
        if self.hidden_layers > MAX_HIDDEN_LAYERS {
            return Err(Error::Config(format!(
                "hidden_layers must be at most {MAX_HIDDEN_LAYERS}, got {}",
                self.hidden_layers
            )));
        }
        if self.checked_param_count().is_none() {
            return Err(Error::Config("network dimensions overflow the parameter count".into()));
        }
        Ok(())
    }

    fn checked_param_count(&self) -> Option<usize> {
        self.layer_dims().iter().try_fold(0usize, |acc, (i, o)| i.checked_mul(*o)?.checked_add(*o)?.checked_add(acc))
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.hidden_units));
            fan_in = self.hidden_units;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }

    /// Panics if the dimensions overflow; [`MlpConfig::validate`] rules that out.
    pub fn param_count(&self) -> usize {
        self.checked_param_count().expect("parameter count overflow")
    }
}

/// Trunk shape shared by every model family; the head width is supplied
/// separately because it depends on the method and the quantile count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub hidden_layers: usize,
    pub hidden_units: usize,
    #[serde(default)]
    pub dropout_rate: f64,
}

impl Architecture {
    pub fn mlp(&self, input_dim: usize, output_dim: usize) -> MlpConfig {
        MlpConfig {
            input_dim,
            hidden_layers: self.hidden_layers,
            hidden_units: self.hidden_units,
            activation: Activation::LeakyRelu,
            dropout_rate: self.dropout_rate,
            output_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    config: MlpConfig,
    layers: Vec<Layer>,
    params: Vec<f64>,
    version: u64,
}

/// Activations recorded by a forward pass for the backward pass.
#[derive(Debug)]
pub struct Tape {
    version: u64,
    consumed: bool,
    /// Input to each linear layer (after dropout for hidden layers).
    inputs: Vec<Tensor2>,
    /// Pre-activations of the hidden layers.
    pre_activations: Vec<Tensor2>,
    /// Inverted-dropout multipliers per hidden layer; `None` when inactive.
    masks: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Dropout multipliers recorded for hidden layer `layer`.
    pub fn dropout_mask(&self, layer: usize) -> Option<&[f64]> {
        self.masks.get(layer).and_then(|m| m.as_deref())
    }
}

#[inline]
fn leaky(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

impl Mlp {
    /// Kaiming-uniform initialization seeded by `seed`; biases start at zero.
    pub fn new(config: MlpConfig, seed: u64) -> Result<Self> {
        let mut mlp = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = mlp.layers.len() - 1;
        for (l, layer) in mlp.layers.clone().iter().enumerate() {
            let gain_sq = if l == last { 1.0 } else { 2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE) };
            let bound = (3.0 * gain_sq / layer.fan_in as f64).sqrt();
            for w in &mut mlp.params[layer.weights..layer.bias] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(mlp)
    }

    /// All parameters zero.
    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut offset = 0;
        for (fan_in, fan_out) in config.layer_dims() {
            let weights = offset;
            let bias = weights + fan_in * fan_out;
            offset = bias + fan_out;
            layers.push(Layer { fan_in, fan_out, weights, bias });
        }
        Ok(Self { config, layers, params: vec![0.0; offset], version: 0 })
    }

    pub fn from_params(config: MlpConfig, params: Vec<f64>) -> Result<Self> {
        let mut mlp = Self::zeros(config)?;
        if params.len() != mlp.params.len() {
            return Err(Error::Shape {
                context: "parameter vector",
                expected: mlp.params.len().to_string(),
                got: params.len().to_string(),
            });
        }
        mlp.params = params;
        Ok(mlp)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameters; invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    /// Mask over the flat parameter vector: true for weights, false for biases.
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.params.len()];
        for layer in &self.layers {
            mask[layer.weights..layer.bias].fill(true);
        }
        mask
    }

    fn check_input(&self, x: &Tensor2) -> Result<()> {
        if x.cols() != self.config.input_dim {
            return Err(Error::Shape {
                context: "network input",
                expected: format!("{} columns", self.config.input_dim),
                got: format!("{} columns", x.cols()),
            });
        }
        Ok(())
    }

    fn affine(&self, layer: &Layer, x: &Tensor2) -> Tensor2 {
        let rows = x.rows();
        let mut out = Tensor2::zeros(rows, layer.fan_out);
        let bias = &self.params[layer.bias..layer.bias + layer.fan_out];
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(bias);
        }
        gemm(
            rows,
            layer.fan_in,
            layer.fan_out,
            x.values(),
            false,
            &self.params[layer.weights..layer.bias],
            false,
            1.0,
            out.values_mut(),
        );
        out
    }

    fn run<R: Rng + ?Sized>(
        &self,
        x: &Tensor2,
        mode: Mode,
        rng: &mut R,
        mut tape: Option<&mut Tape>,
    ) -> Result<Tensor2> {
        self.check_input(x)?;
        let p = self.config.dropout_rate;
        let dropout = mode == Mode::Train && p > 0.0;
        let keep_scale = 1.0 / (1.0 - p);
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let pre = self.affine(layer, &h);
            if l == last {
                if let Some(t) = tape.as_deref_mut() {
                    t.inputs.push(h);
                }
                h = pre;
                break;
            }
            let mut act = pre.clone();
            act.values_mut().iter_mut().for_each(|v| *v = leaky(*v));
            let mask = if dropout {
                let m: Vec<f64> =
                    (0..act.values().len()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep_scale }).collect();
                act.values_mut().iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                Some(m)
            } else {
                None
            };
            if let Some(t) = tape.as_deref_mut() {
                t.inputs.push(std::mem::replace(&mut h, act));
                t.pre_activations.push(pre);
                t.masks.push(mask);
            } else {
                h = act;
            }
        }
        if !h.all_finite() {
            let bad = h.values().iter().copied().find(|v| !v.is_finite()).unwrap_or(f64::NAN);
            return Err(Error::NonFinite { what: "network output", value: bad });
        }
        Ok(h)
    }

    /// Forward pass that records a tape for [`Mlp::backward`].
    pub fn forward<R: Rng + ?Sized>(&self, x: &Tensor2, mode: Mode, rng: &mut R) -> Result<(Tensor2, Tape)> {
        let mut tape = Tape {
            version: self.version,
            consumed: false,
            inputs: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(self.layers.len()),
            masks: Vec::with_capacity(self.layers.len()),
        };
        let out = self.run(x, mode, rng, Some(&mut tape))?;
        Ok((out, tape))
    }

    /// Deterministic evaluation pass without a tape.
    pub fn predict(&self, x: &Tensor2) -> Result<Tensor2> {
        // Eval mode never draws from the generator.
        self.run(x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0), None)
    }

    /// Stochastic pass with dropout active, without a tape.
    pub fn sample<R: Rng + ?Sized>(&self, x: &Tensor2, rng: &mut R) -> Result<Tensor2> {
        self.run(x, Mode::Train, rng, None)
    }

    /// Reverse-mode gradients of a scalar loss with respect to every
    /// parameter, given dLoss/dOutput. Consumes the tape.
    pub fn backward(&self, tape: &mut Tape, grad_output: &Tensor2) -> Result<Vec<f64>> {
        if tape.consumed {
            return Err(Error::TapeConsumed);
        }
        if tape.version != self.version {
            return Err(Error::TapeStale { tape: tape.version, model: self.version });
        }
        let batch = tape.inputs.first().map(|t| t.rows()).unwrap_or(0);
        if grad_output.rows() != batch || grad_output.cols() != self.config.output_dim {
            return Err(Error::Shape {
                context: "output gradient",
                expected: format!("{batch}x{}", self.config.output_dim),
                got: format!("{}x{}", grad_output.rows(), grad_output.cols()),
            });
        }
        tape.consumed = true;
        let mut grads = vec![0.0; self.params.len()];
        let mut g = grad_output.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let input = &tape.inputs[l];
            gemm(
                layer.fan_in,
                batch,
                layer.fan_out,
                input.values(),
                true,
                g.values(),
                false,
                0.0,
                &mut grads[layer.weights..layer.bias],
            );
            let gb = &mut grads[layer.bias..layer.bias + layer.fan_out];
            for r in 0..batch {
                for (acc, v) in gb.iter_mut().zip(g.row(r)) {
                    *acc += v;
                }
            }
            if l == 0 {
                break;
            }
            let mut gx = Tensor2::zeros(batch, layer.fan_in);
            gemm(
                batch,
                layer.fan_out,
                layer.fan_in,
                g.values(),
                false,
                &self.params[layer.weights..layer.bias],
                true,
                0.0,
                gx.values_mut(),
            );
            let hidden = l - 1;
            if let Some(mask) = &tape.masks[hidden] {
                gx.values_mut().iter_mut().zip(mask).for_each(|(v, k)| *v *= k);
            }
            let pre = &tape.pre_activations[hidden];
            gx.values_mut().iter_mut().zip(pre.values()).for_each(|(v, &z)| {
                if z < 0.0 {
                    *v *= LEAKY_SLOPE
                }
            });
            g = gx;
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(input: usize, layers: usize, units: usize, dropout: f64, out: usize) -> MlpConfig {
        MlpConfig {
            input_dim: input,
            hidden_layers: layers,
            hidden_units: units,
            activation: Activation::LeakyRelu,
            dropout_rate: dropout,
            output_dim: out,
        }
    }

    fn batch(rows: usize, cols: usize, seed: u64) -> Tensor2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor2::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mlp = Mlp::zeros(cfg(3, 2, 8, 0.1, 4)).unwrap();
        let out = mlp.predict(&batch(5, 3, 1)).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_dropout_train_equals_eval() {
        let mlp = Mlp::new(cfg(3, 2, 16, 0.0, 2), 4).unwrap();
        let x = batch(7, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (train, _) = mlp.forward(&x, Mode::Train, &mut rng).unwrap();
        let eval = mlp.predict(&x).unwrap();
        assert_eq!(train, eval);
    }

    #[test]
    fn eval_ignores_rng() {
        let mlp = Mlp::new(cfg(3, 2, 16, 0.3, 2), 4).unwrap();
        let x = batch(7, 3, 2);
        let a = mlp.forward(&x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().0;
        let b = mlp.forward(&x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(99)).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn train_mode_records_masks() {
        let mlp = Mlp::new(cfg(2, 2, 32, 0.5, 1), 3).unwrap();
        let x = batch(10, 2, 5);
        let (_, tape) = mlp.forward(&x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mask = tape.dropout_mask(0).unwrap();
        assert_eq!(mask.len(), 10 * 32);
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
        assert!(mask.contains(&0.0));
        let (_, eval_tape) = mlp.forward(&x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(eval_tape.dropout_mask(0).is_none());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mlp = Mlp::new(cfg(3, 1, 4, 0.0, 1), 0).unwrap();
        assert!(matches!(mlp.predict(&batch(2, 4, 0)), Err(Error::Shape { .. })));
    }

    #[test]
    fn leaky_relu_identity_on_nonnegative() {
        for v in [0.0, 1e-300, 0.5, 7.0, 1e300] {
            assert_eq!(leaky(v), v);
        }
        assert_eq!(leaky(-2.0), -0.02);
    }

    #[test]
    fn linear_layer_squared_loss_gradient() {
        // y_hat = x·w + b, L = mean (y_hat - y)^2
        let mlp = Mlp::from_params(cfg(2, 0, 0, 0.0, 1), vec![0.5, -1.5, 0.25]).unwrap();
        let x = Tensor2::from_vec(3, 2, vec![1.0, 2.0, -1.0, 0.5, 3.0, 0.0]).unwrap();
        let y = [1.0, 0.0, -2.0];
        let (out, mut tape) = mlp.forward(&x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let n = y.len() as f64;
        let resid: Vec<f64> = (0..3).map(|i| out.get(i, 0) - y[i]).collect();
        let g = Tensor2::column(resid.iter().map(|r| 2.0 * r / n).collect());
        let grads = mlp.backward(&mut tape, &g).unwrap();
        let want_w0: f64 = (0..3).map(|i| 2.0 * x.get(i, 0) * resid[i] / n).sum();
        let want_w1: f64 = (0..3).map(|i| 2.0 * x.get(i, 1) * resid[i] / n).sum();
        let want_b: f64 = resid.iter().map(|r| 2.0 * r / n).sum();
        assert!((grads[0] - want_w0).abs() < 1e-14);
        assert!((grads[1] - want_w1).abs() < 1e-14);
        assert!((grads[2] - want_b).abs() < 1e-14);
    }

    #[test]
    fn tape_cannot_be_reused() {
        let mlp = Mlp::new(cfg(2, 1, 4, 0.0, 1), 0).unwrap();
        let x = batch(3, 2, 0);
        let (_, mut tape) = mlp.forward(&x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let g = Tensor2::zeros(3, 1);
        mlp.backward(&mut tape, &g).unwrap();
        assert!(tape.is_consumed());
        assert!(matches!(mlp.backward(&mut tape, &g), Err(Error::TapeConsumed)));
    }

    #[test]
    fn stale_tape_rejected() {
        let mut mlp = Mlp::new(cfg(2, 1, 4, 0.0, 1), 0).unwrap();
        let x = batch(3, 2, 0);
        let (_, mut tape) = mlp.forward(&x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        mlp.params_mut()[0] += 1.0;
        assert!(matches!(mlp.backward(&mut tape, &Tensor2::zeros(3, 1)), Err(Error::TapeStale { .. })));
    }

    #[test]
    fn constant_output_has_zero_weight_gradient() {
        // Zero upstream gradient, as for a loss that ignores the output.
        let mlp = Mlp::new(cfg(2, 2, 8, 0.0, 2), 1).unwrap();
        let x = batch(4, 2, 3);
        let (_, mut tape) = mlp.forward(&x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let grads = mlp.backward(&mut tape, &Tensor2::zeros(4, 2)).unwrap();
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn full_network_gradient_matches_finite_differences() {
        let mlp = Mlp::new(cfg(3, 2, 6, 0.0, 2), 11).unwrap();
        let x = batch(4, 3, 8);
        let target = batch(4, 2, 9);
        let loss = |m: &Mlp| -> f64 {
            let o = m.predict(&x).unwrap();
            o.values().iter().zip(target.values()).map(|(a, b)| 0.5 * (a - b).powi(2)).sum()
        };
        let (out, mut tape) = mlp.forward(&x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let g =
            Tensor2::from_vec(4, 2, out.values().iter().zip(target.values()).map(|(a, b)| a - b).collect()).unwrap();
        let grads = mlp.backward(&mut tape, &g).unwrap();
        let h = 1e-6;
        for (i, &gi) in grads.iter().enumerate() {
            let mut up = mlp.clone();
            up.params_mut()[i] += h;
            let mut dn = mlp.clone();
            dn.params_mut()[i] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            assert!((fd - gi).abs() < 1e-6 * fd.abs().max(1.0), "param {i}: {fd} vs {gi}");
        }
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let mlp = Mlp::new(cfg(2, 1, 64, 0.1, 1), 5).unwrap();
        let x = Tensor2::from_vec(1, 2, vec![0.7, -0.3]).unwrap();
        let eval = mlp.predict(&x).unwrap().get(0, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 10_000;
        let mean = (0..n).map(|_| mlp.sample(&x, &mut rng).unwrap().get(0, 0)).sum::<f64>() / n as f64;
        assert!((mean - eval).abs() < 0.02 * eval.abs().max(1e-3), "{mean} vs {eval}");
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0, 1, 4, 0.0, 1).validate().is_err());
        assert!(cfg(1, 1, 4, 1.0, 1).validate().is_err());
        assert!(cfg(1, 1, 0, 0.0, 1).validate().is_err());
        assert_eq!(cfg(3, 2, 4, 0.0, 2).param_count(), 3 * 4 + 4 + 4 * 4 + 4 + 4 * 2 + 2);
    }
}
