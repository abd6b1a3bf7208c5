//! Dense feed-forward blocks with hand-written backpropagation.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerSpec {
    /// Weights (row-major `outputs × inputs`) followed by biases.
    pub fn param_count(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }
}

/// A stack of dense layers; parameters live outside, in a flat slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    layers: Vec<LayerSpec>,
}

/// Pre-activations and outputs of every layer for one input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[l + 1]` the output of layer `l`.
    activations: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("input is always cached")
    }
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]` with one activation per layer.
    pub fn new(sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::invalid(
                "network needs at least two sizes and one activation per layer",
            ));
        }
        if sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        Ok(Self {
            layers: sizes
                .windows(2)
                .zip(activations)
                .map(|(w, &activation)| LayerSpec {
                    inputs: w[0],
                    outputs: w[1],
                    activation,
                })
                .collect(),
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// He-style initialization: `W ~ N(0, 2 / fan_in)`, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            let normal = Normal::new(0.0, (2.0 / layer.inputs as f64).sqrt()).expect("positive std");
            params.extend((0..layer.outputs * layer.inputs).map(|_| normal.sample(rng)));
            params.extend(std::iter::repeat_n(0.0, layer.outputs));
        }
        params
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<ForwardCache> {
        check_dim(self.param_count(), params.len())?;
        check_dim(self.input_dim(), input.len())?;
        let mut activations = vec![input.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut offset = 0;
        for layer in &self.layers {
            let (w, rest) = params[offset..].split_at(layer.outputs * layer.inputs);
            let b = &rest[..layer.outputs];
            let x = activations.last().expect("input cached");
            let z: Vec<f64> = (0..layer.outputs)
                .map(|o| {
                    let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                    b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
                })
                .collect();
            activations.push(z.iter().map(|&v| layer.activation.apply(v)).collect());
            pre.push(z);
            offset += layer.param_count();
        }
        Ok(ForwardCache { activations, pre })
    }

    /// Accumulates `∂L/∂params` into `grad` given `∂L/∂output`; returns `∂L/∂input`.
    pub fn backward(&self, params: &[f64], cache: &ForwardCache, grad_output: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.param_count());
        let mut offset = self.param_count();
        let mut upstream = grad_output.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            offset -= layer.param_count();
            let delta: Vec<f64> = upstream
                .iter()
                .zip(&cache.pre[l])
                .map(|(g, &z)| g * layer.activation.derivative(z))
                .collect();
            let x = &cache.activations[l];
            let w = &params[offset..offset + layer.outputs * layer.inputs];
            let (gw, gb) = grad[offset..offset + layer.param_count()].split_at_mut(layer.outputs * layer.inputs);
            let mut down = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                gb[o] += delta[o];
                let row = o * layer.inputs;
                for i in 0..layer.inputs {
                    gw[row + i] += delta[o] * x[i];
                    down[i] += delta[o] * w[row + i];
                }
            }
            upstream = down;
        }
        upstream
    }
}

/// Per-datum loss `ℓ(y, output)`; the likelihood is `exp(−ℓ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// `Σ_o (output_o − y_o)²`
    Squared,
    /// `−log softmax(output)_y`
    CrossEntropy,
}

/// What a task head is asked to predict for one datum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label<'a> {
    Values(&'a [f64]),
    Class(usize),
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl Loss {
    /// Loss value and `∂ℓ/∂output`.
    pub fn value_and_grad(self, output: &[f64], label: Label<'_>) -> Result<(f64, Vec<f64>)> {
        match (self, label) {
            (Loss::Squared, Label::Values(y)) => {
                check_dim(output.len(), y.len())?;
                let resid: Vec<f64> = output.iter().zip(y).map(|(o, t)| o - t).collect();
                let value = resid.iter().map(|r| r * r).sum();
                Ok((value, resid.iter().map(|r| 2.0 * r).collect()))
            }
            (Loss::CrossEntropy, Label::Class(c)) => {
                if c >= output.len() {
                    return Err(Error::invalid(format!("class {c} out of range")));
                }
                let p = softmax(output);
                let top = output.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = top + output.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
                let mut grad = p;
                grad[c] -= 1.0;
                Ok((lse - output[c], grad))
            }
            _ => Err(Error::invalid("label kind does not match the loss")),
        }
    }
}
