//! Dense feedforward networks with exact reverse-mode gradients.

mod adam;
mod classifier;

pub use adam::{AdamConfig, AdamState};
pub use classifier::{
    fused_branch_gradients, train_classifier, ClassifierConfig, ClassifierRun, EvidentialHeads, SampleForward,
};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Softplus,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Softplus => "softplus",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "softplus" => Some(Activation::Softplus),
            _ => None,
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Softplus => softplus(x),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// One affine layer followed by an activation. Weights are `n_out × n_in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    n_in: usize,
    n_out: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Dense {
    pub fn new(n_in: usize, n_out: usize, weights: Vec<f64>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::InvalidArgument("layer dimensions must be positive".into()));
        }
        if weights.len() != n_in * n_out {
            return Err(Error::DimensionMismatch { expected: n_in * n_out, found: weights.len() });
        }
        if bias.len() != n_out {
            return Err(Error::DimensionMismatch { expected: n_out, found: bias.len() });
        }
        if !weights.iter().chain(&bias).all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite layer parameter".into()));
        }
        Ok(Dense { n_in, n_out, weights, bias, activation })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (n_in + n_out))`, zero bias.
    pub fn init<R: Rng>(n_in: usize, n_out: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = libm::sqrt(6.0 / (n_in + n_out) as f64);
        let weights = (0..n_in * n_out).map(|_| rng.random_range(-limit..limit)).collect();
        Dense { n_in, n_out, weights, bias: vec![0.0; n_out], activation }
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Activation of the affine map; `x` must have length `n_in`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.affine(x).into_iter().map(|z| self.activation.apply(z)).collect()
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.n_in)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }
}

/// A stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Per-layer inputs and pre-activations saved by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct Cache {
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

/// Parameter gradients shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Gradients {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGradient { weights: vec![0.0; l.weights.len()], bias: vec![0.0; l.n_out] })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|x| *x *= factor);
        }
    }

    fn matches(&self, mlp: &Mlp) -> bool {
        self.layers.len() == mlp.layers.len()
            && self
                .layers
                .iter()
                .zip(&mlp.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
    }
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].n_out != pair[1].n_in {
                return Err(Error::DimensionMismatch { expected: pair[0].n_out, found: pair[1].n_in });
            }
        }
        Ok(Mlp { layers })
    }

    /// Freshly initialized network over `sizes = [input, hidden.., output]`.
    pub fn init<R: Rng>(sizes: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} layer sizes need {} activations, got {}",
                sizes.len(),
                sizes.len().saturating_sub(1),
                activations.len()
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidArgument("layer sizes must be positive".into()));
        }
        let layers = sizes.windows(2).zip(activations).map(|(w, a)| Dense::init(w[0], w[1], *a, rng)).collect();
        Mlp::new(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out
    }

    /// Layer sizes `[input, hidden.., output]`.
    pub fn arch(&self) -> Vec<usize> {
        core::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.n_out)).collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), found: x.len() });
        }
        Ok(())
    }

    /// Forward pass without keeping activations.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer.apply(&h);
        }
        Ok(h)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Cache)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for layer in &self.layers {
            let z = layer.affine(&h);
            let next = z.iter().map(|v| layer.activation.apply(*v)).collect();
            inputs.push(core::mem::replace(&mut h, next));
            pre_activations.push(z);
        }
        Ok((h, Cache { inputs, pre_activations }))
    }

    /// Reverse pass: parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &Cache, upstream: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let consistent = cache.inputs.len() == self.layers.len()
            && cache.pre_activations.len() == self.layers.len()
            && self
                .layers
                .iter()
                .zip(cache.inputs.iter().zip(&cache.pre_activations))
                .all(|(l, (x, z))| x.len() == l.n_in && z.len() == l.n_out);
        if !consistent {
            return Err(Error::CacheMismatch);
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch { expected: self.output_dim(), found: upstream.len() });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_vec();
        for (layer, (x, z)) in self.layers.iter().zip(cache.inputs.iter().zip(&cache.pre_activations)).rev() {
            let d_pre: Vec<f64> = delta.iter().zip(z).map(|(g, z)| g * layer.activation.derivative(*z)).collect();
            let mut d_weights = Vec::with_capacity(layer.weights.len());
            for d in &d_pre {
                d_weights.extend(x.iter().map(|v| d * v));
            }
            let mut d_input = vec![0.0; layer.n_in];
            for (row, d) in layer.weights.chunks_exact(layer.n_in).zip(&d_pre) {
                for (acc, w) in d_input.iter_mut().zip(row) {
                    *acc += w * d;
                }
            }
            grads.push(LayerGradient { weights: d_weights, bias: d_pre });
            delta = d_input;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    fn params_mut(&mut self) -> impl Iterator<Item = (&mut Vec<f64>, &mut Vec<f64>)> {
        self.layers.iter_mut().map(|l| (&mut l.weights, &mut l.bias))
    }
}
