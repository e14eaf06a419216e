//! A small dense feedforward network with hand-written backpropagation.
//!
//! Networks are stored layer by layer with row-major `fan_in x fan_out`
//! weight matrices. Everything runs in `f64` on a single thread so that a
//! given seed always reproduces the same parameters bit for bit.

mod io;
pub mod loss;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub use io::{read_network, write_network};
pub use loss::{
    loss_dif, loss_mse, loss_survival_nll, loss_weighted_bce, LossKind, DsnnLossWeights,
};
pub use train::{
    objective_and_gradient, pair_objective_and_gradient, train, train_pair, ModelConfig, PairTrace,
    TrainConfig, TrainSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation's output value.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Linear => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::Spec(format!("unknown activation `{other}`"))),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Architecture and regularization of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    /// Coefficient of the squared-weight penalty (biases are not penalized).
    pub l2_coefficient: f64,
    pub seed: u64,
}

impl NetworkSpec {
    /// The four-layer 128/64/32/1 stack shared by every model in the engine.
    pub fn deep(input_width: usize, activations: [Activation; 4], l2: f64, seed: u64) -> Self {
        Self {
            layer_sizes: vec![input_width, 128, 64, 32, 1],
            activations: activations.to_vec(),
            l2_coefficient: l2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Spec("need at least an input and an output layer".into()));
        }
        if self.activations.len() != self.layer_sizes.len() - 1 {
            return Err(Error::Spec(format!(
                "{} activations for {} weight layers",
                self.activations.len(),
                self.layer_sizes.len() - 1
            )));
        }
        if let Some(i) = self.layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::Spec(format!("layer {i} has zero width")));
        }
        if !(self.l2_coefficient >= 0.0 && self.l2_coefficient.is_finite()) {
            return Err(Error::Spec(format!("bad l2 coefficient {}", self.l2_coefficient)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `fan_in x fan_out`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    /// `out[r, :] = act(input[r, :] * W + b)` for a row-major batch.
    fn forward_batch(&self, input: &[f64], rows: usize, out: &mut Vec<f64>) {
        out.clear();
        out.resize(rows * self.fan_out, 0.0);
        for r in 0..rows {
            let x = &input[r * self.fan_in..(r + 1) * self.fan_in];
            let z = &mut out[r * self.fan_out..(r + 1) * self.fan_out];
            z.copy_from_slice(&self.biases);
            for (k, &xk) in x.iter().enumerate() {
                if xk == 0.0 {
                    continue;
                }
                let w = &self.weights[k * self.fan_out..(k + 1) * self.fan_out];
                for (zj, &wj) in z.iter_mut().zip(w) {
                    *zj += xk * wj;
                }
            }
            for zj in z.iter_mut() {
                *zj = self.activation.apply(*zj);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
}

impl Network {
    /// Seeded initialization: weights uniform on `±sqrt(6 / (fan_in + fan_out))`,
    /// biases zero.
    pub fn init(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = SplitMix64::new(spec.seed);
        let layers = spec
            .layer_sizes
            .windows(2)
            .zip(&spec.activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = (0..fan_in * fan_out)
                    .map(|_| (2.0 * rng.next_f64() - 1.0) * limit)
                    .collect();
                Layer {
                    fan_in,
                    fan_out,
                    weights,
                    biases: vec![0.0; fan_out],
                    activation,
                }
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn input_width(&self) -> usize {
        self.spec.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.spec.layer_sizes.last().expect("validated spec")
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Forward pass for one feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict_batch(x, 1)
    }

    /// Forward pass for `rows` feature vectors stored row-major.
    pub fn predict_batch(&self, features: &[f64], rows: usize) -> Result<Vec<f64>> {
        let width = self.input_width();
        if features.len() != rows * width {
            return Err(Error::Dimension {
                expected: rows * width,
                got: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite network input"));
        }
        let mut current = features.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_batch(&current, rows, &mut next);
            std::mem::swap(&mut current, &mut next);
        }
        Ok(current)
    }

    /// Forward pass keeping every layer's activations (index 0 is the input).
    pub(crate) fn forward_cached(&self, features: &[f64], rows: usize) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(features.to_vec());
        for layer in &self.layers {
            let mut out = Vec::new();
            layer.forward_batch(acts.last().expect("non-empty"), rows, &mut out);
            acts.push(out);
        }
        acts
    }

    /// Flattened parameters, layer by layer, weights before biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::Dimension {
                expected: self.parameter_count(),
                got: params.len(),
            });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    pub fn l2_penalty(&self) -> f64 {
        let sq: f64 = self
            .layers
            .iter()
            .flat_map(|l| l.weights.iter())
            .map(|w| w * w)
            .sum();
        self.spec.l2_coefficient * sq
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }
}

/// Gradient buffers shaped like a network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]))
                .collect(),
        }
    }

    /// Flattened in the same order as [`Network::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

/// Backpropagate `d_output` (gradient of the loss w.r.t. the final layer's
/// outputs, row-major `rows x out`) through cached activations.
pub(crate) fn backward(net: &Network, acts: &[Vec<f64>], rows: usize, d_output: Vec<f64>) -> Gradients {
    let mut grads = Gradients::zeros_like(net);
    let mut upstream = d_output;
    for (li, layer) in net.layers.iter().enumerate().rev() {
        let out = &acts[li + 1];
        let input = &acts[li];
        let (fi, fo) = (layer.fan_in, layer.fan_out);
        let mut delta = upstream;
        for (d, &a) in delta.iter_mut().zip(out) {
            *d *= layer.activation.derivative_from_output(a);
        }
        let (gw, gb) = &mut grads.layers[li];
        for r in 0..rows {
            let dr = &delta[r * fo..(r + 1) * fo];
            for (g, &d) in gb.iter_mut().zip(dr) {
                *g += d;
            }
            for k in 0..fi {
                let x = input[r * fi + k];
                if x == 0.0 {
                    continue;
                }
                let row = &mut gw[k * fo..(k + 1) * fo];
                for (g, &d) in row.iter_mut().zip(dr) {
                    *g += x * d;
                }
            }
        }
        if li == 0 {
            break;
        }
        let mut below = vec![0.0; rows * fi];
        for r in 0..rows {
            let dr = &delta[r * fo..(r + 1) * fo];
            for k in 0..fi {
                let w = &layer.weights[k * fo..(k + 1) * fo];
                below[r * fi + k] = w.iter().zip(dr).map(|(a, b)| a * b).sum();
            }
        }
        upstream = below;
    }
    grads
}
