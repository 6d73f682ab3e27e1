//! Trainable building blocks and the Adam optimizer.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// Kaiming-uniform: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Result<Tensor<T>> {
    let bound = (6.0 / fan_in as f64).sqrt();
    uniform(shape, bound, rng)
}

pub fn uniform<T: Scalar, R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Result<Tensor<T>> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect())
}

/// A named trainable tensor, borrowed mutably for an optimizer step.
pub struct ParamMut<'a, T> {
    pub name: String,
    pub tensor: &'a mut Tensor<T>,
    /// Leading elements that are never updated (the padding row of an
    /// embedding table).
    pub frozen_prefix: usize,
}

/// Character embedding table; row 0 is the padding symbol and stays zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<T> {
    pub weights: Tensor<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn new<R: Rng>(vocabulary_size: usize, dim: usize, rng: &mut R) -> Result<Self> {
        let mut weights: Tensor<T> = uniform(&[vocabulary_size, dim], 0.05, rng)?;
        weights.data_mut()[..dim].fill(T::zero());
        Ok(Self { weights })
    }

    pub fn from_weights(weights: Tensor<T>) -> Result<Self> {
        if weights.rank() != 2 {
            return Err(Error::Shape {
                shape: weights.shape().to_vec(),
                reason: "embedding weights must be [vocab, dim]".into(),
            });
        }
        let dim = weights.shape()[1];
        if weights.data()[..dim].iter().any(|v| *v != T::zero()) {
            return Err(Error::Config("embedding padding row must be zero".into()));
        }
        Ok(Self { weights })
    }

    pub fn vocabulary_size(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.weights.shape()[1]
    }

    /// Looks up `indices` (shaped `index_shape`) in the bound `table`.
    pub fn apply(&self, g: &mut Graph<T>, table: Var, indices: &[usize], index_shape: &[usize]) -> Result<Var> {
        if g.value(table).shape() != self.weights.shape() {
            return Err(Error::Dimension {
                op: "embedding binding",
                lhs: self.weights.shape().to_vec(),
                rhs: g.value(table).shape().to_vec(),
            });
        }
        g.embedding(table, indices, index_shape)
    }
}

/// Records `t` on the tape, as a parameter when training.
pub fn bind<T: Scalar>(g: &mut Graph<T>, t: &Tensor<T>, train: bool) -> Var {
    if train {
        g.param(t.clone())
    } else {
        g.constant(t.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    /// `[k, c_in, c_out]`
    pub kernel: Tensor<T>,
    /// `[c_out]`
    pub bias: Tensor<T>,
    pub activation: Activation,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn kernel_size(&self) -> usize {
        self.kernel.shape()[0]
    }
    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }
    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[2]
    }
}

/// Stack of length-preserving convolutions, each followed by its activation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock<T> {
    layers: Vec<ConvLayer<T>>,
}

impl<T: Scalar> ConvBlock<T> {
    pub fn new<R: Rng>(
        in_channels: usize,
        widths: &[usize],
        kernels: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.is_empty() || widths.len() != kernels.len() {
            return Err(Error::Config(format!(
                "conv block needs one kernel size per width, got {widths:?} / {kernels:?}"
            )));
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut c_in = in_channels;
        for (&c_out, &k) in widths.iter().zip(kernels) {
            if k % 2 == 0 {
                return Err(Error::Config(format!("kernel sizes must be odd, got {k}")));
            }
            layers.push(ConvLayer {
                kernel: kaiming_uniform(&[k, c_in, c_out], k * c_in, rng)?,
                bias: Tensor::zeros(&[c_out])?,
                activation,
            });
            c_in = c_out;
        }
        Self::from_layers(layers)
    }

    /// Validates that each layer's input width matches the previous output.
    pub fn from_layers(layers: Vec<ConvLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("conv block has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.kernel.rank() != 3 || l.bias.shape() != [l.out_channels()] {
                return Err(Error::Config(format!("conv layer {i} has malformed parameters")));
            }
            if l.kernel_size() % 2 == 0 {
                return Err(Error::Config(format!("conv layer {i} has even kernel size")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_channels() != pair[1].in_channels() {
                return Err(Error::Config(format!(
                    "conv layer {} outputs {} channels but layer {} expects {}",
                    i,
                    pair[0].out_channels(),
                    i + 1,
                    pair[1].in_channels()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[ConvLayer<T>] {
        &self.layers
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().unwrap().out_channels()
    }

    /// Records every layer's kernel and bias, in
    /// [`named_parameters`](Self::named_parameters) order.
    pub fn bind(&self, g: &mut Graph<T>, train: bool) -> Vec<Var> {
        self.named_parameters("")
            .into_iter()
            .map(|(_, t)| bind(g, t, train))
            .collect()
    }

    /// Runs the stack over `input` (`[len, c]` or `[slices, len, c]`) with
    /// parameters bound by [`bind`](Self::bind).
    pub fn apply(&self, g: &mut Graph<T>, input: Var, lengths: Option<&[usize]>, vars: &[Var]) -> Result<Var> {
        check_binding(vars.len(), 2 * self.layers.len())?;
        let mut x = input;
        for (layer, kb) in self.layers.iter().zip(vars.chunks(2)) {
            x = g.conv1d(x, kb[0], kb[1], lengths)?;
            if layer.activation == Activation::Relu {
                x = g.relu(x);
            }
        }
        Ok(x)
    }

    pub fn named_parameters(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}.{i}.kernel"), &l.kernel),
                    (format!("{prefix}.{i}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    pub fn parameters_mut(&mut self, prefix: &str) -> Vec<ParamMut<'_, T>> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    ParamMut {
                        name: format!("{prefix}.{i}.kernel"),
                        tensor: &mut l.kernel,
                        frozen_prefix: 0,
                    },
                    ParamMut {
                        name: format!("{prefix}.{i}.bias"),
                        tensor: &mut l.bias,
                        frozen_prefix: 0,
                    },
                ]
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    /// `[in, out]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

/// Fully-connected head: ReLU between hidden layers, sigmoid on the single
/// output neuron.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseBlock<T> {
    layers: Vec<DenseLayer<T>>,
}

impl<T: Scalar> DenseBlock<T> {
    pub fn new<R: Rng>(in_features: usize, widths: &[usize], rng: &mut R) -> Result<Self> {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = in_features;
        for &w in widths {
            layers.push(DenseLayer {
                weight: kaiming_uniform(&[fan_in, w], fan_in, rng)?,
                bias: Tensor::zeros(&[w])?,
            });
            fan_in = w;
        }
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::Config("dense block has no layers".into()));
        };
        if last.weight.rank() != 2 || last.weight.shape()[1] != 1 {
            return Err(Error::Config("dense block must end in a single output neuron".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].weight.shape()[1] != pair[1].weight.shape()[0] {
                return Err(Error::Config(format!("dense layer {} width does not chain", i + 1)));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn bind(&self, g: &mut Graph<T>, train: bool) -> Vec<Var> {
        self.named_parameters("")
            .into_iter()
            .map(|(_, t)| bind(g, t, train))
            .collect()
    }

    /// `input` is `[batch, in]`; returns probabilities `[batch, 1]`.
    pub fn apply(&self, g: &mut Graph<T>, input: Var, vars: &[Var]) -> Result<Var> {
        check_binding(vars.len(), 2 * self.layers.len())?;
        let mut x = input;
        let last = self.layers.len() - 1;
        for (i, wb) in vars.chunks(2).enumerate() {
            x = g.matmul(x, wb[0])?;
            x = g.add_bias(x, wb[1])?;
            x = if i == last { g.sigmoid(x) } else { g.relu(x) };
        }
        Ok(x)
    }

    pub fn named_parameters(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}.{i}.weight"), &l.weight),
                    (format!("{prefix}.{i}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    pub fn parameters_mut(&mut self, prefix: &str) -> Vec<ParamMut<'_, T>> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    ParamMut {
                        name: format!("{prefix}.{i}.weight"),
                        tensor: &mut l.weight,
                        frozen_prefix: 0,
                    },
                    ParamMut {
                        name: format!("{prefix}.{i}.bias"),
                        tensor: &mut l.bias,
                        frozen_prefix: 0,
                    },
                ]
            })
            .collect()
    }
}

fn check_binding(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Training(format!("expected {want} bound parameters, got {got}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam with per-parameter moment buffers keyed by name.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update using each parameter's attached gradient.
    pub fn step(&mut self, params: &mut [ParamMut<'_, T>]) -> Result<()> {
        for p in params.iter() {
            if p.tensor.grad().is_none() {
                return Err(Error::Training(format!("missing gradient for parameter {}", p.name)));
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let correction1 = T::one() - T::of(c.beta1.powf(self.step as f64));
        let correction2 = T::one() - T::of(c.beta2.powf(self.step as f64));
        let (lr, eps) = (T::of(c.learning_rate), T::of(c.epsilon));
        for p in params.iter_mut() {
            let n = p.tensor.len();
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
            if m.len() != n {
                return Err(Error::Training(format!("parameter {} changed shape", p.name)));
            }
            let grad = p.tensor.grad().unwrap().to_vec();
            let data = p.tensor.data_mut();
            for i in p.frozen_prefix..n {
                let gi = grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
