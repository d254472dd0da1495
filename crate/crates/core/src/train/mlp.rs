//! Fully connected ReLU network with hand-written backpropagation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    fn grad_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
    pub seed: u64,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("all layer dimensions must be >= 1".into()));
        }
        Ok(())
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.hidden_dims);
        d.push(self.output_dim);
        d
    }
}

/// Dense layer `y = W x + b` with `W` stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// He-style uniform init: `W ~ U(-sqrt(6/fan_in), sqrt(6/fan_in))`, `b = 0`.
    pub fn he_uniform(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim).map(|_| rng.random_range(-limit..limit)).collect(),
            bias: vec![0.0; out_dim],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub activation: Activation,
    pub layers: Vec<Layer>,
}

/// Gradient buffers shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        let pairs = self.weights.iter_mut().zip(&other.weights).chain(self.bias.iter_mut().zip(&other.bias));
        for (a, b) in pairs {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()).flatten() {
            *v *= k;
        }
    }
}

impl Mlp {
    pub fn new(config: &MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dims = config.dims();
        let layers = dims.windows(2).map(|w| Layer::he_uniform(w[0], w[1], &mut rng)).collect();
        Ok(Self {
            activation: config.activation,
            layers,
        })
    }

    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for l in &layers {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::Config("layer dimensions must be >= 1".into()));
            }
            check_len(l.in_dim * l.out_dim, l.weights.len())?;
            check_len(l.out_dim, l.bias.len())?;
        }
        for w in layers.windows(2) {
            check_len(w[0].out_dim, w[1].in_dim)?;
        }
        Ok(Self { activation, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Output of the last (linear) layer.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).pop().expect("at least one layer")
    }

    /// Input followed by the output of every layer; hidden outputs are
    /// post-activation, the last one is linear.
    pub fn forward_cached(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = layer.forward(&acts[i]);
            if i != last {
                out.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            acts.push(out);
        }
        acts
    }

    /// Parameter gradients of one sample given `dl/d(output)`.
    pub fn backward(&self, acts: &[Vec<f64>], d_out: &[f64]) -> MlpGrads {
        let mut g = MlpGrads::zeros_like(self);
        let mut delta = d_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[i];
            for (o, &d) in delta.iter().enumerate() {
                let row = &mut g.weights[i][o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gw, a) in row.iter_mut().zip(input) {
                    *gw = d * a;
                }
                g.bias[i][o] = d;
            }
            if i == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.in_dim];
            for (row, &d) in layer.weights.chunks_exact(layer.in_dim).zip(&delta) {
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += w * d;
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= self.activation.grad_from_output(*a);
            }
            delta = prev;
        }
        g
    }
}
