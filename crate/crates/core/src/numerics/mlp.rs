//! Dense fully-connected network with hand-written backpropagation.
//!
//! Hidden layers use ReLU, the output layer is affine (Q-values are
//! unbounded). Weights are stored row-major as `[out][in]`.

use serde::{Deserialize, Serialize};

use super::rng::Rng;
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
            activation,
        }
    }

    #[inline]
    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.in_dim..(o + 1) * self.in_dim]
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let z = self.biases[o] + dot(self.row(o), x);
            out.push(match self.activation {
                Activation::Relu => z.max(0.0),
                Activation::Identity => z,
            });
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Parameters of a multilayer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    layers: Vec<Dense>,
}

/// Gradient (or any per-parameter accumulator) shaped like an [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Cached activations of one forward pass: `acts[0]` is the input,
/// `acts[l + 1]` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has at least the input")
    }
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Contract(format!(
            "an MLP needs at least input and output sizes, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Contract(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

impl MlpParams {
    /// All-zero network. Hidden layers ReLU, output identity.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let n = layer_sizes.len() - 1;
        let layers = layer_sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let act = if l + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                Dense::zeros(w[0], w[1], act)
            })
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layers,
        })
    }

    /// He-normal weights (std = sqrt(2 / fan_in)), zero biases.
    pub fn new(layer_sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(layer_sizes)?;
        for layer in &mut p.layers {
            let std = (2.0 / layer.in_dim as f64).sqrt();
            for w in &mut layer.weights {
                *w = std * rng.normal();
            }
        }
        Ok(p)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Exact number of weights plus biases.
    pub fn count_parameters(&self) -> usize {
        count_parameters(&self.layer_sizes)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "mlp input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::with_capacity(self.output_dim());
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass keeping every intermediate activation for backprop.
    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.out_dim);
            layer.forward_into(acts.last().unwrap(), &mut out);
            acts.push(out);
        }
        Ok(Trace { acts })
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: self.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    /// Gradient of `dout · output` with respect to every parameter.
    pub fn backward(&self, x: &[f64], dout: &[f64]) -> Result<Gradients> {
        if x.iter().chain(dout).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("backward inputs".into()));
        }
        let trace = self.forward_trace(x)?;
        let mut grads = self.zero_gradients();
        self.accumulate_gradient(&trace, dout, &mut grads)?;
        Ok(grads)
    }

    /// Adds the gradient of `dout · output` for a cached forward pass into `grads`.
    pub fn accumulate_gradient(
        &self,
        trace: &Trace,
        dout: &[f64],
        grads: &mut Gradients,
    ) -> Result<()> {
        if dout.len() != self.output_dim() {
            return Err(Error::Shape {
                context: "upstream gradient",
                expected: self.output_dim(),
                got: dout.len(),
            });
        }
        let mut delta = dout.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let out = &trace.acts[l + 1];
            if layer.activation == Activation::Relu {
                for (d, &a) in delta.iter_mut().zip(out) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &trace.acts[l];
            let gw = &mut grads.weights[l];
            let gb = &mut grads.biases[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, &xi) in row.iter_mut().zip(input) {
                    *g += d * xi;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; layer.in_dim];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (p, &w) in prev.iter_mut().zip(layer.row(o)) {
                        *p += d * w;
                    }
                }
                delta = prev;
            }
        }
        Ok(())
    }

    /// Structured checkpoint document.
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            layer_sizes: self.layer_sizes.clone(),
            weights: self
                .layers
                .iter()
                .map(|l| l.weights.chunks(l.in_dim).map(<[f64]>::to_vec).collect())
                .collect(),
            biases: self.layers.iter().map(|l| l.biases.clone()).collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {}", ck.schema_version),
            ));
        }
        let mut p = Self::zeros(&ck.layer_sizes)?;
        if ck.weights.len() != p.layers.len() || ck.biases.len() != p.layers.len() {
            return Err(Error::Shape {
                context: "checkpoint layer count",
                expected: p.layers.len(),
                got: ck.weights.len().min(ck.biases.len()),
            });
        }
        for (l, layer) in p.layers.iter_mut().enumerate() {
            let rows = &ck.weights[l];
            if rows.len() != layer.out_dim || rows.iter().any(|r| r.len() != layer.in_dim) {
                return Err(Error::Shape {
                    context: "checkpoint weight rows",
                    expected: layer.out_dim,
                    got: rows.len(),
                });
            }
            if ck.biases[l].len() != layer.out_dim {
                return Err(Error::Shape {
                    context: "checkpoint biases",
                    expected: layer.out_dim,
                    got: ck.biases[l].len(),
                });
            }
            layer.weights = rows.concat();
            layer.biases = ck.biases[l].clone();
        }
        if !p.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(p)
    }

    /// Order-sensitive hash of the exact parameter bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.biases) {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

impl Gradients {
    pub fn scale(&mut self, s: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.biases)
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Weights plus biases for a stack of dense layers with the given sizes.
pub fn count_parameters(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub layer_sizes: Vec<usize>,
    /// Per layer, `out_dim` rows of `in_dim` weights.
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}
