//! Dense feed-forward networks with manual backpropagation and Adam.
//!
//! Weights are stored row-major (`output_width x input_width`) per layer.
//! Every pass takes a [`Mask`]: the effective weight is `w` where the mask
//! keeps it and `0` where it is pruned. Biases are never masked.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pruning::Mask;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_width: usize,
    pub output_width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_width: usize, output_width: usize, activation: Activation) -> Self {
        Self {
            input_width,
            output_width,
            activation,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.input_width * self.output_width
    }
}

/// Builds an MLP spec: ReLU on hidden layers, identity on the output layer.
pub fn mlp_specs(widths: &[usize]) -> Vec<LayerSpec> {
    let n = widths.len().saturating_sub(1);
    widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i + 1 == n {
                Activation::Identity
            } else {
                Activation::Relu
            };
            LayerSpec::new(w[0], w[1], act)
        })
        .collect()
}

pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Config("network needs at least one layer".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.input_width == 0 || s.output_width == 0 {
            return Err(Error::Config(format!("layer {i} has a zero width")));
        }
    }
    for (i, pair) in specs.windows(2).enumerate() {
        if pair[0].output_width != pair[1].input_width {
            return Err(Error::Config(format!(
                "layer {i} outputs {} values but layer {} expects {}",
                pair[0].output_width,
                i + 1,
                pair[1].input_width
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameters of one network. Also used as the container for gradients and
/// optimizer moments, which share the exact same shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    specs: Vec<LayerSpec>,
    pub layers: Vec<Layer>,
}

pub type Gradients = NetworkParams;

impl NetworkParams {
    pub fn zeros(specs: &[LayerSpec]) -> Result<Self> {
        validate_specs(specs)?;
        let layers = specs
            .iter()
            .map(|s| Layer {
                weights: vec![0.0; s.weight_count()],
                bias: vec![0.0; s.output_width],
            })
            .collect();
        Ok(Self {
            specs: specs.to_vec(),
            layers,
        })
    }

    /// Fan-in/fan-out scaled uniform weights, zero biases.
    pub fn init(specs: &[LayerSpec], rng: &mut RngStream) -> Result<Self> {
        let mut params = Self::zeros(specs)?;
        for (spec, layer) in params.specs.iter().zip(params.layers.iter_mut()) {
            let bound = (6.0 / (spec.input_width + spec.output_width) as f64).sqrt();
            for w in layer.weights.iter_mut() {
                *w = rng.uniform_range(-bound, bound);
            }
        }
        Ok(params)
    }

    /// Assembles parameters from raw layers, checking every shape.
    pub fn from_layers(specs: Vec<LayerSpec>, layers: Vec<Layer>) -> Result<Self> {
        validate_specs(&specs)?;
        if specs.len() != layers.len() {
            return Err(Error::Shape(format!(
                "{} layer specs but {} layers",
                specs.len(),
                layers.len()
            )));
        }
        for (i, (s, l)) in specs.iter().zip(&layers).enumerate() {
            if l.weights.len() != s.weight_count() || l.bias.len() != s.output_width {
                return Err(Error::Shape(format!("layer {i} does not match its spec")));
            }
        }
        Ok(Self { specs, layers })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_width(&self) -> usize {
        self.specs[0].input_width
    }

    pub fn output_width(&self) -> usize {
        self.specs[self.specs.len() - 1].output_width
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            specs: self.specs.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.specs == other.specs
    }

    fn check_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!("{what} does not match network shape")))
        }
    }

    pub fn check_mask(&self, mask: &Mask) -> Result<()> {
        let ok = mask.layers.len() == self.layers.len()
            && mask
                .layers
                .iter()
                .zip(&self.layers)
                .all(|(m, l)| m.len() == l.weights.len());
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("mask does not match weight shapes".into()))
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    /// Iterates over every scalar (weights then bias, layer by layer).
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) -> Result<()> {
        self.check_same_shape(other, "addend")?;
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
        Ok(())
    }

    /// Single-input evaluation.
    pub fn forward(&self, mask: &Mask, input: &[f64]) -> Result<Vec<f64>> {
        let trace = self.forward_batch(mask, input, 1)?;
        Ok(trace.into_output())
    }

    /// Evaluates `batch` inputs laid out row-major in `inputs`, keeping the
    /// intermediate activations needed by [`NetworkParams::backprop`].
    pub fn forward_batch(&self, mask: &Mask, inputs: &[f64], batch: usize) -> Result<Trace> {
        self.check_mask(mask)?;
        if inputs.len() != batch * self.input_width() {
            return Err(Error::Shape(format!(
                "expected {} input values ({} x {}), got {}",
                batch * self.input_width(),
                batch,
                self.input_width(),
                inputs.len()
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        activations.push(inputs.to_vec());
        for (index, ((spec, layer), keep)) in self
            .specs
            .iter()
            .zip(&self.layers)
            .zip(&mask.layers)
            .enumerate()
        {
            let x = &activations[index];
            let (n_in, n_out) = (spec.input_width, spec.output_width);
            let columns = masked_transpose(&layer.weights, keep, n_in, n_out);
            let mut z = vec![0.0; batch * n_out];
            for (xb, zb) in x.chunks_exact(n_in).zip(z.chunks_exact_mut(n_out)) {
                zb.copy_from_slice(&layer.bias);
                for (&xi, column) in xb.iter().zip(columns.chunks_exact(n_out)) {
                    if xi != 0.0 {
                        axpy(zb, xi, column);
                    }
                }
            }
            let a: Vec<f64> = z.iter().map(|&v| spec.activation.apply(v)).collect();
            if !a.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { layer: index });
            }
            pre.push(z);
            activations.push(a);
        }
        Ok(Trace {
            batch,
            activations,
            pre,
        })
    }

    /// Backpropagates per-sample output gradients through a recorded trace.
    ///
    /// Returns parameter gradients (summed over the batch, exactly zero at
    /// masked weight positions) and the gradient with respect to the inputs.
    pub fn backprop(
        &self,
        mask: &Mask,
        trace: &Trace,
        output_grads: &[f64],
    ) -> Result<(Gradients, Vec<f64>)> {
        self.check_mask(mask)?;
        let batch = trace.batch;
        if output_grads.len() != batch * self.output_width() {
            return Err(Error::Shape("output gradient size".into()));
        }
        let mut grads = self.zeros_like();
        let mut delta = output_grads.to_vec();
        for index in (0..self.layers.len()).rev() {
            let spec = self.specs[index];
            let layer = &self.layers[index];
            let keep = &mask.layers[index];
            let (n_in, n_out) = (spec.input_width, spec.output_width);
            let z = &trace.pre[index];
            let a = &trace.activations[index + 1];
            for (d, (&zv, &av)) in delta.iter_mut().zip(z.iter().zip(a)) {
                *d *= spec.activation.derivative(zv, av);
            }
            if !delta.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { layer: index });
            }
            let x = &trace.activations[index];
            let g = &mut grads.layers[index];
            let effective = masked_weights(&layer.weights, keep);
            let mut prev = vec![0.0; batch * n_in];
            for ((xb, pb), db) in x
                .chunks_exact(n_in)
                .zip(prev.chunks_exact_mut(n_in))
                .zip(delta.chunks_exact(n_out))
            {
                for (((&d, gb), grow), wrow) in db
                    .iter()
                    .zip(g.bias.iter_mut())
                    .zip(g.weights.chunks_exact_mut(n_in))
                    .zip(effective.chunks_exact(n_in))
                {
                    if d != 0.0 {
                        *gb += d;
                        axpy(grow, d, xb);
                        axpy(pb, d, wrow);
                    }
                }
            }
            for (gw, &k) in g.weights.iter_mut().zip(keep) {
                if !k {
                    *gw = 0.0;
                }
            }
            delta = prev;
        }
        Ok((grads, delta))
    }

    /// Gradient of the summed squared error `sum_j (Q(s_j, a_j) - y_j)^2`
    /// restricted to the selected output of each sample. Returns the
    /// gradient and the loss value.
    pub fn backward(
        &self,
        mask: &Mask,
        inputs: &[f64],
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(Gradients, f64)> {
        let batch = actions.len();
        if batch == 0 {
            return Err(Error::Empty("batch".into()));
        }
        if targets.len() != batch {
            return Err(Error::Shape("one target per sample required".into()));
        }
        if !targets.iter().all(|t| t.is_finite()) {
            return Err(Error::Argument("targets must be finite".into()));
        }
        let trace = self.forward_batch(mask, inputs, batch)?;
        let width = self.output_width();
        let out = trace.output();
        let mut dout = vec![0.0; batch * width];
        let mut loss = 0.0;
        for (j, (&a, &y)) in actions.iter().zip(targets).enumerate() {
            if a >= width {
                return Err(Error::Argument(format!("action {a} out of range")));
            }
            let residual = out[j * width + a] - y;
            loss += residual * residual;
            dout[j * width + a] = 2.0 * residual;
        }
        let (grads, _) = self.backprop(mask, &trace, &dout)?;
        Ok((grads, loss))
    }

    /// Summed squared error without computing a gradient.
    pub fn squared_error(
        &self,
        mask: &Mask,
        inputs: &[f64],
        actions: &[usize],
        targets: &[f64],
    ) -> Result<f64> {
        let batch = actions.len();
        let trace = self.forward_batch(mask, inputs, batch)?;
        let width = self.output_width();
        let out = trace.output();
        Ok(actions
            .iter()
            .zip(targets)
            .enumerate()
            .map(|(j, (&a, &y))| {
                let r = out[j * width + a] - y;
                r * r
            })
            .sum())
    }
}

/// Activations recorded by a batched forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    batch: usize,
    activations: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Network outputs, row-major `batch x output_width`.
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace holds the input")
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.activations.pop().expect("trace holds the input")
    }
}

/// Adam optimizer state. Moments share the parameter shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: NetworkParams,
    pub second_moment: NetworkParams,
    pub step_count: u64,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl AdamState {
    pub fn new(params: &NetworkParams, learning_rate: f64, epsilon: f64) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step_count: 0,
            learning_rate,
            epsilon,
            beta1: 0.9,
            beta2: 0.999,
        }
    }

    /// Zeroes both moments and the step count; hyperparameters are kept.
    pub fn reset(&mut self) {
        for v in self
            .first_moment
            .values_mut()
            .chain(self.second_moment.values_mut())
        {
            *v = 0.0;
        }
        self.step_count = 0;
    }

    /// Zeroes the moments of pruned weights so they stay put under zero
    /// gradients.
    pub fn clear_masked(&mut self, mask: &Mask) {
        for moments in [&mut self.first_moment, &mut self.second_moment] {
            for (layer, keep) in moments.layers.iter_mut().zip(&mask.layers) {
                for (w, &k) in layer.weights.iter_mut().zip(keep) {
                    if !k {
                        *w = 0.0;
                    }
                }
            }
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut NetworkParams, grad: &Gradients) -> Result<()> {
        params.check_same_shape(grad, "gradient")?;
        params.check_same_shape(&self.first_moment, "optimizer state")?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        let moments = self
            .first_moment
            .values_mut()
            .zip(self.second_moment.values_mut());
        for ((p, g), (m, v)) in params.values_mut().zip(grad.values()).zip(moments) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Weights with pruned positions replaced by zero.
fn masked_weights(weights: &[f64], keep: &[bool]) -> Vec<f64> {
    weights
        .iter()
        .zip(keep)
        .map(|(&w, &k)| if k { w } else { 0.0 })
        .collect()
}

/// Row-major `n_in x n_out` copy of the masked `n_out x n_in` weights.
fn masked_transpose(weights: &[f64], keep: &[bool], n_in: usize, n_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; weights.len()];
    for o in 0..n_out {
        for i in 0..n_in {
            let k = o * n_in + i;
            if keep[k] {
                out[i * n_out + o] = weights[k];
            }
        }
    }
    out
}

/// `y += a * x` over equal-length slices.
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}
