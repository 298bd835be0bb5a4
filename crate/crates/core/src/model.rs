//! Desk-scale trainable model: a tanh MLP with softmax cross-entropy,
//! hand-written backprop and Adam. Everything the protocol sees is the
//! flat parameter vector.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

/// The whole model as one contiguous vector of weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams(Vec<f64>);

impl FlatParams {
    /// Fails if any element is NaN or infinite.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "parameter {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(FlatParams(values))
    }

    pub fn zeros(len: usize) -> Self {
        FlatParams(vec![0.0; len])
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        FlatParams(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for FlatParams {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        let spec = ModelSpec {
            input_dim,
            hidden_dims,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim", "must be positive"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::config(
                "hidden_dims",
                "every layer width must be positive",
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "must be at least 2"));
        }
        Ok(())
    }

    /// (fan_in, fan_out) for each dense layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.num_classes);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Trainable parameter count P.
    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|&(fan_in, fan_out)| fan_in * fan_out + fan_out)
            .sum()
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            input_dim: 8,
            hidden_dims: vec![32],
            num_classes: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            local_epochs: 4,
            batch_size: 32,
            learning_rate: 0.001,
            optimizer: Optimizer::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "learning_rate",
                "must be a positive finite number",
            ));
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0) {
            return Err(Error::config("adam_beta1", "must lie in (0, 1)"));
        }
        if !(self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0) {
            return Err(Error::config("adam_beta2", "must lie in (0, 1)"));
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return Err(Error::config("adam_epsilon", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - cfg.adam_beta1.powi(t);
        let bc2 = 1.0 - cfg.adam_beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = cfg.adam_beta1 * *m + (1.0 - cfg.adam_beta1) * g;
            *v = cfg.adam_beta2 * *v + (1.0 - cfg.adam_beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    }
}

/// Row-major feature matrix with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    input_dim: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Dimension("input_dim must be positive".into()));
        }
        if labels.is_empty() {
            return Err(Error::Argument(
                "dataset must hold at least one sample".into(),
            ));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::Dimension(format!(
                "{} feature values for {} samples of dim {input_dim}",
                features.len(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("features must be finite".into()));
        }
        Ok(LabeledDataset {
            features,
            labels,
            input_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        let d = self.input_dim;
        (&self.features[i * d..(i + 1) * d], self.labels[i])
    }

    /// Dataset made of the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Argument(format!(
                    "row {i} out of range for dataset of {}",
                    self.len()
                )));
            }
            let (x, y) = self.sample(i);
            features.extend_from_slice(x);
            labels.push(y);
        }
        LabeledDataset::new(features, labels, self.input_dim)
    }

    pub fn concat(&self, other: &LabeledDataset) -> Result<Self> {
        if self.input_dim != other.input_dim {
            return Err(Error::Dimension(
                "cannot concatenate datasets of different dims".into(),
            ));
        }
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        LabeledDataset::new(features, labels, self.input_dim)
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    /// Offset of the fan_out x fan_in weight block; biases follow it.
    offset: usize,
}

impl Layer {
    fn bias_offset(&self) -> usize {
        self.offset + self.fan_in * self.fan_out
    }
}

/// Fully connected classifier with tanh hidden activations.
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: ModelSpec,
    layers: Vec<Layer>,
    param_count: usize,
}

impl Mlp {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut offset = 0;
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let layer = Layer {
                    fan_in,
                    fan_out,
                    offset,
                };
                offset += fan_in * fan_out + fan_out;
                layer
            })
            .collect();
        Ok(Mlp {
            spec,
            layers,
            param_count: offset,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Weights uniform in ±1/√fan_in, biases zero.
    pub fn init_params(&self, seed: u64) -> FlatParams {
        let mut rng = seed::rng_from(seed, &[seed::TAG_INIT]);
        let mut values = vec![0.0; self.param_count];
        for layer in &self.layers {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for w in &mut values[layer.offset..layer.bias_offset()] {
                *w = rng.random_range(-bound..bound);
            }
        }
        FlatParams(values)
    }

    fn check(&self, params: &FlatParams, data: &LabeledDataset) -> Result<()> {
        if params.len() != self.param_count {
            return Err(Error::Dimension(format!(
                "model expects {} parameters, got {}",
                self.param_count,
                params.len()
            )));
        }
        if data.input_dim() != self.spec.input_dim {
            return Err(Error::Dimension(format!(
                "model expects {} input features, data has {}",
                self.spec.input_dim,
                data.input_dim()
            )));
        }
        if let Some(&bad) = data.labels().iter().find(|&&y| y >= self.spec.num_classes) {
            return Err(Error::Dimension(format!(
                "label {bad} out of range for {} classes",
                self.spec.num_classes
            )));
        }
        Ok(())
    }

    /// Activations of every layer for one sample; the last entry holds logits.
    fn forward(&self, params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let input = &acts[li];
            let weights = &params[layer.offset..layer.bias_offset()];
            let bias = &params[layer.bias_offset()..layer.bias_offset() + layer.fan_out];
            let out: Vec<f64> = (0..layer.fan_out)
                .map(|o| {
                    let row = &weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                    let z = bias[o] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
                    if li == last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn logits(&self, params: &FlatParams, x: &[f64]) -> Vec<f64> {
        self.forward(params.as_slice(), x).pop().unwrap_or_default()
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn loss(&self, params: &FlatParams, batch: &LabeledDataset) -> Result<f64> {
        self.check(params, batch)?;
        let total: f64 = (0..batch.len())
            .map(|i| {
                let (x, y) = batch.sample(i);
                let logits = self.logits(params, x);
                log_sum_exp(&logits) - logits[y]
            })
            .sum();
        Ok(total / batch.len() as f64)
    }

    pub fn loss_and_grad(
        &self,
        params: &FlatParams,
        batch: &LabeledDataset,
    ) -> Result<(f64, FlatParams)> {
        self.check(params, batch)?;
        let rows: Vec<usize> = (0..batch.len()).collect();
        let mut grad = vec![0.0; self.param_count];
        let loss = self.accumulate_grad(params.as_slice(), batch, &rows, &mut grad);
        Ok((loss, FlatParams(grad)))
    }

    /// Writes the mean gradient over `rows` into `grad` and returns the mean loss.
    fn accumulate_grad(
        &self,
        params: &[f64],
        data: &LabeledDataset,
        rows: &[usize],
        grad: &mut [f64],
    ) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / rows.len() as f64;
        let mut loss = 0.0;
        for &i in rows {
            let (x, y) = data.sample(i);
            let acts = self.forward(params, x);
            let logits = &acts[acts.len() - 1];
            let lse = log_sum_exp(logits);
            loss += lse - logits[y];

            let mut delta: Vec<f64> = logits
                .iter()
                .enumerate()
                .map(|(c, &z)| {
                    let p = (z - lse).exp();
                    (if c == y { p - 1.0 } else { p }) * scale
                })
                .collect();

            for (li, layer) in self.layers.iter().enumerate().rev() {
                let input = &acts[li];
                let b_off = layer.bias_offset();
                for o in 0..layer.fan_out {
                    let d = delta[o];
                    grad[b_off + o] += d;
                    let row = layer.offset + o * layer.fan_in;
                    for (g, a) in grad[row..row + layer.fan_in].iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                if li > 0 {
                    delta = (0..layer.fan_in)
                        .map(|j| {
                            let back: f64 = (0..layer.fan_out)
                                .map(|o| params[layer.offset + o * layer.fan_in + j] * delta[o])
                                .sum();
                            back * (1.0 - input[j] * input[j])
                        })
                        .collect();
                }
            }
        }
        loss * scale
    }

    /// Runs `local_epochs` epochs of mini-batch training with a fresh optimizer
    /// state. Shuffling is derived from `seed` only.
    pub fn local_train(
        &self,
        params: &FlatParams,
        data: &LabeledDataset,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<FlatParams> {
        self.check(params, data)?;
        cfg.validate()?;
        let mut theta = params.as_slice().to_vec();
        if cfg.local_epochs == 0 {
            return Ok(FlatParams(theta));
        }
        let mut rng = seed::rng_from(seed, &[]);
        let mut adam = AdamState::new(self.param_count);
        let mut grad = vec![0.0; self.param_count];
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..cfg.local_epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                self.accumulate_grad(&theta, data, batch, &mut grad);
                match cfg.optimizer {
                    Optimizer::Adam => adam.step(&mut theta, &grad, cfg),
                    Optimizer::Sgd => {
                        for (p, g) in theta.iter_mut().zip(&grad) {
                            *p -= cfg.learning_rate * g;
                        }
                    }
                }
            }
        }
        FlatParams::new(theta).map_err(|e| Error::Protocol(format!("training diverged: {e}")))
    }

    /// Index of the largest logit, ties to the lowest class.
    pub fn predict(&self, params: &FlatParams, x: &[f64]) -> usize {
        let logits = self.logits(params, x);
        let mut best = 0;
        for (c, &z) in logits.iter().enumerate().skip(1) {
            if z > logits[best] {
                best = c;
            }
        }
        best
    }

    /// Top-1 accuracy.
    pub fn evaluate(&self, params: &FlatParams, data: &LabeledDataset) -> Result<f64> {
        self.check(params, data)?;
        let correct = (0..data.len())
            .filter(|&i| {
                let (x, y) = data.sample(i);
                self.predict(params, x) == y
            })
            .count();
        Ok(correct as f64 / data.len() as f64)
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
