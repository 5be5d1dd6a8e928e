//! Dense feed-forward classifier: layer specs, parameters, forward pass with
//! per-layer capture, backpropagation and mini-batch SGD training.
//!
//! Each layer computes `g(W·x + b)`. The input layer carries no parameters and
//! is represented by the raw case itself, so a network of `n` layers produces
//! `n` captured outputs, the last of which is the softmax class distribution.

mod gradcheck;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use gradcheck::{gradient_check, gradient_check_with};
pub use train::{backprop, cross_entropy, train, train_with_history, Gradients, TrainConfig};

pub(crate) const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    #[serde(alias = "relu")]
    ReLU,
    #[serde(alias = "softmax")]
    Softmax,
    #[serde(alias = "identity")]
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(default = "dense")]
    pub kind: LayerKind,
    pub input_width: usize,
    pub output_width: usize,
    pub activation: Activation,
}

fn dense() -> LayerKind {
    LayerKind::Dense
}

impl LayerSpec {
    pub fn dense(input_width: usize, output_width: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Dense,
            input_width,
            output_width,
            activation,
        }
    }
}

/// Layer architecture of a classifier with `class_count` outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub class_count: usize,
}

impl NetworkSpec {
    /// ReLU hidden layers of the given widths followed by a softmax output layer.
    pub fn mlp(input_width: usize, hidden_widths: &[usize], class_count: usize) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden_widths.len() + 1);
        let mut prev = input_width;
        for &w in hidden_widths {
            layers.push(LayerSpec::dense(prev, w, Activation::ReLU));
            prev = w;
        }
        layers.push(LayerSpec::dense(prev, class_count, Activation::Softmax));
        let spec = NetworkSpec {
            layers,
            class_count,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 {
            return Err(Error::Structure("class_count must be positive".into()));
        }
        if self.layers.len() < 2 {
            return Err(Error::Structure(format!(
                "need at least one hidden layer and an output layer, got {} layer(s)",
                self.layers.len()
            )));
        }
        for (j, layer) in self.layers.iter().enumerate() {
            if layer.input_width == 0 || layer.output_width == 0 {
                return Err(Error::Structure(format!(
                    "layer {} has a zero width",
                    j + 1
                )));
            }
            let is_last = j + 1 == self.layers.len();
            if layer.activation == Activation::Softmax && !is_last {
                return Err(Error::Structure(format!(
                    "softmax activation on hidden layer {}",
                    j + 1
                )));
            }
            if let Some(next) = self.layers.get(j + 1) {
                if layer.output_width != next.input_width {
                    return Err(Error::Structure(format!(
                        "layer {} outputs {} values but layer {} expects {}",
                        j + 1,
                        layer.output_width,
                        j + 2,
                        next.input_width
                    )));
                }
            }
        }
        let out = self.layers.last().expect("checked above");
        if out.output_width != self.class_count || out.activation != Activation::Softmax {
            return Err(Error::Structure(format!(
                "output layer must be softmax with {} outputs",
                self.class_count
            )));
        }
        Ok(())
    }

    /// Total layer count `n`, output layer included.
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_count(&self) -> usize {
        self.layers.len().saturating_sub(1)
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width
    }
}

/// Weights (`output_width × input_width`) and biases of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weights: Tensor,
    pub biases: Tensor,
}

impl DenseParams {
    pub fn zeros(spec: &LayerSpec) -> Self {
        DenseParams {
            weights: Tensor::zeros(vec![spec.output_width, spec.input_width])
                .expect("positive widths"),
            biases: Tensor::zeros(vec![spec.output_width]).expect("positive widths"),
        }
    }

    /// Uniform in ±sqrt(6 / (fan_in + fan_out)), zero biases.
    pub fn glorot<R: Rng>(input_width: usize, output_width: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input_width + output_width) as f64).sqrt();
        let weights = (0..input_width * output_width)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        DenseParams {
            weights: Tensor::new(vec![output_width, input_width], weights)
                .expect("finite glorot draw"),
            biases: Tensor::zeros(vec![output_width]).expect("positive width"),
        }
    }

    pub fn input_width(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn output_width(&self) -> usize {
        self.weights.shape()[0]
    }

    fn check_against(&self, spec: &LayerSpec, j: usize) -> Result<()> {
        if self.weights.shape() != [spec.output_width, spec.input_width]
            || self.biases.shape() != [spec.output_width]
        {
            return Err(Error::shape(
                format!(
                    "layer {} weights {}x{} and {} biases",
                    j + 1,
                    spec.output_width,
                    spec.input_width,
                    spec.output_width
                ),
                format!(
                    "weights {:?} and biases {:?}",
                    self.weights.shape(),
                    self.biases.shape()
                ),
            ));
        }
        Ok(())
    }

    /// `W·x + b` without activation.
    pub(crate) fn affine(&self, x: &[f64]) -> Vec<f64> {
        let cols = self.input_width();
        self.weights
            .data()
            .chunks_exact(cols)
            .zip(self.biases.data())
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// A network spec together with its learned parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: NetworkSpec,
    params: Vec<DenseParams>,
}

impl Model {
    pub fn new(spec: NetworkSpec, params: Vec<DenseParams>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.layers.len() {
            return Err(Error::shape(
                format!("{} layers of parameters", spec.layers.len()),
                params.len(),
            ));
        }
        for (j, (p, l)) in params.iter().zip(&spec.layers).enumerate() {
            p.check_against(l, j)?;
        }
        Ok(Model { spec, params })
    }

    /// Glorot-initialized model drawn from `rng`, layer by layer.
    pub fn initialize<R: Rng>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let params = spec
            .layers
            .iter()
            .map(|l| DenseParams::glorot(l.input_width, l.output_width, rng))
            .collect();
        Ok(Model { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[DenseParams] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [DenseParams] {
        &mut self.params
    }

    pub fn class_count(&self) -> usize {
        self.spec.class_count
    }

    pub fn layer_count(&self) -> usize {
        self.spec.layer_count()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let width = self.spec.input_width();
        if input.len() != width {
            return Err(Error::shape(
                format!("input of {width} values"),
                format!("{:?}", input.shape()),
            ));
        }
        Ok(())
    }

    /// Outputs of every layer `[X_2, ..., X_{n+1}]`; the last one is the class distribution.
    pub fn forward_capture(&self, input: &Tensor) -> Result<Vec<Vec<f64>>> {
        self.check_input(input)?;
        Ok(self.capture_unchecked(input.data()))
    }

    pub(crate) fn capture_unchecked(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.params.len());
        for (p, l) in self.params.iter().zip(&self.spec.layers) {
            let x = outputs.last().map_or(input, |v| v.as_slice());
            let mut z = p.affine(x);
            apply_activation(l.activation, &mut z);
            outputs.push(z);
        }
        outputs
    }

    pub fn predict(&self, input: &Tensor) -> Result<Prediction> {
        let probabilities = self
            .forward_capture(input)?
            .pop()
            .expect("validated model has layers");
        let class = argmax(&probabilities);
        Ok(Prediction {
            probabilities,
            class,
        })
    }
}

impl Model {
    /// Fraction of `data` whose predicted class equals the label; 0 for an empty set.
    pub fn accuracy(&self, data: &crate::data::LabeledDataset) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let mut hits = 0usize;
        for case in data.cases() {
            if self.predict(&case.input)?.class == case.label {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub class: usize,
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::arg("softmax of an empty vector"));
    }
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::arg(format!("non-finite logit at index {i}")));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

pub(crate) fn apply_activation(activation: Activation, z: &mut [f64]) {
    match activation {
        Activation::Identity => {}
        Activation::ReLU => z.iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Softmax => softmax_in_place(z),
    }
}

/// `g(W·x + b)` for a single dense layer.
pub fn layer_forward(
    weights: &Tensor,
    biases: &Tensor,
    activation: Activation,
    input: &[f64],
) -> Result<Vec<f64>> {
    let shape = weights.shape();
    if shape.len() != 2 {
        return Err(Error::shape("rank-2 weight matrix", format!("{shape:?}")));
    }
    if biases.shape() != [shape[0]] {
        return Err(Error::shape(
            format!("[{}] biases", shape[0]),
            format!("{:?}", biases.shape()),
        ));
    }
    if input.len() != shape[1] {
        return Err(Error::shape(
            format!("input of {} values", shape[1]),
            input.len(),
        ));
    }
    let params = DenseParams {
        weights: weights.clone(),
        biases: biases.clone(),
    };
    let mut z = params.affine(input);
    apply_activation(activation, &mut z);
    Ok(z)
}
