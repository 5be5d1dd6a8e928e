use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Activation, Model, NetworkSpec, PROB_FLOOR};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::arg(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::arg("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be at least 1"));
        }
        if dataset_len == 0 {
            return Err(Error::arg("training set is empty"));
        }
        if self.batch_size > dataset_len {
            return Err(Error::arg(format!(
                "batch_size {} exceeds dataset size {dataset_len}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// Per-layer parameter gradients, laid out like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Gradients {
            weights: model
                .params()
                .iter()
                .map(|p| vec![0.0; p.weights.len()])
                .collect(),
            biases: model
                .params()
                .iter()
                .map(|p| vec![0.0; p.biases.len()])
                .collect(),
        }
    }

    fn clear(&mut self) {
        self.weights.iter_mut().flatten().for_each(|g| *g = 0.0);
        self.biases.iter_mut().flatten().for_each(|g| *g = 0.0);
    }
}

/// `-ln(max(p[label], 1e-12))`.
pub fn cross_entropy(probabilities: &[f64], label: usize) -> f64 {
    -probabilities[label].max(PROB_FLOOR).ln()
}

fn activation_derivative(activation: Activation, output: f64) -> f64 {
    match activation {
        Activation::ReLU => {
            if output > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Identity => 1.0,
        Activation::Softmax => unreachable!("softmax is only valid on the output layer"),
    }
}

/// Adds the cross-entropy gradient of one case into `grads` and returns its loss.
///
/// The caller guarantees `input` has the model's input width.
pub fn backprop(model: &Model, input: &[f64], label: usize, grads: &mut Gradients) -> f64 {
    let outputs = model.capture_unchecked(input);
    let probs = outputs.last().expect("model has layers");
    let loss = cross_entropy(probs, label);

    let mut delta: Vec<f64> = probs.clone();
    delta[label] -= 1.0;

    let layers = &model.spec().layers;
    for j in (0..layers.len()).rev() {
        let x = if j == 0 { input } else { &outputs[j - 1] };
        let cols = x.len();
        let gw = &mut grads.weights[j];
        for (r, d) in delta.iter().enumerate() {
            if *d != 0.0 {
                for (g, xv) in gw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                    *g += d * xv;
                }
            }
        }
        for (g, d) in grads.biases[j].iter_mut().zip(&delta) {
            *g += d;
        }
        if j > 0 {
            let w = model.params()[j].weights.data();
            let prev_act = layers[j - 1].activation;
            let mut next = vec![0.0; cols];
            for (r, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    for (n, wv) in next.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                        *n += d * wv;
                    }
                }
            }
            for (n, out) in next.iter_mut().zip(&outputs[j - 1]) {
                *n *= activation_derivative(prev_act, *out);
            }
            delta = next;
        }
    }
    loss
}

fn check_dataset(spec: &NetworkSpec, data: &LabeledDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    if data.input_width() != spec.input_width() {
        return Err(Error::shape(
            format!("inputs of {} values", spec.input_width()),
            format!("inputs of {} values", data.input_width()),
        ));
    }
    if data.class_count() > spec.class_count {
        return Err(Error::arg(format!(
            "dataset has {} classes but the network outputs {}",
            data.class_count(),
            spec.class_count
        )));
    }
    Ok(())
}

pub fn train(spec: &NetworkSpec, data: &LabeledDataset, cfg: &TrainConfig) -> Result<Model> {
    train_with_history(spec, data, cfg).map(|(model, _)| model)
}

/// Mini-batch SGD on mean cross-entropy. Returns the model and the mean
/// training loss of every epoch.
pub fn train_with_history(
    spec: &NetworkSpec,
    data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(Model, Vec<f64>)> {
    spec.validate()?;
    check_dataset(spec, data)?;
    cfg.validate(data.len())?;

    let mut init_rng = rng::stream(cfg.seed, rng::INIT_STREAM);
    let mut shuffle_rng = rng::stream(cfg.seed, rng::SHUFFLE_STREAM);
    let mut model = Model::initialize(spec.clone(), &mut init_rng)?;
    let mut grads = Gradients::zeros_like(&model);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            for &i in batch {
                let case = &data.cases()[i];
                total += backprop(&model, case.input.data(), case.label, &mut grads);
            }
            let step = cfg.learning_rate / batch.len() as f64;
            for (p, (gw, gb)) in model
                .params_mut()
                .iter_mut()
                .zip(grads.weights.iter().zip(&grads.biases))
            {
                for (w, g) in p.weights.data_mut().iter_mut().zip(gw) {
                    *w -= step * g;
                }
                for (b, g) in p.biases.data_mut().iter_mut().zip(gb) {
                    *b -= step * g;
                }
            }
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("mean loss is {mean}"),
            });
        }
        let params_finite = model.params().iter().all(|p| {
            p.weights
                .data()
                .iter()
                .chain(p.biases.data())
                .all(|v| v.is_finite())
        });
        if !params_finite {
            return Err(Error::Divergence {
                epoch,
                detail: "parameters became non-finite".into(),
            });
        }
        history.push(mean);
    }
    Ok((model, history))
}
