//! Softmax probes attached to hidden layers of a frozen base model, and
//! extraction of per-layer class-likelihood footprints.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Case, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{argmax, cross_entropy, softmax_in_place, DenseParams, Model, TrainConfig};
use crate::rng::{self, derive_seed};
use crate::tensor::Tensor;

/// Single softmax layer reading the output of hidden layer `layer_index` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    layer_index: usize,
    params: DenseParams,
}

impl Probe {
    pub fn new(layer_index: usize, weights: Tensor, biases: Tensor) -> Result<Self> {
        if weights.shape().len() != 2 || biases.shape() != [weights.shape()[0]] {
            return Err(Error::shape(
                "N x width weights and N biases",
                format!("{:?} and {:?}", weights.shape(), biases.shape()),
            ));
        }
        Ok(Probe {
            layer_index,
            params: DenseParams { weights, biases },
        })
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn weights(&self) -> &Tensor {
        &self.params.weights
    }

    pub fn biases(&self) -> &Tensor {
        &self.params.biases
    }

    /// Class distribution predicted from one hidden-layer output.
    pub fn apply(&self, activation: &[f64]) -> Result<Vec<f64>> {
        if activation.len() != self.params.input_width() {
            return Err(Error::shape(
                format!("activation of {} values", self.params.input_width()),
                activation.len(),
            ));
        }
        Ok(self.apply_unchecked(activation))
    }

    fn apply_unchecked(&self, activation: &[f64]) -> Vec<f64> {
        let mut z = self.params.affine(activation);
        softmax_in_place(&mut z);
        z
    }

    /// One averaged SGD step over `batch` of (activation, label) pairs; returns the summed loss.
    fn sgd_step<'a>(
        &mut self,
        batch: impl Iterator<Item = (&'a [f64], usize)>,
        batch_len: usize,
        learning_rate: f64,
        gw: &mut [f64],
        gb: &mut [f64],
    ) -> f64 {
        gw.fill(0.0);
        gb.fill(0.0);
        let cols = self.params.input_width();
        let mut loss = 0.0;
        for (x, label) in batch {
            let mut delta = self.apply_unchecked(x);
            loss += cross_entropy(&delta, label);
            delta[label] -= 1.0;
            for (r, d) in delta.iter().enumerate() {
                gb[r] += d;
                for (g, xv) in gw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                    *g += d * xv;
                }
            }
        }
        let step = learning_rate / batch_len as f64;
        for (w, g) in self.params.weights.data_mut().iter_mut().zip(gw.iter()) {
            *w -= step * g;
        }
        for (b, g) in self.params.biases.data_mut().iter_mut().zip(gb.iter()) {
            *b -= step * g;
        }
        loss
    }

    fn is_finite(&self) -> bool {
        self.params
            .weights
            .data()
            .iter()
            .chain(self.params.biases.data())
            .all(|v| v.is_finite())
    }
}

/// A frozen base model plus one probe per hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentedModel {
    base: Model,
    probes: Vec<Probe>,
    trained: bool,
}

impl InstrumentedModel {
    pub(crate) fn from_parts(base: Model, probes: Vec<Probe>, trained: bool) -> Result<Self> {
        let hidden = base.spec().hidden_count();
        if probes.len() != hidden {
            return Err(Error::Structure(format!(
                "{} probes for {hidden} hidden layers",
                probes.len()
            )));
        }
        for (i, p) in probes.iter().enumerate() {
            let width = base.spec().layers[i].output_width;
            if p.layer_index != i + 1
                || p.params.input_width() != width
                || p.params.output_width() != base.class_count()
            {
                return Err(Error::Structure(format!(
                    "probe {} does not fit hidden layer {} ({width} wide, {} classes)",
                    p.layer_index,
                    i + 1,
                    base.class_count()
                )));
            }
        }
        Ok(InstrumentedModel {
            base,
            probes,
            trained,
        })
    }

    pub fn base(&self) -> &Model {
        &self.base
    }

    pub fn probes(&self) -> &[Probe] {
        &self.probes
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Footprint length `n`: one entry per probe plus the base output.
    pub fn footprint_len(&self) -> usize {
        self.base.layer_count()
    }
}

/// Attaches one freshly initialized probe to every hidden layer of `base`.
pub fn instrument(base: Model, seed: u64) -> Result<InstrumentedModel> {
    let hidden = base.spec().hidden_count();
    if hidden == 0 {
        return Err(Error::Structure(
            "base model has no hidden layer to probe".into(),
        ));
    }
    let n = base.class_count();
    let probes = (1..=hidden)
        .map(|j| {
            let width = base.spec().layers[j - 1].output_width;
            let mut rng = rng::stream(derive_seed(seed, j as u64), rng::INIT_STREAM);
            Probe {
                layer_index: j,
                params: DenseParams::glorot(width, n, &mut rng),
            }
        })
        .collect();
    InstrumentedModel::from_parts(base, probes, false)
}

/// Trains every probe on the captured hidden outputs of `data` while the
/// base model stays untouched.
pub fn train_probes(
    im: &InstrumentedModel,
    data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<InstrumentedModel> {
    let order: Vec<usize> = (0..im.probes.len()).collect();
    train_probes_in_order(im, data, cfg, &order)
}

/// [`train_probes`] visiting probes in `probe_order` within each epoch. The
/// result does not depend on the order.
pub fn train_probes_in_order(
    im: &InstrumentedModel,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    probe_order: &[usize],
) -> Result<InstrumentedModel> {
    if data.is_empty() {
        return Err(Error::arg("probe training set is empty"));
    }
    cfg.validate(data.len())?;
    let width = im.base.spec().input_width();
    if data.input_width() != width {
        return Err(Error::shape(
            format!("inputs of {width} values"),
            format!("inputs of {} values", data.input_width()),
        ));
    }
    if let Some(c) = data
        .cases()
        .iter()
        .find(|c| c.label >= im.base.class_count())
    {
        return Err(Error::arg(format!(
            "label {} out of range for {} classes",
            c.label,
            im.base.class_count()
        )));
    }
    let mut sorted = probe_order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..im.probes.len()).collect::<Vec<_>>() {
        return Err(Error::arg(
            "probe_order must be a permutation of probe positions",
        ));
    }

    let mut out = im.clone();
    let mut shuffle_rng = rng::stream(cfg.seed, rng::SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut scratch: Vec<(Vec<f64>, Vec<f64>)> = out
        .probes
        .iter()
        .map(|p| (vec![0.0; p.weights().len()], vec![0.0; p.biases().len()]))
        .collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let captured: Vec<Vec<Vec<f64>>> = data
            .cases()
            .iter()
            .map(|c| im.base.capture_unchecked(c.input.data()))
            .collect();
        for &pi in probe_order {
            let probe = &mut out.probes[pi];
            let (gw, gb) = &mut scratch[pi];
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let pairs = batch
                    .iter()
                    .map(|&i| (captured[i][pi].as_slice(), data.cases()[i].label));
                total += probe.sgd_step(pairs, batch.len(), cfg.learning_rate, gw, gb);
            }
            if !total.is_finite() || !probe.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("probe on hidden layer {} diverged", probe.layer_index),
                });
            }
        }
    }
    out.trained = true;
    Ok(out)
}

/// Per-layer class likelihoods `[S_1, ..., S_n]` of one labeled input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintSpecifics {
    pub per_layer_likelihoods: Vec<Vec<f64>>,
    pub source_case_id: usize,
    pub true_label: usize,
    pub predicted_label: usize,
}

impl FootprintSpecifics {
    pub fn len(&self) -> usize {
        self.per_layer_likelihoods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_layer_likelihoods.is_empty()
    }

    pub fn is_faulty(&self) -> bool {
        self.true_label != self.predicted_label
    }
}

pub fn extract_dfs(
    im: &InstrumentedModel,
    case: &Case,
    case_id: usize,
) -> Result<FootprintSpecifics> {
    if !im.trained {
        return Err(Error::State(
            "probes must be trained before footprints are extracted".into(),
        ));
    }
    if case.label >= im.base.class_count() {
        return Err(Error::arg(format!(
            "label {} out of range for {} classes",
            case.label,
            im.base.class_count()
        )));
    }
    let captured = im.base.forward_capture(&case.input)?;
    let mut likelihoods: Vec<Vec<f64>> = im
        .probes
        .iter()
        .zip(&captured)
        .map(|(p, x)| p.apply_unchecked(x))
        .collect();
    let output = captured.into_iter().last().expect("model has layers");
    let predicted_label = argmax(&output);
    likelihoods.push(output);
    Ok(FootprintSpecifics {
        per_layer_likelihoods: likelihoods,
        source_case_id: case_id,
        true_label: case.label,
        predicted_label,
    })
}

/// Footprints of the misclassified cases of `test`, in dataset order; case
/// ids are dataset indices.
pub fn extract_faulty_dfs(
    im: &InstrumentedModel,
    test: &LabeledDataset,
) -> Result<Vec<FootprintSpecifics>> {
    let mut faulty = Vec::new();
    for (i, case) in test.cases().iter().enumerate() {
        let dfs = extract_dfs(im, case, i)?;
        if dfs.is_faulty() {
            faulty.push(dfs);
        }
    }
    Ok(faulty)
}
