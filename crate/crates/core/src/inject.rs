//! Seeded injectors that plant exactly one defect: class under-representation
//! (ITD), label flips between two classes (UTD) or a missing hidden layer (SD).

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Case, LabeledDataset};
use crate::error::{Error, Result};
use crate::footprint::DefectType;
use crate::nn::NetworkSpec;
use crate::rng;

/// Fully resolved description of one injection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub kind: DefectType,
    pub seed: u64,
    pub itd_classes: Vec<usize>,
    pub itd_fraction: f64,
    pub utd_source: usize,
    pub utd_target: usize,
    pub utd_fraction: f64,
    pub sd_layer: usize,
}

/// Record of what an injection changed, written next to the corrupted artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionManifest {
    pub spec: InjectionSpec,
    /// Training-set indices removed (ITD) or relabeled (UTD), ascending.
    pub affected_case_ids: Vec<usize>,
    /// 1-based hidden layer removed (SD).
    pub removed_layer: Option<usize>,
    pub training_cases_before: usize,
    pub training_cases_after: usize,
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::arg(format!(
            "fraction must lie in (0, 1), got {fraction}"
        )));
    }
    Ok(())
}

/// `floor(fraction * n)`, tolerant of representation error such as 0.29 * 100.
fn floor_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 1e-9).floor() as usize
}

fn sample_sorted<R: Rng>(rng: &mut R, pool: &[usize], amount: usize) -> Vec<usize> {
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), amount)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Indices removed by [`inject_itd`], ascending.
pub fn select_itd_removals(
    data: &LabeledDataset,
    classes: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    check_fraction(fraction)?;
    let mut sorted = classes.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::arg("ITD classes must be distinct"));
    }
    if sorted.is_empty() {
        return Err(Error::arg("ITD needs at least one class"));
    }
    let mut rng = rng::stream(seed, rng::SAMPLE_STREAM);
    let mut removed = Vec::new();
    for &k in &sorted {
        if k >= data.class_count() {
            return Err(Error::arg(format!("class {k} out of range")));
        }
        let members = data.indices_of(k);
        if members.is_empty() {
            return Err(Error::arg(format!("class {k} has no cases")));
        }
        let amount = floor_count(fraction, members.len());
        removed.extend(sample_sorted(&mut rng, &members, amount));
    }
    removed.sort_unstable();
    Ok(removed)
}

/// Removes `floor(fraction * |class|)` cases from each listed class; survivors keep their order.
pub fn inject_itd(
    data: &LabeledDataset,
    classes: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    let removed = select_itd_removals(data, classes, fraction, seed)?;
    let mut drop = removed.into_iter().peekable();
    let cases: Vec<Case> = data
        .cases()
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            if drop.peek() == Some(i) {
                drop.next();
                false
            } else {
                true
            }
        })
        .map(|(_, c)| c.clone())
        .collect();
    LabeledDataset::new(data.class_count(), cases)
}

/// Indices relabeled by [`inject_utd`], ascending.
pub fn select_utd_relabels(
    data: &LabeledDataset,
    source: usize,
    target: usize,
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    check_fraction(fraction)?;
    if source == target {
        return Err(Error::arg("UTD source and target classes must differ"));
    }
    if source >= data.class_count() || target >= data.class_count() {
        return Err(Error::arg(format!(
            "UTD classes {source} -> {target} out of range for {} classes",
            data.class_count()
        )));
    }
    let members = data.indices_of(source);
    if members.is_empty() {
        return Err(Error::arg(format!("class {source} has no cases")));
    }
    let mut rng = rng::stream(seed, rng::SAMPLE_STREAM);
    Ok(sample_sorted(
        &mut rng,
        &members,
        floor_count(fraction, members.len()),
    ))
}

/// Relabels `floor(fraction * |source|)` source cases as `target`.
pub fn inject_utd(
    data: &LabeledDataset,
    source: usize,
    target: usize,
    fraction: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    let flipped = select_utd_relabels(data, source, target, fraction, seed)?;
    let mut cases = data.cases().to_vec();
    for i in flipped {
        cases[i].label = target;
    }
    LabeledDataset::new(data.class_count(), cases)
}

/// Drops hidden layer `layer_index` (1-based) and rewires the successor's input width.
pub fn inject_sd(spec: &NetworkSpec, layer_index: usize) -> Result<NetworkSpec> {
    spec.validate()?;
    let n = spec.layer_count();
    if layer_index == 0 || layer_index > n {
        return Err(Error::arg(format!(
            "layer {layer_index} does not exist in a {n}-layer network"
        )));
    }
    if layer_index == n {
        return Err(Error::arg("the output layer cannot be removed"));
    }
    if spec.hidden_count() < 2 {
        return Err(Error::arg(
            "removing the only hidden layer would leave none",
        ));
    }
    let mut layers = spec.layers.clone();
    let removed = layers.remove(layer_index - 1);
    layers[layer_index - 1].input_width = removed.input_width;
    let out = NetworkSpec {
        layers,
        class_count: spec.class_count,
    };
    out.validate()?;
    Ok(out)
}

/// Seeded choices the experiment protocol leaves random: which classes lose
/// data, which class pair is confused, which hidden layer is removed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InjectionChoices {
    pub itd_classes: Option<Vec<usize>>,
    pub itd_class_count: Option<usize>,
    pub itd_fraction: Option<f64>,
    pub utd_source: Option<usize>,
    pub utd_target: Option<usize>,
    pub utd_fraction: Option<f64>,
    pub sd_layer: Option<usize>,
}

pub const DEFAULT_ITD_CLASS_COUNT: usize = 3;
pub const DEFAULT_ITD_FRACTION: f64 = 0.8;
pub const DEFAULT_UTD_FRACTION: f64 = 0.5;

impl InjectionChoices {
    /// Fills every unset field from `seed`, for a task with `class_count`
    /// classes and a network with `hidden_count` hidden layers.
    pub fn resolve(
        &self,
        kind: DefectType,
        seed: u64,
        class_count: usize,
        hidden_count: usize,
    ) -> Result<InjectionSpec> {
        if class_count < 2 {
            return Err(Error::arg("injection needs at least 2 classes"));
        }
        let mut rng = rng::stream(seed, rng::INIT_STREAM);
        let itd_classes = match &self.itd_classes {
            Some(c) => c.clone(),
            None => {
                let k = self.itd_class_count.unwrap_or(DEFAULT_ITD_CLASS_COUNT);
                if k == 0 || k > class_count {
                    return Err(Error::arg(format!(
                        "cannot choose {k} ITD classes out of {class_count}"
                    )));
                }
                let mut c: Vec<usize> = index::sample(&mut rng, class_count, k).into_vec();
                c.sort_unstable();
                c
            }
        };
        let utd_source = self
            .utd_source
            .unwrap_or_else(|| rng.random_range(0..class_count));
        let utd_target = match self.utd_target {
            Some(t) => t,
            None => {
                let t = rng.random_range(0..class_count - 1);
                if t >= utd_source {
                    t + 1
                } else {
                    t
                }
            }
        };
        let sd_layer = match self.sd_layer {
            Some(l) => l,
            None if hidden_count == 0 => 0,
            None => rng.random_range(1..=hidden_count),
        };
        let spec = InjectionSpec {
            kind,
            seed,
            itd_classes,
            itd_fraction: self.itd_fraction.unwrap_or(DEFAULT_ITD_FRACTION),
            utd_source,
            utd_target,
            utd_fraction: self.utd_fraction.unwrap_or(DEFAULT_UTD_FRACTION),
            sd_layer,
        };
        spec.validate(class_count, hidden_count)?;
        Ok(spec)
    }
}

impl InjectionSpec {
    pub fn validate(&self, class_count: usize, hidden_count: usize) -> Result<()> {
        match self.kind {
            DefectType::ITD => {
                check_fraction(self.itd_fraction)?;
                if self.itd_classes.is_empty() || self.itd_classes.iter().any(|&c| c >= class_count)
                {
                    return Err(Error::arg(format!(
                        "ITD classes {:?} invalid for {class_count} classes",
                        self.itd_classes
                    )));
                }
            }
            DefectType::UTD => {
                check_fraction(self.utd_fraction)?;
                if self.utd_source == self.utd_target {
                    return Err(Error::arg("UTD source and target classes must differ"));
                }
                if self.utd_source >= class_count || self.utd_target >= class_count {
                    return Err(Error::arg("UTD class out of range"));
                }
            }
            DefectType::SD => {
                if hidden_count < 2 {
                    return Err(Error::arg(
                        "SD injection needs at least 2 hidden layers so one remains",
                    ));
                }
                if self.sd_layer == 0 || self.sd_layer > hidden_count {
                    return Err(Error::arg(format!(
                        "sd_layer {} is not one of the {hidden_count} hidden layers",
                        self.sd_layer
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Applies `spec` to the training data and network; exactly one of the two changes.
pub fn apply_injection(
    spec: &InjectionSpec,
    train: &LabeledDataset,
    network: &NetworkSpec,
) -> Result<(LabeledDataset, NetworkSpec, InjectionManifest)> {
    spec.validate(train.class_count(), network.hidden_count())?;
    let (data, net, affected, removed_layer) = match spec.kind {
        DefectType::ITD => {
            let removed =
                select_itd_removals(train, &spec.itd_classes, spec.itd_fraction, spec.seed)?;
            let data = inject_itd(train, &spec.itd_classes, spec.itd_fraction, spec.seed)?;
            (data, network.clone(), removed, None)
        }
        DefectType::UTD => {
            let args = (
                spec.utd_source,
                spec.utd_target,
                spec.utd_fraction,
                spec.seed,
            );
            let flipped = select_utd_relabels(train, args.0, args.1, args.2, args.3)?;
            let data = inject_utd(train, args.0, args.1, args.2, args.3)?;
            (data, network.clone(), flipped, None)
        }
        DefectType::SD => {
            let net = inject_sd(network, spec.sd_layer)?;
            (train.clone(), net, Vec::new(), Some(spec.sd_layer))
        }
    };
    let manifest = InjectionManifest {
        spec: spec.clone(),
        affected_case_ids: affected,
        removed_layer,
        training_cases_before: train.len(),
        training_cases_after: data.len(),
    };
    Ok((data, net, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn balanced(classes: usize, per_class: usize) -> LabeledDataset {
        let cases = (0..classes * per_class)
            .map(|i| Case {
                input: Tensor::vector(vec![i as f64, (i % 7) as f64]).unwrap(),
                label: i % classes,
            })
            .collect();
        LabeledDataset::new(classes, cases).unwrap()
    }

    #[test]
    fn itd_protocol_counts() {
        let d = balanced(10, 100);
        let out = inject_itd(&d, &[1, 4, 7], 0.8, 3).unwrap();
        assert_eq!(out.len(), 760);
        let counts = out.class_counts();
        for (k, &count) in counts.iter().enumerate() {
            let expected = if [1, 4, 7].contains(&k) { 20 } else { 100 };
            assert_eq!(count, expected);
        }
    }

    #[test]
    fn itd_tiny_fraction_is_noop() {
        let d = balanced(3, 10);
        assert_eq!(inject_itd(&d, &[0], 0.05, 1).unwrap(), d);
    }

    #[test]
    fn itd_deterministic_and_order_preserving() {
        let d = balanced(4, 25);
        let a = select_itd_removals(&d, &[2], 0.5, 9).unwrap();
        assert_eq!(a, select_itd_removals(&d, &[2], 0.5, 9).unwrap());
        assert_ne!(a, select_itd_removals(&d, &[2], 0.5, 10).unwrap());
        let out = inject_itd(&d, &[2], 0.5, 9).unwrap();
        let survivors: Vec<f64> = out.cases().iter().map(|c| c.input.data()[0]).collect();
        assert!(survivors.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn itd_errors() {
        let d = balanced(3, 10);
        let only_zero = LabeledDataset::new(3, d.cases()[..1].to_vec()).unwrap();
        assert!(inject_itd(&only_zero, &[1], 0.5, 0).is_err());
        assert!(inject_itd(&d, &[0, 0], 0.5, 0).is_err());
        assert!(inject_itd(&d, &[0], 1.0, 0).is_err());
        assert!(inject_itd(&d, &[5], 0.5, 0).is_err());
    }

    #[test]
    fn utd_protocol_counts() {
        let d = balanced(10, 100);
        let flipped = select_utd_relabels(&d, 4, 9, 0.5, 1).unwrap();
        assert_eq!(flipped.len(), 50);
        let out = inject_utd(&d, 4, 9, 0.5, 1).unwrap();
        assert_eq!(out.len(), d.len());
        let counts = out.class_counts();
        assert_eq!(counts[4] + flipped.len(), 100);
        assert_eq!(counts[9], 150);
        for (a, b) in d.cases().iter().zip(out.cases()) {
            assert_eq!(a.input, b.input);
        }
    }

    #[test]
    fn utd_errors_and_floor() {
        let d = balanced(3, 10);
        assert!(inject_utd(&d, 1, 1, 0.5, 0).is_err());
        assert_eq!(inject_utd(&d, 1, 2, 0.05, 0).unwrap(), d);
    }

    #[test]
    fn sd_removes_one_hidden_layer() {
        let spec = NetworkSpec::mlp(6, &[10, 11, 12, 13], 3).unwrap();
        let out = inject_sd(&spec, 3).unwrap();
        assert_eq!(out.layer_count(), spec.layer_count() - 1);
        assert_eq!(out.layers[2].input_width, 11);
        out.validate().unwrap();
        let first = inject_sd(&spec, 1).unwrap();
        assert_eq!(first.layers[0].input_width, 6);
        assert!(inject_sd(&spec, 5).is_err());
        assert!(inject_sd(&spec, 0).is_err());
        let shallow = NetworkSpec::mlp(6, &[10], 3).unwrap();
        assert!(inject_sd(&shallow, 1).is_err());
    }

    #[test]
    fn resolve_fills_seeded_choices() {
        let choices = InjectionChoices::default();
        let a = choices.resolve(DefectType::ITD, 7, 10, 4).unwrap();
        assert_eq!(a, choices.resolve(DefectType::ITD, 7, 10, 4).unwrap());
        assert_eq!(a.itd_classes.len(), 3);
        assert_eq!(a.itd_fraction, 0.8);
        assert_ne!(a.utd_source, a.utd_target);
        assert!((1..=4).contains(&a.sd_layer));
        assert!(choices.resolve(DefectType::SD, 7, 10, 1).is_err());
    }
}
