use rankprobe_core::codec::{encode_instrumented, encode_model};
use rankprobe_core::data::{generate_synthetic, LabeledDataset, SyntheticSpec};
use rankprobe_core::nn::{self, argmax, Model, NetworkSpec, TrainConfig};
use rankprobe_core::probe::{
    extract_dfs, extract_faulty_dfs, instrument, train_probes, train_probes_in_order,
};
use rankprobe_core::Error;

fn data(seed: u64) -> LabeledDataset {
    generate_synthetic(&SyntheticSpec {
        class_count: 4,
        cases_per_class: 60,
        dimension: 5,
        separation: 6.0,
        noise_sigma: 1.0,
        seed,
        allow_projection: false,
    })
    .unwrap()
}

fn cfg(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.1,
        epochs,
        batch_size: 16,
        seed,
    }
}

fn base(seed: u64) -> (Model, LabeledDataset) {
    let d = data(seed);
    let spec = NetworkSpec::mlp(5, &[8, 6, 6], 4).unwrap();
    (nn::train(&spec, &d, &cfg(seed, 15)).unwrap(), d)
}

#[test]
fn base_bytes_are_frozen() {
    for seed in 0..3 {
        let (model, d) = base(seed);
        let before = encode_model(&model);
        let im = instrument(model, seed).unwrap();
        let trained = train_probes(&im, &d, &cfg(seed + 1, 5)).unwrap();
        assert_eq!(encode_model(trained.base()), before);
    }
}

#[test]
fn probe_order_does_not_matter() {
    let (model, d) = base(7);
    let im = instrument(model, 3).unwrap();
    let forward = train_probes_in_order(&im, &d, &cfg(4, 4), &[0, 1, 2]).unwrap();
    let backward = train_probes_in_order(&im, &d, &cfg(4, 4), &[2, 0, 1]).unwrap();
    assert_eq!(
        encode_instrumented(&forward),
        encode_instrumented(&backward)
    );
}

#[test]
fn instrumenting_is_deterministic() {
    let (model, _) = base(1);
    let a = instrument(model.clone(), 9).unwrap();
    let b = instrument(model, 9).unwrap();
    assert_eq!(encode_instrumented(&a), encode_instrumented(&b));
    assert_eq!(a.probes().len(), 3);
    assert_eq!(a.footprint_len(), 4);
}

#[test]
fn footprints_are_distributions_ending_in_base_output() {
    let (model, d) = base(2);
    let im = train_probes(&instrument(model, 1).unwrap(), &d, &cfg(5, 3)).unwrap();
    for (i, case) in d.cases().iter().enumerate().step_by(11) {
        let dfs = extract_dfs(&im, case, i).unwrap();
        assert_eq!(dfs.len(), 4);
        for s in &dfs.per_layer_likelihoods {
            assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        let out = im.base().predict(&case.input).unwrap();
        assert_eq!(dfs.per_layer_likelihoods[3], out.probabilities);
        assert_eq!(extract_dfs(&im, case, i).unwrap(), dfs);
    }
}

#[test]
fn untrained_probes_cannot_extract() {
    let (model, d) = base(3);
    let im = instrument(model, 1).unwrap();
    assert!(matches!(
        extract_dfs(&im, &d.cases()[0], 0),
        Err(Error::State(_))
    ));
}

#[test]
fn faulty_count_matches_misclassifications() {
    let (model, d) = base(4);
    let im = train_probes(&instrument(model.clone(), 1).unwrap(), &d, &cfg(5, 2)).unwrap();
    let wrong = d
        .cases()
        .iter()
        .filter(|c| model.predict(&c.input).unwrap().class != c.label)
        .count();
    let faulty = extract_faulty_dfs(&im, &d).unwrap();
    assert_eq!(faulty.len(), wrong);
    assert!(faulty.iter().all(|f| f.is_faulty()));
}

/// Full-batch gradient descent on the multinomial logistic loss, written
/// independently of the library's training code.
fn logistic_oracle_accuracy(features: &[Vec<f64>], labels: &[usize], classes: usize) -> f64 {
    let d = features[0].len();
    let mut w = vec![vec![0.0; d + 1]; classes];
    for _ in 0..2000 {
        let mut grad = vec![vec![0.0; d + 1]; classes];
        for (x, &y) in features.iter().zip(labels) {
            let z: Vec<f64> = w
                .iter()
                .map(|row| row[d] + row[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let m = z.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let total: f64 = e.iter().sum();
            for k in 0..classes {
                let g = e[k] / total - if k == y { 1.0 } else { 0.0 };
                for j in 0..d {
                    grad[k][j] += g * x[j];
                }
                grad[k][d] += g;
            }
        }
        let step = 0.5 / features.len() as f64;
        for k in 0..classes {
            for j in 0..=d {
                w[k][j] -= step * grad[k][j];
            }
        }
    }
    let hits = features
        .iter()
        .zip(labels)
        .filter(|(x, &y)| {
            let z: Vec<f64> = w
                .iter()
                .map(|row| {
                    row[d]
                        + row[..d]
                            .iter()
                            .zip(x.iter())
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                })
                .collect();
            argmax(&z) == y
        })
        .count();
    hits as f64 / features.len() as f64
}

#[test]
fn deepest_probe_tracks_base_accuracy() {
    let (model, d) = base(5);
    let base_acc = model.accuracy(&d).unwrap();
    let im = train_probes(&instrument(model.clone(), 2).unwrap(), &d, &cfg(6, 30)).unwrap();
    let deepest = im.probes().len() - 1;
    let mut probe_hits = 0;
    let mut captured = Vec::new();
    let mut labels = Vec::new();
    for (i, case) in d.cases().iter().enumerate() {
        let dfs = extract_dfs(&im, case, i).unwrap();
        if argmax(&dfs.per_layer_likelihoods[deepest]) == case.label {
            probe_hits += 1;
        }
        captured.push(model.forward_capture(&case.input).unwrap()[deepest].clone());
        labels.push(case.label);
    }
    let probe_acc = probe_hits as f64 / d.len() as f64;
    let oracle_acc = logistic_oracle_accuracy(&captured, &labels, 4);
    assert!(
        oracle_acc >= base_acc - 0.05,
        "oracle {oracle_acc} vs base {base_acc}"
    );
    assert!(
        probe_acc >= base_acc - 0.05,
        "probe {probe_acc} vs base {base_acc}"
    );
}
