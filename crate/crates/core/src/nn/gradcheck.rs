use super::train::{backprop, cross_entropy, Gradients};
use super::Model;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Maximum relative disagreement between backpropagation and central
/// differences over every parameter of `model`, for one labeled case.
pub fn gradient_check(model: &Model, input: &Tensor, label: usize, epsilon: f64) -> Result<f64> {
    gradient_check_with(model, input, label, epsilon, |m, x, y| {
        let mut g = Gradients::zeros_like(m);
        backprop(m, x, y, &mut g);
        g
    })
}

/// Like [`gradient_check`] but with a caller-supplied analytic gradient.
pub fn gradient_check_with<F>(
    model: &Model,
    input: &Tensor,
    label: usize,
    epsilon: f64,
    analytic: F,
) -> Result<f64>
where
    F: Fn(&Model, &[f64], usize) -> Gradients,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::arg(format!(
            "epsilon must lie in (0, 1e-2], got {epsilon}"
        )));
    }
    if label >= model.class_count() {
        return Err(Error::arg(format!(
            "label {label} out of range for {} classes",
            model.class_count()
        )));
    }
    model.forward_capture(input)?;
    let x = input.data();
    let grads = analytic(model, x, label);

    let loss = |m: &Model| cross_entropy(m.capture_unchecked(x).last().expect("layers"), label);
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(1.0);

    for j in 0..model.params().len() {
        for k in 0..model.params()[j].weights.len() {
            let numeric = central(&mut probe, &loss, epsilon, |m| {
                &mut m.params_mut()[j].weights.data_mut()[k]
            });
            worst = worst.max(rel(grads.weights[j][k], numeric));
        }
        for k in 0..model.params()[j].biases.len() {
            let numeric = central(&mut probe, &loss, epsilon, |m| {
                &mut m.params_mut()[j].biases.data_mut()[k]
            });
            worst = worst.max(rel(grads.biases[j][k], numeric));
        }
    }
    Ok(worst)
}

fn central<L, P>(model: &mut Model, loss: &L, epsilon: f64, param: P) -> f64
where
    L: Fn(&Model) -> f64,
    P: Fn(&mut Model) -> &mut f64,
{
    let original = *param(model);
    *param(model) = original + epsilon;
    let plus = loss(model);
    *param(model) = original - epsilon;
    let minus = loss(model);
    *param(model) = original;
    (plus - minus) / (2.0 * epsilon)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{DenseParams, NetworkSpec};

    fn random_model(seed: u64) -> Model {
        let spec = NetworkSpec::mlp(4, &[6, 5], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Model::initialize(spec, &mut rng).unwrap()
    }

    #[test]
    fn backprop_agrees_with_central_differences() {
        let model = random_model(3);
        let x = Tensor::vector(vec![0.5, -1.2, 0.8, 0.1]).unwrap();
        let err = gradient_check(&model, &x, 2, 1e-5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_model_bias_gradients_match_exactly() {
        let spec = NetworkSpec::mlp(3, &[4], 2).unwrap();
        let params = spec.layers.iter().map(DenseParams::zeros).collect();
        let model = Model::new(spec, params).unwrap();
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap();
        let mut g = Gradients::zeros_like(&model);
        backprop(&model, x.data(), 1, &mut g);
        // uniform output: dL/db_out = p - y = [0.5, -0.5]; hidden biases see zero weights
        assert_eq!(g.biases[1], vec![0.5, -0.5]);
        assert_eq!(g.biases[0], vec![0.0; 4]);
        let err = gradient_check(&model, &x, 1, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let model = random_model(5);
        let x = Tensor::vector(vec![0.2, 0.4, -0.6, 1.0]).unwrap();
        let err = gradient_check_with(&model, &x, 0, 1e-5, |m, x, y| {
            let mut g = Gradients::zeros_like(m);
            backprop(m, x, y, &mut g);
            g.biases[1][0] += 0.5;
            g
        })
        .unwrap();
        assert!(err > 1e-2, "{err}");
    }

    #[test]
    fn rejects_bad_epsilon() {
        let model = random_model(1);
        let x = Tensor::vector(vec![0.0; 4]).unwrap();
        assert!(gradient_check(&model, &x, 0, 0.0).is_err());
        assert!(gradient_check(&model, &x, 0, 0.1).is_err());
    }
}
