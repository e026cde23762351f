use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize, classes: usize) -> (Tensor, Vec<usize>) {
    let x = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y = (0..rows).map(|_| rng.gen_range(0..classes)).collect();
    (Tensor::new(vec![rows, cols], x).unwrap(), y)
}

/// Central finite differences of the mean batch loss.
fn fd_gradient(spec: &ModelSpec, w: &[f64], batch: &Tensor, labels: &[usize], h: f64) -> Vec<f64> {
    let mut probe = w.to_vec();
    (0..w.len())
        .map(|i| {
            probe[i] = w[i] + h;
            let up = loss(spec, &probe, batch, labels).unwrap();
            probe[i] = w[i] - h;
            let down = loss(spec, &probe, batch, labels).unwrap();
            probe[i] = w[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[test]
fn init_biases_are_zero_and_deterministic() {
    let spec = ModelSpec::mlp(&[2, 3], Activation::Relu).unwrap();
    let a = init_params(&spec, 11);
    let b = init_params(&spec, 11);
    assert_eq!(a, b);
    assert!(a[6..9].iter().all(|&x| x == 0.0));
    let bound = (6.0f64 / 2.0).sqrt();
    assert!(a[..6].iter().all(|x| x.abs() <= bound));
    assert_ne!(init_params(&spec, 12), a);
}

#[test]
fn mnist_mlp_parameter_count() {
    let spec = ModelSpec::mlp(&[784, 64, 10], Activation::Relu).unwrap();
    assert_eq!(spec.param_count(), 784 * 64 + 64 + 64 * 10 + 10);
    assert_eq!(spec.param_count(), 50890);
}

#[test]
fn zero_params_give_zero_logits() {
    let spec = ModelSpec::mlp(&[3, 2], Activation::Relu).unwrap();
    let x = Tensor::new(vec![2, 3], vec![1., -2., 3., 0.5, 0.5, 9.]).unwrap();
    let z = forward(&spec, &ParamVector::zeros(8), &x).unwrap();
    assert_eq!(z.data(), &[0.0; 4]);
}

#[test]
fn identity_layer_passes_inputs_through() {
    let spec = ModelSpec::mlp(&[3, 3], Activation::Relu).unwrap();
    let mut w = vec![0.0; 12];
    for i in 0..3 {
        w[i * 3 + i] = 1.0;
    }
    let x = Tensor::new(vec![2, 3], vec![1., -2., 3., 0.25, 0.5, -9.]).unwrap();
    let z = forward(&spec, &ParamVector::new(w), &x).unwrap();
    assert_eq!(z.data(), x.data());
}

#[test]
fn hand_matrix_multiply_row_convention() {
    // W rows are output units: W x + b with W = [[1,2],[3,4]], b = [0.5,-0.5].
    let spec = ModelSpec::mlp(&[2, 2], Activation::Relu).unwrap();
    let w = ParamVector::new(vec![1.0, 2.0, 3.0, 4.0, 0.5, -0.5]);
    let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
    assert_eq!(forward(&spec, &w, &x).unwrap().data(), &[3.5, 6.5]);
}

#[test]
fn forward_rejects_mismatched_shapes() {
    let spec = ModelSpec::mlp(&[2, 2], Activation::Relu).unwrap();
    let x = Tensor::new(vec![1, 3], vec![1.0; 3]).unwrap();
    assert!(matches!(forward(&spec, &ParamVector::zeros(6), &x), Err(Error::Shape(_))));
    let x = Tensor::new(vec![1, 2], vec![1.0; 2]).unwrap();
    assert!(matches!(forward(&spec, &ParamVector::zeros(5), &x), Err(Error::Shape(_))));
}

#[test]
fn cross_entropy_reference_values() {
    let uniform = Tensor::new(vec![1, 10], vec![0.3; 10]).unwrap();
    assert!((cross_entropy(&uniform, &[4]).unwrap() - 10f64.ln()).abs() < 1e-12);

    let mut z = vec![0.0; 10];
    z[7] = 50.0;
    let saturated = Tensor::new(vec![1, 10], z).unwrap();
    assert!(cross_entropy(&saturated, &[7]).unwrap() < 1e-20);

    let e = std::f64::consts::E;
    let oracle = -(e.powi(3) / (e + e * e + e.powi(3))).ln();
    let z = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    let got = cross_entropy(&z, &[2]).unwrap();
    assert!((got - oracle).abs() < 1e-15);
    assert!((got - 0.40760596).abs() < 1e-8);
}

#[test]
fn cross_entropy_rejects_bad_label() {
    let z = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    assert!(matches!(cross_entropy(&z, &[3]), Err(Error::Label { label: 3, classes: 3 })));
}

#[test]
fn gradient_vanishes_at_symmetric_stationary_point() {
    // Softmax regression at w = 0 with the same input labelled both ways.
    let spec = ModelSpec::mlp(&[2, 2], Activation::Relu).unwrap();
    let x = Tensor::new(vec![2, 2], vec![0.7, -1.3, 0.7, -1.3]).unwrap();
    let (_, g) = backward(&spec, &ParamVector::zeros(6), &x, &[0, 1]).unwrap();
    assert!(crate::linalg::norm(&g) < 1e-10);
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for activation in [Activation::Relu, Activation::Tanh] {
        let spec = ModelSpec::mlp(&[2, 16, 3], activation).unwrap();
        for trial in 0..5 {
            let w = init_params(&spec, trial);
            let (x, y) = random_batch(&mut rng, 7, 2, 3);
            let (_, g) = backward(&spec, &w, &x, &y).unwrap();
            let fd = fd_gradient(&spec, &w, &x, &y, 1e-5);
            assert!(max_rel_err(&g, &fd) < 1e-4, "{activation:?} trial {trial}");
        }
    }
}

#[test]
fn conv_stem_gradient_matches_finite_differences() {
    let spec = ModelSpec {
        layer_dims: vec![2 * 5 * 5, 6, 3],
        activation: Activation::Tanh,
        conv_stem: Some(ConvStem { channels: 3, kernel: 3, stride: 2, input: (2, 5, 5) }),
    };
    spec.validate().unwrap();
    // conv: 3 x (2*3*3) + 3, dense 12 -> 6, dense 6 -> 3
    assert_eq!(spec.param_count(), 54 + 3 + 72 + 6 + 18 + 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = init_params(&spec, 4);
    let (x, y) = random_batch(&mut rng, 4, 50, 3);
    let (_, g) = backward(&spec, &w, &x, &y).unwrap();
    let fd = fd_gradient(&spec, &w, &x, &y, 1e-5);
    assert!(max_rel_err(&g, &fd) < 1e-4);
}

#[test]
fn duplicated_batch_leaves_loss_and_gradient_unchanged() {
    let spec = ModelSpec::mlp(&[4, 5, 3], Activation::Relu).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = init_params(&spec, 1);
    let (x, y) = random_batch(&mut rng, 6, 4, 3);
    let doubled: Vec<usize> = (0..6).chain(0..6).collect();
    let x2 = x.select_rows(&doubled).unwrap();
    let y2: Vec<usize> = doubled.iter().map(|&i| y[i]).collect();
    let (l1, g1) = backward(&spec, &w, &x, &y).unwrap();
    let (l2, g2) = backward(&spec, &w, &x2, &y2).unwrap();
    assert!((l1 - l2).abs() < 1e-14);
    for (a, b) in g1.iter().zip(g2.iter()) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn backward_is_bit_deterministic() {
    let spec = ModelSpec::mlp(&[4, 8, 3], Activation::Relu).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = init_params(&spec, 2);
    let (x, y) = random_batch(&mut rng, 9, 4, 3);
    let a = backward(&spec, &w, &x, &y).unwrap();
    let b = backward(&spec, &w, &x, &y).unwrap();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
}

#[test]
fn two_three_net_has_nine_parameters() {
    assert_eq!(ModelSpec::mlp(&[2, 3], Activation::Relu).unwrap().param_count(), 9);
}

/// (layer, is_bias, row, col) for every flat index of a 2-3-2 network.
const LAYOUT_2_3_2: [(usize, bool, usize, usize); 17] = [
    (0, false, 0, 0), (0, false, 0, 1), (0, false, 1, 0), (0, false, 1, 1), (0, false, 2, 0), (0, false, 2, 1),
    (0, true, 0, 0), (0, true, 1, 0), (0, true, 2, 0),
    (1, false, 0, 0), (1, false, 0, 1), (1, false, 0, 2), (1, false, 1, 0), (1, false, 1, 1), (1, false, 1, 2),
    (1, true, 0, 0), (1, true, 1, 0),
];

#[test]
fn flat_index_maps_to_exactly_one_layer_entry() {
    let spec = ModelSpec::mlp(&[2, 3, 2], Activation::Relu).unwrap();
    assert_eq!(spec.param_count(), LAYOUT_2_3_2.len());
    let base = unflatten(&spec, &ParamVector::zeros(17)).unwrap();
    for (k, &(layer, is_bias, row, col)) in LAYOUT_2_3_2.iter().enumerate() {
        let mut w = ParamVector::zeros(17);
        w[k] = 1.0;
        let layers = unflatten(&spec, &w).unwrap();
        let mut changed = Vec::new();
        for (li, (now, before)) in layers.iter().zip(&base).enumerate() {
            for (i, (a, b)) in now.weight.data().iter().zip(before.weight.data()).enumerate() {
                if a != b {
                    let cols = now.weight.shape()[1];
                    changed.push((li, false, i / cols, i % cols));
                }
            }
            for (i, (a, b)) in now.bias.data().iter().zip(before.bias.data()).enumerate() {
                if a != b {
                    changed.push((li, true, i, 0));
                }
            }
        }
        assert_eq!(changed, vec![(layer, is_bias, row, col)], "flat index {k}");
    }
}

#[test]
fn unflatten_rejects_wrong_length() {
    let spec = ModelSpec::mlp(&[2, 3], Activation::Relu).unwrap();
    assert!(matches!(unflatten(&spec, &ParamVector::zeros(8)), Err(Error::Shape(_))));
}

fn any_spec() -> impl Strategy<Value = ModelSpec> {
    let mlp = (prop::collection::vec(1usize..6, 2..5), any::<bool>()).prop_map(|(dims, tanh)| ModelSpec {
        layer_dims: dims,
        activation: if tanh { Activation::Tanh } else { Activation::Relu },
        conv_stem: None,
    });
    let conv = (1usize..3, 3usize..6, 1usize..3, 1usize..3, 1usize..4, 1usize..4).prop_map(
        |(c, hw, k, stride, ch, classes)| ModelSpec {
            layer_dims: vec![c * hw * hw, classes],
            activation: Activation::Relu,
            conv_stem: Some(ConvStem { channels: ch, kernel: k, stride, input: (c, hw, hw) }),
        },
    );
    prop_oneof![mlp, conv]
}

proptest! {
    #[test]
    fn flatten_unflatten_is_a_bijection(spec in any_spec(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = ParamVector::new((0..spec.param_count()).map(|_| rng.gen_range(-3.0..3.0)).collect());
        let layers = unflatten(&spec, &w).unwrap();
        prop_assert_eq!(flatten(&spec, &layers).unwrap(), w);
    }

    #[test]
    fn cross_entropy_is_non_negative(z in prop::collection::vec(-500.0f64..500.0, 4), label in 0usize..4) {
        let logits = Tensor::new(vec![1, 4], z).unwrap();
        prop_assert!(cross_entropy(&logits, &[label]).unwrap() >= 0.0);
    }
}
