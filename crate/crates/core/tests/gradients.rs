mod common;

use common::{check_joint_gradient, check_net_gradients};
use mvlatent::latent::ReconstructionBank;
use mvlatent::nn::{binary_cross_entropy, mse_loss, Activation, DenseNet};
use mvlatent::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ACTS: [Activation; 3] = [Activation::Linear, Activation::Relu, Activation::Sigmoid];

fn net_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<Activation>, u64)> {
    prop::collection::vec(1usize..=8, 2..=5).prop_flat_map(|dims| {
        let n = dims.len() - 1;
        (
            Just(dims),
            prop::collection::vec(prop::sample::select(ACTS.to_vec()), n),
            any::<u64>(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dense_net_gradients_match_central_differences((dims, acts, seed) in net_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = DenseNet::new(&dims, &acts, &mut rng).unwrap();
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
        let up: Vec<f64> = (0..*dims.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let checked = check_net_gradients(&net, &x, &up);
        prop_assert!(checked.is_ok(), "{:?}", checked);
        prop_assume!(checked.unwrap());
    }

    #[test]
    fn joint_code_gradient_matches_central_differences(
        seed in any::<u64>(),
        lambda in prop::sample::select(vec![0.0, 0.5, 3.0, 100.0]),
        d in 1usize..=4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 6;
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let rows = |dim: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
        };
        let data = common::dataset_from(&[("a", rows(3, &mut rng)), ("b", rows(2, &mut rng))], labels);
        let bank = ReconstructionBank::new(d, &[3, 2], &mut rng).unwrap();
        let codes = Matrix::from_rows(&rows(d, &mut rng)).unwrap();
        let checked = check_joint_gradient(&bank, &codes, &data, lambda, 1.0);
        prop_assert!(checked.is_ok(), "{:?}", checked);
        prop_assume!(checked.unwrap());
    }

    #[test]
    fn losses_are_non_negative_and_mse_symmetric(
        a in prop::collection::vec(-10.0f64..10.0, 1..6),
        p in 0.0f64..=1.0,
        y in 0u8..=1,
    ) {
        let b: Vec<f64> = a.iter().map(|v| v * 0.5 - 1.0).collect();
        let (ab, _) = mse_loss(&a, &b).unwrap();
        let (ba, _) = mse_loss(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, ba);
        prop_assert!(binary_cross_entropy(p, y).0 >= 0.0);
    }

    #[test]
    fn forward_is_pure((dims, acts, seed) in net_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = DenseNet::new(&dims, &acts, &mut rng).unwrap();
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
        let first = net.predict(&x).unwrap();
        prop_assert_eq!(first.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            net.predict(&x).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn half_squared_error_single_linear_layer() {
    // L = (y - t)^2 / 2 with y = w x, w = 1, x = 2, t = 0: dL/dw = y x = 4, dL/dx = y w = 2.
    let layer = mvlatent::nn::Layer::new(1, 1, vec![1.0], vec![0.0], Activation::Linear).unwrap();
    let net = DenseNet::from_layers(vec![layer]).unwrap();
    let cache = net.forward(&[2.0]).unwrap();
    let y = cache.output()[0];
    let g = net.backward(&cache, &[y - 0.0]).unwrap();
    assert_eq!(g.weights[0], vec![4.0]);
    assert_eq!(g.input.unwrap(), vec![2.0]);
    assert!(check_net_gradients(&net, &[2.0], &[2.0]).unwrap());
}

#[test]
fn three_four_two_net_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for _ in 0..10 {
        let net = DenseNet::new(
            &[3, 4, 2],
            &[Activation::Sigmoid, Activation::Linear],
            &mut rng,
        )
        .unwrap();
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let up: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert!(check_net_gradients(&net, &x, &up).unwrap());
        checked += 1;
    }
    assert_eq!(checked, 10);
}
