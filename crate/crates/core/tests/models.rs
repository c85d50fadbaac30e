mod common;

use common::{benchmark, block_means, easy_data, forward_oracle, smoothed_non_increasing};
use mvlatent::data::{split, PreprocessMode};
use mvlatent::eval::accuracy;
use mvlatent::latent::{train_representation, LatentCodes, RepresentationConfig};
use mvlatent::nn::{Activation, DenseNet};
use mvlatent::pipeline::{
    label_for, train_classifier, train_pipeline, train_pipeline_with_traces, ClassifierConfig,
    PipelineConfig, DECISION_THRESHOLD,
};
use mvlatent::regressor::{train_regressor, LatentRegressor, RegressorConfig};
use mvlatent::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn column_mean_var(m: &Matrix, j: usize) -> (f64, f64) {
    let col = m.column(j);
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    (
        mean,
        col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n,
    )
}

#[test]
fn regressor_recovers_a_linear_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let a: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..6).map(|_| rng.random_range(-0.5..0.5)).collect())
        .collect();
    let x: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let h: Vec<Vec<f64>> = x
        .iter()
        .map(|xi| {
            a.iter()
                .map(|row| row.iter().zip(xi).map(|(p, q)| p * q).sum())
                .collect()
        })
        .collect();
    let features = Matrix::from_rows(&x).unwrap();
    let codes = LatentCodes::new(Matrix::from_rows(&h).unwrap()).unwrap();
    let cfg = RegressorConfig {
        epochs: 2000,
        ..Default::default()
    };
    let (reg, trace) = train_regressor(&features, &codes, &cfg, 0).unwrap();
    let mse = reg.mse(&features, &codes).unwrap();
    assert!(mse < 1e-3, "mse {mse}");
    assert_eq!(trace.len(), 2000);

    // Independent MSE: mean over rows and components of the oracle forward.
    let mut sum = 0.0;
    for (xi, hi) in x.iter().zip(&h) {
        let out = forward_oracle(reg.net(), xi).0;
        sum += out
            .iter()
            .zip(hi)
            .map(|(o, t)| (o - t).powi(2))
            .sum::<f64>();
    }
    let oracle = sum / (200.0 * 4.0);
    assert!((oracle - mse).abs() <= 1e-12 * oracle.max(1e-12));
}

#[test]
fn regressor_fits_all_zero_codes() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let x: Vec<Vec<f64>> = (0..50)
        .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let features = Matrix::from_rows(&x).unwrap();
    let codes = LatentCodes::new(Matrix::zeros(50, 3)).unwrap();
    let cfg = RegressorConfig {
        epochs: 2000,
        ..Default::default()
    };
    let (reg, _) = train_regressor(&features, &codes, &cfg, 1).unwrap();
    let mse = reg.mse(&features, &codes).unwrap();
    assert!(mse < 1e-6, "mse {mse}");
}

#[test]
fn regressor_beats_the_per_component_mean_on_learned_codes() {
    let raw = common::easy_data(20, 33);
    let data = mvlatent::data::PreprocessStats::fit(&raw, PreprocessMode::Standardize)
        .unwrap()
        .apply(&raw)
        .unwrap();
    let rep_cfg = RepresentationConfig {
        latent_dim: 4,
        epochs: 200,
        ..Default::default()
    };
    let rep = train_representation(&data, &rep_cfg, 2).unwrap();
    let features = data.concatenated_features();
    let (reg, _) = train_regressor(&features, &rep.codes, &RegressorConfig::default(), 3).unwrap();
    let fitted = reg.infer_all(&features).unwrap();
    let target = rep.codes.matrix();
    for k in 0..4 {
        let (_, var) = column_mean_var(target, k);
        let mse_k = (0..target.rows())
            .map(|i| (fitted.get(i, k) - target.get(i, k)).powi(2))
            .sum::<f64>()
            / target.rows() as f64;
        assert!(mse_k <= var, "component {k}: mse {mse_k} > variance {var}");
    }
}

fn blobs(separation: f64, seed: u64) -> (Matrix, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for c in 0..2u8 {
        let shift = if c == 1 {
            separation / 2.0
        } else {
            -separation / 2.0
        };
        for _ in 0..30 {
            rows.push(vec![
                shift + noise.sample(&mut rng),
                shift + noise.sample(&mut rng),
            ]);
            labels.push(c);
        }
    }
    (Matrix::from_rows(&rows).unwrap(), labels)
}

fn training_accuracy(x: &Matrix, y: &[u8], seed: u64) -> f64 {
    let cfg = ClassifierConfig {
        epochs: 500,
        ..Default::default()
    };
    let (clf, _) = train_classifier(x, y, &cfg, seed).unwrap();
    let hits = x
        .row_iter()
        .zip(y)
        .filter(|(r, &t)| clf.predict(r).unwrap() == t)
        .count();
    hits as f64 / y.len() as f64
}

#[test]
fn classifier_separates_distant_blobs_under_either_labeling() {
    let (x, y) = blobs(10.0, 34);
    assert_eq!(training_accuracy(&x, &y, 4), 1.0);
    let flipped: Vec<u8> = y.iter().map(|v| 1 - v).collect();
    assert_eq!(training_accuracy(&x, &flipped, 4), 1.0);
}

#[test]
fn threshold_is_inclusive() {
    assert_eq!(DECISION_THRESHOLD, 0.5);
    assert_eq!(label_for(0.5), 1);
    assert_eq!(label_for(0.5 - 1e-12), 0);
    assert_eq!(label_for(1.0), 1);
    assert_eq!(label_for(0.0), 0);
}

#[test]
fn pipeline_is_confident_far_inside_class_one() {
    let data = common::easy_data(20, 35);
    let pipe = train_pipeline(&data, &PipelineConfig::default()).unwrap();
    let preds = pipe.predict_dataset(&data).unwrap();
    let hits = preds
        .iter()
        .zip(data.labels())
        .filter(|(p, &t)| p.label == t)
        .count();
    assert_eq!(hits, data.len());

    // Push one class-1 subject further away from the class-0 mean.
    let views: Vec<Vec<f64>> = (0..data.n_views())
        .map(|v| {
            let f = &data.view(v).features;
            let mean = |c: u8| -> Vec<f64> {
                let rows: Vec<&[f64]> = f
                    .row_iter()
                    .zip(data.labels())
                    .filter(|(_, &l)| l == c)
                    .map(|(r, _)| r)
                    .collect();
                (0..f.cols())
                    .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
                    .collect()
            };
            let (m0, m1) = (mean(0), mean(1));
            m1.iter().zip(&m0).map(|(a, b)| a + 0.5 * (a - b)).collect()
        })
        .collect();
    let refs: Vec<&[f64]> = views.iter().map(Vec::as_slice).collect();
    let (p, h) = pipe.predict(&refs).unwrap();
    assert!(p.probability > 0.9, "probability {}", p.probability);
    assert_eq!(p.label, 1);
    assert_eq!(h.len(), pipe.latent_dim());
}

#[test]
fn pipeline_rejects_single_class_and_wrong_shapes() {
    let data = common::dataset_from(
        &[("a", vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![0.0, 0.5]])],
        vec![0, 0, 0],
    );
    assert!(train_pipeline(&data, &PipelineConfig::default()).is_err());

    let data = common::easy_data(5, 36);
    let cfg = PipelineConfig {
        representation: RepresentationConfig {
            epochs: 5,
            ..Default::default()
        },
        ..Default::default()
    };
    let pipe = train_pipeline(&data, &cfg).unwrap();
    assert!(pipe.predict(&[&[0.0; 4]]).is_err());
    assert!(pipe.predict(&[&[0.0; 4], &[0.0; 2]]).is_err());
    assert!(pipe.predict(&[&[0.0; 4], &[0.0; 3]]).is_ok());
}

#[test]
fn pipeline_training_is_deterministic() {
    let data = common::easy_data(6, 37);
    let cfg = PipelineConfig {
        representation: RepresentationConfig {
            epochs: 20,
            ..Default::default()
        },
        seed: 8,
        ..Default::default()
    };
    assert_eq!(
        train_pipeline(&data, &cfg).unwrap(),
        train_pipeline(&data, &cfg).unwrap()
    );
}

#[test]
fn structured_loss_helps_on_the_weak_views_benchmark() {
    // Same seeds and split as the end-to-end benchmark; one seed ties, so
    // the comparison is on the mean.
    let mut mean = [0.0; 2];
    for seed in 0..3 {
        let (train, test) = split(&benchmark(seed), 0.7, seed).unwrap();
        for (slot, lambda) in [0.0, 100.0].into_iter().enumerate() {
            let mut cfg = PipelineConfig {
                seed,
                ..PipelineConfig::default()
            };
            cfg.representation.lambda = lambda;
            let pipe = train_pipeline(&train, &cfg).unwrap();
            let labels: Vec<u8> = pipe
                .predict_dataset(&test)
                .unwrap()
                .iter()
                .map(|p| p.label)
                .collect();
            mean[slot] += accuracy(&labels, test.labels()).unwrap() / 3.0;
        }
    }
    assert!(
        mean[0] < mean[1],
        "lambda 0: {:.4}, lambda 100: {:.4}",
        mean[0],
        mean[1]
    );
}

const ACTIVATIONS: [Activation; 3] = [Activation::Linear, Activation::Relu, Activation::Sigmoid];

proptest! {
    #[test]
    fn regressor_layout_is_fixed(input in 1usize..12, d in 1usize..6, hidden in 1usize..10, seed in any::<u64>()) {
        let reg = LatentRegressor::new(input, d, hidden, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(reg.net().layer_dims(), vec![input, hidden, hidden, hidden, d]);
        prop_assert_eq!(
            reg.net().activations(),
            vec![Activation::Sigmoid, Activation::Sigmoid, Activation::Linear, Activation::Linear]
        );
    }

    #[test]
    fn regressor_accepts_only_its_layout(tags in prop::collection::vec(0usize..3, 1..6), seed in any::<u64>()) {
        let acts: Vec<Activation> = tags.iter().map(|t| ACTIVATIONS[*t]).collect();
        let dims = vec![3; acts.len() + 1];
        let net = DenseNet::new(&dims, &acts, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let expected = acts == [Activation::Sigmoid, Activation::Sigmoid, Activation::Linear, Activation::Linear];
        prop_assert_eq!(LatentRegressor::from_net(net).is_ok(), expected);
    }
}

#[test]
fn regressed_training_codes_match_the_recorded_mse() {
    let train = easy_data(20, 4);
    let cfg = PipelineConfig {
        seed: 4,
        ..PipelineConfig::default()
    };
    let (pipe, traces) = train_pipeline_with_traces(&train, &cfg).unwrap();
    let final_mse = *traces.regressor.last().unwrap();
    let regressed = pipe.embed_dataset(&train).unwrap();
    let codes = pipe.codes.matrix();
    let d = codes.cols() as f64;
    // Per-component mean, the same normalization as the recorded MSE.
    let err: f64 = regressed
        .row_iter()
        .zip(codes.row_iter())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / d)
        .sum::<f64>()
        / train.len() as f64;
    assert!(
        err <= 2.0 * final_mse,
        "error {err} vs recorded {final_mse}"
    );

    // Minibatch noise makes the plateau jitter by about a percent.
    assert!(
        smoothed_non_increasing(&traces.regressor, 10, 0.05),
        "{:?}",
        block_means(&traces.regressor, 10)
    );
}

#[test]
fn full_batch_regression_trace_is_non_increasing() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Matrix::from_rows(
        &(0..60)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect::<Vec<Vec<f64>>>(),
    )
    .unwrap();
    let h: Vec<Vec<f64>> = x
        .row_iter()
        .map(|r| vec![r[0] - r[1], r[2] * r[3], r[4].sin()])
        .collect();
    let codes = LatentCodes::new(Matrix::from_rows(&h).unwrap()).unwrap();
    let cfg = RegressorConfig {
        hidden: 16,
        epochs: 400,
        batch_size: None,
        ..Default::default()
    };
    let (_, trace) = train_regressor(&x, &codes, &cfg, 8).unwrap();
    assert!(
        smoothed_non_increasing(&trace, 10, 0.0),
        "{:?}",
        block_means(&trace, 10)
    );
}
