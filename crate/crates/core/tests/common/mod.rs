//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use mvlatent::data::{table2_schema, MultiViewDataset, View, ViewSchema};
use mvlatent::nn::{Activation, DenseNet};
use mvlatent::synth::{synth_generate, SynthSpec};
use mvlatent::Matrix;

pub const FD_STEP: f64 = 1e-5;

/// Analytic and numeric values agree within `rel` relative or `abs`
/// absolute error.
pub fn close(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs || diff <= rel * analytic.abs().max(numeric.abs())
}

pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Linear => z,
        Activation::Relu => z.max(0.0),
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
    }
}

/// Plain forward pass from the layer parameters; also returns every
/// pre-activation so callers can stay away from relu kinks.
pub fn forward_oracle(net: &DenseNet, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut a = x.to_vec();
    let mut pre = Vec::new();
    for layer in net.layers() {
        let (n_in, n_out) = (layer.in_dim(), layer.out_dim());
        let w = layer.weights();
        let mut next = Vec::with_capacity(n_out);
        for o in 0..n_out {
            let mut z = layer.biases()[o];
            for i in 0..n_in {
                z += w[o * n_in + i] * a[i];
            }
            if layer.activation() == Activation::Relu {
                pre.push(z);
            }
            next.push(act(layer.activation(), z));
        }
        a = next;
    }
    (a, pre)
}

/// Mean and population standard deviation by two separate passes.
pub fn two_pass_mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mut sum = 0.0;
    for v in values {
        sum += v;
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for v in values {
        ss += (v - mean) * (v - mean);
    }
    (mean, (ss / n).sqrt())
}

/// Hinge of one code written as explicit means of dot products over class
/// members.
pub fn brute_structured(codes: &Matrix, labels: &[u8], h: &[f64], y: u8, margin: f64) -> f64 {
    let mean_dot = |class: u8| {
        let mut total = 0.0;
        let mut count = 0usize;
        for (row, &l) in codes.row_iter().zip(labels) {
            if l == class {
                total += row.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
                count += 1;
            }
        }
        total / count as f64
    };
    (margin + mean_dot(1 - y) - mean_dot(y)).max(0.0)
}

/// Majority vote of the `k` nearest training points by exhaustive distance
/// computation; equidistant points by lower index, even split to label 0.
pub fn knn_brute(points: &Matrix, labels: &[u8], k: usize, x: &[f64]) -> u8 {
    let mut all: Vec<(f64, usize)> = Vec::new();
    for i in 0..points.rows() {
        let d: f64 = x
            .iter()
            .enumerate()
            .map(|(j, xj)| (points.get(i, j) - xj).powi(2))
            .sum();
        all.push((d, i));
    }
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = k.min(all.len());
    let ones = all[..k].iter().filter(|(_, i)| labels[*i] == 1).count();
    u8::from(ones * 2 > k)
}

/// Normalized log posteriors from the Gaussian density itself.
pub fn gnb_density_log_posteriors(
    means: &[Vec<f64>; 2],
    vars: &[Vec<f64>; 2],
    priors: [f64; 2],
    x: &[f64],
) -> [f64; 2] {
    let joint: Vec<f64> = (0..2)
        .map(|c| {
            let mut p = priors[c];
            for j in 0..x.len() {
                let v = vars[c][j];
                p *= (-(x[j] - means[c][j]).powi(2) / (2.0 * v)).exp()
                    / (2.0 * std::f64::consts::PI * v).sqrt();
            }
            p
        })
        .collect();
    let z = joint[0] + joint[1];
    [(joint[0] / z).ln(), (joint[1] / z).ln()]
}

/// The weak-views benchmark: 300 subjects per class in the seven-view
/// preset, class separation 6, isotropic noise 3 in every view, four
/// class-independent factors shared across views, and raw feature scales
/// spread over three decades.
pub fn benchmark_spec(seed: u64) -> SynthSpec {
    let mut spec = SynthSpec::new(300, table2_schema(), 6.0, 3.0, seed);
    spec.shared_factors = 4;
    spec.shared_scale = 4.0;
    spec.scale_decades = 3.0;
    spec
}

pub fn benchmark(seed: u64) -> MultiViewDataset {
    synth_generate(&benchmark_spec(seed)).unwrap()
}

/// Small two-view separable data for quick pipeline runs.
pub fn easy_data(n_per_class: usize, seed: u64) -> MultiViewDataset {
    let schema = vec![ViewSchema::new("a", 4), ViewSchema::new("b", 3)];
    synth_generate(&SynthSpec::new(n_per_class, schema, 10.0, 0.1, seed)).unwrap()
}

pub fn dataset_from(views: &[(&str, Vec<Vec<f64>>)], labels: Vec<u8>) -> MultiViewDataset {
    let ids = (0..labels.len()).map(|i| format!("s{i}")).collect();
    let views = views
        .iter()
        .map(|(name, rows)| View {
            schema: ViewSchema::new(*name, rows[0].len()),
            features: Matrix::from_rows(rows).unwrap(),
        })
        .collect();
    MultiViewDataset::new(ids, views, labels).unwrap()
}

/// Non-overlapping block means of `trace` over windows of `w` epochs.
pub fn block_means(trace: &[f64], w: usize) -> Vec<f64> {
    trace
        .chunks_exact(w)
        .map(|c| c.iter().sum::<f64>() / w as f64)
        .collect()
}

/// True when consecutive block means never rise by more than `slack`
/// (relative).
pub fn smoothed_non_increasing(trace: &[f64], w: usize, slack: f64) -> bool {
    block_means(trace, w)
        .windows(2)
        .all(|p| p[1] <= p[0] * (1.0 + slack) + 1e-12)
}

/// Largest |pre-activation| margin needed to keep central differences off
/// relu kinks.
pub const KINK_GUARD: f64 = 1e-3;

/// Compares every weight, bias and input gradient of `L = upstream . net(x)`
/// with central differences of the forward oracle. `Ok(false)` means the
/// point sits too close to a relu kink to be checked.
pub fn check_net_gradients(net: &DenseNet, x: &[f64], upstream: &[f64]) -> Result<bool, String> {
    let (_, pre) = forward_oracle(net, x);
    if pre.iter().any(|z| z.abs() < KINK_GUARD) {
        return Ok(false);
    }
    let loss = |n: &DenseNet, x: &[f64]| -> f64 {
        forward_oracle(n, x)
            .0
            .iter()
            .zip(upstream)
            .map(|(o, u)| o * u)
            .sum()
    };
    let cache = net.forward(x).map_err(|e| e.to_string())?;
    let grads = net.backward(&cache, upstream).map_err(|e| e.to_string())?;
    let check = |what: String, analytic: f64, numeric: f64| {
        if close(analytic, numeric, 1e-4, 1e-6) {
            Ok(())
        } else {
            Err(format!("{what}: analytic {analytic} vs numeric {numeric}"))
        }
    };
    for l in 0..net.layers().len() {
        for k in 0..net.layers()[l].weights().len() {
            let numeric = central_difference(
                |v| {
                    let mut m = net.clone();
                    m.layer_params_mut(l).0[k] = v;
                    loss(&m, x)
                },
                net.layers()[l].weights()[k],
            );
            check(
                format!("layer {l} weight {k}"),
                grads.weights[l][k],
                numeric,
            )?;
        }
        for k in 0..net.layers()[l].biases().len() {
            let numeric = central_difference(
                |v| {
                    let mut m = net.clone();
                    m.layer_params_mut(l).1[k] = v;
                    loss(&m, x)
                },
                net.layers()[l].biases()[k],
            );
            check(format!("layer {l} bias {k}"), grads.biases[l][k], numeric)?;
        }
    }
    let input = grads
        .input
        .as_ref()
        .ok_or("backward left the input gradient empty")?;
    for i in 0..x.len() {
        let numeric = central_difference(
            |v| {
                let mut xp = x.to_vec();
                xp[i] = v;
                loss(net, &xp)
            },
            x[i],
        );
        check(format!("input {i}"), input[i], numeric)?;
    }
    Ok(true)
}

/// Joint objective `mean(l_r) + lambda * mean(l_c)` over all subjects,
/// evaluated from scratch: per-view component-mean squared error through
/// the forward oracle and the brute-force hinge.
pub fn joint_oracle(
    nets: &[DenseNet],
    codes: &Matrix,
    data: &MultiViewDataset,
    lambda: f64,
    margin: f64,
) -> f64 {
    let n = data.len();
    let mut total = 0.0;
    for i in 0..n {
        let h = codes.row(i);
        let mut recon = 0.0;
        for (v, net) in nets.iter().enumerate() {
            let x = data.view(v).features.row(i);
            let out = forward_oracle(net, h).0;
            recon += out
                .iter()
                .zip(x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / x.len() as f64;
        }
        total +=
            recon + lambda * brute_structured(codes, data.labels(), h, data.labels()[i], margin);
    }
    total / n as f64
}

/// Hinge arguments `margin + p_other.h - p_own.h` of every subject.
pub fn hinge_arguments(codes: &Matrix, labels: &[u8], margin: f64) -> Vec<f64> {
    codes
        .row_iter()
        .zip(labels)
        .map(|(h, &y)| {
            let mean_dot = |class: u8| {
                let rows: Vec<&[f64]> = codes
                    .row_iter()
                    .zip(labels)
                    .filter(|(_, l)| **l == class)
                    .map(|(r, _)| r)
                    .collect();
                rows.iter()
                    .map(|r| r.iter().zip(h).map(|(a, b)| a * b).sum::<f64>())
                    .sum::<f64>()
                    / rows.len() as f64
            };
            margin + mean_dot(1 - y) - mean_dot(y)
        })
        .collect()
}

/// Checks the code gradient of the joint objective (full batch, prototypes
/// moving with the codes) against central differences of [`joint_oracle`].
/// `Ok(false)` means a hinge or relu kink is too close to check.
pub fn check_joint_gradient(
    bank: &mvlatent::latent::ReconstructionBank,
    codes: &Matrix,
    data: &MultiViewDataset,
    lambda: f64,
    margin: f64,
) -> Result<bool, String> {
    use mvlatent::latent::{joint_objective, LatentCodes, ReconReduction, StructuredLossConfig};
    if hinge_arguments(codes, data.labels(), margin)
        .iter()
        .any(|a| a.abs() < KINK_GUARD)
    {
        return Ok(false);
    }
    for h in codes.row_iter() {
        if bank
            .nets()
            .iter()
            .any(|n| forward_oracle(n, h).1.iter().any(|z| z.abs() < KINK_GUARD))
        {
            return Ok(false);
        }
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let eval = joint_objective(
        bank,
        &LatentCodes::new(codes.clone()).unwrap(),
        data,
        &all,
        lambda,
        &StructuredLossConfig { margin },
        ReconReduction::ComponentMean,
        false,
    )
    .map_err(|e| e.to_string())?;
    let value = joint_oracle(bank.nets(), codes, data, lambda, margin);
    if !close(eval.total, value, 1e-12, 1e-12) {
        return Err(format!("objective {} vs oracle {value}", eval.total));
    }
    for i in 0..codes.rows() {
        for k in 0..codes.cols() {
            let numeric = central_difference(
                |v| {
                    let mut c = codes.clone();
                    c.set(i, k, v);
                    joint_oracle(bank.nets(), &c, data, lambda, margin)
                },
                codes.get(i, k),
            );
            let analytic = eval.code_grad.get(i, k);
            if !close(analytic, numeric, 1e-4, 1e-6) {
                return Err(format!(
                    "code ({i},{k}): analytic {analytic} vs numeric {numeric}"
                ));
            }
        }
    }
    Ok(true)
}
