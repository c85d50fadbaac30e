//! Minibatch training loops shared by the regressor, the latent classifier
//! and the NN baseline.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::batches;
use crate::matrix::Matrix;
use crate::nn::{binary_cross_entropy, AdamConfig, AdamState, DenseNet, GradientSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub epochs: usize,
    pub step_size: f64,
    /// `None` trains full batch.
    pub batch_size: Option<usize>,
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid(format!(
                "step size {} must be positive",
                self.step_size
            )));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Per-sample loss: returns the loss and `dL/d(output)` for row `i`.
fn fit<F>(
    net: &mut DenseNet,
    inputs: &Matrix,
    opts: &FitOptions,
    rng: &mut ChaCha8Rng,
    stage: &'static str,
    mut sample_loss: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, &[f64]) -> (f64, Vec<f64>),
{
    opts.validate()?;
    if inputs.cols() != net.input_dim() {
        return Err(Error::invalid(format!(
            "inputs have {} columns, network expects {}",
            inputs.cols(),
            net.input_dim()
        )));
    }
    if inputs.rows() == 0 {
        return Err(Error::invalid("no training samples"));
    }
    let n = inputs.rows();
    let mut opt = AdamState::for_net(AdamConfig::with_step_size(opts.step_size), net)?;
    let mut trace = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let mut epoch_loss = 0.0;
        for batch in batches(n, opts.batch_size, rng) {
            let mut grads = GradientSet::zeros_like(net);
            let scale = 1.0 / batch.len() as f64;
            for &i in &batch {
                let cache = net.forward(inputs.row(i))?;
                let (loss, mut upstream) = sample_loss(i, cache.output());
                epoch_loss += loss;
                upstream.iter_mut().for_each(|g| *g *= scale);
                net.accumulate_gradients(&cache, &upstream, &mut grads)?;
            }
            opt.step_net(net, &grads).map_err(|e| match e {
                Error::Diverged { .. } => Error::Diverged { stage, epoch },
                other => other,
            })?;
        }
        let mean = epoch_loss / n as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { stage, epoch });
        }
        trace.push(mean);
    }
    Ok(trace)
}

/// Minimizes mean squared error (over components and samples).
pub fn fit_regression(
    net: &mut DenseNet,
    inputs: &Matrix,
    targets: &Matrix,
    opts: &FitOptions,
    rng: &mut ChaCha8Rng,
    stage: &'static str,
) -> Result<Vec<f64>> {
    if targets.rows() != inputs.rows() {
        return Err(Error::invalid(format!(
            "{} inputs for {} targets",
            inputs.rows(),
            targets.rows()
        )));
    }
    if targets.cols() != net.output_dim() {
        return Err(Error::invalid(format!(
            "targets have {} columns, network outputs {}",
            targets.cols(),
            net.output_dim()
        )));
    }
    let d = targets.cols() as f64;
    fit(net, inputs, opts, rng, stage, |i, out| {
        let mut loss = 0.0;
        let grad = out
            .iter()
            .zip(targets.row(i))
            .map(|(p, t)| {
                let e = p - t;
                loss += e * e;
                2.0 * e / d
            })
            .collect();
        (loss / d, grad)
    })
}

/// Minimizes mean binary cross-entropy of a single sigmoid output.
pub fn fit_binary(
    net: &mut DenseNet,
    inputs: &Matrix,
    labels: &[u8],
    opts: &FitOptions,
    rng: &mut ChaCha8Rng,
    stage: &'static str,
) -> Result<Vec<f64>> {
    if labels.len() != inputs.rows() {
        return Err(Error::invalid(format!(
            "{} inputs for {} labels",
            inputs.rows(),
            labels.len()
        )));
    }
    if net.output_dim() != 1 {
        return Err(Error::invalid("binary classifier must have one output"));
    }
    fit(net, inputs, opts, rng, stage, |i, out| {
        let (loss, dp) = binary_cross_entropy(out[0], labels[i]);
        (loss, vec![dp])
    })
}

/// Mean squared error of `net` over all rows (mean over components).
pub fn regression_mse(net: &DenseNet, inputs: &Matrix, targets: &Matrix) -> Result<f64> {
    let mut total = 0.0;
    for (x, t) in inputs.row_iter().zip(targets.row_iter()) {
        let out = net.predict(x)?;
        total += out
            .iter()
            .zip(t)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / t.len() as f64;
    }
    Ok(total / inputs.rows() as f64)
}
