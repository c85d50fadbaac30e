//! Comparison classifiers that work on any single feature matrix: original
//! features, concatenated views, or regressed latent codes.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, squared_distance, Matrix};
use crate::nn::{sigmoid, Activation, AdamConfig, AdamState, DenseNet};
use crate::training::{fit_binary, FitOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    SvmLinear,
    LogisticRegression,
    GaussianNb,
    Knn,
    NeuralNet,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::SvmLinear,
        BaselineKind::LogisticRegression,
        BaselineKind::GaussianNb,
        BaselineKind::Knn,
        BaselineKind::NeuralNet,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            BaselineKind::SvmLinear => "SVM",
            BaselineKind::LogisticRegression => "LR",
            BaselineKind::GaussianNb => "GNB",
            BaselineKind::Knn => "KNN",
            BaselineKind::NeuralNet => "NN",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "svm" | "svm_linear" => Ok(BaselineKind::SvmLinear),
            "lr" | "logistic_regression" => Ok(BaselineKind::LogisticRegression),
            "gnb" | "gaussian_nb" => Ok(BaselineKind::GaussianNb),
            "knn" => Ok(BaselineKind::Knn),
            "nn" | "neural_net" => Ok(BaselineKind::NeuralNet),
            other => Err(Error::invalid(format!("unknown baseline '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineParams {
    /// L2 penalty of the linear SVM.
    pub svm_l2: f64,
    /// L2 penalty of logistic regression.
    pub lr_l2: f64,
    /// Full-batch epochs and initial step size for the two linear models.
    pub linear_epochs: usize,
    pub linear_step_size: f64,
    /// Added to every variance, as a multiple of the largest feature variance.
    pub gnb_var_smoothing: f64,
    pub knn_k: usize,
    pub nn_hidden: usize,
    pub nn_epochs: usize,
    pub nn_step_size: f64,
    pub nn_batch_size: Option<usize>,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            svm_l2: 1e-3,
            lr_l2: 1e-3,
            linear_epochs: 1000,
            linear_step_size: 0.05,
            gnb_var_smoothing: 1e-9,
            knn_k: 5,
            nn_hidden: 64,
            nn_epochs: 200,
            nn_step_size: 1e-3,
            nn_batch_size: Some(32),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNb {
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
    pub priors: [f64; 2],
}

impl GaussianNb {
    /// `log p(y) + sum_j log N(x_j; mean_yj, var_yj)` for both classes.
    pub fn joint_log_likelihood(&self, x: &[f64]) -> [f64; 2] {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        std::array::from_fn(|c| {
            let ll: f64 = x
                .iter()
                .zip(&self.means[c])
                .zip(&self.variances[c])
                .map(|((xi, m), v)| -0.5 * (ln_2pi + v.ln() + (xi - m) * (xi - m) / v))
                .sum();
            self.priors[c].ln() + ll
        })
    }

    /// Normalized log posteriors `log p(y | x)`.
    pub fn log_posteriors(&self, x: &[f64]) -> [f64; 2] {
        let jll = self.joint_log_likelihood(x);
        let top = jll[0].max(jll[1]);
        let lse = top + ((jll[0] - top).exp() + (jll[1] - top).exp()).ln();
        [jll[0] - lse, jll[1] - lse]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Knn {
    pub points: Matrix,
    pub labels: Vec<u8>,
    pub k: usize,
}

impl Knn {
    /// Indices of the `k` nearest training points; equal distances are
    /// ordered by index.
    pub fn neighbors(&self, x: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self
            .points
            .row_iter()
            .enumerate()
            .map(|(i, p)| (squared_distance(p, x), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.into_iter().take(self.k).map(|(_, i)| i).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineModel {
    SvmLinear(LinearModel),
    LogisticRegression(LinearModel),
    GaussianNb(GaussianNb),
    Knn(Knn),
    NeuralNet(DenseNet),
}

impl BaselineModel {
    pub fn kind(&self) -> BaselineKind {
        match self {
            BaselineModel::SvmLinear(_) => BaselineKind::SvmLinear,
            BaselineModel::LogisticRegression(_) => BaselineKind::LogisticRegression,
            BaselineModel::GaussianNb(_) => BaselineKind::GaussianNb,
            BaselineModel::Knn(_) => BaselineKind::Knn,
            BaselineModel::NeuralNet(_) => BaselineKind::NeuralNet,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            BaselineModel::SvmLinear(m) | BaselineModel::LogisticRegression(m) => m.weights.len(),
            BaselineModel::GaussianNb(m) => m.means[0].len(),
            BaselineModel::Knn(m) => m.points.cols(),
            BaselineModel::NeuralNet(net) => net.input_dim(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<u8> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has {} features, model was fitted on {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(match self {
            BaselineModel::SvmLinear(m) => u8::from(m.decision(x) >= 0.0),
            BaselineModel::LogisticRegression(m) => u8::from(sigmoid(m.decision(x)) >= 0.5),
            BaselineModel::GaussianNb(m) => {
                let jll = m.joint_log_likelihood(x);
                u8::from(jll[1] > jll[0])
            }
            BaselineModel::Knn(m) => {
                let votes = m.neighbors(x).iter().filter(|&&i| m.labels[i] == 1).count();
                u8::from(2 * votes > m.k.min(m.labels.len()))
            }
            BaselineModel::NeuralNet(net) => u8::from(net.predict(x)?[0] >= 0.5),
        })
    }

    pub fn predict_all(&self, x: &Matrix) -> Result<Vec<u8>> {
        x.row_iter().map(|r| self.predict(r)).collect()
    }
}

/// Fits one baseline on `x` (N × p) and labels `y`.
pub fn fit(
    kind: BaselineKind,
    x: &Matrix,
    y: &[u8],
    params: &BaselineParams,
    seed: u64,
) -> Result<BaselineModel> {
    if x.rows() != y.len() {
        return Err(Error::invalid(format!(
            "{} rows for {} labels",
            x.rows(),
            y.len()
        )));
    }
    if x.cols() == 0 {
        return Err(Error::invalid("need at least one feature"));
    }
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(Error::invalid("baseline training needs both classes"));
    }
    if let Some(bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::invalid(format!("invalid label {bad}")));
    }
    Ok(match kind {
        BaselineKind::SvmLinear => {
            BaselineModel::SvmLinear(fit_linear(x, y, params, LinearLoss::Hinge)?)
        }
        BaselineKind::LogisticRegression => {
            BaselineModel::LogisticRegression(fit_linear(x, y, params, LinearLoss::Logistic)?)
        }
        BaselineKind::GaussianNb => {
            BaselineModel::GaussianNb(fit_gnb(x, y, params.gnb_var_smoothing)?)
        }
        BaselineKind::Knn => {
            if params.knn_k == 0 {
                return Err(Error::invalid("k must be at least 1"));
            }
            BaselineModel::Knn(Knn {
                points: x.clone(),
                labels: y.to_vec(),
                k: params.knn_k,
            })
        }
        BaselineKind::NeuralNet => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = params.nn_hidden;
            let mut net = DenseNet::new(
                &[x.cols(), h, h, 1],
                &[Activation::Relu, Activation::Relu, Activation::Sigmoid],
                &mut rng,
            )?;
            let opts = FitOptions {
                epochs: params.nn_epochs,
                step_size: params.nn_step_size,
                batch_size: params.nn_batch_size,
            };
            fit_binary(&mut net, x, y, &opts, &mut rng, "NN baseline")?;
            BaselineModel::NeuralNet(net)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LinearLoss {
    Hinge,
    Logistic,
}

/// Full-batch adaptive gradient descent on
/// `l2/2 |w|^2 + mean(loss)`, with the step size decaying as `1/sqrt(t)`.
/// The bias is not penalized.
fn fit_linear(
    x: &Matrix,
    y: &[u8],
    params: &BaselineParams,
    loss: LinearLoss,
) -> Result<LinearModel> {
    let epochs = params.linear_epochs;
    if epochs == 0 {
        return Err(Error::invalid("epochs must be >= 1"));
    }
    let l2 = match loss {
        LinearLoss::Hinge => params.svm_l2,
        LinearLoss::Logistic => params.lr_l2,
    };
    let p = x.cols();
    let n = x.rows() as f64;
    let mut params_vec = vec![0.0; p + 1];
    let mut opt = AdamState::new(
        AdamConfig::with_step_size(params.linear_step_size),
        &[p + 1],
    )?;
    let mut grad = vec![0.0; p + 1];
    for epoch in 0..epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (w, b) = params_vec.split_at(p);
        for (row, &label) in x.row_iter().zip(y) {
            let score = dot(w, row) + b[0];
            let g = match loss {
                LinearLoss::Hinge => {
                    let s = if label == 1 { 1.0 } else { -1.0 };
                    if s * score < 1.0 {
                        -s
                    } else {
                        0.0
                    }
                }
                LinearLoss::Logistic => sigmoid(score) - f64::from(label),
            };
            if g != 0.0 {
                grad[..p]
                    .iter_mut()
                    .zip(row)
                    .for_each(|(gi, xi)| *gi += g * xi / n);
                grad[p] += g / n;
            }
        }
        grad[..p]
            .iter_mut()
            .zip(w)
            .for_each(|(gi, wi)| *gi += l2 * wi);
        opt.set_step_size(params.linear_step_size / (1.0 + epoch as f64 / 50.0).sqrt());
        opt.step_slice(&mut params_vec, &grad)
            .map_err(|e| match e {
                Error::Diverged { .. } => Error::Diverged {
                    stage: "linear baseline",
                    epoch,
                },
                other => other,
            })?;
    }
    let bias = params_vec.pop().expect("bias slot");
    Ok(LinearModel {
        weights: params_vec,
        bias,
    })
}

fn fit_gnb(x: &Matrix, y: &[u8], smoothing: f64) -> Result<GaussianNb> {
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::invalid("variance smoothing must be non-negative"));
    }
    let p = x.cols();
    let column_var = |rows: &[usize], j: usize| -> (f64, f64) {
        let n = rows.len() as f64;
        let mean = rows.iter().map(|&i| x.get(i, j)).sum::<f64>() / n;
        let var = rows
            .iter()
            .map(|&i| (x.get(i, j) - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var)
    };
    let all: Vec<usize> = (0..x.rows()).collect();
    let max_var = (0..p).map(|j| column_var(&all, j).1).fold(0.0, f64::max);
    let mut eps = smoothing * max_var;
    if eps == 0.0 {
        // every feature constant: keep the densities proper
        eps = f64::EPSILON;
    }
    let idx = crate::data::class_indices(y);
    let mut means = [vec![0.0; p], vec![0.0; p]];
    let mut variances = [vec![0.0; p], vec![0.0; p]];
    for c in 0..2 {
        for j in 0..p {
            let (m, v) = column_var(&idx[c], j);
            means[c][j] = m;
            variances[c][j] = v + eps;
        }
    }
    let n = y.len() as f64;
    Ok(GaussianNb {
        means,
        variances,
        priors: [idx[0].len() as f64 / n, idx[1].len() as f64 / n],
    })
}
