//! Dense regressor from concatenated (preprocessed) view features to the
//! learned latent codes; this is how unseen subjects are embedded.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentCodes;
use crate::matrix::Matrix;
use crate::nn::{Activation, DenseNet};
use crate::training::{fit_regression, regression_mse, FitOptions};

/// Activation after each of the four fully-connected layers.
pub const REGRESSOR_ACTIVATIONS: [Activation; 4] = [
    Activation::Sigmoid,
    Activation::Sigmoid,
    Activation::Linear,
    Activation::Linear,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressorConfig {
    /// Width of the three hidden layers.
    pub hidden: usize,
    pub epochs: usize,
    pub step_size: f64,
    pub batch_size: Option<usize>,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            epochs: 200,
            step_size: 1e-3,
            batch_size: Some(32),
        }
    }
}

impl RegressorConfig {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            epochs: self.epochs,
            step_size: self.step_size,
            batch_size: self.batch_size,
        }
    }
}

/// FC-sigmoid-FC-sigmoid-FC-FC.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRegressor {
    net: DenseNet,
}

impl LatentRegressor {
    pub fn new(
        input_dim: usize,
        latent_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let net = DenseNet::new(
            &[input_dim, hidden, hidden, hidden, latent_dim],
            &REGRESSOR_ACTIVATIONS,
            rng,
        )?;
        Ok(Self { net })
    }

    /// Wraps an existing network after checking its layout.
    pub fn from_net(net: DenseNet) -> Result<Self> {
        if net.activations() != REGRESSOR_ACTIVATIONS {
            return Err(Error::invalid(format!(
                "latent regressor needs layers {:?}, got {:?}",
                REGRESSOR_ACTIVATIONS,
                net.activations()
            )));
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// Latent code for one concatenated feature vector.
    pub fn infer(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.net.predict(features)
    }

    /// Latent code for one subject given as per-view slices.
    pub fn infer_views(&self, views: &[&[f64]]) -> Result<Vec<f64>> {
        self.infer(&views.concat())
    }

    pub fn infer_all(&self, features: &Matrix) -> Result<Matrix> {
        let rows = features
            .row_iter()
            .map(|x| self.infer(x))
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.latent_dim()));
        }
        Matrix::from_rows(&rows)
    }

    /// Mean squared error against `codes` (mean over components and rows).
    pub fn mse(&self, features: &Matrix, codes: &LatentCodes) -> Result<f64> {
        regression_mse(&self.net, features, codes.matrix())
    }
}

/// Fits the regressor on rows of `features` aligned with `codes`; returns the
/// model and the per-epoch training MSE.
pub fn train_regressor(
    features: &Matrix,
    codes: &LatentCodes,
    cfg: &RegressorConfig,
    seed: u64,
) -> Result<(LatentRegressor, Vec<f64>)> {
    let opts = cfg.fit_options();
    opts.validate()?;
    if features.rows() != codes.len() {
        return Err(Error::invalid(format!(
            "{} feature rows for {} latent codes",
            features.rows(),
            codes.len()
        )));
    }
    if cfg.hidden == 0 {
        return Err(Error::invalid("hidden width must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reg = LatentRegressor::new(features.cols(), codes.dim(), cfg.hidden, &mut rng)?;
    let trace = fit_regression(
        &mut reg.net,
        features,
        codes.matrix(),
        &opts,
        &mut rng,
        "latent regression",
    )?;
    Ok((reg, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_four_fc_two_sigmoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let reg = LatentRegressor::new(10, 4, 8, &mut rng).unwrap();
        assert_eq!(reg.net().layer_dims(), vec![10, 8, 8, 8, 4]);
        let acts = reg.net().activations();
        assert_eq!(acts.len(), 4);
        assert_eq!(
            acts.iter().filter(|a| **a == Activation::Sigmoid).count(),
            2
        );
        assert_eq!(acts[3], Activation::Linear);
    }

    #[test]
    fn foreign_layouts_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let three = DenseNet::new(
            &[3, 4, 4, 2],
            &[Activation::Sigmoid, Activation::Sigmoid, Activation::Linear],
            &mut rng,
        )
        .unwrap();
        assert!(LatentRegressor::from_net(three).is_err());
        let relu = DenseNet::new(
            &[3, 4, 4, 4, 2],
            &[
                Activation::Relu,
                Activation::Sigmoid,
                Activation::Linear,
                Activation::Linear,
            ],
            &mut rng,
        )
        .unwrap();
        assert!(LatentRegressor::from_net(relu).is_err());
    }

    #[test]
    fn zero_epochs_rejected() {
        let x = Matrix::zeros(3, 2);
        let h = LatentCodes::new(Matrix::zeros(3, 2)).unwrap();
        let cfg = RegressorConfig {
            epochs: 0,
            ..Default::default()
        };
        let err = train_regressor(&x, &h, &cfg, 0).unwrap_err();
        assert!(err.to_string().contains("epochs must be >= 1"));
    }

    #[test]
    fn misaligned_rows_rejected() {
        let x = Matrix::zeros(3, 2);
        let h = LatentCodes::new(Matrix::zeros(4, 2)).unwrap();
        assert!(train_regressor(&x, &h, &RegressorConfig::default(), 0).is_err());
    }

    #[test]
    fn wrong_input_length_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let reg = LatentRegressor::new(5, 2, 4, &mut rng).unwrap();
        assert!(reg.infer(&[0.0; 4]).is_err());
        let a = [0.1, 0.2, 0.3];
        let b = [0.4, 0.5];
        assert_eq!(
            reg.infer_views(&[&a, &b]).unwrap(),
            reg.infer(&[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap()
        );
    }
}
