//! Latent-space classifier and the end-to-end pipeline:
//! preprocessing, representation learning, latent regression and
//! classification, plus prediction for new subjects.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{MultiViewDataset, PreprocessMode, PreprocessStats, ViewSchema};
use crate::error::{Error, Result};
use crate::latent::{
    train_representation, ClassPrototypes, EpochRecord, LatentCodes, ReconstructionBank,
    RepresentationConfig,
};
use crate::matrix::Matrix;
use crate::nn::{Activation, DenseNet};
use crate::regressor::{train_regressor, LatentRegressor, RegressorConfig};
use crate::training::{fit_binary, FitOptions};

/// Probabilities at or above this value are labelled positive.
pub const DECISION_THRESHOLD: f64 = 0.5;

pub const CLASSIFIER_ACTIVATIONS: [Activation; 3] =
    [Activation::Relu, Activation::Relu, Activation::Sigmoid];

/// Which latent codes the classifier is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierInput {
    /// Regressor outputs for the training subjects (the test-time path).
    #[default]
    Regressed,
    /// The learned codes themselves.
    Codes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub step_size: f64,
    pub batch_size: Option<usize>,
    pub input: ClassifierInput,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 200,
            step_size: 1e-3,
            batch_size: Some(32),
            input: ClassifierInput::Regressed,
        }
    }
}

impl ClassifierConfig {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            epochs: self.epochs,
            step_size: self.step_size,
            batch_size: self.batch_size,
        }
    }
}

/// Three fully-connected layers ending in a single sigmoid probability.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentClassifier {
    net: DenseNet,
}

impl LatentClassifier {
    pub fn new(latent_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let net = DenseNet::new(
            &[latent_dim, hidden, hidden, 1],
            &CLASSIFIER_ACTIVATIONS,
            rng,
        )?;
        Ok(Self { net })
    }

    pub fn from_net(net: DenseNet) -> Result<Self> {
        if net.activations() != CLASSIFIER_ACTIVATIONS || net.output_dim() != 1 {
            return Err(Error::invalid(
                "latent classifier needs three layers (relu, relu, sigmoid) with one output",
            ));
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn latent_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn probability(&self, h: &[f64]) -> Result<f64> {
        Ok(self.net.predict(h)?[0])
    }

    pub fn predict(&self, h: &[f64]) -> Result<u8> {
        Ok(label_for(self.probability(h)?))
    }
}

#[inline]
pub fn label_for(probability: f64) -> u8 {
    u8::from(probability >= DECISION_THRESHOLD)
}

/// Trains the classifier on latent rows; returns the model and the mean
/// cross-entropy per epoch.
pub fn train_classifier(
    latents: &Matrix,
    labels: &[u8],
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<(LatentClassifier, Vec<f64>)> {
    let opts = cfg.fit_options();
    opts.validate()?;
    if labels.len() != latents.rows() {
        return Err(Error::invalid(format!(
            "{} latent rows for {} labels",
            latents.rows(),
            labels.len()
        )));
    }
    if !(labels.contains(&0) && labels.contains(&1)) {
        return Err(Error::invalid("classifier training needs both classes"));
    }
    if cfg.hidden == 0 {
        return Err(Error::invalid("hidden width must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clf = LatentClassifier::new(latents.cols(), cfg.hidden, &mut rng)?;
    let trace = fit_binary(
        &mut clf.net,
        latents,
        labels,
        &opts,
        &mut rng,
        "latent classification",
    )?;
    Ok((clf, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub preprocess: PreprocessMode,
    pub representation: RepresentationConfig,
    pub regressor: RegressorConfig,
    pub classifier: ClassifierConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessMode::Standardize,
            representation: RepresentationConfig::default(),
            regressor: RegressorConfig::default(),
            classifier: ClassifierConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.representation.validate()?;
        self.regressor.fit_options().validate()?;
        self.classifier.fit_options().validate()?;
        if self.regressor.hidden == 0 || self.classifier.hidden == 0 {
            return Err(Error::invalid("hidden widths must be at least 1"));
        }
        Ok(())
    }

    /// Per-stage seeds derived from the master seed.
    pub fn stage_seeds(&self) -> [u64; 3] {
        const MIX: u64 = 0x9E37_79B9_7F4A_7C15;
        [
            self.seed,
            self.seed.wrapping_add(MIX),
            self.seed.wrapping_add(MIX.wrapping_mul(2)),
        ]
    }
}

/// Everything needed to diagnose new subjects, plus the training-time codes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPipeline {
    pub schema: Vec<ViewSchema>,
    pub stats: PreprocessStats,
    pub bank: ReconstructionBank,
    pub codes: LatentCodes,
    pub prototypes: ClassPrototypes,
    pub regressor: LatentRegressor,
    pub classifier: LatentClassifier,
    pub config: PipelineConfig,
}

/// Loss traces of the three training stages.
#[derive(Debug, Clone, Default)]
pub struct TrainingTraces {
    pub representation: Vec<EpochRecord>,
    pub regressor: Vec<f64>,
    pub classifier: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: u8,
    pub probability: f64,
}

pub fn train_pipeline(data: &MultiViewDataset, cfg: &PipelineConfig) -> Result<TrainedPipeline> {
    train_pipeline_with_traces(data, cfg).map(|(p, _)| p)
}

pub fn train_pipeline_with_traces(
    data: &MultiViewDataset,
    cfg: &PipelineConfig,
) -> Result<(TrainedPipeline, TrainingTraces)> {
    cfg.validate()?;
    data.require_both_classes()
        .map_err(|e| e.in_stage("representation learning"))?;
    let [s1, s2, s3] = cfg.stage_seeds();

    let stats =
        PreprocessStats::fit(data, cfg.preprocess).map_err(|e| e.in_stage("preprocessing"))?;
    let prepared = stats.apply(data)?;

    let rep = train_representation(&prepared, &cfg.representation, s1)
        .map_err(|e| e.in_stage("representation learning"))?;

    let features = prepared.concatenated_features();
    let (regressor, reg_trace) = train_regressor(&features, &rep.codes, &cfg.regressor, s2)
        .map_err(|e| e.in_stage("latent regression"))?;

    let clf_inputs = match cfg.classifier.input {
        ClassifierInput::Regressed => regressor.infer_all(&features)?,
        ClassifierInput::Codes => rep.codes.matrix().clone(),
    };
    let (classifier, clf_trace) =
        train_classifier(&clf_inputs, prepared.labels(), &cfg.classifier, s3)
            .map_err(|e| e.in_stage("latent classification"))?;

    let pipe = TrainedPipeline {
        schema: data.schema(),
        stats,
        bank: rep.bank,
        codes: rep.codes,
        prototypes: rep.prototypes,
        regressor,
        classifier,
        config: cfg.clone(),
    };
    let traces = TrainingTraces {
        representation: rep.trace,
        regressor: reg_trace,
        classifier: clf_trace,
    };
    Ok((pipe, traces))
}

impl TrainedPipeline {
    pub fn latent_dim(&self) -> usize {
        self.regressor.latent_dim()
    }

    fn check_schema(&self, views: &[&[f64]]) -> Result<()> {
        if views.len() != self.schema.len() {
            return Err(Error::invalid(format!(
                "{} views given, model expects {}",
                views.len(),
                self.schema.len()
            )));
        }
        for (x, s) in views.iter().zip(&self.schema) {
            if x.len() != s.dim {
                return Err(Error::invalid(format!(
                    "view '{}' has {} features, model expects {}",
                    s.name,
                    x.len(),
                    s.dim
                )));
            }
        }
        Ok(())
    }

    /// Checks that a dataset's views match the model's schema by name and dim.
    pub fn check_dataset_schema(&self, schema: &[ViewSchema]) -> Result<()> {
        if schema != self.schema.as_slice() {
            let fmt = |s: &[ViewSchema]| {
                s.iter()
                    .map(|v| format!("{}:{}", v.name, v.dim))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            return Err(Error::invalid(format!(
                "schema mismatch: data has [{}], model expects [{}]",
                fmt(schema),
                fmt(&self.schema)
            )));
        }
        Ok(())
    }

    /// Latent code of one subject given raw per-view features.
    pub fn embed(&self, views: &[&[f64]]) -> Result<Vec<f64>> {
        self.check_schema(views)?;
        let prepared = self.stats.apply_sample(views)?;
        self.regressor.infer(&prepared.concat())
    }

    /// Label, probability and latent code for one subject's raw features.
    pub fn predict(&self, views: &[&[f64]]) -> Result<(Prediction, Vec<f64>)> {
        let h = self.embed(views)?;
        let probability = self.classifier.probability(&h)?;
        Ok((
            Prediction {
                label: label_for(probability),
                probability,
            },
            h,
        ))
    }

    pub fn predict_dataset(&self, data: &MultiViewDataset) -> Result<Vec<Prediction>> {
        self.check_dataset_schema(&data.schema())?;
        (0..data.len())
            .map(|n| self.predict(&data.sample(n)).map(|(p, _)| p))
            .collect()
    }

    /// Regressed codes of every subject in `data` (raw features).
    pub fn embed_dataset(&self, data: &MultiViewDataset) -> Result<Matrix> {
        self.check_dataset_schema(&data.schema())?;
        let rows = (0..data.len())
            .map(|n| self.embed(&data.sample(n)))
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.latent_dim()));
        }
        Matrix::from_rows(&rows)
    }
}
