//! Metrics, repeated-trial experiments, cross-validated choice of the
//! balance weight, the per-view and latent-vs-original studies, the
//! training-ratio sweep and 2-D projections, with CSV export.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{self, BaselineKind, BaselineParams};
use crate::data::{
    class_indices, split, split_indices, MultiViewDataset, PreprocessMode, PreprocessStats,
    HANDCRAFTED_VIEWS, RADIOMIC_VIEWS,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pipeline::{train_pipeline, PipelineConfig, Prediction, TrainingTraces};

/// Fraction of subjects used for training in every repeated trial.
pub const TRAIN_FRACTION: f64 = 0.7;

/// Candidate balance weights searched by [`kfold_lambda_select`].
pub const LAMBDA_GRID: [f64; 4] = [0.1, 1.0, 10.0, 100.0];

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Binary confusion counts; label 1 is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn from_predictions(predicted: &[u8], truth: &[u8]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::invalid(format!(
                "{} predictions for {} labels",
                predicted.len(),
                truth.len()
            )));
        }
        let mut c = Self::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (1, 1) => c.tp += 1,
                (0, 0) => c.tn += 1,
                (1, 0) => c.fp += 1,
                (0, 1) => c.fn_ += 1,
                _ => {
                    return Err(Error::invalid(format!(
                        "labels must be 0 or 1, got ({p}, {t})"
                    )))
                }
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Number of truly positive samples.
    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.tn + self.fp
    }
}

/// Accuracy, sensitivity and specificity. Sensitivity is `None` without
/// positive samples and specificity is `None` without negatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub acc: f64,
    pub sen: Option<f64>,
    pub spc: Option<f64>,
}

pub fn metrics(c: &ConfusionCounts) -> Result<Metrics> {
    let total = c.total();
    if total == 0 {
        return Err(Error::invalid("no evaluated samples"));
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(Metrics {
        acc: (c.tp + c.tn) as f64 / total as f64,
        sen: ratio(c.tp, c.positives()),
        spc: ratio(c.tn, c.negatives()),
    })
}

/// Fraction of matching labels.
pub fn accuracy(predicted: &[u8], truth: &[u8]) -> Result<f64> {
    Ok(metrics(&ConfusionCounts::from_predictions(predicted, truth)?)?.acc)
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Mean and population standard deviation over the trials where a metric is
/// defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentDescriptor {
    pub method: String,
    pub feature_set: String,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub descriptor: ExperimentDescriptor,
    pub trials: Vec<TrialRecord>,
    pub acc: Summary,
    pub sen: Option<Summary>,
    pub spc: Option<Summary>,
}

impl EvalReport {
    pub fn from_trials(
        method: impl Into<String>,
        feature_set: impl Into<String>,
        trials: Vec<TrialRecord>,
    ) -> Result<Self> {
        let acc: Vec<f64> = trials.iter().map(|t| t.metrics.acc).collect();
        let sen: Vec<f64> = trials.iter().filter_map(|t| t.metrics.sen).collect();
        let spc: Vec<f64> = trials.iter().filter_map(|t| t.metrics.spc).collect();
        let acc =
            Summary::of(&acc).ok_or_else(|| Error::invalid("report needs at least one trial"))?;
        Ok(Self {
            descriptor: ExperimentDescriptor {
                method: method.into(),
                feature_set: feature_set.into(),
                seeds: trials.iter().map(|t| t.seed).collect(),
            },
            acc,
            sen: Summary::of(&sen),
            spc: Summary::of(&spc),
            trials,
        })
    }

    /// Rebuilds the aggregates from the per-trial records.
    pub fn recompute(&self) -> Result<Self> {
        Self::from_trials(
            self.descriptor.method.clone(),
            self.descriptor.feature_set.clone(),
            self.trials.clone(),
        )
    }
}

fn trial_record(trial: usize, seed: u64, predicted: &[u8], truth: &[u8]) -> Result<TrialRecord> {
    let counts = ConfusionCounts::from_predictions(predicted, truth)?;
    Ok(TrialRecord {
        trial,
        seed,
        counts,
        metrics: metrics(&counts)?,
    })
}

// ---------------------------------------------------------------------------
// Methods
// ---------------------------------------------------------------------------

/// How baseline inputs are scaled before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureScaling {
    Original,
    Normalized,
    Standardized,
}

impl FeatureScaling {
    pub const ALL: [FeatureScaling; 3] = [Self::Original, Self::Normalized, Self::Standardized];

    pub fn name(self) -> &'static str {
        match self {
            Self::Original => "original",
            Self::Normalized => "normalized",
            Self::Standardized => "standardized",
        }
    }

    /// Scales both parts with statistics fitted on `train` only.
    pub fn apply(
        self,
        train: &MultiViewDataset,
        test: &MultiViewDataset,
    ) -> Result<(MultiViewDataset, MultiViewDataset)> {
        let mode = match self {
            Self::Original => return Ok((train.clone(), test.clone())),
            Self::Normalized => PreprocessMode::Normalize,
            Self::Standardized => PreprocessMode::Standardize,
        };
        let stats = PreprocessStats::fit(train, mode)?;
        Ok((stats.apply(train)?, stats.apply(test)?))
    }
}

impl fmt::Display for FeatureScaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    /// The full three-stage pipeline. Its seed is replaced per trial.
    Pipeline(PipelineConfig),
    /// A baseline on the concatenated views.
    Baseline {
        kind: BaselineKind,
        params: BaselineParams,
        scaling: FeatureScaling,
    },
    /// A baseline on regressor-produced latent codes of a pipeline trained
    /// on the same training part.
    LatentBaseline {
        kind: BaselineKind,
        params: BaselineParams,
        pipeline: PipelineConfig,
    },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Pipeline(_) => "pipeline".into(),
            Method::Baseline { kind, scaling, .. } => format!("{kind}/{scaling}"),
            Method::LatentBaseline { kind, .. } => format!("{kind}/latent"),
        }
    }

    /// Trains on `train` and returns labels predicted for `test`.
    pub fn train_and_predict(
        &self,
        train: &MultiViewDataset,
        test: &MultiViewDataset,
        seed: u64,
    ) -> Result<Vec<u8>> {
        match self {
            Method::Pipeline(cfg) => {
                let cfg = PipelineConfig {
                    seed,
                    ..cfg.clone()
                };
                let pipe = train_pipeline(train, &cfg)?;
                Ok(pipe
                    .predict_dataset(test)?
                    .iter()
                    .map(|p| p.label)
                    .collect())
            }
            Method::Baseline {
                kind,
                params,
                scaling,
            } => {
                let (tr, te) = scaling.apply(train, test)?;
                let model = baselines::fit(
                    *kind,
                    &tr.concatenated_features(),
                    tr.labels(),
                    params,
                    seed,
                )
                .map_err(|e| e.in_stage("baseline"))?;
                model.predict_all(&te.concatenated_features())
            }
            Method::LatentBaseline {
                kind,
                params,
                pipeline,
            } => {
                let cfg = PipelineConfig {
                    seed,
                    ..pipeline.clone()
                };
                let pipe = train_pipeline(train, &cfg)?;
                let model = baselines::fit(
                    *kind,
                    &pipe.embed_dataset(train)?,
                    train.labels(),
                    params,
                    seed,
                )
                .map_err(|e| e.in_stage("baseline"))?;
                model.predict_all(&pipe.embed_dataset(test)?)
            }
        }
    }
}

/// Name used in reports for a dataset's feature set.
fn feature_set_name(data: &MultiViewDataset) -> String {
    data.schema()
        .iter()
        .map(|v| v.name.as_str())
        .collect::<Vec<_>>()
        .join("+")
}

/// Repeated 70/30 trials; trial `t` splits and seeds with `base_seed + t`.
pub fn run_experiment(
    data: &MultiViewDataset,
    method: &Method,
    n_trials: usize,
    base_seed: u64,
) -> Result<EvalReport> {
    run_experiment_named(data, method, n_trials, base_seed, &feature_set_name(data))
}

fn run_experiment_named(
    data: &MultiViewDataset,
    method: &Method,
    n_trials: usize,
    base_seed: u64,
    feature_set: &str,
) -> Result<EvalReport> {
    if n_trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    let mut trials = Vec::with_capacity(n_trials);
    for t in 0..n_trials {
        let seed = base_seed.wrapping_add(t as u64);
        let record = (|| {
            let (train, test) = split(data, TRAIN_FRACTION, seed)?;
            let predicted = method.train_and_predict(&train, &test, seed)?;
            trial_record(t, seed, &predicted, test.labels())
        })()
        .map_err(|e| Error::Trial {
            trial: t,
            source: Box::new(e),
        })?;
        trials.push(record);
    }
    EvalReport::from_trials(method.name(), feature_set, trials)
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

/// Stratified `k`-fold partition of `0..labels.len()`. Each class is
/// shuffled and dealt round-robin, continuing across classes so fold sizes
/// differ by at most one.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    let classes = class_indices(labels);
    for (c, members) in classes.iter().enumerate() {
        if members.len() < k {
            return Err(Error::invalid(format!(
                "class {c} has {} samples, too few for {k} folds with both classes",
                members.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for mut members in classes {
        members.shuffle(&mut rng);
        for i in members {
            folds[next % k].push(i);
            next += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaScore {
    pub lambda: f64,
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSelection {
    pub best: f64,
    /// Empty when the grid has a single candidate.
    pub table: Vec<LambdaScore>,
}

/// Picks the balance weight with the best mean `k`-fold accuracy of the
/// full pipeline; ties go to the larger weight.
pub fn kfold_lambda_select(
    train: &MultiViewDataset,
    grid: &[f64],
    k: usize,
    cfg: &PipelineConfig,
) -> Result<LambdaSelection> {
    if let Some(bad) = grid.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::invalid(format!(
            "balance weight {bad} must be finite and >= 0"
        )));
    }
    match grid {
        [] => return Err(Error::invalid("empty balance-weight grid")),
        [only] => {
            return Ok(LambdaSelection {
                best: *only,
                table: Vec::new(),
            })
        }
        _ => {}
    }
    let folds = stratified_folds(train.labels(), k, cfg.seed)?;
    let mut table = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut cfg = cfg.clone();
        cfg.representation.lambda = lambda;
        let mut fold_accuracy = Vec::with_capacity(k);
        for (f, held_out) in folds.iter().enumerate() {
            let rest: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect();
            let held_out = train.subset(held_out);
            let predicted = Method::Pipeline(cfg.clone()).train_and_predict(
                &train.subset(&rest),
                &held_out,
                cfg.seed,
            )?;
            fold_accuracy.push(accuracy(&predicted, held_out.labels())?);
        }
        let mean_accuracy = fold_accuracy.iter().sum::<f64>() / k as f64;
        table.push(LambdaScore {
            lambda,
            fold_accuracy,
            mean_accuracy,
        });
    }
    let best = table
        .iter()
        .max_by(|a, b| {
            a.mean_accuracy
                .total_cmp(&b.mean_accuracy)
                .then(a.lambda.total_cmp(&b.lambda))
        })
        .map(|s| s.lambda)
        .expect("grid is non-empty");
    Ok(LambdaSelection { best, table })
}

// ---------------------------------------------------------------------------
// Studies
// ---------------------------------------------------------------------------

/// Reports of every method on one feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSetReports {
    pub feature_set: String,
    pub reports: Vec<EvalReport>,
}

/// Feature sets of the per-view study: each view alone, the radiomic and
/// handcrafted groups when all their views are present, and all views.
pub fn study_feature_sets(data: &MultiViewDataset) -> Vec<(String, Vec<String>)> {
    let names: Vec<String> = data.schema().into_iter().map(|v| v.name).collect();
    let mut sets: Vec<(String, Vec<String>)> =
        names.iter().map(|n| (n.clone(), vec![n.clone()])).collect();
    for (group, members) in [
        ("radiomic", &RADIOMIC_VIEWS[..]),
        ("handcrafted", &HANDCRAFTED_VIEWS[..]),
    ] {
        if members.iter().all(|m| names.iter().any(|n| n == m)) {
            sets.push((
                group.into(),
                members.iter().map(|m| m.to_string()).collect(),
            ));
        }
    }
    sets.push(("all".into(), names));
    sets
}

/// Every method on every feature set of [`study_feature_sets`]. Multi-view
/// sets are concatenated into a single view first.
pub fn per_view_study(
    data: &MultiViewDataset,
    methods: &[Method],
    n_trials: usize,
    base_seed: u64,
) -> Result<Vec<FeatureSetReports>> {
    if data.n_views() == 0 {
        return Err(Error::invalid("dataset has no views"));
    }
    let mut out = Vec::new();
    for (name, views) in study_feature_sets(data) {
        let refs: Vec<&str> = views.iter().map(String::as_str).collect();
        let subset = data.select_views(&refs)?.concat_views();
        let reports = methods
            .iter()
            .map(|m| run_experiment_named(&subset, m, n_trials, base_seed, &name))
            .collect::<Result<Vec<_>>>()?;
        out.push(FeatureSetReports {
            feature_set: name,
            reports,
        });
    }
    Ok(out)
}

/// One baseline's accuracy on standardized original features and on
/// regressor-produced latent codes over the same trials.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentComparison {
    pub kind: BaselineKind,
    pub original: EvalReport,
    pub latent: EvalReport,
}

/// Trains one pipeline per trial and fits every baseline in `kinds` on both
/// the standardized concatenated views and the pipeline's latent codes.
pub fn latent_vs_original(
    data: &MultiViewDataset,
    cfg: &PipelineConfig,
    kinds: &[BaselineKind],
    params: &BaselineParams,
    n_trials: usize,
    base_seed: u64,
) -> Result<Vec<LatentComparison>> {
    if n_trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    let mut original: Vec<Vec<TrialRecord>> = vec![Vec::new(); kinds.len()];
    let mut latent: Vec<Vec<TrialRecord>> = vec![Vec::new(); kinds.len()];
    for t in 0..n_trials {
        let seed = base_seed.wrapping_add(t as u64);
        (|| {
            let (train, test) = split(data, TRAIN_FRACTION, seed)?;
            let pipe = train_pipeline(
                &train,
                &PipelineConfig {
                    seed,
                    ..cfg.clone()
                },
            )?;
            let (htr, hte) = (pipe.embed_dataset(&train)?, pipe.embed_dataset(&test)?);
            let (str_, ste) = FeatureScaling::Standardized.apply(&train, &test)?;
            let (xtr, xte) = (str_.concatenated_features(), ste.concatenated_features());
            for (i, &kind) in kinds.iter().enumerate() {
                let m = baselines::fit(kind, &xtr, train.labels(), params, seed)?;
                original[i].push(trial_record(t, seed, &m.predict_all(&xte)?, test.labels())?);
                let m = baselines::fit(kind, &htr, train.labels(), params, seed)?;
                latent[i].push(trial_record(t, seed, &m.predict_all(&hte)?, test.labels())?);
            }
            Ok::<_, Error>(())
        })()
        .map_err(|e| Error::Trial {
            trial: t,
            source: Box::new(e),
        })?;
    }
    let features = feature_set_name(data);
    kinds
        .iter()
        .zip(original.into_iter().zip(latent))
        .map(|(&kind, (o, l))| {
            Ok(LatentComparison {
                kind,
                original: EvalReport::from_trials(
                    format!("{kind}/standardized"),
                    features.clone(),
                    o,
                )?,
                latent: EvalReport::from_trials(format!("{kind}/latent"), features.clone(), l)?,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Training-ratio sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum SweepOutcome {
    Evaluated(EvalReport),
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    /// Training size as a fraction of the whole dataset.
    pub ratio: f64,
    /// Training subject ids of the first trial.
    pub train_ids: Vec<String>,
    pub outcome: SweepOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub test_ids: Vec<String>,
    pub points: Vec<SweepPoint>,
}

/// Pipeline accuracy against training-set size on one fixed test part.
///
/// The test part is a stratified `test_fraction` of the data drawn with
/// `test_seed`; the rest forms the training pool. For ratio `r` each class
/// contributes `round(r * class size)` subjects, taken as a prefix of a
/// per-trial shuffle of the pool, so training sets are nested across ratios.
pub fn ratio_sweep(
    data: &MultiViewDataset,
    cfg: &PipelineConfig,
    ratios: &[f64],
    test_fraction: f64,
    test_seed: u64,
    n_trials: usize,
) -> Result<SweepReport> {
    if n_trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    if let Some(bad) = ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(Error::invalid(format!("ratio {bad} is not in (0, 1)")));
    }
    let (pool, test_idx) = split_indices(data.labels(), 1.0 - test_fraction, test_seed, true)?;
    let test = data.subset(&test_idx);
    let class_sizes = data.class_counts();
    let pool_by_class = class_indices(&pool.iter().map(|&i| data.labels()[i]).collect::<Vec<_>>())
        .map(|members| members.into_iter().map(|j| pool[j]).collect::<Vec<_>>());

    let orders: Vec<[Vec<usize>; 2]> = (0..n_trials)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(test_seed.wrapping_add(1 + t as u64));
            let mut order = pool_by_class.clone();
            order.iter_mut().for_each(|o| o.shuffle(&mut rng));
            order
        })
        .collect();

    let mut points = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let take: Vec<usize> = class_sizes
            .iter()
            .map(|&n| (ratio * n as f64).round() as usize)
            .collect();
        let skip = (0..2).find_map(|c| {
            if take[c] == 0 {
                Some(format!("no class-{c} training samples at ratio {ratio}"))
            } else if take[c] > pool_by_class[c].len() {
                Some(format!(
                    "ratio {ratio} needs {} class-{c} samples, pool has {}",
                    take[c],
                    pool_by_class[c].len()
                ))
            } else {
                None
            }
        });
        let subset_for = |order: &[Vec<usize>; 2]| {
            let mut idx: Vec<usize> = (0..2)
                .flat_map(|c| order[c][..take[c]].iter().copied())
                .collect();
            idx.sort_unstable();
            idx
        };
        let point = match skip {
            Some(reason) => SweepPoint {
                ratio,
                train_ids: Vec::new(),
                outcome: SweepOutcome::Skipped(reason),
            },
            None => {
                let mut trials = Vec::with_capacity(n_trials);
                for (t, order) in orders.iter().enumerate() {
                    let seed = cfg.seed.wrapping_add(t as u64);
                    let train = data.subset(&subset_for(order));
                    let predicted = Method::Pipeline(cfg.clone())
                        .train_and_predict(&train, &test, seed)
                        .map_err(|e| Error::Trial {
                            trial: t,
                            source: Box::new(e),
                        })?;
                    trials.push(trial_record(t, seed, &predicted, test.labels())?);
                }
                let first = subset_for(&orders[0]);
                SweepPoint {
                    ratio,
                    train_ids: first
                        .iter()
                        .map(|&i| data.subject_ids()[i].clone())
                        .collect(),
                    outcome: SweepOutcome::Evaluated(EvalReport::from_trials(
                        "pipeline",
                        format!("ratio {ratio}"),
                        trials,
                    )?),
                }
            }
        };
        points.push(point);
    }
    Ok(SweepReport {
        test_ids: test.subject_ids().to_vec(),
        points,
    })
}

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

/// Coordinates of the rows of `points` on their top two principal axes.
/// Each axis is oriented so that its largest-magnitude loading is positive.
pub fn projection_2d(points: &Matrix) -> Result<Matrix> {
    let (n, d) = (points.rows(), points.cols());
    if n < 2 || d < 2 {
        return Err(Error::invalid(format!(
            "projection needs at least 2x2 points, got {n}x{d}"
        )));
    }
    if !points.is_finite() {
        return Err(Error::invalid("points contain non-finite values"));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| points.column(j).iter().sum::<f64>() / n as f64)
        .collect();
    let centered = DMatrix::from_fn(n, d, |i, j| points.get(i, j) - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    if cov.iter().all(|v| *v == 0.0) {
        return Err(Error::invalid("points have rank 0 (all identical)"));
    }
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut axes = Vec::with_capacity(2);
    for &k in &order[..2] {
        let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = axis
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(_, v)| v)
            .unwrap_or(0.0);
        if lead < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        axes.push(axis);
    }
    let mut out = Matrix::zeros(n, 2);
    for i in 0..n {
        for (c, axis) in axes.iter().enumerate() {
            let v: f64 = (0..d).map(|j| centered[(i, j)] * axis[j]).sum();
            out.set(i, c, v);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(csv_error)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per trial plus `mean` and `std` rows for each report.
pub fn write_reports_csv(path: &Path, reports: &[&EvalReport]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "method",
        "feature_set",
        "trial",
        "seed",
        "tp",
        "tn",
        "fp",
        "fn",
        "acc",
        "sen",
        "spc",
    ])
    .map_err(csv_error)?;
    for r in reports {
        let d = &r.descriptor;
        for t in &r.trials {
            let c = t.counts;
            w.write_record([
                d.method.clone(),
                d.feature_set.clone(),
                t.trial.to_string(),
                t.seed.to_string(),
                c.tp.to_string(),
                c.tn.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                t.metrics.acc.to_string(),
                opt(t.metrics.sen),
                opt(t.metrics.spc),
            ])
            .map_err(csv_error)?;
        }
        for (tag, pick) in [
            ("mean", (|s: &Summary| s.mean) as fn(&Summary) -> f64),
            ("std", |s: &Summary| s.std),
        ] {
            let blank = String::new;
            w.write_record([
                d.method.clone(),
                d.feature_set.clone(),
                tag.to_string(),
                blank(),
                blank(),
                blank(),
                blank(),
                blank(),
                pick(&r.acc).to_string(),
                opt(r.sen.as_ref().map(pick)),
                opt(r.spc.as_ref().map(pick)),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A row of plot data.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub x: f64,
    pub y: f64,
    pub label: String,
    pub split: String,
}

pub fn write_plot_csv(path: &Path, points: &[PlotPoint]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["x", "y", "label", "split"])
        .map_err(csv_error)?;
    for p in points {
        w.write_record([
            p.x.to_string(),
            p.y.to_string(),
            p.label.clone(),
            p.split.clone(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Plot rows for a sweep: mean accuracy against ratio; skipped ratios are
/// left out.
pub fn sweep_plot_points(sweep: &SweepReport) -> Vec<PlotPoint> {
    sweep
        .points
        .iter()
        .filter_map(|p| match &p.outcome {
            SweepOutcome::Evaluated(r) => Some(PlotPoint {
                x: p.ratio,
                y: r.acc.mean,
                label: "acc".into(),
                split: "test".into(),
            }),
            SweepOutcome::Skipped(_) => None,
        })
        .collect()
}

/// Plot rows for a projection of `train` rows followed by `test` rows.
pub fn projection_plot_points(
    coords: &Matrix,
    labels: &[u8],
    n_train: usize,
) -> Result<Vec<PlotPoint>> {
    if coords.rows() != labels.len() || coords.cols() != 2 || n_train > labels.len() {
        return Err(Error::invalid(
            "projection rows, labels and split sizes disagree",
        ));
    }
    Ok(coords
        .row_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (xy, y))| PlotPoint {
            x: xy[0],
            y: xy[1],
            label: y.to_string(),
            split: if i < n_train { "train" } else { "test" }.into(),
        })
        .collect())
}

/// Writes the sweep as `ratio,status,n_train,acc_mean,acc_std,reason`.
pub fn write_sweep_csv(path: &Path, sweep: &SweepReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "ratio", "status", "n_train", "acc_mean", "acc_std", "reason",
    ])
    .map_err(csv_error)?;
    for p in &sweep.points {
        let row = match &p.outcome {
            SweepOutcome::Evaluated(r) => [
                p.ratio.to_string(),
                "ok".into(),
                p.train_ids.len().to_string(),
                r.acc.mean.to_string(),
                r.acc.std.to_string(),
                String::new(),
            ],
            SweepOutcome::Skipped(reason) => [
                p.ratio.to_string(),
                "skipped".into(),
                "0".into(),
                String::new(),
                String::new(),
                reason.clone(),
            ],
        };
        w.write_record(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// `lambda,fold,accuracy` rows followed by a `mean` row per candidate.
pub fn write_lambda_table_csv(path: &Path, table: &[LambdaScore]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["lambda", "fold", "accuracy"])
        .map_err(csv_error)?;
    for s in table {
        for (f, a) in s.fold_accuracy.iter().enumerate() {
            w.write_record([s.lambda.to_string(), f.to_string(), a.to_string()])
                .map_err(csv_error)?;
        }
        w.write_record([
            s.lambda.to_string(),
            "mean".into(),
            s.mean_accuracy.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `representation_trace.csv`, `regressor_trace.csv` and
/// `classifier_trace.csv` into `dir`.
pub fn write_traces_csv(dir: &Path, traces: &TrainingTraces) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv_writer(&dir.join("representation_trace.csv"))?;
    w.write_record([
        "epoch",
        "total",
        "reconstruction",
        "structured",
        "structured_contribution",
        "satisfied_fraction",
    ])
    .map_err(csv_error)?;
    for (e, r) in traces.representation.iter().enumerate() {
        w.write_record([
            e.to_string(),
            r.total.to_string(),
            r.reconstruction.to_string(),
            r.structured.to_string(),
            r.structured_contribution.to_string(),
            r.satisfied_fraction.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    for (file, column, values) in [
        ("regressor_trace.csv", "mse", &traces.regressor),
        ("classifier_trace.csv", "cross_entropy", &traces.classifier),
    ] {
        let mut w = csv_writer(&dir.join(file))?;
        w.write_record(["epoch", column]).map_err(csv_error)?;
        for (e, v) in values.iter().enumerate() {
            w.write_record([e.to_string(), v.to_string()])
                .map_err(csv_error)?;
        }
        w.flush()?;
    }
    Ok(())
}

/// `subject_id,label,probability` per subject.
pub fn write_predictions_csv(
    path: &Path,
    subject_ids: &[String],
    predictions: &[Prediction],
) -> Result<()> {
    if subject_ids.len() != predictions.len() {
        return Err(Error::invalid(format!(
            "{} subject ids for {} predictions",
            subject_ids.len(),
            predictions.len()
        )));
    }
    let mut w = csv_writer(path)?;
    w.write_record(["subject_id", "label", "probability"])
        .map_err(csv_error)?;
    for (id, p) in subject_ids.iter().zip(predictions) {
        w.write_record([id.clone(), p.label.to_string(), p.probability.to_string()])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
