//! Complete and structured latent representations.
//!
//! Every training subject `n` owns a free latent code `h_n`. One
//! reconstruction network per view maps `h_n` back to that view's features
//! (completeness), and a hinge on class-expected similarities keeps codes of
//! the same class close while opening a margin to the other class
//! (structure). With the identity feature map, the expected similarity of
//! `h_n` to class `y` is the dot product of `h_n` with the class prototype,
//! i.e. the mean code of that class.
//!
//! Training alternates between the network parameters (codes frozen) and the
//! codes (networks frozen), minimizing
//! `mean_n [ l_r(X_n, h_n) + lambda * l_c(y_n, h_n) ]`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::MultiViewDataset;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::nn::{Activation, AdamConfig, AdamState, DenseNet, GradientSet};

/// Trainable `N × d` matrix; row `n` is the code of training subject `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCodes(Matrix);

impl LatentCodes {
    pub fn new(codes: Matrix) -> Result<Self> {
        if codes.cols() == 0 {
            return Err(Error::invalid("latent dimension must be at least 1"));
        }
        if !codes.is_finite() {
            return Err(Error::invalid("latent codes must be finite"));
        }
        Ok(Self(codes))
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn code(&self, n: usize) -> &[f64] {
        self.0.row(n)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// How each view's squared reconstruction error is reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconReduction {
    /// Squared error averaged over the view's features, summed over views.
    #[default]
    ComponentMean,
    /// Plain squared norm per view, summed over views.
    Sum,
}

impl ReconReduction {
    fn weight(self, dim: usize) -> f64 {
        match self {
            ReconReduction::ComponentMean => 1.0 / dim as f64,
            ReconReduction::Sum => 1.0,
        }
    }
}

/// One reconstruction network per view, all reading the same latent code.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionBank {
    nets: Vec<DenseNet>,
}

impl ReconstructionBank {
    /// `d -> max(2d, 16) (relu) -> dim_v (linear)` for every view.
    pub fn new(latent_dim: usize, view_dims: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        let hidden = (2 * latent_dim).max(16);
        let nets = view_dims
            .iter()
            .map(|&dim| {
                DenseNet::new(
                    &[latent_dim, hidden, dim],
                    &[Activation::Relu, Activation::Linear],
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_nets(nets)
    }

    pub fn from_nets(nets: Vec<DenseNet>) -> Result<Self> {
        let Some(first) = nets.first() else {
            return Err(Error::invalid(
                "reconstruction bank needs at least one view",
            ));
        };
        let d = first.input_dim();
        if nets.iter().any(|n| n.input_dim() != d) {
            return Err(Error::invalid(
                "reconstruction networks disagree on the latent dimension",
            ));
        }
        Ok(Self { nets })
    }

    pub fn latent_dim(&self) -> usize {
        self.nets[0].input_dim()
    }

    pub fn nets(&self) -> &[DenseNet] {
        &self.nets
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.nets.iter().map(DenseNet::output_dim).collect()
    }

    /// Reconstructed features of every view from one code.
    pub fn reconstruct(&self, h: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.nets.iter().map(|n| n.predict(h)).collect()
    }

    fn check_views(&self, views: &[&[f64]]) -> Result<()> {
        if views.len() != self.nets.len() {
            return Err(Error::invalid(format!(
                "{} views given, bank reconstructs {}",
                views.len(),
                self.nets.len()
            )));
        }
        for (v, (x, net)) in views.iter().zip(&self.nets).enumerate() {
            if x.len() != net.output_dim() {
                return Err(Error::invalid(format!(
                    "view {v} has {} features, bank reconstructs {}",
                    x.len(),
                    net.output_dim()
                )));
            }
        }
        Ok(())
    }

    /// Adds `scale * grad l_r` into the net gradients (when given) and the code
    /// gradient; returns the unscaled loss.
    fn accumulate(
        &self,
        h: &[f64],
        views: &[&[f64]],
        reduction: ReconReduction,
        scale: f64,
        mut net_grads: Option<&mut [GradientSet]>,
        code_grad: &mut [f64],
    ) -> Result<f64> {
        let mut loss = 0.0;
        for (v, (net, x)) in self.nets.iter().zip(views).enumerate() {
            let cache = net.forward(h)?;
            let w = reduction.weight(x.len());
            let upstream: Vec<f64> = cache
                .output()
                .iter()
                .zip(x.iter())
                .map(|(f, t)| {
                    let d = f - t;
                    loss += w * d * d;
                    scale * 2.0 * w * d
                })
                .collect();
            let dh = match net_grads.as_deref_mut() {
                Some(grads) => net.accumulate_gradients(&cache, &upstream, &mut grads[v])?,
                None => net.input_gradient(&cache, &upstream)?,
            };
            code_grad.iter_mut().zip(&dh).for_each(|(g, d)| *g += d);
        }
        Ok(loss)
    }

    fn zero_grads(&self) -> Vec<GradientSet> {
        self.nets.iter().map(GradientSet::zeros_like).collect()
    }
}

/// Reconstruction loss of one subject with gradients for every network and
/// for the code.
#[derive(Debug, Clone)]
pub struct ReconstructionEval {
    pub loss: f64,
    pub net_grads: Vec<GradientSet>,
    pub code_grad: Vec<f64>,
}

pub fn reconstruction_loss(
    bank: &ReconstructionBank,
    h: &[f64],
    views: &[&[f64]],
    reduction: ReconReduction,
) -> Result<ReconstructionEval> {
    if h.len() != bank.latent_dim() {
        return Err(Error::invalid(format!(
            "code has length {}, bank expects {}",
            h.len(),
            bank.latent_dim()
        )));
    }
    bank.check_views(views)?;
    let mut net_grads = bank.zero_grads();
    let mut code_grad = vec![0.0; h.len()];
    let loss = bank.accumulate(
        h,
        views,
        reduction,
        1.0,
        Some(&mut net_grads),
        &mut code_grad,
    )?;
    Ok(ReconstructionEval {
        loss,
        net_grads,
        code_grad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuredLossConfig {
    /// Penalty for predicting the wrong class; the correct class costs 0.
    pub margin: f64,
}

impl Default for StructuredLossConfig {
    fn default() -> Self {
        Self { margin: 1.0 }
    }
}

impl StructuredLossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin > 0.0 && self.margin.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "margin {} must be positive",
                self.margin
            )))
        }
    }
}

/// Mean code of each class and its member count.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototypes {
    pub means: [Vec<f64>; 2],
    pub counts: [usize; 2],
}

impl ClassPrototypes {
    pub fn from_codes(codes: &Matrix, labels: &[u8]) -> Result<Self> {
        if codes.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} codes for {} labels",
                codes.rows(),
                labels.len()
            )));
        }
        let d = codes.cols();
        let mut sums = [vec![0.0; d], vec![0.0; d]];
        let mut counts = [0usize; 2];
        for (row, &y) in codes.row_iter().zip(labels) {
            let c = y as usize;
            counts[c] += 1;
            sums[c].iter_mut().zip(row).for_each(|(s, x)| *s += x);
        }
        for c in 0..2 {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                sums[c].iter_mut().for_each(|s| *s /= n);
            }
        }
        Ok(Self {
            means: sums,
            counts,
        })
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn require(&self, y: u8) -> Result<()> {
        if y > 1 {
            return Err(Error::invalid(format!("invalid label {y}")));
        }
        if self.counts[y as usize] == 0 {
            return Err(Error::invalid(format!("class {y} has no latent codes")));
        }
        Ok(())
    }
}

/// Expected similarity of `h` to the codes of class `y`.
pub fn expected_similarity(h: &[f64], prototypes: &ClassPrototypes, y: u8) -> Result<f64> {
    prototypes.require(y)?;
    if h.len() != prototypes.dim() {
        return Err(Error::invalid("code and prototype dimensions differ"));
    }
    Ok(dot(&prototypes.means[y as usize], h))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredEval {
    pub loss: f64,
    /// Gradient w.r.t. `h` with the prototypes held fixed.
    pub grad: Vec<f64>,
}

impl StructuredEval {
    pub fn is_satisfied(&self) -> bool {
        self.loss == 0.0
    }
}

/// Hinge `max(0, margin + E_other F - E_own F)`.
pub fn structured_loss(
    h: &[f64],
    y: u8,
    prototypes: &ClassPrototypes,
    cfg: &StructuredLossConfig,
) -> Result<StructuredEval> {
    cfg.validate()?;
    prototypes.require(0)?;
    prototypes.require(1)?;
    if y > 1 {
        return Err(Error::invalid(format!("invalid label {y}")));
    }
    let own = &prototypes.means[y as usize];
    let other = &prototypes.means[1 - y as usize];
    let arg = cfg.margin + dot(other, h) - dot(own, h);
    if arg > 0.0 {
        Ok(StructuredEval {
            loss: arg,
            grad: other.iter().zip(own).map(|(o, s)| o - s).collect(),
        })
    } else {
        Ok(StructuredEval {
            loss: 0.0,
            grad: vec![0.0; h.len()],
        })
    }
}

/// The class with the larger expected similarity; ties go to class 0.
pub fn assign_class(h: &[f64], prototypes: &ClassPrototypes) -> u8 {
    let s0 = dot(&prototypes.means[0], h);
    let s1 = dot(&prototypes.means[1], h);
    u8::from(s1 > s0)
}

/// Value and gradients of the joint objective over a batch of subjects.
#[derive(Debug, Clone)]
pub struct JointEval {
    /// `mean(l_r) + lambda * mean(l_c)` over the batch.
    pub total: f64,
    pub reconstruction: f64,
    /// Mean hinge value, before weighting by lambda.
    pub structured: f64,
    /// Subjects in the batch whose hinge is inactive.
    pub satisfied: usize,
    /// Gradient w.r.t. every code (rows outside the batch still move through
    /// the prototypes).
    pub code_grad: Matrix,
    pub net_grads: Option<Vec<GradientSet>>,
}

/// Evaluates the joint objective on `batch` with prototypes computed from the
/// current codes, so `code_grad` is the exact gradient of the objective.
#[allow(clippy::too_many_arguments)]
pub fn joint_objective(
    bank: &ReconstructionBank,
    codes: &LatentCodes,
    data: &MultiViewDataset,
    batch: &[usize],
    lambda: f64,
    cfg: &StructuredLossConfig,
    reduction: ReconReduction,
    want_net_grads: bool,
) -> Result<JointEval> {
    let prototypes = ClassPrototypes::from_codes(codes.matrix(), data.labels())?;
    joint_objective_with(
        bank,
        codes,
        data,
        batch,
        &prototypes,
        lambda,
        cfg,
        reduction,
        want_net_grads,
    )
}

#[allow(clippy::too_many_arguments)]
fn joint_objective_with(
    bank: &ReconstructionBank,
    codes: &LatentCodes,
    data: &MultiViewDataset,
    batch: &[usize],
    prototypes: &ClassPrototypes,
    lambda: f64,
    cfg: &StructuredLossConfig,
    reduction: ReconReduction,
    want_net_grads: bool,
) -> Result<JointEval> {
    if codes.len() != data.len() {
        return Err(Error::invalid(format!(
            "{} codes for {} subjects",
            codes.len(),
            data.len()
        )));
    }
    if codes.dim() != bank.latent_dim() {
        return Err(Error::invalid(
            "code dimension differs from the bank's latent dimension",
        ));
    }
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let d = codes.dim();
    let scale = 1.0 / batch.len() as f64;
    let mut net_grads = want_net_grads.then(|| bank.zero_grads());
    let mut code_grad = Matrix::zeros(codes.len(), d);
    // Per-class sums of d(loss)/d(prototype), spread over members afterwards.
    let mut proto_grad = [vec![0.0; d], vec![0.0; d]];
    let mut recon_sum = 0.0;
    let mut hinge_sum = 0.0;
    let mut satisfied = 0;

    for &n in batch {
        let h = codes.code(n);
        let views = data.sample(n);
        bank.check_views(&views)?;
        recon_sum += bank.accumulate(
            h,
            &views,
            reduction,
            scale,
            net_grads.as_deref_mut(),
            code_grad.row_mut(n),
        )?;
        let y = data.labels()[n];
        let s = structured_loss(h, y, prototypes, cfg)?;
        if s.is_satisfied() {
            satisfied += 1;
        } else {
            hinge_sum += s.loss;
            let w = lambda * scale;
            if w != 0.0 {
                code_grad
                    .row_mut(n)
                    .iter_mut()
                    .zip(&s.grad)
                    .for_each(|(g, sg)| *g += w * sg);
                let own = y as usize;
                let other = 1 - own;
                let inv_own = 1.0 / prototypes.counts[own] as f64;
                let inv_other = 1.0 / prototypes.counts[other] as f64;
                for k in 0..d {
                    proto_grad[other][k] += w * h[k] * inv_other;
                    proto_grad[own][k] -= w * h[k] * inv_own;
                }
            }
        }
    }
    if proto_grad.iter().flatten().any(|&g| g != 0.0) {
        for (m, &y) in data.labels().iter().enumerate() {
            code_grad
                .row_mut(m)
                .iter_mut()
                .zip(&proto_grad[y as usize])
                .for_each(|(g, p)| *g += p);
        }
    }
    let reconstruction = recon_sum * scale;
    let structured = hinge_sum * scale;
    Ok(JointEval {
        total: reconstruction + lambda * structured,
        reconstruction,
        structured,
        satisfied,
        code_grad,
        net_grads,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeRefresh {
    /// Recompute once at the start of every epoch.
    #[default]
    PerEpoch,
    /// Recompute before every code update.
    PerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepresentationConfig {
    pub latent_dim: usize,
    pub lambda: f64,
    pub structured: StructuredLossConfig,
    pub epochs: usize,
    pub net_step_size: f64,
    pub code_step_size: f64,
    /// Standard deviation of the Gaussian code initialization.
    pub init_std: f64,
    /// `None` means full batch.
    pub batch_size: Option<usize>,
    pub reduction: ReconReduction,
    pub prototype_refresh: PrototypeRefresh,
}

impl Default for RepresentationConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            lambda: 100.0,
            structured: StructuredLossConfig::default(),
            epochs: 300,
            net_step_size: 1e-3,
            code_step_size: 1e-2,
            init_std: 0.1,
            batch_size: None,
            reduction: ReconReduction::ComponentMean,
            prototype_refresh: PrototypeRefresh::PerEpoch,
        }
    }
}

impl RepresentationConfig {
    pub fn validate(&self) -> Result<()> {
        self.structured.validate()?;
        if self.latent_dim == 0 {
            return Err(Error::invalid("latent dimension must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda {} must be finite and non-negative",
                self.lambda
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::invalid("code initialization std must be positive"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.net_step_size > 0.0 && self.code_step_size > 0.0) {
            return Err(Error::invalid("step sizes must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub total: f64,
    pub reconstruction: f64,
    pub structured: f64,
    /// `lambda * structured`; exactly zero when lambda is zero.
    pub structured_contribution: f64,
    pub satisfied_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct RepresentationModel {
    pub bank: ReconstructionBank,
    pub codes: LatentCodes,
    pub prototypes: ClassPrototypes,
    pub trace: Vec<EpochRecord>,
}

/// Shuffled minibatches, or the whole index range in order for full batch.
pub(crate) fn batches(
    n: usize,
    batch_size: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    match batch_size {
        Some(b) if b < n => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            idx.chunks(b).map(<[usize]>::to_vec).collect()
        }
        _ => vec![(0..n).collect()],
    }
}

/// Learns reconstruction networks and latent codes for preprocessed
/// training data by alternating optimization.
pub fn train_representation(
    data: &MultiViewDataset,
    cfg: &RepresentationConfig,
    seed: u64,
) -> Result<RepresentationModel> {
    const STAGE: &str = "representation learning";
    cfg.validate()?;
    data.require_both_classes()?;
    let n = data.len();
    let d = cfg.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let view_dims: Vec<usize> = data.views().iter().map(|v| v.schema.dim).collect();
    let mut bank = ReconstructionBank::new(d, &view_dims, &mut rng)?;
    let init = Normal::new(0.0, cfg.init_std).expect("positive std");
    let codes = Matrix::from_vec(n, d, (0..n * d).map(|_| init.sample(&mut rng)).collect())?;
    let mut codes = LatentCodes::new(codes)?;

    let mut net_opts = bank
        .nets
        .iter()
        .map(|net| AdamState::for_net(AdamConfig::with_step_size(cfg.net_step_size), net))
        .collect::<Result<Vec<_>>>()?;
    let mut code_opt = AdamState::new(AdamConfig::with_step_size(cfg.code_step_size), &[n * d])?;
    let diverged = |epoch: usize| Error::Diverged {
        stage: STAGE,
        epoch,
    };
    let lift = |e: Error, epoch: usize| match e {
        Error::Diverged { .. } => diverged(epoch),
        other => other,
    };

    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut prototypes = ClassPrototypes::from_codes(codes.matrix(), data.labels())?;

        // Networks, codes frozen. The hinge does not depend on the networks.
        for batch in batches(n, cfg.batch_size, &mut rng) {
            let mut grads = bank.zero_grads();
            let mut scratch = vec![0.0; d];
            let scale = 1.0 / batch.len() as f64;
            for &i in &batch {
                bank.accumulate(
                    codes.code(i),
                    &data.sample(i),
                    cfg.reduction,
                    scale,
                    Some(&mut grads),
                    &mut scratch,
                )?;
            }
            for ((net, opt), g) in bank.nets.iter_mut().zip(&mut net_opts).zip(&grads) {
                opt.step_net(net, g).map_err(|e| lift(e, epoch))?;
            }
        }

        // Codes, networks frozen.
        let (mut total, mut recon, mut hinge, mut satisfied) = (0.0, 0.0, 0.0, 0usize);
        for batch in batches(n, cfg.batch_size, &mut rng) {
            if cfg.prototype_refresh == PrototypeRefresh::PerStep {
                prototypes = ClassPrototypes::from_codes(codes.matrix(), data.labels())?;
            }
            let eval = joint_objective_with(
                &bank,
                &codes,
                data,
                &batch,
                &prototypes,
                cfg.lambda,
                &cfg.structured,
                cfg.reduction,
                false,
            )?;
            let w = batch.len() as f64 / n as f64;
            total += w * eval.total;
            recon += w * eval.reconstruction;
            hinge += w * eval.structured;
            satisfied += eval.satisfied;
            code_opt
                .step_slice(codes.0.as_mut_slice(), eval.code_grad.as_slice())
                .map_err(|e| lift(e, epoch))?;
        }
        if !total.is_finite() || !codes.0.is_finite() {
            return Err(diverged(epoch));
        }
        trace.push(EpochRecord {
            total,
            reconstruction: recon,
            structured: hinge,
            structured_contribution: cfg.lambda * hinge,
            satisfied_fraction: satisfied as f64 / n as f64,
        });
    }
    let prototypes = ClassPrototypes::from_codes(codes.matrix(), data.labels())?;
    Ok(RepresentationModel {
        bank,
        codes,
        prototypes,
        trace,
    })
}

/// Fraction of subjects whose hinge is inactive under prototypes of `codes`.
pub fn margin_satisfaction(
    codes: &LatentCodes,
    labels: &[u8],
    cfg: &StructuredLossConfig,
) -> Result<f64> {
    let prototypes = ClassPrototypes::from_codes(codes.matrix(), labels)?;
    let mut ok = 0usize;
    for (n, &y) in labels.iter().enumerate() {
        if structured_loss(codes.code(n), y, &prototypes, cfg)?.is_satisfied() {
            ok += 1;
        }
    }
    Ok(ok as f64 / labels.len() as f64)
}
