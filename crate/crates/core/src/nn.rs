//! Dense network engine: forward evaluation with cached activations,
//! analytic backpropagation, losses and the adaptive-moment optimizer.
//!
//! Every network in the pipeline (reconstruction nets, the latent regressor,
//! the latent classifier and the NN baseline) is a [`DenseNet`]. Weights are
//! stored row-major with shape `(out_dim, in_dim)`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp applied to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One fully-connected layer: `a = activation(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("layer dims must be > 0"));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::invalid(format!(
                "weight matrix has {} entries, expected {out_dim}x{in_dim}",
                weights.len()
            )));
        }
        if biases.len() != out_dim {
            return Err(Error::invalid(format!(
                "bias vector has {} entries, expected {out_dim}",
                biases.len()
            )));
        }
        if !weights.iter().chain(&biases).all(|v| v.is_finite()) {
            return Err(Error::invalid("layer parameters must be finite"));
        }
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            weights,
            biases,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn xavier<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("layer dims must be > 0"));
        }
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let weights = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            weights,
            biases: vec![0.0; out_dim],
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    fn affine_into(&self, x: &[f64], z: &mut Vec<f64>) {
        z.clear();
        z.extend(
            self.weights
                .chunks_exact(self.in_dim)
                .zip(&self.biases)
                .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b),
        );
    }
}

/// Fully-connected stack with a per-layer activation tag.
#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<Layer>,
    // Bumped by every parameter update so stale caches are detectable.
    revision: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Per-layer pre- and post-activations recorded by [`DenseNet::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    revision: u64,
    // activations[0] is the input, activations[l + 1] the output of layer l.
    activations: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations
            .last()
            .expect("cache holds the input at least")
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.activations
            .pop()
            .expect("cache holds the input at least")
    }
}

impl DenseNet {
    /// Freshly initialized network; `dims[0]` is the input dimension.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("a network needs at least one layer"));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::invalid(format!(
                "{} activation tags for {} layers",
                activations.len(),
                dims.len() - 1
            )));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| Layer::xavier(w[0], w[1], act, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers,
            revision: 0,
        })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::invalid(format!(
                    "layer output {} does not feed next layer input {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(Self {
            layers,
            revision: 0,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("network input contains non-finite values"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(x.to_vec());
        for layer in &self.layers {
            let mut z = Vec::with_capacity(layer.out_dim);
            layer.affine_into(activations.last().unwrap(), &mut z);
            let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(ForwardCache {
            revision: self.revision,
            activations,
            pre_activations,
        })
    }

    /// Output only, without keeping intermediate activations.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.affine_into(&cur, &mut next);
            for v in next.iter_mut() {
                *v = layer.activation.apply(*v);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        let shapes_match = cache.pre_activations.len() == self.layers.len()
            && cache.activations.len() == self.layers.len() + 1
            && cache.activations[0].len() == self.input_dim()
            && self
                .layers
                .iter()
                .zip(&cache.pre_activations)
                .all(|(l, z)| z.len() == l.out_dim);
        if !shapes_match {
            return Err(Error::invalid("forward cache does not match this network"));
        }
        if cache.revision != self.revision {
            return Err(Error::invalid(
                "forward cache is stale: network parameters changed since it was recorded",
            ));
        }
        Ok(())
    }

    /// Gradients of a scalar loss given `upstream = dL/d(output)`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<GradientSet> {
        let mut grads = GradientSet::zeros_like(self);
        let input = self.accumulate_gradients(cache, upstream, &mut grads)?;
        grads.input = Some(input);
        Ok(grads)
    }

    /// Adds this sample's parameter gradients into `grads` and returns `dL/dx`.
    pub fn accumulate_gradients(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut GradientSet,
    ) -> Result<Vec<f64>> {
        if !grads.congruent_with(self) {
            return Err(Error::invalid("gradient set does not match this network"));
        }
        self.backprop(cache, upstream, Some(grads))
    }

    /// `dL/dx` alone, skipping parameter gradients.
    pub fn input_gradient(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Vec<f64>> {
        self.backprop(cache, upstream, None)
    }

    fn backprop(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        mut grads: Option<&mut GradientSet>,
    ) -> Result<Vec<f64>> {
        self.check_cache(cache)?;
        if upstream.len() != self.output_dim() {
            return Err(Error::invalid(format!(
                "upstream gradient has length {}, network output is {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let mut delta: Vec<f64> = upstream.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre_activations[l];
            let a = &cache.activations[l + 1];
            for ((d, &zi), &ai) in delta.iter_mut().zip(z).zip(a) {
                *d *= layer.activation.derivative(zi, ai);
            }
            if let Some(grads) = grads.as_deref_mut() {
                let input = &cache.activations[l];
                let gw = &mut grads.weights[l];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (g, &xi) in row.iter_mut().zip(input) {
                        *g += d * xi;
                    }
                }
                for (g, &d) in grads.biases[l].iter_mut().zip(&delta) {
                    *g += d;
                }
            }

            let mut prev = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.biases.as_mut_slice()])
            .collect()
    }

    fn block_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.len(), l.biases.len()])
            .collect()
    }

    /// Mutable access to one layer's parameters; invalidates outstanding caches.
    pub fn layer_params_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        self.revision += 1;
        let layer = &mut self.layers[l];
        (&mut layer.weights, &mut layer.biases)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }
}

/// Gradients shaped like a [`DenseNet`], plus an optional input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input: Option<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.biases.len()])
                .collect(),
            input: None,
        }
    }

    pub fn congruent_with(&self, net: &DenseNet) -> bool {
        self.weights.len() == net.layers.len()
            && self.biases.len() == net.layers.len()
            && net
                .layers
                .iter()
                .zip(self.weights.iter().zip(&self.biases))
                .all(|(l, (w, b))| w.len() == l.weights.len() && b.len() == l.biases.len())
    }

    pub fn scale(&mut self, s: f64) {
        for v in self
            .weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .flatten()
        {
            *v *= s;
        }
        if let Some(input) = &mut self.input {
            input.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .chain(self.input.iter().flatten())
            .all(|v| v.is_finite())
    }

    fn blocks(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_step_size(step_size: f64) -> Self {
        Self {
            step_size,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.step_size > 0.0
            && self.step_size.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && (0.0..1.0).contains(&self.beta2)
            && self.beta2 > 0.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

/// Adaptive moment estimation with bias correction.
///
/// Moments are kept per parameter block; the block layout is fixed at
/// construction and every step must present congruent blocks.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, block_sizes: &[usize]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            first: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn for_net(config: AdamConfig, net: &DenseNet) -> Result<Self> {
        Self::new(config, &net.block_sizes())
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Changes the step size for subsequent updates (for decay schedules).
    pub fn set_step_size(&mut self, step_size: f64) {
        self.config.step_size = step_size;
    }

    /// One update over matching parameter/gradient blocks.
    ///
    /// Gradients are checked before anything is written, so a rejected step
    /// leaves both the parameters and the moments untouched.
    pub fn step_blocks(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        let congruent = params.len() == self.first.len()
            && grads.len() == self.first.len()
            && self
                .first
                .iter()
                .zip(params.iter().zip(grads))
                .all(|(m, (p, g))| m.len() == p.len() && m.len() == g.len());
        if !congruent {
            return Err(Error::invalid(
                "optimizer state does not match parameter shapes",
            ));
        }
        if !grads.iter().all(|g| g.iter().all(|v| v.is_finite())) {
            return Err(Error::Diverged {
                stage: "optimizer step",
                epoch: self.step as usize,
            });
        }
        self.step += 1;
        let AdamConfig {
            step_size,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first[b];
            let v = &mut self.second[b];
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= step_size * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.step_blocks(&mut [params], &[grads])
    }

    pub fn step_net(&mut self, net: &mut DenseNet, grads: &GradientSet) -> Result<()> {
        if !grads.congruent_with(net) {
            return Err(Error::invalid("gradient set does not match this network"));
        }
        let g = grads.blocks();
        net.revision += 1;
        let mut p = net.param_blocks_mut();
        self.step_blocks(&mut p, &g)
    }
}

/// Mean squared error over components, with its gradient w.r.t. `pred`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::invalid(format!(
            "prediction length {} differs from target length {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("mse of empty vectors"));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Binary cross-entropy of a probability against a {0,1} label.
///
/// Returns the loss and its derivative w.r.t. `p`, both evaluated at `p`
/// clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub fn binary_cross_entropy(p: f64, y: u8) -> (f64, f64) {
    debug_assert!(y <= 1, "label must be 0 or 1");
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if y == 1 {
        (-p.ln(), -1.0 / p)
    } else {
        (-(1.0 - p).ln(), 1.0 / (1.0 - p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(w: f64, b: f64, act: Activation) -> DenseNet {
        DenseNet::from_layers(vec![Layer::new(1, 1, vec![w], vec![b], act).unwrap()]).unwrap()
    }

    #[test]
    fn forward_scalar_cases() {
        assert_eq!(
            single(1.0, 0.0, Activation::Linear)
                .predict(&[3.0])
                .unwrap(),
            vec![3.0]
        );
        assert_eq!(
            single(2.0, 1.0, Activation::Linear)
                .predict(&[3.0])
                .unwrap(),
            vec![7.0]
        );
        assert_eq!(
            single(1.0, 0.0, Activation::Sigmoid)
                .predict(&[0.0])
                .unwrap(),
            vec![0.5]
        );
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let net = single(1.0, 0.0, Activation::Linear);
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn half_squared_error_gradient() {
        // L = 0.5 (y - t)^2 with y = w x + b; dL/dy = y - t = 2.
        let net = single(1.0, 0.0, Activation::Linear);
        let cache = net.forward(&[2.0]).unwrap();
        let g = net.backward(&cache, &[cache.output()[0] - 0.0]).unwrap();
        assert_eq!(g.weights[0], vec![4.0]);
        assert_eq!(g.biases[0], vec![2.0]);
        assert_eq!(g.input.unwrap(), vec![2.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::new(
            &[3, 4, 2],
            &[Activation::Sigmoid, Activation::Linear],
            &mut rng,
        )
        .unwrap();
        let cache = net.forward(&[0.1, -0.3, 0.7]).unwrap();
        let g = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(g
            .weights
            .iter()
            .chain(&g.biases)
            .flatten()
            .all(|&v| v == 0.0));
        assert!(g.input.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = DenseNet::new(&[2, 2], &[Activation::Linear], &mut rng).unwrap();
        let cache = net.forward(&[1.0, 1.0]).unwrap();
        let g = net.backward(&cache, &[1.0, 1.0]).unwrap();
        let mut opt = AdamState::for_net(AdamConfig::default(), &net).unwrap();
        opt.step_net(&mut net, &g).unwrap();
        assert!(net.backward(&cache, &[1.0, 1.0]).is_err());

        let other = DenseNet::new(&[3, 2], &[Activation::Linear], &mut rng).unwrap();
        let foreign = other.forward(&[1.0, 1.0, 1.0]).unwrap();
        assert!(net.backward(&foreign, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap().0, 0.0);
        assert_eq!(mse_loss(&[0.0], &[2.0]).unwrap().0, 4.0);
        let (l, g) = mse_loss(&[1.0, 3.0], &[0.0, 0.0]).unwrap();
        assert_eq!(l, 5.0);
        assert_eq!(g, vec![1.0, 3.0]);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn bce_cases() {
        assert!((binary_cross_entropy(0.5, 1).0 - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(binary_cross_entropy(1.0 - PROB_EPS, 1).0 < 1e-6);
        assert!((binary_cross_entropy(0.9, 0).0 - std::f64::consts::LN_10).abs() < 1e-9);
        // clamping keeps extreme inputs finite
        assert!(binary_cross_entropy(0.0, 1).0.is_finite());
        assert!(binary_cross_entropy(1.0, 0).0.is_finite());
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = vec![1.5, -2.0];
        let mut opt = AdamState::new(AdamConfig::default(), &[2]).unwrap();
        opt.step_slice(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn adam_constant_gradient_decreases() {
        let mut p = vec![0.0];
        let mut opt = AdamState::new(AdamConfig::default(), &[1]).unwrap();
        let mut prev = p[0];
        for _ in 0..100 {
            opt.step_slice(&mut p, &[1.0]).unwrap();
            assert!(p[0] < prev);
            prev = p[0];
        }
    }

    #[test]
    fn adam_quadratic_bowl() {
        let mut p = vec![5.0];
        let mut opt = AdamState::new(AdamConfig::with_step_size(0.05), &[1]).unwrap();
        for _ in 0..500 {
            let g = 2.0 * p[0];
            opt.step_slice(&mut p, &[g]).unwrap();
        }
        assert!(p[0].abs() < 0.1, "theta = {}", p[0]);
    }

    #[test]
    fn adam_rejects_non_finite_without_mutating() {
        let mut p = vec![1.0];
        let mut opt = AdamState::new(AdamConfig::default(), &[1]).unwrap();
        let err = opt.step_slice(&mut p, &[f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
        assert_eq!(p, vec![1.0]);
        assert_eq!(opt.steps(), 0);
    }
}
