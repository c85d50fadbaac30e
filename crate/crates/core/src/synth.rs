//! Seeded synthetic multi-view data.
//!
//! Each view `v` gets a random unit direction `u_v`; class `c` is centred at
//! `(c - 1/2) * separation * u_v`, so the two class means are `separation`
//! apart in every view. Samples add isotropic noise with the view's own
//! scale, so a noisy view carries little class information on its own while
//! the views together still separate well. Optional shared factors add
//! variation that is correlated across views and unrelated to the class,
//! and `scale_decades` spreads the raw per-feature scales (and offsets) over
//! several orders of magnitude.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{validate_schema, MultiViewDataset, View, ViewSchema};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_per_class: usize,
    pub schema: Vec<ViewSchema>,
    pub class_separation: f64,
    pub noise_per_view: Vec<f64>,
    /// Number of class-independent latent factors shared by all views.
    #[serde(default)]
    pub shared_factors: usize,
    /// Standard deviation of each shared factor's contribution per feature.
    #[serde(default)]
    pub shared_scale: f64,
    /// Raw feature scales are drawn log-uniformly over this many decades.
    #[serde(default)]
    pub scale_decades: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(
        n_per_class: usize,
        schema: Vec<ViewSchema>,
        class_separation: f64,
        noise: f64,
        seed: u64,
    ) -> Self {
        let noise_per_view = vec![noise; schema.len()];
        Self {
            n_per_class,
            schema,
            class_separation,
            noise_per_view,
            shared_factors: 0,
            shared_scale: 0.0,
            scale_decades: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        validate_schema(&self.schema)?;
        if self.n_per_class == 0 {
            return Err(Error::invalid("n_per_class must be at least 1"));
        }
        if self.noise_per_view.len() != self.schema.len() {
            return Err(Error::invalid(format!(
                "{} noise levels for {} views",
                self.noise_per_view.len(),
                self.schema.len()
            )));
        }
        if let Some(bad) = self
            .noise_per_view
            .iter()
            .find(|s| !(**s > 0.0 && s.is_finite()))
        {
            return Err(Error::invalid(format!(
                "noise level {bad} must be positive"
            )));
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return Err(Error::invalid(
                "class separation must be finite and non-negative",
            ));
        }
        if !(self.shared_scale >= 0.0 && self.shared_scale.is_finite()) {
            return Err(Error::invalid(
                "shared factor scale must be finite and non-negative",
            ));
        }
        if !(self.scale_decades >= 0.0 && self.scale_decades.is_finite()) {
            return Err(Error::invalid(
                "scale decades must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

struct ViewModel {
    direction: Vec<f64>,
    loadings: Matrix,
    scales: Vec<f64>,
    offsets: Vec<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn synth_generate(spec: &SynthSpec) -> Result<MultiViewDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.shared_factors;

    let models: Vec<ViewModel> = spec
        .schema
        .iter()
        .map(|v| {
            let mut direction: Vec<f64> = (0..v.dim).map(|_| gaussian(&mut rng)).collect();
            let norm = direction
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            direction.iter_mut().for_each(|x| *x /= norm);
            let mut loadings = Matrix::zeros(v.dim, k);
            for x in loadings.as_mut_slice() {
                *x = gaussian(&mut rng) * spec.shared_scale / (k.max(1) as f64).sqrt();
            }
            let (scales, offsets) = if spec.scale_decades > 0.0 {
                let exponent =
                    Uniform::new_inclusive(0.0, spec.scale_decades).expect("finite range");
                let scales: Vec<f64> = (0..v.dim)
                    .map(|_| 10f64.powf(exponent.sample(&mut rng)))
                    .collect();
                let offsets = scales
                    .iter()
                    .map(|s| s * rng.random_range(-5.0..5.0))
                    .collect();
                (scales, offsets)
            } else {
                (vec![1.0; v.dim], vec![0.0; v.dim])
            };
            ViewModel {
                direction,
                loadings,
                scales,
                offsets,
            }
        })
        .collect();

    let n = 2 * spec.n_per_class;
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i >= spec.n_per_class)).collect();
    labels.shuffle(&mut rng);

    let mut features: Vec<Matrix> = spec
        .schema
        .iter()
        .map(|v| Matrix::zeros(n, v.dim))
        .collect();
    let mut factors = vec![0.0; k];
    for (i, &y) in labels.iter().enumerate() {
        factors.iter_mut().for_each(|f| *f = gaussian(&mut rng));
        let shift = (f64::from(y) - 0.5) * spec.class_separation;
        for (v, model) in models.iter().enumerate() {
            let noise = spec.noise_per_view[v];
            let row = features[v].row_mut(i);
            for (j, x) in row.iter_mut().enumerate() {
                let shared: f64 = model
                    .loadings
                    .row(j)
                    .iter()
                    .zip(&factors)
                    .map(|(l, f)| l * f)
                    .sum();
                let latent = shift * model.direction[j] + shared + noise * gaussian(&mut rng);
                *x = model.offsets[j] + model.scales[j] * latent;
            }
        }
    }

    let width = (n.max(2) as f64).log10().ceil() as usize;
    let ids = (0..n).map(|i| format!("subj{:0width$}", i + 1)).collect();
    let views = spec
        .schema
        .iter()
        .cloned()
        .zip(features)
        .map(|(schema, features)| View { schema, features })
        .collect();
    MultiViewDataset::new(ids, views, labels)
}
