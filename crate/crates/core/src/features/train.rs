//! Feature training loop: frozen blend weights per view, sampled pixel pairs, first-order updates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::contrastive::{feature_gradients, region_loss};
use crate::features::optim::{make_optimizer, OptimizerKind};
use crate::features::pairs::{sample_pixel_pairs, PixelPairBatch};
use crate::model::{CameraView, GaussianCloud, MaskMap};
use crate::render::{project, render_feature_weights, FeatureTable, PixelWeights, RenderSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub iterations: usize,
    pub pairs_per_iteration: usize,
    pub learning_rate: f64,
    pub feature_dim: usize,
    pub optimizer: OptimizerKind,
    /// Fraction of same-mask pairs per batch.
    pub pair_balance: f64,
    /// Standard deviation of the normal initialization.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            pairs_per_iteration: 4096,
            learning_rate: 2.5e-3,
            feature_dim: 32,
            optimizer: OptimizerKind::Adam,
            pair_balance: 0.5,
            init_std: 0.01,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairs_per_iteration == 0 || self.feature_dim == 0 {
            return Err(Error::Config("pairs_per_iteration and feature_dim must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.pair_balance) || !(self.init_std >= 0.0) {
            return Err(Error::Config("pair_balance must lie in [0, 1] and init_std be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Frozen blend weights and mask for one training view.
#[derive(Debug, Clone)]
pub struct ViewWeights {
    /// Index into the caller's view list.
    pub view: usize,
    pub weights: PixelWeights,
    pub mask: MaskMap,
}

/// Weights for every view that carries a mask map, computed in parallel.
pub fn precompute_view_weights(cloud: &GaussianCloud, views: &[CameraView], near_clip: f64) -> Vec<ViewWeights> {
    views
        .par_iter()
        .enumerate()
        .filter_map(|(i, v)| {
            let mask = v.mask.clone()?;
            let projected = project(cloud, v, near_clip);
            Some(ViewWeights {
                view: i,
                weights: render_feature_weights(&projected, v.width, v.height),
                mask,
            })
        })
        .collect()
}

/// `N × dim` features drawn from `N(0, std²)`.
pub fn init_features(count: usize, dim: usize, std: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if std == 0.0 {
        return vec![0.0; count * dim];
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..count * dim).map(|_| normal.sample(&mut rng)).collect()
}

/// Seed of the pair batch drawn at `iteration`.
pub fn batch_seed(seed: u64, iteration: usize) -> u64 {
    seed ^ (iteration as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub view: usize,
    pub loss: f64,
    pub contrastive: f64,
    pub norm: f64,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub single_mask: bool,
}

#[derive(Debug, Clone)]
pub struct TrainedFeatures {
    pub cloud: GaussianCloud,
    pub history: Vec<TrainRecord>,
}

/// Optimize per-Gaussian features against the masks of `views`; geometry stays frozen.
pub fn train_features(cloud: &GaussianCloud, views: &[CameraView], config: &TrainerConfig) -> Result<TrainedFeatures> {
    config.validate()?;
    cloud.require_nonempty()?;
    let caches = precompute_view_weights(cloud, views, RenderSettings::default().near_clip);
    if caches.is_empty() {
        return Err(Error::Config("feature training needs at least one view with a mask map".into()));
    }
    let dim = config.feature_dim;
    let mut features = init_features(cloud.len(), dim, config.init_std, config.seed);
    let mut optimizer = make_optimizer(config.optimizer, features.len(), config.learning_rate);
    let mut history = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let cache = &caches[it % caches.len()];
        let alpha = cache.weights.alpha_image();
        let batch = match sample_pixel_pairs(
            &cache.mask,
            Some(&alpha),
            config.pairs_per_iteration,
            batch_seed(config.seed, it),
            config.pair_balance,
            cache.view,
        ) {
            Ok(b) => b,
            Err(Error::Validation(msg)) => {
                log::warn!("iteration {it}: {msg}; skipped");
                continue;
            }
            Err(e) => return Err(e),
        };
        if batch.single_mask && it < caches.len() {
            log::warn!("view {} has a single mask; all pairs are same-mask", cache.view);
        }
        let g = feature_gradients(FeatureTable { data: &features, dim }, &cache.weights, &batch)?;
        history.push(TrainRecord {
            iteration: it,
            view: cache.view,
            loss: g.loss,
            contrastive: g.contrastive,
            norm: g.norm,
            single_mask: batch.single_mask,
        });
        optimizer.step(&mut features, &g.grads);
    }

    let mut out = cloud.clone();
    out.set_features(&features, dim);
    Ok(TrainedFeatures { cloud: out, history })
}

/// Fixed evaluation batches, one per cached view, for comparing feature states.
pub fn evaluation_batches(caches: &[ViewWeights], pairs: usize, seed: u64) -> Result<Vec<PixelPairBatch>> {
    caches
        .iter()
        .map(|c| sample_pixel_pairs(&c.mask, Some(&c.weights.alpha_image()), pairs, seed, 0.5, c.view))
        .collect()
}

/// Mean objective over `batches` for the given feature matrix.
pub fn evaluate_objective(features: &[f64], dim: usize, caches: &[ViewWeights], batches: &[PixelPairBatch]) -> Result<f64> {
    let mut total = 0.0;
    for (c, b) in caches.iter().zip(batches) {
        total += region_loss(FeatureTable { data: features, dim }, &c.weights, b)?;
    }
    Ok(total / batches.len().max(1) as f64)
}
