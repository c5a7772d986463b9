//! Region-aware per-Gaussian features trained from multi-view masks.

pub mod contrastive;
pub mod optim;
pub mod pairs;
pub mod train;

pub use contrastive::{contrastive_loss, feature_gradients, norm_regularizer, pair_term, region_loss, FeatureGradients};
pub use optim::{Adam, Optimizer, OptimizerKind, Sgd};
pub use pairs::{sample_pixel_pairs, PixelPair, PixelPairBatch, PAIR_VALID_ALPHA};
pub use train::{
    evaluate_objective, evaluation_batches, init_features, precompute_view_weights, train_features, TrainRecord,
    TrainedFeatures, TrainerConfig, ViewWeights,
};

use crate::numeric::cosine;

/// Mean pairwise cosine similarity within and across groups of feature rows.
///
/// Returns `(intra, inter)`; pairs of a row with itself are excluded.
pub fn group_similarity(features: &[f64], dim: usize, group_of: &[usize]) -> (f64, f64) {
    let n = group_of.len();
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            let s = cosine(&features[i * dim..(i + 1) * dim], &features[j * dim..(j + 1) * dim]);
            if group_of[i] == group_of[j] {
                intra += s;
                n_intra += 1;
            } else {
                inter += s;
                n_inter += 1;
            }
        }
    }
    (intra / n_intra.max(1) as f64, inter / n_inter.max(1) as f64)
}
