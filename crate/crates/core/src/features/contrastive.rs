//! Region contrastive loss on rendered feature maps, the feature-norm regularizer, and their
//! exact gradients with respect to per-Gaussian features.

use crate::error::{Error, Result};
use crate::features::pairs::{PixelPairBatch, PAIR_VALID_ALPHA};
use crate::model::Image;
use crate::numeric::{cosine, norm};
use crate::render::{FeatureTable, PixelWeights};

/// `[1 − 2·same]·max(cos, 0)` for one pair.
pub fn pair_term(f1: &[f64], f2: &[f64], same_mask: bool) -> f64 {
    let sign = if same_mask { -1.0 } else { 1.0 };
    sign * cosine(f1, f2).max(0.0)
}

/// Mean pair term over the batch.
pub fn contrastive_loss(feature_map: &Image, batch: &PixelPairBatch) -> Result<f64> {
    if batch.pairs.is_empty() {
        return Err(Error::Empty("pixel pair batch"));
    }
    let sum: f64 = batch
        .pairs
        .iter()
        .map(|p| pair_term(feature_map.pixel(p.p1 as usize), feature_map.pixel(p.p2 as usize), p.same_mask))
        .sum();
    Ok(sum / batch.pairs.len() as f64)
}

/// Mean of `1 − ‖F(p)‖₂` over pixels with alpha ≥ 0.5 (all pixels when `alpha` is `None`).
pub fn norm_regularizer(feature_map: &Image, alpha: Option<&Image>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in 0..feature_map.pixel_count() {
        if alpha.is_some_and(|a| a.data[p] < PAIR_VALID_ALPHA) {
            continue;
        }
        sum += 1.0 - norm(feature_map.pixel(p));
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Loss value and per-Gaussian gradient (`N × D`, row-major).
#[derive(Debug, Clone)]
pub struct FeatureGradients {
    pub loss: f64,
    pub contrastive: f64,
    pub norm: f64,
    pub grads: Vec<f64>,
}

/// Adds the derivative of `scale·cos(a, b)` with respect to `a` into `out`.
fn add_cosine_grad(a: &[f64], b: &[f64], scale: f64, out: &mut [f64]) {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return;
    }
    let cos = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    for k in 0..a.len() {
        out[k] += scale * (b[k] / (na * nb) - cos * a[k] / (na * na));
    }
}

/// Gradient of `contrastive_loss + norm_regularizer` with respect to every feature row.
///
/// Rendered features are `F(p) = Σ_i w_i(p) f_i` with the blend weights held fixed, so the
/// chain rule through the compositing is exact.
pub fn feature_gradients(features: FeatureTable<'_>, weights: &PixelWeights, batch: &PixelPairBatch) -> Result<FeatureGradients> {
    if batch.pairs.is_empty() {
        return Err(Error::Empty("pixel pair batch"));
    }
    let dim = features.dim;
    let fmap = weights.feature_map(features);
    let alpha = weights.alpha_image();
    let mut d_map = vec![0.0; fmap.data.len()];

    let inv_b = 1.0 / batch.pairs.len() as f64;
    let mut contrastive = 0.0;
    for p in &batch.pairs {
        let (i1, i2) = (p.p1 as usize, p.p2 as usize);
        let (f1, f2) = (fmap.pixel(i1), fmap.pixel(i2));
        let cos = cosine(f1, f2);
        let sign = if p.same_mask { -1.0 } else { 1.0 };
        contrastive += sign * cos.max(0.0);
        if cos > 0.0 {
            let s = sign * inv_b;
            add_cosine_grad(f1, f2, s, &mut d_map[i1 * dim..(i1 + 1) * dim]);
            add_cosine_grad(f2, f1, s, &mut d_map[i2 * dim..(i2 + 1) * dim]);
        }
    }
    contrastive *= inv_b;

    let valid: Vec<usize> = (0..fmap.pixel_count())
        .filter(|&p| alpha.data[p] >= PAIR_VALID_ALPHA)
        .collect();
    let mut norm_term = 0.0;
    if !valid.is_empty() {
        let inv_n = 1.0 / valid.len() as f64;
        for &p in &valid {
            let f = fmap.pixel(p);
            let n = norm(f);
            norm_term += 1.0 - n;
            if n > 0.0 {
                for k in 0..dim {
                    d_map[p * dim + k] -= inv_n * f[k] / n;
                }
            }
        }
        norm_term *= inv_n;
    }

    let gaussians = features.data.len() / dim.max(1);
    let mut grads = vec![0.0; gaussians * dim];
    for p in 0..fmap.pixel_count() {
        let d = &d_map[p * dim..(p + 1) * dim];
        if d.iter().all(|&v| v == 0.0) {
            continue;
        }
        for &(i, w) in weights.pixel(p) {
            let row = &mut grads[i as usize * dim..(i as usize + 1) * dim];
            for k in 0..dim {
                row[k] += w * d[k];
            }
        }
    }
    Ok(FeatureGradients {
        loss: contrastive + norm_term,
        contrastive,
        norm: norm_term,
        grads,
    })
}

/// The same objective evaluated without gradients.
pub fn region_loss(features: FeatureTable<'_>, weights: &PixelWeights, batch: &PixelPairBatch) -> Result<f64> {
    let fmap = weights.feature_map(features);
    let alpha = weights.alpha_image();
    Ok(contrastive_loss(&fmap, batch)? + norm_regularizer(&fmap, Some(&alpha)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::pairs::PixelPair;

    fn batch(pairs: Vec<PixelPair>) -> PixelPairBatch {
        PixelPairBatch { view: 0, pairs, single_mask: false }
    }

    fn map(rows: &[&[f64]]) -> Image {
        Image {
            width: rows.len(),
            height: 1,
            channels: rows[0].len(),
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    #[test]
    fn pair_term_cases() {
        let m = map(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[-1.0, 3f64.sqrt()]]);
        let same = batch(vec![PixelPair { p1: 0, p2: 1, same_mask: true }]);
        assert!((contrastive_loss(&m, &same).unwrap() + 1.0).abs() < 1e-15);
        let ortho = batch(vec![PixelPair { p1: 0, p2: 2, same_mask: false }]);
        assert_eq!(contrastive_loss(&m, &ortho).unwrap(), 0.0);
        // cos = -0.5 is clipped by the hinge
        let neg = batch(vec![PixelPair { p1: 0, p2: 3, same_mask: false }]);
        assert_eq!(contrastive_loss(&m, &neg).unwrap(), 0.0);
    }

    #[test]
    fn zero_rows_have_zero_similarity() {
        let m = map(&[&[0.0, 0.0], &[1.0, 0.0]]);
        let b = batch(vec![PixelPair { p1: 0, p2: 1, same_mask: true }]);
        assert_eq!(contrastive_loss(&m, &b).unwrap(), 0.0);
    }

    #[test]
    fn norm_regularizer_extremes() {
        let unit = map(&[&[1.0, 0.0], &[0.6, 0.8]]);
        assert!(norm_regularizer(&unit, None).abs() < 1e-15);
        let zero = map(&[&[0.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(norm_regularizer(&zero, None), 1.0);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let m = map(&[&[1.0]]);
        assert!(contrastive_loss(&m, &batch(vec![])).is_err());
    }
}
