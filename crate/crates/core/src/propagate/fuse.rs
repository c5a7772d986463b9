//! Temperature-softmax fusion of candidate material values at source points.

use crate::error::{Error, Result};
use crate::numeric::cosine;
use crate::propagate::source::SourcePoint;

/// Softmax of `similarity / temperature` (max-shifted) and the weighted value.
pub fn softmax_fuse(similarity: &[f64], values: &[f64], temperature: f64) -> (f64, Vec<f64>) {
    let max = similarity.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = similarity.iter().map(|w| ((w - max) / temperature).exp()).collect();
    let z: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let rho = weights.iter().zip(values).map(|(w, y)| w * y).sum::<f64>();
    // keep the result inside the hull even under rounding
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (rho.clamp(lo, hi), weights)
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > values[best] { i } else { best })
}

/// Set ω, ρ(s) and the argmax material on every point that has an embedding.
pub fn fuse_properties(points: &mut [SourcePoint], values: &[f64], text_embeddings: &[Vec<f64>], temperature: f64) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Empty("material dictionary"));
    }
    if values.len() != text_embeddings.len() {
        return Err(Error::Validation(format!("{} values but {} text embeddings", values.len(), text_embeddings.len())));
    }
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
    }
    for p in points.iter_mut() {
        let Some(e) = &p.embedding else {
            p.material_similarity.clear();
            p.property_value = None;
            p.material = None;
            continue;
        };
        let sims: Vec<f64> = text_embeddings.iter().map(|t| cosine(e, t)).collect();
        let (rho, _) = softmax_fuse(&sims, values, temperature);
        p.material = Some(argmax(&sims));
        p.property_value = Some(rho);
        p.material_similarity = sims;
    }
    Ok(())
}
