//! Reconstruction loss evaluators: photometric L1/SSIM, edge-weighted depth–normal
//! consistency, and the opacity sparsity term.

pub mod geometry;
pub mod ssim;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CameraView, GaussianCloud, Image};
use crate::numeric::compensated_sum;
use crate::render::RenderBuffers;

pub use geometry::{depth_normals, geometry_loss, image_gradient_weight, EdgeWeightMode};
pub use ssim::ssim;

/// Opacities are clamped into `[OPACITY_EPS, 1 - OPACITY_EPS]` before taking logs.
pub const OPACITY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_ssim: f64,
    pub lambda_geo: f64,
    pub lambda_sparse: f64,
    pub edge_weight_mode: EdgeWeightMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ssim: 0.2,
            lambda_geo: 0.05,
            lambda_sparse: 0.001,
            edge_weight_mode: EdgeWeightMode::AsPrinted,
        }
    }
}

impl LossWeights {
    /// The same weights with both geometry-aware terms switched off.
    pub fn without_garl(self) -> Self {
        Self {
            lambda_geo: 0.0,
            lambda_sparse: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_ssim) {
            return Err(Error::Config(format!("lambda_ssim {} outside [0, 1]", self.lambda_ssim)));
        }
        if self.lambda_geo < 0.0 || self.lambda_sparse < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// `(1 − λ)·mean|A − B| + λ·(1 − SSIM(A, B))`.
pub fn photometric_loss(rendered: &Image, target: &Image, lambda_ssim: f64) -> Result<f64> {
    if !rendered.same_shape(target) {
        return Err(Error::Validation(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            rendered.width, rendered.height, rendered.channels, target.width, target.height, target.channels
        )));
    }
    let l1 = compensated_sum(rendered.data.iter().zip(&target.data).map(|(a, b)| (a - b).abs()))
        / rendered.data.len() as f64;
    let ssim_term = if lambda_ssim > 0.0 { 1.0 - ssim(rendered, target) } else { 0.0 };
    Ok((1.0 - lambda_ssim) * l1 + lambda_ssim * ssim_term)
}

/// Mean of `ln σ + ln(1 − σ)` over activated opacities.
pub fn sparse_loss(opacities: &[f64]) -> Result<f64> {
    if opacities.is_empty() {
        return Err(Error::Empty("opacity list"));
    }
    let sum = compensated_sum(opacities.iter().map(|&s| {
        let s = s.clamp(OPACITY_EPS, 1.0 - OPACITY_EPS);
        s.ln() + (1.0 - s).ln()
    }));
    Ok(sum / opacities.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub photometric: f64,
    pub geometry: f64,
    pub sparse: f64,
    pub total: f64,
}

/// One JSON-lines record of a loss evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub view: String,
    #[serde(flatten)]
    pub breakdown: LossBreakdown,
}

/// `L_3dgs + λ₁ L_geo + λ₂ L_sparse` with the individual terms.
///
/// The view's image is the photometric target and the edge-weight guide. Terms with zero
/// weight are not evaluated and report 0.
pub fn total_loss(buffers: &RenderBuffers, view: &CameraView, cloud: &GaussianCloud, weights: &LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    let target = view
        .image
        .as_ref()
        .ok_or_else(|| Error::Validation(format!("view {} has no image", view.name)))?;
    let rendered = buffers
        .rgb
        .as_ref()
        .ok_or_else(|| Error::Validation("render has no rgb buffer".into()))?;
    let photometric = photometric_loss(rendered, target, weights.lambda_ssim)?;
    let geometry = if weights.lambda_geo > 0.0 {
        geometry_loss(buffers, view, target, weights.edge_weight_mode)?
    } else {
        0.0
    };
    let sparse = if weights.lambda_sparse > 0.0 {
        let opacities: Vec<f64> = cloud.gaussians.iter().map(|g| g.opacity()).collect();
        sparse_loss(&opacities)?
    } else {
        0.0
    };
    Ok(LossBreakdown {
        photometric,
        geometry,
        sparse,
        total: photometric + weights.lambda_geo * geometry + weights.lambda_sparse * sparse,
    })
}
