//! Property fusion at surface source points and propagation to every Gaussian.

pub mod assign;
pub mod embedding;
pub mod fuse;
pub mod gather;
pub mod source;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use assign::{propagate, propagate_nn_baseline, Assignment, SpatialGrid};
pub use embedding::{
    text_key, text_prompt, ArchiveEntry, ArchiveManifest, EmbeddingArchive, EmbeddingProvider,
    HttpEmbeddings, PatchKey, PatchRequest, RequestsManifest, SyntheticEmbeddings, TextRequest, DEFAULT_TEXT_TEMPLATE,
};
pub use fuse::{argmax, fuse_properties, softmax_fuse};
pub use gather::{observe, patch_requests, plan_observations, project_and_gather, render_depth_buffers, surface_depth, GatherSettings};
pub use source::{sample_source_points, SourcePoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationConfig {
    /// Voxel edge as a fraction of the bounding-box diagonal of the Gaussian centers.
    pub voxel_fraction: f64,
    /// Absolute voxel edge; overrides `voxel_fraction` when set.
    pub voxel_size: Option<f64>,
    pub patch_size: u32,
    pub temperature: f64,
    /// Depth-test slack as a fraction of the scene extent.
    pub depth_tolerance_fraction: f64,
    pub text_template: String,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            voxel_fraction: 0.02,
            voxel_size: None,
            patch_size: 65,
            temperature: 0.1,
            depth_tolerance_fraction: 0.01,
            text_template: DEFAULT_TEXT_TEMPLATE.into(),
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size % 2 == 0 || self.patch_size == 0 {
            return Err(Error::Config(format!("patch_size must be odd, got {}", self.patch_size)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if self.voxel_size.is_none() && !(self.voxel_fraction > 0.0) {
            return Err(Error::Config("voxel_fraction must be > 0".into()));
        }
        if let Some(v) = self.voxel_size {
            if !(v > 0.0) {
                return Err(Error::Config(format!("voxel_size must be > 0, got {v}")));
            }
        }
        if !self.text_template.contains("{material}") {
            return Err(Error::Config("text_template must contain `{material}`".into()));
        }
        Ok(())
    }

    pub fn voxel_size_for(&self, diagonal: f64) -> f64 {
        self.voxel_size.unwrap_or(self.voxel_fraction * diagonal)
    }

    pub fn gather_settings(&self, extent: f64) -> GatherSettings {
        GatherSettings { patch_size: self.patch_size, depth_tolerance: self.depth_tolerance_fraction * extent }
    }
}
