//! Forward splatting: projection, tile rasterization, and buffer export.

pub mod export;
pub mod project;
pub mod raster;

pub use export::{decode_pfm, encode_pfm, feature_pca, save_alpha_png, save_pfm, save_rgb_png};
pub use project::{project, ProjectedGaussian, ALPHA_MAX, ALPHA_MIN, COV2D_DILATION};
pub use raster::{
    depth_order, rasterize, render, render_feature_weights, Channels, FeatureTable, PixelWeights,
    RenderBuffers, RenderSettings, TILE_SIZE, TRANSMITTANCE_MIN,
};
